"""
Utility modules for the forecasting engine.
"""
