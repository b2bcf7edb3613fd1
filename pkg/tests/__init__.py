"""
Test package for the CASA forecaster.
"""
