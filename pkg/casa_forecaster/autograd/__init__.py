"""
Minimal dense tensor with reverse-mode automatic differentiation.
"""
from casa_forecaster.autograd.tensor import BACKWARD_RULES, Tape, Tensor, as_tensor, backward
from casa_forecaster.autograd import functional
from casa_forecaster.autograd.gradcheck import audit_gradients, finite_diff_check

__all__ = ['BACKWARD_RULES', 'Tape', 'Tensor', 'as_tensor', 'backward', 'functional',
           'audit_gradients', 'finite_diff_check']
