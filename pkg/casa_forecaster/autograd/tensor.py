"""
Dense tensor and gradient tape for reverse-mode automatic differentiation.

A Tensor is an immutable wrapper around a numpy array. When it was produced
on a Tape it also carries a node id; tensors without a node id are constants
and never receive gradients.
"""
import numpy as np

from casa_forecaster.exceptions import NonScalarLoss, ShapeMismatch

# op kind -> rule(ctx, grad_out) returning one gradient (or None) per parent
BACKWARD_RULES = {}


def register_rule(op_kind):
    """
    Register the backward rule of an op kind.

    Args:
        op_kind: Name under which the forward op records its nodes

    Returns:
        Decorator storing the rule in BACKWARD_RULES
    """
    def decorator(rule):
        BACKWARD_RULES[op_kind] = rule
        return rule
    return decorator


def unbroadcast(grad, shape):
    """
    Sum a gradient over the axes that were broadcast in the forward pass.

    Args:
        grad: Gradient array with the broadcast output shape
        shape: Shape of the operand that was broadcast

    Returns:
        Array with exactly `shape`
    """
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


class _Node:
    __slots__ = ("op_kind", "parents", "ctx", "shape")

    def __init__(self, op_kind, parents, ctx, shape):
        self.op_kind = op_kind
        self.parents = parents
        self.ctx = ctx
        self.shape = shape


class Tape:
    """
    Append-only record of the ops executed during one forward pass.

    Node ids are list positions, so every parent id is smaller than the id of
    the node that consumes it. The tape is owned by a single forward/backward
    pass and is discarded afterwards.
    """

    def __init__(self):
        self.nodes = []
        self.grads = {}

    def __len__(self):
        return len(self.nodes)

    def watch(self, value):
        """
        Register a leaf (typically a parameter) on the tape.

        Args:
            value: numpy array or Tensor

        Returns:
            Tensor sharing the data and carrying a fresh node id
        """
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        node_id = self._append("leaf", (), None, data.shape)
        return Tensor(data, tape=self, node_id=node_id)

    def record(self, op_kind, inputs, ctx, out_data):
        """
        Record an op whose inputs may or may not be tracked.

        Args:
            op_kind: Key into BACKWARD_RULES
            inputs: Sequence of Tensors (or None for non-tensor operands)
            ctx: Saved forward context handed to the backward rule
            out_data: Forward result

        Returns:
            Output Tensor carrying the new node id
        """
        parents = tuple(
            t.node_id if isinstance(t, Tensor) and t.tape is self else None
            for t in inputs
        )
        node_id = self._append(op_kind, parents, ctx, out_data.shape)
        return Tensor(out_data, tape=self, node_id=node_id)

    def _append(self, op_kind, parents, ctx, shape):
        self.nodes.append(_Node(op_kind, parents, ctx, tuple(shape)))
        return len(self.nodes) - 1

    def backward(self, loss):
        """
        Propagate gradients from a scalar loss back to every node.

        Args:
            loss: Scalar Tensor recorded on this tape

        Returns:
            Dictionary mapping node id to gradient array
        """
        if loss.node_id is None or loss.tape is not self:
            raise NonScalarLoss("Loss is not recorded on this tape")
        if loss.data.size != 1:
            raise NonScalarLoss(f"Loss must be scalar, got shape {loss.shape}")

        grads = {loss.node_id: np.ones_like(loss.data)}
        for node_id in range(loss.node_id, -1, -1):
            grad = grads.get(node_id)
            node = self.nodes[node_id]
            if grad is None or node.op_kind == "leaf":
                continue
            rule = BACKWARD_RULES[node.op_kind]
            parent_grads = rule(node.ctx, grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent is None or parent_grad is None:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + parent_grad
                else:
                    grads[parent] = parent_grad

        self.grads = grads
        return grads

    def grad(self, tensor):
        """Gradient of the last backward pass w.r.t. a tensor (zeros when unreachable)."""
        if tensor.node_id is None or tensor.tape is not self:
            return np.zeros_like(tensor.data)
        grad = self.grads.get(tensor.node_id)
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad


class Tensor:
    """
    Immutable dense array, optionally participating in a gradient tape.

    Args:
        data: Array-like values
        tape: Tape that recorded this tensor, if any
        node_id: Position of the tensor's node on the tape
        dtype: Optional dtype to cast the data to
    """

    __array_priority__ = 100

    def __init__(self, data, tape=None, node_id=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if array.dtype.kind not in "f":
            array = array.astype(np.float64)
        view = array.view()
        view.flags.writeable = False
        self.data = view
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def tracked(self):
        return self.node_id is not None

    def numpy(self):
        return np.array(self.data)

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tracked = f", node_id={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tracked})"

    # Operator sugar over functional ops
    def __add__(self, other):
        from casa_forecaster.autograd import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from casa_forecaster.autograd import functional as F
        return F.add(self, other)

    def __sub__(self, other):
        from casa_forecaster.autograd import functional as F
        return F.sub(self, other)

    def __mul__(self, other):
        from casa_forecaster.autograd import functional as F
        if np.isscalar(other):
            return F.scale(self, other)
        return F.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from casa_forecaster.autograd import functional as F
        if np.isscalar(other):
            return F.scale(self, 1.0 / other)
        return F.div(self, other)

    def __neg__(self):
        from casa_forecaster.autograd import functional as F
        return F.scale(self, -1.0)

    def __matmul__(self, other):
        from casa_forecaster.autograd import functional as F
        return F.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from casa_forecaster.autograd import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from casa_forecaster.autograd import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from casa_forecaster.autograd import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def swapaxes(self, axis1=-2, axis2=-1):
        from casa_forecaster.autograd import functional as F
        return F.swapaxes(self, axis1, axis2)


def as_tensor(value, dtype=None):
    """Wrap arrays and scalars; leave Tensors untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def backward(tape, loss):
    """Run the backward pass of `tape` from `loss` and return the gradient map."""
    return tape.backward(loss)
