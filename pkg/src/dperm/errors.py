"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """An input violates a documented precondition (bad size, norm, budget...)."""


class ConvergenceError(RuntimeError):
    """The optimizer stopped before reaching the gradient-norm tolerance.

    Attributes:
      point: last iterate.
      grad_norm: gradient norm at ``point``.
      iterations: number of iterations performed.
    """

    def __init__(self, message, point=None, grad_norm=float("nan"), iterations=0):
        super().__init__(message)
        self.point = point
        self.grad_norm = grad_norm
        self.iterations = iterations
