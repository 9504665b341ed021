"""Exception types raised by the solvers and verifiers."""


class PerturbedLabError(Exception):
    pass


class NumericalError(PerturbedLabError, ArithmeticError):
    """A non-finite value appeared; ``where`` locates it (step or (row, step))."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ConvergenceError(PerturbedLabError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations
