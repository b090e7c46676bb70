"""Exception types raised across the package."""


class JDCVError(Exception):
    pass


class GeometryError(JDCVError, ValueError):
    pass


class NiftiFormatError(JDCVError, ValueError):
    pass


class UnsupportedDatatypeError(NiftiFormatError):
    pass


class ParameterError(JDCVError, ValueError):
    pass


class DegenerateInputError(JDCVError, ValueError):
    pass


class UndefinedMetricError(JDCVError, ValueError):
    pass


class NumericalError(JDCVError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class FoldingError(NumericalError):
    """A map has a non-positive Jacobian determinant somewhere."""

    def __init__(self, cell, value):
        super().__init__(f"map folds: jacobian {value:.6g} at cell {tuple(cell)}")
        self.cell = tuple(int(c) for c in cell)
        self.value = float(value)


class StallError(NumericalError):
    def __init__(self, message, iteration, loss, grad_norm):
        super().__init__(f"{message} (iter={iteration}, loss={loss:.6e}, |grad|={grad_norm:.3e})")
        self.iteration = iteration
        self.loss = loss
        self.grad_norm = grad_norm
