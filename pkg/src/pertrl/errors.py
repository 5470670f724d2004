"""Exception hierarchy shared by the numerical modules and the CLI."""


class PertrlError(Exception):
    """Base class for every structured error raised by the package."""

    exit_code = 1


class DimensionError(PertrlError, ValueError):
    """Coefficient rows and transfer matrices do not chain."""


class DegreeExplosionError(PertrlError):
    """An exact composition exceeded the permitted polynomial degree."""

    def __init__(self, degree, limit, t=None):
        self.degree = degree
        self.limit = limit
        self.t = t
        where = "" if t is None else f" at t={t}"
        super().__init__(f"polynomial degree {degree} exceeds limit {limit}{where}")


class DivergenceError(PertrlError):
    """A rollout left the admissible state region."""

    exit_code = 4

    def __init__(self, t, value, bound):
        self.t = t
        self.value = value
        self.bound = bound
        super().__init__(f"rollout diverged at t={t}: |x|={abs(value):.3g} > {bound:.3g}")


class NumericalRefusal(PertrlError):
    """A Gram matrix is too ill-conditioned to invert."""

    exit_code = 3

    def __init__(self, condition, cond_max, t=None):
        self.condition = condition
        self.cond_max = cond_max
        self.t = t
        where = "" if t is None else f" at t={t}"
        super().__init__(
            f"Gram matrix condition number {condition:.3g} exceeds cond_max {cond_max:.3g}{where}"
        )


class StationarityError(PertrlError):
    """A discounted recursion failed to become stationary within the horizon."""

    def __init__(self, residual, tol, T):
        self.residual = residual
        self.tol = tol
        self.T = T
        super().__init__(
            f"discounted recursion not stationary after T={T}: residual {residual:.3g} > tol {tol:.3g}"
        )


class ConvergenceError(PertrlError):
    """An iterative optimizer stopped before meeting its tolerance."""

    def __init__(self, grad_norm, iters):
        self.grad_norm = grad_norm
        self.iters = iters
        super().__init__(f"no convergence after {iters} iterations: |grad|_inf = {grad_norm:.3g}")


class ConfigError(PertrlError):
    """One or more configuration fields are invalid."""

    exit_code = 2

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
