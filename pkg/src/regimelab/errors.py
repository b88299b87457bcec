"""Exception types shared across the package.

Every error carries enough context to locate the offending input; all of
them derive from ValueError so callers can catch broadly.
"""


class NonConservative(ValueError):
    """A rate-matrix row does not sum to zero within tolerance."""

    def __init__(self, row, residual):
        self.row = int(row)
        self.residual = float(residual)
        super().__init__(f"row {row} sums to {residual:.3e}, expected 0")


class NegativeRate(ValueError):
    """An off-diagonal rate is negative."""

    def __init__(self, i, j, value=None):
        self.i = int(i)
        self.j = int(j)
        self.value = value
        super().__init__(f"negative off-diagonal rate at ({i}, {j}): {value}")


class DimensionMismatch(ValueError):
    def __init__(self, message):
        super().__init__(message)


class Reducible(ValueError):
    """The embedded jump graph is not strongly connected (or the zero
    eigenvalue cannot be isolated)."""


class BadSplitIndex(ValueError):
    def __init__(self, m, n_states):
        self.m = int(m)
        self.n_states = int(n_states)
        super().__init__(f"split index m={m} invalid for {n_states} states")


class ClockRateTooSmall(ValueError):
    def __init__(self, rate, required):
        self.rate = float(rate)
        self.required = float(required)
        super().__init__(
            f"clock rate {rate:.6g} below required {required:.6g} "
            "(intervals of both partitions must fit in [0, M])"
        )


class HorizonExceeded(ValueError):
    def __init__(self, t, horizon):
        self.t = float(t)
        self.horizon = float(horizon)
        super().__init__(f"time {t} exceeds path horizon {horizon}")


class NonFiniteState(RuntimeError):
    """A simulated trajectory overflowed or produced NaN."""

    def __init__(self, step, n_bad, n_paths):
        self.step = int(step)
        self.n_bad = int(n_bad)
        self.n_paths = int(n_paths)
        super().__init__(
            f"non-finite state in {n_bad}/{n_paths} path(s) at step {step}"
        )


class MissingMetadata(ValueError):
    def __init__(self, what):
        super().__init__(f"coefficient metadata missing: {what}")


class NotBounded(ValueError):
    def __init__(self):
        super().__init__("coefficients do not declare the bounded flag")


class InitialStateRemoved(ValueError):
    def __init__(self, i0, m):
        self.i0 = int(i0)
        self.m = int(m)
        super().__init__(f"initial state {i0} is not in the kept block E = {{{m + 1}, ...}}")


class EmptyGrid(ValueError):
    def __init__(self):
        super().__init__("parameter grid is empty")


class EmptySample(ValueError):
    def __init__(self):
        super().__init__("sample set is empty")


class EmptyDictionary(ValueError):
    def __init__(self):
        super().__init__("test-function dictionary is empty")


class ConfigInvalid(ValueError):
    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class SingularSigma(ValueError):
    def __init__(self, where):
        super().__init__(f"diffusion coefficient not invertible at {where}")


class IntegralDiverged(ValueError):
    def __init__(self, state, detail=""):
        self.state = state
        super().__init__(f"integral diverges for state {state} {detail}".rstrip())


class NovikovFailed(ValueError):
    def __init__(self, message):
        super().__init__(message)


class QuadratureNonConvergence(RuntimeError):
    def __init__(self, message):
        super().__init__(message)


class EigensolveFailure(RuntimeError):
    def __init__(self, message):
        super().__init__(message)
