"""Built-in benchmark models, selectable by config name.

Each factory returns SwitchingCoefficients with honestly declared
metadata: per-state one-sided Lipschitz constants kappa_i, the
linear-growth constant K, and the bounded flag where it actually holds.
"""

import numpy as np

from .girsanov import singular_drift
from .sde import SwitchingCoefficients


def switching_ou(a=(1.0, 0.6), s=(0.4, 0.7), c=(0.0, 0.0)) -> SwitchingCoefficients:
    """Affine model b(x, i) = -a_i x, sigma(x, i) = s_i x + c_i.

    With s_i > 0 the noise is multiplicative, which keeps the Euler
    strong order at 1/2.  Exact metadata: the one-sided Lipschitz
    computation gives kappa_i = 2 s_i^2 - 2 a_i, and
    K = max_i max(a_i^2, 2 s_i^2, 2 c_i^2) covers both growth bounds.
    """
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    if not (a.shape == s.shape == c.shape):
        raise ValueError("a, s, c must have one entry per state")

    def drift(x, i):
        return -np.take(a, i) * np.asarray(x, dtype=float)

    def sigma(x, i):
        return np.take(s, i) * np.asarray(x, dtype=float) + np.take(c, i)

    kappa = 2.0 * s**2 - 2.0 * a
    K = float(max((a**2).max(), (2.0 * s**2).max(), (2.0 * c**2).max()))
    return SwitchingCoefficients(
        dimension=1,
        drift=drift,
        sigma=sigma,
        kappa=kappa,
        K=K,
        bounded=False,
        n_states=a.size,
        name="switching-ou",
    )


def bounded_tanh(d=(0.3, -0.3), s=(0.25, 0.35)) -> SwitchingCoefficients:
    """Bounded model b(x, i) = -tanh(x) + d_i, sigma(x, i) = s_i.

    tanh is nondecreasing, so the drift difference term in the one-sided
    Lipschitz inequality is nonpositive and kappa_i = 0 exactly.  Both
    |b|^2 <= (1 + max|d|)^2 and sigma^2 <= max s^2 are constants, so the
    bounded flag holds with K = max((1 + max|d|)^2, max s^2).
    """
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    if d.shape != s.shape:
        raise ValueError("d and s must have one entry per state")

    def drift(x, i):
        return -np.tanh(np.asarray(x, dtype=float)) + np.take(d, i)

    def sigma(x, i):
        x = np.asarray(x, dtype=float)
        return np.take(s, i) * np.ones_like(x)

    K = float(max((1.0 + np.abs(d).max()) ** 2, (s**2).max()))
    return SwitchingCoefficients(
        dimension=1,
        drift=drift,
        sigma=sigma,
        kappa=np.zeros(d.size),
        K=K,
        bounded=True,
        n_states=d.size,
        name="bounded-tanh",
    )


def singular_log(beta=(0.25, 0.4), k_max=10000) -> SwitchingCoefficients:
    """Irregular model b(x, i) = beta_i sqrt(S(x)) - x with sigma = 1.

    S is the log-singular series with poles at the positive integers; the
    drift satisfies neither (H1) nor (H2), so no kappa/K metadata is
    declared and the coupling bounds refuse it.  Only the Girsanov layer
    consumes this model.
    """
    b = singular_drift(beta, k_max=k_max)

    def sigma(x, i):
        x = np.asarray(x, dtype=float)
        return np.ones_like(x)

    return SwitchingCoefficients(
        dimension=1,
        drift=b,
        sigma=sigma,
        kappa=None,
        K=None,
        bounded=False,
        n_states=b.n_states,
        name="singular-log",
    )


REGISTRY = {
    "switching-ou": switching_ou,
    "bounded-tanh": bounded_tanh,
    "singular-log": singular_log,
}


def make_model(name, params=None) -> SwitchingCoefficients:
    """Look up a registry model by name.

    Raises:
        KeyError-with-suggestions via ValueError for unknown names.
    """
    if name not in REGISTRY:
        known = ", ".join(sorted(REGISTRY))
        raise ValueError(f"unknown model {name!r}; known models: {known}")
    return REGISTRY[name](**(params or {}))
