"""Euler simulation of the regime-switching diffusion pair.

Both components share one Brownian path and are driven by the coupled
chain pair: X uses Lam, X_tilde uses Lam_tilde, and the Euler grid is
split at every chain jump epoch so the chain value is exact on each
substep.  Splitting uses Brownian-bridge conditional draws, so the
underlying Brownian path is well defined independently of the grid.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import (
    DimensionMismatch,
    HorizonExceeded,
    MissingMetadata,
    NonFiniteState,
)
from .ratematrix import RateMatrix
from .skorokhod import (
    BLOCK_SIZE,
    CoupledChainBatch,
    CoupledChainPath,
    _block_ranges,
    simulate_coupled_batch,
)

BROWNIAN_LABEL = "brownian"
BRIDGE_LABEL = "bridge"
MAX_FAILURE_RATE = 1e-3


@dataclass(frozen=True)
class SwitchingCoefficients:
    """Drift/diffusion pair with declared regularity metadata.

    drift(x, i) and sigma(x, i) must be pure functions accepting numpy
    arrays for x and integer state arrays for i (elementwise for d = 1).
    Metadata is declared, not inferred:

    * kappa: per-state one-sided Lipschitz constants, so that
      2 (x-y).(b(x,i)-b(y,i)) + 2 |sigma(x,i)-sigma(y,i)|^2 <= kappa_i |x-y|^2,
    * K: linear-growth constant, |b|^2 <= K(1+|x|^2) and |sigma|^2 <= K(1+|x|^2),
    * bounded: when True the same K also bounds |b|^2 and |sigma|^2 directly.

    Use spot_check_hypotheses to test the declarations on sampled points.
    """

    dimension: int
    drift: callable
    sigma: callable
    kappa: np.ndarray = None
    K: float = None
    bounded: bool = False
    n_states: int = 2
    name: str = ""

    def __post_init__(self):
        if self.kappa is not None:
            object.__setattr__(
                self, "kappa", np.asarray(self.kappa, dtype=float).copy()
            )
            self.kappa.setflags(write=False)


def spot_check_hypotheses(c: SwitchingCoefficients, seed=0, n_pairs=256, x_scale=3.0):
    """Randomized verification of the declared (H1)/(H2)/bounded metadata.

    Samples point pairs and states, evaluates both sides of each declared
    inequality, and reports the worst violation (positive = violated).
    """
    gen = rng.stream(seed, "spot-check")
    report = {}
    x = gen.normal(0.0, x_scale, size=n_pairs)
    y = gen.normal(0.0, x_scale, size=n_pairs)
    states = gen.integers(0, c.n_states, size=n_pairs)
    if c.kappa is not None:
        bx = c.drift(x, states)
        by = c.drift(y, states)
        sx = c.sigma(x, states)
        sy = c.sigma(y, states)
        lhs = 2.0 * (x - y) * (bx - by) + 2.0 * (sx - sy) ** 2
        rhs = np.take(c.kappa, states) * (x - y) ** 2
        report["h1_max_violation"] = float((lhs - rhs).max())
    if c.K is not None:
        bx = c.drift(x, states)
        sx = c.sigma(x, states)
        growth = c.K * (1.0 + x**2)
        report["h2_max_violation"] = float(
            max((bx**2 - growth).max(), (sx**2 - growth).max())
        )
        if c.bounded:
            report["bounded_max_violation"] = float(
                max((bx**2 - c.K).max(), (sx**2 - c.K).max())
            )
    return report


@dataclass(frozen=True)
class TrajectoryPair:
    """Euler pair on a uniform grid sharing Brownian increments."""

    times: np.ndarray
    x: np.ndarray
    x_tilde: np.ndarray
    chain: CoupledChainPath
    dw: np.ndarray

    def __post_init__(self):
        self.times.setflags(write=False)
        self.x.setflags(write=False)
        self.x_tilde.setflags(write=False)
        self.dw.setflags(write=False)


def _num_steps(horizon, dt):
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"dt={dt} does not evenly divide horizon {horizon}")
    return n


def simulate_pair(
    c: SwitchingCoefficients, chains: CoupledChainPath, x0, dt: float, seed
) -> TrajectoryPair:
    """Single-path Euler recursion for (X, X_tilde) with shared noise.

    X_{t+dt} = X_t + b(X_t, Lam_t) dt + sigma(X_t, Lam_t) dW, and the same
    recursion for X_tilde with Lam_tilde and the same dW.  Steps are split
    at chain jump epochs with Brownian-bridge conditional increments.

    Raises:
        NonFiniteState: a component overflowed or became NaN.
    """
    horizon = chains.horizon
    n_steps = _num_steps(horizon, dt)
    d = c.dimension
    gen_w = rng.stream(seed, BROWNIAN_LABEL)
    gen_b = rng.stream(seed, BRIDGE_LABEL)
    x = np.atleast_1d(np.array(x0, dtype=float))
    if x.shape != (d,):
        raise DimensionMismatch(f"x0 shape {x.shape} does not match dimension {d}")
    xt = x.copy()
    times = np.linspace(0.0, horizon, n_steps + 1)
    xs = np.empty((n_steps + 1, d))
    xts = np.empty((n_steps + 1, d))
    dws = np.empty((n_steps, d))
    xs[0] = x
    xts[0] = xt
    lam = chains.initial_state
    lam_t = chains.initial_state
    ev = 0
    n_ev = chains.times.size

    def step(xv, state, h, dwv):
        b = np.atleast_1d(np.asarray(c.drift(xv, state), dtype=float))
        s = np.asarray(c.sigma(xv, state), dtype=float)
        if s.ndim <= 1:
            noise = np.atleast_1d(s) * dwv
        else:
            noise = s @ dwv
        return xv + b * h + noise

    for k in range(n_steps):
        t0 = times[k]
        t1 = times[k + 1]
        dw = gen_w.normal(0.0, math.sqrt(dt), size=d)
        dws[k] = dw
        t_loc = t0
        dw_rem = dw.copy()
        while ev < n_ev and chains.times[ev] < t1:
            u = chains.times[ev]
            span = t1 - t_loc
            h = u - t_loc
            frac = h / span
            var = max(h * (t1 - u) / span, 0.0)
            dw1 = dw_rem * frac + math.sqrt(var) * gen_b.normal(size=d)
            x = step(x, lam, h, dw1)
            xt = step(xt, lam_t, h, dw1)
            dw_rem = dw_rem - dw1
            t_loc = u
            lam = int(chains.lam[ev])
            lam_t = int(chains.lam_tilde[ev])
            ev += 1
        h = t1 - t_loc
        x = step(x, lam, h, dw_rem)
        xt = step(xt, lam_t, h, dw_rem)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xt))):
            raise NonFiniteState(k, 1, 1)
        xs[k + 1] = x
        xts[k + 1] = xt
    if d == 1:
        xs = xs[:, 0]
        xts = xts[:, 0]
        dws = dws[:, 0]
    return TrajectoryPair(times=times, x=xs, x_tilde=xts, chain=chains, dw=dws)


def simulate_pair_batch(
    c: SwitchingCoefficients,
    chains: CoupledChainBatch,
    x0: float,
    dt: float,
    seed,
    probe_times,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
    max_failure_rate: float = MAX_FAILURE_RATE,
):
    """Vectorized Euler pair over a chain batch (d = 1 kernel).

    The chain batch must carry jump records.  Returns a dict with
    x_at_probe / x_tilde_at_probe arrays of shape (n_probes, n_paths), a
    `failed` path mask (overflow/NaN, parked at zero and excluded), and
    the failure count.

    Raises:
        NonFiniteState: if the failure rate exceeds max_failure_rate.
    """
    if c.dimension != 1:
        raise DimensionMismatch("batch kernel implements dimension 1")
    if chains.jump_ptr is None:
        raise ValueError("chain batch must be simulated with record_jumps=True")
    horizon = chains.horizon
    n_steps = _num_steps(horizon, dt)
    probe_times = np.asarray(sorted(probe_times), dtype=float)
    if probe_times.size and probe_times[-1] > horizon + 1e-12:
        raise HorizonExceeded(float(probe_times[-1]), horizon)
    probe_steps = np.array([int(round(t / dt)) for t in probe_times])
    if np.any(np.abs(probe_steps * dt - probe_times) > 1e-9):
        raise ValueError("probe times must lie on the dt grid")
    n_paths = chains.n_paths
    i0 = chains.i0

    def run_block(args):
        block_index, lo, hi = args
        m = hi - lo
        gen_w = rng.stream(seed, BROWNIAN_LABEL, block_index)
        gen_b = rng.stream(seed, BRIDGE_LABEL, block_index)
        x = np.full(m, float(x0))
        xt = np.full(m, float(x0))
        lam = np.full(m, i0, dtype=np.int64)
        lam_t = np.full(m, i0, dtype=np.int64)
        ptr = chains.jump_ptr[lo:hi].copy()
        end = chains.jump_ptr[lo + 1 : hi + 1]
        jt = chains.jump_times
        jl = chains.jump_lam
        jlt = chains.jump_lam_tilde
        bad = np.zeros(m, dtype=bool)
        first_bad_step = [None]
        n_probes = probe_steps.size
        x_rec = np.empty((n_probes, m))
        xt_rec = np.empty((n_probes, m))
        for kp in np.nonzero(probe_steps == 0)[0]:
            x_rec[kp] = x
            xt_rec[kp] = xt
        sqrt_dt = math.sqrt(dt)
        for k in range(n_steps):
            t1 = (k + 1) * dt
            dw_rem = gen_w.normal(0.0, sqrt_dt, size=m)
            t_loc = np.full(m, k * dt)
            while True:
                safe = np.minimum(ptr, jt.size - 1) if jt.size else ptr
                nxt = np.where(ptr < end, jt[safe] if jt.size else np.inf, np.inf)
                hot = nxt < t1
                if not hot.any():
                    break
                hi_idx = np.nonzero(hot)[0]
                u = jt[ptr[hi_idx]]
                span = t1 - t_loc[hi_idx]
                h = u - t_loc[hi_idx]
                frac = h / span
                var = np.clip(h * (t1 - u) / span, 0.0, None)
                dw1 = dw_rem[hi_idx] * frac + np.sqrt(var) * gen_b.normal(
                    size=hi_idx.size
                )
                xs = x[hi_idx]
                xts = xt[hi_idx]
                x[hi_idx] = xs + c.drift(xs, lam[hi_idx]) * h + c.sigma(
                    xs, lam[hi_idx]
                ) * dw1
                xt[hi_idx] = xts + c.drift(xts, lam_t[hi_idx]) * h + c.sigma(
                    xts, lam_t[hi_idx]
                ) * dw1
                dw_rem[hi_idx] -= dw1
                t_loc[hi_idx] = u
                lam[hi_idx] = jl[ptr[hi_idx]]
                lam_t[hi_idx] = jlt[ptr[hi_idx]]
                ptr[hi_idx] += 1
            h = t1 - t_loc
            x = x + c.drift(x, lam) * h + c.sigma(x, lam) * dw_rem
            xt = xt + c.drift(xt, lam_t) * h + c.sigma(xt, lam_t) * dw_rem
            fresh = ~bad & (~np.isfinite(x) | ~np.isfinite(xt))
            if fresh.any():
                bad |= fresh
                if first_bad_step[0] is None:
                    first_bad_step[0] = k
            if bad.any():
                x[bad] = 0.0
                xt[bad] = 0.0
            for kp in np.nonzero(probe_steps == k + 1)[0]:
                x_rec[kp] = x
                xt_rec[kp] = xt
        return x_rec, xt_rec, bad, first_bad_step[0]

    ranges = _block_ranges(int(n_paths), int(block_size))
    if threads > 1 and len(ranges) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(run_block, ranges))
    else:
        results = [run_block(r) for r in ranges]
    x_at = np.concatenate([r[0] for r in results], axis=1)
    xt_at = np.concatenate([r[1] for r in results], axis=1)
    failed = np.concatenate([r[2] for r in results])
    n_bad = int(failed.sum())
    if n_bad > max_failure_rate * n_paths:
        step = min(r[3] for r in results if r[3] is not None)
        raise NonFiniteState(step, n_bad, n_paths)
    return {
        "probe_times": probe_times,
        "x_at_probe": x_at,
        "x_tilde_at_probe": xt_at,
        "failed": failed,
        "n_failed": n_bad,
    }


def lemma1_bound(x0_norm: float, K: float, t: float) -> float:
    """Second-moment bound (|x0|^2 + 2Kt) e^{(2K+1)t}."""
    return (x0_norm**2 + 2.0 * K * t) * math.exp((2.0 * K + 1.0) * t)


def second_moment_guard(c: SwitchingCoefficients, trajectories, t: float):
    """Check the Monte Carlo second moment against the moment bound.

    Flags any estimate of E|X_t|^2 exceeding (|x0|^2 + 2Kt) e^{(2K+1)t}
    by more than 3 standard errors.  Accepts a TrajectoryPair, a sequence
    of them, or a raw array of X_t samples together with x0.

    Returns:
        dict with bound, estimate, stderr, n and the `passes` flag.
    """
    if c.K is None:
        raise MissingMetadata("linear-growth constant K")
    if isinstance(trajectories, TrajectoryPair):
        trajectories = [trajectories]
    if isinstance(trajectories, (list, tuple)) and trajectories and isinstance(
        trajectories[0], TrajectoryPair
    ):
        samples = []
        x0_norm = None
        for traj in trajectories:
            k = int(np.searchsorted(traj.times, t - 1e-12))
            if traj.times[-1] < t - 1e-9:
                raise HorizonExceeded(t, float(traj.times[-1]))
            xk = np.atleast_1d(traj.x[k])
            samples.append(float(np.dot(xk, xk)))
            x0_first = np.atleast_1d(traj.x[0])
            x0_norm = float(np.linalg.norm(x0_first))
        samples = np.asarray(samples)
    else:
        samples, x0_norm = trajectories
        samples = np.asarray(samples, dtype=float) ** 2
        x0_norm = float(x0_norm)
    bound = lemma1_bound(x0_norm, c.K, t)
    estimate = float(samples.mean())
    stderr = (
        float(samples.std(ddof=1) / math.sqrt(samples.size))
        if samples.size > 1
        else 0.0
    )
    return {
        "t": float(t),
        "bound": bound,
        "estimate": estimate,
        "stderr": stderr,
        "n": int(samples.size),
        "passes": estimate <= bound + 3.0 * stderr,
    }


def strong_error_curve(
    c: SwitchingCoefficients,
    x0: float,
    T: float,
    dts,
    n_paths: int,
    seed,
    q: RateMatrix = None,
    i0: int = 0,
    threads: int = 1,
):
    """Strong discretization error against the finest grid.

    All step sizes see the same Brownian path (coarse increments are sums
    of fine ones; jump-epoch values come from bridge draws keyed per jump,
    shared across levels) and the same chain path.  Returns a list of
    (dt, RMS |X_T^dt - X_T^ref|) for every dt except the finest.
    """
    dts = [float(v) for v in dts]
    if sorted(dts, reverse=True) != dts or len(set(dts)) != len(dts):
        raise ValueError("dts must be strictly descending")
    if len(dts) < 2:
        return []
    if c.dimension != 1:
        raise DimensionMismatch("strong_error_curve implements dimension 1")
    dt_fine = dts[-1]
    n_fine = _num_steps(T, dt_fine)
    ratios = []
    for dt in dts:
        r = dt / dt_fine
        if abs(r - round(r)) > 1e-9 or n_fine % int(round(r)) != 0:
            raise ValueError(f"dt={dt} is not a multiple of the finest {dt_fine}")
        ratios.append(int(round(r)))

    if q is None:
        jump_times = np.zeros(0)
        jump_lam = np.zeros(0, dtype=np.int64)
        jump_ptr = np.zeros(n_paths + 1, dtype=np.int64)
    else:
        batch = simulate_coupled_batch(
            q, q, i0, T, n_paths, seed, record_jumps=True, threads=threads
        )
        jump_times = batch.jump_times
        jump_lam = batch.jump_lam
        jump_ptr = batch.jump_ptr

    block_size = 2048
    sq_sums = np.zeros(len(dts))

    def run_block(args):
        block_index, lo, hi = args
        m = hi - lo
        gen_w = rng.stream(seed, BROWNIAN_LABEL, block_index)
        gen_b = rng.stream(seed, BRIDGE_LABEL, block_index)
        dw_fine = gen_w.normal(0.0, math.sqrt(dt_fine), size=(n_fine, m))
        w_cum = np.vstack([np.zeros((1, m)), np.cumsum(dw_fine, axis=0)])
        a = jump_ptr[lo]
        b = jump_ptr[hi]
        ev_u = jump_times[a:b]
        ev_lam = jump_lam[a:b]
        counts = np.diff(jump_ptr[lo : hi + 1])
        ev_path = np.repeat(np.arange(m), counts)
        n_ev = ev_u.size
        w_at_jump = np.zeros(n_ev)
        if n_ev:
            k_fine = np.minimum((ev_u / dt_fine).astype(np.int64), n_fine - 1)
            # events are sorted by (path, time); same-key runs are contiguous
            key = ev_path * n_fine + k_fine
            is_start = np.ones(n_ev, dtype=bool)
            is_start[1:] = key[1:] != key[:-1]
            first_of = np.maximum.accumulate(
                np.where(is_start, np.arange(n_ev), 0)
            )
            rank = np.arange(n_ev) - first_of
            xi = gen_b.normal(size=n_ev)
            t_end = (k_fine + 1) * dt_fine
            w_end = w_cum[k_fine + 1, ev_path]
            max_rank = int(rank.max()) if n_ev else 0
            for r in range(max_rank + 1):
                sel = np.nonzero(rank == r)[0]
                if sel.size == 0:
                    break
                if r == 0:
                    t_start = k_fine[sel] * dt_fine
                    w_start = w_cum[k_fine[sel], ev_path[sel]]
                else:
                    t_start = ev_u[sel - 1]
                    w_start = w_at_jump[sel - 1]
                span = t_end[sel] - t_start
                frac = (ev_u[sel] - t_start) / span
                var = np.clip(
                    (ev_u[sel] - t_start) * (t_end[sel] - ev_u[sel]) / span, 0.0, None
                )
                w_at_jump[sel] = (
                    w_start + (w_end[sel] - w_start) * frac + np.sqrt(var) * xi[sel]
                )
        lptr0 = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

        def euler_level(ratio):
            n_lvl = n_fine // ratio
            dt_lvl = T / n_lvl
            x = np.full(m, float(x0))
            lam = np.full(m, i0, dtype=np.int64)
            ptr = lptr0[:-1].copy()
            pend = lptr0[1:]
            w_cur = np.zeros(m)
            t_cur = np.zeros(m)
            for k in range(n_lvl):
                t1 = (k + 1) * dt_lvl
                while True:
                    safe = np.minimum(ptr, max(n_ev - 1, 0))
                    nxt = np.where(ptr < pend, ev_u[safe] if n_ev else np.inf, np.inf)
                    hot = nxt < t1
                    if not hot.any():
                        break
                    hidx = np.nonzero(hot)[0]
                    u = ev_u[ptr[hidx]]
                    w_next = w_at_jump[ptr[hidx]]
                    h = u - t_cur[hidx]
                    dw = w_next - w_cur[hidx]
                    xs = x[hidx]
                    x[hidx] = (
                        xs
                        + c.drift(xs, lam[hidx]) * h
                        + c.sigma(xs, lam[hidx]) * dw
                    )
                    w_cur[hidx] = w_next
                    t_cur[hidx] = u
                    lam[hidx] = ev_lam[ptr[hidx]]
                    ptr[hidx] += 1
                w_grid = w_cum[(k + 1) * ratio]
                h = t1 - t_cur
                dw = w_grid - w_cur
                x = x + c.drift(x, lam) * h + c.sigma(x, lam) * dw
                w_cur = w_grid.copy()
                t_cur = np.full(m, t1)
            return x

        finest = euler_level(1)
        block_sq = np.zeros(len(dts))
        for li, ratio in enumerate(ratios):
            if ratio == 1:
                continue
            x_lvl = euler_level(ratio)
            block_sq[li] = np.sum((x_lvl - finest) ** 2)
        return block_sq

    ranges = _block_ranges(int(n_paths), block_size)
    if threads > 1 and len(ranges) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(run_block, ranges))
    else:
        results = [run_block(r) for r in ranges]
    for block_sq in results:
        sq_sums += block_sq
    curve = []
    for li, dt in enumerate(dts):
        if ratios[li] == 1:
            continue
        curve.append((dt, float(np.sqrt(sq_sums[li] / n_paths))))
    return curve


def fit_loglog_slope(curve):
    """Least-squares slope of log(rms) against log(dt)."""
    if len(curve) < 2:
        raise ValueError("need at least two points to fit a slope")
    xs = np.log([p[0] for p in curve])
    ys = np.log([p[1] for p in curve])
    return float(np.polyfit(xs, ys, 1)[0])
