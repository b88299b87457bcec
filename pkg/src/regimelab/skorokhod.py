"""Coupled chain construction via the interval/mark representation.

Both chains are driven by one Poisson clock of rate M: at each event time
the shared uniform mark on [0, M] is looked up in each chain's interval
partition, and a chain jumps exactly when the mark lands in one of its
current state's intervals.  Marginally each component is a CTMC with its
own generator; jointly they agree as long as the mark falls in the
overlap of both partitions, which is what makes the coupling tight when
the generators are close.

Interval layout: for each state i the target intervals Gamma_ij occupy
[sum_{k<i} q_k, sum_{k<=i} q_k), within the row in ascending target
order j (skipping j = i), and Gamma_ij is empty when q_ij = 0.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import rng
from .errors import ClockRateTooSmall, DimensionMismatch, HorizonExceeded
from .ratematrix import RateMatrix, validate

CLOCK_LABEL = "chain-clock"


@dataclass(frozen=True)
class IntervalPartition:
    """Half-open mark intervals [lo_ij, hi_ij) encoding jump targets.

    lo/hi are (n, n) arrays in global mark coordinates; empty intervals
    (including the diagonal) have lo == hi.  row_offset[i] is the start
    of row i's territory, sum_{k<i} q_k.
    """

    source: RateMatrix
    lo: np.ndarray
    hi: np.ndarray
    row_offset: np.ndarray

    def __post_init__(self):
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)
        self.row_offset.setflags(write=False)

    @property
    def total_measure(self):
        """Total length of all intervals = sum_i q_i."""
        return float((self.hi - self.lo).sum())


def build_partition(q: RateMatrix) -> IntervalPartition:
    """Lay out the jump intervals of q on [0, sum_i q_i)."""
    n = q.n_states
    rates = q.entries.copy()
    np.fill_diagonal(rates, 0.0)
    exit_rates = rates.sum(axis=1)
    row_offset = np.concatenate([[0.0], np.cumsum(exit_rates)[:-1]])
    lo = np.zeros((n, n))
    hi = np.zeros((n, n))
    for i in range(n):
        pos = row_offset[i]
        for j in range(n):
            if j == i:
                lo[i, j] = hi[i, j] = pos
                continue
            lo[i, j] = pos
            pos += rates[i, j]
            hi[i, j] = pos
    return IntervalPartition(source=q, lo=lo, hi=hi, row_offset=row_offset)


def mark_target(p: IntervalPartition, i: int, z: float) -> int:
    """Jump target for a mark: l if z in Gamma_il for some l != i, else i."""
    row_lo = p.lo[i]
    row_hi = p.hi[i]
    inside = (z >= row_lo) & (z < row_hi)
    inside[i] = False
    hits = np.nonzero(inside)[0]
    return int(hits[0]) if hits.size else int(i)


def mark_targets_vec(p: IntervalPartition, states, marks):
    """Vectorized mark_target over path arrays."""
    inside = (marks[:, None] >= p.lo[states]) & (marks[:, None] < p.hi[states])
    inside[np.arange(states.size), states] = False
    hit = inside.any(axis=1)
    target = inside.argmax(axis=1)
    return np.where(hit, target, states)


@dataclass(frozen=True)
class PoissonClock:
    """Shared event clock: times with exponential(rate_M) gaps and
    uniform [0, rate_M] marks."""

    rate_M: float
    times: np.ndarray
    marks: np.ndarray
    horizon: float
    seed: int

    def __post_init__(self):
        self.times.setflags(write=False)
        self.marks.setflags(write=False)


def default_clock_rate(q: RateMatrix, q_tilde: RateMatrix) -> float:
    """The construction's clock rate M = n(n-1) H, H = max_i {q_i, qt_i}.

    n is the number of states.  This dominates the minimal admissible rate
    max(sum_i q_i, sum_i qt_i) for every n >= 2.
    """
    n = q.n_states
    h = max(q.exit_rates.max(), q_tilde.exit_rates.max())
    return float(max(n * (n - 1) * h, 1e-12))


def required_clock_rate(q: RateMatrix, q_tilde: RateMatrix) -> float:
    """Minimal admissible clock rate: both partitions must fit in [0, M]."""
    return float(max(q.exit_rates.sum(), q_tilde.exit_rates.sum()))


def simulate_clock(rate_M: float, horizon: float, seed) -> PoissonClock:
    """Generate the event stream on [0, horizon]; same seed, same stream."""
    if rate_M <= 0:
        raise ValueError(f"clock rate must be positive, got {rate_M}")
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    gen = rng.stream(seed, CLOCK_LABEL)
    times = []
    t = 0.0
    # Draw in chunks to keep the Python loop short.
    expected = max(int(rate_M * horizon * 1.2) + 16, 32)
    while t < horizon:
        gaps = gen.exponential(1.0 / rate_M, size=expected)
        for g in gaps:
            t += g
            if t >= horizon:
                break
            times.append(t)
        # loop again only if the chunk ran out before the horizon
    times = np.asarray(times, dtype=float)
    marks = gen.uniform(0.0, rate_M, size=times.size)
    return PoissonClock(
        rate_M=float(rate_M),
        times=times,
        marks=marks,
        horizon=float(horizon),
        seed=int(seed),
    )


@dataclass(frozen=True)
class CoupledChainPath:
    """Piecewise-constant pair (Lam, Lam_tilde), right-continuous.

    times holds the epochs where at least one component jumped; lam[k] and
    lam_tilde[k] are the values from times[k] on.  Both start at
    initial_state at time 0.
    """

    initial_state: int
    times: np.ndarray
    lam: np.ndarray
    lam_tilde: np.ndarray
    horizon: float
    clock_rate: float

    def __post_init__(self):
        self.times.setflags(write=False)
        self.lam.setflags(write=False)
        self.lam_tilde.setflags(write=False)

    def state_at(self, t: float):
        """(Lam_t, Lam_tilde_t); right-continuous lookup."""
        if t < 0 or t > self.horizon:
            raise HorizonExceeded(t, self.horizon)
        k = int(np.searchsorted(self.times, t, side="right"))
        if k == 0:
            return self.initial_state, self.initial_state
        return int(self.lam[k - 1]), int(self.lam_tilde[k - 1])


def simulate_coupled(
    q: RateMatrix, q_tilde: RateMatrix, i0: int, clock: PoissonClock
) -> CoupledChainPath:
    """Drive both chains through one clock's (time, mark) events.

    At each event both components apply mark_target with the shared mark;
    only events where at least one component moves are retained.

    Raises:
        ClockRateTooSmall: the partitions do not fit inside [0, rate_M].
    """
    if q.n_states != q_tilde.n_states:
        raise DimensionMismatch(
            f"size mismatch: {q.n_states} vs {q_tilde.n_states} states"
        )
    if not 0 <= i0 < q.n_states:
        raise ValueError(f"state {i0} out of range for {q.n_states} states")
    required = required_clock_rate(q, q_tilde)
    if clock.rate_M < required - 1e-12:
        raise ClockRateTooSmall(clock.rate_M, required)
    part = build_partition(q)
    part_t = build_partition(q_tilde)
    lam = i0
    lam_t = i0
    times = []
    lams = []
    lam_ts = []
    for t, z in zip(clock.times, clock.marks):
        new_lam = mark_target(part, lam, z)
        new_lam_t = mark_target(part_t, lam_t, z)
        if new_lam != lam or new_lam_t != lam_t:
            times.append(t)
            lams.append(new_lam)
            lam_ts.append(new_lam_t)
            lam, lam_t = new_lam, new_lam_t
    return CoupledChainPath(
        initial_state=int(i0),
        times=np.asarray(times, dtype=float),
        lam=np.asarray(lams, dtype=np.int64),
        lam_tilde=np.asarray(lam_ts, dtype=np.int64),
        horizon=clock.horizon,
        clock_rate=clock.rate_M,
    )


def mismatch_occupation(path: CoupledChainPath, t: float) -> float:
    """Lebesgue measure of {s <= t : Lam_s != Lam_tilde_s}, exact."""
    if t > path.horizon:
        raise HorizonExceeded(t, path.horizon)
    total = 0.0
    prev = 0.0
    cur_lam = path.initial_state
    cur_lam_t = path.initial_state
    for k in range(path.times.size):
        epoch = path.times[k]
        if epoch >= t:
            break
        if cur_lam != cur_lam_t:
            total += epoch - prev
        prev = epoch
        cur_lam = int(path.lam[k])
        cur_lam_t = int(path.lam_tilde[k])
    if cur_lam != cur_lam_t:
        total += t - prev
    return float(total)


def coupling_generator(q: RateMatrix, q_tilde: RateMatrix) -> RateMatrix:
    """Exact generator of the joint pair process on S x S.

    rate((i,j) -> (k,l)) for (k,l) != (i,j) is the Lebesgue measure of
    A_ik intersect At_jl, where A_ik = Gamma_ik for k != i and A_ii is the
    complement [0, M] minus row i's intervals.  State (i, j) maps to the
    flat index i*n + j.
    """
    if q.n_states != q_tilde.n_states:
        raise DimensionMismatch(
            f"size mismatch: {q.n_states} vs {q_tilde.n_states} states"
        )
    n = q.n_states
    part = build_partition(q)
    part_t = build_partition(q_tilde)

    def overlap(lo1, hi1, lo2, hi2):
        return max(0.0, min(hi1, hi2) - max(lo1, lo2))

    joint = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            src = i * n + j
            for k in range(n):
                for l in range(n):
                    if k == i and l == j:
                        continue
                    if k != i and l != j:
                        rate = overlap(
                            part.lo[i, k], part.hi[i, k],
                            part_t.lo[j, l], part_t.hi[j, l],
                        )
                    elif k != i:  # l == j: second chain sits still
                        rate = part.hi[i, k] - part.lo[i, k]
                        for l2 in range(n):
                            if l2 == j:
                                continue
                            rate -= overlap(
                                part.lo[i, k], part.hi[i, k],
                                part_t.lo[j, l2], part_t.hi[j, l2],
                            )
                    else:  # k == i, l != j: first chain sits still
                        rate = part_t.hi[j, l] - part_t.lo[j, l]
                        for k2 in range(n):
                            if k2 == i:
                                continue
                            rate -= overlap(
                                part.lo[i, k2], part.hi[i, k2],
                                part_t.lo[j, l], part_t.hi[j, l],
                            )
                    joint[src, k * n + l] = max(rate, 0.0)
            joint[src, src] = -joint[src].sum()
    return validate(joint)


def mismatch_probability_exact(qc: RateMatrix, i0: int, t: float) -> float:
    """Exact P(Lam_t != Lam_tilde_t) from the joint generator."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    n = int(round(np.sqrt(qc.n_states)))
    if n * n != qc.n_states:
        raise DimensionMismatch(f"{qc.n_states} is not a perfect square")
    row = scipy.linalg.expm(t * qc.entries)[i0 * n + i0]
    mism = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                mism += row[i * n + j]
    return float(mism)


def expected_mismatch_integral_exact(qc: RateMatrix, i0: int, t: float) -> float:
    """Exact int_0^t P(Lam_s != Lam_tilde_s) ds via an augmented exponential.

    For the block matrix [[Qc, w], [0, 0]] with w the indicator of
    mismatched pair states, the top-right block of its exponential is
    int_0^t e^{s Qc} w ds, so the value is exact up to expm roundoff
    (far below the 1e-6 quadrature budget).
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    n = int(round(np.sqrt(qc.n_states)))
    if n * n != qc.n_states:
        raise DimensionMismatch(f"{qc.n_states} is not a perfect square")
    size = qc.n_states
    w = np.zeros(size)
    for i in range(n):
        for j in range(n):
            if i != j:
                w[i * n + j] = 1.0
    aug = np.zeros((size + 1, size + 1))
    aug[:size, :size] = qc.entries
    aug[:size, size] = w
    return float(scipy.linalg.expm(t * aug)[i0 * n + i0, size])


@dataclass(frozen=True)
class CoupledChainBatch:
    """Monte Carlo batch of coupled chain paths (vectorized kernel output).

    State snapshots and accumulated functionals are recorded at the probe
    times; jump events are stored in compressed ragged form (CSR over
    paths) when requested, for driving the diffusion pair.
    """

    n_paths: int
    i0: int
    horizon: float
    clock_rate: float
    probe_times: np.ndarray
    lam_at_probe: np.ndarray        # (n_probes, n_paths)
    lam_tilde_at_probe: np.ndarray  # (n_probes, n_paths)
    mismatch_at_probe: np.ndarray   # (n_probes, n_paths) int_0^tau 1{mismatch}
    kappa_int_at_probe: np.ndarray  # (n_probes, n_paths) int_0^tau kappa_Lam, or None
    jump_times: np.ndarray          # (n_events,) or None
    jump_lam: np.ndarray
    jump_lam_tilde: np.ndarray
    jump_ptr: np.ndarray            # (n_paths + 1,) CSR offsets


BLOCK_SIZE = 8192


def _block_ranges(n_paths, block_size):
    starts = list(range(0, n_paths, block_size))
    return [(b, s, min(s + block_size, n_paths)) for b, s in enumerate(starts)]


def simulate_coupled_batch(
    q: RateMatrix,
    q_tilde: RateMatrix,
    i0: int,
    horizon: float,
    n_paths: int,
    seed,
    probe_times=(),
    kappa=None,
    record_jumps=False,
    clock_rate=None,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> CoupledChainBatch:
    """Vectorized coupled-chain Monte Carlo.

    Paths are processed in fixed-size blocks with per-block Philox streams
    keyed by (seed, chain-clock, block index), so results do not depend on
    the number of worker threads.  Each round advances every path by one
    exponential clock gap and applies the shared mark to both components.

    Args:
        probe_times: times at which to record states and accumulated
            functionals; each must lie in [0, horizon].
        kappa: optional per-state vector; accumulates int_0^tau kappa_Lam ds.
        record_jumps: keep per-path jump events (times and new states).
        clock_rate: override for M; defaults to the n(n-1)H rate.

    Raises:
        ClockRateTooSmall: rate below the minimal admissible value.
    """
    if q.n_states != q_tilde.n_states:
        raise DimensionMismatch(
            f"size mismatch: {q.n_states} vs {q_tilde.n_states} states"
        )
    if not 0 <= i0 < q.n_states:
        raise ValueError(f"state {i0} out of range for {q.n_states} states")
    probe_times = np.asarray(sorted(probe_times), dtype=float)
    if probe_times.size and (probe_times[0] < 0 or probe_times[-1] > horizon):
        raise HorizonExceeded(float(probe_times[-1]), horizon)
    rate = default_clock_rate(q, q_tilde) if clock_rate is None else float(clock_rate)
    required = required_clock_rate(q, q_tilde)
    if rate < required - 1e-12:
        raise ClockRateTooSmall(rate, required)
    part = build_partition(q)
    part_t = build_partition(q_tilde)
    kap = None if kappa is None else np.asarray(kappa, dtype=float)

    def run_block(args):
        block_index, lo_path, hi_path = args
        m = hi_path - lo_path
        gen = rng.stream(seed, CLOCK_LABEL, block_index)
        t_cur = np.zeros(m)
        lam = np.full(m, i0, dtype=np.int64)
        lam_t = np.full(m, i0, dtype=np.int64)
        n_probes = probe_times.size
        lam_rec = np.full((n_probes, m), i0, dtype=np.int64)
        lam_t_rec = np.full((n_probes, m), i0, dtype=np.int64)
        mism_rec = np.zeros((n_probes, m))
        kap_rec = np.zeros((n_probes, m)) if kap is not None else None
        ev_path, ev_time, ev_lam, ev_lam_t = [], [], [], []
        while True:
            alive = t_cur < horizon
            if not alive.any():
                break
            gaps = gen.exponential(1.0 / rate, size=m)
            marks = gen.uniform(0.0, rate, size=m)
            t_new = t_cur + gaps
            mismatched = lam != lam_t
            for kp in range(n_probes):
                tau = probe_times[kp]
                overlap = np.clip(np.minimum(t_new, tau) - t_cur, 0.0, None)
                if overlap.any():
                    mism_rec[kp] += overlap * mismatched
                    if kap_rec is not None:
                        kap_rec[kp] += overlap * kap[lam]
                rec = (t_cur <= tau) & (tau < t_new)
                if rec.any():
                    lam_rec[kp, rec] = lam[rec]
                    lam_t_rec[kp, rec] = lam_t[rec]
            jumping = alive & (t_new < horizon)
            idx = np.nonzero(jumping)[0]
            if idx.size:
                new_lam = mark_targets_vec(part, lam[idx], marks[idx])
                new_lam_t = mark_targets_vec(part_t, lam_t[idx], marks[idx])
                moved = (new_lam != lam[idx]) | (new_lam_t != lam_t[idx])
                if record_jumps and moved.any():
                    sel = idx[moved]
                    ev_path.append(sel + lo_path)
                    ev_time.append(t_new[sel])
                    ev_lam.append(new_lam[moved])
                    ev_lam_t.append(new_lam_t[moved])
                lam[idx] = new_lam
                lam_t[idx] = new_lam_t
            t_cur = t_new
        out = {
            "lam_rec": lam_rec,
            "lam_t_rec": lam_t_rec,
            "mism_rec": mism_rec,
            "kap_rec": kap_rec,
        }
        if record_jumps:
            out["ev_path"] = (
                np.concatenate(ev_path) if ev_path else np.zeros(0, dtype=np.int64)
            )
            out["ev_time"] = np.concatenate(ev_time) if ev_time else np.zeros(0)
            out["ev_lam"] = (
                np.concatenate(ev_lam) if ev_lam else np.zeros(0, dtype=np.int64)
            )
            out["ev_lam_t"] = (
                np.concatenate(ev_lam_t) if ev_lam_t else np.zeros(0, dtype=np.int64)
            )
        return out

    ranges = _block_ranges(int(n_paths), int(block_size))
    if threads > 1 and len(ranges) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(run_block, ranges))
    else:
        results = [run_block(r) for r in ranges]

    n_probes = probe_times.size
    lam_at = np.concatenate([r["lam_rec"] for r in results], axis=1)
    lam_t_at = np.concatenate([r["lam_t_rec"] for r in results], axis=1)
    mism_at = np.concatenate([r["mism_rec"] for r in results], axis=1)
    kap_at = (
        np.concatenate([r["kap_rec"] for r in results], axis=1)
        if kap is not None
        else None
    )
    jump_times = jump_lam = jump_lam_t = jump_ptr = None
    if record_jumps:
        ev_path = np.concatenate([r["ev_path"] for r in results])
        ev_time = np.concatenate([r["ev_time"] for r in results])
        ev_lam = np.concatenate([r["ev_lam"] for r in results])
        ev_lam_t = np.concatenate([r["ev_lam_t"] for r in results])
        order = np.argsort(ev_path, kind="stable")  # per-path time order kept
        ev_path = ev_path[order]
        jump_times = ev_time[order]
        jump_lam = ev_lam[order]
        jump_lam_t = ev_lam_t[order]
        counts = np.bincount(ev_path, minlength=n_paths)
        jump_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return CoupledChainBatch(
        n_paths=int(n_paths),
        i0=int(i0),
        horizon=float(horizon),
        clock_rate=rate,
        probe_times=probe_times,
        lam_at_probe=lam_at,
        lam_tilde_at_probe=lam_t_at,
        mismatch_at_probe=mism_at,
        kappa_int_at_probe=kap_at,
        jump_times=jump_times,
        jump_lam=jump_lam,
        jump_lam_tilde=jump_lam_t,
        jump_ptr=jump_ptr,
    )


def write_paths_csv(paths, path_or_file):
    """Export coupled paths as CSV rows (path_id, time, lambda, lambda_tilde).

    The initial state appears as a row at time 0; subsequent rows are jump
    epochs with the post-jump states.
    """
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "time", "lambda", "lambda_tilde"])
        for pid, p in enumerate(paths):
            writer.writerow([pid, repr(0.0), p.initial_state, p.initial_state])
            for k in range(p.times.size):
                writer.writerow(
                    [pid, repr(float(p.times[k])), int(p.lam[k]), int(p.lam_tilde[k])]
                )
    finally:
        if own:
            fh.close()
