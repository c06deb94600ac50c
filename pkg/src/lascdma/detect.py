"""Likelihood ascent search (LAS) detectors for the synchronous CDMA model.

Detection maximizes Omega(b) = b.(A*y) - 0.5 * b.H.b over b in {-1,+1}^M,
whose gradient at the current vector is g = A*y - H b.  A LAS detector
examines an index set L(n) at each step and flips bit k when the gradient
clears the threshold t_k(n) = sum_{j in L(n)} |H_kj|:

    flip -1 -> +1  iff  g_k >  t_k(n)
    flip +1 -> -1  iff  g_k < -t_k(n)        (ties never flip)

After the step, g is updated incrementally from the pre-flip bit values:
g += 2 * sum_{i flipped} b_i H_i.  Each flipped bit i costs nnz(column i)
additions; that is the only work charged to the reported additions counter
(initial gradient and threshold sums are tracked separately).

Every flipping step strictly increases Omega, so all schedules terminate at
a fixed point; a sequential fixed point is exactly a neighborhood-1 local
maximum of Omega.

The bit-update schedules:

  sequential  -- one bit per step, fixed cyclic order 0..M-1; thresholds
                 reduce to t_k = H_kk.  Converged after a full zero-flip
                 cycle.
  parallel    -- all bits every step; after an empty-flip step, a sequential
                 cycle verifies the fixed point (and resumes parallel
                 stepping if it flipped anything).
  hybrid      -- `parallel_steps` all-bit steps, then sequential to a
                 verified fixed point.  hybrid(0) == sequential.
  custom      -- caller-provided index sets, then sequential to a verified
                 fixed point.

Bit vectors are int8 arrays over {-1,+1}.  Detector runs are single-threaded
over immutable (y, H, A); many runs may share one crosscorrelation.
"""

import math
from dataclasses import dataclass

import numpy as np

MAX_EXHAUSTIVE_BITS = 20  # hard cap for the brute-force search


@dataclass(frozen=True)
class Schedule:
    """Which index set L(n) each update step examines."""

    kind: str  # "sequential" | "parallel" | "hybrid" | "custom"
    parallel_steps: int = 0
    custom_sets: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sequential", "parallel", "hybrid", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "hybrid" and self.parallel_steps < 0:
            raise ValueError("parallel_steps must be >= 0")
        if self.kind == "custom":
            sets = tuple(np.asarray(s, dtype=np.int64) for s in self.custom_sets)
            for s in sets:
                if s.size == 0:
                    raise ValueError("custom index sets must be nonempty")
                if np.unique(s).size != s.size:
                    raise ValueError("custom index sets must not repeat indices")
            object.__setattr__(self, "custom_sets", sets)

    @classmethod
    def sequential(cls):
        return cls("sequential")

    @classmethod
    def parallel(cls):
        return cls("parallel")

    @classmethod
    def hybrid(cls, parallel_steps):
        return cls("hybrid", parallel_steps=parallel_steps)

    @classmethod
    def custom(cls, sets):
        return cls("custom", custom_sets=tuple(sets))


@dataclass
class DetectorRun:
    """Outcome of one LAS run.

    additions counts only the incremental gradient updates (one addition per
    structural nonzero of each flipped bit's H column, diagonal included);
    overhead_additions tracks the initial gradient and any all-bit threshold
    sums.  flip_log, when recorded, lists (step, flipped bit indices).
    """

    bits: np.ndarray
    converged: bool
    steps: int
    flips: int
    additions: int
    passes: int
    overhead_additions: int
    likelihood_trace: list = None
    flip_log: list = None


def mf_detect(y):
    """Sign detector on the matched-filter output; y_k == 0 decides +1."""
    return np.where(np.asarray(y) >= 0, 1, -1).astype(np.int8)


def likelihood(bits, y, xcorr, amplitudes):
    """Omega(b) = b.(A*y) - 0.5 * b.H.b, the ascent metric.

    Equals the model log-likelihood up to a constant independent of b, so
    argmax and ascent statements transfer exactly.
    """
    b = np.asarray(bits, dtype=np.float64)
    ay = np.asarray(amplitudes, dtype=np.float64) * np.asarray(y, dtype=np.float64)
    return float(b @ ay - 0.5 * (b @ xcorr.h_matvec(b)))


def initial_gradient(bits, y, xcorr, amplitudes):
    """g = A*y - H b at the given vector, via the sparse H."""
    b = np.asarray(bits, dtype=np.float64)
    ay = np.asarray(amplitudes, dtype=np.float64) * np.asarray(y, dtype=np.float64)
    return ay - xcorr.h_matvec(b)


class _LasState:
    """Mutable working state of one detector run."""

    def __init__(self, y, xcorr, amplitudes, b0, record_likelihood, record_flips,
                 check_gradient):
        self.M = xcorr.n_bits
        y = np.asarray(y, dtype=np.float64)
        A = np.asarray(amplitudes, dtype=np.float64)
        b0 = np.asarray(b0)
        if y.shape != (self.M,) or A.shape != (self.M,) or b0.shape != (self.M,):
            raise ValueError("y, amplitudes and b0 must all have length M")
        if not np.all(np.abs(b0) == 1):
            raise ValueError("initial bits must be +/-1")
        self.indptr = xcorr.indptr
        self.indices = xcorr.indices
        self.data = xcorr.h_data
        self.t_seq = xcorr.diag
        self.xcorr = xcorr
        self.ay = A * y
        self.b = b0.astype(np.float64)
        self.g = self.ay - xcorr.h_matvec(self.b)
        self.nnz = xcorr.nnz
        self.steps = 0
        self.flips = 0
        self.additions = 0
        self.passes = 0
        self.overhead = self.nnz  # initial gradient work
        self.check_gradient = check_gradient
        self.trace = [self.omega()] if record_likelihood else None
        self.flip_log = [] if record_flips else None

    def omega(self):
        return float(self.b @ self.ay - 0.5 * (self.b @ self.xcorr.h_matvec(self.b)))

    def _after_flips(self, flipped):
        if self.trace is not None:
            self.trace.append(self.omega())
        if self.flip_log is not None:
            self.flip_log.append((self.steps, tuple(int(i) for i in flipped)))
        if self.check_gradient:
            direct = self.ay - self.xcorr.h_matvec(self.b)
            err = float(np.max(np.abs(self.g - direct)))
            if err > 1e-9:
                raise AssertionError(
                    f"incremental gradient drifted from recomputation by {err:.3e}"
                )

    def flip_single(self, k):
        lo, hi = self.indptr[k], self.indptr[k + 1]
        self.g[self.indices[lo:hi]] += (2.0 * self.b[k]) * self.data[lo:hi]
        self.b[k] = -self.b[k]
        self.flips += 1
        self.additions += int(hi - lo)

    def flip_set(self, fset):
        # pre-flip bit values drive the gradient update
        for i in fset:
            lo, hi = self.indptr[i], self.indptr[i + 1]
            self.g[self.indices[lo:hi]] += (2.0 * self.b[i]) * self.data[lo:hi]
            self.additions += int(hi - lo)
        self.b[fset] = -self.b[fset]
        self.flips += int(len(fset))

    def result(self, converged):
        return DetectorRun(
            bits=self.b.astype(np.int8),
            converged=converged,
            steps=self.steps,
            flips=self.flips,
            additions=self.additions,
            passes=self.passes,
            overhead_additions=self.overhead,
            likelihood_trace=self.trace,
            flip_log=self.flip_log,
        )


def _sequential_phase(st, max_cycles):
    """Cyclic single-bit updates until a full zero-flip verification cycle.

    Bits between the cursor and the next violating index cannot flip (their
    gradient entries are unchanged since the last flip), so the scan jumps
    directly to it while accounting for the skipped steps.  Returns True on
    a verified fixed point within the cycle budget.
    """
    if max_cycles <= 0:
        return False
    M = st.M
    base = st.steps
    cap = max_cycles * M
    used = 0
    pos = 0
    converged = False
    viol = (st.b * st.g) < -st.t_seq
    while True:
        nz = np.flatnonzero(viol)
        if nz.size == 0:
            # needs M more clean steps: the zero-flip verification cycle
            if used + M <= cap:
                used += M
                converged = True
            else:
                used = cap
            break
        j = np.searchsorted(nz, pos)
        k = int(nz[j]) if j < nz.size else int(nz[0])
        d = (k - pos) % M
        if used + d + 1 > cap:
            used = cap
            break
        used += d + 1
        st.steps = base + used
        st.flip_single(k)
        touched = st.indices[st.indptr[k]:st.indptr[k + 1]]
        viol[touched] = (st.b[touched] * st.g[touched]) < -st.t_seq[touched]
        st._after_flips((k,))
        pos = (k + 1) % M
    st.steps = base + used
    st.passes += -(-used // M)  # ceil
    return converged


def _run_set_step(st, members, thresholds):
    """One step over an explicit index set; returns the flipped index array."""
    bm = st.b[members]
    gm = st.g[members]
    fset = members[(bm * gm) < -thresholds]
    st.steps += 1
    st.passes += 1
    if fset.size:
        st.flip_set(fset)
        st._after_flips(fset)
    return fset


def _set_thresholds(st, members):
    """t_k = sum_{j in set} |H_kj| for each k in the set (threshold work is
    charged to overhead, not to the reported additions)."""
    mask = np.zeros(st.M, dtype=bool)
    mask[members] = True
    out = np.empty(members.size)
    for i, k in enumerate(members):
        lo, hi = st.indptr[k], st.indptr[k + 1]
        cols = st.indices[lo:hi]
        out[i] = np.abs(st.data[lo:hi][mask[cols]]).sum()
        st.overhead += int(hi - lo)
    return out


def las_run(y, xcorr, amplitudes, schedule, b0, max_passes=100,
            record_likelihood=False, record_flips=False, check_gradient=False):
    """Run a LAS detector to a fixed point.

    max_passes bounds the total work in passes (a pass is one all-bit step or
    one full sequential cycle); ascent guarantees termination long before the
    default cap, which only guards implementation bugs.  Exhausting the cap
    reports converged=False rather than raising.

    check_gradient recomputes g from scratch after every flip event and
    raises if the incremental value drifts beyond 1e-9 (debug aid).
    """
    if max_passes < 1:
        raise ValueError("max_passes must be >= 1")
    st = _LasState(y, xcorr, amplitudes, b0, record_likelihood, record_flips,
                   check_gradient)

    def seq_budget():
        return max_passes - st.passes

    if schedule.kind == "sequential":
        converged = _sequential_phase(st, max_passes)
    elif schedule.kind == "hybrid":
        all_bits = np.arange(st.M)
        t_par = st.xcorr.abs_row_sums
        st.overhead += st.nnz  # one pass of |H| row sums
        for _ in range(min(schedule.parallel_steps, max_passes)):
            fset = _run_set_step(st, all_bits, t_par)
            if fset.size == 0:
                break  # state stopped moving; hand over to the bit phase
        converged = _sequential_phase(st, seq_budget())
    elif schedule.kind == "parallel":
        all_bits = np.arange(st.M)
        t_par = st.xcorr.abs_row_sums
        st.overhead += st.nnz
        converged = False
        while st.passes < max_passes:
            fset = _run_set_step(st, all_bits, t_par)
            if fset.size != 0:
                continue
            # empty all-bit step: verify with one sequential cycle, and
            # resume all-bit stepping if the stricter thresholds flipped
            if seq_budget() <= 0:
                break
            if _sequential_phase(st, 1):
                converged = True
                break
    elif schedule.kind == "custom":
        for members in schedule.custom_sets:
            if st.passes >= max_passes:
                break
            members = np.asarray(members, dtype=np.int64)
            t_set = _set_thresholds(st, members)
            _run_set_step(st, members, t_set)
        converged = _sequential_phase(st, seq_budget())
    else:  # pragma: no cover - Schedule validates kind
        raise ValueError(schedule.kind)

    return st.result(converged)


def slas_detect(y, xcorr, amplitudes, b0, max_passes=100, **kwargs):
    """Sequential LAS: cyclic single-bit updates, thresholds t_k = H_kk."""
    return las_run(y, xcorr, amplitudes, Schedule.sequential(), b0,
                   max_passes=max_passes, **kwargs)


def wslas_detect(y, xcorr, amplitudes, b0, n_prime=10, max_passes=100, **kwargs):
    """Wide-sense sequential LAS: n_prime all-bit steps, then single-bit."""
    return las_run(y, xcorr, amplitudes, Schedule.hybrid(n_prime), b0,
                   max_passes=max_passes, **kwargs)


def gml_exhaustive(y, xcorr, amplitudes):
    """Global maximizer of Omega over all 2^M bit vectors (small-M oracle).

    Ties break toward the lexicographically smallest vector with +1 < -1 and
    position 0 most significant.  Refuses M > MAX_EXHAUSTIVE_BITS.
    """
    y = np.asarray(y, dtype=np.float64)
    M = y.size
    if M > MAX_EXHAUSTIVE_BITS:
        raise ValueError(
            f"exhaustive search capped at {MAX_EXHAUSTIVE_BITS} bits, got {M}"
        )
    A = np.asarray(amplitudes, dtype=np.float64)
    ay = A * y
    Hd = xcorr.dense_h()
    shifts = np.arange(M - 1, -1, -1, dtype=np.uint64)  # position 0 = MSB
    best_val = -math.inf
    best_bits = None
    chunk = 1 << min(M, 16)
    for start in range(0, 1 << M, chunk):
        n = np.arange(start, start + chunk, dtype=np.uint64)
        B = 1.0 - 2.0 * ((n[:, None] >> shifts[None, :]) & 1)
        omega = B @ ay - 0.5 * np.einsum("ij,ij->i", B @ Hd, B)
        i = int(np.argmax(omega))
        if omega[i] > best_val:  # strict: earlier (lex-smaller) wins ties
            best_val = float(omega[i])
            best_bits = B[i].astype(np.int8)
    return best_bits, best_val


def write_trace_csv(run, fp):
    """Dump a recorded run trace as CSV: step, flipped bits, Omega, additions.

    Requires the run to have been made with record_flips (and optionally
    record_likelihood for the omega column).
    """
    if run.flip_log is None:
        raise ValueError("run was not recorded with record_flips=True")
    fp.write("step,flipped,omega,additions\n")
    trace = run.likelihood_trace
    for i, (step, flipped) in enumerate(run.flip_log):
        om = f"{trace[i + 1]:.12g}" if trace is not None else ""
        fp.write(f"{step},{';'.join(str(b) for b in flipped)},{om},\n")
    fp.write(f"{run.steps},,,{run.additions}\n")
