"""Monte-Carlo BER and complexity estimation.

A point is one (M, C, L, SNR) configuration.  Per the sequence-set protocol,
points with M <= 128 draw a fresh spreading matrix for every transmission,
while larger points use a fixed number of matrices (default five) that are
drawn once and reused; per-set estimates are reported together with their
pooled average.  Fixed sets advance in lockstep (identical trial counts), so
the averaged row's error ratio equals the arithmetic mean of the per-set
BERs.

Every trial owns an RNG substream derived from (seed, point parameters,
set index, trial index), and the adaptive stopping rule is evaluated on
merged integer totals at deterministic batch boundaries, so results are
bit-identical for a fixed seed under any worker count.
"""

import math
import multiprocessing
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams, matched_filter, snr_to_sigma, transmit
from .detect import (
    gml_exhaustive,
    likelihood,
    mf_detect,
    slas_detect,
    wslas_detect,
    MAX_EXHAUSTIVE_BITS,
)
from .seqgen import crosscorrelation, gen_sparse_matrix

DETECTOR_ORDER = ("MF", "SLAS", "WSLAS", "GML")
LML_DETECTORS = ("SLAS", "WSLAS")

# sequence-set protocol: fresh matrix per transmission up to this size,
# five fixed matrices beyond it
PER_TX_MAX_BITS = 128
DEFAULT_FIXED_SETS = 5

_Z95 = 1.959963984540054  # two-sided 95% normal quantile

_INITIAL_PROBE_BITS = 16384
_MAX_BATCH_TRIALS = 65536


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class InfeasibleError(ConfigError):
    """A structurally valid config that cannot be simulated (e.g. C < L)."""


def q_function(x):
    """Gaussian tail probability Q(x) = 0.5 erfc(x / sqrt(2))."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def single_user_bound(snr_db):
    """Interference-free BER Q(sqrt(SNR)) under the SNR = A^2/sigma^2 convention."""
    if math.isinf(snr_db):
        return 0.0 if snr_db > 0 else 0.5
    return q_function(math.sqrt(10.0 ** (snr_db / 10.0)))


def wilson_interval(errors, n, z=_Z95):
    """Wilson score interval for a binomial proportion; robust at low counts."""
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    zz = z * z
    denom = 1.0 + zz / n
    center = (p + zz / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + zz / (4.0 * n * n)) / denom
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == n else min(1.0, center + half)
    return lo, hi


@dataclass
class ExperimentConfig:
    """One Monte-Carlo experiment point (or an SNR list over one geometry).

    L is the nonzero chip count per sequence or "dense" for L = C.  The trial
    policy stops a point once every detector has accumulated min_bit_errors
    errors, or at max_bits simulated bits (the estimate is then flagged
    censored); min_bit_errors = 0 runs exactly max_bits.  seq_sets is "auto"
    (the size-based protocol above), "per_tx", or a fixed set count.
    """

    M: int
    alpha: float
    L: object = "dense"
    snr_db: object = 11.0
    detectors: tuple = ("MF", "SLAS")
    seed: int = 0
    min_bit_errors: int = 100
    max_bits: int = 10_000_000
    seq_sets: object = "auto"
    n_prime: int = 10
    max_passes: int = 100
    amplitude: float = 1.0
    experiment: str = "run"

    @property
    def C(self):
        """Total chip count realizing the requested load."""
        return int(round(self.M / self.alpha))

    @property
    def alpha_eff(self):
        return self.M / self.C

    def resolved_L(self):
        return self.C if self.L == "dense" else int(self.L)

    def snr_points(self):
        if isinstance(self.snr_db, (list, tuple, np.ndarray)):
            return tuple(float(s) for s in self.snr_db)
        return (float(self.snr_db),)

    def normalized_detectors(self):
        dets = tuple(str(d).upper() for d in self.detectors)
        bad = [d for d in dets if d not in DETECTOR_ORDER]
        if bad:
            raise ConfigError(f"unknown detectors {bad}; valid: {DETECTOR_ORDER}")
        if not dets:
            raise ConfigError("at least one detector is required")
        return tuple(d for d in DETECTOR_ORDER if d in dets)

    def validate(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.L != "dense":
            try:
                L = int(self.L)
            except (TypeError, ValueError):
                raise ConfigError(f"L must be an integer or 'dense', got {self.L!r}")
            if L < 1:
                raise ConfigError("L must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.min_bit_errors < 0:
            raise ConfigError("min_bit_errors must be >= 0")
        if self.max_bits < self.M:
            raise ConfigError("max_bits must allow at least one transmission")
        if self.min_bit_errors == 0 and self.max_bits <= 0:
            raise ConfigError("trial policy would run no trials")
        if self.max_passes < 1:
            raise ConfigError("max_passes must be >= 1")
        if not self.amplitude > 0:
            raise ConfigError("amplitude must be > 0")
        if self.seq_sets not in ("auto", "per_tx"):
            try:
                n = int(self.seq_sets)
            except (TypeError, ValueError):
                raise ConfigError(f"seq_sets must be 'auto', 'per_tx' or a count")
            if n < 1:
                raise ConfigError("seq_sets count must be >= 1")
        if not self.snr_points():
            raise ConfigError("snr_db must contain at least one value")
        for s in self.snr_points():
            if math.isnan(s):
                raise ConfigError("snr_db must not be NaN")
        dets = self.normalized_detectors()
        # feasibility of the point itself
        if self.C < 1:
            raise InfeasibleError(
                f"C = round(M/alpha) = {self.C}: no chips at this load"
            )
        if self.C < self.resolved_L():
            raise InfeasibleError(
                f"C = round(M/alpha) = {self.C} < L = {self.resolved_L()}"
            )
        if "GML" in dets and self.M > MAX_EXHAUSTIVE_BITS:
            raise InfeasibleError(
                f"GML is exhaustive and capped at M <= {MAX_EXHAUSTIVE_BITS}"
            )


@dataclass
class BerEstimate:
    """One estimate row: a (point, detector, sequence set) combination.

    seq_set is the set index, "avg" for the pooled row, or "per_tx" when a
    fresh matrix is drawn each transmission.  gml_* audit fields are pooled
    over the whole point and attached to the aggregate row of each ascent
    detector when GML ran alongside it.
    """

    experiment: str
    detector: str
    M: int
    C: int
    L: object
    alpha_req: float
    alpha_eff: float
    snr_db: float
    seq_set: str
    bits: int
    errors: int
    ber: float
    ci_low: float
    ci_high: float
    adds_per_bit: float
    passes_mean: float
    censored: bool
    gml_match_rate: object = None
    gml_omega_violations: object = None


@dataclass
class SweepResult:
    """Rows from a parameter sweep plus any infeasible points skipped."""

    rows: list
    failures: list  # (point label, exception)


@dataclass
class _PointCtx:
    """Everything a worker needs to run one trial of one point."""

    experiment: str
    seed: int
    M: int
    C: int
    L: int
    dense: bool
    snr_db: float
    detectors: tuple
    amplitudes: np.ndarray
    params: ChannelParams
    n_prime: int
    max_passes: int
    matrices: object  # list of (SequenceMatrix, CrossCorr), or None for per-tx
    audit_detectors: tuple
    trial_keys: tuple  # per-set 128-bit Philox keys


def _snr_code(snr_db):
    # stable nonnegative integer encoding for substream derivation
    if math.isinf(snr_db):
        return 0xFFFFFFFF if snr_db > 0 else 0xFFFFFFFE
    return int(round(snr_db * 1000.0)) + (1 << 22)


def _trial_key(seed, M, C, L, snr_db, set_idx):
    """128-bit stream key for one (point, set); trials index its counter."""
    ss = np.random.SeedSequence(
        seed, spawn_key=(1, M, C, L, _snr_code(snr_db), set_idx)
    )
    return ss.generate_state(2, np.uint64)


def _trial_rng(ctx, set_idx, trial_idx):
    # counter-block streams: trials are independent and schedule-agnostic
    bitgen = np.random.Philox(counter=[0, 0, 0, trial_idx],
                              key=ctx.trial_keys[set_idx])
    return np.random.Generator(bitgen)


def _set_matrix_rng(seed, M, C, L, set_idx):
    # no SNR in the key: fixed sets persist across an SNR sweep
    ss = np.random.SeedSequence(seed, spawn_key=(0, M, C, L, set_idx))
    return np.random.default_rng(ss)


def _run_trial(ctx, set_idx, trial_idx):
    rng = _trial_rng(ctx, set_idx, trial_idx)
    if ctx.matrices is None:
        S = gen_sparse_matrix(ctx.C, ctx.M, ctx.L, rng)
        xc = crosscorrelation(S, ctx.amplitudes)
    else:
        S, xc = ctx.matrices[set_idx]
    b = (rng.integers(0, 2, ctx.M, dtype=np.int8) * 2 - 1).astype(np.int8)
    r = transmit(S, ctx.params, b, rng)
    y = matched_filter(S, r)
    b_mf = mf_detect(y)

    counts = []
    decided = {}
    for det in ctx.detectors:
        adds = passes = 0
        if det == "MF":
            dec = b_mf
        elif det == "SLAS":
            run = slas_detect(y, xc, ctx.amplitudes, b_mf,
                              max_passes=ctx.max_passes)
            dec, adds, passes = run.bits, run.additions, run.passes
        elif det == "WSLAS":
            run = wslas_detect(y, xc, ctx.amplitudes, b_mf,
                               n_prime=ctx.n_prime, max_passes=ctx.max_passes)
            dec, adds, passes = run.bits, run.additions, run.passes
        else:  # GML
            dec, _ = gml_exhaustive(y, xc, ctx.amplitudes)
        decided[det] = dec
        counts.append((int(np.count_nonzero(dec != b)), adds, passes))

    audit = None
    if ctx.audit_detectors:
        gml_bits = decided["GML"]
        om_gml = likelihood(gml_bits, y, xc, ctx.amplitudes)
        tol = 1e-9 * (1.0 + abs(om_gml))
        audit = tuple(
            (
                int(np.array_equal(decided[det], gml_bits)),
                int(likelihood(decided[det], y, xc, ctx.amplitudes) > om_gml + tol),
            )
            for det in ctx.audit_detectors
        )
    return tuple(counts), audit


_WORKER_CTX = None


def _worker_init(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_trial(args):
    set_idx, trial_idx = args
    return _run_trial(_WORKER_CTX, set_idx, trial_idx)


def _next_batch_trials(min_bit_errors, max_bits, bits_per_round, trials_done,
                       pooled_bits, pooled_errors):
    """Deterministic batch sizing from merged totals only (worker-agnostic)."""
    if pooled_bits >= max_bits:
        return 0
    remaining = -(-(max_bits - pooled_bits) // bits_per_round)
    if min_bit_errors == 0:
        return min(remaining, _MAX_BATCH_TRIALS)
    if trials_done == 0:
        n = -(-_INITIAL_PROBE_BITS // bits_per_round)
    else:
        need_bits = 0.0
        for err in pooled_errors:
            if err >= min_bit_errors:
                continue
            if err == 0:
                need = 2.0 * pooled_bits  # no rate information yet: triple total
            else:
                need = (min_bit_errors - err) * pooled_bits / err * 1.15
            need_bits = max(need_bits, need)
        n = -(-int(need_bits) // bits_per_round)
    return max(1, min(n, remaining, _MAX_BATCH_TRIALS))


def _resolve_sets(config, L, matrices):
    """Returns (n_sets, per_tx, prepared) honoring policy and any injected
    matrices; prepared is a list of (SequenceMatrix, CrossCorr) or None."""
    M, C = config.M, config.C
    amplitudes = np.full(M, config.amplitude)
    if matrices is not None:
        prepared = []
        for S in matrices:
            if S.n_bits != M or S.n_chips != C or S.n_nonzero != L:
                raise ConfigError(
                    "injected matrix shape does not match the configuration"
                )
            prepared.append((S, crosscorrelation(S, amplitudes)))
        return len(prepared), False, prepared
    policy = config.seq_sets
    if policy == "auto":
        policy = "per_tx" if M <= PER_TX_MAX_BITS else DEFAULT_FIXED_SETS
    if policy == "per_tx":
        return 1, True, None
    n_sets = int(policy)
    prepared = []
    for s in range(n_sets):
        rng = _set_matrix_rng(config.seed, M, C, L, s)
        S = gen_sparse_matrix(C, M, L, rng)
        prepared.append((S, crosscorrelation(S, amplitudes)))
    return n_sets, False, prepared


def _point_rows(config, ctx, n_sets, per_tx, acc, audit_acc, trials_done,
                censored):
    alpha_req = config.alpha
    alpha_eff = config.alpha_eff
    label = f"{config.experiment}[seed={config.seed}]"
    L_label = "dense" if config.L == "dense" else ctx.L
    rows = []
    n_trials_total = trials_done * n_sets
    for d_idx, det in enumerate(ctx.detectors):
        per_set = []
        for s in range(n_sets):
            err, adds, passes = acc[s][d_idx]
            bits = trials_done * ctx.M
            lo, hi = wilson_interval(err, bits)
            per_set.append(
                BerEstimate(
                    experiment=label, detector=det, M=ctx.M, C=ctx.C,
                    L=L_label, alpha_req=alpha_req, alpha_eff=alpha_eff,
                    snr_db=ctx.snr_db,
                    seq_set="per_tx" if per_tx else str(s),
                    bits=bits, errors=err,
                    ber=err / bits if bits else 0.0,
                    ci_low=lo, ci_high=hi,
                    adds_per_bit=adds / bits if bits else 0.0,
                    passes_mean=passes / trials_done if trials_done else 0.0,
                    censored=censored,
                )
            )
        audit_row = per_set[0] if n_sets == 1 else None
        if n_sets > 1:
            err = sum(acc[s][d_idx][0] for s in range(n_sets))
            adds = sum(acc[s][d_idx][1] for s in range(n_sets))
            passes = sum(acc[s][d_idx][2] for s in range(n_sets))
            bits = n_trials_total * ctx.M
            lo, hi = wilson_interval(err, bits)
            avg = BerEstimate(
                experiment=label, detector=det, M=ctx.M, C=ctx.C,
                L=L_label, alpha_req=alpha_req, alpha_eff=alpha_eff,
                snr_db=ctx.snr_db, seq_set="avg",
                bits=bits, errors=err,
                ber=err / bits if bits else 0.0,
                ci_low=lo, ci_high=hi,
                adds_per_bit=adds / bits if bits else 0.0,
                passes_mean=passes / n_trials_total if n_trials_total else 0.0,
                censored=censored,
            )
            per_set.append(avg)
            audit_row = avg
        if det in ctx.audit_detectors and n_trials_total:
            a_idx = ctx.audit_detectors.index(det)
            matches, viols = audit_acc[a_idx]
            audit_row.gml_match_rate = matches / n_trials_total
            audit_row.gml_omega_violations = viols
        rows.extend(per_set)
    return rows


def _run_point(config, snr_db, workers, matrices):
    M, C, L = config.M, config.C, config.resolved_L()
    detectors = config.normalized_detectors()
    amplitudes = np.full(M, config.amplitude)
    sigma = snr_to_sigma(snr_db, config.amplitude)
    n_sets, per_tx, prepared = _resolve_sets(config, L, matrices)
    audit_detectors = tuple(
        d for d in detectors if d in LML_DETECTORS
    ) if "GML" in detectors else ()
    ctx = _PointCtx(
        experiment=config.experiment, seed=config.seed, M=M, C=C, L=L,
        dense=(L == C), snr_db=snr_db,
        detectors=detectors, amplitudes=amplitudes,
        params=ChannelParams(amplitudes, sigma),
        n_prime=config.n_prime, max_passes=config.max_passes,
        matrices=prepared, audit_detectors=audit_detectors,
        trial_keys=tuple(
            _trial_key(config.seed, M, C, L, snr_db, s) for s in range(n_sets)
        ),
    )

    n_det = len(detectors)
    acc = [[(0, 0, 0) for _ in range(n_det)] for _ in range(n_sets)]
    audit_acc = [(0, 0) for _ in audit_detectors]
    trials_done = 0
    bits_per_round = M * n_sets

    def merge(batch_args, results):
        nonlocal acc, audit_acc
        for (set_idx, _), (counts, audit) in zip(batch_args, results):
            row = acc[set_idx]
            for d in range(n_det):
                e, a, p = counts[d]
                oe, oa, op = row[d]
                row[d] = (oe + e, oa + a, op + p)
            if audit is not None:
                audit_acc = [
                    (m + am, v + av)
                    for (m, v), (am, av) in zip(audit_acc, audit)
                ]

    def pooled():
        bits = trials_done * bits_per_round
        errs = tuple(
            sum(acc[s][d][0] for s in range(n_sets)) for d in range(n_det)
        )
        return bits, errs

    pool = None
    try:
        if workers > 1:
            pool = multiprocessing.Pool(
                workers, initializer=_worker_init, initargs=(ctx,)
            )
        while True:
            bits, errs = pooled()
            n = _next_batch_trials(
                config.min_bit_errors, config.max_bits, bits_per_round,
                trials_done, bits, errs,
            )
            if n == 0:
                break
            batch_args = [
                (s, t)
                for t in range(trials_done, trials_done + n)
                for s in range(n_sets)
            ]
            if pool is not None:
                chunk = max(1, len(batch_args) // (workers * 4))
                results = pool.map(_worker_trial, batch_args, chunksize=chunk)
            else:
                results = [_run_trial(ctx, s, t) for s, t in batch_args]
            merge(batch_args, results)
            trials_done += n
            if config.min_bit_errors > 0:
                _, errs = pooled()
                if all(e >= config.min_bit_errors for e in errs):
                    break
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    _, errs = pooled()
    censored = config.min_bit_errors > 0 and any(
        e < config.min_bit_errors for e in errs
    )
    return _point_rows(config, ctx, n_sets, per_tx, acc, audit_acc,
                       trials_done, censored)


def run_experiment(config, workers=1, matrices=None):
    """Run one experiment (all its SNR points) and return BerEstimate rows.

    matrices, when given, injects fixed spreading matrices (overriding the
    sequence-set policy); they must match the configured geometry.
    """
    config.validate()
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    rows = []
    for snr in config.snr_points():
        rows.extend(_run_point(config, snr, workers, matrices))
    return rows


def sweep_bk(config, bk_list, workers=1):
    """One point per total bit count M; infeasible points are collected, not
    fatal.  Each point derives its substreams from its own parameters."""
    rows, failures = [], []
    for M in bk_list:
        try:
            rows.extend(run_experiment(replace(config, M=int(M)), workers))
        except InfeasibleError as e:
            failures.append((f"M={M}", e))
    return SweepResult(rows, failures)


def sweep_l(config, l_list, workers=1):
    """One point per nonzero-chip count (entries may be ints or "dense")."""
    rows, failures = [], []
    for L in l_list:
        L = L if L == "dense" else int(L)
        try:
            rows.extend(run_experiment(replace(config, L=L), workers))
        except InfeasibleError as e:
            failures.append((f"L={L}", e))
    return SweepResult(rows, failures)


def sweep_snr(config, snr_list, workers=1):
    """One point per SNR value (dB)."""
    rows, failures = [], []
    for snr in snr_list:
        try:
            rows.extend(run_experiment(replace(config, snr_db=float(snr)), workers))
        except InfeasibleError as e:
            failures.append((f"snr_db={snr}", e))
    return SweepResult(rows, failures)


CSV_HEADER = (
    "experiment,detector,M,C,L,alpha_req,alpha_eff,snr_db,seq_set,"
    "bits,errors,ber,ci_low,ci_high,adds_per_bit,passes_mean,censored"
)


def _format_row(e):
    return ",".join(
        (
            e.experiment,
            e.detector,
            str(e.M),
            str(e.C),
            str(e.L),
            f"{e.alpha_req:.6g}",
            f"{e.alpha_eff:.6g}",
            f"{e.snr_db:g}",
            e.seq_set,
            str(e.bits),
            str(e.errors),
            f"{e.ber:.6e}",
            f"{e.ci_low:.6e}",
            f"{e.ci_high:.6e}",
            f"{e.adds_per_bit:.4f}",
            f"{e.passes_mean:.4f}",
            "1" if e.censored else "0",
        )
    )


def write_csv(rows, fp):
    """Emit estimate rows in the fixed CSV schema (fixed-precision floats,
    so identical results give identical bytes)."""
    if isinstance(fp, (str, Path)):
        with open(fp, "w") as f:
            write_csv(rows, f)
        return
    fp.write(CSV_HEADER + "\n")
    for e in rows:
        fp.write(_format_row(e) + "\n")
