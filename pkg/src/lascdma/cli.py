"""Command-line front end: presets, config files, CSV emission.

Config files are flat UTF-8 `key = value` lines with `#` comments.  The
preset subcommands are just built-in config mappings, so `--set KEY=VALUE`
overrides apply uniformly and `--dump-config` writes the effective config
for exact replay with `run`.
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import detect, seqgen
from .channel import ChannelParams, matched_filter, snr_to_sigma, transmit
from .harness import (
    ConfigError,
    ExperimentConfig,
    InfeasibleError,
    run_experiment,
    sweep_bk,
    sweep_l,
    sweep_snr,
    write_csv,
)

_CONFIG_KEYS = (
    "experiment", "M", "alpha", "L", "snr_db", "detectors", "seed",
    "min_bit_errors", "max_bits", "seq_sets", "n_prime", "max_passes",
    "amplitude", "sweep", "bk_list", "l_list",
)

_PRESETS = {
    # BER and additions/bit versus total bit count, one curve per L
    "fig1": {
        "experiment": "fig1", "alpha": "0.8", "snr_db": "11", "M": "1024",
        "detectors": "MF,SLAS", "sweep": "bk",
        "bk_list": "64,128,256,512,1024", "l_list": "4,8,16,dense",
    },
    # BER and additions/bit versus nonzero-chip count at M = 1024
    "fig2": {
        "experiment": "fig2", "alpha": "0.8", "snr_db": "11", "M": "1024",
        "detectors": "MF,SLAS", "sweep": "l", "l_list": "4,8,16,dense",
    },
    # BER versus SNR at M = 1024, sparse (L=16) and dense reference
    "fig3": {
        "experiment": "fig3", "alpha": "0.8", "M": "1024",
        "snr_db": "2,4,6,8,10,11,12", "detectors": "MF,SLAS",
        "sweep": "snr", "l_list": "16,dense",
    },
}


def _parse_config_file(path):
    mapping = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        mapping[key] = value
    return mapping


def _parse_int(key, s):
    try:
        v = int(float(s)) if ("e" in s.lower() or "." in s) else int(s)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {s!r}")
    return v


def _parse_l_value(s):
    s = s.strip()
    if s == "dense":
        return "dense"
    return _parse_int("L", s)


def _parse_snr(s):
    try:
        return tuple(float(tok) for tok in s.split(","))
    except ValueError:
        raise ConfigError(f"snr_db: expected numbers, got {s!r}")


def _config_from_mapping(mapping):
    """Build (ExperimentConfig, sweep kind, bk_list, l_list) from raw strings."""
    unknown = sorted(set(mapping) - set(_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    m = dict(mapping)
    kwargs = {}
    if "experiment" in m:
        kwargs["experiment"] = m["experiment"]
    if "M" not in m:
        raise ConfigError("config requires M")
    kwargs["M"] = _parse_int("M", m["M"])
    if "alpha" not in m:
        raise ConfigError("config requires alpha")
    try:
        kwargs["alpha"] = float(m["alpha"])
    except ValueError:
        raise ConfigError(f"alpha: expected a number, got {m['alpha']!r}")
    if "L" in m:
        kwargs["L"] = _parse_l_value(m["L"])
    if "snr_db" in m:
        snrs = _parse_snr(m["snr_db"])
        kwargs["snr_db"] = snrs[0] if len(snrs) == 1 else snrs
    if "detectors" in m:
        kwargs["detectors"] = tuple(
            tok.strip().upper() for tok in m["detectors"].split(",") if tok.strip()
        )
    for key in ("seed", "min_bit_errors", "max_bits", "n_prime", "max_passes"):
        if key in m:
            kwargs[key] = _parse_int(key, m[key])
    if "amplitude" in m:
        try:
            kwargs["amplitude"] = float(m["amplitude"])
        except ValueError:
            raise ConfigError(f"amplitude: expected a number")
    if "seq_sets" in m:
        v = m["seq_sets"].strip()
        kwargs["seq_sets"] = v if v in ("auto", "per_tx") else _parse_int("seq_sets", v)

    sweep = m.get("sweep", "none").strip()
    if sweep not in ("none", "bk", "l", "snr"):
        raise ConfigError(f"sweep must be one of none/bk/l/snr, got {sweep!r}")
    bk_list = None
    if "bk_list" in m:
        bk_list = tuple(_parse_int("bk_list", tok) for tok in m["bk_list"].split(","))
    l_list = None
    if "l_list" in m:
        l_list = tuple(_parse_l_value(tok) for tok in m["l_list"].split(","))
    if sweep == "bk" and bk_list is None:
        raise ConfigError("sweep=bk requires bk_list")
    if sweep == "l" and l_list is None:
        raise ConfigError("sweep=l requires l_list")
    return ExperimentConfig(**kwargs), sweep, bk_list, l_list


def _effective_mapping(config, sweep, bk_list, l_list):
    m = {
        "experiment": config.experiment,
        "M": str(config.M),
        "alpha": repr(float(config.alpha)),
        "L": str(config.L),
        "snr_db": ",".join(repr(s) for s in config.snr_points()),
        "detectors": ",".join(config.normalized_detectors()),
        "seed": str(config.seed),
        "min_bit_errors": str(config.min_bit_errors),
        "max_bits": str(config.max_bits),
        "seq_sets": str(config.seq_sets),
        "n_prime": str(config.n_prime),
        "max_passes": str(config.max_passes),
        "amplitude": repr(float(config.amplitude)),
        "sweep": sweep,
    }
    if bk_list is not None:
        m["bk_list"] = ",".join(str(v) for v in bk_list)
    if l_list is not None:
        m["l_list"] = ",".join(str(v) for v in l_list)
    return m


def _dump_config(mapping, path):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in mapping.items():
            f.write(f"{key} = {value}\n")


def _execute(config, sweep, bk_list, l_list, workers):
    rows, failures = [], []
    if sweep == "none":
        rows = run_experiment(config, workers=workers)
    elif sweep == "bk":
        for L in l_list or (config.L,):
            res = sweep_bk(replace(config, L=L), bk_list, workers=workers)
            rows.extend(res.rows)
            failures.extend((f"L={L},{lbl}", e) for lbl, e in res.failures)
    elif sweep == "l":
        res = sweep_l(config, l_list, workers=workers)
        rows.extend(res.rows)
        failures.extend(res.failures)
    else:  # snr
        for L in l_list or (config.L,):
            res = sweep_snr(replace(config, L=L), config.snr_points(),
                            workers=workers)
            rows.extend(res.rows)
            failures.extend((f"L={L},{lbl}", e) for lbl, e in res.failures)
    return rows, failures


def _print_audit(rows, out):
    for e in rows:
        if e.gml_match_rate is None:
            continue
        trials = e.bits // e.M if e.M else 0
        out.write(
            f"audit: {e.detector} vs GML over {trials} trials "
            f"(M={e.M}, L={e.L}, snr={e.snr_db:g} dB): "
            f"agreement {e.gml_match_rate:.4f}, "
            f"likelihood dominance violations {e.gml_omega_violations}\n"
        )


# ---------------------------------------------------------------------------
# selftest: quick invariant suites over randomized instances


def _random_instance(rng, M, alpha, L, snr_db, amplitude=1.0):
    C = int(round(M / alpha))
    S = seqgen.gen_sparse_matrix(C, M, L, rng)
    A = np.full(M, amplitude)
    xc = seqgen.crosscorrelation(S, A)
    b = (rng.integers(0, 2, M, dtype=np.int8) * 2 - 1).astype(np.int8)
    params = ChannelParams(A, snr_to_sigma(snr_db, amplitude))
    y = matched_filter(S, transmit(S, params, b, rng))
    return S, xc, A, b, y


def _st_gradient_accounting(rng):
    for i in range(40):
        _, xc, A, _, y = _random_instance(rng, 48, 0.8, 6, 8.0)
        b0 = detect.mf_detect(y)
        for run in (
            detect.slas_detect(y, xc, A, b0, check_gradient=True,
                               record_flips=True),
            detect.wslas_detect(y, xc, A, b0, n_prime=5, check_gradient=True,
                                record_flips=True),
        ):
            if not run.converged:
                return f"run {i} failed to converge"
            nnz_col = np.diff(xc.indptr)
            recount = sum(
                int(nnz_col[k]) for _, flipped in run.flip_log for k in flipped
            )
            if recount != run.additions:
                return f"additions {run.additions} != flip-log recount {recount}"
    return None


def _st_lml_fixed_point(rng):
    for i in range(200):
        M = 8 if i % 2 == 0 else 12
        _, xc, A, _, y = _random_instance(rng, M, 0.8, 3, 8.0)
        run = detect.slas_detect(y, xc, A, detect.mf_detect(y))
        if not run.converged:
            return f"instance {i} did not converge"
        om = detect.likelihood(run.bits, y, xc, A)
        for k in range(M):
            nb = run.bits.copy()
            nb[k] = -nb[k]
            om_k = detect.likelihood(nb, y, xc, A)
            if om_k > om + 1e-12 * (1.0 + abs(om)):
                return f"instance {i}: flipping bit {k} raises the likelihood"
    return None


def _st_oracle_dominance(rng):
    for i in range(200):
        _, xc, A, _, y = _random_instance(rng, 10, 0.5, 4, 9.0)
        run = detect.slas_detect(y, xc, A, detect.mf_detect(y))
        _, om_gml = detect.gml_exhaustive(y, xc, A)
        om = detect.likelihood(run.bits, y, xc, A)
        if om > om_gml + 1e-9 * (1.0 + abs(om_gml)):
            return f"instance {i}: fixed point beats the exhaustive optimum"
    return None


def _st_crosscorr_dense(rng):
    for i in range(20):
        C = int(rng.integers(8, 41))
        M = int(rng.integers(2, 17))
        L = int(rng.integers(1, min(C, 8) + 1))
        S = seqgen.gen_sparse_matrix(C, M, L, rng)
        xc = seqgen.crosscorrelation(S, np.full(M, 1.0))
        Sd = S.dense_matrix
        if np.max(np.abs(xc.R.toarray() - Sd.T @ Sd)) > 1e-12:
            return f"instance {i}: sparse R deviates from the dense product"
    return None


def _st_noise_free_identity(rng):
    for i in range(20):
        M = int(rng.integers(2, 33))
        C = 2 * M
        L = int(rng.integers(1, 7))
        S = seqgen.gen_sparse_matrix(C, M, L, rng)
        A = np.full(M, 1.0)
        xc = seqgen.crosscorrelation(S, A)
        b = (rng.integers(0, 2, M, dtype=np.int8) * 2 - 1).astype(np.int8)
        y = matched_filter(S, transmit(S, ChannelParams(A, 0.0), b, rng))
        ref = xc.R @ (A * b).astype(np.float64)
        if np.max(np.abs(y - ref)) > 1e-10:
            return f"instance {i}: matched filter deviates from R(Ab)"
    return None


_SELFTESTS = (
    ("gradient-and-additions-accounting", _st_gradient_accounting),
    ("fixed-point-is-local-maximum", _st_lml_fixed_point),
    ("exhaustive-oracle-dominance", _st_oracle_dominance),
    ("sparse-crosscorrelation-vs-dense", _st_crosscorr_dense),
    ("noise-free-end-to-end-identity", _st_noise_free_identity),
)


def _selftest(seed, out):
    ok = True
    for idx, (name, fn) in enumerate(_SELFTESTS):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        failure = fn(rng)
        if failure is None:
            out.write(f"selftest {name}: PASS\n")
        else:
            out.write(f"selftest {name}: FAIL ({failure})\n")
            ok = False
    return ok


# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lascdma",
        description="Monte-Carlo BER/complexity experiments for sparse-spreading "
                    "CDMA with likelihood ascent search detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="CSV output path (default <command>.csv)")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel trial workers (output is identical for any N)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--dump-config", metavar="PATH",
                        help="write the effective config for replay with `run`")

    p_run = sub.add_parser("run", parents=[common],
                           help="run an explicit config file")
    p_run.add_argument("--config", required=True, help="config file path")
    for name in ("fig1", "fig2", "fig3"):
        sub.add_parser(name, parents=[common], help=f"run the {name} preset")
    p_self = sub.add_parser("selftest", help="run the invariant suites")
    p_self.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    out = sys.stdout
    try:
        if args.command == "selftest":
            return 0 if _selftest(args.seed, out) else 1

        if args.command == "run":
            mapping = _parse_config_file(args.config)
        else:
            mapping = dict(_PRESETS[args.command])
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            mapping[key.strip()] = value.strip()
        if args.seed is not None:
            mapping["seed"] = str(args.seed)

        config, sweep, bk_list, l_list = _config_from_mapping(mapping)
        if args.dump_config:
            _dump_config(_effective_mapping(config, sweep, bk_list, l_list),
                         args.dump_config)

        rows, failures = _execute(config, sweep, bk_list, l_list, args.workers)
        out_path = args.out or f"{args.command}.csv"
        write_csv(rows, out_path)
        out.write(f"wrote {len(rows)} rows to {out_path}\n")
        _print_audit(rows, out)
        if failures:
            for label, exc in failures:
                sys.stderr.write(f"infeasible point {label}: {exc}\n")
            return 3
        return 0
    except InfeasibleError as e:
        sys.stderr.write(f"infeasible configuration: {e}\n")
        return 3
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
