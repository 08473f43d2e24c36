"""Command-line front end.

    hsps run-counting --config run.toml [--seed N] [--pulses N] [--out DIR] [--workers N]
    hsps run-homodyne --config run.toml [--seed N] [--pulses N] [--out DIR]
    hsps analyze --vacuum vacuum.csv --heralded heralded.csv [--bins N] [--out DIR]
    hsps report summary.json fit.json [--out DIR]

Exit codes: 0 success, 2 config / usage error, 3 I/O error, 4 estimator undefined.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, counting, rng
from . import io as hio
from .analysis import (HERALDED_RUN, VACUUM_RUN, analyze_peaks, efficiency_budget,
                       eta_from_variance_db, fit_mixture_eta_histogram,
                       mixture_bin_masses, simulate_peaks)
from .config import ConfigError, load_config
from .errors import EstimatorUndefinedError
from .homodyne import (FockMixture, QuadratureDataset, heralded_fock_mixture,
                       response_kernel, sample_quadratures, synthesize_waveform)

log = logging.getLogger("hsps")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_UNDEFINED = 0, 2, 3, 4

N_JACKKNIFE_BLOCKS = 20


class InputError(OSError):
    """Missing or unreadable input artifact."""


def _out_dir(args, cfg=None):
    out = args.out or (cfg.output_dir if cfg is not None else None) or "."
    hio.ensure_dir(out)
    return out


def _safe(fn, *a):
    try:
        return fn(*a)
    except EstimatorUndefinedError:
        return None


def _jackknife(blocks, fn):
    try:
        return counting.jackknife_stderr(blocks, fn)
    except (EstimatorUndefinedError, ValueError):
        return None


# ---------------------------------------------------------------------------
# run-counting

def _estimators(rec, det):
    g2s = _safe(counting.g2_unheralded, rec)
    return {
        "coincidence_ratio": _safe(counting.coincidence_ratio, rec),
        "heralding_efficiency": _safe(counting.heralding_efficiency, rec, det.eta_spd),
        "g2_heralded": _safe(counting.g2_heralded, rec),
        "g2_unheralded": g2s,
        "mode_number": None if g2s is None else _safe(counting.mode_number, g2s),
    }


def _mode_number_of(rec):
    return counting.mode_number(counting.g2_unheralded(rec))


def _pump_fit(cfg, workers, prov, out):
    sw = cfg.pump_sweep
    points = counting.pump_sweep(cfg.source, cfg.detector, sw.pump_levels, sw.n_pulses,
                                 cfg.seed, workers=workers)
    hio.write_csv(os.path.join(out, "pump_sweep.csv"), ["P_a", "herald_probability"], points, prov)
    fit = counting.fit_pump_quadratic(points)
    c, s1_f, se_c, se_s1, chi2 = counting.fit_pump_with_floor(points, sw.n_pulses)
    eff = cfg.detector.herald_efficiency
    return {
        "s1_detected": fit.s1,
        "s1": fit.s1 / eff,
        "s1_generating": cfg.source.s1,
        "herald_efficiency": eff,
        "residual_rms": fit.residual_rms,
        "floor": c,
        "floor_stderr": se_c,
        "floor_fit_s1_detected": s1_f,
        "floor_fit_s1_stderr": se_s1,
        "floor_fit_chi2": chi2,
        "floor_fit_dof": len(points) - 2,
        "n_points": fit.n_points,
    }


def cmd_run_counting(args):
    cfg = load_config(args.config, seed=args.seed, n_pulses=args.pulses)
    out = _out_dir(args, cfg)
    prov = hio.provenance(cfg.seed, cfg.config_hash())
    src, det = cfg.source, cfg.detector
    log.info("counting: %d pulses, mu=%.6g, K=%.4f", cfg.n_pulses, src.mu, src.K)
    blocks = counting.run_counting_blocks(src, det, cfg.n_pulses, cfg.seed,
                                          n_blocks=N_JACKKNIFE_BLOCKS, workers=args.workers)
    total = blocks[0]
    for b in blocks[1:]:
        total = total + b
    hio.write_csv(os.path.join(out, "counts.csv"), total.csv_header(), [total.csv_row()], prov)
    hio.write_csv(os.path.join(out, "counts_blocks.csv"), ("block", *total.csv_header()),
                  [(i, *b.csv_row()) for i, b in enumerate(blocks)], prov)

    est = _estimators(total, det)
    summary = {"provenance": prov, "n_pulses": total.n_pulses,
               "herald_rate_hz": total.herald_rate,
               "coincidence_rate_hz": total.coincidence_rate}
    summary.update(est)
    summary["stderr"] = {
        "coincidence_ratio": _jackknife(blocks, counting.coincidence_ratio),
        "heralding_efficiency": _jackknife(blocks, lambda r: counting.coincidence_ratio(r) / det.eta_spd),
        "g2_heralded": _jackknife(blocks, counting.g2_heralded),
        "g2_unheralded": _jackknife(blocks, counting.g2_unheralded),
        "mode_number": _jackknife(blocks, _mode_number_of),
    }
    summary["source"] = {"mu": src.mu, "P_a": src.P_a, "s1": src.s1, "K": src.K,
                         "schmidt_weights": list(src.schmidt_weights)}
    summary["predicted_herald_rate_hz"] = counting.herald_probability(src, det) * src.f_p
    summary["counts"] = total.to_dict()
    if cfg.pump_sweep is not None:
        summary["pump_fit"] = _pump_fit(cfg, args.workers, prov, out)
    hio.write_json(os.path.join(out, "summary.json"), summary)
    log.info("wrote %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# run-homodyne / analyze

def _state(cfg):
    h = cfg.homodyne
    if h.mixture is not None:
        return FockMixture(h.mixture)
    if h.eta_total is None:
        raise ConfigError("homodyne.eta_total: required for run-homodyne (or give homodyne.mixture)")
    if h.eta_total == 0:
        return FockMixture.vacuum()
    return heralded_fock_mixture(cfg.source, cfg.detector, h.eta_total, cutoff=h.cutoff)


def _fit_report(res, prov, settings=None):
    fit = res.fit
    eta_hist, _ = fit_mixture_eta_histogram(res.histogram)
    rep = {
        "eta": fit.eta,
        "stderr_eta": fit.stderr_eta,
        "stderr_eta_total": res.stderr_eta_total,
        "log_likelihood": fit.log_likelihood,
        "variance_db": res.variance_db,
        "variance_db_model": 10.0 * math.log10(1.0 + 2.0 * fit.eta),
        "eta_from_variance": eta_from_variance_db(res.variance_db),
        "chi2": res.gof.chi2,
        "dof": res.gof.dof,
        "p_value": res.gof.p_value,
        "n_samples": fit.n_samples,
        "seed": prov["seed"],
        "converged": fit.converged,
        "scale_gain": res.scale_gain,
        "eta_histogram_fit": eta_hist,
    }
    if settings is not None and None not in (settings.eta_h, settings.eta_hd, settings.eta_t) and fit.eta > 0:
        rep["mode_match"] = efficiency_budget(fit.eta, settings.eta_h, settings.eta_hd, settings.eta_t)
    rep["provenance"] = prov
    return rep


def _write_analysis(out, res, prov, settings=None):
    h = res.histogram
    masses = mixture_bin_masses(h.bin_edges, res.fit.eta)
    rows = zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts, masses)
    hio.write_csv(os.path.join(out, "histogram.csv"), ["bin_left", "bin_right", "count", "model_mass"],
                  rows, prov)
    rep = _fit_report(res, prov, settings)
    hio.write_json(os.path.join(out, "fit.json"), rep)
    return rep


def cmd_run_homodyne(args):
    cfg = load_config(args.config, seed=args.seed)
    if args.pulses is not None:
        if args.pulses < 100:
            raise ConfigError("--pulses: need at least 100 records")
        cfg = replace(cfg, homodyne=replace(cfg.homodyne, n_records=args.pulses))
    out = _out_dir(args, cfg)
    p = cfg.pulse_shape
    p.check_resolution()
    mix = _state(cfg)
    n = cfg.homodyne.n_records
    prov = hio.provenance(cfg.seed, cfg.config_hash())
    log.info("homodyne: %d records, p = %s", n, np.round(mix.probs[:4], 5).tolist())
    seed_v = rng.derive_seed(cfg.seed, VACUUM_RUN)
    seed_h = rng.derive_seed(cfg.seed, HERALDED_RUN)
    vac_raw = simulate_peaks(FockMixture.vacuum(), p, n, seed_v, cfg.homodyne.phase)
    her_raw = simulate_peaks(mix, p, n, seed_h, cfg.homodyne.phase)
    res = analyze_peaks(vac_raw, her_raw, cfg.analysis.n_bins)

    hio.write_quadratures(os.path.join(out, "vacuum.csv"),
                          QuadratureDataset(res.vacuum, "vacuum", res.scale_gain), prov)
    hio.write_quadratures(os.path.join(out, "heralded.csv"),
                          QuadratureDataset(res.heralded, "heralded", res.scale_gain), prov)
    rep = _write_analysis(out, res, prov, cfg.analysis)

    t = p.time_ns
    hio.write_csv(os.path.join(out, "kernel.csv"), ["t_ns", "volts"],
                  zip(t, p.gain * response_kernel(t, p)), prov)
    # first heralded record, same draws as the one that went into the dataset
    x0 = sample_quadratures(mix, cfg.homodyne.phase, 0, 1, seed_h)[0]
    t, w = synthesize_waveform(x0, p, 0, seed_h)
    hio.write_csv(os.path.join(out, "waveform_example.csv"), ["t_ns", "volts"], zip(t, w),
                  dict(prov, quadrature=repr(float(x0))))
    hio.write_json(os.path.join(out, "state.json"),
                   {"probs": list(mix.probs), "eta_total": cfg.homodyne.eta_total, "provenance": prov})
    log.info("eta = %.4f +- %.4f, variance %.3f dB", rep["eta"], rep["stderr_eta_total"], rep["variance_db"])
    return EXIT_OK


def _read_dataset(path):
    try:
        return hio.read_quadratures(path)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None


def cmd_analyze(args):
    vac, pv = _read_dataset(args.vacuum)
    her, ph = _read_dataset(args.heralded)
    if vac.label != "vacuum" or her.label != "heralded":
        log.warning("dataset labels are %r / %r", vac.label, her.label)
    out = _out_dir(args)
    seed = ph.get("seed")
    if pv.get("seed") != seed:
        log.warning("vacuum and heralded datasets come from different seeds")
    prov = hio.provenance(_as_int(seed), ph.get("config_sha256"),
                          vacuum_seed=_as_int(pv.get("seed")), source="analyze")
    res = analyze_peaks(vac.values, her.values, args.bins)
    _write_analysis(out, res, prov)
    return EXIT_OK


def _as_int(v):
    try:
        return int(v)
    except (TypeError, ValueError):
        return v


# ---------------------------------------------------------------------------
# report

# (label, kind, key, published value, published text, check, selection).
# Heralding figures depend on the channel configuration and come from the
# first input of their kind; the source-only g2_s / M_s rows take the most
# precise input, so a dedicated high-statistics run can supply them.
REPORT_ROWS = (
    ("C_c/R_h", "counting", "coincidence_ratio", 0.40, "about 0.4", ("abs", 0.40, 0.02), "first"),
    ("eta_h", "counting", "heralding_efficiency", 0.50, "~50%", ("abs", 0.50, 0.02), "first"),
    ("g2_h", "counting", "g2_heralded", 0.07, "0.07 +- 0.006", ("band", 0.03, 0.12), "first"),
    ("g2_s", "counting", "g2_unheralded", 1.75, "1.75", ("abs", 1.75, 0.03), "precise"),
    ("M_s", "counting", "mode_number", 1.3, "~1.3", ("abs", 1.33, 0.05), "precise"),
    ("eta", "homodyne", "eta", 0.192, "19.2%", ("abs", 0.192, 0.03), "first"),
    ("variance_db", "homodyne", "variance_db", 1.2, "1.2 dB", ("gap", 1.41, 0.15), "first"),
)


def _kind(doc):
    if "coincidence_ratio" in doc and "counts" in doc:
        return "counting"
    if "eta" in doc and "log_likelihood" in doc:
        return "homodyne"
    return None


def _check(value, check):
    mode, a, b = check
    if value is None:
        return "n/a", ""
    if mode == "band":
        return ("PASS" if a <= value <= b else "FAIL"), f"[{a}, {b}]"
    ok = abs(value - a) <= b
    if mode == "gap":
        return f"model gap ({'model ok' if ok else 'model off'})", f"{a} +- {b} (model)"
    return ("PASS" if ok else "FAIL"), f"{a} +- {b}"


def _stderr(doc, key):
    if key == "eta":
        return doc.get("stderr_eta_total", doc.get("stderr_eta"))
    return (doc.get("stderr") or {}).get(key)


def _pick(candidates, key, selection):
    """``(path, value, stderr)`` for `key`: the first input that has it, or
    for ``"precise"`` the one with the smallest stderr (ties keep argument
    order, inputs without a stderr rank last)."""
    if selection == "first":
        for path, doc in candidates:
            if doc.get(key) is not None:
                return path, doc[key], _stderr(doc, key)
        return None, None, None
    best = (None, None, None)
    rank = math.inf
    for path, doc in candidates:
        value = doc.get(key)
        if value is None:
            continue
        err = _stderr(doc, key)
        r = err if err is not None else math.inf
        if best[0] is None or r < rank:
            best, rank = (path, value, err), r
    return best


def build_report(docs):
    """`docs` is a list of ``(path, parsed JSON)``.  Returns the report dict."""
    by_kind, seeds = {}, {}
    for path, doc in docs:
        kind = _kind(doc)
        if kind is None:
            raise InputError(f"{path}: neither a counting summary nor a fit report")
        by_kind.setdefault(kind, []).append((path, doc))
        seeds[path] = (doc.get("provenance") or {}).get("seed", doc.get("seed"))
    rows = []
    for label, kind, key, paper, text, check, selection in REPORT_ROWS:
        path, value, err = _pick(by_kind.get(kind, []), key, selection)
        status, target = _check(value, check)
        rows.append({"quantity": label, "simulated": value, "stderr": err, "paper": paper,
                     "paper_text": text, "target": target, "status": status, "source": path})
    consistent = len(set(map(str, seeds.values()))) <= 1
    return {"rows": rows, "seeds": seeds, "provenance_consistent": consistent}


def format_report(rep):
    lines = [f"{'quantity':<12} {'simulated':>10} {'stderr':>8} {'paper':>14}  {'target':<20} status"]
    for r in rep["rows"]:
        v = "-" if r["simulated"] is None else f"{r['simulated']:.4f}"
        e = "-" if r["stderr"] is None else f"{r['stderr']:.4f}"
        lines.append(f"{r['quantity']:<12} {v:>10} {e:>8} {r['paper_text']:>14}  {r['target']:<20} {r['status']}")
    if not rep["provenance_consistent"]:
        lines.append("WARNING: provenance mismatch, inputs come from different seeds:")
        for path, s in rep["seeds"].items():
            lines.append(f"  {path}: seed {s}")
    return "\n".join(lines) + "\n"


def cmd_report(args):
    docs = []
    for path in args.paths:
        try:
            docs.append((path, hio.read_json(path)))
        except (OSError, ValueError) as exc:
            raise InputError(str(exc)) from None
    rep = build_report(docs)
    text = format_report(rep)
    sys.stdout.write(text)
    if args.out:
        hio.ensure_dir(args.out)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
        hio.write_json(os.path.join(args.out, "report.json"), rep)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="hsps", description="Heralded single-photon source simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_args(p, pulses_help):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--pulses", type=int, help=pulses_help)
        p.add_argument("--out", help="output directory (default: config output_dir, else .)")
        p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")

    p = sub.add_parser("run-counting", help="photon-counting simulation and estimators")
    run_args(p, "override n_pulses")
    p.set_defaults(func=cmd_run_counting)
    p = sub.add_parser("run-homodyne", help="homodyne simulation and mixture fit")
    run_args(p, "override homodyne.n_records")
    p.set_defaults(func=cmd_run_homodyne)
    p = sub.add_parser("analyze", help="re-fit existing quadrature datasets")
    p.add_argument("--vacuum", required=True, help="vacuum quadrature CSV")
    p.add_argument("--heralded", required=True, help="heralded quadrature CSV")
    p.add_argument("--bins", type=int, default=80, help="histogram bins (default 80)")
    p.add_argument("--out", help="output directory for fit.json and histogram.csv (default .)")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("report", help="compare run outputs with the published values")
    p.add_argument("paths", nargs="+", help="summary.json and/or fit.json files")
    p.add_argument("--out", help="write report.txt and report.json here")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("hsps: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hsps: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimatorUndefinedError as exc:
        print(f"hsps: estimator undefined: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except OSError as exc:
        print(f"hsps: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
