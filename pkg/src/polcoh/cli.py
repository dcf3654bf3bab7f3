"""Command-line entry point ``polcoh``.

Subcommands
-----------
simulate       run ensembles for the given pump ratios; archive + report.csv + g1.csv
sweep          the same over every ratio in the config, archives optional
coherence-map  coherence over a (|alpha0|^2, nbar) grid
husimi-fit     quadrature stream or histogram -> histogram.csv + fit.csv
gen            write a synthetic quadrature stream

Exit codes: 0 success, 1 configuration or input error, 2 runtime or numerical
error, 3 insufficient data.
"""

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__, fitting, homodyne, observables
from .coherence import coherence_value
from .config import load_config, preset_path
from .errors import ConfigError, InsufficientDataError, PolcohError, TWAValidityWarning
from .twa import archive
from .twa.engine import run_ensemble

log = logging.getLogger("polcoh")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DATA = 0, 1, 2, 3


class StageError(Exception):
    """Wraps an error with the pipeline stage it came from."""

    def __init__(self, stage, exc):
        self.stage = stage
        self.exc = exc
        super().__init__(f"[{stage}] {exc}")


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)
        return self

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return EXIT_CONFIG
    if isinstance(exc, InsufficientDataError):
        return EXIT_DATA
    return EXIT_RUNTIME


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar(path, title, csv_name, x, series, **extra):
    """Plot description: which CSV columns to draw and how to label them."""
    _write_json(path, {"title": title, "data": csv_name, "x": x, "series": series, **extra})


def _load(args):
    # the engine repeats the TWA validity warning when a run starts
    with _Stage("config"), warnings.catch_warnings():
        warnings.simplefilter("ignore", TWAValidityWarning)
        cfg_path = args.config
        if cfg_path in ("desk", "paper"):
            cfg_path = preset_path(cfg_path)
        return load_config(cfg_path)


def _out_dir(args, cfg):
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _ratio_tag(r):
    return f"{r:g}".replace(".", "p")


def _simulate(args, ratios, write_archive):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    seed = cfg.trajectory.seed if args.seed is None else args.seed
    window = observables.KSpaceWindow(cfg.window_side)
    reports, curves = [], []
    for k, ratio in enumerate(ratios):
        with _Stage(f"simulate pump[{k}]={ratio:g}"):
            traj = cfg.trajectory_for(ratio, seed)
            ens = run_ensemble(traj, cfg.params, cfg.pump(ratio), cfg.grid,
                               threads=args.threads, batch_size=cfg.batch_size)
        if write_archive:
            with _Stage("write"):
                archive.write_ensemble(os.path.join(out, f"ensemble_p{_ratio_tag(ratio)}.pcz"), ens)
        with _Stage(f"report pump[{k}]={ratio:g}"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = observables.coherence_report(ens, window, cfg.grid, ratio)
            curve = observables.g1_spatial(ens, cfg.grid, cfg.g1_center, cfg.g1_distances)
        reports.append(rep)
        curves.append((ratio, curve))
        flag = " (clamped)" if rep.out_of_model else ""
        print(f"pump {ratio:g} P_thr: <n_c> = {rep.mean_n_c:.4g} +- {rep.err_mean_n_c:.2g}, "
              f"g2 = {rep.g2:.4f} +- {rep.err_g2:.2g}, C = {rep.coherence_C:.4f} +- {rep.err_C:.2g}{flag}")
        del ens
    with _Stage("write"):
        observables.write_report_csv(os.path.join(out, "report.csv"), reports)
        observables.write_g1_csv(os.path.join(out, "g1.csv"), curves)
        _sidecar(os.path.join(out, "report.plot.json"), "Condensate statistics vs pump", "report.csv",
                 {"column": "pump_ratio", "label": "P0 / P_thr"},
                 [{"column": c, "error": f"err_{c}" if c != "coherence_C" else "err_C", "label": lab}
                  for c, lab in [("mean_n_c", "<n_c>"), ("var_n_c", "<(dn_c)^2>"),
                                 ("g2", "g2(0)"), ("coherence_C", "C")]])
        _sidecar(os.path.join(out, "g1.plot.json"), "First-order coherence vs distance", "g1.csv",
                 {"column": "distance", "label": "distance (um)"},
                 [{"column": "g1", "error": "err", "label": "|g1|", "group_by": "pump_ratio"}])
    return EXIT_OK


def cmd_simulate(args):
    cfg_ratios = args.pump
    if not cfg_ratios:
        cfg_ratios = _load(args).pump_ratios
    return _simulate(args, cfg_ratios, not args.no_archive)


def cmd_sweep(args):
    ratios = args.pump or _load(args).pump_ratios
    return _simulate(args, ratios, args.archive)


def cmd_coherence_map(args):
    if args.nbar_max < 0 or args.alpha_max < 0 or args.resolution < 2:
        raise StageError("config", ConfigError("coherence-map", "ranges must be >= 0 and resolution >= 2"))
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    nb = np.linspace(0.0, args.nbar_max, args.resolution)
    a = np.linspace(0.0, args.alpha_max, args.resolution)
    grid = coherence_value(a[None, :], nb[:, None])
    path = os.path.join(out, "coherence_map.csv")
    with open(path, "w") as fh:
        fh.write("nbar,alpha0_sq,C\n")
        for i, n in enumerate(nb):
            for j, x in enumerate(a):
                fh.write(f"{float(n)!r},{float(x)!r},{float(grid[i, j])!r}\n")
    _sidecar(os.path.join(out, "coherence_map.plot.json"), "Coherence of displaced thermal states",
             "coherence_map.csv", {"column": "alpha0_sq", "label": "|alpha0|^2"},
             [{"column": "C", "label": "C"}], y={"column": "nbar", "label": "nbar"}, kind="heatmap")
    print(f"wrote {path} ({args.resolution} x {args.resolution})")
    return EXIT_OK


def _is_histogram_csv(path):
    if not str(path).lower().endswith(".csv"):
        return False
    with open(path) as fh:
        return fh.readline().strip() == ",".join(homodyne.HISTOGRAM_COLUMNS)


def _fit_hist(hist, hom, resamples, seed, threads):
    with _Stage("fit"):
        fit = fitting.fit_displaced_thermal(hist, weights=hom["weights"])
    with _Stage("propagate"):
        fit = fitting.propagate_errors_mc(hist, fit, resamples, seed=seed, threads=threads,
                                          weights=hom["weights"])
    return fit


def cmd_husimi_fit(args):
    cfg = _load(args)
    hom = dict(cfg.homodyne)
    if args.bin_width is not None:
        hom["bin_width"] = args.bin_width
    if args.resamples is not None:
        hom["resamples"] = args.resamples
    if args.window_size is not None:
        hom["window_size"] = args.window_size
    if not hom["bin_width"] > 0:
        raise StageError("config", ConfigError("homodyne.bin_width", "must be positive"))
    if hom["resamples"] < 2:
        raise StageError("config", ConfigError("homodyne.resamples", "must be >= 2"))
    seed = cfg.trajectory.seed if args.seed is None else args.seed
    extent = hom["extent"] or None
    with _Stage("ingest"):
        if not os.path.isfile(args.input):
            raise FileNotFoundError(f"input file not found: {args.input}")
        is_hist = _is_histogram_csv(args.input)
        if is_hist:
            hist = homodyne.read_histogram_csv(args.input)
        else:
            stream = homodyne.read_stream(args.input)
    out = _out_dir(args, cfg)
    rows = []
    if is_hist:
        if args.bistable:
            raise StageError("ingest", ConfigError("--bistable", "needs a quadrature stream, not a histogram"))
        rows.append(("all", _fit_hist(hist, hom, hom["resamples"], seed, args.threads)))
    else:
        with _Stage("preprocess"):
            stream = homodyne.preprocess(stream)
        with _Stage("postselect"):
            pts = homodyne.postselect_orthogonal(stream, hom["margin"], hom["smoothing"], hom["reference"])
            print(f"postselected {pts.q.size} of {len(stream)} records (retention {pts.retention:.4f})")
        groups = [("all", pts)]
        if args.bistable:
            with _Stage("segment"):
                stats = homodyne.photon_stats_timeseries(pts, hom["window_size"])
                seg = homodyne.segment_bistable(stats.mean_n)
                groups = [(lab, homodyne.points_for_label(pts, stats, seg, lab)) for lab in ("high", "low")]
            with _Stage("write"):
                path = os.path.join(out, "timeseries.csv")
                with open(path, "w") as fh:
                    fh.write("t,mean_n,err_mean_n,g2,label\n")
                    for t, n, e, g, lab in zip(stats.t, stats.mean_n, stats.err_mean_n, stats.g2, seg.labels):
                        fh.write(f"{float(t)!r},{float(n)!r},{float(e)!r},{float(g)!r},{lab}\n")
                _sidecar(os.path.join(out, "timeseries.plot.json"), "Time-resolved photon statistics",
                         "timeseries.csv", {"column": "t", "label": "time (ps)"},
                         [{"column": "mean_n", "error": "err_mean_n", "label": "<n>"},
                          {"column": "g2", "label": "g2(0, t)"}],
                         threshold_n=seg.threshold_n)
                print(f"bistable threshold <n> = {seg.threshold_n:.4g}")
        for lab, sel in groups:
            with _Stage("histogram"):
                hist = homodyne.build_husimi_histogram(sel, hom["bin_width"], extent)
            name = "histogram.csv" if lab == "all" else f"histogram_{lab}.csv"
            with _Stage("write"):
                homodyne.write_histogram_csv(os.path.join(out, name), hist)
            rows.append((lab, _fit_hist(hist, hom, hom["resamples"], seed, args.threads)))
    with _Stage("write"):
        fitting.write_fit_csv(os.path.join(out, "fit.csv"), rows)
    for lab, f in rows:
        print(f"{lab}: nbar = {f.nbar:.4f} +- {f.err_nbar:.2g}, |alpha0|^2 = {f.alpha0_sq:.4f} +- "
              f"{f.err_alpha0_sq:.2g}, g2 = {f.g2:.4f}, C = {f.coherence_C:.4f} +- {f.err_C:.2g}")
    return EXIT_OK


def cmd_gen(args):
    cfg = _load(args)
    g = cfg.generator
    seed = cfg.trajectory.seed if args.seed is None else args.seed
    high, low = cfg.generator_states()
    n = args.samples or g["n_samples"]
    with _Stage("generate"):
        stream = homodyne.synth_homodyne_stream(
            high, low if args.bistable else None,
            switching_period=g["switching_period"] if args.bistable else None,
            phase_coherence_time=g["phase_coherence_time"],
            sweep_period=g["sweep_period"] or None, n_samples=n, seed=seed, lo_scale=g["lo_scale"],
        )
    with _Stage("write"):
        d = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(d, exist_ok=True)
        homodyne.write_stream(args.out, stream)
    print(f"wrote {len(stream)} records to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="polcoh", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"polcoh {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, pump=False):
        sp.add_argument("--config", default=None,
                        help="TOML config file, or 'desk'/'paper' for a shipped preset (default: desk values)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (default: config output.dir)")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: hardware parallelism)")
        if pump:
            sp.add_argument("--pump", type=float, action="append", default=None,
                            help="pump ratio P0/P_thr; repeatable (default: config list)")

    sp = sub.add_parser("simulate", help="run TWA ensembles and write archives and report.csv")
    common(sp, pump=True)
    sp.add_argument("--no-archive", action="store_true", help="skip writing ensemble archives")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run the config's pump sweep (report.csv, g1.csv)")
    common(sp, pump=True)
    sp.add_argument("--archive", action="store_true", help="also write ensemble archives")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("coherence-map", help="coherence over a (|alpha0|^2, nbar) grid")
    sp.add_argument("--nbar-max", type=float, default=10.0)
    sp.add_argument("--alpha-max", type=float, default=10.0, help="largest |alpha0|^2")
    sp.add_argument("--resolution", type=int, default=101)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_coherence_map)

    sp = sub.add_parser("husimi-fit", help="histogram and fit a quadrature stream or histogram CSV")
    sp.add_argument("input", help="stream (.csv with t,x1,x2 or binary container) or histogram CSV")
    common(sp)
    sp.add_argument("--bistable", action="store_true", help="segment high/low states and fit each")
    sp.add_argument("--bin-width", type=float, default=None)
    sp.add_argument("--resamples", type=int, default=None)
    sp.add_argument("--window-size", type=int, default=None, help="postselected points per window")
    sp.set_defaults(func=cmd_husimi_fit)

    sp = sub.add_parser("gen", help="write a synthetic quadrature stream")
    sp.add_argument("--config", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True, help="output file (.csv or binary)")
    sp.add_argument("--bistable", action="store_true", help="alternate between the high and low states")
    sp.add_argument("--samples", type=int, default=None, help="number of records (default: config)")
    sp.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as err:
        print(f"polcoh: error [{err.stage}]: {err.exc}", file=sys.stderr)
        return _exit_code(err.exc)
    except PolcohError as err:
        print(f"polcoh: error: {err}", file=sys.stderr)
        return _exit_code(err)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
