"""Command-line runner: ``run``, ``sweep``, ``cost`` and ``oracle`` subcommands."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .ansatz import AnsatzKind, ConfigError, init_state
from .config import RunConfig, load
from .eom import run_steps
from .estimator import TABLE1_CLASSES, count_circuits
from .oracle import COLUMNS, MetricsObserver, certify_oracle, integrate_exact, observables, purity
from .paulis import build_tfim, liouvillian_expand
from .statevector import basis_ket

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
WORKERS_ENV = "LRQTE_WORKERS"

log = logging.getLogger("lrqte")


def fmt(x) -> str:
    """17 significant digits; empty field for values that were not computed."""
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return format(float(x), ".17g")


class CsvSink:
    """Writes metric rows as they are produced, so a failed run leaves a readable prefix."""

    def __init__(self, path: Path, columns=COLUMNS):
        self.columns = columns
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(columns)
        self.count = 0

    def write(self, row: dict):
        self.writer.writerow([fmt(row.get(c)) for c in self.columns])
        self.fh.flush()
        self.count += 1

    def close(self):
        self.fh.close()


class _StreamingMetrics(MetricsObserver):
    def __init__(self, sink: CsvSink, *a, **kw):
        super().__init__(*a, **kw)
        self.sink = sink

    def __call__(self, t, s, rec=None):
        n = len(self.series)
        super().__call__(t, s, rec)
        if len(self.series) > n:
            self.sink.write(self.series.rows[-1])


def integrated(values, t) -> float:
    """Trapezoid time integral divided by the final time (the value itself for one sample)."""
    values, t = np.asarray(values, dtype=float), np.asarray(t, dtype=float)
    if len(t) < 2:
        return float(values[0])
    return float(np.trapezoid(values, t) / t[-1])


def _pure_initial(cfg: RunConfig) -> np.ndarray:
    v = basis_ket(cfg.initial or "1" * cfg.lattice.n)
    return np.outer(v, v.conj())


def _versions() -> dict:
    return {"lrqte": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _file_logger(path: Path) -> logging.Handler:
    h = logging.FileHandler(path, mode="w")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    h.setLevel(logging.DEBUG)
    log.addHandler(h)
    log.setLevel(logging.DEBUG)
    return h


def execute(cfg: RunConfig, out_dir: Path, stem: str = "timeseries", certify: bool = False) -> dict:
    """One variational run with CSV, manifest and log under ``out_dir``; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = _file_logger(out_dir / f"{stem}.log")
    sink = CsvSink(out_dir / f"{stem}.csv")
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.semantic_hash(),
        "seed": cfg.seed,
        "versions": _versions(),
        "basis": list(init_state(cfg).basis),
    }
    t0 = time.perf_counter()
    try:
        model = build_tfim(cfg.lattice, cfg.jz, cfg.h, cfg.gamma)
        reference = None
        if cfg.oracle:
            rho0 = _pure_initial(cfg)
            if certify:
                reference, err = certify_oracle(model, rho0, cfg.dt, cfg.t_final)
                manifest["oracle_refinement_change"] = err
            else:
                reference = integrate_exact(model, rho0, cfg.dt, cfg.t_final)
        log.info("run %s: n=%d kind=%s rank=%d layers=%d terms=%d", stem, cfg.lattice.n, cfg.kind.value,
                 cfg.rank, cfg.layers, len(liouvillian_expand(model)))
        obs = _StreamingMetrics(sink, model, reference, bound=cfg.bound, stride=cfg.stride, bures_mode=cfg.bures_mode)
        run_steps(cfg, [obs])
        ts = obs.series
        manifest["status"] = "ok"
        manifest["rows"] = len(ts)
        manifest["stalled_steps"] = len(ts.stalls)
        if reference is not None:
            inf = ts.column("infidelity")
            manifest["peak_infidelity"] = float(np.max(inf))
            manifest["integrated_bures"] = integrated(ts.column("bures"), ts.t)
        manifest["final"] = {k: ts.rows[-1][k] for k in ("s_x", "s_z", "trace", "purity")}
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        log.exception("run %s failed", stem)
        raise
    finally:
        manifest["wall_clock_s"] = time.perf_counter() - t0
        manifest["rows_written"] = sink.count
        sink.close()
        with open(out_dir / f"{stem}.manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        log.removeHandler(handler)
        handler.close()
    return manifest


# -- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load(args.config)
    out = Path(args.output or cfg.output)
    if args.complement:
        s = init_state(cfg)
        for a, b in zip(s.basis, s.complement_labels()):
            print(f"{a}  {b}")
    m = execute(cfg, out, certify=args.certify)
    print(f"wrote {out / 'timeseries.csv'} ({m['rows_written']} rows)")
    return EXIT_OK


def sweep_points(cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    if not cfg.sweep:
        raise ConfigError("sweep: configuration has no sweep section")
    pts = []
    for r in cfg.sweep.get("rank", []):
        pts.append((f"rank_{r}", cfg.replace(rank=int(r))))
    for nl in cfg.sweep.get("layers", []):
        pts.append((f"layers_{nl}", cfg.replace(layers=int(nl))))
    for label, basis in cfg.sweep.get("basis", {}).items():
        b = basis if basis == "hamming" else tuple(basis)
        pts.append((f"basis_{label}", cfg.replace(basis=b)))
    return pts


def _sweep_point(args):
    name, cfg, out = args
    try:
        m = execute(cfg, out, stem=name)
        return name, m, None
    except Exception as exc:  # recorded in the summary, other points continue
        return name, None, f"{type(exc).__name__}: {exc}"


SUMMARY_COLUMNS = ("point", "rank", "layers", "basis", "status", "integrated_bures", "peak_infidelity", "error")


def cmd_sweep(args) -> int:
    cfg = load(args.config)
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    pts = sweep_points(cfg)
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(name, c, out) for name, c in pts]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    by_name = {}
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for (name, c), (_, m, err) in zip(pts, results):
            basis = c.basis if isinstance(c.basis, str) else " ".join(c.basis)
            ib = m.get("integrated_bures") if m else None
            by_name[name] = ib
            w.writerow([name, c.rank, c.layers, basis, "ok" if m else "error", fmt(ib),
                        fmt(m.get("peak_infidelity") if m else None), err or ""])
        labels = [n for n, _ in pts if n.startswith("basis_")]
        if len(labels) == 2 and None not in (by_name[labels[0]], by_name[labels[1]]):
            a, b = labels
            w.writerow([f"{b}-minus-{a}", "", "", "", "comparison", fmt(by_name[b] - by_name[a]), "", ""])
    failed = sum(1 for r in results if r[1] is None)
    print(f"{len(pts)} points, {failed} failed; summary in {out / 'summary.csv'}")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cost_table(kind, R: int, n_theta: int, L: int) -> list[tuple[str, int, str]]:
    kind = AnsatzKind.parse(kind)
    counts = count_circuits(kind, R, n_theta, L)
    classes = TABLE1_CLASSES[kind]
    return [(k, counts[k], classes[k]) for k in ("M_aa", "M_at", "M_tt", "M", "V_a", "V_t", "V", "total")]


def cmd_cost(args) -> int:
    rows = cost_table(args.ansatz, args.rank, args.ntheta, args.L)
    print(f"{'block':<6} {'count':>10}  class")
    for name, n, cls in rows:
        print(f"{name:<6} {n:>10}  {cls}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load(args.config)
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    model = build_tfim(cfg.lattice, cfg.jz, cfg.h, cfg.gamma)
    rho0 = _pure_initial(cfg)
    if args.certify:
        traj, err = certify_oracle(model, rho0, cfg.dt, cfg.t_final)
        print(f"dt/10 refinement changed observables by {err:.3g}")
    else:
        traj = integrate_exact(model, rho0, cfg.dt, cfg.t_final)
    cols = ("t", "s_x", "s_z", "trace", "purity")
    sink = CsvSink(out / "oracle.csv", cols)
    for i, rho in enumerate(traj):
        if i % cfg.stride:
            continue
        sx, sz = observables(rho)
        sink.write({"t": i * cfg.dt, "s_x": sx, "s_z": sz, "trace": np.trace(rho).real, "purity": purity(rho)})
    sink.close()
    print(f"wrote {out / 'oracle.csv'} ({sink.count} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrqte", description="Low-rank variational Lindblad simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one variational run")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides output.path)")
    r.add_argument("--certify", action="store_true", help="check the oracle against a dt/10 run first")
    r.add_argument("--complement", action="store_true", help="print basis labels in the opposite bit convention")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="rank / layer / basis studies")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("cost", help="expectation-value counts per M/V block")
    c.add_argument("--ansatz", required=True, choices=["I", "II"])
    c.add_argument("--rank", type=int, required=True)
    c.add_argument("--ntheta", type=int, required=True)
    c.add_argument("--L", type=int, required=True)
    c.set_defaults(func=cmd_cost)

    o = sub.add_parser("oracle", help="exact trajectory only")
    o.add_argument("config")
    o.add_argument("-o", "--output")
    o.add_argument("--certify", action="store_true")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
