"""Command line entry point: ``python -m nsvdelay <command> ...``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import estimates as est
from .attractor import pullback_sweep, regularity_split
from .config import RunConfig
from .delay import check_hypotheses
from .errors import (BlowUpError, ConfigurationError, DomainError, InfeasibleHypotheses,
                     InsufficientData, MissingArtifact)
from .io import (ENERGY_HEADER, _npy_bytes, atomic_write_bytes, csv_text, digest, load_checkpoint,
                 read_csv, read_json, save_checkpoint, write_csv, write_energy_csv, write_json, write_snapshot)
from .measure import constant_rho, depth_doubling_table, functional
from .stepper import Run, simulate

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2
EXIT_CONFIG, EXIT_MISSING, EXIT_BLOWUP, EXIT_INFEASIBLE = 3, 4, 5, 6
WORKERS_ENV = "NSVDELAY_WORKERS"


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return str(v)
    return f"{v:.6g}"


def _table(rows) -> str:
    width = max(len(str(k)) for k, _ in rows)
    return "\n".join(f"{str(k):<{width}}  {_fmt(v)}" for k, v in rows)


# --------------------------------------------------------------------------- run artifacts

def save_run(out: Path, run: Run, config: RunConfig, window_dict, overridden: bool) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "run",
        "config": config.to_dict(),
        "window": window_dict,
        "hypotheses_override": overridden,
        "tau": run.tau,
        "t_end": float(run.t[-1]),
        "samples": int(run.t.size),
        "initial_sha256": digest(np.stack([f.coeffs for f in run.initial.history.fields])),
        "final_sha256": digest(run.final.u.coeffs),
        "energy_residual_max": float(np.max(run.energy_residual)),
    }
    mhash = digest(manifest)
    save_checkpoint(out / "initial", run.initial, mhash)
    save_checkpoint(out / "final", run.final, mhash)
    if run.trajectory is not None:
        atomic_write_bytes(out / "trajectory.npy", _npy_bytes(run.trajectory))
    write_energy_csv(out / "energy.csv", run)
    write_json(out / "manifest.json", manifest)
    return out


def load_run(path) -> tuple:
    """Rebuild a :class:`Run` and its configuration from a run directory."""
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    config = RunConfig.from_dict(manifest["config"], path)
    initial, _ = load_checkpoint(path / "initial")
    final, _ = load_checkpoint(path / "final")
    header, rows = read_csv(path / "energy.csv")
    if tuple(header) != ENERGY_HEADER:
        raise ConfigurationError(f"{path}/energy.csv has an unexpected header")
    data = np.array([[float(x) for x in r] for r in rows])
    traj = None
    if (path / "trajectory.npy").exists():
        traj = np.load(path / "trajectory.npy", allow_pickle=False)
    run = Run(config.params(), config.forcing(), config.delay(), config.stepper(), initial, final,
              data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4],
              np.zeros(len(rows)), traj, {"path": str(path)})
    return run, config, manifest


# --------------------------------------------------------------------------- commands

def cmd_hypotheses(args) -> int:
    config = RunConfig.load(args.config)
    win = config.window(strict=False)
    print(_table(win.rows()))
    print(_table([(f"ok[{k}]", v) for k, v in win.conditions.items()]))
    if not win.feasible:
        first = next(c for c in win.FATAL if not win.conditions[c])
        print(f"infeasible: first violated interval is {first}")
        return EXIT_INFEASIBLE
    return EXIT_PASS


def _window_or_override(config: RunConfig):
    try:
        return config.window(strict=True), False
    except InfeasibleHypotheses:
        if not config.override:
            raise
        return config.window(strict=False), True


def cmd_simulate(args) -> int:
    config = RunConfig.load(args.config)
    if args.dt is not None:
        config.data["stepper"]["dt"] = args.dt
    if args.t_end is not None:
        config.data["stepper"]["t_end"] = args.t_end
    config.validate()
    win, overridden = _window_or_override(config)
    cfg, params = config.stepper(), config.params()
    f, g = config.forcing(), config.delay()
    state = config.initial_state()
    if args.resume:
        state, _ = load_checkpoint(args.resume)
    out = Path(args.out) if args.out else config.output_dir
    marks = sorted(float(x) for x in (args.checkpoint_at or []))
    pieces = []
    for mark in marks:
        if state.t < mark < cfg.t_end:
            piece = simulate(state, mark, f, g, cfg, params, keep_trajectory=args.keep_trajectory,
                             check_energy=True)
            save_checkpoint(out / f"checkpoint_t{mark:g}", piece.final)
            pieces.append(piece)
            state = piece.final
    pieces.append(simulate(state, cfg.t_end, f, g, cfg, params,
                           keep_trajectory=args.keep_trajectory, check_energy=True))
    run = _concat(pieces)
    save_run(out, run, config, win.to_dict(), overridden)
    print(f"simulated t in [{run.tau:g}, {run.t[-1]:g}] with {run.t.size - 1} steps -> {out}")
    print(f"max energy-identity residual {np.max(run.energy_residual):.3e}")
    return EXIT_PASS


def _concat(pieces) -> Run:
    if len(pieces) == 1:
        return pieces[0]
    first, last = pieces[0], pieces[-1]

    def cat(name):
        arrays = [getattr(p, name) for p in pieces]
        return np.concatenate([arrays[0]] + [a[1:] for a in arrays[1:]])

    traj = None
    if first.trajectory is not None:
        traj = np.concatenate([first.trajectory] + [p.trajectory[1:] for p in pieces[1:]])
    return Run(first.params, first.forcing, first.delay, first.cfg, first.initial, last.final,
               cat("t"), cat("h_sq"), cat("v_sq"), cat("da_sq"), cat("dtv_sq"),
               cat("energy_residual"), traj)


def _verdict_code(certs) -> int:
    verdicts = [c.verdict for c in certs]
    if "fail" in verdicts:
        return EXIT_FAIL
    if "inconclusive" in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def cmd_certify(args) -> int:
    run, config, manifest = load_run(args.run)
    pairs = [load_run(p)[0] for p in (args.pair or [])]
    win = check_hypotheses(run.params, run.delay, float(config.data["hypotheses"]["sigma"]),
                           float(config.data["hypotheses"]["beta"]),
                           strict=not manifest.get("hypotheses_override"))
    ids = args.ids.split(",") if args.ids else list(config.data["certify"]["ids"])
    certs = []
    for cid in ids:
        if cid == "decay":
            certs.append(est.certify_decay(run, win))
        elif cid == "window":
            certs.append(est.certify_window_integral(run, win))
        elif cid == "deriv-R2":
            certs.append(est.certify_derivative(run, win))
        elif cid == "absorb-R1":
            certs.append(est.certify_absorbing([run] + pairs, win, eps=args.eps))
        elif cid == "contraction":
            if not pairs:
                raise ConfigurationError("contraction needs --pair")
            certs.append(est.contraction_psi(run, pairs[0], win)[1])
        elif cid == "lipschitz":
            if not pairs:
                raise ConfigurationError("lipschitz needs --pair")
            certs.append(est.certify_lipschitz_in_initial_data(run, pairs[0], win))
        else:
            raise ConfigurationError(f"unknown certificate id {cid!r}")
    rows = [(c.id, f"{c.verdict}  margin={c.margin:.6g}") for c in certs]
    print(_table(rows))
    out = Path(args.out) if args.out else Path(args.run)
    write_json(out / "certificates.json", [c.summary() for c in certs])
    return _verdict_code(certs)


def cmd_attractor(args) -> int:
    config = RunConfig.load(args.config)
    a = config.data["attractor"]
    cfg, params = config.stepper(), config.params()
    f, g = config.forcing(), config.delay()
    family = [(config.initial_field(norm_value=x, seed=int(a["seed"]) + j), None)
              for j, x in enumerate(a["family_norms"])]
    taus = [float(x) for x in a["taus"]]
    out = Path(args.out) if args.out else config.output_dir / "attractor"
    res = pullback_sweep(float(a["t_star"]), taus, family, f, g, cfg, params,
                         workers=workers_from_env())
    write_csv(out / "distances.csv", ("tau", "semidistance"), res.rows())
    for i, cloud in enumerate(res.clouds):
        for j, m in enumerate(cloud.members):
            write_snapshot(out / f"cloud_{i}" / f"member_{j}.nsvf", m.u, m.t)
    write_json(out / "manifest.json", {"kind": "attractor", "config": config.to_dict(),
                                       "taus": taus, "distances": res.distances})
    print(_table([(f"tau={tau:g}", d) for tau, d in res.rows()]))
    code = EXIT_PASS
    xi = float(a["split_xi"])
    if xi > 0:
        win, _ = _window_or_override(config)
        split = regularity_split(config.initial_state(), cfg.t_end, xi, f, g, cfg, params,
                                 sigma=win.sigma)
        write_csv(out / "split.csv", ("t", "u_da", "v_da", "w_da", "gap"),
                  np.column_stack([split.t, split.u_da, split.v_da, split.w_da,
                                   split.additivity_gap]))
        for c in split.certificates:
            print(f"{c.id}: {c.verdict} margin={c.margin:.6g}")
        print(f"additivity gap max {np.max(split.additivity_gap):.3e}")
        code = _verdict_code(split.certificates)
    return code


def cmd_measure(args) -> int:
    config = RunConfig.load(args.config)
    m = config.data["measure"]
    cfg, params = config.stepper(), config.params()
    f, g = config.forcing(), config.delay()
    doublings = int(m["doublings"] if args.doublings is None else args.doublings)
    phis = [functional(x) for x in m["functionals"]]
    rho = constant_rho(config.initial_field())
    rows = depth_doubling_table(phis, rho, float(m["tau"]), float(m["t"]), float(m["depth"]),
                                doublings, int(m["stride"]), f, g, cfg, params,
                                richardson=bool(m["richardson"]))
    out = Path(args.out) if args.out else config.output_dir / "measure"
    write_csv(out / "residuals.csv", ("phi", "depth", "value", "residual"), rows)
    for r in rows:
        print(f"{r[0]:<16} depth={r[1]:<8g} value={r[2]:.6g} residual={r[3]:.3e}")
    return EXIT_PASS


def cmd_replay(args) -> int:
    run, config, _ = load_run(args.run)
    start = run.initial
    if args.checkpoint:
        start, _ = load_checkpoint(args.checkpoint)
    again = simulate(start, float(run.t[-1]), run.forcing, run.delay, run.cfg, run.params)
    same_final = np.array_equal(again.final.u.coeffs, run.final.u.coeffs)
    same_csv = True
    if not args.checkpoint:
        same_csv = (csv_text(ENERGY_HEADER, again.record_rows())
                    == (Path(args.run) / "energy.csv").read_text())
    print(f"final state identical: {same_final}; energy record identical: {same_csv}")
    return EXIT_PASS if same_final and same_csv else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsvdelay", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("hypotheses", help="evaluate the admissible constant windows")
    s.add_argument("config")
    s.set_defaults(fn=cmd_hypotheses)

    s = sub.add_parser("simulate", help="integrate and write a run directory")
    s.add_argument("config")
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--out")
    s.add_argument("--resume", help="checkpoint bundle to start from")
    s.add_argument("--checkpoint-at", type=float, action="append")
    s.add_argument("--keep-trajectory", action="store_true")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("certify", help="evaluate bound certificates on stored runs")
    s.add_argument("run")
    s.add_argument("--pair", action="append", help="second run (pair certificates, absorbing family)")
    s.add_argument("--ids", help="comma separated: " + ",".join(est.CERTIFICATE_IDS))
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_certify)

    s = sub.add_parser("attractor", help="pullback sweep and optional regularity split")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_attractor)

    s = sub.add_parser("measure", help="depth-doubling table of invariance residuals")
    s.add_argument("config")
    s.add_argument("--doublings", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_measure)

    s = sub.add_parser("replay", help="re-run a stored run and compare bit for bit")
    s.add_argument("run")
    s.add_argument("--checkpoint")
    s.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InfeasibleHypotheses as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except InsufficientData as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
