"""Command-line front end: ``snsmem {simulate,verify,split,pullback,sweep,oracle}``.

Every command writes its outputs plus ``manifest.json`` into ``--out``.
Floats in CSV and JSON use the shortest round-trip representation, so an
identical config and seed give byte-identical outputs; only the manifest's
``wall_clock`` entry changes between runs.  Each flag can also be given as
an environment variable ``SNSMEM_<FLAG>`` (flags win).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attractor import (attractor_estimate, deterministic_attractor, sample_ball,
                        semicontinuity_sweep, shift_velocity, stationary_z)
from .checks import run_oracles, run_verify
from .config import ENV_PREFIX, ConfigError, build_initial, build_sim_config, load_config, read_config
from .diagnostics import linear_decay_check
from .solver import BlowUpError, SimState, integrate, integrate_split
from .spaces import SpectralField
from .stochastic import sample_wiener

MANIFEST_VERSION = 1
COMMANDS = ("simulate", "verify", "split", "pullback", "sweep", "oracle")
TRAJECTORY_COLUMNS = ("t", "v_H", "v_V", "eta_M", "psi_H", "z", "beta1", "div_max")
EXIT_OK, EXIT_FAIL, EXIT_BLOWUP, EXIT_CONFIG = 0, 1, 2, 3


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects outputs of one command and writes the manifest."""

    def __init__(self, command: str, cfg: dict | None, out: Path, seeds: list):
        self.command, self.cfg, self.out, self.seeds = command, cfg, out, seeds
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def add(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self, status: str, summary: dict) -> dict:
        outputs = {n: _sha256(self.out / n) for n in sorted(set(self.outputs))}
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "seeds": self.seeds,
            "outputs": outputs,
            "status": status,
            "summary": summary,
            "wall_clock": time.perf_counter() - self.t0,
        }
        write_json(self.out / "manifest.json", manifest)
        return manifest


# -- commands -----------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> int:
    """Integrate one trajectory: trajectory.csv, checkpoints and the manifest."""
    seed = int(cfg["noise"]["seed"])
    run = Run("simulate", cfg, out, [seed])
    sim = build_sim_config(cfg)
    phi0 = build_initial(cfg, sim)
    dt, t_end = sim.dt, sim.t_end
    path = sample_wiener(seed, 0.0, t_end, dt) if sim.epsilon else None
    if path is not None:
        # the config gives physical data u0; the solver evolves v = u - eps h z
        phi0 = shift_velocity(phi0, sim, stationary_z(path, sim, 0.0), -1.0)
    modes = phi0.eta.modes
    every_ck = int(cfg["integration"]["checkpoint_every"])
    divs, ckpts = [], []

    def callback(t, v, eta, z):
        kdotv = modes.kx * v[..., 0, :] + modes.ky * v[..., 1, :]
        divs.append(float(np.max(np.abs(kdotv))) if kdotv.size else 0.0)
        n = int(round(t / dt))
        if every_ck and n % every_ck == 0:
            stem = f"ckpt_{n:08d}"
            st = SimState(t, SpectralField(sim.grid, modes.scatter(v)), phi0.eta.replace(np.array(eta)))
            run.add(f"{stem}.v.bin").write_bytes(st.v.to_bytes())
            run.add(f"{stem}.eta.bin").write_bytes(st.eta.to_bytes())
            ckpts.append(stem)

    try:
        tr = integrate(phi0, path, sim, store_states=False, callback=callback)
    except BlowUpError as exc:
        run.finish("blowup", {"error": str(exc)})
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    rows = zip(tr.t, tr["v_H"], tr["v_V"], tr["eta_M"], tr["psi_H"], tr["z"], tr["beta1"], divs)
    write_csv(run.add("trajectory.csv"), TRAJECTORY_COLUMNS, rows)
    run.add("final.v.bin").write_bytes(tr.final.v.to_bytes())
    run.add("final.eta.bin").write_bytes(tr.final.eta.to_bytes())
    summary = {"steps": int(round(t_end / dt)), "final_psi_H": float(tr["psi_H"][-1]),
               "max_divergence": max(divs), "checkpoints": ckpts}
    run.finish("ok", summary)
    return EXIT_OK


def cmd_verify(level: str, out: Path) -> int:
    run = Run("verify", None, out, [])
    report = run_verify(level)
    write_json(run.add("verify.json"), report)
    run.finish("pass" if report["passed"] else "fail", {"level": level, "passed": report["passed"]})
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.3e} (tol {c['tol']:.1e})")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_oracle(level: str, out: Path) -> int:
    run = Run("oracle", None, out, [])
    report = run_oracles(level)
    write_json(run.add("oracle.json"), report)
    run.finish("pass" if report["passed"] else "fail", {"level": level, "passed": report["passed"]})
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_split(cfg: dict, out: Path) -> int:
    seed = int(cfg["noise"]["seed"])
    run = Run("split", cfg, out, [seed])
    sim = build_sim_config(cfg)
    phi0 = build_initial(cfg, sim)
    path = sample_wiener(seed, 0.0, sim.t_end, sim.dt) if sim.epsilon else None
    try:
        sp = integrate_split(phi0, path, sim)
    except BlowUpError as exc:
        run.finish("blowup", {"error": str(exc)})
        return EXIT_BLOWUP
    rows = zip(sp.full.t, sp.full["psi_H"], sp.linear["psi_H"], sp.nonlinear["psi_H"], sp.consistency)
    write_csv(run.add("split.csv"), ("t", "psi_H", "psi_L_H", "psi_N_H", "consistency"), rows)
    summary = {"linear_decay_ratio": linear_decay_check(sp, sim.ledger.delta0),
               "max_consistency": float(np.max(sp.consistency)), "delta0": sim.ledger.delta0}
    run.finish("ok", summary)
    return EXIT_OK


def _cloud_setup(cfg: dict):
    ex = cfg["experiment"]
    sim0 = build_sim_config(cfg, epsilon=0.0)
    center = build_initial(cfg, sim0)
    init = sample_ball(sim0, int(ex["n_members"]), float(ex["radius"]), int(ex["cloud_seed"]), center=center)
    return sim0, init


def cmd_pullback(cfg: dict, out: Path) -> int:
    seed = int(cfg["noise"]["seed"])
    run = Run("pullback", cfg, out, [seed])
    _, init = _cloud_setup(cfg)
    sim = build_sim_config(cfg)
    est = attractor_estimate(seed, sim, cfg["experiment"]["horizons"], init, cfg["experiment"]["tol"])
    rows = [(T, d, sc) for T, d, sc in zip(est.horizons[1:], est.distances, est.scales)]
    write_csv(run.add("pullback.csv"), ("horizon", "hausdorff_to_previous", "scale"), rows)
    est.cloud.save(out, "cloud")
    run.outputs.append("cloud.json")
    for m in json.loads((out / "cloud.json").read_text())["members"]:
        run.outputs.extend([m["v"], m["eta"]])
    summary = {"converged": est.converged, "n_members": len(est.cloud),
               "dropped": est.cloud.label.get("dropped", []), "diameter": est.cloud.diameter()}
    run.finish("ok" if est.converged else "not_converged", summary)
    return EXIT_OK


def cmd_sweep(cfg: dict, out: Path) -> int:
    ex = cfg["experiment"]
    run = Run("sweep", cfg, out, list(ex["seeds"]))
    sim0, init = _cloud_setup(cfg)
    T_ref, every = float(ex["reference_T"]), float(ex["reference_every"])
    ref = deterministic_attractor(sim0, init, T_ref, every, ex["tol"])
    report = semicontinuity_sweep(ex["epsilons"], ex["seeds"], lambda e: build_sim_config(cfg, epsilon=e),
                                  init, ex["horizons"], ref, ex["tol"])
    report.write(out / "sweep")
    run.outputs += ["sweep.json", "sweep.csv"]
    run.finish("ok", {"mean": report.mean, "max": report.max, "epsilons": report.epsilons})
    return EXIT_OK


# -- argument handling ----------------------------------------------------------

def _env_default(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper(), default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snsmem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"snsmem {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=_env_default("config"),
                        help="JSON config or a run manifest (env SNSMEM_CONFIG)")
        sp.add_argument("--seed", type=int, default=_env_default("seed"), help="noise seed override")
        sp.add_argument("--out", default=_env_default("out", f"out_{name}"), help="output directory")
        sp.add_argument("--threads", type=int, default=_env_default("threads"),
                        help="numba thread cap; results do not depend on it")
        sp.add_argument("--level", choices=("fast", "full"), default=_env_default("level", "fast"))
    return p


def resolve_config(path, seed) -> dict:
    cfg = read_config(path) if path else load_config({})
    if seed is not None:
        cfg["noise"]["seed"] = int(seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        import numba
        numba.set_num_threads(max(1, min(int(args.threads), numba.config.NUMBA_NUM_THREADS)))
    out = Path(args.out)
    try:
        cfg = resolve_config(args.config, args.seed)
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "verify":
        return cmd_verify(args.level, out)
    if args.command == "oracle":
        return cmd_oracle(args.level, out)
    return {"simulate": cmd_simulate, "split": cmd_split, "pullback": cmd_pullback,
            "sweep": cmd_sweep}[args.command](cfg, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
