"""Command-line entry point: ``qmimo {simulate,solve,estimate,sweep,locate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import estimate_targets
from .harness import (ExperimentConfig, _jsonable, generate_trial, run_baseline, run_locate,
                      run_sweep, solver_config, trial_seed, write_doppler_spectra,
                      write_residual_map)
from .qrpca import apg_qrpca
from .quantizer import pack_matrix, unpack_matrix

log = logging.getLogger("qmimo")

SIM_MANIFEST = "simulation.json"


def _pair_name(m, n, ext):
    return f"pair_{m}_{n}.{ext}"


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        raw.setdefault("sweep", {})["seed"] = args.seed
    if args.out:
        raw["output"] = args.out
    return ExperimentConfig.from_dict(raw, paper_scale=args.paper_scale)


def cmd_simulate(args):
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = trial_seed(cfg.seed, args.trial)
    data = generate_trial(cfg, args.snr, args.bits, seed)
    for (m, n), z in data.observations.items():
        (out / _pair_name(m, n, "qbin")).write_bytes(pack_matrix(z, data.qspecs[(m, n)]))
    manifest = {
        "version": __version__, "snr_db": args.snr, "bits": args.bits, "trial": args.trial,
        "trial_seed": seed, "noise_var": data.noise_var, "signal_power": data.signal_power,
        "config": cfg.raw,
        "truth": [{"position": t.position, "velocity": t.velocity} for t in data.targets],
    }
    (out / SIM_MANIFEST).write_text(json.dumps(manifest, indent=2, default=_jsonable))
    print(f"wrote {len(data.observations)} matrices to {out}")


def _read_manifest(directory) -> dict:
    path = Path(directory) / SIM_MANIFEST
    if not path.exists():
        raise SystemExit(f"{path} not found; run 'simulate' first")
    return json.loads(path.read_text())


def cmd_solve(args):
    src = Path(args.input)
    man = _read_manifest(src)
    cfg = ExperimentConfig.from_dict(man["config"])
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for m, n in cfg.scene.pairs():
        z, qspec = unpack_matrix((src / _pair_name(m, n, "qbin")).read_bytes())
        scfg = solver_config(cfg, z.shape, man["noise_var"], qspec.delta, man["signal_power"])
        sol = apg_qrpca(z, scfg)
        np.save(out / _pair_name(m, n, "npy"), sol.x_hat)
        report[f"{m},{n}"] = {"iterations": sol.iterations, "converged": sol.converged}
    if out != src:
        (out / SIM_MANIFEST).write_text(json.dumps(man, indent=2))
    (out / "solve.json").write_text(json.dumps(report, indent=2))
    print(f"solved {len(report)} pairs into {out}")


def cmd_estimate(args):
    src = Path(args.input)
    man = _read_manifest(src)
    cfg = ExperimentConfig.from_dict(man["config"])
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    x_hats = {(m, n): np.load(src / _pair_name(m, n, "npy")) for m, n in cfg.scene.pairs()}
    est = estimate_targets(x_hats, cfg.grid, cfg.scene, cfg.k_targets, cfg.zero_pad)
    write_residual_map(out / "residual_map.csv", cfg.grid, est.position_residual_map)
    write_doppler_spectra(out / "doppler.csv", est.xi_matrices, cfg.scene.t_pri, cfg.zero_pad)
    result = {"theta_p": est.theta_p, "theta_v": est.theta_v,
              "doppler_hz": est.doppler_estimates, "truth": man.get("truth")}
    (out / "estimate.json").write_text(json.dumps(result, indent=2, default=_jsonable))
    for p, v in zip(est.theta_p, est.theta_v):
        print(f"position {p[0]:.1f} {p[1]:.1f} m  velocity {v[0]:.3f} {v[1]:.3f} m/s")


def cmd_sweep(args):
    cfg = _load_config(args)
    if args.trials is not None:
        cfg.trials = args.trials
    path, _ = run_sweep(cfg)
    print(f"wrote {path}")
    if not args.no_baseline:
        bpath, _ = run_baseline(cfg)
        print(f"wrote {bpath}")


def cmd_locate(args):
    cfg = _load_config(args)
    if args.trials is not None:
        cfg.trials = args.trials
    records, est = run_locate(cfg, args.snr, args.bits)
    ok = [r for r in records if r.status == "ok"]
    print(f"median position error {np.median([r.position_error_m for r in ok]):.2f} m, "
          f"median velocity error {np.median([r.velocity_error_mps for r in ok]):.3f} m/s "
          f"({len(ok)}/{len(records)} trials)")


def _bits(text):
    # 0 or "none" selects unquantized data
    if text.lower() in ("0", "none"):
        return None
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmimo", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment JSON file")
        sp.add_argument("--seed", type=int, help="master seed (overrides sweep.seed)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--paper-scale", action="store_true",
                        help="3 x 10 antennas, Q=128, N=64 instead of the desk scene")

    sp = sub.add_parser("simulate", help="write quantized matrices in packed form")
    common(sp)
    sp.add_argument("--snr", type=float, default=20.0)
    sp.add_argument("--bits", type=int, default=4)
    sp.add_argument("--trial", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("solve", help="recover X and T from simulated matrices")
    sp.add_argument("input", help="directory written by 'simulate'")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("estimate", help="positions and velocities from recovered matrices")
    sp.add_argument("input", help="directory written by 'solve'")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("sweep", help="Monte-Carlo sweep over SNR and bit depth")
    common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--no-baseline", action="store_true", help="skip the unquantized baseline")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("locate", help="repeated position/velocity estimation of one scene")
    common(sp)
    sp.add_argument("--snr", type=float, default=20.0)
    sp.add_argument("--bits", type=_bits, default=4)
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_locate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
