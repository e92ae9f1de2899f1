"""End-to-end experiments: configuration, seeded trials, sweeps and CSV export."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import __version__
from .estimator import SearchGrid, estimate_targets
from .qrpca import QrpcaConfig, apg_qrpca, rpca_baseline
from .quantizer import (DteChannelSpec, QuantizerSpec, apply_dte, apply_dte_analog, peak_gamma,
                        quantize_complex, sigma_gamma)
from .scene import (SceneConfig, TargetState, add_noise, build_all_tims, concentric_layout,
                    noise_var_for_snr, random_reflectivities)

log = logging.getLogger(__name__)

# seed stream tags for the counter-based split of a trial seed
_REFLECTIVITY, _NOISE, _DTE = 0, 1, 2

DESK_SCENE = {
    "layout": {"mt": 2, "mr": 3, "tx_radius": 5000.0, "rx_radius": 3000.0},
    "f0": 5e9, "delta_f": 50e6, "b0": 10e6, "tp": 3.2e-6, "t_pri": 0.5e-3,
    "q_pulses": 64, "tau_max": 40e-6,
}
PAPER_SCENE = dict(DESK_SCENE, layout={"mt": 3, "mr": 10, "tx_radius": 5000.0, "rx_radius": 3000.0},
                   tp=6.4e-6, q_pulses=128)

DEFAULT_CONFIG = {
    "scene": DESK_SCENE,
    "targets": [{"position": [1100.0, 1100.0], "velocity": [10.0, 10.0]}],
    "quantizer": {"bits": 4, "gamma_rule": "peak", "gamma_factor": 0.0},
    "channel": {"corruption_prob": 0.01, "mode": "symbol"},
    "solver": {"mu": None, "lam": None, "step": 0.25, "max_iter": 150, "tol": 3e-4,
               "reg_rule": "noise", "reg_scale": 1.0, "reg_floor_db": 50.0, "svd_method": "gram"},
    "estimator": {"grid": {"center": [1100.0, 1100.0], "step": 10.0, "n": 40},
                  "zero_pad": 8, "k_targets": 1},
    "sweep": {"snr_db": [0, 10, 20, 30], "bits": [2, 4, 6], "trials": 50, "seed": 2024,
              "workers": 1},
}

CSV_COLUMNS = ["method", "snr_db", "bits", "trial", "rel_err_x", "rel_err_t",
               "position_error_m", "velocity_error_mps", "solver_iters", "status"]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def scene_from_dict(d: dict) -> SceneConfig:
    d = dict(d)
    layout = d.pop("layout", None)
    if layout is not None:
        tx, rx = concentric_layout(layout["mt"], layout["mr"], layout["tx_radius"],
                                   layout["rx_radius"])
        d.setdefault("tx_positions", tx)
        d.setdefault("rx_positions", rx)
    known = {f.name for f in fields(SceneConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown scene keys: {sorted(unknown)}")
    return SceneConfig(**d)


def grid_from_dict(d: dict) -> SearchGrid:
    if "x_range" in d:
        return SearchGrid(tuple(d["x_range"]), tuple(d["y_range"]))
    return SearchGrid.centered(d["center"], d.get("step", 10.0), d.get("n", 40))


@dataclass
class ExperimentConfig:
    """Parsed experiment description; ``raw`` keeps the JSON form for echoing."""

    scene: SceneConfig
    targets: list
    gamma_rule: str
    gamma_factor: float
    bits: int
    corruption_prob: float
    channel_mode: str
    solver: dict
    grid: SearchGrid
    zero_pad: int
    k_targets: int
    snr_db: list
    bits_list: list
    trials: int
    seed: int
    workers: int = 1
    out_dir: Path = Path("out")
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.gamma_rule not in ("peak", "sigma"):
            raise ValueError(f"unknown gamma_rule {self.gamma_rule!r}")
        if self.solver.get("reg_rule", "noise") not in ("noise", "delta"):
            raise ValueError(f"unknown reg_rule {self.solver.get('reg_rule')!r}")
        if not self.targets:
            raise ValueError("at least one target is required")
        DteChannelSpec(self.corruption_prob, mode=self.channel_mode)

    @classmethod
    def from_dict(cls, d: dict | None = None, paper_scale: bool = False) -> "ExperimentConfig":
        base = DEFAULT_CONFIG
        if paper_scale:
            base = _merge(base, {"scene": PAPER_SCENE})
        raw = _merge(base, d or {})
        if paper_scale and d and "scene" in d:
            raw["scene"] = _merge(PAPER_SCENE, d["scene"])
        q, ch, est, sw = raw["quantizer"], raw["channel"], raw["estimator"], raw["sweep"]
        targets = [(np.asarray(t["position"], float), np.asarray(t["velocity"], float))
                   for t in raw["targets"]]
        return cls(
            scene=scene_from_dict(raw["scene"]),
            targets=targets,
            gamma_rule=q.get("gamma_rule", "peak"),
            gamma_factor=float(q.get("gamma_factor", 0.0 if q.get("gamma_rule", "peak") == "peak" else 3.0)),
            bits=int(q.get("bits", 4)),
            corruption_prob=float(ch.get("corruption_prob", 0.01)),
            channel_mode=ch.get("mode", "symbol"),
            solver=dict(raw["solver"]),
            grid=grid_from_dict(est["grid"]),
            zero_pad=int(est.get("zero_pad", 8)),
            k_targets=int(est.get("k_targets", len(targets))),
            snr_db=[float(s) for s in sw["snr_db"]],
            bits_list=[int(b) for b in sw["bits"]],
            trials=int(sw["trials"]),
            seed=int(sw["seed"]),
            workers=int(sw.get("workers", 1)),
            out_dir=Path(raw.get("output", "out")),
            raw=raw,
        )

    @classmethod
    def load(cls, path, paper_scale: bool = False) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), paper_scale=paper_scale)


@dataclass
class SweepRecord:
    method: str
    snr_db: float
    bits: int
    trial: int
    rel_err_x: float
    rel_err_t: float
    position_error_m: float
    velocity_error_mps: float
    solver_iters: float
    wall_time_s: float = 0.0
    status: str = "ok"


@dataclass
class TrialData:
    """Everything generated for one trial before recovery."""

    tims: dict
    targets: list
    noise_var: float
    signal_power: float
    observations: dict
    t_true: dict
    gammas: dict
    qspecs: dict


def trial_seed(master_seed: int, trial: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _stream(seed: int, tag: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(tag, index))


def relative_error(est, truth) -> float:
    """``||est - truth|| / ||truth||`` summed over pairs; absolute error when the truth is zero."""
    num = sum(np.linalg.norm(est[k] - truth[k]) ** 2 for k in truth)
    den = sum(np.linalg.norm(truth[k]) ** 2 for k in truth)
    return float(math.sqrt(num / den)) if den > 0 else float(math.sqrt(num))


def regularizers(cfg: ExperimentConfig, shape, noise_var: float, signal_power: float):
    """``(mu, lam)`` for one pair; ``None`` entries fall back to the solver defaults.

    Explicit ``mu``/``lam`` in the solver section always win. The ``noise``
    rule sets ``mu = reg_scale * sigma * (sqrt(L) + sqrt(Q))``, the expected
    spectral norm of the receiver noise, and ``lam = mu / sqrt(max(L, Q))``.
    ``sigma**2`` is floored at ``reg_floor_db`` below the per-sample signal
    power so that noiseless data still get a usable weight. Quantization
    error is left to the dead zone of the data term.
    """
    s = cfg.solver
    mu, lam = s.get("mu"), s.get("lam")
    if s.get("reg_rule", "noise") == "noise":
        L, Q = shape
        floor = signal_power * 10 ** (-float(s.get("reg_floor_db", 50.0)) / 10)
        sigma = math.sqrt(max(noise_var, floor))
        if mu is None:
            mu = float(s.get("reg_scale", 1.0)) * sigma * (math.sqrt(L) + math.sqrt(Q))
        if lam is None:
            lam = mu / math.sqrt(max(L, Q))
    return mu, lam


def solver_config(cfg: ExperimentConfig, shape, noise_var: float, delta_q: float,
                  signal_power: float = 0.0) -> QrpcaConfig:
    mu, lam = regularizers(cfg, shape, noise_var, signal_power)
    s = cfg.solver
    return QrpcaConfig(mu=mu, lam=lam, step=float(s.get("step", 0.25)),
                       max_iter=int(s.get("max_iter", 150)), tol=float(s.get("tol", 3e-4)),
                       delta_q=delta_q, backtracking=bool(s.get("backtracking", False)),
                       svd_method=s.get("svd_method", "gram"), record_objective=False)


def generate_trial(cfg: ExperimentConfig, snr_db: float, bits: int | None, seed: int) -> TrialData:
    """Scene, noisy data, quantization and channel errors for one trial.

    ``bits=None`` skips quantization and applies the analog error channel.
    """
    scene = cfg.scene
    rng = np.random.default_rng(_stream(seed, _REFLECTIVITY))
    targets = [TargetState(p, v, random_reflectivities(rng, scene.mt, scene.mr))
               for p, v in cfg.targets]
    tims = build_all_tims(scene, targets)
    noise_var = noise_var_for_snr(tims.values(), snr_db)
    signal_power = float(np.mean([np.linalg.norm(t.x) ** 2 / t.x.size for t in tims.values()]))
    gamma_fn = peak_gamma if cfg.gamma_rule == "peak" else sigma_gamma
    obs, t_true, gammas, qspecs = {}, {}, {}, {}
    for i, key in enumerate(scene.pairs()):
        x = tims[key].x
        y = add_noise(x, noise_var, _stream(seed, _NOISE, i))
        gamma = gamma_fn(x, noise_var, cfg.gamma_factor)
        dte = DteChannelSpec(cfg.corruption_prob, _stream(seed, _DTE, i), cfg.channel_mode)
        if bits is None:
            obs[key], t_true[key] = apply_dte_analog(y, dte, gamma)
            qspecs[key] = None
        else:
            qspec = QuantizerSpec.from_bits(gamma, bits)
            obs[key], t_true[key] = apply_dte(quantize_complex(y, qspec), dte, qspec)
            qspecs[key] = qspec
        gammas[key] = gamma
    return TrialData(tims, targets, noise_var, signal_power, obs, t_true, gammas, qspecs)


def recover(cfg: ExperimentConfig, data: TrialData) -> dict:
    """Run the per-pair solver on every observation; returns ``{pair: QrpcaSolution}``."""
    out = {}
    for key, z in data.observations.items():
        qspec = data.qspecs[key]
        if qspec is None:
            scfg = solver_config(cfg, z.shape, data.noise_var, 0.0, data.signal_power)
            out[key] = rpca_baseline(z, scfg)
        else:
            scfg = solver_config(cfg, z.shape, data.noise_var, qspec.delta, data.signal_power)
            out[key] = apg_qrpca(z, scfg)
    return out


def _target_errors(est_p, est_v, targets):
    true_p = np.array([t.position for t in targets])
    true_v = np.array([t.velocity for t in targets])
    cost = np.linalg.norm(est_p[:, None, :] - true_p[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    pos = float(np.mean(cost[rows, cols]))
    vel = float(np.max(np.abs(est_v[rows] - true_v[cols])))
    return pos, vel


def run_trial(cfg: ExperimentConfig, snr_db: float, bits: int | None, trial_seed: int,
              trial: int = 0) -> SweepRecord:
    """One end-to-end trial; ``bits=None`` runs the unquantized baseline.

    ``velocity_error_mps`` is the largest per-axis velocity error, and
    ``position_error_m`` the mean Euclidean position error after optimal
    assignment of estimates to targets.
    """
    t0 = time.perf_counter()
    method = "rpca" if bits is None else "qrpca"
    data = generate_trial(cfg, snr_db, bits, trial_seed)
    sols = recover(cfg, data)
    x_hat = {k: s.x_hat for k, s in sols.items()}
    rel_x = relative_error(x_hat, {k: t.x for k, t in data.tims.items()})
    rel_t = relative_error({k: s.t_hat for k, s in sols.items()}, data.t_true)
    est = estimate_targets(x_hat, cfg.grid, cfg.scene, cfg.k_targets, cfg.zero_pad)
    pos_err, vel_err = _target_errors(est.theta_p, est.theta_v, data.targets)
    iters = float(np.mean([s.iterations for s in sols.values()]))
    return SweepRecord(method, float(snr_db), 0 if bits is None else int(bits), trial, rel_x,
                       rel_t, pos_err, vel_err, iters, time.perf_counter() - t0)


def _safe_trial(args):
    cfg, snr, bits, trial = args
    try:
        return run_trial(cfg, snr, bits, trial_seed(cfg.seed, trial), trial)
    except Exception as exc:  # noqa: BLE001 - recorded in the row, sweep continues
        log.warning("trial failed (snr=%s bits=%s trial=%s): %s", snr, bits, trial, exc)
        nan = float("nan")
        return SweepRecord("rpca" if bits is None else "qrpca", float(snr),
                           0 if bits is None else int(bits), trial, nan, nan, nan, nan, nan,
                           0.0, f"error: {type(exc).__name__}: {exc}")


def _run_cells(cfg: ExperimentConfig, cells) -> list:
    jobs = [(cfg, snr, bits, t) for snr, bits in cells for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_safe_trial, jobs))
    return [_safe_trial(j) for j in jobs]


def summarize(records: list) -> list:
    """Per-cell means over successful trials, in first-appearance order."""
    cells = {}
    for r in records:
        cells.setdefault((r.method, r.snr_db, r.bits), []).append(r)
    out = []
    for (method, snr, bits), rs in cells.items():
        ok = [r for r in rs if r.status == "ok"]

        def mean(name):
            return float(np.mean([getattr(r, name) for r in ok])) if ok else float("nan")

        out.append({"method": method, "snr_db": snr, "bits": bits, "trial": "mean",
                    "rel_err_x": mean("rel_err_x"), "rel_err_t": mean("rel_err_t"),
                    "position_error_m": mean("position_error_m"),
                    "velocity_error_mps": mean("velocity_error_mps"),
                    "solver_iters": mean("solver_iters"),
                    "status": f"summary {len(ok)}/{len(rs)}"})
    return out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def write_csv(path, records: list, summary: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [{c: getattr(r, c) for c in CSV_COLUMNS} for r in records]
    if summary:
        rows += summarize(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def write_manifest(path, cfg: ExperimentConfig, records: list, elapsed: float) -> Path:
    path = Path(path)
    manifest = {
        "version": __version__,
        "config": cfg.raw,
        "elapsed_s": elapsed,
        "rows": [{"method": r.method, "snr_db": r.snr_db, "bits": r.bits, "trial": r.trial,
                  "wall_time_s": r.wall_time_s} for r in records],
    }
    path.write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return path


def run_sweep(cfg: ExperimentConfig, out_path=None) -> tuple:
    """QRPCA over SNR x bit depth x trials. Returns ``(csv_path, records)``.

    Wall times go to the JSON manifest next to the CSV so that the CSV is a
    pure function of the configuration.
    """
    t0 = time.perf_counter()
    cells = [(snr, bits) for snr in cfg.snr_db for bits in cfg.bits_list]
    records = _run_cells(cfg, cells)
    path = Path(out_path) if out_path else cfg.out_dir / "sweep.csv"
    write_csv(path, records)
    write_manifest(path.with_suffix(".json"), cfg, records, time.perf_counter() - t0)
    return path, records


def run_baseline(cfg: ExperimentConfig, out_path=None) -> tuple:
    """Unquantized RPCA over SNR x trials with the same trial seeds as :func:`run_sweep`."""
    t0 = time.perf_counter()
    records = _run_cells(cfg, [(snr, None) for snr in cfg.snr_db])
    path = Path(out_path) if out_path else cfg.out_dir / "baseline.csv"
    write_csv(path, records)
    write_manifest(path.with_suffix(".json"), cfg, records, time.perf_counter() - t0)
    return path, records


def write_residual_map(path, grid: SearchGrid, rmap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "y_m", "residual"])
        for i, x in enumerate(grid.xs):
            for j, y in enumerate(grid.ys):
                w.writerow([_fmt(float(x)), _fmt(float(y)), _fmt(float(rmap[i, j]))])
    return path


def write_doppler_spectra(path, xi_matrices: dict, t_pri: float, zero_pad: int) -> Path:
    from .estimator import doppler_spectrum

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "k", "freq_hz", "magnitude"])
        for (m, n), xi in sorted(xi_matrices.items()):
            for k, row in enumerate(xi):
                freqs, mag = doppler_spectrum(row, t_pri, zero_pad)
                for f, a in zip(freqs, mag):
                    w.writerow([m, n, k, _fmt(float(f)), _fmt(float(a))])
    return path


def run_locate(cfg: ExperimentConfig, snr_db: float, bits: int | None, out_dir=None) -> tuple:
    """Repeated single-scene estimation (position/velocity) with diagnostics of trial 0."""
    out_dir = Path(out_dir) if out_dir else cfg.out_dir
    records = _run_cells(cfg, [(snr_db, bits)])
    write_csv(out_dir / "locate.csv", records)
    data = generate_trial(cfg, snr_db, bits, trial_seed(cfg.seed, 0))
    x_hat = {k: s.x_hat for k, s in recover(cfg, data).items()}
    est = estimate_targets(x_hat, cfg.grid, cfg.scene, cfg.k_targets, cfg.zero_pad)
    write_residual_map(out_dir / "residual_map.csv", cfg.grid, est.position_residual_map)
    write_doppler_spectra(out_dir / "doppler.csv", est.xi_matrices, cfg.scene.t_pri, cfg.zero_pad)
    summary = {"theta_p": est.theta_p, "theta_v": est.theta_v,
               "truth_p": [t.position for t in data.targets],
               "truth_v": [t.velocity for t in data.targets]}
    (out_dir / "locate.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
    return records, est


def record_dict(r: SweepRecord) -> dict:
    return asdict(r)
