"""Desk-scale end-to-end run: calibrate the heuristic monitor, sweep, evaluate.

Everything runs on procedural scenes so it needs no downloads. Used by
``scripts/desk_run.py`` and by the acceptance suite.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .core import Mode, read_depth, read_image, read_mask, write_mask
from .evaluation import Prediction, Report, ause, evaluate_manifest
from .labelgen import DEFAULT_GRID, generate_sweep_set
from .monitor import CalibrationTable, calibrate, estimate
from .scenes import write_scenes

log = logging.getLogger(__name__)

REQUIRED_MODES = (Mode.FOG, Mode.MOTION_BLUR, Mode.LOW_LIGHT, Mode.SENSOR_NOISE)
AUSE_MODES = (Mode.LENS_OCCLUSION, Mode.VIGNETTING)
MIN_MONOTONE_MODES = 7
SPEARMAN_GATE = -0.9


@dataclass(frozen=True)
class DeskConfig:
    calib_images: int = 20
    sweep_images: int = 6
    calib_seed: int = 1
    sweep_seed: int = 2
    grid: tuple[float, ...] = DEFAULT_GRID
    jobs: int = 1


@dataclass
class DeskResult:
    spearman: dict[Mode, float]
    ause_heuristic: dict[Mode, float]
    ause_constant: dict[Mode, float]
    report: Report
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def monotone_modes(self) -> list[Mode]:
        return [m for m, r in self.spearman.items() if r <= SPEARMAN_GATE]

    def spearman_gate(self) -> bool:
        ok = self.monotone_modes
        return len(ok) >= MIN_MONOTONE_MODES and all(m in ok for m in REQUIRED_MODES)

    def ause_gate(self) -> bool:
        return all(
            m in self.ause_heuristic and self.ause_heuristic[m] < self.ause_constant[m] for m in AUSE_MODES
        )

    def lines(self) -> list[str]:
        out = []
        for m in Mode:
            r = self.spearman.get(m, float("nan"))
            a = self.ause_heuristic.get(m)
            c = self.ause_constant.get(m)
            extra = "" if a is None else f"  AUSE {a:.4f} (constant map {c:.4f})"
            out.append(f"{m.key:18s} spearman {r:+.3f}{extra}")
        out.append(f"monotone modes: {len(self.monotone_modes)}/12")
        out.append("timings: " + ", ".join(f"{k} {v:.1f}s" for k, v in self.timings.items()))
        return out


def run_desk(work_dir: str | Path, cfg: DeskConfig = DeskConfig()) -> DeskResult:
    work = Path(work_dir)
    t = {}
    t0 = time.perf_counter()
    cal_imgs, cal_deps = write_scenes(work / "calib", cfg.calib_images, seed=cfg.calib_seed)
    sw_imgs, sw_deps = write_scenes(work / "scenes", cfg.sweep_images, seed=cfg.sweep_seed)
    t["scenes"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    table = calibrate([read_image(p) for p in cal_imgs], [read_depth(p) for p in cal_deps], seed=cfg.calib_seed,
                      grid=cfg.grid)
    table.save(work / "calibration.txt")
    t["calibrate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ds = work / "sweep"
    records = generate_sweep_set(sw_imgs, sw_deps, ds, tuple(Mode), cfg.grid, cfg.sweep_seed, cfg.jobs)
    t["sweep"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    preds = predict_records(records, ds, CalibrationTable.load(work / "calibration.txt"), work / "pred")
    t["predict"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = evaluate_manifest(records, preds, dataset_dir=ds, predictions_dir=work / "pred")
    report.write(work / "report")
    spearman = {}
    for m, curve in report.health_curves.items():
        rho = spearmanr(curve.severities, curve.scores)[0]
        spearman[m] = float(rho) if np.isfinite(rho) else 0.0
    constant = _constant_ause(records, ds)
    t["evaluate"] = time.perf_counter() - t0
    return DeskResult(spearman, dict(report.ause_per_mode), constant, report, t)


def predict_records(records, dataset_dir: Path, table: CalibrationTable, out_dir: Path) -> list[Prediction]:
    (out_dir / "uncertainty").mkdir(parents=True, exist_ok=True)
    preds = []
    for r in records:
        o = estimate(read_image(dataset_dir / r.output), table)
        rel = f"uncertainty/{r.image_id}.png"
        write_mask(out_dir / rel, o.uncertainty)
        preds.append(Prediction(r.image_id, o.presence.tolist(), o.severities.tolist(), o.health, rel))
    (out_dir / "predictions.jsonl").write_text("".join(p.to_json() + "\n" for p in preds))
    return preds


def _constant_ause(records, dataset_dir: Path) -> dict[Mode, float]:
    """AUSE of an all-equal uncertainty map over the same masked samples."""
    vals: dict[Mode, list[float]] = {}
    for r in records:
        if not (r.mask_valid and r.mask):
            continue
        truth = read_mask(dataset_dir / r.mask)
        a = ause(np.zeros_like(truth), truth)
        for d in r.modes:
            vals.setdefault(Mode.parse(d["mode"]), []).append(a)
    return {m: float(np.mean(v)) for m, v in vals.items()}
