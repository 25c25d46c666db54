"""Evaluation harness: calibration errors, issue mAP, correlation, early
warning lead time, threshold sensitivity and AUSE."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import NUM_MODES, DataError, Mode, read_mask
from .labelgen import LabelRecord
from .synthesis import SPATIAL_MODES

log = logging.getLogger(__name__)

# Published full-model numbers. They need the trained network, a real detector
# and real datasets, so they are reported for context and never asserted.
REFERENCE_VALUES = {
    "health_mae": 0.064,
    "issue_map": 0.891,
    "ause": 0.042,
    "mean_lead_tau_0.8": "0.47 +/- 0.25",
    "dawn_balanced_accuracy": "84.2%",
}


def health_mae(pred: Sequence[float], target: Sequence[float]) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("health_mae needs at least one sample")
    return float(np.mean(np.abs(pred - target)))


def severity_mae(pred, target, presence) -> float:
    """MAE over (sample, mode) cells whose mode is active in the target."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    active = np.asarray(presence, dtype=bool)
    if not (pred.shape == target.shape == active.shape):
        raise ValueError("severity arrays are not aligned")
    if not active.any():
        raise ValueError("no active degradation cells to score")
    return float(np.mean(np.abs(pred[active] - target[active])))


def average_precision(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """All-points interpolated AP; equal scores keep their input order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    npos = int(labels.sum())
    if npos == 0:
        raise ValueError("AP undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    # index of the best precision at or below each rank; distinct rationals
    # with these denominators stay distinct as floats, so argmax is exact
    best = np.empty(len(hits), dtype=np.int64)
    j = len(hits) - 1
    for k in range(len(hits) - 1, -1, -1):
        if precision[k] > precision[j]:
            j = k
        best[k] = j
    idx, counts = np.unique(best[hits], return_counts=True)
    # summed as exact rationals so the result is correctly rounded
    total = sum(Fraction(int(c) * int(tp[i]), int(i) + 1) for i, c in zip(idx, counts))
    return float(total / npos)


@dataclass
class IssueMap:
    mean_ap: float
    per_mode: dict[Mode, float]
    excluded: list[Mode]


def issue_map(scores, targets) -> IssueMap:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=bool)
    if scores.shape != targets.shape or scores.ndim != 2 or scores.shape[1] != NUM_MODES:
        raise ValueError(f"expected aligned (N, {NUM_MODES}) arrays")
    per_mode, excluded = {}, []
    for m in Mode:
        if targets[:, m].any():
            per_mode[m] = average_precision(scores[:, m], targets[:, m])
        else:
            excluded.append(m)
    if not per_mode:
        raise ValueError("no mode has a positive sample")
    return IssueMap(float(np.mean(list(per_mode.values()))), per_mode, excluded)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("pearson needs two equal-length series of >= 3 values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for a constant series")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


# -- early warning ---------------------------------------------------------------------


@dataclass(frozen=True)
class PerformanceCurve:
    mode: Mode
    severities: tuple[float, ...]
    scores: tuple[float, ...]
    kind: str = "health"

    def __post_init__(self):
        s = tuple(float(v) for v in self.severities)
        v = tuple(float(x) for x in self.scores)
        if len(s) != len(v) or len(s) < 2:
            raise ValueError("a curve needs >= 2 (severity, score) points")
        if any(b <= a for a, b in zip(s, s[1:])) or s[0] < 0 or s[-1] > 1:
            raise ValueError("curve severities must be ascending and unique within [0, 1]")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "severities", s)
        object.__setattr__(self, "scores", v)

    @classmethod
    def from_points(cls, mode, points: Iterable[tuple[float, float]], kind="health") -> "PerformanceCurve":
        pts = sorted(points)
        return cls(mode, tuple(p[0] for p in pts), tuple(p[1] for p in pts), kind)

    def at(self, s: float) -> float | None:
        for sv, v in zip(self.severities, self.scores):
            if abs(sv - s) < 1e-9:
                return v
        return None


@dataclass(frozen=True)
class EarlyWarningConfig:
    tau_h: float = 0.8
    delta: float = 0.20

    def __post_init__(self):
        if not 0 < self.tau_h <= 1:
            raise ValueError(f"tau_h must lie in (0, 1], got {self.tau_h}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


class LeadStatus(enum.Enum):
    LEAD = "lead"
    NO_FAILURE = "N/F"
    NO_WARNING = "N/W"


@dataclass(frozen=True)
class LeadTimeResult:
    mode: Mode
    s_warn: float | None
    s_fail: float | None
    lead: float | None
    status: LeadStatus

    def render(self) -> str:
        if self.status is LeadStatus.LEAD:
            return f"{self.lead:.2f}"
        return self.status.value


def first_crossing(curve: PerformanceCurve, threshold: float) -> float | None:
    for s, v in zip(curve.severities, curve.scores):
        if v < threshold:
            return s
    return None


def lead_time(health: PerformanceCurve, detector: PerformanceCurve, cfg: EarlyWarningConfig = EarlyWarningConfig()) -> LeadTimeResult:
    """Severity gap between the first health warning and the first detector failure."""
    if health.mode != detector.mode:
        raise ValueError(f"mode mismatch: {health.mode.key} vs {detector.mode.key}")
    clean = detector.at(0.0)
    if clean is None:
        raise ValueError(f"detector curve for {detector.mode.key} lacks the clean s=0 point")
    s_warn = first_crossing(health, cfg.tau_h)
    s_fail = first_crossing(detector, (1.0 - cfg.delta) * clean)
    if s_fail is None:
        return LeadTimeResult(health.mode, s_warn, None, None, LeadStatus.NO_FAILURE)
    if s_warn is None:
        return LeadTimeResult(health.mode, None, s_fail, None, LeadStatus.NO_WARNING)
    return LeadTimeResult(health.mode, s_warn, s_fail, round(s_fail - s_warn, 12), LeadStatus.LEAD)


@dataclass(frozen=True)
class SweepRow:
    tau: float
    mean_lead: float
    std_population: float
    std_sample: float
    n_lead: int
    warning_rate: float
    trigger_rate: float
    n_failure_modes: int
    n_modes: int


def threshold_sweep(pairs: Sequence[tuple[PerformanceCurve, PerformanceCurve]], taus: Sequence[float],
                    cfg: EarlyWarningConfig = EarlyWarningConfig()) -> list[SweepRow]:
    if not pairs or not taus:
        raise ValueError("threshold_sweep needs curve pairs and thresholds")
    rows = []
    for tau in taus:
        c = EarlyWarningConfig(tau, cfg.delta)
        results = [lead_time(h, d, c) for h, d in pairs]
        leads = np.array([r.lead for r in results if r.status is LeadStatus.LEAD])
        failing = [r for r in results if r.s_fail is not None]
        warned_early = [r for r in failing if r.s_warn is not None and r.s_warn <= r.s_fail]
        rows.append(
            SweepRow(
                tau=float(tau),
                mean_lead=float(leads.mean()) if leads.size else float("nan"),
                std_population=float(leads.std()) if leads.size else float("nan"),
                std_sample=float(leads.std(ddof=1)) if leads.size > 1 else float("nan"),
                n_lead=int(leads.size),
                warning_rate=len(warned_early) / len(failing) if failing else float("nan"),
                trigger_rate=sum(r.s_warn is not None for r in results) / len(results),
                n_failure_modes=len(failing),
                n_modes=len(results),
            )
        )
    return rows


# -- sparsification -----------------------------------------------------------------------

AUSE_STEPS = 50


@dataclass(frozen=True)
class Sparsification:
    fractions: np.ndarray
    predicted: np.ndarray
    oracle: np.ndarray
    ause: float
    constant_uncertainty: bool


def _removed_counts(n: int, steps: int) -> np.ndarray:
    return np.minimum(np.arange(steps + 1) * n // steps, n - 1)


def sparsification(uncertainty, error, steps: int = AUSE_STEPS) -> Sparsification:
    """Sparsification curves and the area between them.

    Pixels are removed in order of decreasing uncertainty and the mean error
    of the remainder is tracked; the oracle removes by decreasing true error.
    Tied uncertainties are handled in expectation, as if their order were
    random. Both curves are divided by the maximum error so the area lies in
    [0, 1].
    """
    u = np.asarray(uncertainty, dtype=np.float64).ravel()
    e = np.asarray(error, dtype=np.float64).ravel()
    if u.shape != e.shape:
        raise ValueError(f"uncertainty and error sizes differ: {u.size} vs {e.size}")
    n = e.size
    if n == 0:
        raise ValueError("empty maps")
    fractions = np.arange(steps + 1) / steps
    k = _removed_counts(n, steps)
    const = bool(np.all(u == u[0]))
    scale = e.max()
    if scale <= 0:
        zeros = np.zeros(steps + 1)
        return Sparsification(fractions, zeros, zeros.copy(), 0.0, const)
    total = e.sum()

    order = np.argsort(-u, kind="stable")
    us, es = u[order], e[order]
    starts = np.flatnonzero(np.r_[True, us[1:] != us[:-1]])
    ends = np.r_[starts[1:], n]
    cum = np.r_[0.0, np.cumsum(es)]
    g = np.searchsorted(starts, k, side="right") - 1
    gmean = (cum[ends[g]] - cum[starts[g]]) / (ends[g] - starts[g])
    removed = cum[starts[g]] + (k - starts[g]) * gmean
    pred = (total - removed) / (n - k)

    ocum = np.r_[0.0, np.cumsum(np.sort(e)[::-1])]
    oracle = (total - ocum[k]) / (n - k)

    pred, oracle = pred / scale, oracle / scale
    area = float(np.trapezoid(pred - oracle, fractions))
    return Sparsification(fractions, pred, oracle, min(1.0, max(0.0, area)), const)


def ause(uncertainty, error, steps: int = AUSE_STEPS) -> float:
    return sparsification(uncertainty, error, steps).ause


# -- dataset-level report -------------------------------------------------------------------


@dataclass
class Prediction:
    image_id: str
    presence: list[float]
    severities: list[float]
    health: float
    uncertainty_path: str | None = None

    def to_json(self) -> str:
        d = {
            "image_id": self.image_id,
            "presence": self.presence,
            "severities": self.severities,
            "health": self.health,
        }
        if self.uncertainty_path is not None:
            d["uncertainty_path"] = self.uncertainty_path
        return json.dumps(d, separators=(",", ":"))


def read_predictions(path: str | Path) -> list[Prediction]:
    try:
        rows = [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
        return [Prediction(**r) for r in rows]
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc


def read_detector_curves(path: str | Path) -> dict[Mode, PerformanceCurve]:
    pts: dict[Mode, list] = defaultdict(list)
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                pts[Mode.parse(row["mode"])].append((float(row["severity"]), float(row["map"])))
        return {m: PerformanceCurve.from_points(m, p, "detector_map") for m, p in pts.items()}
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read detector curves {path}: {exc}") from exc


def health_curves(records: Sequence[LabelRecord], health: Mapping[str, float]) -> dict[Mode, PerformanceCurve]:
    """Mean predicted health per (mode, severity).

    Sweep records are grouped by their swept mode. Otherwise single-mode
    records are binned to the nearest 0.1 and clean records count as s = 0
    for every mode.
    """
    bins: dict[Mode, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    swept = [r for r in records if r.sweep and r.image_id in health]
    if swept:
        for r in swept:
            bins[Mode.parse(r.sweep["mode"])][round(float(r.sweep["severity"]), 6)].append(health[r.image_id])
    else:
        for r in records:
            if r.image_id not in health:
                continue
            if not r.modes:
                for m in Mode:
                    bins[m][0.0].append(health[r.image_id])
            elif len(r.modes) == 1:
                m = Mode.parse(r.modes[0]["mode"])
                bins[m][round(round(r.modes[0]["severity"] * 10) / 10, 6)].append(health[r.image_id])
    curves = {}
    for m, b in bins.items():
        if len(b) >= 2:
            curves[m] = PerformanceCurve.from_points(m, [(s, float(np.mean(v))) for s, v in b.items()])
    return curves


@dataclass
class Report:
    n_samples: int
    missing_predictions: list[str]
    unmatched_predictions: list[str]
    health_mae: float
    severity_mae: float | None
    issue: IssueMap | None
    ause_per_mode: dict[Mode, float] = field(default_factory=dict)
    ause_constant_flags: int = 0
    correlation: dict[Mode, float] = field(default_factory=dict)
    lead: dict[Mode, LeadTimeResult] = field(default_factory=dict)
    sweep: list[SweepRow] = field(default_factory=list)
    health_curves: dict[Mode, PerformanceCurve] = field(default_factory=dict)

    def summary(self) -> str:
        out = io.StringIO()
        out.write("published reference values (trained network + real detector; not reproduced here):\n")
        for k, v in REFERENCE_VALUES.items():
            out.write(f"  {k}: {v}\n")
        out.write(f"samples evaluated: {self.n_samples}\n")
        if self.missing_predictions:
            out.write(f"manifest rows without prediction: {len(self.missing_predictions)}\n")
        if self.unmatched_predictions:
            out.write(f"predictions without manifest row: {len(self.unmatched_predictions)}\n")
        out.write(f"health MAE: {self.health_mae:.4f}\n")
        out.write("severity MAE: " + ("n/a" if self.severity_mae is None else f"{self.severity_mae:.4f}") + "\n")
        if self.issue is not None:
            out.write(f"issue mAP: {self.issue.mean_ap:.4f}")
            if self.issue.excluded:
                out.write(" (excluded, no positives: " + ", ".join(m.key for m in self.issue.excluded) + ")")
            out.write("\n")
        if self.ause_per_mode:
            out.write("AUSE per mode:\n")
            for m, v in sorted(self.ause_per_mode.items()):
                out.write(f"  {m.key:18s} {v:.4f}\n")
        if self.lead:
            out.write("early warning (lead time, correlation with detector score):\n")
            for m in sorted(self.lead):
                c = self.correlation.get(m)
                cs = "n/a" if c is None else f"{c:+.2f}"
                out.write(f"  {m.key:18s} {self.lead[m].render():>6s} {cs:>6s}\n")
        for row in self.sweep:
            out.write(
                f"tau={row.tau:.2f}: lead {row.mean_lead:.2f} +/- {row.std_population:.2f} (sample sd {row.std_sample:.2f}),"
                f" warning rate {100 * row.warning_rate:.1f}%, trigger rate {100 * row.trigger_rate:.1f}%\n"
            )
        return out.getvalue()

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(self.summary())
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["n_samples", self.n_samples])
            w.writerow(["health_mae", repr(self.health_mae)])
            w.writerow(["severity_mae", "" if self.severity_mae is None else repr(self.severity_mae)])
            if self.issue is not None:
                w.writerow(["issue_map", repr(self.issue.mean_ap)])
        if self.issue is not None:
            with open(out / "issue_ap.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["mode", "ap", "evaluated"])
                for m in Mode:
                    ap = self.issue.per_mode.get(m)
                    w.writerow([m.key, "" if ap is None else repr(ap), ap is not None])
        if self.ause_per_mode:
            with open(out / "ause.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["mode", "ause"])
                for m, v in sorted(self.ause_per_mode.items()):
                    w.writerow([m.key, repr(v)])
        if self.health_curves:
            with open(out / "health_curves.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["mode", "severity", "health"])
                for m, c in sorted(self.health_curves.items()):
                    for s, v in zip(c.severities, c.scores):
                        w.writerow([m.key, s, repr(v)])
        if self.lead:
            with open(out / "lead_time.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["mode", "s_warn", "s_fail", "lead", "status", "pearson"])
                for m in sorted(self.lead):
                    r = self.lead[m]
                    w.writerow([m.key, r.s_warn, r.s_fail, r.lead, r.status.value, self.correlation.get(m)])
        if self.sweep:
            with open(out / "threshold_sweep.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["tau", "mean_lead", "std_population", "std_sample", "n_lead",
                            "warning_rate", "trigger_rate", "n_failure_modes", "n_modes"])
                for r in self.sweep:
                    w.writerow([r.tau, r.mean_lead, r.std_population, r.std_sample, r.n_lead,
                                r.warning_rate, r.trigger_rate, r.n_failure_modes, r.n_modes])


def evaluate_manifest(
    records: Sequence[LabelRecord],
    predictions: Sequence[Prediction],
    detector: Mapping[Mode, PerformanceCurve] | None = None,
    cfg: EarlyWarningConfig = EarlyWarningConfig(),
    taus: Sequence[float] = (0.7, 0.8, 0.9),
    dataset_dir: str | Path = ".",
    predictions_dir: str | Path = ".",
) -> Report:
    """Aggregate all metrics over the manifest/prediction intersection."""
    preds = {p.image_id: p for p in predictions}
    ids = {r.image_id for r in records}
    missing = sorted(ids - preds.keys())
    unmatched = sorted(preds.keys() - ids)
    rows = [r for r in records if r.image_id in preds]
    if not rows:
        raise DataError("no image_id shared between manifest and predictions")
    if missing or unmatched:
        log.warning("%d manifest rows lack predictions, %d predictions lack rows", len(missing), len(unmatched))

    ph = [preds[r.image_id].health for r in rows]
    th = [r.health_target for r in rows]
    ps = np.array([preds[r.image_id].severities for r in rows], dtype=np.float64)
    ts = np.array([r.severities() for r in rows])
    presence = np.array([r.presence for r in rows], dtype=bool)
    pp = np.array([preds[r.image_id].presence for r in rows], dtype=np.float64)

    sev = severity_mae(ps, ts, presence) if presence.any() else None
    issue = issue_map(pp, presence) if presence.any() else None

    ause_lists: dict[Mode, list[float]] = defaultdict(list)
    flags = 0
    for r in rows:
        up = preds[r.image_id].uncertainty_path
        if not (r.mask_valid and r.mask and up):
            continue
        truth = read_mask(Path(dataset_dir) / r.mask)
        unc = read_mask(Path(predictions_dir) / up)
        if unc.shape != truth.shape:
            log.warning("%s: uncertainty map shape %s != mask %s", r.image_id, unc.shape, truth.shape)
            continue
        sp = sparsification(unc, truth)
        flags += sp.constant_uncertainty
        for d in r.modes:
            m = Mode.parse(d["mode"])
            if m in SPATIAL_MODES:
                ause_lists[m].append(sp.ause)

    report = Report(
        n_samples=len(rows),
        missing_predictions=missing,
        unmatched_predictions=unmatched,
        health_mae=health_mae(ph, th),
        severity_mae=sev,
        issue=issue,
        ause_per_mode={m: float(np.mean(v)) for m, v in ause_lists.items()},
        ause_constant_flags=flags,
    )
    report.health_curves = health_curves(rows, {r.image_id: preds[r.image_id].health for r in rows})
    if detector:
        pairs = []
        for m, hc in sorted(report.health_curves.items()):
            dc = detector.get(m)
            if dc is None:
                continue
            pairs.append((hc, dc))
            report.lead[m] = lead_time(hc, dc, cfg)
            common = [s for s in hc.severities if dc.at(s) is not None]
            try:
                report.correlation[m] = pearson([hc.at(s) for s in common], [dc.at(s) for s in common])
            except ValueError:
                log.info("%s: correlation undefined (constant curve or < 3 shared points)", m.key)
        if pairs:
            report.sweep = threshold_sweep(pairs, taus, cfg)
    return report
