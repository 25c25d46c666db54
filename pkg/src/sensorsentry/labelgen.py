"""Dataset generation: assignment sampling, rendering, analytic labels, manifests."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    NUM_MODES,
    DataError,
    Mode,
    RiskWeightTable,
    as_unit_map,
    classify_regime,
    default_risk_table,
    encode_png,
    quantize,
    read_depth,
    read_image,
)
from .gshi import compute_gshi, severities_from_modes
from .rng import image_stream, keyed
from .synthesis import (
    DEFAULT_PHYSICS,
    SPATIAL_MODES,
    DegradationParams,
    PhysicsConfig,
    SynthesisResult,
    apply,
    apply_chain,
    compatible,
)

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(round(0.1 * k, 1) for k in range(11))
MAX_PAIR_ATTEMPTS = 20
_ASSIGN_KNOB = 0x5A3D


@dataclass(frozen=True)
class SamplingPolicy:
    clean_fraction: float = 0.15
    two_mode_fraction: float = 0.25
    global_seed: int = 0

    def __post_init__(self):
        for name in ("clean_fraction", "two_mode_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.clean_fraction + self.two_mode_fraction > 1.0 + 1e-12:
            raise ValueError("clean_fraction + two_mode_fraction exceeds 1")


def sample_assignment(policy: SamplingPolicy, image_index: int) -> list[tuple[Mode, float]]:
    """Draw the (mode, severity) list for one image.

    Clean, single-mode and two-mode outcomes are one categorical draw with
    probabilities ``clean_fraction``, the remainder, and ``two_mode_fraction``.
    """
    r = keyed(policy.global_seed, image_index, _ASSIGN_KNOB)
    u = r.random()
    if u < policy.clean_fraction:
        return []
    first = Mode(int(r.integers(NUM_MODES)))
    s1 = float(r.random())
    out = [(first, s1)]
    if u < policy.clean_fraction + policy.two_mode_fraction:
        for _ in range(MAX_PAIR_ATTEMPTS):
            second = Mode(int(r.integers(NUM_MODES)))
            s2 = float(r.random())
            if compatible(first, s1, second, s2):
                out.append((second, s2))
                break
        else:
            log.info("image %d: no compatible second mode after %d draws", image_index, MAX_PAIR_ATTEMPTS)
    return out


def compose_masks(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Pointwise maximum of footprint masks."""
    if not masks:
        raise ValueError("no masks to compose")
    first = as_unit_map(masks[0], what="mask")
    out = first.copy()
    for m in masks[1:]:
        np.maximum(out, as_unit_map(m, shape=first.shape, what="mask"), out=out)
    return out


@dataclass
class LabelRecord:
    image_id: str
    source: str
    output: str
    mask: str | None
    mask_valid: bool
    modes: list[dict]
    presence: list[bool]
    health_target: float
    regime: str
    seed: int
    sweep: dict | None = field(default=None)

    @classmethod
    def build(cls, image_id, source, output, mask, modes, seed, table=None, sweep=None) -> "LabelRecord":
        active = [(Mode(m), float(s)) for m, s in modes if s > 0]
        sev = severities_from_modes(active)
        h = compute_gshi(sev, table or default_risk_table())
        presence = [False] * NUM_MODES
        for m, _ in active:
            presence[m] = True
        return cls(
            image_id=image_id,
            source=str(source),
            output=output,
            mask=mask,
            mask_valid=mask is not None,
            modes=[{"mode": m.key, "severity": s} for m, s in active],
            presence=presence,
            health_target=h,
            regime=classify_regime(h).label,
            seed=int(seed),
            sweep=sweep,
        )

    def severities(self) -> np.ndarray:
        return severities_from_modes((Mode.parse(d["mode"]), d["severity"]) for d in self.modes)

    def to_json(self) -> str:
        d = asdict(self)
        if d["sweep"] is None:
            del d["sweep"]
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "LabelRecord":
        return cls(**json.loads(line))


def read_manifest(path: str | Path) -> list[LabelRecord]:
    try:
        lines = Path(path).read_text().splitlines()
        return [LabelRecord.from_json(ln) for ln in lines if ln.strip()]
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc


def write_manifest(path: str | Path, records: Iterable[LabelRecord]) -> None:
    records = sorted(records, key=lambda r: r.image_id)
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def severity_sweep(image, depth, mode: Mode, grid: Sequence[float] = DEFAULT_GRID, rng_stream: int = 0,
                   physics: PhysicsConfig = DEFAULT_PHYSICS) -> list[SynthesisResult]:
    """Render one mode over a severity grid with the stochastic knobs held fixed."""
    grid = [float(g) for g in grid]
    if any(not 0.0 <= g <= 1.0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("severity grid must be ascending within [0, 1]")
    return [apply(image, depth, DegradationParams(mode, s, rng_stream), physics) for s in grid]


# -- dataset writing ----------------------------------------------------------------


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class _Job:
    index: int
    image_id: str
    source: str
    depth: str | None
    modes: tuple
    stream: int
    out_dir: str
    table_cfg: str
    physics: PhysicsConfig
    sweep: dict | None = None


def _load_pair(source: str, depth: str | None):
    img = read_image(source)
    dmap = None
    if depth is not None:
        dmap = read_depth(depth)
        if dmap.shape != img.shape[:2]:
            raise DataError(f"depth {depth} is {dmap.shape}, image is {img.shape[:2]}")
    return img, dmap


def _resume(job: _Job) -> LabelRecord | None:
    state = Path(job.out_dir) / "state" / f"{job.image_id}.json"
    if not state.exists():
        return None
    try:
        saved = json.loads(state.read_text())
        rec = LabelRecord(**saved["record"])
        for rel, digest in saved["hashes"].items():
            p = Path(job.out_dir) / rel
            if not p.exists() or _sha(p) != digest:
                return None
        return rec
    except (ValueError, KeyError, TypeError):
        return None


def _run_job(job: _Job) -> tuple[LabelRecord | None, dict | None]:
    done = _resume(job)
    if done is not None:
        return done, None
    out = Path(job.out_dir)
    try:
        img, dmap = _load_pair(job.source, job.depth)
        params = [DegradationParams(m, s, job.stream) for m, s in job.modes]
        if params:
            res = apply_chain(img, dmap, params, job.physics)
        else:
            res = SynthesisResult(img.copy(), None, False)
    except (DataError, ValueError) as exc:
        return None, {"image_id": job.image_id, "source": job.source, "error": str(exc)}
    table = RiskWeightTable.from_config(job.table_cfg)
    rel_img = f"images/{job.image_id}.png"
    (out / rel_img).write_bytes(encode_png(res.image))
    hashes = {rel_img: _sha(out / rel_img)}
    rel_mask = None
    active_spatial = any(Mode(m) in SPATIAL_MODES and s > 0 for m, s in job.modes)
    if res.mask_valid and active_spatial:
        rel_mask = f"masks/{job.image_id}.png"
        (out / rel_mask).write_bytes(encode_png(quantize(res.mask * 255.0)))
        hashes[rel_mask] = _sha(out / rel_mask)
    rec = LabelRecord.build(job.image_id, job.source, rel_img, rel_mask, job.modes, job.stream, table, job.sweep)
    state = {"record": asdict(rec), "hashes": hashes}
    (out / "state" / f"{job.image_id}.json").write_text(json.dumps(state, sort_keys=True))
    return rec, None


def _execute(jobs: list[_Job], out_dir: Path, workers: int) -> tuple[list[LabelRecord], list[dict]]:
    for sub in ("images", "masks", "state"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_job(j) for j in jobs]
    records = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    write_manifest(out_dir / "manifest.jsonl", records)
    errors.sort(key=lambda e: e["image_id"])
    (out_dir / "errors.jsonl").write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in errors))
    for e in errors:
        log.warning("record %s failed: %s", e["image_id"], e["error"])
    return sorted(records, key=lambda r: r.image_id), errors


def generate_dataset(
    policy: SamplingPolicy,
    sources: Sequence[str | Path],
    depths: Sequence[str | Path | None],
    out_dir: str | Path,
    count: int | None = None,
    jobs: int = 1,
    table: RiskWeightTable | None = None,
    physics: PhysicsConfig = DEFAULT_PHYSICS,
) -> list[LabelRecord]:
    """Render ``count`` samples (cycling through ``sources``) and write a manifest.

    Writes ``images/``, ``masks/``, ``manifest.jsonl`` and ``errors.jsonl``
    under ``out_dir``. Records already rendered with matching output hashes
    are reused.
    """
    if len(sources) != len(depths):
        raise ValueError("sources and depths must pair up")
    out_dir = Path(out_dir)
    n = len(sources) if count is None else int(count)
    if not sources:
        n = 0
    table_cfg = (table or default_risk_table()).to_config()
    work = []
    for i in range(n):
        k = i % len(sources)
        work.append(
            _Job(
                index=i,
                image_id=f"{i:06d}",
                source=str(sources[k]),
                depth=None if depths[k] is None else str(depths[k]),
                modes=tuple(sample_assignment(policy, i)),
                stream=image_stream(policy.global_seed, i),
                out_dir=str(out_dir),
                table_cfg=table_cfg,
                physics=physics,
            )
        )
    records, _ = _execute(work, out_dir, jobs)
    return records


def generate_sweep_set(
    sources: Sequence[str | Path],
    depths: Sequence[str | Path | None],
    out_dir: str | Path,
    modes: Sequence[Mode] = tuple(Mode),
    grid: Sequence[float] = DEFAULT_GRID,
    seed: int = 0,
    jobs: int = 1,
    table: RiskWeightTable | None = None,
    physics: PhysicsConfig = DEFAULT_PHYSICS,
) -> list[LabelRecord]:
    """Render every source across ``grid`` for each mode.

    Knobs stay fixed per source so only severity varies along a sweep.
    Records carry an extra ``sweep`` field naming the swept mode and grid
    severity, which lets the evaluator build health-versus-severity curves.
    """
    if len(sources) != len(depths):
        raise ValueError("sources and depths must pair up")
    grid = [float(g) for g in grid]
    table_cfg = (table or default_risk_table()).to_config()
    work = []
    for k, src in enumerate(sources):
        stream = image_stream(seed, k)
        for m in modes:
            m = Mode(m)
            for s in grid:
                iid = f"{k:04d}_{m.key}_{int(round(s * 1000)):04d}"
                work.append(
                    _Job(
                        index=len(work),
                        image_id=iid,
                        source=str(src),
                        depth=None if depths[k] is None else str(depths[k]),
                        modes=((m, s),) if s > 0 else (),
                        stream=stream,
                        out_dir=str(out_dir),
                        table_cfg=table_cfg,
                        physics=physics,
                        sweep={"mode": m.key, "severity": s, "source_index": k},
                    )
                )
    records, _ = _execute(work, Path(out_dir), jobs)
    return records
