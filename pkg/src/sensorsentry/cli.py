"""Command line entry point: ``sensorsentry <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Structured results go to
files (or one JSON line on stdout for ``score`` and ``monitor``); logs and the
resolved configuration go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import (
    DataError,
    Mode,
    RiskWeightTable,
    classify_regime,
    default_risk_table,
    read_depth,
    read_image,
    severity_vector,
    write_image,
    write_mask,
)
from .evaluation import EarlyWarningConfig, Prediction, evaluate_manifest, read_detector_curves, read_predictions
from .gshi import compute_gshi
from .labelgen import DEFAULT_GRID, SamplingPolicy, generate_dataset, generate_sweep_set, read_manifest
from .monitor import CalibrationError, CalibrationTable, calibrate, estimate
from .rng import default_seed, image_stream
from .synthesis import DegradationParams, apply_chain

log = logging.getLogger("sensorsentry")

IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg", ".bmp")
DEPTH_SUFFIXES = (".png", ".pgm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _pairs(text: str) -> list[tuple[Mode, float]]:
    """Parse ``fog=0.4,noise=0.2`` into (mode, severity) pairs."""
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected MODE=SEVERITY, got {item!r}")
        name, val = item.split("=", 1)
        try:
            mode, sev = Mode.parse(name), float(val)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
        if not 0.0 <= sev <= 1.0:
            raise argparse.ArgumentTypeError(f"severity for {name} must lie in [0, 1]")
        out.append((mode, sev))
    if len({m for m, _ in out}) != len(out):
        raise argparse.ArgumentTypeError("a mode may appear only once")
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def _modes(text: str) -> list[Mode]:
    if text.strip().lower() == "all":
        return list(Mode)
    try:
        return [Mode.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default: $SENSORSENTRY_SEED or built-in)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--risk-table", type=Path, default=None, help="risk weight table (INI) overriding the default")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = _Parser(prog="sensorsentry", description="Camera degradation synthesis, health scoring and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    d = sub.add_parser("degrade", parents=[common], help="apply degradations to one image")
    d.add_argument("--image", type=Path, required=True)
    d.add_argument("--depth", type=Path)
    d.add_argument("--apply", dest="modes", type=_pairs, required=True, help="MODE=S[,MODE=S]")
    d.add_argument("--out", type=Path, required=True, help="output image path")
    d.add_argument("--mask-out", type=Path, help="footprint mask path (spatial modes)")
    d.add_argument("--index", type=int, default=0, help="image index feeding the random stream")

    g = sub.add_parser("gen-dataset", parents=[common], help="render a labelled dataset")
    g.add_argument("--src", type=Path, required=True)
    g.add_argument("--depth", type=Path)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--clean-frac", type=_fraction, default=SamplingPolicy.clean_fraction)
    g.add_argument("--two-mode-frac", type=_fraction, default=SamplingPolicy.two_mode_fraction)
    g.add_argument("--count", type=int)

    s = sub.add_parser("sweep", parents=[common], help="render per-mode severity sweeps")
    s.add_argument("--src", type=Path, required=True)
    s.add_argument("--depth", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--modes", type=_modes, default=list(Mode))
    s.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))

    sc = sub.add_parser("score", parents=[common], help="health score of a severity vector")
    sc.add_argument("--severities", type=_pairs, required=True, help="MODE=S[,MODE=S]; unlisted modes are 0")

    m = sub.add_parser("monitor", parents=[common], help="run the heuristic monitor on one image")
    m.add_argument("--calib", type=Path, required=True)
    m.add_argument("--image", type=Path, required=True)
    m.add_argument("--uncertainty-out", type=Path)

    c = sub.add_parser("calibrate", parents=[common], help="fit the heuristic monitor on clean images")
    c.add_argument("--src", type=Path, required=True)
    c.add_argument("--depth", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))

    pm = sub.add_parser("predict-manifest", parents=[common], help="monitor every image of a manifest")
    pm.add_argument("--calib", type=Path, required=True)
    pm.add_argument("--manifest", type=Path, required=True)
    pm.add_argument("--out", type=Path, required=True, help="predictions JSONL")
    pm.add_argument("--no-maps", action="store_true", help="skip writing uncertainty maps")

    e = sub.add_parser("evaluate", parents=[common], help="score predictions against a manifest")
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--detector", type=Path)
    e.add_argument("--tau", type=float, default=EarlyWarningConfig.tau_h)
    e.add_argument("--delta", type=float, default=EarlyWarningConfig.delta)
    e.add_argument("--tau-sweep", type=_floats, default=[0.7, 0.8, 0.9])
    e.add_argument("--out", type=Path, required=True)

    sub.add_parser("show-table", parents=[common], help="print the risk weight table")
    return p


# -- helpers ---------------------------------------------------------------------------


def _list_images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images in {directory}")
    return files


def _match_depths(images: Sequence[Path], depth_dir: Path | None) -> list[Path | None]:
    if depth_dir is None:
        return [None] * len(images)
    if not depth_dir.is_dir():
        raise DataError(f"not a directory: {depth_dir}")
    out = []
    for img in images:
        hits = [depth_dir / (img.stem + suf) for suf in DEPTH_SUFFIXES if (depth_dir / (img.stem + suf)).exists()]
        out.append(hits[0] if hits else None)
        if not hits:
            log.warning("no depth map for %s", img.name)
    return out


def _risk_table(args) -> RiskWeightTable:
    if args.risk_table is None:
        return default_risk_table()
    try:
        return RiskWeightTable.load(args.risk_table)
    except OSError as exc:
        raise DataError(f"cannot read risk table {args.risk_table}: {exc}") from exc


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, Mode):
        return v.key
    if isinstance(v, tuple) and len(v) == 2 and isinstance(v[0], Mode):
        return {"mode": v[0].key, "severity": v[1]}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def resolved_config(args, table: RiskWeightTable) -> dict:
    cfg = {k: _jsonable(v) for k, v in sorted(vars(args).items())}
    cfg["exponents"] = {m.key: table.exponent(m) for m in Mode}
    return cfg


def _record_config(cfg: dict, out_dir: Path | None) -> None:
    text = json.dumps(cfg, sort_keys=True)
    log.info("resolved config: %s", text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")


# -- subcommands -----------------------------------------------------------------------


def cmd_degrade(args, table):
    img = read_image(args.image)
    depth = read_depth(args.depth) if args.depth else None
    params = [DegradationParams(m, s, image_stream(args.seed, args.index)) for m, s in args.modes]
    res = apply_chain(img, depth, params)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_image(args.out, res.image)
    if args.mask_out is not None:
        if not res.mask_valid:
            log.warning("no spatial mode applied; mask not written")
        else:
            write_mask(args.mask_out, res.mask)
    h = compute_gshi(severity_vector({m: s for m, s in args.modes}), table)
    print(f"wrote {args.out} (H={h:.4f}, {classify_regime(h).label})")
    return 0


def cmd_gen_dataset(args, table):
    srcs = _list_images(args.src)
    deps = _match_depths(srcs, args.depth)
    policy = SamplingPolicy(args.clean_frac, args.two_mode_frac, args.seed)
    t0 = time.perf_counter()
    recs = generate_dataset(policy, srcs, deps, args.out, args.count, args.jobs, table)
    print(f"{len(recs)} records written to {args.out / 'manifest.jsonl'} in {time.perf_counter() - t0:.1f}s")
    return 0


def cmd_sweep(args, table):
    srcs = _list_images(args.src)
    deps = _match_depths(srcs, args.depth)
    recs = generate_sweep_set(srcs, deps, args.out, args.modes, args.grid, args.seed, args.jobs, table)
    print(f"{len(recs)} sweep records written to {args.out / 'manifest.jsonl'}")
    return 0


def cmd_score(args, table):
    sev = severity_vector({m: s for m, s in args.severities})
    h = compute_gshi(sev, table)
    rec = {"severities": {m.key: float(sev[m]) for m in Mode}, "health": h, "regime": classify_regime(h).label}
    print(json.dumps(rec))
    return 0


def cmd_monitor(args, table):
    cal = CalibrationTable.load(args.calib)
    out = estimate(read_image(args.image), cal, table)
    rec = {"image": str(args.image), **out.record()}
    rec["regime"] = classify_regime(out.health).label
    if args.uncertainty_out is not None:
        write_mask(args.uncertainty_out, out.uncertainty)
        rec["uncertainty_path"] = str(args.uncertainty_out)
    print(json.dumps(rec))
    return 0


def cmd_calibrate(args, table):
    srcs = _list_images(args.src)
    deps = _match_depths(srcs, args.depth)
    if any(d is None for d in deps):
        raise DataError("calibration needs a depth map for every image")
    images = [read_image(p) for p in srcs]
    depths = [read_depth(p) for p in deps]
    cal = calibrate(images, depths, seed=args.seed, grid=args.grid)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    cal.save(args.out)
    print(f"calibration for {len(images)} images written to {args.out}")
    return 0


def cmd_predict_manifest(args, table):
    cal = CalibrationTable.load(args.calib)
    records = read_manifest(args.manifest)
    root = args.manifest.parent
    args.out.parent.mkdir(parents=True, exist_ok=True)
    map_dir = args.out.parent / "uncertainty"
    lines = []
    for r in records:
        out = estimate(read_image(root / r.output), cal, table)
        rel = None
        if not args.no_maps:
            map_dir.mkdir(exist_ok=True)
            rel = f"uncertainty/{r.image_id}.png"
            write_mask(args.out.parent / rel, out.uncertainty)
        pred = Prediction(r.image_id, [float(v) for v in out.presence], [float(v) for v in out.severities], out.health, rel)
        lines.append(pred.to_json())
    args.out.write_text("".join(ln + "\n" for ln in lines))
    print(f"{len(lines)} predictions written to {args.out}")
    return 0


def cmd_evaluate(args, table):
    records = read_manifest(args.manifest)
    preds = read_predictions(args.pred)
    detector = read_detector_curves(args.detector) if args.detector else None
    cfg = EarlyWarningConfig(args.tau, args.delta)
    report = evaluate_manifest(records, preds, detector, cfg, args.tau_sweep, args.manifest.parent, args.pred.parent)
    report.write(args.out)
    print(report.summary(), end="")
    return 0


def cmd_show_table(args, table):
    print(f"{'mode':18s} {'group':16s} {'w':>5s} {'alpha':>6s} {'w*alpha':>8s}")
    for m, w, a, e in table.rows():
        print(f"{m.key:18s} {m.group.value:16s} {w:5.2f} {a:6.2f} {e:8.4f}")
    return 0


COMMANDS = {
    "degrade": cmd_degrade,
    "gen-dataset": cmd_gen_dataset,
    "sweep": cmd_sweep,
    "score": cmd_score,
    "monitor": cmd_monitor,
    "calibrate": cmd_calibrate,
    "predict-manifest": cmd_predict_manifest,
    "evaluate": cmd_evaluate,
    "show-table": cmd_show_table,
}

# commands whose outputs live in a directory that also receives run_config.json
_OUT_DIR = {
    "degrade": lambda a: a.out.parent,
    "gen-dataset": lambda a: a.out,
    "sweep": lambda a: a.out,
    "calibrate": lambda a: a.out.parent,
    "predict-manifest": lambda a: a.out.parent,
    "evaluate": lambda a: a.out,
}


def _setup_logging(level: str) -> None:
    """Route package logs to the current stderr, replacing any handler from an earlier run."""
    pkg = logging.getLogger("sensorsentry")
    for h in [h for h in pkg.handlers if getattr(h, "_cli_owned", False)]:
        pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._cli_owned = True
    pkg.addHandler(handler)
    pkg.setLevel(level)
    pkg.propagate = False


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    _setup_logging(args.log_level)
    if args.seed is None:
        args.seed = default_seed()
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        table = _risk_table(args)
        out_dir = _OUT_DIR.get(args.command)
        _record_config(resolved_config(args, table), out_dir(args) if out_dir else None)
        return COMMANDS[args.command](args, table)
    except (DataError, CalibrationError) as exc:
        log.error("%s", exc)
        return 2
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
