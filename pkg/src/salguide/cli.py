"""Command line: generate | train | eval | sweep | export-heatmaps.

Every option can come from ``--config FILE`` (``key = value`` lines) or a
``--key value`` flag; flags win, and ``SALGUIDE_SEED`` overrides the file's
seed. Each command writes its resolved configuration next to its outputs.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .errors import ConfigError, DatasetError, SalguideError
from .explain import explain_rows
from .metrics import MetricsRecord, boxplot_stats
from .model import ModelConfig, init_model, load_checkpoint
from .scores import KIND_NAMES, ScoreKind
from .synthdata import SPLITS, generate_dataset, load_dataset, load_splits, pgm_write_bytes
from .trainer import eval_trace, evaluate, prepare, train

log = logging.getLogger("salguide")

HISTORY_COLUMNS = ["epoch", "bce", "exp_weighted", "total", "val_accuracy"]
METRIC_COLUMNS = ["run_id", "score_kind", "alpha", "seed", "split", "accuracy", "coverage",
                  "top_precision", "all_precision", "n_degenerate"]
SWEEP_COLUMNS = METRIC_COLUMNS + ["status"]
SUMMARY_COLUMNS = ["group_by", "group_value", "metric", "min", "q1", "median", "q3", "max", "mean"]
SUMMARY_METRICS = ["accuracy", "coverage", "top_precision", "all_precision"]
CHECKPOINT_NAME = "model.ckpt"


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    """Stable text for a CSV cell: shortest round-trip floats, empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))


def append_csv(path: Path, header, row) -> None:
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with open(path, newline="") as fh:
            first = fh.readline().rstrip("\n")
        if first != ",".join(header):
            raise DatasetError(f"{path}: existing header does not match {','.join(header)}")
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(header)
        w.writerow([fmt(v) for v in row])


def read_csv_rows(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def default_run_id(cfg: RunConfig) -> str:
    return cfg.run_id or f"{cfg.score_kind}-a{cfg.alpha:g}-s{cfg.seed}"


def checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / CHECKPOINT_NAME


def metrics_row(run_id: str, cfg: RunConfig, rec: MetricsRecord) -> list:
    return [run_id, cfg.score_kind, cfg.alpha, cfg.seed, cfg.split, rec.accuracy, rec.coverage,
            rec.top_precision, rec.all_precision, rec.n_degenerate]


def model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(input_size=cfg.image_size)


def train_run(cfg: RunConfig, splits: dict, out_dir: Path, progress=None):
    """Train one configuration; writes checkpoint, history.csv and the resolved config."""
    out_dir.mkdir(parents=True, exist_ok=True)
    mcfg = model_config(cfg)
    prepared = {k: prepare(v, mcfg.input_size, mcfg.saliency_size) for k, v in splits.items() if v}
    if "train" not in prepared:
        raise DatasetError("train split is empty")
    model = init_model(mcfg, np.random.default_rng([cfg.seed, 0]))
    result = train(model, prepared, cfg.train_config(), checkpoint_path=out_dir / CHECKPOINT_NAME,
                   progress=progress)
    write_csv(out_dir / "history.csv", HISTORY_COLUMNS,
              [[r.epoch, r.bce, r.exp_weighted, r.total, r.val_accuracy] for r in result.history])
    cfg.replace(out_dir=str(out_dir), checkpoint=str(out_dir / CHECKPOINT_NAME)).write_resolved(out_dir)
    return result, prepared


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> str:
    manifest = generate_dataset(cfg.synth_config(), cfg.data_dir)
    cfg.write_resolved(cfg.data_dir)
    return manifest.summary()


def cmd_train(cfg: RunConfig) -> str:
    splits = load_splits(cfg.data_dir)
    out = Path(cfg.out_dir)
    result, _ = train_run(cfg, splits, out, progress=lambda r: log.info(
        "epoch %d  bce %.4f  exp %.4f  val_acc %.3f", r.epoch, r.bce, r.exp_weighted, r.val_accuracy))
    last = result.history[-1]
    return (f"trained {cfg.score_kind} alpha={cfg.alpha:g} seed={cfg.seed} for {last.epoch} epochs: "
            f"bce {last.bce:.4f}, val_accuracy {last.val_accuracy:.3f}; checkpoint {result.checkpoint}")


def cmd_eval(cfg: RunConfig) -> str:
    if cfg.split not in SPLITS:
        raise DatasetError(f"unknown split {cfg.split!r}; expected one of {', '.join(SPLITS)}")
    model = load_checkpoint(checkpoint_path(cfg))
    samples = load_dataset(cfg.data_dir, cfg.split)
    if not samples:
        raise DatasetError(f"split {cfg.split!r} is empty")
    rec = evaluate(model, samples, cfg.score_kind, cfg.k_percent, cfg.tau)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = default_run_id(cfg)
    append_csv(out / "metrics.csv", METRIC_COLUMNS, metrics_row(run_id, cfg, rec))
    cfg.write_resolved(out)
    return (f"{run_id} {cfg.split}: accuracy {rec.accuracy:.3f}, coverage {fmt(rec.coverage) or '-'}, "
            f"all_precision {fmt(rec.all_precision) or '-'} -> {out / 'metrics.csv'}")


@dataclass(frozen=True)
class Cell:
    kind: str
    alpha: float
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.kind}-a{self.alpha:g}-s{self.seed}"


def sweep_cells(cfg: RunConfig) -> list:
    return [Cell(k, float(a), int(s)) for k, a, s in itertools.product(cfg.kinds, cfg.alphas, cfg.seeds)]


def run_cell(cfg: RunConfig, cell: Cell, out_root: str) -> list:
    """Train and evaluate one grid cell; returns a sweep row (never raises)."""
    ccfg = cfg.replace(score_kind=cell.kind, alpha=cell.alpha, seed=cell.seed, run_id=cell.run_id)
    try:
        splits = load_splits(cfg.data_dir)
        result, prepared = train_run(ccfg, splits, Path(out_root) / "cells" / cell.run_id)
        if cfg.split not in prepared:
            raise DatasetError(f"split {cfg.split!r} is empty")
        rec = evaluate(result.model, prepared[cfg.split], cell.kind, cfg.k_percent, cfg.tau)
        return metrics_row(cell.run_id, ccfg, rec) + ["ok"]
    except Exception as exc:  # recorded in the status column; the sweep goes on
        msg = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ").replace(",", ";")
        return [cell.run_id, cell.kind, cell.alpha, cell.seed, cfg.split] + [None] * 5 + [msg]


def summary_rows(rows: list) -> list:
    out = []
    ok = [r for r in rows if r["status"] == "ok"]
    for group_by in ("score_kind", "alpha"):
        values = list(dict.fromkeys(r[group_by] for r in ok))
        for value in values:
            members = [r for r in ok if r[group_by] == value]
            for metric in SUMMARY_METRICS:
                vals = [float(r[metric]) for r in members if r[metric] not in ("", None)]
                if not vals:
                    continue
                st = boxplot_stats(vals)
                out.append([group_by, value, metric, st.min, st.q1, st.median, st.q3, st.max, st.mean])
    return out


def cmd_sweep(cfg: RunConfig, resume: bool = False) -> str:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    cells = sweep_cells(cfg)
    done = {}
    if metrics_path.exists():
        if not resume:
            raise ConfigError(f"{metrics_path} exists; pass --resume to continue that sweep")
        done = {r["run_id"]: r for r in read_csv_rows(metrics_path)}
    cfg.write_resolved(out)
    todo = [c for c in cells if c.run_id not in done]
    if cfg.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = pool.map(run_cell, [cfg] * len(todo), todo, [str(out)] * len(todo))
            for cell, row in zip(todo, results):
                _record(metrics_path, done, cell, row)
    else:
        for cell in todo:
            _record(metrics_path, done, cell, run_cell(cfg, cell, str(out)))

    # final rewrite in grid order so resumed sweeps are byte-identical to uninterrupted ones
    ordered = [done[c.run_id] for c in cells]
    write_csv(metrics_path, SWEEP_COLUMNS, [[r[k] for k in SWEEP_COLUMNS] for r in ordered])
    ordered = read_csv_rows(metrics_path)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows(ordered))
    failed = sum(r["status"] != "ok" for r in ordered)
    return (f"sweep of {len(cells)} cells ({len(todo)} run, {len(cells) - len(todo)} resumed, "
            f"{failed} failed) -> {metrics_path}")


def _record(path: Path, done: dict, cell: Cell, row: list) -> None:
    append_csv(path, SWEEP_COLUMNS, row)
    done[cell.run_id] = dict(zip(SWEEP_COLUMNS, (fmt(v) for v in row)))
    log.info("%s: %s", cell.run_id, row[-1])


def outline_grid(boxes, size: int) -> np.ndarray:
    """uint8 (size, size) image with 255 on the border cells of each grid box."""
    img = np.zeros((size, size), dtype=np.uint8)
    for b in boxes:
        img[b.y0, b.x0:b.x1 + 1] = 255
        img[b.y1, b.x0:b.x1 + 1] = 255
        img[b.y0:b.y1 + 1, b.x0] = 255
        img[b.y0:b.y1 + 1, b.x1] = 255
    return img


def heatmap_bytes(normalized: np.ndarray) -> np.ndarray:
    return np.round(np.clip(normalized, 0.0, 1.0) * 255.0).astype(np.uint8)


def cmd_export_heatmaps(cfg: RunConfig) -> str:
    model = load_checkpoint(checkpoint_path(cfg))
    size = model.config.saliency_size
    samples = [s for s in load_dataset(cfg.data_dir, cfg.split) if s.label == 1 and s.boxes]
    if cfg.n_heatmaps < 1 or cfg.n_heatmaps > len(samples):
        raise DatasetError(f"n_heatmaps={cfg.n_heatmaps} but split {cfg.split!r} has "
                           f"{len(samples)} annotated positives")
    chosen = samples[:cfg.n_heatmaps]
    data = prepare(chosen, model.config.input_size, size)
    trace = eval_trace(model, data.images)
    sal = explain_rows(trace, cfg.score_kind, for_training=False, k=cfg.k_percent)
    out = Path(cfg.out_dir) / "heatmaps"
    out.mkdir(parents=True, exist_ok=True)
    for j, s in enumerate(chosen):
        stem = Path(s.filename).stem
        pgm_write_bytes(out / f"{stem}_heatmap.pgm", heatmap_bytes(sal.normalized.data[j]))
        pgm_write_bytes(out / f"{stem}_boxes.pgm", outline_grid(data.grid_boxes[j], size))
    cfg.write_resolved(out)
    return f"wrote {2 * len(chosen)} {size}x{size} graymaps for {len(chosen)} samples to {out}"


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _kind_arg(text: str) -> str:
    try:
        return ScoreKind.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _kinds_arg(text: str) -> str:
    for part in text.split(","):
        if part.strip():
            _kind_arg(part)
    return text


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    g = p.add_argument_group("configuration keys (override the file)")
    for key in cfgmod.KEYS:
        kw = {"dest": key, "default": None, "metavar": key.upper()}
        if key == "score_kind":
            kw.update(type=_kind_arg, help=f"one of: {', '.join(KIND_NAMES)}")
        elif key == "kinds":
            kw.update(type=_kinds_arg, help="comma-separated score kinds")
        g.add_argument("--" + key.replace("_", "-"), **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salguide", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write the synthetic confounded dataset",
        "train": "train one model; writes checkpoint and history.csv",
        "eval": "evaluate a checkpoint; appends a row to metrics.csv",
        "sweep": "train and evaluate kinds x alphas x seeds",
        "export-heatmaps": "write saliency and box-outline graymaps",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text, allow_abbrev=False)
        _add_config_flags(p)
        if name == "sweep":
            p.add_argument("--resume", action="store_true", help="skip cells already in metrics.csv")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-heatmaps": cmd_export_heatmaps,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    overrides = {k: getattr(args, k) for k in cfgmod.KEYS}
    try:
        cfg = cfgmod.resolve(args.config, overrides)
        if args.command == "sweep":
            message = cmd_sweep(cfg, resume=args.resume)
        else:
            message = COMMANDS[args.command](cfg)
    except (SalguideError, ValueError, OSError) as exc:
        print(f"salguide {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
