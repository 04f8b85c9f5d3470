"""Run records on disk, the loss ablation, and Table-style reports over runs."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import statistics
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from .dataset import Manifest
from .model import MODEL_NAME, N_PARAMS, flops_estimate
from .train import EPOCH_LOG_NAME, SplitData, TrainConfig, evaluate_params, train

log = logging.getLogger(__name__)

RUNS_ENV = "QUAKERANK_RUNS"
RUN_RECORD_NAME = "run.json"
ABLATION_COLUMNS = ("arm", "seed", "mae", "rmse", "pairwise_accuracy", "kendall_tau", "run_id")
REPORT_COLUMNS = ("model", "params", "mflops", "l_mr", "seed", "mae")
ARMS = ("mse", "mse+rank")


def default_runs_dir() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs"))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _claim_run_dir(runs_dir: Path, base: str) -> tuple[str, Path]:
    """mkdir is atomic, so concurrent writers never share a run_id."""
    runs_dir.mkdir(parents=True, exist_ok=True)
    for k in range(10_000):
        run_id = base if k == 0 else f"{base}-{k}"
        path = runs_dir / run_id
        try:
            path.mkdir()
        except FileExistsError:
            continue
        return run_id, path
    raise RuntimeError(f"could not allocate a run directory for {base} in {runs_dir}")


class DataCache:
    """Preprocessed splits shared between runs on the same manifest."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._splits: dict[str, SplitData] = {}

    def __getitem__(self, split: str) -> SplitData:
        if split not in self._splits:
            self._splits[split] = SplitData(self.manifest, split)
        return self._splits[split]


def run_training(config: TrainConfig, manifest: Manifest, runs_dir, data: DataCache | None = None, data_path: str = "") -> dict:
    """Train one arm, evaluate the selected checkpoint on test, write ``run.json``."""
    data = data or DataCache(manifest)
    started = _now()
    run_id, run_dir = _claim_run_dir(Path(runs_dir), f"{config.loss_name.replace('+', '_')}-seed{config.seed}-{config.digest()[:8]}")
    result = train(config, manifest, run_dir, train_data=data["train"], val_data=data["val"])
    metrics = evaluate_params(result.params, data["test"], config.max_magnitude, config.digest())
    h, w = data["train"].tile_size
    record = {
        "run_id": run_id,
        "model": MODEL_NAME,
        "loss": config.loss_name,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "metrics": metrics.to_dict(),
        "split": "test",
        "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae,
        "total_steps": result.total_steps,
        "params": N_PARAMS,
        "tile_size": [h, w],
        "data": data_path,
        "checkpoint_path": str(result.checkpoint_path),
        "epoch_log_path": str(run_dir / EPOCH_LOG_NAME),
        "started_at": started,
        "finished_at": _now(),
    }
    (run_dir / RUN_RECORD_NAME).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("run %s: test mae=%.4f", run_id, metrics.mae)
    return record


def load_run_records(runs_dir) -> list[dict]:
    runs_dir = Path(runs_dir)
    paths = sorted(runs_dir.glob(f"*/{RUN_RECORD_NAME}")) if runs_dir.is_dir() else []
    return [json.loads(p.read_text(encoding="utf-8")) for p in paths]


def _median(values):
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def ablation(base: TrainConfig, manifest: Manifest, seeds, runs_dir, data_path: str = "") -> list[dict]:
    """Train both loss arms for every seed; return per-run rows followed by one median row per arm.

    Arms differ only in ``ranking_enabled``; batch order and flips derive from the seed alone.
    """
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    data = DataCache(manifest)
    rows = []
    for arm in ARMS:
        for seed in seeds:
            cfg = replace(base, ranking_enabled=(arm == "mse+rank"), seed=seed)
            rec = run_training(cfg, manifest, runs_dir, data, data_path)
            m = rec["metrics"]
            rows.append({
                "arm": arm,
                "seed": str(seed),
                "mae": m["mae"],
                "rmse": m["rmse"],
                "pairwise_accuracy": m["pairwise_accuracy"],
                "kendall_tau": m["kendall_tau"],
                "run_id": rec["run_id"],
            })
    for arm in ARMS:
        arm_rows = [r for r in rows if r["arm"] == arm]
        rows.append({
            "arm": arm,
            "seed": "median",
            **{k: _median(r[k] for r in arm_rows) for k in ("mae", "rmse", "pairwise_accuracy", "kendall_tau")},
            "run_id": "",
        })
    return rows


def medians(rows: list[dict]) -> dict[str, dict]:
    return {r["arm"]: r for r in rows if r["seed"] == "median"}


def _fmt(v, digits=4) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in columns})
    return buf.getvalue()


def rows_to_markdown(rows: list[dict], columns) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(c)) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def report_rows(records: list[dict]) -> list[dict]:
    """Table rows grouped by loss arm: one row per run, then that arm's median."""
    if not records:
        raise ValueError("no run records found")
    rows = []
    for arm in ARMS:
        group = sorted(
            (r for r in records if r["loss"] == arm),
            key=lambda r: (r["config"]["seed"], r["run_id"]),
        )
        if not group:
            continue
        arm_rows = []
        for r in group:
            h, w = r.get("tile_size", [32, 32])
            arm_rows.append({
                "model": r.get("model", MODEL_NAME),
                "params": int(r.get("params", N_PARAMS)),
                "mflops": flops_estimate(h, w) / 1e6,
                "l_mr": "yes" if arm == "mse+rank" else "no",
                "seed": str(r["config"]["seed"]),
                "mae": float(r["metrics"]["mae"]),
            })
        first = arm_rows[0]
        rows.extend(arm_rows)
        rows.append({
            "model": first["model"],
            "params": first["params"],
            "mflops": first["mflops"],
            "l_mr": first["l_mr"],
            "seed": "median",
            "mae": statistics.median(r["mae"] for r in arm_rows),
        })
    return rows


def parse_report_csv(text: str) -> list[dict]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({
            "model": r["model"],
            "params": int(r["params"]),
            "mflops": float(r["mflops"]),
            "l_mr": r["l_mr"],
            "seed": r["seed"],
            "mae": float(r["mae"]),
        })
    return out
