"""Command-line entry point: ``quakerank <verb>``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import runs as runs_mod
from .dataset import load_manifest
from .errors import QuakeRankError
from .gradcheck import gradcheck
from .losses import DEFAULT_MARGIN
from .model import flops_estimate, layer_flops
from .synthgen import SynthConfig, gen_dataset, oracle_baseline
from .train import TrainConfig, evaluate

LOSSES = {"mse": False, "mse+rank": True}


def _manifest_path(data: str) -> Path:
    p = Path(data)
    return p / "manifest.jsonl" if p.is_dir() else p


def _load(data: str):
    try:
        return load_manifest(_manifest_path(data))
    except QuakeRankError as exc:
        raise click.ClickException(str(exc)) from exc


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


def _runs_dir(out: str | None) -> Path:
    return Path(out) if out else runs_mod.default_runs_dir()


def _train_options(f):
    options = [
        click.option("--data", required=True, help="Dataset directory or manifest.jsonl path."),
        click.option("--margin", type=float, default=DEFAULT_MARGIN, show_default=True, help="Ranking margin m."),
        click.option("--epochs", type=int, default=10, show_default=True),
        click.option("--batch", type=int, default=16, show_default=True),
        click.option("--lr", type=float, default=1e-4, show_default=True, help="Peak learning rate."),
        click.option("--flip-prob", type=float, default=0.5, show_default=True),
        click.option("--exclude-ties", is_flag=True, help="Drop equal-label pairs from the ranking term."),
        click.option(
            "--pair-labels",
            type=click.Choice(["target", "pred"]),
            default="target",
            hidden=True,
            help="Debug: order ranking pairs by predictions instead of labels.",
        ),
        click.option("--out", default=None, help=f"Runs directory (default ${runs_mod.RUNS_ENV} or ./runs)."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def _config(ranking: bool, seed: int, margin, epochs, batch, lr, flip_prob, exclude_ties, pair_labels) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=epochs,
            batch_size=batch,
            peak_lr=lr,
            margin=margin,
            ranking_enabled=ranking,
            seed=seed,
            flip_prob=flip_prob,
            exclude_ties=exclude_ties,
            pair_labels=pair_labels,
        )
    except QuakeRankError as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose: int):
    """Magnitude regression with a pairwise margin-ranking term."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.option("--out", required=True, help="Output dataset directory.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tile-size", type=int, default=32, show_default=True)
@click.option("--n-train", type=int, default=512, show_default=True)
@click.option("--n-val", type=int, default=128, show_default=True)
@click.option("--n-test", type=int, default=128, show_default=True)
@click.option("--mag-min", type=float, default=4.0, show_default=True)
@click.option("--mag-max", type=float, default=7.0, show_default=True)
@click.option("--n-blobs", type=int, default=6, show_default=True)
@click.option("--vh-ratio", type=float, default=0.25, show_default=True)
@click.option("--deform-amp-max", type=float, default=0.6, show_default=True)
@click.option("--looks", type=int, default=1, show_default=True, help="Speckle looks.")
def synth(out, seed, tile_size, n_train, n_val, n_test, mag_min, mag_max, n_blobs, vh_ratio, deform_amp_max, looks):
    """Generate a synthetic dataset."""
    try:
        cfg = SynthConfig(
            tile_size=tile_size, n_train=n_train, n_val=n_val, n_test=n_test,
            mag_min=mag_min, mag_max=mag_max, n_blobs=n_blobs, vh_ratio=vh_ratio,
            deform_amp_max=deform_amp_max, speckle_looks=looks, seed=seed,
        )
        manifest = gen_dataset(cfg, out)
    except (QuakeRankError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json({"out": str(out), "counts": manifest.counts, "stats": manifest.stats})


@main.command("train")
@click.option("--loss", type=click.Choice(list(LOSSES)), default="mse+rank", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_train_options
def train_cmd(loss, seed, data, margin, epochs, batch, lr, flip_prob, exclude_ties, pair_labels, out):
    """Train one model and write checkpoint, epoch CSV and run record."""
    cfg = _config(LOSSES[loss], seed, margin, epochs, batch, lr, flip_prob, exclude_ties, pair_labels)
    manifest = _load(data)
    try:
        record = runs_mod.run_training(cfg, manifest, _runs_dir(out), data_path=str(data))
    except (QuakeRankError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(record)


@main.command("eval")
@click.option("--data", required=True)
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test", show_default=True)
def eval_cmd(data, ckpt, split):
    """Print metrics JSON for a checkpoint."""
    manifest = _load(data)
    try:
        report = evaluate(ckpt, manifest, split)
    except (QuakeRankError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(report.to_dict())


@main.command("ablation")
@click.option("--seeds", default="0,1,2,3,4", show_default=True, help="Comma-separated seeds (>= 3).")
@_train_options
def ablation_cmd(seeds, data, margin, epochs, batch, lr, flip_prob, exclude_ties, pair_labels, out):
    """Train both loss arms per seed and compare test metrics."""
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        raise click.BadParameter(f"invalid seed list {seeds!r}", param_hint="--seeds") from None
    base = _config(True, 0, margin, epochs, batch, lr, flip_prob, exclude_ties, pair_labels)
    manifest = _load(data)
    runs_dir = _runs_dir(out)
    try:
        rows = runs_mod.ablation(base, manifest, seed_list, runs_dir, data_path=str(data))
    except (QuakeRankError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    runs_dir.mkdir(parents=True, exist_ok=True)
    (runs_dir / "ablation.csv").write_text(runs_mod.rows_to_csv(rows, runs_mod.ABLATION_COLUMNS), encoding="utf-8")
    table = runs_mod.rows_to_markdown(rows, runs_mod.ABLATION_COLUMNS)
    (runs_dir / "ablation.md").write_text(table, encoding="utf-8")
    click.echo(table, nl=False)


@main.command()
@click.option("--runs", "runs_dir", default=None, help=f"Runs directory (default ${runs_mod.RUNS_ENV} or ./runs).")
@click.option("--csv", "csv_out", default=None, type=click.Path(dir_okay=False), help="Also write the table as CSV.")
def report(runs_dir, csv_out):
    """Summarise run records as a markdown table grouped by loss arm."""
    records = runs_mod.load_run_records(_runs_dir(runs_dir))
    if not records:
        raise click.ClickException(f"no run records under {_runs_dir(runs_dir)}")
    rows = runs_mod.report_rows(records)
    text = runs_mod.rows_to_csv(rows, runs_mod.REPORT_COLUMNS)
    if csv_out:
        Path(csv_out).write_text(text, encoding="utf-8")
    shown = [{**r, "l_mr": "✓" if r["l_mr"] == "yes" else ""} for r in rows]
    click.echo(runs_mod.rows_to_markdown(shown, runs_mod.REPORT_COLUMNS), nl=False)


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dtype", type=click.Choice(["float64", "float32"]), default="float64", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def gradcheck_cmd(seed, dtype, as_json):
    """Finite-difference check of every parameter gradient; exit 1 on failure."""
    try:
        rep = gradcheck(seed, dtype=dtype)
    except QuakeRankError as exc:
        raise click.ClickException(str(exc)) from exc
    if as_json:
        _echo_json(rep.to_dict())
    else:
        status = "PASS" if rep.passed else "FAIL"
        click.echo(
            f"{status} seed={rep.seed} params={rep.n_params} max_rel_error={rep.max_rel_error:.3e} "
            f"(worst {rep.worst_tensor}, tol {rep.tolerance:g})"
        )
        for name in rep.failing:
            click.echo(f"  failing: {name} rel_error={rep.per_tensor[name]:.3e}")
    sys.exit(0 if rep.passed else 1)


@main.command()
@click.option("--size", type=int, default=32, show_default=True, help="Square input size.")
@click.option("--json", "as_json", is_flag=True)
def flops(size, as_json):
    """Per-layer FLOP breakdown for a size x size input."""
    try:
        rows = layer_flops(size, size)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    total = flops_estimate(size, size)
    if as_json:
        _echo_json({"size": size, "layers": dict(rows), "total": total, "mflops": total / 1e6})
        return
    for name, n in rows:
        click.echo(f"{name:<10}{n:>12,}")
    click.echo(f"{'total':<10}{total:>12,}  ({total / 1e6:.6f} MFLOPs)")


@main.command()
@click.option("--data", required=True)
def oracle(data):
    """Least-squares baseline on the VV dB-change feature; test MAE JSON."""
    manifest = _load(data)
    try:
        _echo_json(oracle_baseline(manifest))
    except (QuakeRankError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc


if __name__ == "__main__":
    main()
