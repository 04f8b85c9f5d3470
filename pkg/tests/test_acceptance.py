"""Exit criteria. Each test appends one PASS/FAIL line to the session summary."""

import csv
import io
import json
import math
import statistics
import time

import numpy as np
import pytest
from click.testing import CliRunner

import test_properties as props
from conftest import ACCEPTANCE_LINES
from quakerank.cli import main, train_cmd
from quakerank.gradcheck import gradcheck
from quakerank.losses import RankingPairBatch, build_pairs, composite_loss, margin_ranking_loss, mse_loss
from quakerank.model import N_PARAMS
from quakerank.optim import ScheduleConfig, lr_at_step
from quakerank.preprocess import PreprocessConfig
from quakerank.synthgen import oracle_baseline
from quakerank.train import TrainConfig


def record(cid: str, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {cid} {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def ablation_result(default_dataset, tmp_path_factory):
    runs = tmp_path_factory.mktemp("ablation_runs")
    t0 = time.perf_counter()
    res = CliRunner().invoke(main, ["ablation", "--data", str(default_dataset), "--out", str(runs), "--seeds", "0,1,2,3,4"])
    elapsed = time.perf_counter() - t0
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(io.StringIO((runs / "ablation.csv").read_text())))
    return rows, elapsed


def _median_row(rows, arm):
    return next(r for r in rows if r["arm"] == arm and r["seed"] == "median")


def test_c1_loss_closed_forms():
    t0 = time.perf_counter()
    cases = [((0.5, 0.3), 0.0), ((0.3, 0.5), 0.22), ((0.4, 0.4), 0.02)]
    got = []
    for (x1, x2), _ in cases:
        pairs = RankingPairBatch(np.array([x1]), np.array([x2]), np.array([1.0]), 0.02, np.array([[0, 1]]))
        got.append(margin_ranking_loss(pairs)[0])
    # exact float64 evaluation of the hinge on the same literals
    exact = [max(0.0, -1.0 * (x1 - x2) + 0.02) for (x1, x2), _ in cases]
    closed_ok = got == exact and all(abs(g - e) < 1e-15 for g, (_, e) in zip(got, cases))

    rng = np.random.default_rng(2024)
    additive = 0
    for _ in range(1000):
        b = int(rng.integers(2, 17))
        pred = rng.uniform(3.0, 8.0, size=b)
        target = rng.uniform(4.0, 7.0, size=b)
        out = composite_loss(pred, target, 0.02, True)
        mse, _ = mse_loss(pred, target)
        rank, _, _ = margin_ranking_loss(build_pairs(pred, target, 0.02))
        additive += out.total == out.mse + out.ranking and out.mse == mse and out.ranking == rank
    elapsed = time.perf_counter() - t0
    ok = closed_ok and additive == 1000 and elapsed < 1.0
    record("C1", "loss closed forms", ok, f"hinge={got} additive={additive}/1000 time={elapsed:.3f}s (<1s)")


def test_c2_gradient_suite():
    t0 = time.perf_counter()
    reports = [gradcheck(seed) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports)
    ok = all(r.passed and r.n_params == N_PARAMS for r in reports) and worst < 1e-5 and elapsed < 120
    record("C2", "gradient check", ok, f"5 seeds x {N_PARAMS} params, max rel err={worst:.2e} (<1e-5), time={elapsed:.1f}s (<120s)")


def test_c3_directional_claim(ablation_result):
    rows, elapsed = ablation_result
    on, off = _median_row(rows, "mse+rank"), _median_row(rows, "mse")
    mae_on, mae_off = float(on["mae"]), float(off["mae"])
    pa_on, pa_off = float(on["pairwise_accuracy"]), float(off["pairwise_accuracy"])
    ok = mae_on <= mae_off and pa_on >= pa_off - 0.01 and elapsed < 900
    record(
        "C3",
        "ranking term helps (5 seeds)",
        ok,
        f"median MAE rank={mae_on:.4f} <= mse={mae_off:.4f}; median pair-acc rank={pa_on:.4f} >= {pa_off:.4f}-0.01; "
        f"10 runs in {elapsed:.0f}s (<900s)",
    )


def test_c4_learnability_floor(ablation_result, default_manifest):
    rows, _ = ablation_result
    per_run = [float(r["mae"]) for r in rows if r["seed"] != "median"]
    oracle = oracle_baseline(default_manifest)["mae"]
    ok = len(per_run) == 10 and max(per_run) < 0.75 and oracle < 0.75
    record("C4", "learnability floor", ok, f"worst trained test MAE={max(per_run):.4f}, oracle MAE={oracle:.4f} (both <0.75)")


def test_c5_schedule_and_recipe():
    t0 = time.perf_counter()
    alpha = 1e-4
    sched_ok = True
    for T in (10, 320, 1000):
        cfg = ScheduleConfig.from_total(alpha, T)
        W = cfg.warmup_steps
        sched_ok &= W == math.ceil(0.1 * T)
        sched_ok &= lr_at_step(cfg, W - 1) == alpha
        sched_ok &= all(lr_at_step(cfg, t) == alpha * (t + 1) / W for t in range(W))
        sched_ok &= all(lr_at_step(cfg, t) == alpha * (T - t) / (T - W) for t in range(W, T))

    defaults = {p.name: p.default for p in train_cmd.params}
    cfg = TrainConfig()
    recipe = {
        "epochs": (defaults["epochs"], cfg.epochs, 10),
        "batch": (defaults["batch"], cfg.batch_size, 16),
        "lr": (defaults["lr"], cfg.peak_lr, 1e-4),
        "margin": (defaults["margin"], cfg.margin, 0.02),
        "flip_prob": (defaults["flip_prob"], cfg.flip_prob, PreprocessConfig().flip_prob, 0.5),
        "warmup": (cfg.warmup_frac, 0.1),
        "loss": (defaults["loss"], "mse+rank"),
    }
    recipe_ok = all(len(set(v)) == 1 for v in recipe.values())
    elapsed = time.perf_counter() - t0
    ok = sched_ok and recipe_ok and elapsed < 1.0
    record("C5", "schedule and recipe", ok, f"T in {{10,320,1000}} schedule={'ok' if sched_ok else 'bad'}, defaults={'ok' if recipe_ok else recipe}, time={elapsed:.3f}s")


def test_c6_determinism(default_dataset, tmp_path):
    runner = CliRunner()
    outs = []
    for name in ("a", "b"):
        res = runner.invoke(main, ["train", "--data", str(default_dataset), "--out", str(tmp_path / name), "--seed", "3"])
        assert res.exit_code == 0, res.output
        outs.append(json.loads(res.output))
    ckpt_same = open(outs[0]["checkpoint_path"], "rb").read() == open(outs[1]["checkpoint_path"], "rb").read()
    csv_same = open(outs[0]["epoch_log_path"], "rb").read() == open(outs[1]["epoch_log_path"], "rb").read()
    record("C6", "determinism", ckpt_same and csv_same, f"checkpoint identical={ckpt_same}, epoch CSV identical={csv_same}")


PROPERTIES = [
    ("composite permutation invariance", props.test_composite_permutation_invariant),
    ("ranking shift invariance", props.test_ranking_shift_invariant),
    ("flip involution", props.test_flip_involution_and_pixel_multiset),
    ("dB monotonicity", props.test_db_monotone),
    ("tile roundtrip", props.test_tile_roundtrip),
    ("checkpoint roundtrip", props.test_checkpoint_roundtrip),
]


def test_c7_property_suites():
    t0 = time.perf_counter()
    failures = []
    for name, fn in PROPERTIES:
        assert fn.hypothesis.inner_test and props.N >= 200
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - collect every failing property
            failures.append(f"{name}: {type(exc).__name__}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    record("C7", "property suites", ok, f"{len(PROPERTIES)} properties x {props.N} cases, failures={failures or 'none'}, time={elapsed:.1f}s (<60s)")
