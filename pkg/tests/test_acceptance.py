"""Acceptance criteria, one test each.

Every test records a ``[PASS]``/``[FAIL]`` line (shown in the terminal
summary) before asserting, so a failing criterion still reports its numbers.
"""
import json
import math
import time

import numpy as np

from lur.bench import ExperimentPlan, render_markdown, run_plan, select_best
from lur.cli import main
from lur.data import make_ood_split
from lur.heads import HeadConfig, lur_loss_and_grads, train_head
from lur.metrics import (
    ace,
    entropy_scores,
    fpr_at_95_tpr,
    pr_auc,
    predictive_entropy,
    raulc,
    roc_auc,
)
from lur.repulsion import KernelConfig, mean_pairwise_distance, repulsion_grad_kde, score_sge, score_ssge

from oracles import central_difference, fpr95_scan, log_kde, pr_auc_thresholds, raulc_quadratic, rel_error, roc_auc_pairs

SEEDS = [0, 1, 2, 3, 4]


def test_criterion_01_lur_gradients(report_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for n in (0, 1, 3):
        for _ in range(20):
            d, c, b = rng.integers(2, 6), rng.integers(2, 5), rng.integers(1, 8)
            p = {"W": rng.normal(size=(d, c)), "b": rng.normal(size=c),
                 "T": 0.5 * rng.normal(size=(n, d, d)), "t": rng.normal(size=(n, d))}
            Z, y = rng.normal(size=(b, d)), rng.integers(0, c, b)
            _, grads = lur_loss_and_grads(p, Z, y)
            for name, arr in p.items():
                if arr.size:
                    fd = central_difference(lambda: lur_loss_and_grads(p, Z, y)[0], arr, h=1e-5)
                    worst = max(worst, rel_error(grads[name], fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    report_criterion(1, ok, f"max rel. gradient error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_02_lur_without_transforms_is_regular(report_criterion, blobs):
    identical = True
    for seed in (0, 1):
        traces = {}
        for variant in ("regular", "lur"):
            trace = []
            cfg = HeadConfig(variant=variant, num_members=0, seed=seed)
            head = train_head(cfg, blobs, on_epoch=lambda e, loss, p, t=trace: t.append(
                (loss, p["W"].copy(), p["b"].copy())))
            traces[variant] = (trace, head.params["W"], head.params["b"])
        (ta, wa, ba), (tb, wb, bb) = traces["regular"], traces["lur"]
        identical &= len(ta) == len(tb) and all(
            la == lb and np.array_equal(xa, xb) and np.array_equal(ya, yb)
            for (la, xa, ya), (lb, xb, yb) in zip(ta, tb))
        identical &= np.array_equal(wa, wb) and np.array_equal(ba, bb)
    report_criterion(2, identical, "n=0 LUR and Regular per-epoch losses and parameters bit-identical (2 seeds)")
    assert identical


def test_criterion_03_metric_oracles(report_criterion):
    rng = np.random.default_rng(7)
    worst = {"roc_auc": 0.0, "pr_auc": 0.0, "fpr95": 0.0, "raulc": 0.0}
    for _ in range(20):
        n_in = int(rng.integers(20, 81))
        scores = rng.integers(0, 15, 100) / 7.0  # coarse grid forces ties
        ind, ood = list(scores[:n_in]), list(scores[n_in:])
        worst["roc_auc"] = max(worst["roc_auc"], abs(roc_auc(ind, ood) - roc_auc_pairs(ind, ood)))
        worst["pr_auc"] = max(worst["pr_auc"], abs(pr_auc(ind, ood) - pr_auc_thresholds(ind, ood)))
        worst["fpr95"] = max(worst["fpr95"], abs(fpr_at_95_tpr(ind, ood) - fpr95_scan(ind, ood)))
        correct = rng.random(100) < 0.7
        correct[:2] = [True, False]
        u = rng.integers(0, 12, 100) / 11.0
        worst["raulc"] = max(worst["raulc"], abs(raulc(u, correct) - raulc_quadratic(u, correct)))
    ok = all(v <= 1e-12 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report_criterion(3, ok, f"max |metric - oracle| over 20x100 tied draws: {detail} (<= 1e-12)")
    assert ok


def test_criterion_04_score_estimators(report_criterion):
    t0 = time.perf_counter()
    rms = {}
    for name, fn in (("sge", lambda x: score_sge(x, 1.0)), ("ssge", lambda x: score_ssge(x, 0.01))):
        errs = []
        for seed in SEEDS:
            x = np.random.default_rng(seed).standard_normal((2000, 1))
            g = fn(x)[:, 0]
            central = np.abs(x[:, 0]) <= 2
            errs.append(np.sqrt(np.mean((g[central] + x[central, 0]) ** 2)))
        rms[name] = float(np.mean(errs))
    elapsed = time.perf_counter() - t0
    ok = max(rms.values()) < 0.15 and elapsed < 30
    report_criterion(4, ok, f"mean RMS on N(0,1): SGE {rms['sge']:.3f}, SSGE {rms['ssge']:.3f} (< 0.15), "
                            f"{elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_05_kde_repulsion(report_criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for p in range(2, 6):
        for m in range(1, 5):
            x = rng.normal(size=(p, m))
            h = float(rng.uniform(0.5, 2.0))
            r = repulsion_grad_kde(x, h)
            fd = np.zeros_like(x)
            for i in range(p):
                for k in range(m):
                    xp, xm = x.copy(), x.copy()
                    xp[i, k] += 1e-6
                    xm[i, k] -= 1e-6
                    fd[i, k] = (log_kde(xp, i, h) - log_kde(xm, i, h)) / 2e-6
            worst = max(worst, rel_error(r, fd))
    same = repulsion_grad_kde(np.tile([0.4, -1.2, 3.0], (2, 1)), 0.7)
    zero = bool(np.all(same == 0.0))
    ok = worst < 1e-5 and zero
    report_criterion(5, ok, f"max rel. error vs finite differences {worst:.1e} (< 1e-5); "
                            f"identical pair repulsion exactly zero: {zero}")
    assert ok


def test_criterion_06_synthetic_ood(report_criterion, blobs):
    t0 = time.perf_counter()
    split = make_ood_split(blobs, "min")
    res = {}
    for variant in ("lur", "regular"):
        aucs, fprs = [], []
        for seed in SEEDS:
            head = train_head(HeadConfig(variant=variant, num_members=10, seed=seed), split.in_train)
            s_in = entropy_scores(head.predict(split.in_test.features).probs)
            s_ood = entropy_scores(head.predict(split.ood.features).probs)
            aucs.append(roc_auc(s_in, s_ood))
            fprs.append(fpr_at_95_tpr(s_in, s_ood))
        res[variant] = (float(np.mean(aucs)), float(np.mean(fprs)))
    elapsed = time.perf_counter() - t0
    (lur_auc, lur_fpr), (reg_auc, _) = res["lur"], res["regular"]
    ok = lur_auc >= 0.95 and lur_fpr <= 0.25 and lur_auc > reg_auc and elapsed < 120
    report_criterion(6, ok, f"LUR n=10 ROC-AUC {lur_auc:.4f} (>= 0.95), FPR95 {lur_fpr:.4f} (<= 0.25), "
                            f"Regular ROC-AUC {reg_auc:.4f} (LUR must exceed), {elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_07_repulsive_diversity(report_criterion, blobs):
    wins = {}
    for p in (5, 10):
        wins[p] = 0
        for seed in SEEDS:
            common = dict(num_members=p, seed=seed, kernel=KernelConfig(estimator="kde"))
            lur = train_head(HeadConfig(variant="lur", **common), blobs)
            rlur = train_head(HeadConfig(variant="rlur", **common), blobs)
            wins[p] += mean_pairwise_distance(rlur.transform_particles()) > mean_pairwise_distance(
                lur.transform_particles())
    ok = all(w >= 4 for w in wins.values())
    report_criterion(7, ok, f"RLUR more diverse than LUR in {wins[5]}/5 seeds (P=5), {wins[10]}/5 (P=10); need >= 4")
    assert ok


def test_criterion_08_variance_and_entropy_rows(report_criterion):
    plan = ExperimentPlan.from_dict({
        "dataset": {"synthetic": {"classes": 5, "dim": 16, "per_class_count": 200, "seed": 0}},
        "variants": ["lur"],
        "grid": {"num_members": [10], "batch_size": [32], "learning_rate": [0.01], "epochs": [10]},
        "seeds": [0],
        "ood_modes": ["min"],
        "uncertainty_scores": ["entropy", "latent_variance"],
    })
    report = run_plan(plan)
    row = report["rows"][0]["metrics"]
    text = render_markdown(report)
    both = all(f"{k}_roc_auc" in row for k in ("entropy", "latent_variance"))
    rendered = "entropy ROC-AUC" in text and "latent_variance ROC-AUC" in text
    ok = both and rendered
    report_criterion(8, ok, f"same LUR head scored both ways: entropy ROC-AUC {row.get('entropy_roc_auc', math.nan):.4f}, "
                            f"latent-variance ROC-AUC {row.get('latent_variance_roc_auc', math.nan):.4f}; "
                            f"both in report: {both and rendered}")
    assert ok


def test_criterion_09_selection_inequality(report_criterion):
    plans = [
        {"variants": ["lur", "regular"], "ood_modes": ["min", "max"], "seeds": [0, 1, 2],
         "grid": {"num_members": [2, 4], "batch_size": [16, 32], "learning_rate": [0.01, 0.001], "epochs": [1]}},
        {"variants": ["sub_ensemble"], "ood_modes": ["min"], "seeds": [0, 1, 2, 3], "criterion": "entropy_fpr95",
         "grid": {"num_members": [2, 3], "batch_size": [8], "learning_rate": [0.1, 0.01, 0.001], "epochs": [2]}},
    ]
    checks, ok = 0, True
    for extra in plans:
        plan = ExperimentPlan.from_dict({
            "dataset": {"synthetic": {"classes": 3, "dim": 4, "per_class_count": [40, 30, 20],
                                      "cluster_mean_scale": 1.0, "cluster_stdev": 1.0, "seed": 9}},
            **extra})
        report = run_plan(plan)
        for criterion in (plan.criterion, "f1", "accuracy", "ace", "entropy_roc_auc"):
            lower = criterion in ("ace", "entropy_fpr95")
            ps = select_best(report["rows"], "per_seed_best", criterion)
            ba = select_best(report["rows"], "best_avg_config", criterion)
            for a, b in zip(ps, ba):
                x, y = a["metrics"][criterion]["mean"], b["metrics"][criterion]["mean"]
                ok &= (x <= y) if lower else (x >= y)
                checks += 1
    report_criterion(9, ok, f"per_seed_best never worse than best_avg_config ({checks} exact comparisons)")
    assert ok


def test_criterion_10_calibration_suite(report_criterion):
    rng = np.random.default_rng(10)
    # equal-count bins with confidence equal to bin accuracy by construction
    conf, correct = [], []
    for b in range(10):
        hits = b + 1
        conf += [hits / 10] * 10
        correct += [1] * hits + [0] * (10 - hits)
    ace_val = ace(conf, correct)
    cs, alphas, sizes = rng.integers(2, 10, 10_000), rng.uniform(0.05, 5, 10_000), rng.integers(1, 6, 10_000)
    entropies = [predictive_entropy(rng.dirichlet(np.full(c, a), size=s)) for c, a, s in zip(cs, alphas, sizes)]
    in_range = all(-1e-12 <= h <= math.log(c) + 1e-12 for h, c in zip(entropies, cs))
    correct_o = rng.random(200) < 0.6
    u_oracle = np.where(correct_o, rng.uniform(0, 1, 200), rng.uniform(2, 3, 200))
    r_oracle = raulc(u_oracle, correct_o)
    r_const = raulc(np.full(200, 0.5), correct_o)
    ok = ace_val < 1e-12 and in_range and abs(r_oracle - 1) < 1e-12 and abs(r_const) < 1e-12
    report_criterion(10, ok, f"ACE on calibrated set {ace_val:.1e}; entropy in [0, ln C] on 1e4 draws: {in_range}; "
                             f"rAULC oracle {r_oracle:.12f}, constant {r_const:.1e}")
    assert ok


def test_criterion_11_grid_reproducible(report_criterion, tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({
        "dataset": {"synthetic": {"classes": 4, "dim": 6, "per_class_count": [50, 40, 30, 20], "seed": 2}},
        "variants": ["lur", "rlur", "bbb_ll"],
        "grid": {"num_members": [2, 4], "batch_size": [16], "learning_rate": [0.01], "epochs": [2]},
        "seeds": [0, 1, 2],
        "ood_modes": ["min", "max"],
    }))
    outputs = []
    for jobs in (1, 1, 8, 8):
        out = tmp_path / f"r{len(outputs)}.json"
        assert main(["grid", "--plan", str(plan), "--out", str(out), "--jobs", str(jobs)]) == 0
        report = json.loads(out.read_text())
        report.pop("created")
        outputs.append(json.dumps(report, sort_keys=True))
    ok = len(set(outputs)) == 1
    report_criterion(11, ok, f"4 grid runs (--jobs 1, 1, 8, 8) of a 36-cell plan identical apart from 'created': {ok}")
    assert ok
