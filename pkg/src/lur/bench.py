"""Grid-search experiments over heads, seeds and OOD holdout modes.

A plan expands into cells ``(mode, variant, config, seed)``. Each cell trains
one head on the in-distribution train rows of the holdout split and records
in-distribution metrics on the in-distribution test rows plus OOD metrics
for every uncertainty score. Cells are independent and may run in worker
processes; the report is always assembled in sorted cell order.
"""
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .data import SynthSpec, gen_synthetic, load_latents, make_ood_split
from .errors import FormatError, InvalidInputError, NumericError
from .heads import VARIANTS, HeadConfig, train_head

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
GRID_KEYS = ("batch_size", "epochs", "learning_rate", "num_members")
DEFAULT_GRID = {
    "num_members": [5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
    "batch_size": [16, 32, 64],
    "learning_rate": [1e-2, 1e-3, 1e-4],
    "epochs": [5, 10, 15, 20, 25],
}
SCORE_KINDS = ("entropy", "latent_variance", "density")
SELECTIONS = ("per_seed_best", "best_avg_config")


@dataclass
class ExperimentPlan:
    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    variants: list = field(default_factory=lambda: ["regular", "lur"])
    grid: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRID.items()})
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ood_modes: list = field(default_factory=lambda: ["min", "max"])
    uncertainty_scores: list = field(default_factory=lambda: ["entropy", "latent_variance"])
    head: dict = field(default_factory=dict)  # HeadConfig overrides shared by all cells
    criterion: str = "entropy_roc_auc"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise FormatError("plan must be a JSON object")
        d = dict(d)
        d.pop("schema_version", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise FormatError(f"unknown plan fields: {', '.join(sorted(unknown))}")
        plan = cls(**d)
        grid = {k: list(v) for k, v in DEFAULT_GRID.items()}
        grid.update(plan.grid)
        plan.grid = grid
        return plan.validate()

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such plan file: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None

    def validate(self):
        bad = set(self.grid) - set(GRID_KEYS)
        if bad:
            raise FormatError(f"unknown grid keys: {', '.join(sorted(bad))}")
        if not self.variants or any(v not in VARIANTS for v in self.variants):
            raise FormatError(f"variants must be a non-empty subset of {VARIANTS}")
        if not self.seeds or any(not self.grid[k] for k in GRID_KEYS):
            raise FormatError("seeds and every grid axis must be non-empty")
        if not self.ood_modes or any(m not in ("min", "max") for m in self.ood_modes):
            raise FormatError("ood_modes must be a non-empty subset of {min, max}")
        if any(s not in SCORE_KINDS for s in self.uncertainty_scores):
            raise FormatError(f"uncertainty_scores must be a subset of {SCORE_KINDS}")
        if not ("path" in self.dataset) ^ ("synthetic" in self.dataset):
            raise FormatError("dataset needs exactly one of 'path' or 'synthetic'")
        bad = set(self.head) & (set(GRID_KEYS) | {"variant", "seed"})
        if bad:
            raise FormatError(f"head overrides may not set grid/cell fields: {', '.join(sorted(bad))}")
        HeadConfig.from_dict(self.head).validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def configs(self):
        axes = [sorted(set(self.grid[k])) for k in GRID_KEYS]
        return [dict(zip(GRID_KEYS, combo)) for combo in itertools.product(*axes)]

    def load_dataset(self, base_dir=None):
        if "synthetic" in self.dataset:
            return gen_synthetic(SynthSpec(**self.dataset["synthetic"]))
        path = Path(self.dataset["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_latents(path, self.dataset.get("format"), self.dataset.get("num_classes"))


def config_key(config):
    return tuple(config[k] for k in GRID_KEYS)


def score_arrays(head, preds, kinds):
    """Uncertainty scores per requested kind that this head supports."""
    out = {}
    if "entropy" in kinds:
        out["entropy"] = M.entropy_scores(preds.probs)
    if "latent_variance" in kinds and preds.latent_reps is not None and preds.latent_reps.shape[1] > 1:
        out["latent_variance"] = M.latent_variance_scores(preds.latent_reps)
    if preds.density is not None:
        out["density"] = preds.density
    return out


def evaluate_split(head, split, kinds=("entropy", "latent_variance")):
    """In-distribution and OOD metrics for a trained head on a holdout split."""
    pi = head.predict(split.in_test.features)
    po = head.predict(split.ood.features)
    mean = pi.mean_probs()
    labels = split.in_test.labels
    pred = np.argmax(mean, axis=1)
    correct = pred == labels
    ent_in = M.entropy_scores(pi.probs)
    acc, f1 = M.accuracy_and_macro_f1(pred, labels, split.in_test.num_classes)
    out = {
        "accuracy": acc,
        "f1": f1,
        "ace": M.ace(mean.max(axis=1), correct),
        "raulc": M.raulc(ent_in, correct),
    }
    s_in, s_ood = score_arrays(head, pi, kinds), score_arrays(head, po, kinds)
    for kind in s_in:
        for name, value in M.ood_metrics(s_in[kind], s_ood[kind]).items():
            out[f"{kind}_{name}"] = value
    return out


_WORKER = {}


def _init_worker(ds, plan):
    _WORKER["ds"] = ds
    _WORKER["plan"] = plan
    _WORKER["splits"] = {}


def _run_cell(cell):
    mode, variant, cfg, seed = cell
    ds, plan = _WORKER["ds"], _WORKER["plan"]
    splits = _WORKER["splits"]
    if mode not in splits:
        splits[mode] = make_ood_split(ds, mode)
    split = splits[mode]
    row = {"mode": mode, "variant": variant, "config": dict(cfg), "seed": seed}
    try:
        hc = HeadConfig.from_dict({**plan.head, **cfg, "variant": variant, "seed": seed})
        head = train_head(hc, split.in_train)
        row["metrics"] = evaluate_split(head, split, plan.uncertainty_scores)
        row["status"] = "ok"
    except (NumericError, InvalidInputError) as exc:
        row["metrics"] = {}
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def plan_cells(plan):
    return [
        (mode, variant, cfg, seed)
        for mode in sorted(plan.ood_modes)
        for variant in sorted(plan.variants)
        for cfg in plan.configs()
        for seed in sorted(plan.seeds)
    ]


def _row_sort_key(row):
    return (row["mode"], row["variant"], config_key(row["config"]), row["seed"])


def _better(a, b, lower):
    return a < b if lower else a > b


def _criterion_value(row, criterion):
    v = row["metrics"].get(criterion) if row.get("status") == "ok" else None
    return None if v is None or math.isnan(v) else v


def available_metrics(rows):
    return sorted({k for r in rows for k in r.get("metrics", {})})


def select_best(rows, selection, criterion, variant=None, mode=None):
    """Summaries of the best configurations per (variant, mode).

    ``per_seed_best`` picks the best config separately for every seed and
    averages those rows; ``best_avg_config`` picks the one config with the
    best seed-mean. Ties go to the lexicographically smaller config.
    """
    if selection not in SELECTIONS:
        raise InvalidInputError(f"selection must be one of {SELECTIONS}")
    if not any(_criterion_value(r, criterion) is not None for r in rows):
        raise InvalidInputError(
            f"criterion {criterion!r} not in report; available: {', '.join(available_metrics(rows))}"
        )
    lower = any(criterion == m or criterion.endswith("_" + m) for m in M.LOWER_IS_BETTER)
    groups = {}
    for r in rows:
        if (variant is None or r["variant"] == variant) and (mode is None or r["mode"] == mode):
            groups.setdefault((r["variant"], r["mode"]), []).append(r)
    summaries = []
    for (v, m), group in sorted(groups.items()):
        scored = sorted(
            [r for r in group if _criterion_value(r, criterion) is not None], key=_row_sort_key
        )
        if not scored:
            continue
        if selection == "per_seed_best":
            chosen = {}
            for r in scored:
                best = chosen.get(r["seed"])
                if best is None or _better(_criterion_value(r, criterion), _criterion_value(best, criterion), lower):
                    chosen[r["seed"]] = r
            picked = [chosen[s] for s in sorted(chosen)]
        else:
            by_cfg = {}
            for r in scored:
                by_cfg.setdefault(config_key(r["config"]), []).append(r)
            best_key, best_mean = None, None
            for key in sorted(by_cfg):
                mean = float(np.mean([_criterion_value(r, criterion) for r in by_cfg[key]]))
                if best_mean is None or _better(mean, best_mean, lower):
                    best_key, best_mean = key, mean
            picked = by_cfg[best_key]
        names = available_metrics(picked)
        agg = {}
        for name in names:
            mean, two_sem = M.aggregate_sem2([r["metrics"].get(name, math.nan) for r in picked])
            agg[name] = {"mean": None if math.isnan(mean) else mean, "two_sem": two_sem}
        summaries.append({
            "variant": v,
            "mode": m,
            "selection": selection,
            "criterion": criterion,
            "seeds": [r["seed"] for r in picked],
            "configs": [r["config"] for r in picked],
            "metrics": agg,
        })
    return summaries


def run_plan(plan, jobs=1, base_dir=None, ds=None):
    """Execute every cell of ``plan`` and return the report dict."""
    ds = plan.load_dataset(base_dir) if ds is None else ds
    cells = plan_cells(plan)
    log.info("running %d cells with %d job(s)", len(cells), jobs)
    if jobs <= 1:
        _init_worker(ds, plan)
        rows = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ds, plan)) as pool:
            rows = list(pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    rows.sort(key=_row_sort_key)
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d cells failed", failed, len(rows))
    aggregates = []
    if any(_criterion_value(r, plan.criterion) is not None for r in rows):
        for sel in SELECTIONS:
            aggregates.extend(select_best(rows, sel, plan.criterion))
    return {
        "schema_version": SCHEMA_VERSION,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "plan": plan.to_dict(),
        "dataset": {"n": ds.n, "dim": ds.dim, "classes": list(ds.class_names)},
        "rows": rows,
        "aggregates": aggregates,
    }


def _clean(obj):
    # JSON has no NaN; store missing values as null
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def dumps_report(report):
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def load_report(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such report file: {path}")
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not isinstance(report, dict) or "rows" not in report:
        raise FormatError(f"{path}: not a report (missing 'rows')")
    major = int(report.get("schema_version", 0))
    if major != SCHEMA_VERSION:
        raise FormatError(f"{path}: report schema {major} not supported (expected {SCHEMA_VERSION})")
    return report


_COLUMNS = [("accuracy", "Acc"), ("f1", "F1"), ("ace", "ACE"), ("raulc", "rAULC")]
_OOD_COLUMNS = [("roc_auc", "ROC-AUC"), ("pr_auc", "PR-AUC"), ("fpr95", "FPR95")]


def _cell(stat):
    if not stat or stat.get("mean") is None:
        return "n/a"
    if stat.get("two_sem") is None:
        return f"{stat['mean']:.3f}"
    return f"{stat['mean']:.3f} ± {stat['two_sem']:.3f}"


def render_markdown(report):
    """Human-readable tables, one per OOD mode, with ``mean ± two_sem`` cells."""
    aggs = report.get("aggregates", [])
    kinds = [k for k in SCORE_KINDS if any(f"{k}_roc_auc" in a["metrics"] for a in aggs)]
    lines = ["# Evaluation report", ""]
    ds = report.get("dataset", {})
    if ds:
        lines.append(f"Dataset: N={ds.get('n')}, D={ds.get('dim')}, C={len(ds.get('classes', []))}")
        lines.append("")
    for mode in sorted({a["mode"] for a in aggs}):
        lines.append(f"## OOD-{mode}")
        lines.append("")
        header = ["Variant", "Selection"] + [h for _, h in _COLUMNS]
        for kind in kinds:
            header += [f"{kind} {h}" for _, h in _OOD_COLUMNS]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for a in aggs:
            if a["mode"] != mode:
                continue
            cells = [a["variant"], a["selection"]] + [_cell(a["metrics"].get(k)) for k, _ in _COLUMNS]
            for kind in kinds:
                cells += [_cell(a["metrics"].get(f"{kind}_{k}")) for k, _ in _OOD_COLUMNS]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    crit = {a["criterion"] for a in aggs}
    if crit:
        lines.append(f"Selection criterion: {', '.join(sorted(crit))}")
    failed = [r for r in report.get("rows", []) if r.get("status") != "ok"]
    lines.append(f"Cells: {len(report.get('rows', []))} ({len(failed)} failed)")
    return "\n".join(lines) + "\n"
