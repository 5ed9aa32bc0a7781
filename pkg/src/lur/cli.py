"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric or
training failure. Diagnostics go to stderr, data to stdout or ``--out``.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from . import metrics as M
from .data import SynthSpec, gen_synthetic, load_latents, make_ood_split, save_latents
from .errors import FormatError, InvalidInputError, NumericError
from .heads import VARIANTS, HeadConfig, load_head, save_head, train_head
from .repulsion import ESTIMATORS

log = logging.getLogger("lur")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_words(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _head_flags(p):
    g = p.add_argument_group("head (flag > --config file > default)")
    g.add_argument("--config", help="JSON file with HeadConfig fields")
    g.add_argument("--variant", choices=VARIANTS, help="head variant (default lur)")
    g.add_argument("--members", type=int, help="transforms / members / MC samples (default 5)")
    g.add_argument("--lr", type=float, help="SGD learning rate (default 0.01)")
    g.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
    g.add_argument("--epochs", type=int, help="training epochs (default 10)")
    g.add_argument("--kernel", choices=ESTIMATORS, help="repulsion estimator for rlur/rlle (default kde)")
    g.add_argument("--seed", type=int, required=True, help="training seed (required)")


def _head_config(args):
    d = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    flags = {"variant": args.variant, "num_members": args.members, "learning_rate": args.lr,
             "batch_size": args.batch_size, "epochs": args.epochs, "seed": args.seed}
    d.update({k: v for k, v in flags.items() if v is not None})
    if args.kernel:
        d["kernel"] = {**(d.get("kernel") or {}), "estimator": args.kernel}
    d.pop("latent_dim", None)
    d.pop("num_classes", None)
    try:
        return HeadConfig.from_dict(d).validate()
    except (TypeError, InvalidInputError) as exc:
        raise UsageError(f"bad head configuration: {exc}") from None


def build_parser():
    p = _Parser(prog="lur", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-synth", help="write a synthetic Gaussian-blob latent dataset")
    s.add_argument("--classes", type=int, default=5, help="number of classes (default 5)")
    s.add_argument("--dim", type=int, default=16, help="latent dimension (default 16)")
    s.add_argument("--per-class", type=_csv_ints, default=[200],
                   help="rows per class; one value or one per class (default 200)")
    s.add_argument("--mean-scale", type=float, default=3.0, help="stdev of class means (default 3)")
    s.add_argument("--stdev", type=float, default=0.5, help="within-class stdev (default 0.5)")
    s.add_argument("--seed", type=int, required=True, help="generator seed (required)")
    s.add_argument("--format", choices=("csv", "latf"), help="output format (default: from extension)")
    s.add_argument("--out", required=True, help="output file (.csv or .latf)")

    s = sub.add_parser("ingest", help="validate a latent file and convert it")
    s.add_argument("--data", required=True, help="input dataset")
    s.add_argument("--format", choices=("csv", "latf"), help="input format (default: from extension)")
    s.add_argument("--num-classes", type=int, help="declared class count for CSV input")
    s.add_argument("--out", help="converted output file (.csv or .latf); omit to only validate")

    s = sub.add_parser("train", help="train a head and save it as a LURH blob plus JSON sidecar")
    s.add_argument("--data", required=True, help="dataset file")
    _head_flags(s)
    s.add_argument("--out", required=True, help="head file; config goes to <out>.json")

    s = sub.add_parser("eval", help="in-distribution metrics of a saved head on test rows")
    s.add_argument("--head", required=True, help="head file written by train")
    s.add_argument("--data", required=True, help="dataset file")
    s.add_argument("--out", help="metrics JSON file (default stdout)")

    s = sub.add_parser("ood-eval", help="train on an OOD-min/max holdout split and score OOD detection")
    s.add_argument("--data", required=True, help="dataset file")
    s.add_argument("--mode", choices=("min", "max"), required=True, help="hold out least/most frequent class")
    s.add_argument("--scores", type=_csv_words, default=["entropy", "latent_variance"],
                   help="uncertainty scores (default entropy,latent_variance)")
    _head_flags(s)
    s.add_argument("--out", help="metrics JSON file (default stdout)")

    s = sub.add_parser("grid", help="run an experiment plan and write the report")
    s.add_argument("--plan", required=True, help="plan JSON file")
    s.add_argument("--out", required=True, help="report JSON file")
    s.add_argument("--markdown", help="also write the rendered table here")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s.add_argument("--seeds", type=_csv_ints, help="override plan seeds, e.g. 0,1,2")
    s.add_argument("--variants", type=_csv_words, help="override plan variants")
    s.add_argument("--modes", type=_csv_words, help="override plan ood_modes")
    s.add_argument("--criterion", help="override plan selection criterion")

    s = sub.add_parser("report", help="render a report JSON as markdown tables")
    s.add_argument("--report", required=True, help="report JSON file")
    s.add_argument("--criterion", help="re-select best configs by this metric")
    s.add_argument("--out", help="markdown output file (default stdout)")
    return p


def _cmd_gen_synth(args):
    per_class = args.per_class[0] if len(args.per_class) == 1 else tuple(args.per_class)
    spec = SynthSpec(args.classes, args.dim, per_class, args.mean_scale, args.stdev, args.seed)
    try:
        spec.validate()
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    ds = gen_synthetic(spec)
    save_latents(ds, args.out, args.format)
    log.info("wrote %d rows to %s", ds.n, args.out)


def _summary(ds):
    return {"n": ds.n, "dim": ds.dim, "classes": ds.num_classes,
            "train": int((~ds.is_test).sum()), "test": int(ds.is_test.sum()),
            "train_class_counts": ds.class_counts().tolist()}


def _cmd_ingest(args):
    ds = load_latents(args.data, args.format, args.num_classes)
    if args.out:
        save_latents(ds, args.out)
    _emit(_summary(ds))


def _cmd_train(args):
    cfg = _head_config(args)
    ds = load_latents(args.data)
    head = train_head(cfg, ds)
    save_head(head, args.out)
    _emit({"head": str(args.out), "variant": head.variant, "samples": head.num_samples})


def _in_dist_metrics(head, ds):
    test = ds.test()
    if test.n == 0:
        raise InvalidInputError("dataset has no test rows")
    preds = head.predict(test.features)
    mean = preds.mean_probs()
    pred = mean.argmax(axis=1)
    correct = pred == test.labels
    acc, f1 = M.accuracy_and_macro_f1(pred, test.labels, ds.num_classes)
    return {"accuracy": acc, "f1": f1, "ace": M.ace(mean.max(axis=1), correct),
            "raulc": M.raulc(M.entropy_scores(preds.probs), correct), "n_test": test.n}


def _cmd_eval(args):
    head = load_head(args.head)
    ds = load_latents(args.data)
    if ds.dim != head.config.latent_dim or ds.num_classes != head.config.num_classes:
        raise FormatError("dataset shape does not match the head")
    _emit(bench._clean(_in_dist_metrics(head, ds)), args.out)


def _cmd_ood_eval(args):
    bad = set(args.scores) - set(bench.SCORE_KINDS)
    if bad:
        raise UsageError(f"unknown scores: {', '.join(sorted(bad))}")
    cfg = _head_config(args)
    split = make_ood_split(load_latents(args.data), args.mode)
    head = train_head(cfg, split.in_train)
    result = bench.evaluate_split(head, split, args.scores)
    result.update({"mode": args.mode, "held_out_class": split.held_out_class, "variant": head.variant})
    _emit(bench._clean(result), args.out)


def _cmd_grid(args):
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    plan = bench.ExperimentPlan.load(args.plan)
    if args.seeds:
        plan.seeds = args.seeds
    if args.variants:
        plan.variants = args.variants
    if args.modes:
        plan.ood_modes = args.modes
    if args.criterion:
        plan.criterion = args.criterion
    plan.validate()
    report = bench.run_plan(plan, jobs=args.jobs, base_dir=Path(args.plan).resolve().parent)
    Path(args.out).write_text(bench.dumps_report(report))
    if args.markdown:
        Path(args.markdown).write_text(bench.render_markdown(report))
    failed = sum(r["status"] != "ok" for r in report["rows"])
    log.info("wrote %s (%d rows, %d failed)", args.out, len(report["rows"]), failed)


def _cmd_report(args):
    report = bench.load_report(args.report)
    if args.criterion:
        report["aggregates"] = [
            s for sel in bench.SELECTIONS for s in bench.select_best(report["rows"], sel, args.criterion)
        ]
    text = bench.render_markdown(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ood-eval": _cmd_ood_eval,
    "grid": _cmd_grid,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except InvalidInputError as exc:
        print(f"invalid data: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
