"""Command-line entry point.

Exit codes: 0 success, 2 usage or file problems, 3 numeric failures.
"""

from __future__ import annotations

import argparse
import json
import sys

from threadpoolctl import threadpool_limits

from . import matcher
from .config import ABLATIONS, TrainConfig, load_config, parse_overrides
from .datastore import (SynthConfig, generate_synthetic, load_dataset, nearest_centroid_accuracy,
                        save_features)
from .errors import AsclError, ConfigError, NumericError
from .evaluation import eval_sets, evaluate
from .experiments import GRADCHECK_TOL, ablation_table, gradient_check, run_ablation
from .modelio import load_model, save_model
from .training import train

EXIT_USAGE, EXIT_NUMERIC = 2, 3


def _config(args):
    overrides = parse_overrides(args.set)
    if args.threads is not None:
        overrides["train.threads"] = str(args.threads)
    if args.config:
        return load_config(args.config, overrides)
    return TrainConfig.from_dict(overrides)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_synth(args):
    cfg = SynthConfig(clusters=args.clusters, dim=args.dim, captions_per_image=args.captions_per_image,
                      noise=args.noise, regions=args.regions, min_words=args.min_words,
                      max_words=args.max_words, asymmetric=args.asymmetric, twins=args.twins)
    cfg.validate()
    ds = generate_synthetic(cfg, seed=args.seed)
    save_features(ds, args.out)
    summary = {"images": len(ds.images), "captions": len(ds.captions), "dim": ds.dim,
               "test_captions": len(ds.split_indices("test")),
               "nearest_centroid_accuracy": nearest_centroid_accuracy(ds)}
    print(json.dumps(summary, sort_keys=True))


def cmd_train(args):
    config = _config(args)
    ds = load_dataset(args.data)
    with threadpool_limits(limits=config.threads):
        params, tlog = train(ds, config)
    save_model(args.out, params, config)
    if args.log:
        header = json.dumps({"config": config.to_dict()}, sort_keys=True) + "\n"
        _write(args.log, header + tlog.to_jsonl())
    final = tlog.records[-1]
    print(json.dumps({"model": args.out, "epochs": config.epochs, "final_loss": final["loss"]}))


def cmd_eval(args):
    params, config = load_model(args.model)
    ds = load_dataset(args.data)
    report = evaluate(params, ds, args.split, lengths=args.lengths)
    out = report.to_dict()
    out["config"] = config.to_dict() if config else None
    _write(args.out, json.dumps(out, sort_keys=True, indent=2))


def cmd_score(args):
    params, _ = load_model(args.model)
    ds = load_dataset(args.data)
    images, texts, _ = eval_sets(ds, args.split)
    S = matcher.score_matrix(images, texts, params)
    lines = ["image_id," + ",".join(t.text_id for t in texts)]
    lines += [img.image_id + "," + ",".join(f"{v:.9g}" for v in row) for img, row in zip(images, S)]
    _write(args.out, "\n".join(lines) + "\n")


def cmd_gradcheck(args):
    errs = gradient_check(args.dim, args.heads, args.seed)
    worst = max(errs.values())
    for name, e in errs.items():
        print(f"{name:<10} {e:.3e}")
    print(f"max        {worst:.3e}  ({'ok' if worst <= GRADCHECK_TOL else 'FAIL'})")
    return 0 if worst <= GRADCHECK_TOL else EXIT_NUMERIC


def cmd_ablate(args):
    config = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in ABLATIONS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from {ABLATIONS}")
    ds = load_dataset(args.data)
    with threadpool_limits(limits=config.threads):
        reports = run_ablation(ds, config, variants)
    print(ablation_table(reports))
    if args.out:
        out = {"config": config.to_dict(), "variants": {v: r.to_dict() for v, r in reports.items()}}
        _write(args.out, json.dumps(out, sort_keys=True, indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="ascl", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic feature dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--clusters", type=int, default=32)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--captions-per-image", type=int, default=5)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--regions", type=int, default=8)
    s.add_argument("--min-words", type=int, default=6)
    s.add_argument("--max-words", type=int, default=12)
    s.add_argument("--asymmetric", type=float, default=0.0)
    s.add_argument("--twins", action="store_true", help="pair images that differ only in binding")
    s.set_defaults(func=cmd_synth)

    def with_config(sp):
        sp.add_argument("--config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--data", required=True)

    t = sub.add_parser("train", help="train a model")
    with_config(t)
    t.add_argument("--out", required=True, help="model file (.npz)")
    t.add_argument("--log", help="training log (JSON lines)")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "retrieval report as JSON"),
                                 ("score", cmd_score, "score matrix as CSV")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--model", required=True)
        e.add_argument("--data", required=True)
        e.add_argument("--split", default="test")
        e.add_argument("--out")
        if name == "eval":
            e.add_argument("--lengths", action="store_true")
        e.set_defaults(func=func)

    g = sub.add_parser("gradcheck", help="finite-difference audit of the training gradients")
    g.add_argument("--dim", type=int, default=8)
    g.add_argument("--heads", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and compare loss/fusion variants")
    with_config(a)
    a.add_argument("--variants", default=",".join(ABLATIONS))
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=args.threads or 1):
            return args.func(args) or 0
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AsclError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
