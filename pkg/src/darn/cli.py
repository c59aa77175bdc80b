"""Command line entry point: ``darn run <config.json>`` and ``darn verify``."""
import argparse
import json
import sys
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .data import MultiDomainDataset, load_sparse_text, make_benchmark
from .errors import ConfigError, DivergenceError, InvalidInputError, ParseError
from .nn import save_checkpoint
from .trainer import TrainConfig, train
from .verify import run_checks

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

DATASET_DEFAULTS = {
    "rotated_gaussians": {
        "m": 500,
        "source_angles": [0, 15, 30],
        "target_angle": 10,
        "adversarial": [0],
        "noise": 0.5,
    },
    "sparse_text": {"dim": None},
}


def load_schema():
    return json.loads(resources.files("darn").joinpath("configs/schema.json").read_text())


def resolve_config(raw, out_override=None):
    """Validate ``raw`` and fill in every default."""
    validator = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if err is not None:
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}")
    seed = raw.get("seed", 0)
    ds = dict(raw["dataset"])
    kind = ds.get("generator") or ds.get("format")
    ds = {**DATASET_DEFAULTS[kind], **ds}
    train_cfg = {**asdict(TrainConfig()), **raw.get("train", {}), "seed": seed}
    try:
        TrainConfig(**train_cfg).validate()
    except InvalidInputError as e:
        raise ConfigError(f"train.{e}") from None
    return {
        "seed": seed,
        "output_dir": out_override or raw.get("output_dir", "runs/out"),
        "save_checkpoint": raw.get("save_checkpoint", False),
        "dataset": ds,
        "train": train_cfg,
    }


def build_dataset(ds, seed, base_dir):
    if ds.get("generator") == "rotated_gaussians":
        return make_benchmark(
            seed,
            m=ds["m"],
            source_angles=tuple(ds["source_angles"]),
            target_angle=ds["target_angle"],
            adversarial=tuple(ds["adversarial"]),
            noise=ds["noise"],
        )

    def load(p):
        path = Path(p)
        if not path.is_absolute():
            path = base_dir / path
        return load_sparse_text(path, dim=ds["dim"], name=path.stem)

    sources = [load(p) for p in ds["sources"]]
    target = load(ds["target_train"]).unlabelled()
    return MultiDomainDataset(sources, target, load(ds["target_eval"]))


def cmd_run(args):
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        cfg = resolve_config(raw, args.out)
        dataset = build_dataset(cfg["dataset"], cfg["seed"], path.parent)
    except (OSError, json.JSONDecodeError, ConfigError, ParseError, InvalidInputError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    names = {f.name for f in fields(TrainConfig)}
    tc = TrainConfig(**{k: v for k, v in cfg["train"].items() if k in names})
    try:
        # overflow is caught as a non-finite loss; the numpy warning is noise
        with np.errstate(over="ignore", invalid="ignore"):
            model, log = train(dataset, tc)
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    log.write_trainlog_csv(out / "trainlog.csv")
    log.write_eval_csv(out / "eval.csv")
    summary = log.summary()
    summary["config"] = cfg
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    if cfg["save_checkpoint"]:
        save_checkpoint(out / "model.ckpt", model, seeds={"seed": cfg["seed"]}, optimizer=tc.optimizer)
    print(f"{summary['eval_metric_name']} {summary['final_eval_metric']:.4f} -> {out}")
    return EXIT_OK


def cmd_verify(args):
    nu_tol = 1e-1 if args.inject_fault == "loose-nu" else 1e-12
    results = run_checks(args.profile, seed=args.seed, nu_tol=nu_tol)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="darn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="train from a JSON experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="override the config's output_dir")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="run the projection/Jacobian/power-iteration property checks")
    p.add_argument("--profile", choices=["default", "fast"], default="default")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=["loose-nu"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
