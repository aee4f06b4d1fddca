"""Command-line entry point: ``stgt {train,eval,ablate,gradcheck,synth,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import graph as gd
from .config import VARIANTS, ConfigError, TrainConfig, load_config
from .graph import read_split_files, split_dataset
from .train import evaluate, load_run, report, train

log = logging.getLogger("stgt")


def _load_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return cfg.replace(**overrides) if overrides else cfg


def _load_data(path, cfg: TrainConfig):
    return gd.load_jsonl(path, cfg.task)


def _splits(args, n: int):
    if args.splits:
        return read_split_files(args.splits, n)
    return split_dataset(n, args.fractions, args.split_seed)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    examples = _load_data(args.data, cfg)
    record, _ = train(cfg, examples, _splits(args, len(examples)), args.out)
    print(json.dumps({"selected_epoch": record.selected_epoch, "metric": record.metric,
                      "valid": record.final_valid_metric, "test": record.final_test_metric, "seed": record.seed}))
    return 0


def _checkpoint_dirs(path: Path) -> tuple[Path, Path]:
    if (path / "manifest.json").exists():
        return path, path.parent
    if (path / "checkpoint" / "manifest.json").exists():
        return path / "checkpoint", path
    raise FileNotFoundError(f"no checkpoint manifest under {path}")


def cmd_eval(args) -> int:
    ckpt, run_dir = _checkpoint_dirs(Path(args.checkpoint))
    manifest = json.loads((ckpt / "manifest.json").read_text())
    cfg = TrainConfig.from_flat(manifest["config"])
    examples = _load_data(args.data, cfg)
    if args.split == "all":
        indices = list(range(len(examples)))
    else:
        split_dir = Path(args.splits) if args.splits else run_dir
        indices = read_split_files(split_dir, len(examples)).indices(args.split)
    result = evaluate(ckpt, examples, indices, args.split)
    print(json.dumps(result))
    return 0


def _variant_list(values) -> list[str]:
    chosen = []
    for v in values:
        chosen.extend(VARIANTS if v == "all" else [v])
    return list(dict.fromkeys(chosen))


def cmd_ablate(args) -> int:
    base = _load_config(args)
    examples = _load_data(args.data, base)
    split = _splits(args, len(examples))
    out = Path(args.out)
    summary = {}
    for variant in _variant_list(args.variant):
        runs = []
        for seed in args.seeds:
            cfg = base.replace(variant=variant, seed=seed)
            start = time.perf_counter()
            record, _ = train(cfg, examples, split, out / variant / f"seed-{seed}")
            log.info("%s seed %d: test %s %.5f (%.0fs)", variant, seed, record.metric,
                     record.final_test_metric, time.perf_counter() - start)
            runs.append((cfg, record))
        summary[variant] = report(runs)
        print(f"{variant:>18}  test {summary[variant]['metric']}: {summary[variant]['test']['text']}")
    (out / "ablation.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import GRADCHECK_TOLERANCE, run_gradchecks

    results = run_gradchecks(args.module, args.epsilon)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name:<12} max relative error {err:.3e}  {status}")
        worst = max(worst, err)
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def cmd_synth(args) -> int:
    examples = gd.generate_synthetic(args.task, args.count, (args.min_nodes, args.max_nodes), args.seed)
    gd.write_jsonl(examples, args.out)
    print(f"wrote {len(examples)} {args.task} examples to {args.out}")
    return 0


def _run_dirs(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if (p / "run.json").exists():
            found.append(p)
        else:
            found.extend(sorted(q.parent for q in p.rglob("run.json")))
    if not found:
        raise FileNotFoundError("no run.json found under " + ", ".join(map(str, paths)))
    return found


def cmd_report(args) -> int:
    runs = [load_run(d) for d in _run_dirs(args.runs)]
    groups: dict[str, list] = {}
    for cfg, rec in runs:
        groups.setdefault(cfg.variant, []).append((cfg, rec))
    if len(groups) > 1 and not args.by_variant:
        raise ConfigError("runs mix variants; pass --by-variant to report each separately")
    for variant, members in groups.items():
        result = report(members, args.digits)
        if args.json:
            print(json.dumps(result, sort_keys=True))
        else:
            print(f"{variant}: {result['metric']} over {result['n']} seeds  "
                  f"valid {result['valid']['text']}  test {result['test']['text']}")
    return 0


def _fractions(text: str) -> list[float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts


def _seeds(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stgt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, out=True):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--data", required=True, help="JSON-Lines example store")
        p.add_argument("--splits", help="directory with train.idx/valid.idx/test.idx")
        p.add_argument("--fractions", type=_fractions, default=[0.8, 0.1, 0.1])
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--epochs", type=int)
        if out:
            p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one run")
    data_args(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True, help="run directory or its checkpoint/ subdirectory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test", "all"])
    p.add_argument("--splits", help="split directory (defaults to the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train variants over several seeds")
    data_args(p)
    p.add_argument("--variant", nargs="+", default=["all"], choices=list(VARIANTS) + ["all"])
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="compare tape gradients with central differences")
    p.add_argument("--module", default="all", choices=["all", "mp", "serializer", "attn", "head", "full"])
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic example store")
    p.add_argument("--task", required=True, choices=sorted(gd.TASKS))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-nodes", type=int, default=5)
    p.add_argument("--max-nodes", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="mean ± std over seeds")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--digits", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--by-variant", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"stgt {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
