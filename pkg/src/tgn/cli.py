"""Command-line entry point: ``tgn generate|train|eval|validate-spec|trace``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .dataio import read_dataset, write_dataset
from .engine import embedding_trace, write_trace_csv
from .harness import TrainConfig, evaluate, load_checkpoint, train
from .models import ModelConfig
from .spec import GOLDEN_SPECS, SpecError, SpecParseError, golden_spec_text, load_spec, validate


def generate_instances(
    task: str,
    count: int,
    seed: int,
    n_min: int,
    n_max: int | None = None,
    k: int = 3,
    pairs_per_measure: int = 32,
    measures=("degree", "betweenness"),
) -> list:
    """Oracle-labelled instances. Pair tasks yield 2 * count instances (positive first)."""
    n_max = n_min if n_max is None else n_max
    if count < 1 or n_min < 1 or n_max < n_min:
        raise ValueError(f"bad sizes: count={count}, n in [{n_min}, {n_max}]")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        s = [seed, i]
        if task == "sat":
            out.extend(oracles.gen_sat_pair(n, s))
        elif task == "tsp":
            out.extend(oracles.gen_tsp_pair(n, s))
        elif task == "kcolor":
            out.extend(oracles.gen_coloring_pair(n, k, s))
        elif task == "centrality":
            out.append(oracles.gen_centrality_instance(n, s, pairs_per_measure, measures))
        else:
            raise ValueError(f"unknown task {task!r}")
    return out


def _spec_text(arg: str) -> str:
    if arg in GOLDEN_SPECS:
        return golden_spec_text(arg)
    return Path(arg).read_text()


def _model_config(a) -> ModelConfig:
    return ModelConfig(
        a.task,
        d=a.d,
        t_max=a.t_max,
        seed=a.seed,
        layer_norm=a.layer_norm,
        aggregation=a.aggregation,
        k=a.k,
        measures=tuple(a.measures.split(",")),
        color_init=a.color_init,
    )


def cmd_generate(a) -> int:
    n_min = a.n if a.n is not None else a.n_min
    n_max = a.n if a.n is not None else a.n_max
    if n_min is None:
        raise ValueError("give --n or --n-min/--n-max")
    insts = generate_instances(a.task, a.count, a.seed, n_min, n_max, a.k, a.pairs, tuple(a.measures.split(",")))
    write_dataset(a.out, a.task, insts, {"seed": a.seed, "n_min": n_min, "n_max": n_max or n_min})
    print(f"wrote {len(insts)} {a.task} instances to {a.out}")
    return 0


def cmd_train(a) -> int:
    cfg = TrainConfig(
        _model_config(a),
        train_path=a.train,
        test_path=a.test,
        epochs=a.epochs,
        batch_size=a.batch_size,
        lr=a.lr,
        seed=a.seed,
        checkpoint_path=a.checkpoint,
        metrics_path=a.metrics,
        stop_accuracy=a.stop_accuracy,
    )
    _, rows = train(cfg)
    last = {r.split: r for r in rows}
    for r in last.values():
        print(f"epoch {r.epoch} {r.split}: loss {r.loss:.4f} accuracy {r.accuracy:.3f}")
    return 0


def cmd_eval(a) -> int:
    row = evaluate(a.checkpoint, a.data, split=a.split)
    print(f"{row.split}: loss {row.loss:.6f} accuracy {row.accuracy:.4f} ({row.seconds:.2f}s)")
    return 0


def cmd_validate_spec(a) -> int:
    plan = validate(load_spec(_spec_text(a.spec)))
    print(plan.describe())
    return 0


def cmd_trace(a) -> int:
    ckpt = load_checkpoint(a.checkpoint)
    model = ckpt.model
    task, instances = read_dataset(a.data)
    if task != model.task:
        raise ValueError(f"dataset task {task!r} does not match checkpoint task {model.task!r}")
    if not 0 <= a.index < len(instances):
        raise ValueError(f"index {a.index} outside dataset of {len(instances)}")
    ex = model.encode(instances[a.index], np.random.default_rng([model.config.seed, a.index]))
    t_max = model.config.t_max if a.t_max is None else a.t_max
    trace = embedding_trace(model.plan, model.tgn, model.embed(ex.batch), t_max, model.config.aggregation)
    with open(a.out, "w", newline="") as fh:
        write_trace_csv(trace, fh)
    print(f"wrote {t_max + 1} snapshots to {a.out}")
    return 0


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, default=32, help="embedding size for every type")
    p.add_argument("--t-max", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layer-norm", action="store_true")
    p.add_argument("--aggregation", choices=("sum", "mean"), default="sum")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--measures", default="degree,betweenness")
    p.add_argument("--color-init", choices=("uniform", "hypersphere"), default="uniform")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgn", description="Typed graph networks: data, training and inspection.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an oracle-labelled dataset")
    g.add_argument("task", choices=("sat", "tsp", "centrality", "kcolor"))
    g.add_argument("--n", type=int, help="instance size (variables, cities or vertices)")
    g.add_argument("--n-min", type=int)
    g.add_argument("--n-max", type=int)
    g.add_argument("--count", type=int, required=True, help="pairs for sat/tsp/kcolor, graphs for centrality")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--pairs", type=int, default=32, help="comparison pairs per measure (centrality)")
    g.add_argument("--measures", default="degree,betweenness")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model and log metrics")
    t.add_argument("task", choices=("sat", "tsp", "centrality", "kcolor"))
    t.add_argument("--train", required=True)
    t.add_argument("--test")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--checkpoint")
    t.add_argument("--metrics")
    t.add_argument("--stop-accuracy", type=float)
    _model_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--split", default="eval")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("validate-spec", help="compile a spec and print its plan")
    v.add_argument("spec", help=f"a JSON file or one of {', '.join(GOLDEN_SPECS)}")
    v.set_defaults(fn=cmd_validate_spec)

    r = sub.add_parser("trace", help="export per-iteration embeddings of one instance as CSV")
    r.add_argument("checkpoint")
    r.add_argument("data")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--t-max", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_trace)
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)  # exits 2 with usage on bad flags
    try:
        return args.fn(args)
    except SpecError as e:
        print(f"tgn: invalid spec: {e}", file=sys.stderr)
    except (SpecParseError, ValueError, OSError, RuntimeError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"tgn {args.command}: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
