"""Command-line interface: dataset generation, training, evaluation, trials.

Commands are deterministic under fixed flags and seeds. Errors are reported
as one JSON object on stderr and a non-zero exit code. The environment
variable ``TRUSSKIT_NUM_THREADS`` caps the linear-algebra thread pool (it
must be set before the interpreter imports numpy; the package init forwards
it to the usual BLAS variables).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trusskit",
        description="Truss dataset generation and graph surrogate training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a design model and write a dataset file")
    gen.add_argument("--model", required=True, help="design model name (e.g. dm7, tower)")
    gen.add_argument("--n", type=int, required=True, help="number of designs to sample")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--filter-worst", type=float, default=0.0, metavar="FRAC",
                     help="drop this fraction of worst designs (by max displacement)")
    gen.add_argument("--element-kind", default="frame_beam", choices=("frame_beam", "truss_bar"))
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train a graph surrogate on dataset files")
    tr.add_argument("--data", nargs="+", required=True, help="one or more dataset files")
    tr.add_argument("--arch", default=None, help="architecture string (default: tuned)")
    tr.add_argument("--heads", type=int, default=None)
    tr.add_argument("--epochs", type=int, default=100)
    tr.add_argument("--batch", type=int, default=256)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--wd", type=float, default=1e-3)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--split", default="0.68,0.12,0.20", help="train,val,test fractions")
    tr.add_argument("--strict", action="store_true", help="reject unknown dataset fields")
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--history", default=None, help="loss-history CSV (default: <out>.history.csv)")

    ev = sub.add_parser("evaluate", help="per-design MAE of a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--strict", action="store_true")
    ev.add_argument("--out", required=True, help="per-design CSV path")

    tf = sub.add_parser("transfer", help="re-train a checkpoint on a target dataset")
    tf.add_argument("--ckpt", required=True)
    tf.add_argument("--data", nargs="+", required=True)
    tf.add_argument("--epochs", type=int, default=100)
    tf.add_argument("--batch", type=int, default=256)
    tf.add_argument("--lr", type=float, default=1e-3)
    tf.add_argument("--wd", type=float, default=1e-3)
    tf.add_argument("--seed", type=int, default=0)
    tf.add_argument("--split", default="0.68,0.12,0.20")
    tf.add_argument("--strict", action="store_true")
    tf.add_argument("--out", required=True, help="checkpoint path for the re-trained model")
    tf.add_argument("--history", default=None)

    trial = sub.add_parser("trial", help="run a configured trial and emit its report tree")
    trial.add_argument("--spec", required=True, help="key = value trial spec file")
    trial.add_argument("--out", required=True, help="output directory")

    fea_cmd = sub.add_parser("fea", help="solve a single truss description file")
    fea_cmd.add_argument("--in", dest="infile", required=True)
    fea_cmd.add_argument("--kind", default="frame_beam", choices=("frame_beam", "truss_bar"))
    fea_cmd.add_argument("--out", required=True, help="displacement CSV path")
    return parser


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"--split needs three comma-separated fractions, got {text!r}")
    return tuple(parts)


def _load_datasets(paths, strict: bool):
    from .datafiles import read_dataset
    from .datasets import merge

    datasets = [read_dataset(p, strict=strict) for p in paths]
    return datasets[0] if len(datasets) == 1 else merge(datasets)


def _write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "train_mse", "val_mse"))
        for epoch, (t, v) in enumerate(zip(history.train, history.val), start=1):
            writer.writerow((epoch, repr(t), repr(v)))


def _cmd_generate(args) -> int:
    from .datafiles import write_dataset
    from .datasets import filter_worst, generate_dataset
    from .designs import get_design_model

    model = get_design_model(args.model)
    dataset = generate_dataset(model, args.n, args.seed, element_kind=args.element_kind)
    generated = len(dataset.samples)
    if args.filter_worst > 0.0:
        dataset = filter_worst(dataset, args.filter_worst)
    write_dataset(dataset, args.out)
    print(
        f"generated={generated} dropped_mechanisms={dataset.dropped_mechanisms} "
        f"filtered={generated - len(dataset.samples)} kept={len(dataset.samples)} out={args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    from .datasets import split
    from .experiments import DEFAULT_ARCHITECTURE, DEFAULT_HEADS
    from .gsm import build_network, save_checkpoint
    from .training import TrainConfig, train

    dataset = _load_datasets(args.data, args.strict)
    train_set, val_set, _ = split(dataset, _parse_fractions(args.split), seed=args.seed)
    arch = args.arch or DEFAULT_ARCHITECTURE
    heads = args.heads if args.heads is not None else DEFAULT_HEADS
    net = build_network(arch, heads, seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.wd,
        seed=args.seed,
    )
    history = train(net, train_set, val_set, config)
    save_checkpoint(net, args.out)
    _write_history(history, args.history or args.out + ".history.csv")
    final_val = history.val[-1] if history.val else float("nan")
    print(f"trained epochs={args.epochs} train_graphs={len(train_set.samples)} "
          f"final_val_mse={final_val:.6g} ckpt={args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .experiments import per_design_mae
    from .gsm import load_checkpoint
    from .pointwise import TopologyError, fit_baseline
    from .training import predict_many

    net = load_checkpoint(args.ckpt)
    dataset = _load_datasets([args.data], args.strict)
    samples = dataset.samples
    if not samples:
        raise ValueError("dataset has no samples to evaluate")
    maes = per_design_mae(predict_many(net, samples), samples)
    try:
        baseline = fit_baseline(samples)
        baseline_maes = per_design_mae([baseline.predict() for _ in samples], samples)
    except TopologyError:
        baseline_maes = None  # mixed topologies have no mean-field baseline
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("design", "tag", "mae_cm", "baseline_mae_cm"))
        for i, sample in enumerate(samples):
            base = repr(float(baseline_maes[i])) if baseline_maes is not None else ""
            writer.writerow((i, sample.source_tag, repr(float(maes[i])), base))
    summary = f"designs={len(samples)} mean_mae_cm={maes.mean():.6g}"
    if baseline_maes is not None:
        summary += f" baseline_mae_cm={baseline_maes.mean():.6g}"
        summary += f" beats_baseline={bool(maes.mean() < baseline_maes.mean())}"
    print(summary)
    return 0


def _cmd_transfer(args) -> int:
    from .datasets import split
    from .gsm import load_checkpoint, save_checkpoint
    from .training import TrainConfig, transfer

    net = load_checkpoint(args.ckpt)
    dataset = _load_datasets(args.data, args.strict)
    train_set, val_set, _ = split(dataset, _parse_fractions(args.split), seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.wd,
        seed=args.seed,
    )
    history = transfer(net, train_set, val_set, config)
    save_checkpoint(net, args.out)
    _write_history(history, args.history or args.out + ".history.csv")
    print(f"transferred epochs={args.epochs} target_graphs={len(train_set.samples)} ckpt={args.out}")
    return 0


_SPEC_KEYS = {
    "trial": str,
    "target": str,
    "sources": "strlist",
    "sizes": "intlist",
    "seeds": "intlist",
    "n_source": int,
    "n_target_pool": int,
    "n_test": int,
    "arch": str,
    "heads": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "element_kind": str,
    "data_seed": int,
}


def parse_trial_spec(path):
    """Parse a ``key = value`` trial spec file (lists are comma-separated)."""
    from .experiments import default_spec

    raw: dict = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SPEC_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            kind = _SPEC_KEYS[key]
            if kind == "strlist":
                raw[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif kind == "intlist":
                raw[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                raw[key] = kind(value)
    if "trial" not in raw:
        raise ValueError(f"{path}: trial spec must set 'trial'")
    trial = raw.pop("trial")
    target = raw.pop("target", None)
    if "arch" in raw:
        raw["architecture"] = raw.pop("arch")
    return default_spec(trial, target, **raw)


def _cmd_trial(args) -> int:
    from .experiments import emit_report, run_trial

    spec = parse_trial_spec(args.spec)
    report = run_trial(spec)
    paths = emit_report(report, args.out)
    print(f"trial={spec.trial} target={spec.target} records={len(report.records)} "
          f"report={paths['report']}")
    return 0


def _cmd_fea(args) -> int:
    from . import fea
    from .datafiles import read_truss

    truss = read_truss(args.infile)
    result = fea.solve(truss, kind=args.kind)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("joint", "x_m", "y_m", "ux_m", "uy_m"))
        for i, joint in enumerate(truss.joints):
            writer.writerow(
                (
                    i,
                    repr(joint.position[0]),
                    repr(joint.position[1]),
                    repr(float(result.displacements[i, 0])),
                    repr(float(result.displacements[i, 1])),
                )
            )
    print(f"joints={truss.joint_count} max_displacement_m={result.max_displacement:.6g}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "transfer": _cmd_transfer,
    "trial": _cmd_trial,
    "fea": _cmd_fea,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # surface every failure as machine-readable stderr
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
