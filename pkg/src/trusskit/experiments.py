"""Trial harness: generalization and transfer-learning studies over design models.

Trials (one report per target design model):

* A - train and test on the target model only.
* B - train on every design model in the spanning family, test on the target.
* C - train on every model except the target (generalization to unseen models).
* D - pre-train as in C, then fine-tune on small target sets of size N.
* E - pre-train on the uniformly loaded spanning truss, fine-tune on the
  end-loaded variant (transfer across load cases).
* F - pre-train on the spanning truss, fine-tune on lattice towers.
* G - pre-train on the spanning truss, fine-tune on deck bridges
  (batch size 128, learning rate 5e-4).

Transfer trials compare the fine-tuned model against a scratch-trained model,
the pointwise forest, and the mean baseline on a held-out test pool, sweeping
the target training size N with several seeds.
"""

from __future__ import annotations

import csv
import os
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import (
    Dataset,
    filter_against_reference,
    filter_worst,
    generate_dataset,
    sample_hash,
    split,
)
from .designs import get_design_model
from .fea import FRAME_BEAM
from .gsm import GsmNetwork, build_network
from .pointwise import MeanBaseline, PointwiseSurrogate, fit_baseline, fit_pointwise
from .training import LossHistory, TrainConfig, predict_many, train, transfer

DM_FAMILY = ("dm5", "dm6", "dm7", "dm8", "dm9")
SPLIT_FRACTIONS = (0.68, 0.12, 0.20)
WORST_FRACTION = 0.10
REFERENCE_PERCENTILE = 90.0

DEFAULT_ARCHITECTURE = "L16/C32/C64/C128/C256/C512/C256/C128/L64/L2"
DEFAULT_HEADS = 8
# Reduced profile for desk-scale (CPU) runs: one fewer wide layer, 4 heads.
REDUCED_ARCHITECTURE = "L16/C32/C64/C128/C256/C256/C128/L64/L2"
REDUCED_HEADS = 4

MODEL_SCRATCH = "gsm_scratch"
MODEL_PRETRAINED = "gsm_pretrained"
MODEL_POINTWISE = "pointwise"
MODEL_BASELINE = "baseline"


def mae(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean absolute error over all joints and both components, in cm."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return float(np.abs(pred - true).mean() * 100.0)


def per_design_mae(predictions, samples) -> np.ndarray:
    return np.array([mae(p, s.targets) for p, s in zip(predictions, samples)])


def dataset_mae(predictions, samples) -> float:
    """Dataset MAE: the unweighted mean of per-design MAEs, in cm."""
    return float(per_design_mae(predictions, samples).mean())


@dataclass(frozen=True)
class TrialSpec:
    """Configuration of one trial run against one target design model."""

    trial: str
    target: str
    sources: tuple[str, ...] = ()
    sizes: tuple[int, ...] = (20, 50, 100, 200, 500, 1000)
    seeds: tuple[int, ...] = (0, 1, 2)
    n_source: int = 1000
    n_target_pool: int = 1000
    n_test: int = 1000
    architecture: str = DEFAULT_ARCHITECTURE
    heads: int = DEFAULT_HEADS
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    element_kind: str = FRAME_BEAM
    data_seed: int = 11

    def __post_init__(self):
        if self.trial not in "ABCDEFG" or len(self.trial) != 1:
            raise ValueError(f"unknown trial {self.trial!r}")
        if self.trial in ("C", "D") and self.target in self.sources:
            raise ValueError(f"trial {self.trial} sources must exclude the target")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=seed,
        )


def default_spec(trial: str, target: str | None = None, **overrides) -> TrialSpec:
    """Paper-protocol spec for a trial letter, with keyword overrides."""
    trial = trial.upper()
    defaults: dict = {}
    if trial in ("A", "B", "C", "D"):
        target = target or "dm7"
        if trial == "A":
            defaults["sources"] = (target,)
        elif trial == "B":
            defaults["sources"] = DM_FAMILY
        else:
            defaults["sources"] = tuple(m for m in DM_FAMILY if m != target)
    elif trial == "E":
        target = target or "dm7_endloads"
        defaults["sources"] = ("dm7",)
    elif trial == "F":
        target = target or "tower"
        defaults["sources"] = ("dm7",)
    elif trial == "G":
        target = target or "bridge"
        defaults["sources"] = ("dm7",)
        defaults["batch_size"] = 128
        defaults["learning_rate"] = 5e-4
    else:
        raise ValueError(f"unknown trial {trial!r}")
    defaults.update(overrides)
    return TrialSpec(trial=trial, target=target, **defaults)


@dataclass(frozen=True)
class TrialRecord:
    trial: str
    target: str
    n_train: int
    seed: int
    model: str
    mae_cm: float
    baseline_mae_cm: float
    delta_vs_scratch_pct: float | None = None
    per_design_mae_cm: tuple[float, ...] = ()


@dataclass
class TrialReport:
    spec: TrialSpec
    records: list[TrialRecord] = field(default_factory=list)
    histories: dict[tuple, LossHistory] = field(default_factory=dict)

    def select(self, model: str, n_train: int | None = None) -> list[TrialRecord]:
        return [
            r
            for r in self.records
            if r.model == model and (n_train is None or r.n_train == n_train)
        ]

    def median_mae(self, model: str, n_train: int | None = None) -> float:
        maes = [r.mae_cm for r in self.select(model, n_train)]
        if not maes:
            raise KeyError(f"no records for model {model!r}, n_train {n_train!r}")
        return float(np.median(maes))


def _derive_seed(base: int, *parts) -> int:
    text = ":".join(str(p) for p in parts)
    return (int(base) * 0x9E3779B1 + zlib.crc32(text.encode())) % (2**31 - 1)


def _assert_disjoint(train_samples, test_samples, context: str):
    train_hashes = {sample_hash(s) for s in train_samples}
    test_hashes = {sample_hash(s) for s in test_samples}
    overlap = train_hashes & test_hashes
    if overlap:
        raise RuntimeError(f"{context}: {len(overlap)} designs appear in both train and test")


def _source_pool(spec: TrialSpec, name: str) -> Dataset:
    raw = generate_dataset(
        get_design_model(name),
        spec.n_source,
        _derive_seed(spec.data_seed, name, "source"),
        element_kind=spec.element_kind,
    )
    return filter_worst(raw, WORST_FRACTION)


def _target_pools(spec: TrialSpec) -> tuple[Dataset, Dataset]:
    """Held-out test pool plus the training pool filtered against it."""
    test_pool = filter_worst(
        generate_dataset(
            get_design_model(spec.target),
            spec.n_test,
            _derive_seed(spec.data_seed, spec.target, "test"),
            element_kind=spec.element_kind,
        ),
        WORST_FRACTION,
    )
    train_pool = filter_against_reference(
        generate_dataset(
            get_design_model(spec.target),
            spec.n_target_pool,
            _derive_seed(spec.data_seed, spec.target, "pool"),
            element_kind=spec.element_kind,
        ),
        test_pool,
        REFERENCE_PERCENTILE,
    )
    _assert_disjoint(train_pool.samples, test_pool.samples, f"trial {spec.trial}")
    return train_pool, test_pool


def _gsm_maes(net: GsmNetwork, samples) -> np.ndarray:
    return per_design_mae(predict_many(net, samples), samples)


def _baseline_maes(baseline: MeanBaseline, samples) -> np.ndarray:
    return per_design_mae([baseline.predict() for _ in samples], samples)


def _pointwise_maes(model: PointwiseSurrogate, samples) -> np.ndarray:
    return per_design_mae([model.predict(s) for s in samples], samples)


# ---------------------------------------------------------------------------
# Trials A-C: single-training generalization studies


def _run_single_training(spec: TrialSpec, include_target_in_train: bool) -> TrialReport:
    names = list(dict.fromkeys(spec.sources))
    if include_target_in_train and spec.target not in names:
        names.append(spec.target)
    pools = {name: _source_pool(spec, name) for name in names}
    if spec.target not in pools:
        target_pool = _source_pool(spec, spec.target)
    else:
        target_pool = pools[spec.target]
    report = TrialReport(spec=spec)
    for seed in spec.seeds:
        train_samples: list = []
        val_samples: list = []
        for name in names:
            tr, va, _ = split(pools[name], SPLIT_FRACTIONS, seed=seed)
            train_samples.extend(tr.samples)
            val_samples.extend(va.samples)
        target_train, _, target_test = split(target_pool, SPLIT_FRACTIONS, seed=seed)
        test_samples = target_test.samples
        _assert_disjoint(train_samples, test_samples, f"trial {spec.trial}")
        if not include_target_in_train and any(
            s.source_tag == spec.target for s in train_samples
        ):
            raise RuntimeError(f"trial {spec.trial} training set contains target designs")

        baseline = fit_baseline(target_train)
        baseline_mae = float(_baseline_maes(baseline, test_samples).mean())

        net = build_network(spec.architecture, spec.heads, seed=seed)
        history = train(net, train_samples, val_samples, spec.train_config(seed))
        gsm_per_design = _gsm_maes(net, test_samples)
        report.records.append(
            TrialRecord(
                trial=spec.trial,
                target=spec.target,
                n_train=len(train_samples),
                seed=seed,
                model=MODEL_SCRATCH,
                mae_cm=float(gsm_per_design.mean()),
                baseline_mae_cm=baseline_mae,
                per_design_mae_cm=tuple(gsm_per_design),
            )
        )
        report.histories[(spec.trial, spec.target, len(train_samples), seed, MODEL_SCRATCH)] = history
        report.records.append(
            TrialRecord(
                trial=spec.trial,
                target=spec.target,
                n_train=len(target_train.samples),
                seed=seed,
                model=MODEL_BASELINE,
                mae_cm=baseline_mae,
                baseline_mae_cm=baseline_mae,
            )
        )
        if spec.trial == "A":
            pointwise = fit_pointwise(target_train, seed=seed)
            pw_per_design = _pointwise_maes(pointwise, test_samples)
            report.records.append(
                TrialRecord(
                    trial=spec.trial,
                    target=spec.target,
                    n_train=len(target_train.samples),
                    seed=seed,
                    model=MODEL_POINTWISE,
                    mae_cm=float(pw_per_design.mean()),
                    baseline_mae_cm=baseline_mae,
                    per_design_mae_cm=tuple(pw_per_design),
                )
            )
    return report


def run_trial_a(spec: TrialSpec) -> TrialReport:
    """Train and test on the target design model only."""
    return _run_single_training(replace(spec, sources=(spec.target,)), include_target_in_train=True)


def run_trial_b(spec: TrialSpec) -> TrialReport:
    """Train on all design models combined, test on the target."""
    return _run_single_training(spec, include_target_in_train=True)


def run_trial_c(spec: TrialSpec) -> TrialReport:
    """Train with all target-model designs removed, test on the target."""
    return _run_single_training(spec, include_target_in_train=False)


# ---------------------------------------------------------------------------
# Trials D-G: transfer-learning sweeps


def pretrain_source_model(spec: TrialSpec) -> tuple[GsmNetwork, LossHistory]:
    """Train one network on the union of the spec's source-model pools."""
    seed = _derive_seed(spec.data_seed, "pretrain")
    train_samples: list = []
    val_samples: list = []
    for name in spec.sources:
        tr, va, _ = split(_source_pool(spec, name), SPLIT_FRACTIONS, seed=seed)
        train_samples.extend(tr.samples)
        val_samples.extend(va.samples)
    net = build_network(spec.architecture, spec.heads, seed=seed)
    history = train(net, train_samples, val_samples, spec.train_config(seed))
    return net, history


def run_transfer_trial(spec: TrialSpec, pretrained: GsmNetwork | None = None) -> TrialReport:
    """Fine-tune vs scratch vs pointwise vs baseline over target sizes and seeds."""
    report = TrialReport(spec=spec)
    if pretrained is None:
        pretrained, pretrain_history = pretrain_source_model(spec)
        report.histories[(spec.trial, spec.target, spec.n_source, -1, "gsm_pretrain_source")] = (
            pretrain_history
        )
    train_pool, test_pool = _target_pools(spec)
    test_samples = test_pool.samples

    # The sweep baseline uses the full training pool, so it is constant in N.
    baseline = fit_baseline(train_pool)
    baseline_per_design = _baseline_maes(baseline, test_samples)
    baseline_mae = float(baseline_per_design.mean())

    for n_train in spec.sizes:
        if n_train > len(train_pool.samples):
            raise ValueError(
                f"requested N={n_train} but the filtered target pool has "
                f"{len(train_pool.samples)} designs"
            )
        for seed in spec.seeds:
            rng = np.random.default_rng(
                _derive_seed(spec.data_seed, spec.target, "subset", n_train, seed)
            )
            rows = rng.choice(len(train_pool.samples), size=n_train, replace=False)
            subset = train_pool.replace([train_pool.samples[i] for i in rows])
            # 85/15 train/val; the remainder slot absorbs rounding, so route
            # the larger share through it to keep every design in use.
            _, target_val, target_train = split(subset, (0.0, 0.15, 0.85), seed=seed)
            _assert_disjoint(target_train.samples, test_samples, f"trial {spec.trial}")

            config = spec.train_config(seed)
            scratch = build_network(spec.architecture, spec.heads, seed=seed)
            scratch_history = train(scratch, target_train, target_val, config)
            scratch_per_design = _gsm_maes(scratch, test_samples)
            scratch_mae = float(scratch_per_design.mean())

            tuned = pretrained.clone()
            tuned_history = transfer(tuned, target_train, target_val, config)
            tuned_per_design = _gsm_maes(tuned, test_samples)
            tuned_mae = float(tuned_per_design.mean())

            pointwise = fit_pointwise(target_train, seed=seed)
            pw_per_design = _pointwise_maes(pointwise, test_samples)

            common = dict(trial=spec.trial, target=spec.target, n_train=n_train, seed=seed)
            report.records.append(
                TrialRecord(
                    **common,
                    model=MODEL_SCRATCH,
                    mae_cm=scratch_mae,
                    baseline_mae_cm=baseline_mae,
                    per_design_mae_cm=tuple(scratch_per_design),
                )
            )
            report.records.append(
                TrialRecord(
                    **common,
                    model=MODEL_PRETRAINED,
                    mae_cm=tuned_mae,
                    baseline_mae_cm=baseline_mae,
                    delta_vs_scratch_pct=100.0 * (tuned_mae - scratch_mae) / scratch_mae,
                    per_design_mae_cm=tuple(tuned_per_design),
                )
            )
            report.records.append(
                TrialRecord(
                    **common,
                    model=MODEL_POINTWISE,
                    mae_cm=float(pw_per_design.mean()),
                    baseline_mae_cm=baseline_mae,
                    per_design_mae_cm=tuple(pw_per_design),
                )
            )
            report.records.append(
                TrialRecord(
                    **common,
                    model=MODEL_BASELINE,
                    mae_cm=baseline_mae,
                    baseline_mae_cm=baseline_mae,
                    per_design_mae_cm=tuple(baseline_per_design),
                )
            )
            key = (spec.trial, spec.target, n_train, seed)
            report.histories[key + (MODEL_SCRATCH,)] = scratch_history
            report.histories[key + (MODEL_PRETRAINED,)] = tuned_history
    return report


run_trial_d = run_transfer_trial
run_trial_e = run_transfer_trial
run_trial_f = run_transfer_trial
run_trial_g = run_transfer_trial


def run_trial(spec: TrialSpec, pretrained: GsmNetwork | None = None) -> TrialReport:
    """Dispatch a spec to its trial wiring."""
    if spec.trial == "A":
        return run_trial_a(spec)
    if spec.trial == "B":
        return run_trial_b(spec)
    if spec.trial == "C":
        return run_trial_c(spec)
    return run_transfer_trial(spec, pretrained=pretrained)


# ---------------------------------------------------------------------------
# report emission

REPORT_COLUMNS = (
    "trial",
    "target",
    "n_train",
    "seed",
    "model",
    "mae_cm",
    "baseline_mae_cm",
    "delta_vs_scratch_pct",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_sort_key(record: TrialRecord):
    return (record.trial, record.target, record.n_train, record.seed, record.model)


def emit_report(reports, out_dir) -> dict[str, str]:
    """Write tidy CSV files for one or more trial reports.

    Produces ``report.csv`` (one row per trial/target/N/seed/model),
    ``per_design_mae.csv`` (error-distribution data) and
    ``loss_histories.csv`` (per-epoch training curves). Rows are sorted, and
    floats use round-trip repr, so identical inputs produce identical bytes.
    """
    if isinstance(reports, TrialReport):
        reports = [reports]
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.csv"),
        "per_design": os.path.join(out_dir, "per_design_mae.csv"),
        "histories": os.path.join(out_dir, "loss_histories.csv"),
    }
    records = sorted((r for rep in reports for r in rep.records), key=_record_sort_key)
    with open(paths["report"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.trial,
                    r.target,
                    r.n_train,
                    r.seed,
                    r.model,
                    _fmt(r.mae_cm),
                    _fmt(r.baseline_mae_cm),
                    _fmt(r.delta_vs_scratch_pct),
                ]
            )
    with open(paths["per_design"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("trial", "target", "n_train", "seed", "model", "design", "mae_cm"))
        for r in records:
            for i, value in enumerate(r.per_design_mae_cm):
                writer.writerow([r.trial, r.target, r.n_train, r.seed, r.model, i, _fmt(value)])
    history_rows = []
    for rep in reports:
        for (trial, target, n_train, seed, model), history in rep.histories.items():
            for epoch, (t_loss, v_loss) in enumerate(zip(history.train, history.val), start=1):
                history_rows.append((trial, target, n_train, seed, model, epoch, t_loss, v_loss))
    history_rows.sort(key=lambda row: row[:6])
    with open(paths["histories"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("trial", "target", "n_train", "seed", "model", "epoch", "train_mse", "val_mse")
        )
        for row in history_rows:
            writer.writerow([*row[:6], _fmt(row[6]), _fmt(row[7])])
    return paths


def read_report(path) -> list[TrialRecord]:
    """Parse a ``report.csv`` back into records (per-design data lives elsewhere)."""
    records = []
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report columns {reader.fieldnames}")
        for row in reader:
            records.append(
                TrialRecord(
                    trial=row["trial"],
                    target=row["target"],
                    n_train=int(row["n_train"]),
                    seed=int(row["seed"]),
                    model=row["model"],
                    mae_cm=float(row["mae_cm"]),
                    baseline_mae_cm=float(row["baseline_mae_cm"]),
                    delta_vs_scratch_pct=(
                        float(row["delta_vs_scratch_pct"]) if row["delta_vs_scratch_pct"] else None
                    ),
                )
            )
    return records
