"""Dataset assembly: Latin-hypercube sampling, FEA labelling, filtering, splits."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import fea
from .designs import LOAD_NEWTONS, DesignModel
from .model import GraphSample, to_graph

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """A list of graph samples plus the provenance metadata that produced them."""

    samples: list[GraphSample]
    metadata: dict
    dropped_mechanisms: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def replace(self, samples: list[GraphSample], **metadata_updates) -> "Dataset":
        meta = dict(self.metadata)
        meta.update(metadata_updates)
        return Dataset(samples=list(samples), metadata=meta, dropped_mechanisms=self.dropped_mechanisms)


def latin_hypercube(n: int, d: int, seed: int) -> np.ndarray:
    """Latin-hypercube sample: (n, d) points in [0, 1).

    Each column places exactly one point in each of the n equal strata; the
    strata order is a seeded permutation and the within-stratum offset is
    seeded uniform.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    points = np.empty((n, d))
    for col in range(d):
        strata = rng.permutation(n)
        offsets = rng.random(n)
        points[:, col] = (strata + offsets) / n
    return points


def sample_max_displacement(sample: GraphSample) -> float:
    """Largest Euclidean joint displacement of one sample's target field."""
    return float(np.linalg.norm(sample.targets, axis=1).max(initial=0.0))


def sample_hash(sample: GraphSample) -> str:
    """Identity hash of a design (geometry, flags, topology, provenance tag)."""
    digest = hashlib.sha256()
    digest.update(sample.node_features.tobytes())
    digest.update(sample.edges.tobytes())
    digest.update(sample.source_tag.encode())
    return digest.hexdigest()


def generate_dataset(
    model: DesignModel,
    n: int,
    seed: int,
    element_kind: str = fea.FRAME_BEAM,
) -> Dataset:
    """Sample ``n`` designs by Latin hypercube, solve each, and featurize.

    Designs whose reduced stiffness matrix is singular (mechanisms) are
    dropped and counted; NumericalError propagates.
    """
    metadata = {
        "design_model": model.name,
        "load_newtons": LOAD_NEWTONS,
        "element_kind": element_kind,
        "seed": seed,
        "filter": "none",
    }
    if n == 0:
        return Dataset(samples=[], metadata=metadata)
    unit = latin_hypercube(n, model.param_count, seed)
    samples = []
    dropped = 0
    for row in unit:
        truss = model.generate_scaled(row)
        try:
            result = fea.solve(truss, kind=element_kind)
        except fea.MechanismError:
            dropped += 1
            continue
        samples.append(to_graph(truss, result.displacements, source_tag=model.name))
    if dropped:
        logger.info("dropped %d mechanism designs out of %d for %s", dropped, n, model.name)
    return Dataset(samples=samples, metadata=metadata, dropped_mechanisms=dropped)


def filter_worst(dataset: Dataset, fraction: float = 0.10) -> Dataset:
    """Drop the ceil(fraction * n) samples with the largest maximum displacement.

    Ties are broken by original index: among equal displacements the
    later sample is dropped first.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    n = len(dataset.samples)
    n_drop = int(np.ceil(fraction * n))
    if n_drop == 0:
        return dataset.replace(dataset.samples, filter=f"worst:{fraction:g}")
    maxdisp = np.array([sample_max_displacement(s) for s in dataset.samples])
    order = np.lexsort((np.arange(n), maxdisp))  # ascending displacement, then index
    keep = np.sort(order[: n - n_drop])
    return dataset.replace(
        [dataset.samples[i] for i in keep], filter=f"worst:{fraction:g}"
    )


def filter_against_reference(
    dataset: Dataset, reference: Dataset, percentile: float = 90.0
) -> Dataset:
    """Drop samples whose max displacement exceeds a reference-set percentile.

    The threshold is the linear-interpolation percentile of the reference
    set's maximum displacements.
    """
    if not reference.samples:
        raise ValueError("reference dataset is empty")
    ref = np.array([sample_max_displacement(s) for s in reference.samples])
    threshold = float(np.percentile(ref, percentile, method="linear"))
    kept = [s for s in dataset.samples if sample_max_displacement(s) <= threshold]
    return dataset.replace(kept, filter=f"reference:{percentile:g}")


def split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.68, 0.12, 0.20),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded random partition into train/validation/test.

    Sizes are floor(f0*n), floor(f1*n) and the remainder.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n = len(dataset.samples)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    parts = (
        order[:n_train],
        order[n_train : n_train + n_val],
        order[n_train + n_val :],
    )
    names = ("train", "val", "test")
    return tuple(
        dataset.replace([dataset.samples[i] for i in part], filter=dataset.metadata["filter"])
        for part, name in zip(parts, names)
    )


def merge(datasets: list[Dataset]) -> Dataset:
    """Concatenate datasets (multi-design-model training, Trial B style)."""
    if not datasets:
        raise ValueError("nothing to merge")
    samples = [s for d in datasets for s in d.samples]
    names = sorted({d.metadata["design_model"] for d in datasets})
    kinds = {d.metadata["element_kind"] for d in datasets}
    if len(kinds) != 1:
        raise ValueError(f"cannot merge datasets with mixed element kinds {kinds}")
    meta = dict(datasets[0].metadata)
    meta["design_model"] = "+".join(names)
    return Dataset(samples=samples, metadata=meta)
