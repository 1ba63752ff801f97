"""File formats: JSON-Lines datasets and JSON truss descriptions.

Dataset files are JSON-Lines: the first line is a metadata object
``{format_version, design_model, load_newtons, element_kind, seed, filter}``
and every following line is one graph sample
``{nodes, edges, targets, tag}``. Numbers are serialized with full 64-bit
round-trip precision and key order is fixed, so identical datasets produce
byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .datasets import Dataset
from .model import GraphSample, Joint, Material, Truss

DATASET_FORMAT_VERSION = 1
TRUSS_FORMAT_VERSION = 1

_METADATA_KEYS = ("design_model", "load_newtons", "element_kind", "seed", "filter")
_SAMPLE_KEYS = ("nodes", "edges", "targets", "tag")


class DataFormatError(Exception):
    """A data file is malformed or violates the strict schema."""


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_dataset(dataset: Dataset, path):
    """Write a dataset as JSON-Lines (metadata line, then one sample per line)."""
    missing = [k for k in _METADATA_KEYS if k not in dataset.metadata]
    if missing:
        raise DataFormatError(f"dataset metadata is missing keys {missing}")
    meta = {"format_version": DATASET_FORMAT_VERSION}
    meta.update({k: dataset.metadata[k] for k in _METADATA_KEYS})
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_dump_line(meta) + "\n")
        for sample in dataset.samples:
            fh.write(
                _dump_line(
                    {
                        "nodes": sample.node_features.tolist(),
                        "edges": sample.edges.tolist(),
                        "targets": sample.targets.tolist(),
                        "tag": sample.source_tag,
                    }
                )
                + "\n"
            )


def _check_keys(obj: dict, known: tuple, required: tuple, what: str, strict: bool):
    missing = [k for k in required if k not in obj]
    if missing:
        raise DataFormatError(f"{what} is missing keys {missing}")
    if strict:
        unknown = sorted(set(obj) - set(known))
        if unknown:
            raise DataFormatError(f"{what} has unknown keys {unknown} (strict mode)")


def read_dataset(path, strict: bool = False) -> Dataset:
    """Read a JSON-Lines dataset; under ``strict`` unknown fields are rejected."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path} is empty")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: bad metadata line: {exc}") from exc
    if not isinstance(meta, dict):
        raise DataFormatError(f"{path}: metadata line must be an object")
    _check_keys(
        meta,
        ("format_version",) + _METADATA_KEYS,
        ("format_version",) + _METADATA_KEYS,
        "dataset metadata",
        strict,
    )
    if meta["format_version"] != DATASET_FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported dataset format_version {meta['format_version']!r}"
        )
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad sample line: {exc}") from exc
        _check_keys(obj, _SAMPLE_KEYS, _SAMPLE_KEYS, f"sample at line {lineno}", strict)
        try:
            samples.append(
                GraphSample(
                    node_features=np.asarray(obj["nodes"], dtype=np.float64),
                    edges=np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2),
                    targets=np.asarray(obj["targets"], dtype=np.float64),
                    source_tag=str(obj["tag"]),
                )
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: invalid sample: {exc}") from exc
    return Dataset(samples=samples, metadata={k: meta[k] for k in _METADATA_KEYS})


# ---------------------------------------------------------------------------
# single-truss description files (debugging / the fea command)


def write_truss(truss: Truss, path):
    doc = {
        "format_version": TRUSS_FORMAT_VERSION,
        "material": {
            "elastic_modulus": truss.material.elastic_modulus,
            "section_area": truss.material.section_area,
            "second_moment": truss.material.second_moment,
        },
        "joints": [
            {
                "position": list(j.position),
                "support": [bool(j.support[0]), bool(j.support[1])],
                "load": list(j.load),
            }
            for j in truss.joints
        ],
        "members": [list(m) for m in truss.members],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_truss(path) -> Truss:
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: not a valid truss file: {exc}") from exc
    try:
        if doc["format_version"] != TRUSS_FORMAT_VERSION:
            raise DataFormatError(
                f"unsupported truss format_version {doc['format_version']!r}"
            )
        material = Material(
            elastic_modulus=doc["material"]["elastic_modulus"],
            section_area=doc["material"]["section_area"],
            second_moment=doc["material"]["second_moment"],
        )
        joints = tuple(
            Joint(
                position=tuple(j["position"]),
                support=tuple(j["support"]),
                load=tuple(j.get("load", (0.0, 0.0))),
            )
            for j in doc["joints"]
        )
        members = tuple((int(a), int(b)) for a, b in doc["members"])
    except (KeyError, TypeError, IndexError) as exc:
        raise DataFormatError(f"{path}: malformed truss description: {exc}") from exc
    return Truss(joints=joints, members=members, material=material)
