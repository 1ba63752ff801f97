"""Domain types for 2D trusses and their graph encoding.

A truss is a set of joints connected by members. For learning, each truss is
converted to a graph sample whose node features are ``[x, y, s_x, s_y, l_x,
l_y]`` (coordinates plus binary support/load presence flags) and whose targets
are the per-joint displacement vectors. Everything is an immutable value
object; all quantities are SI (m, N, Pa).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Steel from the reference datasets: 30.5 Msi converted once to Pa.
PSI_TO_PA = 6894.757
STEEL_E_PA = 30.5e6 * PSI_TO_PA  # 2.1029e11

NODE_FEATURE_WIDTH = 6


@dataclass(frozen=True)
class Material:
    """Linear-elastic material and constant cross-section properties."""

    elastic_modulus: float  # Pa
    section_area: float  # m^2
    second_moment: float  # m^4

    def __post_init__(self):
        for name in ("elastic_modulus", "section_area", "second_moment"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")


STEEL = Material(elastic_modulus=STEEL_E_PA, section_area=0.29, second_moment=2.3e-3)


@dataclass(frozen=True)
class Joint:
    """A joint: position, support restraints (x, y) and applied load vector."""

    position: tuple[float, float]
    support: tuple[bool, bool] = (False, False)
    load: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        x, y = self.position
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ValueError(f"joint position must be finite, got {self.position!r}")
        object.__setattr__(self, "position", (float(x), float(y)))
        object.__setattr__(self, "support", (bool(self.support[0]), bool(self.support[1])))
        object.__setattr__(self, "load", (float(self.load[0]), float(self.load[1])))


@dataclass(frozen=True)
class Truss:
    """A 2D truss: ordered joints, unordered member index pairs, one material."""

    joints: tuple[Joint, ...]
    members: tuple[tuple[int, int], ...]
    material: Material = STEEL

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        n = len(self.joints)
        seen = set()
        members = []
        for a, b in self.members:
            a, b = int(a), int(b)
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"member ({a}, {b}) references a missing joint")
            if a == b:
                raise ValueError(f"self-member ({a}, {a}) is not allowed")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate member {key}")
            seen.add(key)
            members.append((a, b))
        object.__setattr__(self, "members", tuple(members))
        restrained = sum(j.support[0] + j.support[1] for j in self.joints)
        if restrained < 3:
            raise ValueError(
                f"only {restrained} restrained degrees of freedom; a free-floating "
                "structure is a rigid-body mechanism"
            )

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    def positions(self) -> np.ndarray:
        return np.array([j.position for j in self.joints], dtype=np.float64)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class GraphSample:
    """One training example: node features, directed edge list, displacement targets.

    Feature columns are ``x, y, s_x, s_y, l_x, l_y`` where the last four are
    binary presence flags. The edge list holds both directions of every member
    plus one self-loop per node, so a node's neighborhood includes itself.
    """

    node_features: np.ndarray  # (n, 6) float64
    edges: np.ndarray  # (e, 2) int64
    targets: np.ndarray  # (n, 2) float64, metres
    source_tag: str = ""

    def __post_init__(self):
        feats = np.asarray(self.node_features, dtype=np.float64)
        edges = np.asarray(self.edges, dtype=np.int64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != NODE_FEATURE_WIDTH:
            raise ValueError(f"node_features must be (n, {NODE_FEATURE_WIDTH}), got {feats.shape}")
        if targets.shape != (feats.shape[0], 2):
            raise ValueError(
                f"targets shape {targets.shape} does not match {feats.shape[0]} nodes"
            )
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"edges must be (e, 2), got {edges.shape}")
        n = feats.shape[0]
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge index out of range")
        flags = feats[:, 2:6]
        if not np.isin(flags, (0.0, 1.0)).all():
            raise ValueError("feature columns 3-6 must be binary flags")
        object.__setattr__(self, "node_features", _frozen(feats))
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "targets", _frozen(targets))

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]


def to_graph(truss: Truss, displacements: np.ndarray, source_tag: str = "") -> GraphSample:
    """Encode a truss and its displacement field as a graph sample.

    Edge order is deterministic: one self-loop per node first, then the two
    directions of each member in member order.
    """
    displacements = np.asarray(displacements, dtype=np.float64)
    n = truss.joint_count
    if displacements.shape != (n, 2):
        raise ValueError(
            f"displacements shape {displacements.shape} does not match {n} joints"
        )
    feats = np.zeros((n, NODE_FEATURE_WIDTH), dtype=np.float64)
    for i, joint in enumerate(truss.joints):
        feats[i, 0:2] = joint.position
        feats[i, 2] = 1.0 if joint.support[0] else 0.0
        feats[i, 3] = 1.0 if joint.support[1] else 0.0
        feats[i, 4] = 1.0 if joint.load[0] != 0.0 else 0.0
        feats[i, 5] = 1.0 if joint.load[1] != 0.0 else 0.0
    edges = [(i, i) for i in range(n)]
    for a, b in truss.members:
        edges.append((a, b))
        edges.append((b, a))
    return GraphSample(
        node_features=feats,
        edges=np.array(edges, dtype=np.int64),
        targets=displacements,
        source_tag=source_tag,
    )


def from_graph(
    sample: GraphSample,
    material: Material = STEEL,
    load: tuple[float, float] = (0.0, 0.0),
) -> Truss:
    """Recover a truss skeleton from a graph sample.

    Positions and support flags round-trip exactly. Load magnitudes are not
    encoded in the graph, so ``load`` supplies the signed per-component value
    applied wherever the corresponding flag is set.
    """
    n = sample.node_count
    edge_set = {(int(a), int(b)) for a, b in sample.edges}
    for i in range(n):
        if (i, i) not in edge_set:
            raise ValueError(f"missing self-loop for node {i}")
    for a, b in edge_set:
        if (b, a) not in edge_set:
            raise ValueError(f"edge ({a}, {b}) has no reverse edge; edge list not symmetric")
    members = sorted({(min(a, b), max(a, b)) for a, b in edge_set if a != b})
    joints = []
    for i in range(n):
        x, y, sx, sy, lx, ly = sample.node_features[i]
        joints.append(
            Joint(
                position=(x, y),
                support=(bool(sx), bool(sy)),
                load=(load[0] if lx else 0.0, load[1] if ly else 0.0),
            )
        )
    return Truss(joints=tuple(joints), members=tuple(members), material=material)
