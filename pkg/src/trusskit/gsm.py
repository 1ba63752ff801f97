"""Graph surrogate network: attention-steered graph convolutions over trusses.

The network maps node features ``[x, y, s_x, s_y, l_x, l_y]`` to per-node
displacement predictions through a sequence of linear and FeaStNet-style
convolutional layers described by an architecture string such as
``L16/C32/C64/L2``. Batch normalization is applied to the input and after
every convolutional layer; ReLU follows every layer except the last.

Each convolution aggregates over a node's neighborhood (which includes the
node itself via self-loops): every neighbor contributes a softmax-weighted
mixture of M learned linear maps, with the mixture weights computed from the
feature difference ``x_j - x_i``, making the attention invariant to constant
feature translations.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import NODE_FEATURE_WIDTH, GraphSample

CHECKPOINT_FORMAT = "trusskit-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """A checkpoint file is corrupt, truncated, or incompatible."""


@dataclass
class TargetScaler:
    """Per-component standardization of displacement targets.

    Components with zero variance (e.g. fully supported directions) fall back
    to unit scale so the transform stays invertible.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetScaler":
        mean = targets.mean(axis=0)
        std = targets.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls, width: int = 2) -> "TargetScaler":
        return cls(mean=np.zeros(width), std=np.ones(width))

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean) / self.std

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y * self.std + self.mean


class Linear:
    kind = "L"

    def __init__(self, in_width: int, out_width: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_width)
        self.in_width = in_width
        self.out_width = out_width
        self.weight = ad.parameter(rng.uniform(-bound, bound, size=(in_width, out_width)))
        self.bias = ad.parameter(np.zeros((1, out_width)))

    def forward(self, x: ad.Tensor, graph, training: bool) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]

    def named_arrays(self):
        return {"weight": self.weight, "bias": self.bias}


class FeastConv:
    """Graph convolution with M attention heads steered by feature differences."""

    kind = "C"

    def __init__(self, in_width: int, out_width: int, heads: int, rng: np.random.Generator):
        if heads < 1:
            raise ValueError("heads must be >= 1")
        bound = 1.0 / np.sqrt(in_width)
        self.in_width = in_width
        self.out_width = out_width
        self.heads = heads
        self.weight = ad.parameter(rng.uniform(-bound, bound, size=(in_width, heads * out_width)))
        # Zero-initialized attention starts every head at uniform weight 1/M.
        self.attention = ad.parameter(np.zeros((in_width, heads)))
        self.attention_bias = ad.parameter(np.zeros((1, heads)))
        self.bias = ad.parameter(np.zeros((1, out_width)))

    def forward(self, x: ad.Tensor, graph: ad.GraphIndex, training: bool) -> ad.Tensor:
        projected = ad.matmul(x, self.weight)
        neighbor = ad.index_gather(x, graph.src)
        centre = ad.index_gather(x, graph.dst)
        logits = ad.add(ad.matmul(ad.sub(neighbor, centre), self.attention), self.attention_bias)
        q = ad.softmax(logits, axis=1)
        aggregated = ad.feast_aggregate(q, projected, graph)
        return ad.add(aggregated, self.bias)

    def attention_weights(self, features: np.ndarray, graph: ad.GraphIndex) -> np.ndarray:
        """Per-edge head weights (e, M); each row sums to 1."""
        x = ad.Tensor(features)
        diff = ad.sub(ad.index_gather(x, graph.src), ad.index_gather(x, graph.dst))
        logits = ad.add(ad.matmul(diff, self.attention), self.attention_bias)
        return ad.softmax(logits, axis=1).values

    def parameters(self):
        return [self.weight, self.attention, self.attention_bias, self.bias]

    def named_arrays(self):
        return {
            "weight": self.weight,
            "attention": self.attention,
            "attention_bias": self.attention_bias,
            "bias": self.bias,
        }


class BatchNorm:
    kind = "B"

    def __init__(self, width: int):
        self.width = width
        self.gamma = ad.parameter(np.ones((1, width)))
        self.beta = ad.parameter(np.zeros((1, width)))
        self.state = ad.BatchNormState(width)

    def forward(self, x: ad.Tensor, graph, training: bool) -> ad.Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.state, training)

    def parameters(self):
        return [self.gamma, self.beta]

    def named_arrays(self):
        return {"gamma": self.gamma, "beta": self.beta}


class Relu:
    kind = "R"

    def forward(self, x: ad.Tensor, graph, training: bool) -> ad.Tensor:
        return ad.relu(x)

    def parameters(self):
        return []

    def named_arrays(self):
        return {}


def feast_conv(features: np.ndarray, edges: np.ndarray, layer: FeastConv) -> np.ndarray:
    """Functional convolution: apply ``layer`` to raw features and an edge list."""
    features = np.asarray(features, dtype=np.float64)
    graph = ad.GraphIndex(np.asarray(edges, dtype=np.int64), features.shape[0])
    if features.shape[1] != layer.in_width:
        raise ValueError(f"feature width {features.shape[1]} does not match layer in_width {layer.in_width}")
    return layer.forward(ad.Tensor(features), graph, training=False).values


_TOKEN = re.compile(r"^([LC])(\d+)$")


def parse_architecture(arch: str) -> list[tuple[str, int]]:
    tokens = []
    for raw in arch.split("/"):
        match = _TOKEN.match(raw.strip())
        if not match:
            raise ValueError(f"malformed architecture token {raw!r} in {arch!r}")
        tokens.append((match.group(1), int(match.group(2))))
    if not tokens:
        raise ValueError("empty architecture string")
    if tokens[-1][1] != 2:
        raise ValueError(f"final layer must have width 2, got {tokens[-1][1]}")
    return tokens


class GsmNetwork:
    """An ordered layer stack plus the target scaler and provenance seeds."""

    def __init__(self, architecture: str, heads: int, in_features: int = NODE_FEATURE_WIDTH, seed: int = 0):
        self.architecture = architecture
        self.heads = heads
        self.in_features = in_features
        self.init_seed = seed
        self.train_seed: int | None = None
        self.scaler = TargetScaler.identity()
        rng = np.random.default_rng(seed)
        tokens = parse_architecture(architecture)
        layers: list = [BatchNorm(in_features)]
        width = in_features
        for position, (kind, out_width) in enumerate(tokens):
            if kind == "L":
                layers.append(Linear(width, out_width, rng))
            else:
                layers.append(FeastConv(width, out_width, heads, rng))
                layers.append(BatchNorm(out_width))
            if position < len(tokens) - 1:
                layers.append(Relu())
            width = out_width
        self.layers = layers

    def forward(self, features: np.ndarray, graph: ad.GraphIndex, training: bool) -> ad.Tensor:
        if features.shape[1] != self.in_features:
            raise ValueError(
                f"feature width {features.shape[1]} does not match network input {self.in_features}"
            )
        x = ad.Tensor(np.asarray(features, dtype=np.float64))
        for layer in self.layers:
            x = layer.forward(x, graph, training)
        return x

    def parameters(self) -> list[ad.Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays (parameters and running statistics) by name."""
        arrays = {}
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.named_arrays().items():
                arrays[f"layer{i:03d}.{name}"] = tensor.values
            if isinstance(layer, BatchNorm):
                arrays[f"layer{i:03d}.running_mean"] = layer.state.running_mean
                arrays[f"layer{i:03d}.running_var"] = layer.state.running_var
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        expected = self.named_arrays()
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise CheckpointError(f"array name mismatch (missing {missing}, unexpected {extra})")
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.named_arrays().items():
                incoming = arrays[f"layer{i:03d}.{name}"]
                if incoming.shape != tensor.values.shape:
                    raise CheckpointError(
                        f"shape mismatch for layer{i:03d}.{name}: "
                        f"{incoming.shape} vs {tensor.values.shape}"
                    )
                tensor.values = incoming.copy()
            if isinstance(layer, BatchNorm):
                layer.state.running_mean = arrays[f"layer{i:03d}.running_mean"].reshape(-1).copy()
                layer.state.running_var = arrays[f"layer{i:03d}.running_var"].reshape(-1).copy()

    def clone(self) -> "GsmNetwork":
        """Deep copy (parameters, running statistics, scaler); shares nothing."""
        twin = GsmNetwork(self.architecture, self.heads, self.in_features, seed=self.init_seed)
        twin.load_arrays({k: v.copy() for k, v in self.named_arrays().items()})
        twin.scaler = TargetScaler(mean=self.scaler.mean.copy(), std=self.scaler.std.copy())
        twin.train_seed = self.train_seed
        return twin


def build_network(arch: str, heads: int, in_features: int = NODE_FEATURE_WIDTH, seed: int = 0) -> GsmNetwork:
    """Build a network from an architecture string like ``L16/C32/.../L2``."""
    return GsmNetwork(arch, heads, in_features, seed)


def count_parameters(net: GsmNetwork) -> int:
    """Number of learnable parameters.

    Convention: Linear(in, out) = in*out + out; FeastConv(in, out, M) =
    in*M*out + in*M + M + out; BatchNorm(w) = 2w (scale and shift, input
    batch norm included; running statistics are not learnable and are not
    counted).
    """
    return sum(p.values.size for p in net.parameters())


def predict(net: GsmNetwork, sample: GraphSample) -> np.ndarray:
    """Predict a sample's displacement field in physical units (metres)."""
    graph = ad.GraphIndex(sample.edges, sample.node_count)
    out = net.forward(sample.node_features, graph, training=False)
    return net.scaler.inverse(out.values)


# ---------------------------------------------------------------------------
# checkpoints


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict, name: str) -> np.ndarray:
    try:
        raw = base64.b64decode(entry["data"].encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return arr.reshape(entry["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt array {name!r}: {exc}") from exc


def save_checkpoint(net: GsmNetwork, path):
    """Write a versioned, deterministic JSON checkpoint.

    Arrays are little-endian float64 bytes in base64; keys are sorted, so
    identical networks serialize to identical bytes.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "architecture": net.architecture,
        "heads": net.heads,
        "in_features": net.in_features,
        "init_seed": net.init_seed,
        "train_seed": net.train_seed,
        "scaler": {"mean": net.scaler.mean.tolist(), "std": net.scaler.std.tolist()},
        "arrays": {name: _encode_array(arr) for name, arr in net.named_arrays().items()},
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path, expect_architecture: str | None = None) -> GsmNetwork:
    """Load a checkpoint; reject version mismatches and corrupt files.

    ``expect_architecture`` guards transfer-learning flows where the
    checkpoint must match a requested architecture string exactly.
    """
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('format_version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        architecture = doc["architecture"]
        if expect_architecture is not None and architecture != expect_architecture:
            raise CheckpointError(
                f"architecture mismatch: checkpoint has {architecture!r}, "
                f"expected {expect_architecture!r}"
            )
        net = GsmNetwork(architecture, doc["heads"], doc["in_features"], seed=doc["init_seed"])
        net.train_seed = doc["train_seed"]
        net.scaler = TargetScaler(
            mean=np.asarray(doc["scaler"]["mean"], dtype=np.float64),
            std=np.asarray(doc["scaler"]["std"], dtype=np.float64),
        )
        arrays = {name: _decode_array(entry, name) for name, entry in doc["arrays"].items()}
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing field {exc}") from exc
    net.load_arrays(arrays)
    return net
