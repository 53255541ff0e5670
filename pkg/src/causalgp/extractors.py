"""Differentiable feature maps for deep kernels: MLP, 1-D CNN, and GCN.

All extractors map a batch of windows (n, n_inputs, window) to a latent
matrix (n, latent_dim).  Forward passes run on the autodiff tape so that a
:class:`Recording` can later push an upstream gradient back onto every
weight matrix and bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graphs import CausalGraph, PropagationOperator, restrict_to_inputs


class ExtractorError(ValueError):
    """Invalid extractor specification or input shape."""


# ---------------------------------------------------------------------------
# Specifications


@dataclass(frozen=True)
class MLPSpec:
    """Fully connected net; ``layer_widths`` runs input -> ... -> latent."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ExtractorError("MLP needs at least one layer (two widths)")
        if any(w <= 0 for w in self.layer_widths):
            raise ExtractorError("MLP widths must be positive")
        if self.activation != "relu":
            raise ExtractorError(f"unsupported activation {self.activation!r}")

    @property
    def latent_dim(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class CNN1DSpec:
    """Two same-padded convolutions with a max-pool between, then a dense head.

    Defaults follow the reference architecture: in_channels -> 256 -> 128
    convolutions (width 3), pool width 2, dense head 100/50/25/10/3.
    """

    in_channels: int
    window: int
    conv_channels: tuple[int, int] = (256, 128)
    kernel_widths: tuple[int, int] = (3, 3)
    pool_width: int = 2
    dense_widths: tuple[int, ...] = (100, 50, 25, 10, 3)

    def __post_init__(self):
        if self.in_channels <= 0 or self.window <= 0:
            raise ExtractorError("in_channels and window must be positive")
        if self.pool_width < 1:
            raise ExtractorError("pool width must be >= 1")
        if len(self.conv_channels) != 2 or len(self.kernel_widths) != 2:
            raise ExtractorError("exactly two convolution stages are supported")
        if any(k > self.window for k in self.kernel_widths):
            raise ExtractorError("convolution kernel wider than the window")
        if self.pool_width > 1 and self.window < 2:
            raise ExtractorError("window too short to pool")
        if self.dense_widths[-1] != 3:
            raise ExtractorError("final dense width must be 3")
        if any(w <= 0 for w in self.dense_widths + self.conv_channels):
            raise ExtractorError("widths must be positive")

    @property
    def pooled_len(self) -> int:
        return self.window // self.pool_width

    @property
    def flatten_dim(self) -> int:
        return self.conv_channels[1] * self.pooled_len

    @property
    def latent_dim(self) -> int:
        return self.dense_widths[-1]


@dataclass(frozen=True)
class GCNSpec:
    """Stacked graph convolutions; ``feature_widths`` runs window -> ... -> 4.

    The first entry is the per-node input width (the window size).  ReLU is
    applied after every layer except the last.  ``subsample_count`` rows of
    the final node-feature matrix are kept and flattened.
    """

    feature_widths: tuple[int, ...]
    subsample_count: int = 3
    subsample_policy: str = "target-proximity"

    def __post_init__(self):
        object.__setattr__(
            self, "feature_widths", tuple(int(w) for w in self.feature_widths)
        )
        if len(self.feature_widths) < 2:
            raise ExtractorError("GCN needs at least one layer")
        if any(w <= 0 for w in self.feature_widths):
            raise ExtractorError("GCN feature widths must be positive")
        if self.subsample_count <= 0:
            raise ExtractorError("subsample count must be positive")
        if self.subsample_policy != "target-proximity":
            raise ExtractorError(f"unknown subsample policy {self.subsample_policy!r}")

    @staticmethod
    def default(window: int) -> "GCNSpec":
        return GCNSpec(feature_widths=(window, 32, 16, 8, 4))

    @property
    def latent_dim(self) -> int:
        return self.subsample_count * self.feature_widths[-1]


# ---------------------------------------------------------------------------
# Parameters


class ExtractorParams:
    """Ordered name -> ndarray collection of weights and biases."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {k: np.asarray(v, dtype=float) for k, v in arrays.items()}
        for name, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise ExtractorError(f"non-finite entries in parameter {name!r}")

    def copy(self) -> "ExtractorParams":
        return ExtractorParams({k: v.copy() for k, v in self.arrays.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()


def _param_shapes(spec) -> dict[str, tuple[int, ...]]:
    if isinstance(spec, MLPSpec):
        shapes = {}
        widths = spec.layer_widths
        for i in range(len(widths) - 1):
            shapes[f"w{i}"] = (widths[i], widths[i + 1])
            shapes[f"b{i}"] = (widths[i + 1],)
        return shapes
    if isinstance(spec, CNN1DSpec):
        c1, c2 = spec.conv_channels
        k1, k2 = spec.kernel_widths
        shapes = {
            "conv0_w": (k1 * spec.in_channels, c1),
            "conv0_b": (c1,),
            "conv1_w": (k2 * c1, c2),
            "conv1_b": (c2,),
        }
        prev = spec.flatten_dim
        for i, width in enumerate(spec.dense_widths):
            shapes[f"dense{i}_w"] = (prev, width)
            shapes[f"dense{i}_b"] = (width,)
            prev = width
        return shapes
    if isinstance(spec, GCNSpec):
        widths = spec.feature_widths
        return {f"w{i}": (widths[i], widths[i + 1]) for i in range(len(widths) - 1)}
    raise ExtractorError(f"unknown spec type {type(spec).__name__}")


def init_params(spec, seed: int) -> ExtractorParams:
    """Fan-in-scaled zero-mean weights, zero biases, deterministic in seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _param_shapes(spec).items():
        if name.endswith("_b") or name.startswith("b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            arrays[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return ExtractorParams(arrays)


# ---------------------------------------------------------------------------
# Recording (taped forward pass)


class Recording:
    """One taped forward pass; backprop entry point for parameter gradients."""

    def __init__(self, output: ad.Tensor, param_tensors: dict[str, ad.Tensor],
                 input_tensor: ad.Tensor):
        self.output = output
        self.param_tensors = param_tensors
        self.input_tensor = input_tensor

    @property
    def latents(self) -> np.ndarray:
        return self.output.value

    def param_gradients(self, upstream: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(upstream * output) w.r.t. every parameter."""
        ad.backprop(self.output, upstream)
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.value))
            for name, t in self.param_tensors.items()
        }

    def input_gradient(self) -> np.ndarray:
        if self.input_tensor.grad is None:
            return np.zeros_like(self.input_tensor.value)
        return self.input_tensor.grad


# ---------------------------------------------------------------------------
# Extractors


class MLPExtractor:
    def __init__(self, spec: MLPSpec, params: ExtractorParams):
        self.spec = spec
        self.params = params
        _check_shapes(spec, params)

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def record(self, x: np.ndarray) -> Recording:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.spec.layer_widths[0]:
            raise ExtractorError(
                f"input width {flat.shape[1]} != expected {self.spec.layer_widths[0]}"
            )
        tensors = {k: ad.Tensor(v) for k, v in self.params.items()}
        t_in = ad.Tensor(flat)
        t = t_in
        n_layers = len(self.spec.layer_widths) - 1
        for i in range(n_layers):
            t = ad.add(ad.matmul(t, tensors[f"w{i}"]), tensors[f"b{i}"])
            if i < n_layers - 1:
                t = ad.relu(t)
        return Recording(t, tensors, t_in)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.record(x).latents


class CNNExtractor:
    def __init__(self, spec: CNN1DSpec, params: ExtractorParams):
        self.spec = spec
        self.params = params
        _check_shapes(spec, params)

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def record(self, x: np.ndarray) -> Recording:
        x = np.asarray(x, dtype=float)
        spec = self.spec
        if x.ndim != 3 or x.shape[1] != spec.in_channels or x.shape[2] != spec.window:
            raise ExtractorError(
                f"expected (n, {spec.in_channels}, {spec.window}) input, got {x.shape}"
            )
        tensors = {k: ad.Tensor(v) for k, v in self.params.items()}
        t_in = ad.Tensor(x)
        # Work channels-last: (n, length, channels).
        t = ad.transpose(t_in, (0, 2, 1))
        t = _conv_same(t, tensors["conv0_w"], tensors["conv0_b"],
                       spec.kernel_widths[0], spec.in_channels)
        t = ad.relu(t)
        t = _max_pool(t, spec.pool_width)
        t = _conv_same(t, tensors["conv1_w"], tensors["conv1_b"],
                       spec.kernel_widths[1], spec.conv_channels[0])
        t = ad.reshape(t, (x.shape[0], spec.flatten_dim))
        for i in range(len(spec.dense_widths)):
            t = ad.add(ad.matmul(t, tensors[f"dense{i}_w"]), tensors[f"dense{i}_b"])
            if i < len(spec.dense_widths) - 1:
                t = ad.relu(t)
        return Recording(t, tensors, t_in)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.record(x).latents


def _conv_same(t: ad.Tensor, w: ad.Tensor, b: ad.Tensor, kernel: int,
               in_channels: int) -> ad.Tensor:
    """Same-length 1-D convolution on a (n, length, channels) tensor."""
    n, length, _ = t.shape
    left = (kernel - 1) // 2
    right = kernel - 1 - left
    padded = ad.pad_axis(t, axis=1, before=left, after=right)
    offsets = np.arange(length)[:, None] + np.arange(kernel)[None, :]
    gathered = ad.take(padded, offsets.ravel(), axis=1)
    windows = ad.reshape(gathered, (n, length, kernel * in_channels))
    return ad.add(ad.matmul(windows, w), b)


def _max_pool(t: ad.Tensor, width: int) -> ad.Tensor:
    """Non-overlapping max pool along axis 1; trailing remainder dropped."""
    if width == 1:
        return t
    n, length, channels = t.shape
    pooled = length // width
    trimmed = ad.take(t, np.arange(pooled * width), axis=1)
    blocks = ad.reshape(trimmed, (n, pooled, width, channels))
    return ad.max_axis(blocks, axis=2)


class GCNExtractor:
    """Graph-convolution extractor tied to a fixed propagation operator."""

    def __init__(self, spec: GCNSpec, params: ExtractorParams,
                 operator: PropagationOperator, subsample: tuple[int, ...]):
        self.spec = spec
        self.params = params
        self.operator = operator
        self.subsample = tuple(int(i) for i in subsample)
        _check_shapes(spec, params)
        n = operator.matrix.shape[0]
        if len(self.subsample) != spec.subsample_count:
            raise ExtractorError("subsample index count mismatch")
        if any(not 0 <= i < n for i in self.subsample):
            raise ExtractorError("subsample index out of range")
        if spec.subsample_count > n:
            raise ExtractorError("cannot subsample more nodes than the graph has")

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def record(self, x: np.ndarray) -> Recording:
        x = np.asarray(x, dtype=float)
        n_nodes = self.operator.matrix.shape[0]
        if x.ndim != 3 or x.shape[1] != n_nodes:
            raise ExtractorError(
                f"expected (n, {n_nodes}, {self.spec.feature_widths[0]}) input, "
                f"got {x.shape}"
            )
        if x.shape[2] != self.spec.feature_widths[0]:
            raise ExtractorError(
                f"per-node width {x.shape[2]} != expected {self.spec.feature_widths[0]}"
            )
        tensors = {k: ad.Tensor(v) for k, v in self.params.items()}
        s = ad.Tensor(self.operator.matrix)
        t_in = ad.Tensor(x)
        t = t_in
        n_layers = len(self.spec.feature_widths) - 1
        for i in range(n_layers):
            t = ad.matmul(ad.matmul(s, t), tensors[f"w{i}"])
            if i < n_layers - 1:
                t = ad.relu(t)
        t = ad.take(t, np.array(self.subsample), axis=1)
        t = ad.reshape(t, (x.shape[0], self.spec.latent_dim))
        return Recording(t, tensors, t_in)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.record(x).latents


def _check_shapes(spec, params: ExtractorParams) -> None:
    expected = _param_shapes(spec)
    if set(expected) != set(params.arrays):
        raise ExtractorError(
            f"parameter names {sorted(params.arrays)} != expected {sorted(expected)}"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ExtractorError(
                f"parameter {name!r} has shape {params[name].shape}, expected {shape}"
            )


# ---------------------------------------------------------------------------
# Standalone graph-convolution step and subsampling policy


def gcn_layer(h: np.ndarray, s, w: np.ndarray, activate: bool = True) -> np.ndarray:
    """One graph-convolution step sigma(S @ H @ W); plain ndarray in and out."""
    s_matrix = s.matrix if isinstance(s, PropagationOperator) else np.asarray(s, dtype=float)
    h = np.asarray(h, dtype=float)
    w = np.asarray(w, dtype=float)
    if s_matrix.shape[1] != h.shape[0] or h.shape[1] != w.shape[0]:
        raise ExtractorError(
            f"non-conformable shapes {s_matrix.shape} @ {h.shape} @ {w.shape}"
        )
    out = s_matrix @ h @ w
    if activate:
        out = np.maximum(out, 0.0)
    return out


def subsample_nodes(graph: CausalGraph, count: int) -> tuple[int, ...]:
    """Pick the ``count`` input nodes to keep after the last GCN layer.

    Ranking: parents of the target first, then nodes with the fewest
    descendants in the input graph (the ones sitting deepest, closest to
    where the target attaches), ties broken by declaration order.  Returned
    indices refer to the input-restricted node ordering.
    """
    if graph.target_node is None:
        raise ExtractorError("subsampling needs a graph with a target node")
    target_parents = {s for s, t in graph.edges if t == graph.target_node}
    inputs = restrict_to_inputs(graph)
    if count > inputs.n_nodes:
        raise ExtractorError(
            f"cannot subsample {count} of {inputs.n_nodes} input nodes"
        )
    original_of = [i for i in range(graph.n_nodes) if i != graph.target_node]

    def rank(i: int):
        is_parent = original_of[i] in target_parents
        return (0 if is_parent else 1, len(inputs.descendants(i)), i)

    order = sorted(range(inputs.n_nodes), key=rank)
    return tuple(order[:count])


def build_gcn_extractor(spec: GCNSpec, params: ExtractorParams,
                        graph: CausalGraph, symmetrize: bool = True) -> GCNExtractor:
    """Wire a GCN extractor to a full causal graph (target still present)."""
    from .graphs import adjacency_matrix, propagation_operator

    inputs = restrict_to_inputs(graph)
    operator = propagation_operator(
        adjacency_matrix(inputs), symmetrize=symmetrize, node_order=inputs.node_names
    )
    subsample = subsample_nodes(graph, spec.subsample_count)
    return GCNExtractor(spec, params, operator, subsample)
