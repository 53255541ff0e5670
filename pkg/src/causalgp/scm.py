"""Synthetic benchmark from a fixed structural causal model.

Four exogenous inputs drive four intermediates through nonlinear structural
equations; the target mixes the two deepest intermediates.  Measurement
noise is added to every input channel and observation noise to the target,
so the emitted dataset mimics noisy sensor readings of a known causal
system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import CausalGraph, parse_graph

NODE_NAMES = ("x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8")
TARGET_NAME = "y"

_GRAPH_SPEC = """
{
  "nodes": ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "y"],
  "edges": [["x1", "x5"], ["x2", "x6"], ["x3", "x6"], ["x4", "x6"],
            ["x5", "x7"], ["x5", "x8"], ["x6", "x8"],
            ["x7", "y"], ["x8", "y"]],
  "target": "y"
}
"""


def illustrative_graph() -> CausalGraph:
    """The benchmark's nine-node causal graph (x1..x8 feeding target y)."""
    return parse_graph(_GRAPH_SPEC)


def scm_eval(x1, x2, x3, x4):
    """Structural equations: (x1..x4) -> (x5..x8, y_clean); vectorized."""
    x1, x2, x3, x4 = (np.asarray(v, dtype=float) for v in (x1, x2, x3, x4))
    x5 = x1 ** 2
    x6 = x2 * np.log1p(np.abs(x4)) + x3
    x7 = np.sin(x5) * np.cos(x5)
    x8 = x6 ** 2 + np.sqrt(np.abs(x5))
    y = np.tanh(x7) + np.cos(x8) + np.sin(x7 - x8) + x7 + x8
    return x5, x6, x7, x8, y


@dataclass
class SCMConfig:
    n_samples: int = 10_000
    train_count: int = 9_000
    zeta: float = 0.01
    tau: float = 0.01
    seed: int = 0
    input_distribution: str = "standard_normal"

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if not 0 < self.train_count < self.n_samples:
            raise ValueError("need 0 < train_count < n_samples")
        if self.zeta < 0 or self.tau < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.input_distribution not in ("standard_normal", "uniform"):
            raise ValueError(
                f"unknown input distribution {self.input_distribution!r}"
            )


@dataclass
class SCMDataset:
    """Measured (noisy) inputs, clean latents, and the noisy target."""

    measured: np.ndarray   # (n, 8) inputs with measurement noise
    clean: np.ndarray      # (n, 8) noise-free latent values
    y: np.ndarray          # (n,) target with observation noise
    y_clean: np.ndarray    # (n,) noise-free target
    node_names: tuple[str, ...] = NODE_NAMES
    target_name: str = TARGET_NAME

    def __post_init__(self):
        n = self.y.shape[0]
        if self.measured.shape != (n, 8) or self.clean.shape != (n, 8):
            raise ValueError("dataset columns must be 8 inputs + 1 target")
        if not (np.all(np.isfinite(self.measured)) and np.all(np.isfinite(self.y))):
            raise ValueError("non-finite dataset values")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def to_table(self) -> dict[str, np.ndarray]:
        cols = {name: self.measured[:, i] for i, name in enumerate(self.node_names)}
        cols[self.target_name] = self.y
        return cols


def generate(cfg: SCMConfig) -> SCMDataset:
    """Sample the benchmark dataset; bitwise reproducible for a given seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    if cfg.input_distribution == "standard_normal":
        roots = rng.standard_normal((n, 4))
    else:
        roots = rng.uniform(0.0, 1.0, size=(n, 4))
    x5, x6, x7, x8, y_clean = scm_eval(roots[:, 0], roots[:, 1],
                                       roots[:, 2], roots[:, 3])
    clean = np.column_stack([roots, x5, x6, x7, x8])
    y = y_clean + cfg.zeta * rng.standard_normal(n)
    measured = clean + cfg.tau * rng.standard_normal((n, 8))
    return SCMDataset(measured, clean, y, y_clean)


def split(ds: SCMDataset, train_count: int) -> tuple[SCMDataset, SCMDataset]:
    """First ``train_count`` rows for training, the rest for testing."""
    if not 0 < train_count < ds.n:
        raise ValueError(f"need 0 < train_count < {ds.n}, got {train_count}")
    def piece(sl):
        return SCMDataset(ds.measured[sl], ds.clean[sl], ds.y[sl],
                          ds.y_clean[sl], ds.node_names, ds.target_name)
    return piece(slice(0, train_count)), piece(slice(train_count, ds.n))
