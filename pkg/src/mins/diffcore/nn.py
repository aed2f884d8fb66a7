"""Fully connected networks and the Gumbel-softmax relaxation."""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np

from .tensor import Graph, Tensor


class MLP:
    """Dense feed-forward net whose weights live in a flat ``params`` dict.

    Parameter names are ``{prefix}.{layer}.W`` / ``{prefix}.{layer}.b`` so
    several nets can share one optimizer state and one checkpoint.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, prefix: str = "mlp",
                 activation: str = "leaky_relu", slope: float = 0.2):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if activation not in ("relu", "leaky_relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = list(sizes)
        self.prefix = prefix
        self.activation = activation
        self.slope = slope
        self.params: Dict[str, np.ndarray] = {}
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = np.sqrt(2.0 / (1.0 + (slope ** 2 if activation == "leaky_relu" else 0.0)))
            if activation == "tanh":
                gain = 1.0
            self.params[f"{prefix}.{i}.W"] = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))
            self.params[f"{prefix}.{i}.b"] = np.zeros((1, n_out))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def __call__(self, g: Graph, x: Tensor, frozen: bool = False) -> Tensor:
        """Build the forward pass on ``g``.

        With ``frozen`` the weights enter as constants: gradients still flow to
        ``x`` but no parameter gradients are produced.
        """
        h = x
        leaf = g.const if frozen else None
        for i in range(self.n_layers):
            wname, bname = f"{self.prefix}.{i}.W", f"{self.prefix}.{i}.b"
            W = leaf(self.params[wname]) if frozen else g.param(wname, self.params[wname])
            b = leaf(self.params[bname]) if frozen else g.param(bname, self.params[bname])
            h = g.add(g.matmul(h, W), b)
            if i < self.n_layers - 1:
                if self.activation == "relu":
                    h = g.relu(h)
                elif self.activation == "tanh":
                    h = g.tanh(h)
                else:
                    h = g.leaky_relu(h, self.slope)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass in plain numpy, no tape."""
        h = np.asarray(x, dtype=np.float64)
        for i in range(self.n_layers):
            h = h @ self.params[f"{self.prefix}.{i}.W"] + self.params[f"{self.prefix}.{i}.b"]
            if i < self.n_layers - 1:
                if self.activation == "relu":
                    h = np.maximum(h, 0.0)
                elif self.activation == "tanh":
                    h = np.tanh(h)
                else:
                    h = np.where(h > 0, h, self.slope * h)
        return h


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits, temperature: float, rng: Optional[np.random.Generator] = None,
                          graph: Optional[Graph] = None, noise: Optional[np.ndarray] = None):
    """Relaxed one-hot sample ``softmax((logits + G) / temperature)`` over the last axis.

    ``logits`` may be a :class:`Tensor` (the result stays on its graph and is
    differentiable w.r.t. the logits at fixed noise) or a plain array. Pass
    ``noise`` to reuse a Gumbel draw; ``noise=0`` gives the noiseless relaxation.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if isinstance(logits, Tensor):
        g = logits.graph
        shape = logits.shape
    else:
        g = graph or Graph()
        logits = g.const(logits)
        shape = logits.shape
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        noise = sample_gumbel(shape, rng)
    perturbed = g.add(logits, noise)
    return g.softmax(g.scale(perturbed, 1.0 / temperature))
