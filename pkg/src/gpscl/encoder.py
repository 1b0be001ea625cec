"""GIN encoder, sum readout and the online predictor head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, col_sum, matmul, relu

__all__ = [
    "Affine",
    "GinLayer",
    "Encoder",
    "Predictor",
    "init_affine",
    "init_gin_layer",
    "init_encoder",
    "init_predictor",
    "gin_layer",
    "readout",
    "encode",
    "predict",
    "named_parameters",
    "copy_params",
]


@dataclass
class Affine:
    weight: Tensor  # d_in x d_out
    bias: Tensor  # 1 x d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.cols != self.weight.rows:
            raise DimensionError(f"affine expects {self.weight.rows} input columns, got {x.cols}")
        return matmul(x, self.weight) + self.bias

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias


@dataclass
class GinLayer:
    eps: Tensor  # 1 x 1
    lin1: Affine
    lin2: Affine

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield prefix + "eps", self.eps
        yield from self.lin1.named_parameters(prefix + "lin1.")
        yield from self.lin2.named_parameters(prefix + "lin2.")


@dataclass
class Encoder:
    layers: list[GinLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].lin1.weight.rows

    @property
    def out_dim(self) -> int:
        return self.layers[-1].lin2.weight.cols

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}layers.{k}.")


@dataclass
class Predictor:
    lin1: Affine
    lin2: Affine

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.lin1.named_parameters(prefix + "lin1.")
        yield from self.lin2.named_parameters(prefix + "lin2.")


def named_parameters(module, prefix: str = "") -> list[tuple[str, Tensor]]:
    return list(module.named_parameters(prefix))


def init_affine(rng: np.random.Generator, d_in: int, d_out: int, requires_grad: bool = True) -> Affine:
    """Fan-in scaled uniform init in [-1/sqrt(d_in), 1/sqrt(d_in)]."""
    bound = 1.0 / np.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out))
    b = rng.uniform(-bound, bound, size=(1, d_out))
    return Affine(Tensor(w, requires_grad), Tensor(b, requires_grad))


def init_gin_layer(rng, d_in: int, d_hidden: int, requires_grad: bool = True) -> GinLayer:
    return GinLayer(
        eps=Tensor(np.zeros((1, 1)), requires_grad),
        lin1=init_affine(rng, d_in, d_hidden, requires_grad),
        lin2=init_affine(rng, d_hidden, d_hidden, requires_grad),
    )


def init_encoder(rng, d_in: int, d_hidden: int, num_layers: int = 2, requires_grad: bool = True) -> Encoder:
    if num_layers < 1:
        raise ConfigError("encoder needs at least one layer")
    layers = [init_gin_layer(rng, d_in, d_hidden, requires_grad)]
    layers += [init_gin_layer(rng, d_hidden, d_hidden, requires_grad) for _ in range(num_layers - 1)]
    return Encoder(layers)


def init_predictor(rng, d: int, requires_grad: bool = True) -> Predictor:
    return Predictor(init_affine(rng, d, d, requires_grad), init_affine(rng, d, d, requires_grad))


def copy_params(module, requires_grad: bool = False):
    """Deep copy with fresh tensors; used to seed the momentum encoder."""
    if isinstance(module, Affine):
        return Affine(Tensor(module.weight.data, requires_grad), Tensor(module.bias.data, requires_grad))
    if isinstance(module, GinLayer):
        return GinLayer(
            Tensor(module.eps.data, requires_grad),
            copy_params(module.lin1, requires_grad),
            copy_params(module.lin2, requires_grad),
        )
    if isinstance(module, Encoder):
        return Encoder([copy_params(layer, requires_grad) for layer in module.layers])
    if isinstance(module, Predictor):
        return Predictor(copy_params(module.lin1, requires_grad), copy_params(module.lin2, requires_grad))
    raise TypeError(f"cannot copy {type(module).__name__}")


def gin_layer(H: Tensor, A: Tensor, params: GinLayer) -> Tensor:
    """MLP((1 + eps) * H + A @ H) with a two-layer relu MLP."""
    if A.shape != (H.rows, H.rows):
        raise DimensionError(f"adjacency {A.shape} does not match {H.rows} nodes")
    combined = (params.eps + 1.0) * H + matmul(A, H)
    return params.lin2(relu(params.lin1(combined)))


def readout(H: Tensor) -> Tensor:
    """Sum over nodes: n x d -> 1 x d."""
    if H.rows < 1:
        raise DimensionError("readout needs at least one node")
    return col_sum(H)


def encode(graph, params: Encoder) -> Tensor:
    """Graph-level embedding: stacked GIN layers then sum readout.

    ``graph`` is anything exposing ``X`` and ``A`` tensors, so pooled views
    (weighted adjacency, gated features) go through the same path.
    """
    H, A = graph.X, graph.A
    for layer in params.layers:
        H = gin_layer(H, A, layer)
    return readout(H)


def predict(h: Tensor, params: Predictor) -> Tensor:
    return params.lin2(relu(params.lin1(h)))
