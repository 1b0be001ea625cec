"""Similarity learning and in-batch consistency learning losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .tensor import (
    Tensor,
    cosine_matrix,
    cosine_sim,
    log,
    mean_all,
    mul,
    row_softmax,
    row_sum,
    scale,
    sub,
)

__all__ = [
    "BatchViews",
    "similarity_loss",
    "similarity_distribution",
    "similarity_distributions",
    "consistency_loss",
    "batch_objective",
]


@dataclass
class BatchViews:
    """Target embeddings of the originals plus online embeddings of the two views.

    Either view may be ``None`` under a single-view ablation.
    """

    Z: Tensor
    H_w: Tensor | None
    H_s: Tensor | None
    tau: float = 0.5

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError("temperature must be positive")
        if self.Z.rows < 2:
            raise DimensionError("a batch needs at least 2 graphs")
        for H in (self.H_w, self.H_s):
            if H is not None and H.shape != self.Z.shape:
                raise DimensionError(f"view embeddings {H.shape} vs targets {self.Z.shape}")


def similarity_loss(Z: Tensor, H: Tensor) -> Tensor:
    """Mean cosine distance (1/B) sum_b (1 - cos(z_b, h_b)); lies in [0, 2]."""
    if Z.shape != H.shape:
        raise DimensionError(f"similarity_loss: {Z.shape} vs {H.shape}")
    return scale(mean_all(cosine_sim(Z, H)), -1.0) + 1.0


def similarity_distributions(H: Tensor, Z: Tensor, tau: float = 0.5) -> Tensor:
    """Row a is softmax_b(cos(h_a, z_b) / tau); the self term b = a is included."""
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    if Z.rows < 2:
        raise DimensionError("similarity distributions need at least 2 batch members")
    return row_softmax(scale(cosine_matrix(H, Z), 1.0 / tau))


def similarity_distribution(h: Tensor, Z: Tensor, tau: float = 0.5) -> Tensor:
    """Distribution of one embedding h (1 x d) over the batch targets Z (B x d)."""
    if h.rows != 1:
        raise DimensionError("similarity_distribution expects a single row")
    return similarity_distributions(h, Z, tau)


def consistency_loss(Mu: Tensor, Nu: Tensor) -> Tensor:
    """Row-averaged symmetric KL: (1/B) sum_rows (KL(mu||nu) + KL(nu||mu)) / 2.

    Written as sum (mu - nu)(log mu - log nu) / 2, which is exactly symmetric.
    """
    if Mu.shape != Nu.shape:
        raise DimensionError(f"consistency_loss: {Mu.shape} vs {Nu.shape}")
    if (Mu.data <= 0).any() or (Nu.data <= 0).any():
        raise NumericError("consistency_loss: distributions must be strictly positive")
    per_row = row_sum(mul(sub(Mu, Nu), sub(log(Mu), log(Nu))))
    # mean over rows of per_row / 2
    return scale(mean_all(per_row), 0.5)


def batch_objective(views: BatchViews, use_sl: bool = True, use_cl: bool = True) -> dict[str, Tensor]:
    """Return ``{"L_sl": ..., "L_cl": ...}``; a disabled term is a constant zero.

    Similarity learning uses the weak view, falling back to the strong view
    when the weak one is absent. Consistency learning needs both.
    """
    views.validate()
    zero = Tensor(np.zeros((1, 1)))
    out = {"L_sl": zero, "L_cl": zero}
    if use_sl:
        H = views.H_w if views.H_w is not None else views.H_s
        if H is None:
            raise ConfigError("similarity learning needs at least one view")
        out["L_sl"] = similarity_loss(views.Z, H)
    if use_cl:
        if views.H_w is None or views.H_s is None:
            raise ConfigError("consistency learning needs both the weak and the strong view")
        Mu = similarity_distributions(views.H_s, views.Z, views.tau)
        Nu = similarity_distributions(views.H_w, views.Z, views.tau)
        out["L_cl"] = consistency_loss(Mu, Nu)
    return out
