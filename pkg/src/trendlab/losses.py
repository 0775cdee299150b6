"""Binary categorical cross entropy and its change-ratio weighted variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tl
from .errors import ContractError, DimensionError
from .tensor import Tensor

EPS = 1e-12
ROW_TOL = 1e-6


@dataclass
class LossBatch:
    """Predicted class probabilities, one-hot targets and signed change ratios.

    ``predictions`` is an (N, 2) tensor on the tape; ``targets`` and
    ``change_ratios`` are constants.
    """

    predictions: Tensor
    targets: np.ndarray
    change_ratios: np.ndarray | None = None

    def __post_init__(self):
        self.predictions = tl.as_tensor(self.predictions)
        self.targets = np.asarray(self.targets, dtype=self.predictions.dtype)
        p, y = self.predictions.data, self.targets
        if p.ndim != 2 or p.shape[0] < 1 or y.shape != p.shape:
            raise DimensionError(f"predictions {p.shape} and targets {y.shape} must both be (N, C), N >= 1")
        if not np.all(np.abs(p.sum(axis=1) - 1.0) <= ROW_TOL):
            raise ContractError("prediction rows must sum to 1")
        if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
            raise ContractError("each target row must be exactly one-hot")
        if self.change_ratios is not None:
            cr = np.asarray(self.change_ratios, dtype=p.dtype).reshape(-1)
            if cr.shape[0] != p.shape[0]:
                raise DimensionError(f"{cr.shape[0]} change ratios for {p.shape[0]} samples")
            if not np.all(np.isfinite(cr)):
                raise ContractError("change ratios must be finite")
            self.change_ratios = cr


def per_sample_cross_entropy(batch: LossBatch) -> Tensor:
    """``-sum_i [y'_i log y_i + (1 - y'_i) log(1 - y_i)]`` for every row, shape (N,)."""
    y = tl.clip(batch.predictions, EPS, 1.0 - EPS)
    t = batch.targets
    terms = tl.log(y) * t + tl.log(1.0 - y) * (1.0 - t)
    return -tl.tsum(terms, axis=1)


def cross_entropy(batch: LossBatch) -> Tensor:
    return tl.mean(per_sample_cross_entropy(batch))


def weighted_cross_entropy(batch: LossBatch) -> Tensor:
    """Batch mean of ``|change_ratio| * cross entropy``, weights not renormalised."""
    if batch.change_ratios is None:
        raise ContractError("weighted cross entropy needs change ratios")
    w = np.abs(batch.change_ratios)
    return tl.mean(per_sample_cross_entropy(batch) * w)


LOSSES = {"ce": cross_entropy, "weighted_ce": weighted_cross_entropy}


def get_loss(name):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}") from None
