"""Saliency-guided input masking: threshold sampling and value shuffling.

Observations scoring strictly below a sampled percentile threshold have
their values randomly permuted among themselves, preserving the sample's
value multiset. Strict inequality makes a zero threshold percentile and a
constant score map exact no-ops, and leaves ties at the threshold alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .models import Model
from .saliency import SaliencyMap, SmoothGradConfig, smoothgrad

# Order-statistic interpolation used for thresholds; part of the documented
# masking contract, do not change silently.
PERCENTILE_METHOD = "linear"


@dataclass
class MaskConfig:
    """Share of batch samples to augment and the threshold percentile cap."""

    m_percent: float = 50.0
    q_max: float = 70.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.m_percent <= 100.0:
            raise ConfigError(f"m_percent must be in [0, 100], got {self.m_percent}")
        if not 0.0 <= self.q_max <= 100.0:
            raise ConfigError(f"q_max must be in [0, 100], got {self.q_max}")


def sample_threshold(q_max: float, rng) -> float:
    """Draw a threshold percentile uniformly from [0, q_max]."""
    if not 0.0 <= q_max <= 100.0:
        raise ConfigError(f"q_max must be in [0, 100], got {q_max}")
    return float(rng.uniform(0.0, q_max))


def mask_below_percentile(x, sal, q: float, rng) -> np.ndarray:
    """Shuffle the values at positions scoring strictly below the q-th percentile.

    Positions at or above the threshold are bit-identical to the input, and
    the returned sample always holds the same value multiset as x.
    """
    if not 0.0 <= q <= 100.0:
        raise ConfigError(f"percentile q must be in [0, 100], got {q}")
    scores = sal.scores if isinstance(sal, SaliencyMap) else np.asarray(sal, dtype=np.float64)
    out = np.array(getattr(x, "values", x), dtype=np.float64, copy=True)
    if scores.shape != out.shape:
        raise DimensionError(f"saliency shape {scores.shape} does not match sample shape {out.shape}")
    flat_scores = scores.ravel()
    threshold = np.percentile(flat_scores, q, method=PERCENTILE_METHOD)
    masked = np.flatnonzero(flat_scores < threshold)
    if masked.size > 1:
        flat = out.ravel()
        flat[masked] = flat[masked][rng.permutation(masked.size)]
    return out


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5))


def augment_batch(batch, model: Model, cfg: MaskConfig, sg_cfg: SmoothGradConfig, rng):
    """Mask a uniformly chosen m% of the batch; labels pass through untouched.

    Each chosen sample gets its own freshly sampled threshold; saliency is
    conditioned on the sample's true label using the model's current
    parameters. Unchosen rows come back bit-identical.
    """
    x_batch, labels = batch
    x_values = np.asarray(x_batch, dtype=np.float64)
    if x_values.shape[0] < 1:
        raise ContractError("augment_batch: empty batch")
    labels = np.asarray(labels)
    out = x_values.copy()
    count = _round_half_away(cfg.m_percent / 100.0 * x_values.shape[0])
    if count == 0:
        return out, labels
    chosen = rng.choice(x_values.shape[0], size=count, replace=False)
    for i in chosen:
        sal = smoothgrad(model, x_values[i], int(labels[i]), sg_cfg)
        q = sample_threshold(cfg.q_max, rng)
        out[i] = mask_below_percentile(x_values[i], sal, q, rng)
    return out, labels
