"""Bernoulli mixture training (EM) and Fisher vector encoding of binary descriptors.

The mixture has K components over D=512 bits. EM runs in log space; the
M-step clamps means into [eps, 1-eps], which is the box-constrained maximizer
of the same objective, so the log-likelihood stays monotone.

A descriptor set is encoded as the gradient of its log-likelihood w.r.t. the
mixture priors and means, giving a K*(D+1) vector laid out as
[K prior-gradient entries | K*D mean-gradient entries], then signed-sqrt
power normalized and L2 normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPatch, InvalidArgument

__all__ = ["EmConfig", "BMMParams", "FisherVector", "train_bmm", "encode_fv", "fv_dim"]

_WEIGHT_FLOOR = 1e-15


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    tol: float = 1e-4
    eps: float = 1e-4
    seed: int = 0


@dataclass
class BMMParams:
    """Mixture priors and per-bit activation probabilities.

    ``log_likelihoods`` records the objective at the start of every EM
    iteration (training metadata; empty for hand-built parameters).
    """

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    log_likelihoods: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape[0] != self.weights.shape[0]:
            raise InvalidArgument("means must be (K, D) matching weights")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidArgument("weights must sum to 1")
        if np.any(self.weights <= 0.0) or np.any(self.weights >= 1.0 + 1e-12):
            if self.weights.shape[0] > 1 or not math.isclose(self.weights[0], 1.0):
                raise InvalidArgument("weights must lie in (0, 1)")
        if np.any(self.means <= 0.0) or np.any(self.means >= 1.0):
            raise InvalidArgument("means must lie strictly inside (0, 1)")

    @property
    def component_count(self) -> int:
        return self.weights.shape[0]

    @property
    def bit_dim(self) -> int:
        return self.means.shape[1]


@dataclass
class FisherVector:
    """Normalized gradient signature; always unit L2 norm (or all-zero)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.values.shape[0]


def fv_dim(k: int, d: int) -> int:
    return k * (d + 1)


def _unpack(bits: np.ndarray) -> np.ndarray:
    """(N, D/8) packed uint8 -> (N, D) float64 of {0, 1}."""
    return np.unpackbits(bits, axis=1).astype(np.float64)


def _descriptor_bits(descriptors) -> np.ndarray:
    if hasattr(descriptors, "bits"):
        return np.asarray(descriptors.bits, dtype=np.uint8)
    if isinstance(descriptors, np.ndarray):
        return np.asarray(descriptors, dtype=np.uint8)
    if len(descriptors) == 0:
        return np.empty((0, 64), dtype=np.uint8)
    return np.stack([np.asarray(d.bits, dtype=np.uint8) for d in descriptors])


def _log_responsibilities(x: np.ndarray, params: BMMParams) -> tuple[np.ndarray, float]:
    """Posterior component probabilities and total log-likelihood."""
    mu = params.means
    logit = np.log(mu) - np.log1p(-mu)  # (K, D)
    const = np.log1p(-mu).sum(axis=1)  # (K,)
    ll = x @ logit.T + const[None, :] + np.log(params.weights)[None, :]
    top = ll.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(ll - top).sum(axis=1))
    resp = np.exp(ll - lse[:, None])
    return resp, float(lse.sum())


def _kmeans_pp_rows(packed: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seed rows by Hamming distance on packed bits."""
    n = packed.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.bitwise_count(packed ^ packed[chosen[0]][None, :]).sum(axis=1).astype(np.float64)
    for _ in range(1, k):
        weights = dist * dist
        total = weights.sum()
        if total <= 0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=weights / total)))
        d_new = np.bitwise_count(packed ^ packed[chosen[-1]][None, :]).sum(axis=1)
        dist = np.minimum(dist, d_new.astype(np.float64))
    return np.array(chosen)


def train_bmm(descriptors, k: int, cfg: EmConfig | None = None) -> BMMParams:
    """Fit a K-component Bernoulli mixture to binary descriptors with EM."""
    cfg = cfg or EmConfig()
    packed = _descriptor_bits(descriptors)
    n = packed.shape[0]
    if n < 10 * k:
        raise InvalidArgument(f"need at least {10 * k} descriptors for K={k}, got {n}")
    x = _unpack(packed)
    rng = np.random.default_rng(cfg.seed)

    seeds = _kmeans_pp_rows(packed, k, rng)
    means = np.clip(0.25 + 0.5 * x[seeds], cfg.eps, 1.0 - cfg.eps)
    weights = np.full(k, 1.0 / k)
    params = BMMParams(weights, means)

    history: list[float] = []
    for _ in range(cfg.max_iters):
        resp, ll = _log_responsibilities(x, params)
        history.append(ll)
        if len(history) >= 2 and history[-1] - history[-2] < cfg.tol:
            break
        nk = resp.sum(axis=0)
        weights = np.maximum(nk / n, _WEIGHT_FLOOR)
        weights = weights / weights.sum()
        means = resp.T @ x / np.maximum(nk[:, None], _WEIGHT_FLOOR)
        means = np.clip(means, cfg.eps, 1.0 - cfg.eps)
        params = BMMParams(weights, means)
    return BMMParams(params.weights, params.means, tuple(history))


def encode_fv(descriptors, bmm: BMMParams) -> FisherVector:
    """Encode a descriptor set against a trained mixture.

    Descriptors are accumulated in a canonical (lexicographic) order, so the
    encoding is exactly invariant to the input ordering.
    """
    packed = _descriptor_bits(descriptors)
    if packed.shape[0] == 0:
        raise EmptyPatch("cannot encode an empty descriptor set")
    order = np.lexsort(tuple(packed[:, col] for col in reversed(range(packed.shape[1]))))
    x = _unpack(packed[order])
    t = x.shape[0]
    resp, _ = _log_responsibilities(x, bmm)

    w = bmm.weights
    mu = bmm.means
    nk = resp.sum(axis=0)  # (K,)
    scale = 1.0 / (t * np.sqrt(w))
    g_alpha = scale * (nk - t * w)
    s = resp.T @ x  # (K, D)
    g_mu = scale[:, None] * (s - nk[:, None] * mu) / np.sqrt(mu * (1.0 - mu))

    v = np.concatenate([g_alpha, g_mu.reshape(-1)])
    v = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(v)
    if norm > 0:
        v = v / norm
    return FisherVector(v)
