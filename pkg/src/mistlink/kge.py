"""Link-scoring functions of the knowledge-embedding models.

All functions broadcast over leading batch axes; the last axis is the
embedding axis. Higher scores mean a more plausible link.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch


class ModelKind(str, Enum):
    TRANSE = "transe"
    TRANSD = "transd"
    TRANSMS = "transms"
    TUCKER = "tucker"
    KNN = "knn"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}; choose from "
                             + ", ".join(k.value for k in cls)) from None

    @property
    def tweet_dim(self):
        return 16 if self is ModelKind.TRANSD else 8

    @property
    def mist_dim(self):
        return {ModelKind.TRANSD: 16, ModelKind.TRANSMS: 9, ModelKind.KNN: 0}.get(self, 8)


CORE_SHAPE = (8, 8, 8)


def _check(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise DimensionMismatch(f"{name} must have last dimension {n}, got shape {x.shape}")
    return x


def _same_dim(*arrays):
    arrays = [np.asarray(a, dtype=float) for a in arrays]
    dims = {a.shape[-1] for a in arrays}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedding dimensions differ: {sorted(dims)}")
    return arrays


def sign(x):
    # subgradient of |x| with the value at 0 pinned to 0
    return np.sign(x)


# --------------------------------------------------------------------------
# scores


def score_transe(te_i, me_j, te_k):
    te_i, me_j, te_k = _same_dim(te_i, me_j, te_k)
    return -np.abs(te_i + me_j - te_k).sum(axis=-1)


def _transd_residual(te_i, te_i_p, me_j, me_j_p, te_k, te_k_p):
    # (I + m_p t_p^T) t = t + m_p (t_p . t)
    proj_i = (te_i_p * te_i).sum(axis=-1, keepdims=True)
    proj_k = (te_k_p * te_k).sum(axis=-1, keepdims=True)
    return te_i + me_j_p * proj_i + me_j - te_k - me_j_p * proj_k, proj_i, proj_k


def score_transd(te_i, te_i_p, me_j, me_j_p, te_k, te_k_p):
    args = _same_dim(te_i, te_i_p, me_j, me_j_p, te_k, te_k_p)
    u, _, _ = _transd_residual(*args)
    return -np.abs(u).sum(axis=-1)


def _transms_residual(te_i, me_j, alpha_j, te_k):
    alpha = np.asarray(alpha_j, dtype=float)[..., None]
    th_k = np.tanh(te_k * me_j)
    th_i = np.tanh(te_i * me_j)
    # the cross terms are summed as one commutative pair so swapping
    # te_i and te_k gives a bit-identical residual
    u = me_j + alpha * (te_i * te_k) - (th_k * te_i + th_i * te_k)
    return u, th_i, th_k, alpha


def score_transms(te_i, me_j, alpha_j, te_k):
    te_i, me_j, te_k = _same_dim(te_i, me_j, te_k)
    u, *_ = _transms_residual(te_i, me_j, alpha_j, te_k)
    return -np.abs(u).sum(axis=-1)


def score_tucker(W, te_i, me_j, te_k):
    W = np.asarray(W, dtype=float)
    te_i, te_k = _same_dim(te_i, te_k)
    me_j = np.asarray(me_j, dtype=float)
    if W.shape != (te_i.shape[-1], me_j.shape[-1], te_k.shape[-1]):
        raise DimensionMismatch(f"core tensor shape {W.shape} does not match embeddings")
    return np.einsum("abc,...a,...b,...c->...", W, te_i, me_j, te_k)


def score_knn(te_i, te_k):
    te_i, te_k = _same_dim(te_i, te_k)
    return -np.linalg.norm(te_i - te_k, axis=-1)


# --------------------------------------------------------------------------
# dispatch on full (packed) embeddings


def split_transd(e):
    half = e.shape[-1] // 2
    return e[..., :half], e[..., half:]


def split_transms(me):
    return me[..., :-1], me[..., -1]


def link_score(kind, te_i, me_j, te_k, core=None):
    """Score packed embeddings as produced by the projection layers."""
    kind = ModelKind.parse(kind)
    te_i = _check(te_i, kind.tweet_dim, "te_i")
    te_k = _check(te_k, kind.tweet_dim, "te_k")
    if kind is ModelKind.KNN:
        return score_knn(te_i, te_k)
    me_j = _check(me_j, kind.mist_dim, "me_j")
    if kind is ModelKind.TRANSE:
        return score_transe(te_i, me_j, te_k)
    if kind is ModelKind.TRANSD:
        (ti, tip), (m, mp), (tk, tkp) = split_transd(te_i), split_transd(me_j), split_transd(te_k)
        return score_transd(ti, tip, m, mp, tk, tkp)
    if kind is ModelKind.TRANSMS:
        m, alpha = split_transms(me_j)
        return score_transms(te_i, m, alpha, te_k)
    return score_tucker(core, te_i, me_j, te_k)


@dataclass
class ScoreGradient:
    score: np.ndarray
    d_te_i: np.ndarray
    d_me_j: np.ndarray
    d_te_k: np.ndarray
    d_core: np.ndarray | None = None


def score_grad(kind, te_i, me_j, te_k, core=None):
    """Score and its gradient w.r.t. every packed argument.

    Batched inputs give per-example gradients (``d_core`` has shape
    ``batch + core.shape``).
    """
    kind = ModelKind.parse(kind)
    te_i = _check(te_i, kind.tweet_dim, "te_i")
    te_k = _check(te_k, kind.tweet_dim, "te_k")

    if kind is ModelKind.KNN:
        diff = te_i - te_k
        dist = np.linalg.norm(diff, axis=-1, keepdims=True)
        safe = np.where(dist > 0, dist, 1.0)
        g = np.where(dist > 0, -diff / safe, 0.0)
        me_j = np.zeros(te_i.shape[:-1] + (0,)) if me_j is None else np.asarray(me_j, dtype=float)
        return ScoreGradient(-dist[..., 0], g, np.zeros_like(me_j), -g)

    me_j = _check(me_j, kind.mist_dim, "me_j")

    if kind is ModelKind.TRANSE:
        u = te_i + me_j - te_k
        s = -sign(u)
        return ScoreGradient(-np.abs(u).sum(axis=-1), s, s.copy(), -s)

    if kind is ModelKind.TRANSD:
        (ti, tip), (m, mp), (tk, tkp) = split_transd(te_i), split_transd(me_j), split_transd(te_k)
        u, proj_i, proj_k = _transd_residual(ti, tip, m, mp, tk, tkp)
        s = -sign(u)
        ms = (mp * s).sum(axis=-1, keepdims=True)
        d_ti = np.concatenate([s + tip * ms, ti * ms], axis=-1)
        d_tk = np.concatenate([-s - tkp * ms, -tk * ms], axis=-1)
        d_m = np.concatenate([s, s * (proj_i - proj_k)], axis=-1)
        return ScoreGradient(-np.abs(u).sum(axis=-1), d_ti, d_m, d_tk)

    if kind is ModelKind.TRANSMS:
        m, alpha_j = split_transms(me_j)
        u, th_i, th_k, alpha = _transms_residual(te_i, m, alpha_j, te_k)
        s = -sign(u)
        sech2_i = 1.0 - th_i ** 2
        sech2_k = 1.0 - th_k ** 2
        du_dti = -th_k + alpha * te_k - sech2_i * m * te_k
        du_dtk = -sech2_k * m * te_i + alpha * te_i - th_i
        du_dm = 1.0 - (sech2_k + sech2_i) * te_i * te_k
        d_alpha = (s * te_i * te_k).sum(axis=-1, keepdims=True)
        return ScoreGradient(
            -np.abs(u).sum(axis=-1),
            s * du_dti,
            np.concatenate([s * du_dm, d_alpha], axis=-1),
            s * du_dtk,
        )

    # TuckER: trilinear
    W = np.asarray(core, dtype=float)
    if W.shape != (kind.tweet_dim, kind.mist_dim, kind.tweet_dim):
        raise DimensionMismatch(f"core tensor shape {W.shape} does not match {kind.value}")
    return ScoreGradient(
        np.einsum("abc,...a,...b,...c->...", W, te_i, me_j, te_k),
        np.einsum("abc,...b,...c->...a", W, me_j, te_k),
        np.einsum("abc,...a,...c->...b", W, te_i, te_k),
        np.einsum("abc,...a,...b->...c", W, te_i, me_j),
        np.einsum("...a,...b,...c->...abc", te_i, me_j, te_k),
    )
