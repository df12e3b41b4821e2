"""Margin-loss training of the projection layers with ADAM."""

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .encoder import ProjectionEncoder
from .errors import DivergedGradient, NegativeSamplingExhausted
from .kge import CORE_SHAPE, ModelKind, score_grad
from .mkg import LinkTriple, training_triples

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 40
    warmup_fraction: float = 0.10
    batch_size: int = 6
    grad_clip_norm: float = 1.0
    margin: float = 1.0
    negatives_per_positive: int = 1
    seed: int = 0
    per_link_cap: int | None = 10
    init_scale: float = 0.01

    def __post_init__(self):
        for name in ("lr", "epochs", "batch_size", "grad_clip_norm", "negatives_per_positive"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.per_link_cap is not None and self.per_link_cap < 1:
            raise ValueError("per_link_cap must be >= 1 or None")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# pieces


def sample_negative(triple, graph, rng, max_attempts=100):
    """Corrupt the tail with a uniformly drawn training tweet not linked by the relation."""
    pool = graph.train_tweets
    if pool:
        for _ in range(max_attempts):
            cand = pool[int(rng.integers(len(pool)))]
            if cand != triple.head and not graph.has_edge(triple.head, triple.relation, cand):
                return LinkTriple(triple.head, triple.relation, cand)
    raise NegativeSamplingExhausted(
        f"no admissible corrupted tail for {triple} after {max_attempts} draws")


def margin_loss(pos_score, neg_score, margin):
    return np.maximum(0.0, margin - pos_score + neg_score)


def lr_at(step, total_steps, config):
    """Linear warmup to ``config.lr`` then linear decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    warmup = math.ceil(config.warmup_fraction * total_steps)
    if step <= warmup:
        return config.lr * step / warmup if warmup else config.lr
    return config.lr * (total_steps - step) / (total_steps - warmup)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(norm):
        raise DivergedGradient("non-finite gradient")
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


def adam_step(params, grads, state, lr, clip_norm=1.0):
    """One bias-corrected ADAM update after global-norm clipping.

    Returns ``(params, state)`` as new objects. An all-zero gradient is a
    no-op: neither parameters nor moments move.
    """
    grads, norm = clip_by_global_norm(grads, clip_norm)
    if norm == 0.0:
        return params, state
    t = state.step + 1
    new_m, new_v, new_params = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = BETA1 * state.m.get(name, 0.0) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(name, 0.0) + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + EPS)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t)


# --------------------------------------------------------------------------
# composed loss


def embed(params, kind, tweet_feats, mist_feats=None):
    te = tweet_feats @ params["tweet_w"].T + params["tweet_b"]
    if kind is ModelKind.KNN or mist_feats is None:
        return te, None
    return te, mist_feats @ params["mist_w"].T + params["mist_b"]


def batch_loss_and_grads(kind, params, head_feats, mist_feats, tail_feats, neg_feats, margin):
    """Mean hinge loss of a batch and its gradient w.r.t. every parameter.

    Rows of the four feature matrices align: row r is the positive
    ``(head, mist, tail)`` and its corruption ``(head, mist, neg)``.
    """
    kind = ModelKind.parse(kind)
    n = head_feats.shape[0]
    te_i, me = embed(params, kind, head_feats, mist_feats)
    te_k, _ = embed(params, kind, tail_feats)
    te_s, _ = embed(params, kind, neg_feats)
    core = params.get("core")

    g = score_grad(kind, np.concatenate([te_i, te_i]),
                   None if me is None else np.concatenate([me, me]),
                   np.concatenate([te_k, te_s]), core)
    pos, neg = g.score[:n], g.score[n:]
    hinge = margin_loss(pos, neg, margin)
    loss = float(hinge.mean())

    active = (hinge > 0).astype(float) / n
    w = np.concatenate([-active, active])[:, None]  # dL/dscore for pos rows then neg rows

    d_te_head = (w * g.d_te_i)
    d_te_head = d_te_head[:n] + d_te_head[n:]
    d_te_tail = (w * g.d_te_k)
    grads = {
        "tweet_w": d_te_head.T @ head_feats + d_te_tail[:n].T @ tail_feats + d_te_tail[n:].T @ neg_feats,
        "tweet_b": d_te_head.sum(axis=0) + d_te_tail.sum(axis=0),
    }
    if me is not None:
        d_me = w * g.d_me_j
        d_me = d_me[:n] + d_me[n:]
        grads["mist_w"] = d_me.T @ mist_feats
        grads["mist_b"] = d_me.sum(axis=0)
    if kind is ModelKind.TUCKER:
        grads["core"] = np.tensordot(w[:, 0], g.d_core, axes=1)
    return loss, grads


# --------------------------------------------------------------------------
# model + loop


@dataclass
class KgeModel:
    kind: ModelKind
    tweet_proj: ProjectionEncoder
    mist_proj: ProjectionEncoder | None
    core: np.ndarray | None
    encoder_config: dict
    train_config: TrainConfig
    loss_trace: list = field(default_factory=list)
    thresholds: object = None  # predictor.ThresholdTable once calibrated
    mode: str | None = None

    def params(self):
        p = {"tweet_w": self.tweet_proj.weight, "tweet_b": self.tweet_proj.bias}
        if self.mist_proj is not None:
            p["mist_w"] = self.mist_proj.weight
            p["mist_b"] = self.mist_proj.bias
        if self.core is not None:
            p["core"] = self.core
        return p

    def set_params(self, p):
        self.tweet_proj = ProjectionEncoder(p["tweet_w"], p["tweet_b"])
        if "mist_w" in p:
            self.mist_proj = ProjectionEncoder(p["mist_w"], p["mist_b"])
        if "core" in p:
            self.core = p["core"]

    def tweet_embedding(self, features):
        return self.tweet_proj(features)

    def mist_embedding(self, features):
        if self.mist_proj is None:
            return None
        return self.mist_proj(features)


def init_model(kind, in_dim, config, encoder_config=None):
    kind = ModelKind.parse(kind)
    rng = np.random.default_rng([config.seed, 1])
    tweet_proj = ProjectionEncoder.init(kind.tweet_dim, in_dim, rng, config.init_scale)
    mist_proj = None
    if kind.mist_dim:
        mist_proj = ProjectionEncoder.init(kind.mist_dim, in_dim, rng, config.init_scale)
    core = rng.uniform(-0.1, 0.1, size=CORE_SHAPE) if kind is ModelKind.TUCKER else None
    return KgeModel(kind, tweet_proj, mist_proj, core, encoder_config or {}, config)


def graph_features(graph, encoder, tweet_ids):
    return np.stack([encoder.features(t, graph.tweet_texts.get(t)) for t in tweet_ids])


def train(graph, encoder, kind, config, triples=None):
    """Fit projections (and the TuckER core) by minimizing the margin loss.

    KNN is trained the same way with its distance score, which ignores the
    target embedding, so only the tweet projection moves.
    """
    kind = ModelKind.parse(kind)
    model = init_model(kind, encoder.dim, config, encoder.config())
    if triples is None:
        triples = training_triples(graph, config.per_link_cap, config.seed)
    if not triples:
        logger.warning("no training triples; returning the initial model")
        return model

    tweet_ids = sorted({t for tr in triples for t in (tr.head, tr.tail)} | set(graph.train_tweets))
    row = {t: i for i, t in enumerate(tweet_ids)}
    X = graph_features(graph, encoder, tweet_ids)
    mist_ids = sorted({tr.relation for tr in triples})
    mrow = {m: i for i, m in enumerate(mist_ids)}
    G = np.stack([encoder.features(m, graph.mist_texts.get(m)) for m in mist_ids])

    heads = np.array([row[t.head] for t in triples])
    tails = np.array([row[t.tail] for t in triples])
    rels = np.array([mrow[t.relation] for t in triples])

    rng = np.random.default_rng([config.seed, 2])
    n = len(triples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = config.epochs * steps_per_epoch
    params = model.params()
    state = AdamState()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.repeat(order[start:start + config.batch_size], config.negatives_per_positive)
            negs = np.array([row[sample_negative(triples[i], graph, rng).tail] for i in idx])
            loss, grads = batch_loss_and_grads(
                kind, params, X[heads[idx]], G[rels[idx]], X[tails[idx]], X[negs], config.margin)
            step += 1
            params, state = adam_step(params, grads, state, lr_at(step, total, config),
                                      config.grad_clip_norm)
            epoch_loss += loss * len(idx)
        model.loss_trace.append(epoch_loss / (n * config.negatives_per_positive))
        logger.debug("epoch %d loss %.4f", epoch + 1, model.loss_trace[-1])
    model.set_params(params)
    return model
