"""Binary-classification baseline: a logistic head over paired text features.

Each (tweet, target) pair is represented by ``[f_t, f_m, f_t * f_m]`` and
scored independently; a target is predicted when the probability exceeds a
dev-calibrated threshold.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .predictor import Prediction, candidate_thresholds
from .trainer import AdamState, TrainConfig, adam_step, lr_at

logger = logging.getLogger(__name__)

# probability threshold that nothing finite can exceed
NEVER = 1.0 - 1e-15
LOGIT_CLIP = 30.0


@dataclass
class BcModel:
    weight: np.ndarray  # (3 * d,)
    bias: float = 0.0
    threshold: float = 0.5
    encoder_config: dict = field(default_factory=dict)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    loss_trace: list = field(default_factory=list)

    @property
    def feature_dim(self):
        return self.weight.shape[0] // 3


def joint_features(tweet_feats, mist_feats):
    tweet_feats = np.asarray(tweet_feats, dtype=float)
    mist_feats = np.asarray(mist_feats, dtype=float)
    if tweet_feats.shape[-1] != mist_feats.shape[-1]:
        raise DimensionMismatch(
            f"tweet features have dim {tweet_feats.shape[-1]}, target features {mist_feats.shape[-1]}")
    tweet_feats, mist_feats = np.broadcast_arrays(tweet_feats, mist_feats)
    return np.concatenate([tweet_feats, mist_feats, tweet_feats * mist_feats], axis=-1)


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def bc_logit(model, tweet_feats, mist_feats):
    x = joint_features(tweet_feats, mist_feats)
    if x.shape[-1] != model.weight.shape[0]:
        raise DimensionMismatch(f"joint features have dim {x.shape[-1]}, model expects {model.weight.shape[0]}")
    return x @ model.weight + model.bias


def bc_prob(model, tweet_feats, mist_feats):
    return sigmoid(bc_logit(model, tweet_feats, mist_feats))


def bce_loss_and_grads(params, x, y):
    """Mean binary cross-entropy of ``sigmoid(x @ w + b)`` against labels ``y``."""
    z = x @ params["w"] + params["b"][0]
    # log(1 + e^z) - y z, stable on both tails
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    r = (1.0 / (1.0 + np.exp(-z)) - y) / len(y)
    return loss, {"w": x.T @ r, "b": np.array([r.sum()])}


def calibrate_probability(probs, labels):
    """Threshold in (0, 1) maximizing F1 of ``probs > T`` against boolean labels."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if not labels.any():
        return NEVER, 0.0
    cands = candidate_thresholds(probs)
    cands = cands[np.isfinite(cands)]
    # the mid-points only; below every probability predicts everything
    lowest = min(probs.min() / 2.0, 0.5)
    cands = np.concatenate([[lowest], cands, [NEVER]])
    best_t, best_f1 = NEVER, 0.0
    n_rel = int(labels.sum())
    for t in cands:
        pred = probs > t
        tp = int(np.count_nonzero(pred & labels))
        denom = int(pred.sum()) + n_rel
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best_f1 or (f1 == best_f1 and f1 > 0 and t > best_t):
            best_t, best_f1 = float(t), f1
    return best_t, best_f1


def bc_train(tweet_feats, mist_feats, labels, config=None, encoder_config=None,
             dev=None):
    """Fit the logistic head; ``dev`` is an optional ``(tweet, mist, labels)`` triple
    of arrays used to calibrate the threshold (training pairs otherwise)."""
    config = config or TrainConfig()
    x = joint_features(tweet_feats, mist_feats)
    y = np.asarray(labels, dtype=float)
    params = {"w": np.zeros(x.shape[1]), "b": np.zeros(1)}
    rng = np.random.default_rng([config.seed, 3])
    n = len(y)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = config.epochs * steps_per_epoch
    state = AdamState()
    trace = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = bce_loss_and_grads(params, x[idx], y[idx])
            step += 1
            params, state = adam_step(params, grads, state, lr_at(step, total, config),
                                      config.grad_clip_norm)
            epoch_loss += loss * len(idx)
        trace.append(epoch_loss / n)
    model = BcModel(params["w"], float(params["b"][0]), NEVER, encoder_config or {}, config, trace)
    if dev is None:
        probs, dev_labels = bc_prob(model, tweet_feats, mist_feats), labels
    else:
        probs, dev_labels = bc_prob(model, dev[0], dev[1]), dev[2]
    model.threshold, f1 = calibrate_probability(probs, dev_labels)
    logger.info("baseline threshold %.6g (calibration F1 %.3f)", model.threshold, f1)
    return model


def bc_predict(model, tweet_id, tweet_feats, mists):
    """Predict every target in ``mists`` (``{mist_id: features}``) whose probability exceeds T."""
    ids = sorted(mists)
    if not ids:
        return Prediction(tweet_id, set())
    probs = bc_prob(model, tweet_feats, np.stack([mists[m] for m in ids]))
    return Prediction(tweet_id, {m for m, p in zip(ids, probs) if p > model.threshold})
