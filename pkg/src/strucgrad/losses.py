"""Task costs, likelihood losses, primary losses and evaluation scores.

Functions taking or returning :class:`~strucgrad.autodiff.Var` are the
differentiable building blocks; the rest work on plain arrays.

Task costs are dissimilarities with ``s(y, y) = 0``: ``1 - F1`` for label
sets and the fraction of mismatched tags for sequences.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .models import CLAMP

MLC_F1 = "mlc-f1"
SEQ_HAMMING = "seq-hamming"
COST_VARIANTS = (MLC_F1, SEQ_HAMMING)


def _as_binary(y, what="labels"):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"{what} must be binary")
    return y.astype(np.float64)


# differentiable pieces

def mbce_terms(Y, Yhat):
    """Per-example multi-label binary cross entropy, summed over labels."""
    Y = np.asarray(Y, dtype=np.float64)
    Yhat = ad.clip(Yhat, CLAMP, 1.0 - CLAMP)
    if Y.shape != Yhat.shape:
        raise ValueError(f"label shape {Y.shape} does not match prediction shape {Yhat.shape}")
    ll = ad.mul(Y, ad.log(Yhat)) + ad.mul(1.0 - Y, ad.log(1.0 - Yhat))
    return -ad.vsum(ll, axis=-1)


def categorical_nll(Y, Yhat):
    """``-sum y log yhat`` over positions and tags, for one-hot ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != Yhat.shape:
        raise ValueError(f"label shape {Y.shape} does not match prediction shape {Yhat.shape}")
    return -ad.vsum(ad.mul(Y, ad.log(ad.clip(Yhat, CLAMP, 1.0 - CLAMP))))


def soft_f1_cost(Yhat, Y):
    """``1 - 2<yhat, y> / (sum yhat + sum y)`` along the last axis.

    ``Y`` is gold, shape ``(B, L)``; ``Yhat`` is ``(B, L)`` or ``(B, K, L)``.
    Both sums zero gives cost 0.
    """
    Y = np.asarray(Y, dtype=np.float64)
    Yhat = ad.const(Yhat)
    if Yhat.ndim == Y.ndim + 1:
        Y = Y[:, None, :]
    overlap = ad.vsum(ad.mul(Yhat, Y), axis=-1)
    denom = ad.vsum(Yhat, axis=-1) + Y.sum(axis=-1)
    empty = (denom.value == 0).astype(np.float64)
    return 1.0 - (2.0 * overlap + empty) / (denom + empty)


def soft_hamming_cost(Yhat, Y):
    """``1 - mean_t <yhat_t, y_t>`` for one-hot gold ``Y`` of shape ``(T, L)``."""
    Y = np.asarray(Y, dtype=np.float64)
    T = Y.shape[0]
    if T == 0:
        raise ValueError("empty sequence")
    agree = ad.vsum(ad.vsum(ad.mul(Yhat, Y), axis=-1), axis=-1)
    return 1.0 - agree * (1.0 / T)


def ssvm_hinge(cost, e_pred, e_gold, lam_rank=0.0):
    """Margin-rescaled hinge ``[cost - E(pred) + E(gold)]_+`` plus an optional ranking hinge."""
    out = ad.relu(ad.sub(cost, e_pred) + e_gold)
    if lam_rank:
        out = out + lam_rank * ad.relu(ad.sub(e_gold, e_pred))
    return out


def cd_loss(e_gold, e_neg, cost_neg):
    """Cost-augmented contrastive divergence per example.

    ``logsumexp_k(-E_k + s_k) + E(gold)`` where ``k = 0`` is the gold output
    (cost 0) and ``e_neg``/``cost_neg`` have shape ``(B, K)``.
    """
    e_gold = ad.const(e_gold)
    gold_col = ad.reshape(-e_gold, (e_gold.shape[0], 1))
    scores = ad.concat([gold_col, ad.sub(cost_neg, e_neg)], axis=-1)
    return ad.logsumexp(scores, axis=-1) + e_gold


# array-level losses and costs

def mbce(y, yhat):
    """Sum of logistic losses of relaxed labels ``yhat`` against binary ``y``."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    return float(mbce_terms(y, yhat).value.sum())


def f1_per_example(pred, gold):
    pred = _as_binary(pred, "predictions")
    gold = _as_binary(gold)
    tp = (pred * gold).sum(axis=-1)
    denom = pred.sum(axis=-1) + gold.sum(axis=-1)
    return np.where(denom == 0, 1.0, 2.0 * tp / np.where(denom == 0, 1.0, denom))


def task_cost(yhat, y, variant=MLC_F1, soft=False):
    """Cost in ``[0, 1]`` of ``yhat`` against gold ``y``.

    With ``soft=False`` the prediction must be binary (one-hot rows for
    sequences); the soft form accepts relaxed predictions and agrees with the
    discrete one on binary input.
    """
    if variant not in COST_VARIANTS:
        raise ValueError(f"unknown cost variant {variant!r}")
    yhat = np.asarray(yhat, dtype=np.float64)
    y = _as_binary(y)
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    if not soft:
        yhat = _as_binary(yhat, "predictions")
    if variant == MLC_F1:
        if soft:
            return float(soft_f1_cost(yhat[None, :], y[None, :]).value[0])
        return float(1.0 - f1_per_example(yhat, y))
    if soft:
        return float(soft_hamming_cost(yhat, y).value)
    return float(np.mean(yhat.argmax(axis=-1) != y.argmax(axis=-1)))


def softplus(x):
    return float(np.logaddexp(0.0, x))


@dataclass(frozen=True)
class NegativeSampleSet:
    """Gold output ``y`` (index 0) followed by ``K`` binary samples."""

    gold: np.ndarray
    samples: np.ndarray

    def __len__(self):
        return self.samples.shape[0]

    def all(self):
        return np.concatenate([self.gold[None], self.samples], axis=0)


def sample_bernoulli(yhat, K, rng):
    """``K`` binary vectors with component ``j`` on with probability ``yhat[j]``.

    ``yhat`` of shape ``(..., L)`` gives samples of shape ``(..., K, L)``.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    if np.any(yhat < 0) or np.any(yhat > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if K < 0:
        raise ValueError("K must be non-negative")
    u = rng.random(yhat.shape[:-1] + (K, yhat.shape[-1]))
    return (u < yhat[..., None, :]).astype(np.float64)


def sample_categorical(probs, K, rng):
    """``K`` one-hot sequences drawn position-wise from rows of ``probs`` ``(T, L)``.

    Returns shape ``(K, T, L)``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    T, L = probs.shape
    cdf = np.cumsum(probs, axis=-1)
    cdf[:, -1] = np.inf
    u = rng.random((K, T))
    idx = (u[..., None] >= cdf[None, :, :]).sum(axis=-1)
    return np.eye(L)[idx]


def negative_samples(y, yhat, K, rng):
    """Build the negative set ``{y, ybar_1..K}`` from Bernoulli draws of ``yhat``."""
    y = _as_binary(y)
    return NegativeSampleSet(gold=y, samples=sample_bernoulli(yhat, K, rng))


# dataset-level scores

def _check_dataset(pred, gold):
    pred = _as_binary(pred, "predictions")
    gold = _as_binary(gold)
    if pred.shape != gold.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match gold {gold.shape}")
    if pred.ndim != 2 or pred.shape[0] == 0:
        raise ValueError("need a non-empty (N, L) dataset")
    return pred, gold


def example_f1(pred, gold):
    pred, gold = _check_dataset(pred, gold)
    return float(f1_per_example(pred, gold).mean())


def micro_f1(pred, gold):
    pred, gold = _check_dataset(pred, gold)
    tp = (pred * gold).sum()
    denom = pred.sum() + gold.sum()
    return 1.0 if denom == 0 else float(2.0 * tp / denom)


def macro_f1(pred, gold):
    pred, gold = _check_dataset(pred, gold)
    return float(f1_per_example(pred.T, gold.T).mean())


def token_accuracy(pred_tags, gold_tags):
    """Fraction of correct tags over all tokens of a list of sequences."""
    if len(pred_tags) == 0:
        raise ValueError("empty dataset")
    correct = total = 0
    for p, g in zip(pred_tags, gold_tags, strict=True):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape:
            raise ValueError("predicted and gold sequence lengths differ")
        correct += int((p == g).sum())
        total += g.size
    return correct / total if total else 1.0


def binarize(yhat, threshold=0.5):
    return (np.asarray(yhat) >= threshold).astype(np.float64)
