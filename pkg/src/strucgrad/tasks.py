"""Bind models and losses into the objectives the trainers optimise.

A task knows how to initialise ``(theta, phi)``, cut batches, build the
auxiliary objective ``MLE + lam * E(x, A(x))`` and the primary objective
(``"ssvm"`` or ``"cd"``), draw negative samples, and score predictions.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import losses
from .models import MLCEnergy, MLCInferNet, SeqEnergy, SeqInferNet
from .tensor import Layout, ParamVector, ScalarFn

PRIMARY_LOSSES = ("ssvm", "cd")


@dataclass(frozen=True)
class MLCBatch:
    X: np.ndarray
    Y: np.ndarray
    negatives: np.ndarray = None

    def __len__(self):
        return self.X.shape[0]


@dataclass(frozen=True)
class SeqBatch:
    tokens: tuple
    targets: tuple
    negatives: tuple = None

    def __len__(self):
        return len(self.tokens)


def _check_loss(kind):
    if kind not in PRIMARY_LOSSES:
        raise ValueError(f"primary loss must be one of {PRIMARY_LOSSES}, got {kind!r}")


class MLCTask:
    """Multi-label classification with the global-energy network."""

    name = "mlc"
    score_key = "example_f1"

    def __init__(self, infer, energy):
        if infer.n_labels != energy.n_labels or infer.n_features != energy.n_features:
            raise ValueError("inference and energy networks disagree on dimensions")
        self.infer = infer
        self.energy = energy
        self.theta_layout = infer.layout
        self.phi_layout = energy.layout

    @classmethod
    def build(cls, n_features, n_labels, infer_hidden=(64,), feature_hidden=(),
              feature_dim=16, global_hidden=16):
        return cls(MLCInferNet(n_features, n_labels, infer_hidden),
                   MLCEnergy(n_features, n_labels, feature_hidden, feature_dim, global_hidden))

    def init_params(self, rng_theta, rng_phi):
        return self.infer.init(rng_theta), self.energy.init(rng_phi)

    def check_data(self, data):
        if data.n_features != self.infer.n_features or data.n_labels != self.infer.n_labels:
            raise ValueError(
                f"data has d={data.n_features}, L={data.n_labels}; model expects "
                f"d={self.infer.n_features}, L={self.infer.n_labels}")

    def make_batch(self, data, idx):
        X = data.X
        return MLCBatch(X[idx], data.Y[idx])

    # objectives

    def mle_fn(self):
        def build(theta, phi, b):
            return ad.mean(losses.mbce_terms(b.Y, self.infer.forward(theta, b.X)))
        return ScalarFn(build, self.theta_layout, None, "mbce")

    def aux_fn(self, lam):
        if lam < 0:
            raise ValueError("lam must be non-negative")

        def build(theta, phi, b):
            yhat = self.infer.forward(theta, b.X)
            loss = ad.mean(losses.mbce_terms(b.Y, yhat))
            if lam:
                loss = loss + lam * ad.mean(self.energy.energy(phi, b.X, yhat))
            return loss
        return ScalarFn(build, self.theta_layout, self.phi_layout, "aux")

    def prim_fn(self, kind, lam_rank=0.0, relaxed_negative=False):
        _check_loss(kind)
        if kind == "ssvm":
            def build(theta, phi, b):
                yhat = self.infer.forward(theta, b.X)
                feats = self.energy.features(phi, b.X)
                e_pred = self.energy.energy(phi, b.X, yhat, feats)
                e_gold = self.energy.energy(phi, b.X, b.Y, feats)
                cost = losses.soft_f1_cost(yhat, b.Y)
                return ad.mean(losses.ssvm_hinge(cost, e_pred, e_gold, lam_rank))
            return ScalarFn(build, self.theta_layout, self.phi_layout, "ssvm")

        def build(theta, phi, b):
            if b.negatives is None:
                raise ValueError("contrastive loss needs a batch with negative samples")
            feats = self.energy.features(phi, b.X)
            e_gold = self.energy.energy(phi, b.X, b.Y, feats)
            e_neg = self.energy.energy(phi, b.X, b.negatives, feats)
            cost_neg = losses.soft_f1_cost(b.negatives, b.Y).value
            if relaxed_negative:
                yhat = self.infer.forward(theta, b.X)
                B = len(b)
                e_neg = ad.concat([e_neg, self.energy.energy(phi, b.X, yhat, feats).reshape(B, 1)])
                cost_neg = ad.concat([cost_neg, losses.soft_f1_cost(yhat, b.Y).reshape(B, 1)])
            return ad.mean(losses.cd_loss(e_gold, e_neg, cost_neg))
        return ScalarFn(build, self.theta_layout, self.phi_layout, "cd")

    def with_negatives(self, theta, batch, K, rng):
        if K < 1:
            raise ValueError("need at least one negative sample")
        yhat = self.infer.forward(theta.unflatten(), batch.X).value
        return replace(batch, negatives=losses.sample_bernoulli(yhat, K, rng))

    # prediction

    def predict_proba(self, theta, data):
        X = data.X if hasattr(data, "X") else np.asarray(data, dtype=np.float64)
        return self.infer.forward(theta.unflatten(), X).value

    def predict(self, theta, data):
        return losses.binarize(self.predict_proba(theta, data))

    def evaluate(self, theta, data):
        pred = self.predict(theta, data)
        gold = data.Y
        return {"example_f1": losses.example_f1(pred, gold),
                "micro_f1": losses.micro_f1(pred, gold),
                "macro_f1": losses.macro_f1(pred, gold)}

    def describe(self):
        return {"task": self.name, "infer": self.infer.describe(), "energy": self.energy.describe()}


class SeqTask:
    """Sequence labelling with the linear-chain energy."""

    name = "seq"
    score_key = "token_accuracy"

    def __init__(self, infer, energy):
        if infer.n_tags != energy.n_tags or infer.vocab_size != energy.vocab_size:
            raise ValueError("inference and energy networks disagree on dimensions")
        self.infer = infer
        self.energy = energy
        self.theta_layout = infer.layout
        self.phi_layout = energy.layout

    @classmethod
    def build(cls, vocab_size, n_tags, embed_dim=16, infer_hidden=(32,), feature_hidden=(),
              feature_dim=16, radius=1):
        return cls(SeqInferNet(vocab_size, n_tags, embed_dim, infer_hidden, radius),
                   SeqEnergy(vocab_size, n_tags, embed_dim, feature_hidden, feature_dim, radius))

    def init_params(self, rng_theta, rng_phi):
        return self.infer.init(rng_theta), self.energy.init(rng_phi)

    def check_data(self, data):
        if data.vocab_size > self.infer.vocab_size or data.n_tags != self.infer.n_tags:
            raise ValueError(
                f"data has vocab={data.vocab_size}, tags={data.n_tags}; model expects "
                f"vocab<={self.infer.vocab_size}, tags={self.infer.n_tags}")

    def make_batch(self, data, idx):
        eye = np.eye(self.infer.n_tags)
        exs = [data.examples[i] for i in idx]
        return SeqBatch(tuple(ex.tokens for ex in exs), tuple(eye[ex.tags] for ex in exs))

    def _mean_over(self, b, per_sentence):
        total = None
        for i in range(len(b)):
            term = per_sentence(i)
            total = term if total is None else total + term
        return total * (1.0 / len(b))

    def mle_fn(self):
        def build(theta, phi, b):
            return self._mean_over(b, lambda i: losses.categorical_nll(
                b.targets[i], self.infer.forward(theta, b.tokens[i])))
        return ScalarFn(build, self.theta_layout, None, "nll")

    def aux_fn(self, lam):
        if lam < 0:
            raise ValueError("lam must be non-negative")

        def one(theta, phi, tokens, target):
            yhat = self.infer.forward(theta, tokens)
            loss = losses.categorical_nll(target, yhat)
            if lam:
                loss = loss + lam * self.energy.energy(phi, tokens, yhat)
            return loss

        def build(theta, phi, b):
            return self._mean_over(b, lambda i: one(theta, phi, b.tokens[i], b.targets[i]))
        return ScalarFn(build, self.theta_layout, self.phi_layout, "aux")

    def prim_fn(self, kind, lam_rank=0.0, relaxed_negative=False):
        _check_loss(kind)

        def ssvm(theta, phi, tokens, target, negs):
            yhat = self.infer.forward(theta, tokens)
            feats = self.energy.features(phi, tokens)
            e_pred = self.energy.energy(phi, tokens, yhat, feats)
            e_gold = self.energy.energy(phi, tokens, target, feats)
            cost = losses.soft_hamming_cost(yhat, target)
            return losses.ssvm_hinge(cost, e_pred, e_gold, lam_rank)

        def cd(theta, phi, tokens, target, negs):
            feats = self.energy.features(phi, tokens)
            e_gold = ad.reshape(self.energy.energy(phi, tokens, target, feats), (1,))
            e_neg = self.energy.energy(phi, tokens, negs, feats).reshape(1, -1)
            cost_neg = np.array([[losses.soft_hamming_cost(n, target).value for n in negs]])
            if relaxed_negative:
                yhat = self.infer.forward(theta, tokens)
                e_pred = ad.reshape(self.energy.energy(phi, tokens, yhat, feats), (1, 1))
                e_neg = ad.concat([e_neg, e_pred])
                cost_neg = ad.concat([cost_neg, ad.reshape(losses.soft_hamming_cost(yhat, target), (1, 1))])
            return ad.vsum(losses.cd_loss(e_gold, e_neg, cost_neg))

        one = ssvm if kind == "ssvm" else cd

        def build(theta, phi, b):
            if kind == "cd" and b.negatives is None:
                raise ValueError("contrastive loss needs a batch with negative samples")
            negs = b.negatives or (None,) * len(b)
            return self._mean_over(b, lambda i: one(theta, phi, b.tokens[i], b.targets[i], negs[i]))
        return ScalarFn(build, self.theta_layout, self.phi_layout, kind)

    def with_negatives(self, theta, batch, K, rng):
        if K < 1:
            raise ValueError("need at least one negative sample")
        params = theta.unflatten()
        negs = tuple(losses.sample_categorical(self.infer.forward(params, t).value, K, rng)
                     for t in batch.tokens)
        return replace(batch, negatives=negs)

    def predict_proba(self, theta, data):
        params = theta.unflatten()
        return [self.infer.forward(params, ex.tokens).value for ex in data.examples]

    def predict(self, theta, data):
        return [p.argmax(axis=-1) for p in self.predict_proba(theta, data)]

    def evaluate(self, theta, data):
        pred = self.predict(theta, data)
        return {"token_accuracy": losses.token_accuracy(pred, [ex.tags for ex in data.examples])}

    def describe(self):
        return {"task": self.name, "infer": self.infer.describe(), "energy": self.energy.describe()}


class QuadraticTask:
    """Closed-form bi-level family used as an oracle.

    ``aux = 0.5 |theta - M phi|^2``, ``prim = 0.5 |theta|^2``, so
    ``theta*(phi) = M phi`` and the true hypergradient is ``M^T M phi``.
    Data and batches are ignored.
    """

    name = "quadratic"
    score_key = "neg_prim"

    def __init__(self, M, phi0=None, theta0=None):
        self.M = np.asarray(M, dtype=np.float64)
        n_theta, n_phi = self.M.shape
        self.theta_layout = Layout([("theta", (n_theta,))])
        self.phi_layout = Layout([("phi", (n_phi,))])
        self.phi0 = np.ones(n_phi) if phi0 is None else np.asarray(phi0, dtype=np.float64)
        self.theta0 = np.zeros(n_theta) if theta0 is None else np.asarray(theta0, dtype=np.float64)

    def init_params(self, rng_theta, rng_phi):
        return (ParamVector(self.theta_layout, self.theta0), ParamVector(self.phi_layout, self.phi0))

    def check_data(self, data):
        pass

    def make_batch(self, data, idx):
        return None

    def aux_fn(self, lam=1.0):
        M = self.M

        def build(theta, phi, b):
            r = theta["theta"] - ad.matmul(phi["phi"], ad.transpose(M))
            return 0.5 * ad.vsum(r * r)
        return ScalarFn(build, self.theta_layout, self.phi_layout, "quad-aux")

    mle_fn = aux_fn

    def prim_fn(self, kind=None, lam_rank=0.0, relaxed_negative=False):
        def build(theta, phi, b):
            return 0.5 * ad.vsum(theta["theta"] * theta["theta"])
        return ScalarFn(build, self.theta_layout, self.phi_layout, "quad-prim")

    def with_negatives(self, theta, batch, K, rng):
        return batch

    def evaluate(self, theta, data):
        return {"neg_prim": -0.5 * float(theta.values @ theta.values)}

    def describe(self):
        return {"task": self.name, "M": self.M.tolist()}


def task_from_description(desc):
    from .models import build as build_model

    if desc["task"] == "mlc":
        return MLCTask(build_model(desc["infer"]), build_model(desc["energy"]))
    if desc["task"] == "seq":
        return SeqTask(build_model(desc["infer"]), build_model(desc["energy"]))
    raise ValueError(f"unknown task {desc['task']!r}")
