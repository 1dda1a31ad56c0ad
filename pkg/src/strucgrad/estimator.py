"""scikit-learn compatible wrappers around the trainers."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import losses
from .data import MLCDataset, SeqDataset, SeqExample, split
from .implicit import IhvpConfig
from .models import PAD_ID, UNK_ID
from .tasks import MLCTask, SeqTask
from .trainer import REGIMES, TrainConfig, train


class _EnergyTrainedBase(BaseEstimator):
    """Shared hyperparameters; subclasses supply the task and the data conversion."""

    def __init__(self, regime="implicit", loss="cd", lam=1.0, lam_rank=0.0, k_cd=5,
                 t_inner=5, t_outer=200, eta_inner=0.1, eta_outer=0.01, batch_size=32,
                 ihvp_k=5, ihvp_alpha=0.1, ihvp_delta=1e-3, momentum=0.0,
                 validation_fraction=None, eval_every=10, patience=10, random_state=0):
        self.regime = regime
        self.loss = loss
        self.lam = lam
        self.lam_rank = lam_rank
        self.k_cd = k_cd
        self.t_inner = t_inner
        self.t_outer = t_outer
        self.eta_inner = eta_inner
        self.eta_outer = eta_outer
        self.batch_size = batch_size
        self.ihvp_k = ihvp_k
        self.ihvp_alpha = ihvp_alpha
        self.ihvp_delta = ihvp_delta
        self.momentum = momentum
        self.validation_fraction = validation_fraction
        self.eval_every = eval_every
        self.patience = patience
        self.random_state = random_state

    def _train_config(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(
            t_inner=self.t_inner, t_outer=self.t_outer, eta_inner=self.eta_inner,
            eta_outer=self.eta_outer, lam=self.lam, lam_rank=self.lam_rank, loss=self.loss,
            k_cd=self.k_cd, batch_size=self.batch_size, seed=seed, eval_every=self.eval_every,
            momentum=self.momentum, patience=self.patience,
            ihvp=IhvpConfig(k=self.ihvp_k, alpha=self.ihvp_alpha, delta=self.ihvp_delta))

    def _fit_dataset(self, task, data):
        cfg = self._train_config()
        valid = None
        if self.validation_fraction:
            data, valid, _ = split(data, (1.0 - self.validation_fraction, self.validation_fraction, 0.0),
                                   seed=cfg.seed)
        result = train(task, data, cfg, self.regime, valid=valid)
        self.task_ = task
        self.theta_ = result.theta
        self.phi_ = result.phi
        self.metrics_ = result.metrics
        self.best_iter_ = result.best_iter
        return self


class EnergyMultiLabelClassifier(ClassifierMixin, _EnergyTrainedBase):
    """Multi-label classifier whose inference network is trained against a learned energy.

    ``fit(X, Y)`` takes dense features and a binary indicator matrix. With
    ``regime="mbce"`` the energy is unused and this reduces to a sigmoid MLP
    trained on binary cross-entropy. ``score`` reports example-averaged F1.
    """

    def __init__(self, regime="implicit", loss="cd", lam=1.0, lam_rank=0.0, k_cd=5,
                 t_inner=5, t_outer=200, eta_inner=0.1, eta_outer=0.01, batch_size=32,
                 ihvp_k=5, ihvp_alpha=0.1, ihvp_delta=1e-3, momentum=0.0,
                 validation_fraction=None, eval_every=10, patience=10, random_state=0,
                 infer_hidden=(64,), feature_hidden=(), feature_dim=16, global_hidden=16,
                 threshold=0.5):
        super().__init__(regime, loss, lam, lam_rank, k_cd, t_inner, t_outer, eta_inner,
                         eta_outer, batch_size, ihvp_k, ihvp_alpha, ihvp_delta, momentum,
                         validation_fraction, eval_every, patience, random_state)
        self.infer_hidden = infer_hidden
        self.feature_hidden = feature_hidden
        self.feature_dim = feature_dim
        self.global_hidden = global_hidden
        self.threshold = threshold

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if not np.all((Y == 0) | (Y == 1)):
            raise ValueError("Y must be a binary indicator matrix")
        self.n_features_in_ = X.shape[1]
        self.n_labels_ = Y.shape[1]
        self.classes_ = np.arange(self.n_labels_)
        task = MLCTask.build(X.shape[1], Y.shape[1], tuple(self.infer_hidden),
                             tuple(self.feature_hidden), self.feature_dim, self.global_hidden)
        return self._fit_dataset(task, MLCDataset.from_arrays(X, Y))

    def _check_input(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        return self.task_.predict_proba(self.theta_, self._check_input(X))

    def predict(self, X):
        return losses.binarize(self.predict_proba(X), self.threshold).astype(np.int64)

    def energy(self, X, Y):
        """Learned energy ``E(x, y)`` per row; lower is better."""
        X = self._check_input(X)
        Y = check_array(Y, dtype=np.float64)
        return self.task_.energy.energy(self.phi_.unflatten(), X, Y).value

    def score(self, X, Y, sample_weight=None):
        if sample_weight is not None:
            raise ValueError("sample weights are not supported")
        return losses.example_f1(self.predict(X), np.asarray(Y))


class EnergySequenceTagger(_EnergyTrainedBase):
    """Sequence tagger over token strings with a linear-chain energy.

    ``fit(sentences, tags)`` takes lists of token lists and matching tag
    lists. Unknown tokens at prediction time map to a shared unknown id.
    ``score`` reports token accuracy.
    """

    def __init__(self, regime="implicit", loss="cd", lam=1.0, lam_rank=0.0, k_cd=5,
                 t_inner=5, t_outer=200, eta_inner=0.1, eta_outer=0.01, batch_size=8,
                 ihvp_k=5, ihvp_alpha=0.1, ihvp_delta=1e-3, momentum=0.0,
                 validation_fraction=None, eval_every=10, patience=10, random_state=0,
                 embed_dim=16, infer_hidden=(32,), feature_hidden=(), feature_dim=16, radius=1):
        super().__init__(regime, loss, lam, lam_rank, k_cd, t_inner, t_outer, eta_inner,
                         eta_outer, batch_size, ihvp_k, ihvp_alpha, ihvp_delta, momentum,
                         validation_fraction, eval_every, patience, random_state)
        self.embed_dim = embed_dim
        self.infer_hidden = infer_hidden
        self.feature_hidden = feature_hidden
        self.feature_dim = feature_dim
        self.radius = radius

    def _encode(self, sentences, tags=None):
        if len(sentences) == 0:
            raise ValueError("no sentences")
        examples = []
        for i, sent in enumerate(sentences):
            if len(sent) == 0:
                raise ValueError(f"sentence {i} is empty")
            toks = np.array([self.vocab_.get(t, UNK_ID) for t in sent], dtype=np.int64)
            if tags is None:
                ids = np.zeros(len(sent), dtype=np.int64)
            else:
                if len(tags[i]) != len(sent):
                    raise ValueError(f"sentence {i} has {len(sent)} tokens but {len(tags[i])} tags")
                try:
                    ids = np.array([self.tagset_[t] for t in tags[i]], dtype=np.int64)
                except KeyError as exc:
                    raise ValueError(f"unknown tag {exc.args[0]!r}") from None
            examples.append(SeqExample(toks, ids))
        return SeqDataset(examples, self.vocab_, self.tagset_)

    def fit(self, sentences, tags):
        if len(sentences) != len(tags):
            raise ValueError("sentences and tags differ in length")
        vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        tagset = {}
        for sent, seq in zip(sentences, tags):
            for t in sent:
                vocab.setdefault(t, len(vocab))
            for g in seq:
                tagset.setdefault(g, len(tagset))
        self.vocab_, self.tagset_ = vocab, tagset
        self.classes_ = np.array(sorted(tagset, key=tagset.get), dtype=object)
        data = self._encode(sentences, tags)
        task = SeqTask.build(len(vocab), len(tagset), self.embed_dim, tuple(self.infer_hidden),
                             tuple(self.feature_hidden), self.feature_dim, self.radius)
        return self._fit_dataset(task, data)

    def predict_proba(self, sentences):
        check_is_fitted(self, "theta_")
        return self.task_.predict_proba(self.theta_, self._encode(sentences))

    def predict(self, sentences):
        return [list(self.classes_[p.argmax(axis=-1)]) for p in self.predict_proba(sentences)]

    def score(self, sentences, tags):
        pred = self.predict(sentences)
        gold = [np.array([self.tagset_.get(t, -1) for t in seq]) for seq in tags]
        pred_ids = [np.array([self.tagset_[t] for t in seq]) for seq in pred]
        return losses.token_accuracy(pred_ids, gold)
