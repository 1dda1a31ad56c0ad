"""Energy networks and inference networks.

Every model exposes a :class:`~strucgrad.tensor.Layout` for its parameters
and forward functions that take a ``{segment name: array or Var}`` mapping,
so the same code serves plain evaluation and taped differentiation.
"""

import numpy as np

from . import autodiff as ad
from .tensor import Layout, ParamVector

CLAMP = 1e-7
PAD_ID = 0
UNK_ID = 1


class MLP:
    """Affine layers with tanh between them and a linear output."""

    def __init__(self, sizes, prefix):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"MLP needs at least input and output widths >= 1, got {self.sizes}")
        self.prefix = prefix

    def shapes(self):
        out = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            out.append((f"{self.prefix}.W{i}", (n_in, n_out)))
            out.append((f"{self.prefix}.b{i}", (n_out,)))
        return out

    def forward(self, params, X):
        h = X
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = ad.matmul(h, params[f"{self.prefix}.W{i}"]) + params[f"{self.prefix}.b{i}"]
            if i < n_layers - 1:
                h = ad.tanh(h)
        return h


def glorot_init(layout, rng, bias_names=()):
    """Uniform(-r, r), r = sqrt(6 / (fan_in + fan_out)); listed biases start at zero."""
    arrays = {}
    for seg in layout.segments:
        if seg.name in bias_names or seg.size == 0:
            arrays[seg.name] = np.zeros(seg.shape)
            continue
        if len(seg.shape) == 1:
            fan_in, fan_out = seg.shape[0], 1
        else:
            fan_in, fan_out = seg.shape[0], int(np.prod(seg.shape[1:]))
        r = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[seg.name] = rng.uniform(-r, r, size=seg.shape)
    return ParamVector.from_arrays(layout, arrays)


def _bias_names(layout):
    return tuple(n for n in layout.names() if ".b" in n)


def _check_width(X, width, what):
    if X.shape[-1] != width:
        raise ValueError(f"{what}: expected trailing dimension {width}, got {X.shape}")


def window_ids(tokens, radius):
    """Token ids of the ``2 * radius + 1`` window around each position, PAD outside."""
    tokens = np.asarray(tokens, dtype=np.int64)
    T = tokens.shape[0]
    padded = np.concatenate([np.full(radius, PAD_ID), tokens, np.full(radius, PAD_ID)])
    return np.stack([padded[t:t + 2 * radius + 1] for t in range(T)]) if T else np.zeros((0, 2 * radius + 1), dtype=np.int64)


class MLCInferNet:
    """Feed-forward inference network for multi-label outputs (sigmoid head)."""

    kind = "mlc-infer"

    def __init__(self, n_features, n_labels, hidden=(64,)):
        self.n_features = int(n_features)
        self.n_labels = int(n_labels)
        self.hidden = tuple(int(h) for h in hidden)
        self.mlp = MLP((self.n_features, *self.hidden, self.n_labels), "infer")
        self.layout = Layout(self.mlp.shapes())

    def describe(self):
        return {"kind": self.kind, "n_features": self.n_features,
                "n_labels": self.n_labels, "hidden": list(self.hidden)}

    def init(self, rng):
        return glorot_init(self.layout, rng, _bias_names(self.layout))

    def forward(self, params, X):
        """Relaxed labels in ``[CLAMP, 1 - CLAMP]``, shape ``(B, L)``."""
        X = np.asarray(X, dtype=np.float64)
        _check_width(X, self.n_features, "inference network input")
        return ad.clip(ad.sigmoid(self.mlp.forward(params, X)), CLAMP, 1.0 - CLAMP)


class MLCEnergy:
    """``E(x, y) = y^T W b(x) + v^T sigmoid(M y)`` with an MLP feature map ``b``."""

    kind = "mlc-energy"

    def __init__(self, n_features, n_labels, feature_hidden=(), feature_dim=16, global_hidden=16):
        self.n_features = int(n_features)
        self.n_labels = int(n_labels)
        self.feature_hidden = tuple(int(h) for h in feature_hidden)
        self.feature_dim = int(feature_dim)
        self.global_hidden = int(global_hidden)
        self.feat = MLP((self.n_features, *self.feature_hidden, self.feature_dim), "feat")
        self.layout = Layout(self.feat.shapes() + [
            ("W", (self.n_labels, self.feature_dim)),
            ("M", (self.global_hidden, self.n_labels)),
            ("v", (self.global_hidden,)),
        ])

    def describe(self):
        return {"kind": self.kind, "n_features": self.n_features, "n_labels": self.n_labels,
                "feature_hidden": list(self.feature_hidden), "feature_dim": self.feature_dim,
                "global_hidden": self.global_hidden}

    def init(self, rng):
        return glorot_init(self.layout, rng, _bias_names(self.layout))

    def features(self, params, X):
        X = np.asarray(X, dtype=np.float64)
        _check_width(X, self.n_features, "energy input")
        return self.feat.forward(params, X)

    def global_term(self, params, Y):
        return ad.matmul(ad.sigmoid(ad.matmul(Y, ad.transpose(params["M"]))), params["v"])

    def energy(self, params, X, Y, feats=None):
        """Energies of shape ``(B,)`` for ``Y`` of shape ``(B, L)``, or ``(B, K)`` for ``(B, K, L)``."""
        Y = ad.const(Y)
        _check_width(Y.value, self.n_labels, "label")
        if feats is None:
            feats = self.features(params, X)
        unary = ad.matmul(feats, ad.transpose(params["W"]))
        if Y.ndim == 3:
            unary = unary.reshape(unary.shape[0], 1, self.n_labels)
        linear = ad.vsum(ad.mul(Y, unary), axis=-1)
        return linear + self.global_term(params, Y)


class SeqInferNet:
    """Windowed-embedding MLP producing a tag distribution per position."""

    kind = "seq-infer"

    def __init__(self, vocab_size, n_tags, embed_dim=16, hidden=(32,), radius=1):
        self.vocab_size = int(vocab_size)
        self.n_tags = int(n_tags)
        self.embed_dim = int(embed_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.radius = int(radius)
        width = (2 * self.radius + 1) * self.embed_dim
        self.mlp = MLP((width, *self.hidden, self.n_tags), "infer")
        self.layout = Layout([("infer.emb", (self.vocab_size, self.embed_dim))] + self.mlp.shapes())

    def describe(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, "n_tags": self.n_tags,
                "embed_dim": self.embed_dim, "hidden": list(self.hidden), "radius": self.radius}

    def init(self, rng):
        return glorot_init(self.layout, rng, _bias_names(self.layout))

    def forward(self, params, tokens):
        """Shape ``(T, L)``; each row is a clamped softmax."""
        ids = window_ids(tokens, self.radius)
        if ids.size and (ids.max() >= self.vocab_size or ids.min() < 0):
            raise ValueError(f"token id out of range for vocabulary of {self.vocab_size}")
        T = ids.shape[0]
        emb = ad.getitem(ad.const(params["infer.emb"]), ids).reshape(T, -1)
        return ad.clip(ad.softmax(self.mlp.forward(params, emb), axis=-1), CLAMP, 1.0 - CLAMP)


class SeqEnergy:
    """Linear-chain energy: per-position unary scores plus tag-transition terms.

    ``E = sum_t sum_j y[t, j] U_j . b(x, t) + sum_{t >= 2} y[t-1]^T W y[t]``.
    There is no virtual start tag.
    """

    kind = "seq-energy"

    def __init__(self, vocab_size, n_tags, embed_dim=16, feature_hidden=(), feature_dim=16, radius=1):
        self.vocab_size = int(vocab_size)
        self.n_tags = int(n_tags)
        self.embed_dim = int(embed_dim)
        self.feature_hidden = tuple(int(h) for h in feature_hidden)
        self.feature_dim = int(feature_dim)
        self.radius = int(radius)
        width = (2 * self.radius + 1) * self.embed_dim
        self.feat = MLP((width, *self.feature_hidden, self.feature_dim), "feat")
        self.layout = Layout([("emb", (self.vocab_size, self.embed_dim))] + self.feat.shapes() + [
            ("U", (self.n_tags, self.feature_dim)),
            ("W", (self.n_tags, self.n_tags)),
        ])

    def describe(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, "n_tags": self.n_tags,
                "embed_dim": self.embed_dim, "feature_hidden": list(self.feature_hidden),
                "feature_dim": self.feature_dim, "radius": self.radius}

    def init(self, rng):
        return glorot_init(self.layout, rng, _bias_names(self.layout))

    def features(self, params, tokens):
        ids = window_ids(tokens, self.radius)
        if ids.shape[0] == 0:
            raise ValueError("empty sequence")
        if ids.max() >= self.vocab_size or ids.min() < 0:
            raise ValueError(f"token id out of range for vocabulary of {self.vocab_size}")
        emb = ad.getitem(ad.const(params["emb"]), ids).reshape(ids.shape[0], -1)
        return self.feat.forward(params, emb)

    def energy(self, params, tokens, Y, feats=None):
        """Scalar for ``Y`` of shape ``(T, L)``; shape ``(K,)`` for ``(K, T, L)``."""
        Y = ad.const(Y)
        if Y.shape[-2] == 0:
            raise ValueError("empty sequence")
        _check_width(Y.value, self.n_tags, "tag")
        if feats is None:
            feats = self.features(params, tokens)
        if feats.shape[0] != Y.shape[-2]:
            raise ValueError(f"{feats.shape[0]} tokens but {Y.shape[-2]} label rows")
        unary_scores = ad.matmul(feats, ad.transpose(params["U"]))
        unary = ad.vsum(ad.vsum(ad.mul(Y, unary_scores), axis=-1), axis=-1)
        if Y.shape[-2] < 2:
            return unary
        if Y.ndim == 3:
            prev, nxt = Y[:, :-1, :], Y[:, 1:, :]
        else:
            prev, nxt = Y[:-1], Y[1:]
        pair = ad.vsum(ad.vsum(ad.mul(ad.matmul(prev, params["W"]), nxt), axis=-1), axis=-1)
        return unary + pair


def build(desc):
    """Rebuild a model from its ``describe()`` dict."""
    kinds = {cls.kind: cls for cls in (MLCInferNet, MLCEnergy, SeqInferNet, SeqEnergy)}
    desc = dict(desc)
    kind = desc.pop("kind")
    if kind not in kinds:
        raise ValueError(f"unknown model kind {kind!r}")
    return kinds[kind](**desc)


# Value-level helpers operating on ParamVectors.

def infer_forward(net, theta, x):
    """Relaxed prediction of ``net`` for one instance or a batch, as an array."""
    if isinstance(net, MLCInferNet):
        x = np.asarray(x, dtype=np.float64)
        out = net.forward(theta.unflatten(), np.atleast_2d(x)).value
        return out[0] if x.ndim == 1 else out
    return net.forward(theta.unflatten(), x).value


def mlc_energy(energy, phi, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("relaxed labels must lie in [0, 1]")
    out = energy.energy(phi.unflatten(), np.atleast_2d(x), ad.const(np.atleast_2d(y))).value
    return float(out[0]) if y.ndim == 1 else out


def seq_energy(energy, phi, tokens, y):
    out = energy.energy(phi.unflatten(), tokens, np.asarray(y, dtype=np.float64)).value
    return float(out) if out.ndim == 0 else out
