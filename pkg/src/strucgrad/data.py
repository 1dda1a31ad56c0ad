"""Datasets: the sparse multi-label text format, CoNLL columns, and a synthetic
generator with planted label couplings.

Sparse multi-label format (UTF-8, LF line endings)::

    N d L
    <labels> <i>:<v> <i>:<v> ...

``labels`` is a comma-separated list of 0-based label indices (it may be
absent), followed by 0-based feature indices in strictly increasing order.
"""

from dataclasses import dataclass, field

import numpy as np

from .models import PAD_ID, UNK_ID


class FormatError(ValueError):
    """Malformed input file; the message carries the location."""


@dataclass(frozen=True)
class MLCExample:
    indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    def dense(self, n_features):
        x = np.zeros(n_features)
        x[self.indices] = self.values
        return x


@dataclass
class MLCDataset:
    examples: list
    n_features: int
    n_labels: int
    _X: np.ndarray = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.examples)

    def subset(self, idx):
        return MLCDataset([self.examples[i] for i in idx], self.n_features, self.n_labels)

    @property
    def X(self):
        if self._X is None:
            X = np.zeros((len(self.examples), self.n_features))
            for i, ex in enumerate(self.examples):
                X[i, ex.indices] = ex.values
            self._X = X
        return self._X

    @property
    def Y(self):
        if not self.examples:
            return np.zeros((0, self.n_labels))
        return np.stack([ex.labels for ex in self.examples])

    @classmethod
    def from_arrays(cls, X, Y):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError(f"need X (N, d) and Y (N, L); got {X.shape} and {Y.shape}")
        if not np.all((Y == 0) | (Y == 1)):
            raise ValueError("labels must be binary")
        examples = []
        for x, y in zip(X, Y):
            idx = np.flatnonzero(x)
            examples.append(MLCExample(idx, x[idx].copy(), y.copy()))
        return cls(examples, X.shape[1], Y.shape[1])


@dataclass(frozen=True)
class SeqExample:
    tokens: np.ndarray
    tags: np.ndarray
    extra: tuple = ()

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags differ in length")
        if len(self.tokens) == 0:
            raise ValueError("empty sequence")


@dataclass
class SeqDataset:
    examples: list
    vocab: dict
    tagset: dict

    def __len__(self):
        return len(self.examples)

    def subset(self, idx):
        return SeqDataset([self.examples[i] for i in idx], self.vocab, self.tagset)

    @property
    def n_tags(self):
        return len(self.tagset)

    @property
    def vocab_size(self):
        return len(self.vocab)


def _parse_header(line, path):
    parts = line.split()
    if len(parts) != 3:
        raise FormatError(f"{path}:1: header must be 'N d L', got {line!r}")
    try:
        n, d, L = (int(p) for p in parts)
    except ValueError:
        raise FormatError(f"{path}:1: header must hold three integers, got {line!r}") from None
    if n < 0 or d < 1 or L < 1:
        raise FormatError(f"{path}:1: invalid header sizes N={n} d={d} L={L}")
    return n, d, L


def _parse_mlc_line(line, lineno, path, d, L):
    tokens = line.split()
    label_field = ""
    if tokens and ":" not in tokens[0]:
        label_field, tokens = tokens[0], tokens[1:]
    labels = np.zeros(L)
    if label_field:
        seen = set()
        for item in label_field.split(","):
            try:
                j = int(item)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad label {item!r}") from None
            if j < 0 or j >= L:
                raise FormatError(f"{path}:{lineno}: label index {j} outside [0, {L})")
            if j in seen:
                raise FormatError(f"{path}:{lineno}: duplicate label {j}")
            seen.add(j)
            labels[j] = 1.0
    indices, values = [], []
    for tok in tokens:
        key, sep, val = tok.partition(":")
        try:
            i, v = int(key), float(val)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad feature {tok!r}") from None
        if not sep or not np.isfinite(v):
            raise FormatError(f"{path}:{lineno}: bad feature {tok!r}")
        if i < 0 or i >= d:
            raise FormatError(f"{path}:{lineno}: feature index {i} outside [0, {d})")
        if indices and i == indices[-1]:
            raise FormatError(f"{path}:{lineno}: duplicate feature index {i}")
        if indices and i < indices[-1]:
            raise FormatError(f"{path}:{lineno}: feature indices not increasing at {i}")
        indices.append(i)
        values.append(v)
    return MLCExample(np.array(indices, dtype=np.int64), np.array(values), labels)


def parse_mlc(text, path="<string>"):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty file")
    n, d, L = _parse_header(lines[0], path)
    examples = [_parse_mlc_line(line, k + 2, path, d, L) for k, line in enumerate(lines[1:])]
    if len(examples) != n:
        raise FormatError(f"{path}: header announces {n} examples, found {len(examples)}")
    return MLCDataset(examples, d, L)


def load_mlc(path):
    with open(path, encoding="utf-8", newline="\n") as fh:
        return parse_mlc(fh.read(), str(path))


def format_mlc(dataset):
    out = [f"{len(dataset)} {dataset.n_features} {dataset.n_labels}"]
    for ex in dataset.examples:
        labels = ",".join(str(j) for j in np.flatnonzero(ex.labels))
        feats = " ".join(f"{i}:{v!r}" for i, v in zip(ex.indices.tolist(), ex.values.tolist()))
        out.append(" ".join(p for p in (labels, feats) if p))
    return "\n".join(out) + "\n"


def save_mlc(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_mlc(dataset))


def parse_conll(text, path="<string>", vocab=None, tagset=None):
    """Parse whitespace-separated columns (token first, tag last).

    Sentences are separated by blank lines; ``-DOCSTART-`` lines are document
    markers and are dropped. With ``vocab`` given, unseen tokens map to UNK
    and the vocabulary is not extended; with ``tagset`` given, unseen tags
    are an error.
    """
    grow_vocab = vocab is None
    grow_tags = tagset is None
    vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID} if vocab is None else dict(vocab)
    tagset = {} if tagset is None else dict(tagset)
    examples = []
    n_cols = None
    current = []

    def flush():
        if current:
            toks = np.array([t for t, _, _ in current], dtype=np.int64)
            tags = np.array([g for _, g, _ in current], dtype=np.int64)
            extra = tuple(e for _, _, e in current)
            examples.append(SeqExample(toks, tags, extra))
            current.clear()

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        cols = line.split()
        if cols[0] == "-DOCSTART-":
            flush()
            continue
        if n_cols is None:
            if len(cols) < 2:
                raise FormatError(f"{path}:{lineno}: need at least token and tag columns")
            n_cols = len(cols)
        if len(cols) != n_cols:
            raise FormatError(f"{path}:{lineno}: expected {n_cols} columns, found {len(cols)}")
        token, tag = cols[0], cols[-1]
        if token not in vocab:
            if grow_vocab:
                vocab[token] = len(vocab)
        tok_id = vocab.get(token, UNK_ID)
        if tag not in tagset:
            if not grow_tags:
                raise FormatError(f"{path}:{lineno}: unknown tag {tag!r}")
            tagset[tag] = len(tagset)
        current.append((tok_id, tagset[tag], tuple(cols[1:-1])))
    flush()
    if not examples:
        raise FormatError(f"{path}: no sentences")
    return SeqDataset(examples, vocab, tagset)


def load_conll(path, vocab=None, tagset=None):
    with open(path, encoding="utf-8", newline="\n") as fh:
        return parse_conll(fh.read(), str(path), vocab, tagset)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the planted-coupling multi-label generator.

    Labels follow ``p(y | x) ~ exp(y^T (W x + c) + y^T J y)`` with ``x``
    standard normal, sampled by Gibbs sweeps. The intercept ``c`` defaults to
    zero.
    """

    n_labels: int
    n_features: int
    n_examples: int
    coupling: np.ndarray
    weights: np.ndarray
    sweeps: int = 20
    seed: int = 0
    bias: np.ndarray = None

    def __post_init__(self):
        if self.n_labels < 1 or self.n_features < 1 or self.n_examples < 1:
            raise ValueError("n_labels, n_features and n_examples must be positive")
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")
        J = np.asarray(self.coupling, dtype=np.float64)
        W = np.asarray(self.weights, dtype=np.float64)
        if J.shape != (self.n_labels, self.n_labels):
            raise ValueError(f"coupling must be {self.n_labels}x{self.n_labels}")
        if not np.array_equal(J, J.T) or np.any(np.diag(J) != 0):
            raise ValueError("coupling must be symmetric with zero diagonal")
        if W.shape != (self.n_labels, self.n_features):
            raise ValueError(f"weights must be {self.n_labels}x{self.n_features}")
        if self.bias is not None and np.shape(self.bias) != (self.n_labels,):
            raise ValueError(f"bias must have length {self.n_labels}")

    @property
    def intercept(self):
        return np.zeros(self.n_labels) if self.bias is None else np.asarray(self.bias, dtype=np.float64)

    @classmethod
    def planted(cls, n_labels, n_features, n_examples, seed=0, strength=2.0,
                weight_scale=2.0, sweeps=20, balanced=True):
        """Couple labels ``(0, 1), (2, 3), ...`` with ``strength``; random feature weights.

        ``balanced`` sets the intercept of coupled labels to ``-strength`` so a
        label is as likely on as off when the features are neutral.
        """
        if n_labels < 1 or n_features < 1:
            raise ValueError("n_labels and n_features must be positive")
        J = np.zeros((n_labels, n_labels))
        for i in range(0, n_labels - 1, 2):
            J[i, i + 1] = J[i + 1, i] = strength
        rng = np.random.default_rng([seed, 1])
        W = rng.standard_normal((n_labels, n_features)) * weight_scale / np.sqrt(n_features)
        bias = -J.sum(axis=1) if balanced else None
        return cls(n_labels, n_features, n_examples, J, W, sweeps, seed, bias)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def gen_synth(spec):
    rng = np.random.default_rng([spec.seed, 2])
    J = np.asarray(spec.coupling, dtype=np.float64)
    X = rng.standard_normal((spec.n_examples, spec.n_features))
    field_x = X @ np.asarray(spec.weights).T + spec.intercept
    Y = (rng.random(field_x.shape) < _sigmoid(field_x)).astype(np.float64)
    for _ in range(spec.sweeps):
        for j in range(spec.n_labels):
            z = field_x[:, j] + 2.0 * (Y @ J[:, j])
            Y[:, j] = (rng.random(spec.n_examples) < _sigmoid(z)).astype(np.float64)
    return MLCDataset.from_arrays(X, Y)


def split(dataset, fractions, seed=0):
    """Shuffle with ``seed`` and cut into (train, valid, test)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("need three non-negative fractions")
    total = sum(fractions)
    if total > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {total} > 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    if abs(total - 1.0) <= 1e-9:
        n_train = n - n_valid - n_test
    else:
        n_train = int(round(fractions[0] * n))
    if n_train < 0 or n_train + n_valid + n_test > n:
        raise ValueError("fractions do not fit the dataset size")
    cuts = np.cumsum([n_train, n_valid, n_test])
    parts = np.split(order, cuts)[:3]
    return tuple(dataset.subset(sorted(p.tolist())) for p in parts)


def cooccurrence(dataset):
    """Counts of label pairs appearing together, diagonal zeroed."""
    Y = dataset.Y if isinstance(dataset, MLCDataset) else np.asarray(dataset, dtype=np.float64)
    C = Y.T @ Y
    np.fill_diagonal(C, 0.0)
    return C
