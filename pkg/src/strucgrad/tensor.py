"""Parameter storage, differentiable scalar objectives and Hessian-vector products.

Vectors and matrices are plain float64 numpy arrays. Parameters live in a
:class:`ParamVector`, a flat buffer with a named segment table. Objectives
are :class:`ScalarFn` objects evaluated on an inference-network parameter
group ``theta`` and an energy parameter group ``phi``.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

THETA = "theta"
PHI = "phi"
GROUPS = (THETA, PHI)


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value.

    ``diagnostics`` carries whatever context the raising site had (perturbed
    point norms, step sizes, iteration counters).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))


class Layout:
    """Ordered, disjoint segments covering a flat buffer exactly."""

    def __init__(self, shapes):
        segments = []
        offset = 0
        for name, shape in shapes:
            shape = tuple(int(s) for s in shape)
            if any(s < 0 for s in shape):
                raise ValueError(f"negative dimension in segment {name!r}: {shape}")
            seg = Segment(name, offset, shape)
            segments.append(seg)
            offset += seg.size
        names = [s.name for s in segments]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate segment names: {names}")
        self.segments = tuple(segments)
        self.size = offset
        self._by_name = {s.name: s for s in segments}

    def __eq__(self, other):
        return isinstance(other, Layout) and self.segments == other.segments

    def __hash__(self):
        return hash(self.segments)

    def __repr__(self):
        return f"Layout({[(s.name, s.shape) for s in self.segments]})"

    def __contains__(self, name):
        return name in self._by_name

    def __getitem__(self, name):
        return self._by_name[name]

    def names(self):
        return [s.name for s in self.segments]

    def to_list(self):
        return [[s.name, list(s.shape)] for s in self.segments]

    @classmethod
    def from_list(cls, items):
        return cls([(name, tuple(shape)) for name, shape in items])


EMPTY_LAYOUT = Layout([])


class ParamVector:
    """Flat float64 parameter buffer with a named segment layout.

    Instances are read-only; updates produce new vectors via
    :meth:`with_values` or :meth:`add`.
    """

    def __init__(self, layout, values=None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.size)
        values = np.array(values, dtype=np.float64).reshape(-1)
        if values.size != layout.size:
            raise ValueError(
                f"buffer has {values.size} values but layout needs {layout.size}")
        values.flags.writeable = False
        self.values = values

    def __len__(self):
        return self.layout.size

    def __repr__(self):
        return f"ParamVector({self.layout.names()}, size={self.layout.size})"

    def __getitem__(self, name):
        seg = self.layout[name]
        return self.values[seg.offset:seg.offset + seg.size].reshape(seg.shape)

    def flatten(self):
        return self.values.copy()

    def unflatten(self):
        return {name: self[name].copy() for name in self.layout.names()}

    @classmethod
    def from_arrays(cls, layout, arrays):
        missing = set(layout.names()) - set(arrays)
        extra = set(arrays) - set(layout.names())
        if missing or extra:
            raise ValueError(f"segment mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        flat = np.empty(layout.size)
        for seg in layout.segments:
            arr = np.asarray(arrays[seg.name], dtype=np.float64)
            if arr.shape != seg.shape:
                raise ValueError(f"segment {seg.name!r} expects {seg.shape}, got {arr.shape}")
            flat[seg.offset:seg.offset + seg.size] = arr.reshape(-1)
        return cls(layout, flat)

    def with_values(self, values):
        return ParamVector(self.layout, values)

    def add(self, delta, scale=1.0):
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != self.values.shape:
            raise ValueError(f"update of shape {delta.shape} for buffer {self.values.shape}")
        return ParamVector(self.layout, self.values + scale * delta)

    def norm(self):
        return float(np.linalg.norm(self.values))


def empty_params():
    return ParamVector(EMPTY_LAYOUT)


def _leaves(p):
    return {seg.name: ad.Var(p[seg.name]) for seg in p.layout.segments}


def _collect(p, leaves):
    out = np.zeros(p.layout.size)
    for seg in p.layout.segments:
        g = leaves[seg.name].grad
        if g is not None:
            out[seg.offset:seg.offset + seg.size] = g.reshape(-1)
    return out


class ScalarFn:
    """A differentiable scalar objective ``f(theta, phi, batch)``.

    ``build(theta, phi, batch)`` receives dicts mapping segment names to
    tape variables and must return a scalar :class:`~strucgrad.autodiff.Var`.
    ``theta_layout``/``phi_layout`` declare the expected parameter layouts;
    passing parameters with a different layout is an error.
    """

    def __init__(self, build, theta_layout=None, phi_layout=None, name="f"):
        self.build = build
        self.theta_layout = theta_layout
        self.phi_layout = phi_layout
        self.name = name

    def __repr__(self):
        return f"ScalarFn({self.name})"

    def _check(self, theta, phi):
        for label, p, layout in ((THETA, theta, self.theta_layout), (PHI, phi, self.phi_layout)):
            if layout is not None and p.layout != layout:
                raise ValueError(
                    f"{self.name}: {label} layout mismatch, expected {layout!r}, got {p.layout!r}")

    def __call__(self, theta, phi, batch=None):
        self._check(theta, phi)
        out = self.build(_leaves(theta), _leaves(phi), batch)
        return float(ad.const(out).value)

    def value_and_grad(self, theta, phi, batch=None):
        """Return ``(f, {"theta": df/dtheta, "phi": df/dphi})`` as flat vectors."""
        self._check(theta, phi)
        lt, lp = _leaves(theta), _leaves(phi)
        out = ad.const(self.build(lt, lp, batch))
        if out.value.size != 1:
            raise ValueError(f"{self.name} returned shape {out.value.shape}, expected a scalar")
        out.backward()
        return float(out.value), {THETA: _collect(theta, lt), PHI: _collect(phi, lp)}


def _check_group(group):
    if group not in GROUPS:
        raise ValueError(f"group must be one of {GROUPS}, got {group!r}")


def grad(f, group, theta, phi, batch=None):
    """Gradient of ``f`` wrt one parameter group, as a flat vector."""
    _check_group(group)
    return f.value_and_grad(theta, phi, batch)[1][group]


def _step(v, eps):
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return eps / max(1.0, float(np.linalg.norm(v)))


def _perturb(theta, phi, group, direction, h):
    if group == THETA:
        return theta.add(direction, h), phi
    return theta, phi.add(direction, h)


def hvp(f, group, theta, phi, v, batch=None, eps=1e-3):
    """Central divided-difference Hessian-vector product for one group.

    ``(grad f(p + h v) - grad f(p - h v)) / (2 h)`` with ``h = eps / max(1, |v|)``.
    """
    _check_group(group)
    base = theta if group == THETA else phi
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (len(base),):
        raise ValueError(f"direction has shape {v.shape}, {group} has {len(base)} entries")
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite direction in hvp", group=group)
    if not np.any(v):
        return np.zeros_like(v)
    h = _step(v, eps)
    plus = grad(f, group, *_perturb(theta, phi, group, v, h), batch)
    minus = grad(f, group, *_perturb(theta, phi, group, v, -h), batch)
    with np.errstate(invalid="ignore", over="ignore"):
        out = (plus - minus) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NumericalError(
            "non-finite Hessian-vector product", fn=f.name, group=group, step=h,
            point_norm=base.norm(), direction_norm=float(np.linalg.norm(v)),
            grad_plus_finite=bool(np.all(np.isfinite(plus))),
            grad_minus_finite=bool(np.all(np.isfinite(minus))))
    return out


def cross_hvp(f, theta, phi, w, batch=None, eps=1e-3):
    """Mixed product ``C w`` with ``C[i, j] = d2 f / dphi_i dtheta_j``.

    Perturbs theta along ``w`` and differences the phi-gradient, so the result
    has phi's length.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (len(theta),):
        raise ValueError(f"direction has shape {w.shape}, theta has {len(theta)} entries")
    if not np.all(np.isfinite(w)):
        raise NumericalError("non-finite direction in cross_hvp")
    if not np.any(w):
        return np.zeros(len(phi))
    h = _step(w, eps)
    plus = grad(f, PHI, theta.add(w, h), phi, batch)
    minus = grad(f, PHI, theta.add(w, -h), phi, batch)
    with np.errstate(invalid="ignore", over="ignore"):
        out = (plus - minus) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NumericalError(
            "non-finite cross Hessian-vector product", fn=f.name, step=h,
            theta_norm=theta.norm(), phi_norm=phi.norm(),
            direction_norm=float(np.linalg.norm(w)))
    return out


def finite_difference_grad(f, group, theta, phi, batch=None, h=1e-6):
    """Central finite-difference gradient, coordinate by coordinate.

    Slow; used only as the independent oracle for the gradient contract.
    """
    _check_group(group)
    base = theta if group == THETA else phi
    out = np.zeros(len(base))
    for i in range(len(base)):
        e = np.zeros(len(base))
        e[i] = 1.0
        fp = f(*_perturb(theta, phi, group, e, h), batch)
        fm = f(*_perturb(theta, phi, group, e, -h), batch)
        out[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / denom
