"""Oracle suite for the differentiation and hypergradient machinery.

Each check compares an engine quantity against an independent reference and
returns a :class:`CheckResult`. :func:`run_suite` runs them all; a single
``tolerance`` overrides every per-check threshold.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import SeqDataset, SeqExample
from .implicit import IhvpConfig, biased_grad_phi, implicit_grad_phi, neumann_ihvp
from .tasks import MLCBatch, MLCTask, QuadraticTask, SeqTask
from .tensor import (PHI, THETA, Layout, ParamVector, ScalarFn, cross_hvp,
                     finite_difference_grad, hvp, relative_error)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} error={self.error:.3e}  tol={self.tolerance:.1e}"


def _random_params(layout, rng, scale=0.5):
    return ParamVector(layout, rng.normal(scale=scale, size=layout.size))


def _seq_problem(rng, vocab=7, tags=3):
    task = SeqTask.build(vocab, tags, embed_dim=3, infer_hidden=(4,), feature_hidden=(), feature_dim=3)
    examples = [SeqExample(rng.integers(2, vocab, size=n), rng.integers(0, tags, size=n))
                for n in (3, 1)]
    data = SeqDataset(examples, {str(i): i for i in range(vocab)}, {str(t): t for t in range(tags)})
    return task, task.make_batch(data, [0, 1])


def _energy_fn(model, X, kind):
    """Energy summed over a batch as a function of (labels, phi)."""
    def build(theta, phi, b):
        if kind == "mlc":
            return ad.vsum(model.energy(phi, X, theta["y"]))
        return model.energy(phi, X, theta["y"])
    return build


def shipped_functions(rng):
    """``(name, fn, batch_factory)`` for every shipped objective.

    The energies are wrapped with the relaxed labels in the theta slot, so
    their label gradients are checked too; they take no batch.
    """
    task = MLCTask.build(4, 3, infer_hidden=(5,), feature_hidden=(4,), feature_dim=3, global_hidden=4)
    seq, _ = _seq_problem(rng)

    def mlc_batch(r, negatives=False):
        X = r.normal(size=(3, 4))
        Y = (r.random((3, 3)) < 0.5).astype(float)
        b = MLCBatch(X, Y)
        if negatives:
            b = replace(b, negatives=(r.random((3, 2, 3)) < 0.5).astype(float))
        return b

    def seq_batch(r, negatives=False):
        _, b = _seq_problem(r)
        if negatives:
            negs = tuple((np.eye(3)[r.integers(0, 3, size=(2, len(t)))]) for t in b.tokens)
            b = replace(b, negatives=negs)
        return b

    Xe = rng.normal(size=(2, 4))
    e_mlc = ScalarFn(_energy_fn(task.energy, Xe, "mlc"), Layout([("y", (2, 3))]),
                     task.phi_layout, "mlc_energy")
    toks = np.array([2, 5, 3, 4])
    e_seq = ScalarFn(_energy_fn(seq.energy, toks, "seq"), Layout([("y", (4, 3))]),
                     seq.phi_layout, "seq_energy")

    return [
        ("mbce", task.mle_fn(), lambda r: mlc_batch(r)),
        ("mlc_aux_loss", task.aux_fn(0.7), lambda r: mlc_batch(r)),
        ("mlc_ssvm_prim", task.prim_fn("ssvm", lam_rank=0.5), lambda r: mlc_batch(r)),
        ("mlc_cd_prim", task.prim_fn("cd", relaxed_negative=True), lambda r: mlc_batch(r, True)),
        ("seq_nll", seq.mle_fn(), lambda r: seq_batch(r)),
        ("seq_aux_loss", seq.aux_fn(0.7), lambda r: seq_batch(r)),
        ("seq_ssvm_prim", seq.prim_fn("ssvm", lam_rank=0.5), lambda r: seq_batch(r)),
        ("seq_cd_prim", seq.prim_fn("cd", relaxed_negative=True), lambda r: seq_batch(r, True)),
        ("mlc_energy", e_mlc, None),
        ("seq_energy", e_seq, None),
    ]


def check_gradients(rng, points=10, tolerance=1e-4):
    """Tape gradients of every shipped objective against central differences."""
    results = []
    for name, fn, make_batch in shipped_functions(rng):
        worst = 0.0
        for _ in range(points):
            if make_batch is None:
                theta = ParamVector(fn.theta_layout, rng.uniform(0.05, 0.95, fn.theta_layout.size))
                batch = None
            else:
                theta = _random_params(fn.theta_layout, rng)
                batch = make_batch(rng)
            phi = (_random_params(fn.phi_layout, rng) if fn.phi_layout is not None
                   else ParamVector(Layout([])))
            _, grads = fn.value_and_grad(theta, phi, batch)
            groups = (THETA,) if fn.phi_layout is None else (THETA, PHI)
            for group in groups:
                fd = finite_difference_grad(fn, group, theta, phi, batch)
                worst = max(worst, relative_error(grads[group], fd))
        results.append(CheckResult(f"grad/{name}", worst, tolerance))
    return results


def _quadratic_fn(A, B):
    """``0.5 theta^T A theta + theta^T B phi + 0.5 |phi|^2``."""
    n, m = B.shape
    layout_t = Layout([("t", (n,))])
    layout_p = Layout([("p", (m,))])

    def build(theta, phi, b):
        t, p = theta["t"], phi["p"]
        return (0.5 * ad.vsum(t * ad.matmul(t, A)) + ad.vsum(t * ad.matmul(p, ad.transpose(B)))
                + 0.5 * ad.vsum(p * p))
    return ScalarFn(build, layout_t, layout_p, "quadratic"), layout_t, layout_p


def check_hvp(rng, tolerance=1e-6):
    """Divided-difference products on a quadratic equal the exact ``A v`` and ``B^T w``."""
    n, m = 6, 4
    Q = rng.normal(size=(n, n))
    A = Q @ Q.T + np.eye(n)
    B = rng.normal(size=(n, m))
    f, lt, lp = _quadratic_fn(A, B)
    theta, phi = _random_params(lt, rng), _random_params(lp, rng)
    v, w = rng.normal(size=n), rng.normal(size=n)
    e1 = relative_error(hvp(f, THETA, theta, phi, v), A @ v)
    e2 = relative_error(cross_hvp(f, theta, phi, w), B.T @ w)
    return [CheckResult("hvp/quadratic", e1, tolerance),
            CheckResult("cross_hvp/quadratic", e2, tolerance)]


def check_neumann(rng, tolerance=1e-3):
    """Truncated series against a direct solve and the geometric closed form."""
    n = 10
    Q = rng.normal(size=(n, n))
    H = Q @ Q.T / n + 0.5 * np.eye(n)
    alpha = 1.0 / np.linalg.eigvalsh(H).max()
    g = rng.normal(size=n)
    w = neumann_ihvp(lambda p: H @ p, g, IhvpConfig(k=400, alpha=alpha, delta=0.0))
    e_solve = relative_error(w, np.linalg.solve(H, g))

    D = np.array([2.0, 4.0])
    w2 = neumann_ihvp(lambda p: D * p, np.ones(2), IhvpConfig(k=50, alpha=0.1, delta=0.0))
    e_closed = relative_error(w2, (1.0 - (1.0 - 0.1 * D) ** 51) / D)
    return [CheckResult("neumann/direct_solve", e_solve, tolerance),
            CheckResult("neumann/closed_form", e_closed, tolerance)]


def check_bilevel(rng, tolerance=1e-3, implicit_sign=1.0):
    """Quadratic bi-level family: total derivative equals ``M^T M phi``.

    Runs the fixed ``M = [[1, 2], [3, 4]]`` instance (answer ``[24, 34]``)
    and a random instance. ``implicit_sign`` injects a sign error for
    mutation testing.
    """
    results = []
    cases = [("bilevel/quadratic_24_34", np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(2))]
    M = rng.normal(size=(5, 3))
    cases.append(("bilevel/quadratic_random", M, rng.normal(size=3)))
    for name, M, phi0 in cases:
        task = QuadraticTask(M, phi0=phi0)
        theta = ParamVector(task.theta_layout, M @ phi0)
        phi = ParamVector(task.phi_layout, phi0)
        cfg = IhvpConfig(k=50, alpha=0.5, delta=0.0)
        rep = implicit_grad_phi(task.prim_fn(), task.aux_fn(), theta, phi, None, cfg,
                                implicit_sign=implicit_sign)
        results.append(CheckResult(name, relative_error(rep.total, M.T @ M @ phi0), tolerance))
    task = QuadraticTask(cases[0][1], phi0=np.ones(2))
    theta = ParamVector(task.theta_layout, cases[0][1] @ np.ones(2))
    phi = ParamVector(task.phi_layout, np.ones(2))
    biased = float(np.linalg.norm(biased_grad_phi(task.prim_fn(), theta, phi, None)))
    results.append(CheckResult("bilevel/biased_is_zero", biased, tolerance))
    return results


def run_suite(tolerance=None, seed=0, implicit_sign=1.0):
    """Run every check; ``tolerance`` replaces all default thresholds when given."""
    rng = np.random.default_rng(seed)

    def tol(default):
        return default if tolerance is None else tolerance

    results = []
    results += check_gradients(rng, tolerance=tol(1e-4))
    results += check_hvp(rng, tolerance=tol(1e-6))
    results += check_neumann(rng, tolerance=tol(1e-3))
    results += check_bilevel(rng, tolerance=tol(1e-3), implicit_sign=implicit_sign)
    return results
