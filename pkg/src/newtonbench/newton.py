"""Locally quadratic replacement losses built from curvature information.

Given a batch of network outputs y_1..y_N and a loss with per-sample
gradients, this module computes target outputs

    z_i = y_i - (C + lam I)^{-1} grad_i

where C is either the batch-averaged loss Hessian or the empirical Fisher
matrix of the gradients, and lam >= 0 is a Tikhonov strength.  Training then
proceeds on the induced square loss 0.5 * ||z - y||^2, whose gradient steers
y_i toward z_i.  A single gradient descent step on that square loss equals a
damped Newton step on the original loss, which is the point: hard losses with
awkward curvature get replaced by a well-conditioned quadratic around the
current iterate.

Conventions shared with the rest of the package:
  * probe.value(Y) is the total loss over the batch (sum over rows),
  * probe.grad(Y) returns unscaled per-sample gradient rows (N x m),
  * probe.hessian(Y), when present, returns the batch-averaged m x m Hessian,
  * the 1/N mean reduction happens in net.backward, so newton_loss_eval also
    returns unscaled per-sample gradient rows.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import MissingHessian, NonFiniteResult, ShapeMismatch, SingularMatrix
from . import linalg
from . import net


@dataclass
class LossProbe:
    """Callbacks exposing a loss to the target constructors.

    value: Y (N x m) -> float, total loss of the batch.
    grad:  Y (N x m) -> N x m, row i is the gradient of sample i's loss
           with respect to y_i (no batch scaling).
    hessian: optional, Y (N x m) -> m x m batch-averaged Hessian.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def has_hessian(self) -> bool:
        return self.hessian is not None


@dataclass
class NewtonConfig:
    """Settings for building targets inside a training loop."""

    variant: str = "hessian"  # "hessian" | "fisher"
    lam: float = 0.1
    inversion: str = "direct"  # "direct" | "woodbury", fisher only
    hessian_source: str = "auto"  # "auto" | "analytic" | "finite_diff"

    def __post_init__(self):
        if self.variant not in ("hessian", "fisher"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.inversion not in ("direct", "woodbury"):
            raise ValueError(f"unknown inversion {self.inversion!r}")
        if self.hessian_source not in ("auto", "analytic", "finite_diff"):
            raise ValueError(f"unknown hessian_source {self.hessian_source!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")


@dataclass
class NewtonTarget:
    """Frozen targets z* for one batch.  No gradient flows through z_star."""

    z_star: np.ndarray  # N x m
    recipe: dict = field(default_factory=dict)


def _check_outputs(y_bar, name="y_bar"):
    y = np.asarray(y_bar, dtype=np.float64)
    if y.ndim != 2:
        raise ShapeMismatch(f"{name} must be N x m, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteResult(f"{name} contains non-finite entries")
    return y


def _checked_grads(probe, y):
    g = np.asarray(probe.grad(y), dtype=np.float64)
    if g.shape != y.shape:
        raise ShapeMismatch(
            f"probe.grad returned shape {g.shape}, expected {y.shape}"
        )
    if not np.all(np.isfinite(g)):
        raise NonFiniteResult("probe.grad returned non-finite entries")
    return g


def batch_hessian(probe, y_bar, source="auto", fd_step=None):
    """Batch-averaged m x m Hessian of the probed loss at y_bar.

    source "analytic" requires probe.hessian and raises MissingHessian
    otherwise; "finite_diff" differentiates the gradient rows sample by
    sample; "auto" prefers analytic and falls back to finite differences.
    The result is symmetrized exactly.
    """
    y = _check_outputs(y_bar)
    n, m = y.shape
    if source == "auto":
        source = "analytic" if probe.has_hessian else "finite_diff"
    if source == "analytic":
        if not probe.has_hessian:
            raise MissingHessian("probe has no Hessian callback")
        h = np.asarray(probe.hessian(y), dtype=np.float64)
        if h.shape != (m, m):
            raise ShapeMismatch(f"hessian shape {h.shape}, expected {(m, m)}")
    elif source == "finite_diff":
        # Each sample's gradient row depends only on its own output row
        # (per-sample losses), so one probe call perturbs coordinate j of
        # every row at once: 2m calls total instead of 2m per sample.
        step = fd_step
        if step is None:
            step = np.cbrt(np.finfo(np.float64).eps) * max(1.0, np.max(np.abs(y)))
        cols = np.empty((m, n, m))
        for j in range(m):
            yp = y.copy()
            yp[:, j] += step
            ym = y.copy()
            ym[:, j] -= step
            gp = np.asarray(probe.grad(yp), dtype=np.float64)
            gm = np.asarray(probe.grad(ym), dtype=np.float64)
            cols[j] = (gp - gm) / (2.0 * step)
        # cols[j, i, k] = d grad_k(y_i) / d y_ij; average the per-sample
        # Hessians H_i[k, j] over i
        h = np.mean(cols, axis=1).T
    else:
        raise ValueError(f"unknown hessian source {source!r}")
    if not np.all(np.isfinite(h)):
        raise NonFiniteResult("hessian contains non-finite entries")
    return 0.5 * (h + h.T)


def newton_target_hessian(y_bar, probe, lam, hessian_source="auto"):
    """Targets z_i = y_i - (H + lam I)^{-1} grad_i with the averaged Hessian.

    One factorization of H + lam I is shared across all rows.  Raises
    SingularMatrix when the regularized Hessian is not invertible and
    MissingHessian when hessian_source is "analytic" but the probe has none.
    """
    y = _check_outputs(y_bar)
    grads = _checked_grads(probe, y)
    h = batch_hessian(probe, y, source=hessian_source)
    solver = linalg.TikhonovSolver(h, lam)
    z = y - solver.solve_mat(grads.T).T
    return NewtonTarget(z, {"variant": "hessian", "lam": float(lam)})


def newton_target_fisher(y_bar, probe, lam, inversion="direct"):
    """Targets from the empirical Fisher F = (1/N) sum_i grad_i grad_i^T.

    F is rank-deficient whenever N < m, so lam > 0 is required.  The
    "woodbury" inversion routes each solve through the N x N identity
    (linalg.woodbury_solve); "direct" factorizes F + lam I once.
    """
    y = _check_outputs(y_bar)
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError("fisher variant requires lam > 0")
    grads = _checked_grads(probe, y)
    n = y.shape[0]
    if inversion == "direct":
        fisher = grads.T @ grads / n
        solver = linalg.TikhonovSolver(fisher, lam)
        steps = solver.solve_mat(grads.T).T
    elif inversion == "woodbury":
        steps = np.empty_like(grads)
        for i in range(n):
            steps[i] = linalg.woodbury_solve(grads, lam, grads[i])
    else:
        raise ValueError(f"unknown inversion {inversion!r}")
    z = y - steps
    return NewtonTarget(
        z, {"variant": "fisher", "lam": float(lam), "inversion": inversion}
    )


def newton_target(y_bar, probe, cfg: NewtonConfig) -> NewtonTarget:
    """Dispatch on cfg.variant; the entry point used by the trainers."""
    if cfg.variant == "hessian":
        return newton_target_hessian(
            y_bar, probe, cfg.lam, hessian_source=cfg.hessian_source
        )
    return newton_target_fisher(y_bar, probe, cfg.lam, inversion=cfg.inversion)


def newton_target_from_parts(y_bar, grads, hessian, lam):
    """Build targets from precomputed gradient rows and curvature matrix.

    Used when the loss is only available through stochastic estimates
    (smoothing module): the caller supplies grads (N x m) and an m x m
    curvature estimate, and the solve is identical to the analytic route.
    """
    y = _check_outputs(y_bar)
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != y.shape:
        raise ShapeMismatch(f"grads shape {g.shape}, expected {y.shape}")
    h = np.asarray(hessian, dtype=np.float64)
    m = y.shape[1]
    if h.shape != (m, m):
        raise ShapeMismatch(f"hessian shape {h.shape}, expected {(m, m)}")
    solver = linalg.TikhonovSolver(0.5 * (h + h.T), lam)
    z = y - solver.solve_mat(g.T).T
    return NewtonTarget(z, {"variant": "hessian", "lam": float(lam)})


def newton_loss_eval(y, target: NewtonTarget):
    """Value and per-sample gradient rows of the induced square loss.

    value = (1/N) sum_i 0.5 * ||z_i - y_i||^2, gradient row i = y_i - z_i.
    The rows are unscaled, matching the LossProbe convention; net.backward
    applies the 1/N mean reduction.
    """
    y = _check_outputs(y, name="y")
    z = np.asarray(target.z_star, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"target shape {z.shape}, expected {y.shape}")
    diff = y - z
    value = 0.5 * float(np.sum(diff * diff)) / y.shape[0]
    return value, diff


def newton_loss_probe(target: NewtonTarget) -> LossProbe:
    """Wrap frozen targets as a probe, e.g. to feed back into the target ops.

    The wrapped loss is quadratic with identity Hessian, so rebuilding
    targets from it at lam = 0 reproduces z_star.
    """
    z = np.asarray(target.z_star, dtype=np.float64)

    def value(y):
        d = np.asarray(y, dtype=np.float64) - z
        return 0.5 * float(np.sum(d * d))

    def grad(y):
        return np.asarray(y, dtype=np.float64) - z

    def hessian(y):
        return np.eye(z.shape[1])

    return LossProbe(value=value, grad=grad, hessian=hessian)


def inject_fisher(batch_grads, lam):
    """Whiten mean-reduced output gradients with their own second moment.

    For gradient rows g_i as produced by a mean-reduced backward pass
    (g_i = grad_i / N), returns rows of G (N G^T G + lam I)^{-1}.  Since
    N G^T G equals the empirical Fisher of the unscaled gradients, feeding
    the result into the same backward pass reproduces Fisher target training
    without ever forming targets.  Requires lam > 0.
    """
    g = np.asarray(batch_grads, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeMismatch(f"batch_grads must be N x m, got shape {g.shape}")
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError("inject_fisher requires lam > 0")
    if not np.all(np.isfinite(g)):
        raise NonFiniteResult("batch_grads contains non-finite entries")
    n = g.shape[0]
    solver = linalg.TikhonovSolver(n * (g.T @ g), lam)
    return solver.solve_mat(g.T).T


def _clone_and_set(model, flat):
    clone = net.clone_model(model)
    net.set_flat_params(clone, flat)
    return clone


def split_step_check_gd(model, batch, probe, eta):
    """Compare direct GD on loss(f(x)) against the z-then-theta split.

    Direct path: one SGD step with the probe's output gradients.  Split
    path: unit step z = y - grad, then one SGD step on the square loss
    0.5 * ||z - y||^2 toward the frozen z.  The two parameter vectors agree
    up to rounding; returns {"max_param_deviation": ...}.
    """
    theta0 = net.get_flat_params(model)

    direct = _clone_and_set(model, theta0)
    y, tape = net.forward(direct, batch)
    grads = net.backward(direct, tape, probe.grad(y))
    net.optimizer_step(net.OptimizerState.create("sgd", eta, direct), direct, grads)

    split = _clone_and_set(model, theta0)
    y2, tape2 = net.forward(split, batch)
    z = y2 - probe.grad(y2)  # unit z-space step
    grads2 = net.backward(split, tape2, y2 - z)
    net.optimizer_step(net.OptimizerState.create("sgd", eta, split), split, grads2)

    dev = np.max(
        np.abs(net.get_flat_params(direct) - net.get_flat_params(split))
    )
    return {"max_param_deviation": float(dev)}


def _trainable_mask(model, trainable):
    """Boolean mask over the flat parameter vector."""
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(np.full(w.size, True))
        parts.append(np.full(b.size, trainable == "all"))
    return np.concatenate(parts)


def split_step_check_newton(model, x, probe, eta, trainable="all"):
    """Compare a damped Newton step in theta against the z-then-theta split.

    Only valid for scalar model output (m = 1) and a single input point.
    Second derivatives with respect to the parameters are taken by central
    finite differences of the backward pass, on both paths.  The z-space
    Newton step divides by the loss curvature, so a flat probe raises
    SingularMatrix; so does a parameter Hessian without invertible
    structure on either path.  trainable="weights" freezes the biases,
    which keeps the parameter Hessian full rank for models that are linear
    in their parameters (a rank-one Hessian otherwise).
    Returns {"max_param_deviation": ...}.
    """
    inputs = np.asarray(x, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.ndim != 2 or inputs.shape[0] != 1:
        raise ShapeMismatch("newton split check wants a single input point")
    if model.sizes[-1] != 1:
        raise ShapeMismatch("newton split check wants scalar model output")
    if trainable not in ("all", "weights"):
        raise ValueError(f"unknown trainable selector {trainable!r}")
    mask = _trainable_mask(model, trainable)
    theta_full = net.get_flat_params(model)
    theta0 = theta_full[mask]

    def theta_grad(flat, out_grad_fn):
        full = theta_full.copy()
        full[mask] = flat
        work = _clone_and_set(model, full)
        y, tape = net.forward(work, inputs)
        grads = net.backward(work, tape, out_grad_fn(y))
        return net.flat_grads(grads)[mask]

    def newton_step(out_grad_fn):
        g = theta_grad(theta0, out_grad_fn)
        h = linalg.finite_diff_hessian(
            lambda flat: theta_grad(flat, out_grad_fn), theta0
        )
        return theta0 - eta * linalg.TikhonovSolver(h, 0.0).solve(g)

    theta_direct = newton_step(probe.grad)

    base = _clone_and_set(model, theta_full)
    y0, _ = net.forward(base, inputs)
    curv = batch_hessian(probe, y0)[0, 0]
    if curv == 0.0 or not np.isfinite(curv):
        raise SingularMatrix("flat probe: z-space Newton step undefined")
    z = y0 - probe.grad(y0) / curv
    theta_split = newton_step(lambda y: y - z)

    dev = np.max(np.abs(theta_direct - theta_split))
    return {"max_param_deviation": float(dev)}
