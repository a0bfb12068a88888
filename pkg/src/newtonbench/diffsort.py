"""Differentiable sorting operators and the permutation cross-entropy loss.

Three relaxations of the sorting permutation matrix are provided:

* softsort_perm: row-softmax of negative distances to the descending-sorted
  vector, P_ij = softmax_j(-|sort_desc(y)_i - y_j| / tau).
* neuralsort_perm: row i = softmax(((n-1-2i) * y - A @ 1) / tau) with
  A_jk = |y_j - y_k|. This is the classical NeuralSort construction.
* dsn_perm: odd-even sorting network of n comparator layers. A comparator on
  wires (i, j) soft-swaps with weight s = CDF(beta * (v_i - v_j)) computed
  from the current values, so the network sorts ascending as beta grows. The
  product of the layer mixing matrices is doubly stochastic.

SoftSort and NeuralSort rows select the largest element first (descending
convention); the sorting-network product maps inputs to ascending order, and
ranking_loss reverses the target matrix for DSN methods so all four operators
are supervised by the same GroundTruthRanking.

All gradients are analytic reverse-mode, no autodiff framework involved.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NonFiniteResult, ShapeMismatch

DSN_FAMILIES = ("logistic", "cauchy")
METHODS = ("neuralsort", "softsort", "dsn_logistic", "dsn_cauchy")

PROB_CLAMP = 1e-12


@dataclass
class SortConfig:
    method: str
    tau: float = None
    beta: float = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown sort method {self.method!r}")
        if self.method in ("neuralsort", "softsort"):
            if self.tau is None:
                self.tau = 1.0 if self.method == "neuralsort" else 0.1
            if self.tau <= 0:
                raise ConfigError(f"tau must be > 0, got {self.tau}")
        else:
            if self.beta is None:
                self.beta = 10.0
            if self.beta <= 0:
                raise ConfigError(f"beta must be > 0, got {self.beta}")


@dataclass
class PermMatrix:
    n: int
    entries: np.ndarray

    def __array__(self, dtype=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass
class GroundTruthRanking:
    n: int
    order: tuple      # order[i] = index of the i-th largest element
    matrix: np.ndarray

    def matrix_ascending(self):
        # row i selects the i-th smallest element instead
        return self.matrix[::-1].copy()


def _check_vector(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 1:
        raise ShapeMismatch(f"expected a nonempty vector, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteResult("input vector has non-finite entries")
    return y


def _row_softmax(c):
    """Row softmax with a permutation-independent summation order.

    The denominator sums the shifted exponentials in value-sorted order, so
    reordering the entries of a row never changes the computed probabilities.
    """
    shifted = c - np.max(c, axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = np.sum(np.sort(e, axis=1), axis=1, keepdims=True)
    return e / denom


def _softmax_rows_backward(p, g_p):
    # rows are independent softmaxes: dL/dc = p * (g - sum(g*p))
    inner = np.sum(g_p * p, axis=1, keepdims=True)
    return p * (g_p - inner)


def truth_from_order(order):
    """GroundTruthRanking from a stored order tuple (largest first)."""
    order = tuple(int(i) for i in order)
    n = len(order)
    if sorted(order) != list(range(n)):
        raise ShapeMismatch(f"order {order} is not a permutation of 0..{n - 1}")
    q = np.zeros((n, n))
    q[np.arange(n), order] = 1.0
    return GroundTruthRanking(n=n, order=order, matrix=q)


def hard_rank(y):
    """Descending argsort with ties broken by lower index first."""
    y = _check_vector(y)
    n = y.shape[0]
    order = np.argsort(-y, kind="stable")
    q = np.zeros((n, n))
    q[np.arange(n), order] = 1.0
    return GroundTruthRanking(n=n, order=tuple(int(i) for i in order), matrix=q)


def _softsort_fwd(y, tau):
    n = y.shape[0]
    sorted_desc = np.sort(y)[::-1]
    diff = sorted_desc[:, None] - y[None, :]
    c = -np.abs(diff) / tau
    p = _row_softmax(c)
    return p, {"sign": np.sign(diff), "p": p, "tau": tau, "n": n}


def softsort_perm(y, tau):
    y = _check_vector(y)
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    p, _ = _softsort_fwd(y, tau)
    if not np.all(np.isfinite(p)):
        raise NonFiniteResult("softsort produced non-finite probabilities")
    return PermMatrix(n=y.shape[0], entries=p)


def _neuralsort_fwd(y, tau):
    n = y.shape[0]
    s = np.sign(y[:, None] - y[None, :])
    a_one = np.sum(np.abs(y[:, None] - y[None, :]), axis=1)
    coeff = (n - 1 - 2 * np.arange(n)).astype(np.float64)
    c = (coeff[:, None] * y[None, :] - a_one[None, :]) / tau
    p = _row_softmax(c)
    return p, {"p": p, "sign": s, "coeff": coeff, "tau": tau, "n": n}


def _neuralsort_bwd(aux, g_p):
    d_c = _softmax_rows_backward(aux["p"], g_p)
    s = aux["sign"]
    col = np.sum(d_c, axis=0)
    row_s = np.sum(s, axis=1)
    term1 = aux["coeff"] @ d_c - col * row_s
    term2 = col @ s
    return (term1 + term2) / aux["tau"]


def neuralsort_perm(y, tau):
    y = _check_vector(y)
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    p, _ = _neuralsort_fwd(y, tau)
    if not np.all(np.isfinite(p)):
        raise NonFiniteResult("neuralsort produced non-finite probabilities")
    return PermMatrix(n=y.shape[0], entries=p)


def _cdf_stay_pdf(family, x):
    """CDF(x), CDF(-x), and pdf(x) for the comparator family.

    The complement is evaluated as CDF(-x) directly instead of 1 - CDF(x);
    the subtraction would destroy the relative accuracy of the small tail,
    which matters because products of stay weights feed log-loss terms.
    """
    if family == "logistic":
        s = expit(x)
        c = expit(-x)
        return s, c, s * c
    if family == "cauchy":
        at = np.arctan(x) / np.pi
        return 0.5 + at, 0.5 - at, 1.0 / (np.pi * (1.0 + x * x))
    raise ConfigError(f"unknown comparator family {family!r}")


def _oddeven_layers(n):
    return [[(i, i + 1) for i in range(t % 2, n - 1, 2)] for t in range(n)]


def _dsn_fwd(y, beta, family):
    n = y.shape[0]
    v = y.copy()
    a = np.eye(n)
    trace = []
    for pairs in _oddeven_layers(n):
        m = np.eye(n)
        svals = []
        for i, j in pairs:
            s, stay, _ = _cdf_stay_pdf(family, beta * (v[i] - v[j]))
            m[i, i] = m[j, j] = stay
            m[i, j] = m[j, i] = s
            svals.append(s)
        trace.append({"pairs": pairs, "s": svals, "v_in": v, "m": m, "a_in": a})
        v = m @ v
        a = m @ a
    return a, {"trace": trace, "beta": beta, "family": family, "n": n}


def _dsn_bwd(aux, g_p):
    beta, family = aux["beta"], aux["family"]
    g_a = g_p.copy()
    g_v = np.zeros(aux["n"])
    for step in reversed(aux["trace"]):
        m, v_in, a_in = step["m"], step["v_in"], step["a_in"]
        # v_out = m @ v_in and a_out = m @ a_in both feed gradient into m
        g_m = g_a @ a_in.T + np.outer(g_v, v_in)
        g_a = m.T @ g_a
        g_v = m.T @ g_v
        for (i, j), s in zip(step["pairs"], step["s"]):
            d_s = -g_m[i, i] + g_m[i, j] + g_m[j, i] - g_m[j, j]
            _, _, pdf = _cdf_stay_pdf(family, beta * (v_in[i] - v_in[j]))
            pull = d_s * beta * pdf
            g_v[i] += pull
            g_v[j] -= pull
    return g_v


def dsn_perm(y, beta, family):
    y = _check_vector(y)
    if beta <= 0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    if family not in DSN_FAMILIES:
        raise ConfigError(f"unknown comparator family {family!r}")
    p, _ = _dsn_fwd(y, beta, family)
    return PermMatrix(n=y.shape[0], entries=p)


def _perm_forward(y, cfg):
    if cfg.method == "softsort":
        return _softsort_fwd(y, cfg.tau)
    if cfg.method == "neuralsort":
        return _neuralsort_fwd(y, cfg.tau)
    family = cfg.method.split("_", 1)[1]
    return _dsn_fwd(y, cfg.beta, family)


def _perm_backward(cfg, aux, g_p):
    if cfg.method == "softsort":
        d_c = _softmax_rows_backward(aux["p"], g_p)
        contrib = d_c * aux["sign"] / aux["tau"]
        grad = np.sum(contrib, axis=0)
        # gradient through the sorted vector: sorted_i = y[order[i]]
        order = aux["order"]
        np.add.at(grad, order, -np.sum(contrib, axis=1))
        return grad
    if cfg.method == "neuralsort":
        return _neuralsort_bwd(aux, g_p)
    return _dsn_bwd(aux, g_p)


def ranking_loss(y, truth, cfg):
    """Mean binary cross entropy between P(y) and the hard target matrix.

    Probabilities are clamped to [1e-12, 1 - 1e-12]; clamped entries carry
    zero gradient. The complement 1 - P_ij is evaluated as the sum of the
    other entries of row i (rows sum to one), which stays relatively
    accurate when P_ij saturates toward 1, unlike the direct subtraction.
    For DSN methods the target rows are reversed to match the ascending
    output convention of the sorting network.
    """
    y = _check_vector(y)
    n = y.shape[0]
    if truth.n != n:
        raise ShapeMismatch(f"ranking over {truth.n} elements, input has {n}")
    p, aux = _perm_forward(y, cfg)
    if cfg.method == "softsort":
        aux["order"] = np.argsort(-y, kind="stable")
    q = truth.matrix[::-1] if cfg.method.startswith("dsn") else truth.matrix

    p_c = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    comp = p @ (np.ones((n, n)) - np.eye(n))  # comp_ij = sum_{k != j} P_ik
    comp_c = np.maximum(comp, PROB_CLAMP)
    value = float(np.mean(-q * np.log(p_c) - (1.0 - q) * np.log(comp_c)))

    mask_p = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    g_direct = np.where(mask_p, -q / p_c, 0.0)
    # d(-log comp_ij)/dP_ab = -1/comp_ij for every b != j in row a
    r = np.where(comp > PROB_CLAMP, (1.0 - q) / comp_c, 0.0)
    g_comp = r.sum(axis=1, keepdims=True) - r
    g_p = (g_direct - g_comp) / (n * n)

    grad = _perm_backward(cfg, aux, g_p)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteResult("ranking loss produced non-finite values")
    return value, grad
