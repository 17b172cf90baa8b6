"""Closed-form capacity and accuracy for one-step-trained two-layer networks.

The Gaussian-equivalence route: activation moments (gamma_1, gamma_2) linearize
the random features, Marchenko-Pastur expectations over the initial weight
spectrum give theta_1/theta_2, the teacher link gives theta_3/theta_4, and the
whole bundle collapses into a single effective noise level tau.  Labels seen
through tau-smoothed eyes feed a storage-capacity minimization and a
prediction-accuracy integral, both evaluated by deterministic quadrature.

Also here: the exact separability probability for points in general position,
and the finite-size one-step gradient experiment used to validate the
formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr, roots_hermitenorm

from .activations import get_activation
from .model import ManifoldEnsemble, RngStream, build_ensemble

__all__ = [
    "ActivationMoments",
    "GaussEquivParams",
    "LabelFunction",
    "logistic_label",
    "constant_label",
    "cover_prob",
    "activation_moments",
    "mp_expectation",
    "theta_params",
    "tau_of",
    "effective_label_fn",
    "gauss_equiv_params",
    "capacity_theory",
    "accuracy_theory",
    "OneStepResult",
    "run_one_step",
    "one_step_experiment",
]

DEFAULT_QUAD_ORDER = 256


# ---------------------------------------------------------------------------
# label functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelFunction:
    """Teacher link F: R -> [0, 1]; P[y = +1 | margin g] = F(g)."""

    name: str
    fn: callable
    params: dict

    def __call__(self, x):
        return self.fn(x)


def logistic_label(gain: float = 4.0) -> LabelFunction:
    def fn(x):
        return 1.0 / (1.0 + np.exp(-gain * np.asarray(x, dtype=np.float64)))

    return LabelFunction("logistic", fn, {"gain": gain})


def constant_label(p: float = 0.5) -> LabelFunction:
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")

    def fn(x):
        return np.full_like(np.asarray(x, dtype=np.float64), p)

    return LabelFunction("constant", fn, {"p": p})


# ---------------------------------------------------------------------------
# Cover's separability probability
# ---------------------------------------------------------------------------

def cover_prob(N: int, P: int) -> float:
    """Probability that P random-labeled points in general position in R^N separate.

    Exact 2^{1-P} * sum_{k<N} C(P-1, k); evaluated in log-space once exact
    rational arithmetic would overflow a float.
    """
    if N < 1 or P < 1:
        raise ValueError("N and P must be >= 1")
    if P <= N:
        return 1.0
    if P <= 1030:
        total = sum(math.comb(P - 1, k) for k in range(min(N, P)))
        return float(Fraction(total, 2 ** (P - 1)))
    # log-space tail sum
    logs = [
        math.lgamma(P) - math.lgamma(k + 1) - math.lgamma(P - k)
        for k in range(min(N, P))
    ]
    m = max(logs)
    log_sum = m + math.log(sum(math.exp(v - m) for v in logs))
    return math.exp(log_sum - (P - 1) * math.log(2.0))


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _gh_nodes(order: int):
    x, w = roots_hermitenorm(order)
    return x, w / np.sqrt(2.0 * np.pi)


def gaussian_expectation(fn, order: int = DEFAULT_QUAD_ORDER) -> float:
    """E[fn(G)] for standard normal G by Gauss-Hermite quadrature."""
    x, w = _gh_nodes(order)
    vals = np.asarray(fn(x), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite integrand values on quadrature nodes")
    return float(w @ vals)


# ---------------------------------------------------------------------------
# activation moments and the Marchenko-Pastur expectation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationMoments:
    """gamma1 = E[G sigma(G)], gamma2_sq = E[sigma(G)^2] - gamma1^2.

    gamma_star_sq is the residual feature variance used by the accuracy
    formula; in the Gaussian-equivalence linearization it equals gamma2_sq.
    """

    gamma1: float
    gamma2_sq: float

    @property
    def gamma_star_sq(self) -> float:
        return self.gamma2_sq


def activation_moments(activation, quadrature_order: int = DEFAULT_QUAD_ORDER) -> ActivationMoments:
    act = get_activation(activation)
    g1 = gaussian_expectation(lambda x: x * act(x), quadrature_order)
    m2 = gaussian_expectation(lambda x: act(x) ** 2, quadrature_order)
    g2sq = m2 - g1 * g1
    if g2sq < -1e-12:
        raise ValueError(f"negative gamma2^2 = {g2sq}; inconsistent moments")
    return ActivationMoments(g1, max(g2sq, 0.0))


def mp_expectation(g, psi1: float, epsabs: float = 1e-12, epsrel: float = 1e-12) -> float:
    """E[g(X)] for X distributed as the limiting spectrum of W0 W0^T.

    W0 is N x d with N(0, 1/N) entries and psi1 = N/d; the law is the
    Marchenko-Pastur distribution of ratio psi1 scaled by 1/psi1, including
    an atom at zero of mass max(0, 1 - 1/psi1) once the matrix is
    rank-deficient.  The mean is 1/psi1.
    """
    if psi1 <= 0:
        raise ValueError("psi1 must be positive")
    sq = np.sqrt(psi1)
    a, b = (1.0 - sq) ** 2, (1.0 + sq) ** 2

    def density_part(y):
        return np.sqrt((b - y) * (y - a)) / (2.0 * np.pi * psi1 * y)

    if a < 1e-12:
        # square-root substitution y = t^2 removes the 1/sqrt(y) edge at psi1 = 1
        def integrand(t):
            y = t * t
            return g(y / psi1) * np.sqrt(b - y) / (np.pi * psi1)

        val, err = quad(integrand, 0.0, np.sqrt(b), epsabs=epsabs, epsrel=epsrel, limit=200)
    else:
        def integrand(y):
            return g(y / psi1) * density_part(y)

        val, err = quad(integrand, a, b, epsabs=epsabs, epsrel=epsrel, limit=200)
    if not np.isfinite(val):
        raise ValueError("Marchenko-Pastur quadrature failed to converge")
    atom = max(0.0, 1.0 - 1.0 / psi1)
    if atom > 0:
        val += atom * float(g(0.0))
    return float(val)


# ---------------------------------------------------------------------------
# theta / tau algebra
# ---------------------------------------------------------------------------

def theta_params(moments: ActivationMoments, psi1: float, psi2: float, F: LabelFunction, quadrature_order: int = DEFAULT_QUAD_ORDER):
    """(theta1, theta2, theta3, theta4) for the Gaussian-equivalence formulas."""
    if psi2 <= 0:
        raise ValueError("psi2 must be positive")
    g1sq, g2sq = moments.gamma1 ** 2, moments.gamma2_sq
    theta1 = mp_expectation(lambda x: g1sq / (g1sq * x + g2sq), psi1)
    theta2 = psi1 * mp_expectation(lambda x: g1sq * x / (g1sq * x + g2sq), psi1)
    theta3 = gaussian_expectation(lambda x: x * (2.0 * F(x) - 1.0), quadrature_order)
    theta4 = 1.0 / psi2 + theta3 ** 2
    return theta1, theta2, theta3, theta4


def tau_of(thetas, eta: float):
    """(tau0^2, tau_delta^2, tau) from the theta parameters at learning rate eta."""
    theta1, theta2, theta3, theta4 = thetas
    tau0_sq = 1.0 - theta2
    e2 = eta * eta
    tau_delta_sq = (e2 * theta1 * (1.0 - theta2) ** 2 * theta3 ** 2) / (
        1.0 + e2 * theta1 * (1.0 - theta2) * theta4
    )
    tau_sq = tau0_sq - tau_delta_sq
    if tau_sq < -1e-12:
        raise ValueError(f"inconsistent parameters: tau^2 = {tau_sq} < 0")
    return tau0_sq, tau_delta_sq, float(np.sqrt(max(tau_sq, 0.0)))


@dataclass(frozen=True)
class GaussEquivParams:
    """Everything the closed-form capacity/accuracy formulas consume."""

    psi1: float
    psi2: float
    eta: float
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    tau0_sq: float
    tau_delta_sq: float
    tau: float


def gauss_equiv_params(psi1, psi2, eta, F: LabelFunction, activation, quadrature_order: int = DEFAULT_QUAD_ORDER) -> GaussEquivParams:
    moments = activation_moments(activation, quadrature_order)
    thetas = theta_params(moments, psi1, psi2, F, quadrature_order)
    tau0_sq, tau_delta_sq, tau = tau_of(thetas, eta)
    return GaussEquivParams(psi1, psi2, eta, *thetas, tau0_sq, tau_delta_sq, tau)


def effective_label_fn(F: LabelFunction, tau: float, quadrature_order: int = DEFAULT_QUAD_ORDER) -> LabelFunction:
    """Smoothed link f_tau(g) = E_{G'}[F(sqrt(1 - tau^2) g + tau G')]."""
    if not (0.0 <= tau <= 1.0 + 1e-12):
        raise ValueError("tau must lie in [0, 1]")
    tau = min(tau, 1.0)
    keep = np.sqrt(max(1.0 - tau * tau, 0.0))
    x, w = _gh_nodes(quadrature_order)

    def fn(gv):
        gv = np.atleast_1d(np.asarray(gv, dtype=np.float64))
        vals = F(keep * gv[:, None] + tau * x[None, :]) @ w
        return vals if vals.size > 1 else float(vals[0])

    return LabelFunction(f"smoothed[{F.name}]", fn, {"tau": tau, "base": F.params})


def _golden_min(f, lo: float, hi: float, tol: float = 1e-8) -> float:
    """Golden-section minimum of a unimodal f on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _hinge_sq_mean(a):
    """E_Z[(a - Z)_+^2] = (1 + a^2) Phi(a) + a phi(a) for standard normal Z."""
    a = np.asarray(a, dtype=np.float64)
    phi = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
    # (1 + a^2) * Phi(a) in log space to stay finite for very negative a
    return (1.0 + a * a) * ndtr(a) + a * phi


def capacity_theory(psi1, psi2, eta, F: LabelFunction, activation, quadrature_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Storage capacity of the one-step-trained network in the proportional limit.

    alpha = (min_c E[(-c Y G - Z)_+^2])^{-1} with labels drawn through the
    tau-smoothed link; the inner Z-expectation is closed-form and the outer
    (G, Y) expectation is exact quadrature, so the 1-D minimization is smooth
    and convex.
    """
    params = gauss_equiv_params(psi1, psi2, eta, F, activation, quadrature_order)
    f_tau = effective_label_fn(F, params.tau, quadrature_order)
    x, w = _gh_nodes(quadrature_order)
    f_vals = np.asarray(f_tau(x), dtype=np.float64)

    def objective(c):
        return float(w @ (f_vals * _hinge_sq_mean(-c * x) + (1.0 - f_vals) * _hinge_sq_mean(c * x)))

    # bracket the convex objective, then golden-section to 1e-8
    lo, hi = -1.0, 1.0
    while objective(hi) <= objective(0.5 * hi):
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("capacity optimizer failed to bracket the minimum")
    while objective(lo) <= objective(0.5 * lo):
        lo *= 2.0
        if lo < -1e12:
            raise RuntimeError("capacity optimizer failed to bracket the minimum")
    c_star = _golden_min(objective, lo, hi, tol=1e-8)
    val = objective(c_star)
    if val <= 0:
        raise RuntimeError("degenerate minimization: objective vanished")
    return 1.0 / val


def accuracy_theory(psi1, psi2, eta, F: LabelFunction, activation, quadrature_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Test accuracy of sign(a . sigma(W1 x)) in the proportional limit."""
    moments = activation_moments(activation, quadrature_order)
    g1 = moments.gamma1
    theta3 = gaussian_expectation(lambda x: x * (2.0 * F(x) - 1.0), quadrature_order)
    denom = np.sqrt(eta * eta * g1 ** 4 / psi2 + g1 ** 2 + moments.gamma_star_sq)
    kappa = eta * g1 ** 2 * theta3 / denom

    def integrand(g):
        p = np.asarray(F(g), dtype=np.float64)
        return p * ndtr(kappa * g) + (1.0 - p) * ndtr(-kappa * g)

    return gaussian_expectation(integrand, quadrature_order)


# ---------------------------------------------------------------------------
# finite-size one-step experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OneStepResult:
    accuracy: float
    features: np.ndarray        # test features sigma(W1 x), n_test x N
    labels: np.ndarray          # realized +/-1 test labels
    label_probs: np.ndarray     # P[y=+1] per test point (teacher margins through F)
    ensemble: ManifoldEnsemble  # features grouped by realized label


def run_one_step(
    d: int,
    psi1: float,
    psi2: float,
    eta: float,
    F: LabelFunction,
    activation,
    rng: RngStream,
    n_test: int = 2000,
) -> OneStepResult:
    """One full-batch MSE gradient step on the hidden weights of a random net.

    W0 and the frozen readout have N(0, 1/N) entries, the teacher direction is
    uniform on the sphere, and training labels are +/-1 with P[y=1] = F(<beta, x>).
    Returns test accuracy of sign(a . sigma(W1 x)) plus the post-step test
    representations grouped by label.
    """
    act = get_activation(activation)
    N = int(round(psi1 * d))
    P_train = int(round(psi2 * d))
    if N < 1 or P_train < 1:
        raise ValueError("psi1 * d and psi2 * d must round to >= 1")
    g = rng.generator()
    W0 = g.standard_normal((N, d)) / np.sqrt(N)
    a = g.standard_normal(N) / np.sqrt(N)
    beta = g.standard_normal(d)
    beta /= np.linalg.norm(beta)

    X = g.standard_normal((P_train, d))
    y = np.where(g.random(P_train) < F(X @ beta), 1.0, -1.0)

    pre = X @ W0.T
    resid = y - act(pre) @ a
    back = (resid[:, None] * act.deriv(pre)) * a[None, :]
    W1 = W0 + eta * (back.T @ X) / P_train

    Xt = g.standard_normal((n_test, d))
    probs = np.asarray(F(Xt @ beta), dtype=np.float64)
    yt = np.where(g.random(n_test) < probs, 1.0, -1.0)
    feats = act(Xt @ W1.T)
    acc = float(np.mean(yt * (feats @ a) >= 0))

    ensemble = build_ensemble(zip(yt.astype(int), feats))
    return OneStepResult(acc, feats, yt, probs, ensemble)


def one_step_experiment(d, psi1, psi2, eta, F: LabelFunction, activation, rng: RngStream, n_test: int = 2000):
    """(empirical accuracy, feature ensemble) — see run_one_step for details."""
    res = run_one_step(d, psi1, psi2, eta, F, activation, rng, n_test)
    return res.accuracy, res.ensemble
