"""Penalized per-neuron estimation of the autoregressive logistic model.

Each neuron i is fit independently by maximizing the trial-joint Bernoulli
log-likelihood of

    logit P(y_t,i = 1 | y_{t-1}) = beta_i + gamma_i . y_{t-1} + phi~(t/n) . c_i

minus an l1 penalty on gamma_i.  The solver is the standard GLM recipe:
an outer quadratic approximation (working response z, weights w = p(1-p))
re-linearized each step, with cyclic coordinate descent on the resulting
penalized weighted least-squares problem.  Only gamma is penalized; the
intercept and spline coefficients are free.

Coordinate updates are computed from the Gram matrix of the stacked design,
which makes inner sweeps O(p^2) instead of O(n p); the column-form updates
(`cd_update_gamma_j` and friends) define the same arithmetic and are kept
as the reference formulation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .basis import BasisMatrix
from .netsim import SpikePanel

OBJECTIVE_SLACK = 1e-9  # acceptance slack for the step-halving descent check


def inv_logit(a):
    """Numerically stable logistic function 1 / (1 + exp(-a))."""
    return expit(a)


def soft_threshold(a: float, kappa: float) -> float:
    """Shrink a toward zero by kappa; exactly zero once kappa >= |a|."""
    if kappa < 0:
        raise ValueError("threshold must be nonnegative")
    return math.copysign(max(abs(a) - kappa, 0.0), a)


@dataclass
class FitOptions:
    """Solver knobs; defaults are safe for panels up to ~10^4 bins."""

    max_outer_iters: int = 50
    max_inner_iters: int = 1000
    tol: float = 1e-7
    weight_floor: float = 1e-5       # probability clamp before forming weights
    lambda_grid_size: int = 50
    lambda_min_ratio: float = 1e-3
    per_neuron_lambda: bool = False  # off: one shared penalty across neurons

    def __post_init__(self):
        if min(self.max_outer_iters, self.max_inner_iters, self.lambda_grid_size) < 1:
            raise ValueError("iteration and grid counts must be positive")
        if self.tol <= 0 or self.lambda_min_ratio <= 0:
            raise ValueError("tol and lambda_min_ratio must be positive")
        if not 0 < self.weight_floor < 0.5:
            raise ValueError("weight_floor must lie in (0, 0.5)")


@dataclass
class NeuronFit:
    """Per-neuron parameter bundle and fit diagnostics."""

    beta: float
    gamma: np.ndarray
    spline_coefs: np.ndarray
    lam: float
    neg_loglik: float
    iterations: int = 0
    converged: bool = True


@dataclass
class ModelFit:
    """All-neuron fit; ``interaction`` row i is fits[i].gamma."""

    fits: list[NeuronFit]
    basis: BasisMatrix
    interaction: np.ndarray
    lambda_star: float | np.ndarray


@dataclass
class StackedDesign:
    """Lag-valid observations stacked across trials (trial-major).

    Within each trial the likelihood conditions on the first bin, so a
    trial of n bins contributes n-1 rows: predictors y_{t-1} and the
    centered basis row for t, for t = 2..n.
    """

    lag: np.ndarray   # (N, d) previous-bin spike indicators
    phi: np.ndarray   # (N, m) centered basis rows
    resp: np.ndarray  # (N, d) responses, one column per neuron
    n_effective: int

    @property
    def d(self) -> int:
        return self.lag.shape[1]

    @property
    def m(self) -> int:
        return self.phi.shape[1]

    def matrix(self) -> np.ndarray:
        """Full design [lag | 1 | phi]; gamma cols 0..d-1, intercept col d."""
        ones = np.ones((self.n_effective, 1))
        return np.hstack([self.lag, ones, self.phi])


def build_stacked(panel: SpikePanel, basis: BasisMatrix) -> StackedDesign:
    if not basis.centered:
        raise ValueError("basis must be centered before fitting")
    l, n, d = panel.data.shape
    if n < 2:
        raise ValueError("need at least 2 bins per trial for a lagged model")
    if basis.n != n:
        raise ValueError(f"basis has {basis.n} rows but trials have {n} bins")
    lag = panel.data[:, :-1, :].reshape(-1, d).astype(float)
    resp = panel.data[:, 1:, :].reshape(-1, d).astype(float)
    phi = np.tile(basis.values[1:, :], (l, 1))
    return StackedDesign(lag=lag, phi=phi, resp=resp, n_effective=l * (n - 1))


# ---------------------------------------------------------------------------
# objective and linearization


def _nll_from_eta(y: np.ndarray, eta: np.ndarray) -> float:
    # sum log(1 + e^eta) - y.eta, stable for large |eta|
    return float(np.logaddexp(0.0, eta).sum() - y @ eta)


def _penalized(y, eta, gamma_l1, lam):
    pen = lam * gamma_l1 if gamma_l1 > 0 else 0.0
    return _nll_from_eta(y, eta) + pen


def _params_of(params) -> tuple[float, np.ndarray, np.ndarray]:
    if isinstance(params, NeuronFit):
        return params.beta, params.gamma, params.spline_coefs
    beta, gamma, coefs = params
    return float(beta), np.asarray(gamma, float), np.asarray(coefs, float)


def neg_loglik(params, panel: SpikePanel, basis: BasisMatrix, i: int) -> float:
    """Exact unpenalized negative log-likelihood for neuron i, summed over trials."""
    beta, gamma, coefs = _params_of(params)
    design = build_stacked(panel, basis)
    eta = design.lag @ gamma + beta + design.phi @ coefs
    return _nll_from_eta(design.resp[:, i], eta)


def irls_linearize(params, panel: SpikePanel, basis: BasisMatrix, i: int,
                   weight_floor: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Working response z and weights w at the current parameters.

    Probabilities are clamped to [weight_floor, 1 - weight_floor] before
    forming w = p(1-p) and z = eta + (y - p)/w, so weights never vanish.
    Arrays align with the stacked (trial-major) lag-valid rows.
    """
    beta, gamma, coefs = _params_of(params)
    design = build_stacked(panel, basis)
    eta = design.lag @ gamma + beta + design.phi @ coefs
    p = np.clip(expit(eta), weight_floor, 1.0 - weight_floor)
    w = p * (1.0 - p)
    z = eta + (design.resp[:, i] - p) / w
    return z, w


# ---------------------------------------------------------------------------
# coordinate updates (column form -- the reference arithmetic)


def cd_update_gamma_j(z, w, x_j, partial_fit, lam) -> float:
    """Penalized update for one interaction weight.

    ``partial_fit`` is the current fitted value excluding x_j's contribution.
    A predictor that is never active (zero weighted column norm) gets 0.
    """
    denom = float(w @ (x_j * x_j))
    if denom <= 0.0:
        return 0.0
    a = float((w * x_j) @ (z - partial_fit))
    return soft_threshold(a, lam) / denom


def cd_update_intercept(z, w, partial_fit) -> float:
    """Weighted mean of the intercept's partial residual."""
    return float(w @ (z - partial_fit)) / float(w.sum())


def cd_update_spline_k(z, w, phi_k, partial_fit) -> float:
    """Unpenalized update for one spline coefficient; degenerate column -> 0."""
    denom = float(w @ (phi_k * phi_k))
    if denom <= 0.0:
        return 0.0
    return float((w * phi_k) @ (z - partial_fit)) / denom


# ---------------------------------------------------------------------------
# solver core


def _cd_solve(G, b, theta0, n_pen, lam, tol, max_sweeps):
    """Cyclic CD for 0.5 t'Gt - b't + lam*||t[:n_pen]||_1.

    Sweep order is gamma (penalized), then intercept, then splines, matching
    the column layout.  After a full sweep, iterates on the active set until
    stable, then re-checks all coordinates.
    """
    theta = theta0.copy()
    p = theta.size
    diag = np.diagonal(G).copy()
    s = G @ theta
    sweeps = 0

    def sweep(indices):
        nonlocal s, sweeps
        sweeps += 1
        max_step = 0.0
        for j in indices:
            dj = diag[j]
            old = theta[j]
            if dj <= 0.0:
                new = 0.0
            else:
                a = b[j] - s[j] + dj * old
                new = soft_threshold(a, lam) / dj if j < n_pen else a / dj
            step = new - old
            if step != 0.0:
                theta[j] = new
                s += G[:, j] * step
                if abs(step) > max_step:
                    max_step = abs(step)
        return max_step

    everything = range(p)
    while sweeps < max_sweeps:
        if sweep(everything) < tol:
            break
        active = [j for j in range(n_pen) if theta[j] != 0.0]
        active.extend(range(n_pen, p))
        while sweeps < max_sweeps:
            if sweep(active) < tol:
                break
    return theta


def _fit_core(A, y, n_pen, theta0, lam, opts: FitOptions):
    """IRLS outer loop with step-halving on the true penalized objective."""
    theta = theta0.copy()
    eta = A @ theta
    obj = _penalized(y, eta, np.abs(theta[:n_pen]).sum(), lam)
    converged = False
    outer = 0
    for outer in range(1, opts.max_outer_iters + 1):
        p = np.clip(expit(eta), opts.weight_floor, 1.0 - opts.weight_floor)
        w = p * (1.0 - p)
        G = (A * w[:, None]).T @ A
        b = A.T @ (w * eta + (y - p))
        proposal = _cd_solve(G, b, theta, n_pen, lam, opts.tol, opts.max_inner_iters)

        step, accepted = 1.0, False
        for _ in range(30):
            cand = theta + step * (proposal - theta)
            eta_cand = A @ cand
            obj_cand = _penalized(y, eta_cand, np.abs(cand[:n_pen]).sum(), lam)
            if obj_cand <= obj + OBJECTIVE_SLACK:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no improving step along the surrogate direction: fixed point
            converged = True
            break
        delta = float(np.max(np.abs(cand - theta)))
        theta, eta, obj = cand, eta_cand, obj_cand
        if delta < opts.tol:
            converged = True
            break
    return theta, _nll_from_eta(y, eta), outer, converged


def _initial_theta(y, size, intercept_col, weight_floor):
    theta = np.zeros(size)
    rate = float(np.clip(y.mean(), weight_floor, 1.0 - weight_floor))
    theta[intercept_col] = math.log(rate / (1.0 - rate))
    return theta


def _theta_to_fit(theta, d, m, lam, nll, iters, converged) -> NeuronFit:
    return NeuronFit(beta=float(theta[d]), gamma=theta[:d].copy(),
                     spline_coefs=theta[d + 1:].copy(), lam=float(lam),
                     neg_loglik=nll, iterations=iters, converged=converged)


def fit_neuron(panel: SpikePanel, basis: BasisMatrix, i: int, lam: float,
               opts: FitOptions | None = None) -> NeuronFit:
    """Fit one neuron at a fixed penalty level."""
    opts = opts or FitOptions()
    design = build_stacked(panel, basis)
    return _fit_neuron_design(design, i, lam, opts)


def refit_support(design: StackedDesign, i: int, fit: NeuronFit,
                  opts: FitOptions) -> NeuronFit:
    """Unpenalized ML refit with gamma restricted to the fit's support.

    Removes the shrinkage bias from the selected coefficients while keeping
    the zeros; the penalty level is retained for bookkeeping only.
    """
    cols = np.flatnonzero(fit.gamma)
    n_act = cols.size
    A = np.hstack([design.lag[:, cols],
                   np.ones((design.n_effective, 1)), design.phi])
    y = design.resp[:, i]
    theta0 = np.concatenate([fit.gamma[cols], [fit.beta], fit.spline_coefs])
    theta, nll, iters, converged = _fit_core(A, y, n_act, theta0, 0.0, opts)
    gamma = np.zeros(design.d)
    gamma[cols] = theta[:n_act]
    return NeuronFit(beta=float(theta[n_act]), gamma=gamma,
                     spline_coefs=theta[n_act + 1:].copy(), lam=fit.lam,
                     neg_loglik=nll, iterations=fit.iterations + iters,
                     converged=fit.converged and converged)


def _fit_neuron_design(design: StackedDesign, i: int, lam: float, opts: FitOptions,
                       theta0: np.ndarray | None = None) -> NeuronFit:
    A = design.matrix()
    y = design.resp[:, i]
    d, m = design.d, design.m
    if theta0 is None:
        theta0 = _initial_theta(y, d + 1 + m, d, opts.weight_floor)
    theta, nll, iters, converged = _fit_core(A, y, d, theta0, lam, opts)
    return _theta_to_fit(theta, d, m, lam, nll, iters, converged)


def lambda_max(panel: SpikePanel, basis: BasisMatrix, i: int,
               opts: FitOptions | None = None) -> float:
    """Smallest penalty at which gamma_i is exactly zero.

    This is the max absolute gamma-score at the gamma = 0 fit with the
    intercept and spline coefficients profiled out (sum form, so it scales
    with the amount of data).
    """
    opts = opts or FitOptions()
    design = build_stacked(panel, basis)
    return _lambda_max_design(design, i, opts)


def _lambda_max_design(design: StackedDesign, i: int, opts: FitOptions) -> float:
    null_fit = _fit_neuron_design(design, i, np.inf, opts)
    eta = design.lag @ null_fit.gamma + null_fit.beta + design.phi @ null_fit.spline_coefs
    residual = design.resp[:, i] - expit(eta)
    return float(np.max(np.abs(design.lag.T @ residual)))


def bic(fit: NeuronFit, n_effective: int) -> float:
    """-2 * max log-likelihood + log(n) * (nonzero-gamma count + 1 + m)."""
    k = int(np.count_nonzero(fit.gamma))
    return 2.0 * fit.neg_loglik + math.log(n_effective) * (k + 1 + fit.spline_coefs.size)


def lambda_grid(lam_max: float, opts: FitOptions) -> np.ndarray:
    """Log-spaced grid from lam_max down to lambda_min_ratio * lam_max."""
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, lam_max * opts.lambda_min_ratio, opts.lambda_grid_size)


def fit_path(design: StackedDesign, i: int, lambdas: np.ndarray,
             opts: FitOptions) -> list[NeuronFit]:
    """Warm-started fits down a decreasing penalty grid."""
    A = design.matrix()
    y = design.resp[:, i]
    d, m = design.d, design.m
    theta = _initial_theta(y, d + 1 + m, d, opts.weight_floor)
    fits = []
    for lam in lambdas:
        theta, nll, iters, converged = _fit_core(A, y, d, theta, float(lam), opts)
        fits.append(_theta_to_fit(theta, d, m, lam, nll, iters, converged))
    return fits


def select_lambda(panels: SpikePanel | Sequence[SpikePanel], basis: BasisMatrix,
                  opts: FitOptions | None = None) -> float | np.ndarray:
    """BIC-minimizing penalty, averaged across panels.

    For every panel and neuron the BIC minimizer over that neuron's grid is
    found; per-neuron optima are averaged into one shared value per panel,
    and panel values are averaged into the final result.  With
    ``opts.per_neuron_lambda`` the per-neuron averaging is skipped and a
    length-d vector is returned instead.
    """
    opts = opts or FitOptions()
    if isinstance(panels, SpikePanel):
        panels = [panels]
    if not panels:
        raise ValueError("need at least one training panel")
    per_panel = []
    for panel in panels:
        design = build_stacked(panel, basis)
        optima = np.empty(design.d)
        for i in range(design.d):
            lam_max = _lambda_max_design(design, i, opts)
            grid = lambda_grid(lam_max, opts)
            fits = fit_path(design, i, grid, opts)
            bics = [bic(f, design.n_effective) for f in fits]
            optima[i] = grid[int(np.argmin(bics))]
        per_panel.append(optima if opts.per_neuron_lambda else optima.mean())
    result = np.mean(per_panel, axis=0)
    return result if opts.per_neuron_lambda else float(result)


def fit_network(panel: SpikePanel, basis: BasisMatrix, lam: float | np.ndarray,
                opts: FitOptions | None = None, threads: int = 1,
                refit: bool = False) -> ModelFit:
    """Fit all neurons independently and assemble the interaction matrix.

    With ``refit`` the penalized fit only selects each neuron's support and
    the returned coefficients are the unpenalized ML values on it (relaxed
    estimate); without it the shrunken penalized estimates are returned.
    """
    opts = opts or FitOptions()
    design = build_stacked(panel, basis)
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (design.d,))

    def one(i: int) -> NeuronFit:
        fit = _fit_neuron_design(design, i, float(lams[i]), opts)
        if refit:
            fit = refit_support(design, i, fit, opts)
        return fit

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(one, range(design.d)))
    else:
        fits = [one(i) for i in range(design.d)]
    interaction = np.vstack([f.gamma for f in fits])
    lam_star = float(lams[0]) if np.all(lams == lams[0]) else lams.copy()
    return ModelFit(fits=fits, basis=basis, interaction=interaction, lambda_star=lam_star)


def fitted_trends(model_fit: ModelFit) -> np.ndarray:
    """Fitted trend curves, one row per neuron, sampled at t = 1..n."""
    coefs = np.vstack([f.spline_coefs for f in model_fit.fits])
    return coefs @ model_fit.basis.values.T


def kkt_residual(fit: NeuronFit, panel: SpikePanel, basis: BasisMatrix, i: int,
                 weight_floor: float = 1e-5) -> float:
    """Max subgradient violation on the quadratic surrogate at the solution.

    Zero (up to solver tolerance) certifies the coordinate-descent fixed
    point.  Degenerate (never-active) predictor columns are excluded.
    """
    design = build_stacked(panel, basis)
    A = design.matrix()
    y = design.resp[:, i]
    theta = np.concatenate([fit.gamma, [fit.beta], fit.spline_coefs])
    eta = A @ theta
    p = np.clip(expit(eta), weight_floor, 1.0 - weight_floor)
    w = p * (1.0 - p)
    grad = (A * w[:, None]).T @ A @ theta - A.T @ (w * eta + (y - p))
    d = design.d
    col_norms = (A * A * w[:, None]).sum(axis=0)
    worst = 0.0
    for j in range(theta.size):
        if col_norms[j] <= 0.0:
            continue
        if j >= d:
            viol = abs(grad[j])
        elif theta[j] != 0.0:
            viol = abs(grad[j] + fit.lam * np.sign(theta[j]))
        else:
            viol = max(abs(grad[j]) - fit.lam, 0.0)
        worst = max(worst, viol)
    return worst
