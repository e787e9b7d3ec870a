"""ADMM solver for least squares with a stacked group-separable penalty.

Minimizes ``0.5 ||y - X b||^2 + sum_j lam_j w_j ||K_j b||_2`` by alternating
a quadratic solve in ``b``, blockwise vector soft-thresholding of the
auxiliary variable ``theta = K b``, and dual ascent on ``mu``, with
residual-based stopping and adaptive step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import InternalSolverError, ValidationError
from .penalty import PenaltyOperator

_DENSE_KTK_CUTOFF = 2048  # below this p, keep the inverse of K^T K dense


@dataclass
class AdmmConfig:
    """Solver controls.

    ``tau`` and ``eta`` drive the adaptive step size (rho is multiplied or
    divided by tau when one residual exceeds eta times the other, checked
    every ``rho_update_period`` iterations).  Checking every iteration can
    trap the iterates in a rho-flipping limit cycle, so the default spaces
    the checks out.  ``eps_pri_theta_dim`` switches the primal threshold to
    use sqrt(dim theta) instead of sqrt(p).
    """

    rho0: float = 1.0
    tau: float = 2.0
    eta: float = 10.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-3
    max_iter: int = 5000
    rho_update_period: int = 10
    eps_pri_theta_dim: bool = False
    trace_objective: bool = False

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ValidationError("rho0 must be positive")
        if self.tau <= 1:
            raise ValidationError("tau must exceed 1")
        if self.eta <= 1:
            raise ValidationError("eta must exceed 1")
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ValidationError("tolerances must be nonnegative")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be positive")
        if self.rho_update_period < 1:
            raise ValidationError("rho_update_period must be positive")


@dataclass
class AdmmState:
    """Mutable iterate owned by a single solver run."""

    beta: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    rho: float
    iter: int = 0
    r_norm: float = math.inf
    s_norm: float = math.inf
    eps_pri: float = 0.0
    eps_dual: float = 0.0


@dataclass
class ResidualTrace:
    r_norm: np.ndarray
    s_norm: np.ndarray
    rho: np.ndarray
    eps_pri: np.ndarray
    eps_dual: np.ndarray
    objective: np.ndarray  # NaN when objective tracing is off


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    objective: float
    trace: ResidualTrace
    state: AdmmState


def _l2(v: np.ndarray) -> float:
    return math.sqrt(float(v @ v))


class Factorization:
    """Handle for a cached factorization of X^T X + rho K^T K at fixed rho."""

    def __init__(self, solver: "LinearSolver", rho: float, kind: str, payload):
        self._solver = solver
        self.rho = rho
        self._kind = kind
        self._payload = payload

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._kind == "inverse":
            return self._payload @ b
        if self._kind == "chol":
            return sla.cho_solve(self._payload, b, check_finite=False)
        # two-stage Woodbury against a sparse K^T K factor
        s = self._solver
        u = s._lsolve(b)
        v = sla.cho_solve(self._payload, s.x @ u, check_finite=False)
        return (u - (s._z @ v) / self.rho) / self.rho


class LinearSolver:
    """Solves (X^T X + rho K^T K) b = rhs, caching work across rho values.

    K^T K = 2 I + D^T D is fixed and positive definite, so when n < p the
    system is solved through the Woodbury identity: K^T K is factored once
    up front and each distinct rho costs only an n-by-n Cholesky.  At
    moderate p the combined inverse is assembled densely so the recurring
    beta update is a single matrix-vector product.  With n >= p a dense
    Cholesky of the full p-by-p matrix is cached per rho.
    """

    def __init__(self, x: np.ndarray, penalty: PenaltyOperator):
        x = np.ascontiguousarray(x, dtype=float)
        if x.ndim != 2:
            raise ValidationError("design matrix must be 2-dimensional")
        self.n, self.p = x.shape
        if self.p != penalty.p:
            raise ValidationError(
                f"design has {self.p} columns but penalty covers {penalty.p}"
            )
        self.x = x
        self.penalty = penalty
        self.woodbury = self.n < self.p
        self._dense = self.p <= _DENSE_KTK_CUTOFF
        ktk = penalty.ktk()
        try:
            if self.woodbury:
                if self._dense:
                    self._ktk_inv = np.linalg.inv(ktk.toarray())
                    self._lsolve = self._ktk_inv.dot
                else:
                    lu = spla.splu(ktk.tocsc())
                    self._lsolve = lu.solve
                self._z = np.ascontiguousarray(self._lsolve(x.T))  # (K^T K)^{-1} X^T
                self._c = x @ self._z  # X (K^T K)^{-1} X^T, n x n
                self._eye_n = np.eye(self.n)
            else:
                self._xtx = x.T @ x
                self._ktk_dense = ktk.toarray()
        except (np.linalg.LinAlgError, RuntimeError) as err:
            raise InternalSolverError(f"penalty operator factorization failed: {err}")
        self._cache: dict[float, Factorization] = {}

    def factorization(self, rho: float) -> Factorization:
        fac = self._cache.get(rho)
        if fac is None:
            try:
                if self.woodbury:
                    chol = sla.cho_factor(
                        self._eye_n + self._c / rho, lower=True, check_finite=False
                    )
                    if self._dense:
                        # Assemble (X^T X + rho K^T K)^{-1} outright; the
                        # per-iteration solve becomes one dense matvec.
                        s = sla.cho_solve(chol, self._z.T, check_finite=False)
                        m_inv = (self._ktk_inv - (self._z @ s) / rho) / rho
                        fac = Factorization(self, rho, "inverse", m_inv)
                    else:
                        fac = Factorization(self, rho, "woodbury", chol)
                else:
                    chol = sla.cho_factor(
                        self._xtx + rho * self._ktk_dense,
                        lower=True,
                        check_finite=False,
                    )
                    fac = Factorization(self, rho, "chol", chol)
            except np.linalg.LinAlgError as err:
                raise InternalSolverError(
                    f"beta-update system not positive definite at rho={rho}: {err}"
                )
            if len(self._cache) >= 64:
                self._cache.clear()
            self._cache[rho] = fac
        return fac


def soft_threshold_vector(a: np.ndarray, kappa: float) -> np.ndarray:
    """Vector soft-thresholding ``(1 - kappa/||a||)_+ a`` with S(0) = 0."""
    if kappa < 0:
        raise ValidationError("threshold must be nonnegative")
    a = np.asarray(a, dtype=float)
    norm = _l2(a)
    if norm <= kappa:
        return np.zeros_like(a)
    return (1.0 - kappa / norm) * a


_TINY = float(np.finfo(float).tiny)


def _prox_theta(
    eta: np.ndarray,
    kappa_scalar: np.ndarray,
    kappa_group: np.ndarray,
    penalty: PenaltyOperator,
) -> np.ndarray:
    """Blockwise soft-threshold of the stacked vector eta.

    Scalar blocks (singletons and fusion rows) use elementwise shrinkage;
    group blocks shrink by their Euclidean norm.  Zero thresholds pass the
    input through exactly.
    """
    split = penalty.p + penalty.m
    out = np.empty_like(eta)
    sf = eta[:split]
    out[:split] = sf - np.clip(sf, -kappa_scalar, kappa_scalar)
    grp = eta[split:]
    norms = penalty.group_norms(grp)
    factors = np.maximum(0.0, 1.0 - kappa_group / np.maximum(norms, _TINY))
    out[split:] = grp * factors[penalty.group_repeat_idx]
    return out


def beta_update(
    state: AdmmState,
    factorization: Factorization,
    x: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyOperator,
) -> np.ndarray:
    """Solve (X^T X + rho K^T K) b = X^T y + K^T (mu + rho theta)."""
    if factorization.rho != state.rho:
        raise InternalSolverError(
            f"stale factorization: built for rho={factorization.rho}, "
            f"state has rho={state.rho}"
        )
    rhs = x.T @ y + penalty.apply_kt(state.mu + state.rho * state.theta)
    return factorization.solve(rhs)


def theta_update(state: AdmmState, penalty: PenaltyOperator, lambdas) -> np.ndarray:
    """Blockwise ``theta_j = (1 - lam_j w_j / (rho ||eta_j||))_+ eta_j``."""
    lam1, lam2, lam3 = lambdas
    eta = penalty.apply_k(state.beta) - state.mu / state.rho
    kappa_scalar = (
        np.concatenate([lam1 * penalty.w_singleton, lam2 * penalty.w_fusion])
        / state.rho
    )
    kappa_group = lam3 * penalty.w_group / state.rho
    return _prox_theta(eta, kappa_scalar, kappa_group, penalty)


def mu_update(state: AdmmState, penalty: PenaltyOperator) -> np.ndarray:
    """Dual ascent ``mu + rho (theta - K beta)``."""
    return state.mu + state.rho * (state.theta - penalty.apply_k(state.beta))


def _thresholds(
    norm_kb: float,
    norm_theta: float,
    norm_ktmu: float,
    penalty: PenaltyOperator,
    config: AdmmConfig,
) -> tuple[float, float]:
    pri_dim = penalty.theta_dim if config.eps_pri_theta_dim else penalty.p
    eps_pri = math.sqrt(pri_dim) * config.eps_abs + config.eps_rel * max(
        norm_kb, norm_theta
    )
    eps_dual = (
        math.sqrt(penalty.theta_dim) * config.eps_abs + config.eps_rel * norm_ktmu
    )
    return eps_pri, eps_dual


def check_stopping(
    state: AdmmState, penalty: PenaltyOperator, config: AdmmConfig
) -> tuple[bool, float, float]:
    """Evaluate the residual stopping rule at the current iterate."""
    eps_pri, eps_dual = _thresholds(
        _l2(penalty.apply_k(state.beta)),
        _l2(state.theta),
        _l2(penalty.apply_kt(state.mu)),
        penalty,
        config,
    )
    stop = state.r_norm <= eps_pri and state.s_norm <= eps_dual
    return stop, eps_pri, eps_dual


def adapt_rho(state: AdmmState, config: AdmmConfig) -> float:
    """Scale rho up/down by tau when one residual dominates by factor eta."""
    return _adapt(state.rho, state.r_norm, state.s_norm, config.tau, config.eta)


def _adapt(rho: float, r_norm: float, s_norm: float, tau: float, eta: float) -> float:
    if r_norm > eta * s_norm:
        return rho * tau
    if s_norm > eta * r_norm:
        return rho / tau
    return rho


def objective_value(x, y, penalty: PenaltyOperator, lambdas, beta) -> float:
    """Penalized least squares objective at ``beta``."""
    return _objective_from_kb(x, y, penalty, lambdas, beta, penalty.apply_k(beta))


def _objective_from_kb(x, y, penalty, lambdas, beta, kb) -> float:
    lam1, lam2, lam3 = lambdas
    resid = y - x @ beta
    split = penalty.p + penalty.m
    pen = lam1 * float(penalty.w_singleton @ np.abs(kb[: penalty.p]))
    pen += lam2 * float(penalty.w_fusion @ np.abs(kb[penalty.p : split]))
    pen += lam3 * float(penalty.w_group @ penalty.group_norms(kb[split:]))
    return 0.5 * float(resid @ resid) + pen


def solve(
    x: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyOperator,
    lambdas,
    config: AdmmConfig | None = None,
    warm_start: AdmmState | None = None,
    linear_solver: LinearSolver | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Fit the penalized least squares problem for one (lam1, lam2, lam3).

    Parameters
    ----------
    x, y : ndarray
        Standardized design (n x p) and centered response (length n).
    penalty : PenaltyOperator
        Stacked operator; its column count must match x.
    lambdas : tuple of float
        Regularization levels for the lasso, fusion, and group blocks.
    config : AdmmConfig, optional
    warm_start : AdmmState, optional
        Iterate from a previous solve over the same structure; copied, the
        caller's state is not mutated.  Its rho carries over.
    linear_solver : LinearSolver, optional
        Shared factorization cache for repeated solves on the same (x,
        penalty); one is created when omitted.

    Returns
    -------
    (beta_hat, report) : the dense primal solution and a SolveReport whose
    ``state`` can seed the next warm start.  Exact zeros of the solution
    are read from the singleton blocks of ``state.theta``.
    """
    config = config or AdmmConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2:
        raise ValidationError("design matrix must be 2-dimensional")
    n, p = x.shape
    if p != penalty.p:
        raise ValidationError(
            f"design has {p} columns but penalty covers {penalty.p} coefficients"
        )
    if y.size != n:
        raise ValidationError(f"response length {y.size} does not match n={n}")
    lam1, lam2, lam3 = (float(v) for v in lambdas)
    if min(lam1, lam2, lam3) < 0:
        raise ValidationError("regularization parameters must be nonnegative")
    if lam1 == lam2 == lam3 == 0.0 and n < p:
        raise ValidationError(
            "all-zero regularization with n < p has no unique solution"
        )

    lin = linear_solver or LinearSolver(x, penalty)
    if lin.n != n or lin.p != p:
        raise ValidationError("linear_solver was built for a different design")

    m = penalty.m
    split = p + m
    xty = x.T @ y

    if warm_start is not None:
        beta = np.array(warm_start.beta, dtype=float)
        theta = np.array(warm_start.theta, dtype=float)
        mu = np.array(warm_start.mu, dtype=float)
        rho = float(warm_start.rho)
        if beta.size != p or theta.size != penalty.theta_dim or mu.size != penalty.theta_dim:
            raise ValidationError("warm start shapes do not match the penalty")
    else:
        beta = np.zeros(p)
        theta = np.zeros(penalty.theta_dim)
        mu = np.zeros(penalty.theta_dim)
        rho = config.rho0

    lamw_scalar = np.concatenate(
        [lam1 * penalty.w_singleton, lam2 * penalty.w_fusion]
    )
    lamw_group = lam3 * penalty.w_group
    kappa_rho = None
    kappa_scalar = kappa_group = None

    tr_r, tr_s, tr_rho, tr_ep, tr_ed, tr_obj = [], [], [], [], [], []
    converged = False
    it = 0

    # K^T theta is maintained incrementally across iterations; everything
    # entering the stopping test (residuals, K^T mu, ||K beta||) is computed
    # fresh each iteration so check_stopping reproduces it bit for bit.
    kt_theta = penalty.apply_kt(theta)
    kt_mu = penalty.apply_kt(mu)

    while it < config.max_iter:
        it += 1
        fac = lin.factorization(rho)
        beta = fac.solve(xty + kt_mu + rho * kt_theta)
        kb = penalty.apply_k(beta)

        if rho != kappa_rho:
            kappa_scalar = lamw_scalar / rho
            kappa_group = lamw_group / rho
            kappa_rho = rho
        theta_new = _prox_theta(kb - mu / rho, kappa_scalar, kappa_group, penalty)
        kt_dtheta = penalty.apply_kt(theta_new - theta)
        kt_theta += kt_dtheta
        theta = theta_new

        r_vec = theta - kb
        mu = mu + rho * r_vec
        kt_mu = penalty.apply_kt(mu)
        r_norm = _l2(r_vec)
        s_norm = rho * _l2(kt_dtheta)
        eps_pri, eps_dual = _thresholds(
            _l2(kb), _l2(theta), _l2(kt_mu), penalty, config
        )

        tr_r.append(r_norm)
        tr_s.append(s_norm)
        tr_rho.append(rho)
        tr_ep.append(eps_pri)
        tr_ed.append(eps_dual)
        if config.trace_objective:
            tr_obj.append(
                _objective_from_kb(x, y, penalty, (lam1, lam2, lam3), beta, kb)
            )

        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break
        if it % config.rho_update_period == 0:
            rho = _adapt(rho, r_norm, s_norm, config.tau, config.eta)

    state = AdmmState(
        beta=beta,
        theta=theta,
        mu=mu,
        rho=rho,
        iter=it,
        r_norm=r_norm,
        s_norm=s_norm,
        eps_pri=eps_pri,
        eps_dual=eps_dual,
    )
    objective = _objective_from_kb(
        x, y, penalty, (lam1, lam2, lam3), beta, penalty.apply_k(beta)
    )
    if not math.isfinite(objective):
        raise InternalSolverError(
            f"non-finite objective after {it} iterations (rho={rho})"
        )
    trace = ResidualTrace(
        r_norm=np.array(tr_r),
        s_norm=np.array(tr_s),
        rho=np.array(tr_rho),
        eps_pri=np.array(tr_ep),
        eps_dual=np.array(tr_ed),
        objective=np.array(tr_obj) if tr_obj else np.full(it, np.nan),
    )
    report = SolveReport(
        converged=converged,
        iterations=it,
        objective=objective,
        trace=trace,
        state=state,
    )
    return beta, report
