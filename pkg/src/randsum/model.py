"""Core model objects: parameter layout, panel container, mean recursion.

The linear predictor for site k at observed time t is

    eta[k, t] = omega_k + sum_j alpha_j * Y[k, t-j] / n[k, t-j] + beta . X[k, t]

and the mean is lam = softplus(delta, eta).  Because the recursion regresses
on observed lag ratios rather than on past means, the gradient of lam with
respect to the parameters involves only time-t regressors, which keeps both
the mean path and its Jacobian a single vectorized pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .link import softplus, softplus_deriv


@dataclass(frozen=True)
class ParameterVector:
    """Model parameters in the fixed layout (delta, omega, alpha, beta).

    ``omega`` holds one intercept per site, ``alpha`` the autoregressive
    coefficients for lags 1..p, ``beta`` one coefficient per covariate
    column.  Flattening order never changes: delta first, then the omega
    block, the alpha block, the beta block.
    """

    delta: float
    omega: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", float(self.delta))
        for name in ("omega", "alpha", "beta"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be a nonnegative real, got {self.delta}")
        if self.omega.size == 0:
            raise ValueError("omega must contain at least one site intercept")

    @property
    def K(self) -> int:
        return self.omega.size

    @property
    def p(self) -> int:
        return self.alpha.size

    @property
    def m(self) -> int:
        return self.beta.size

    @property
    def dim(self) -> int:
        return 1 + self.K + self.p + self.m

    def to_array(self) -> np.ndarray:
        return np.concatenate(([self.delta], self.omega, self.alpha, self.beta))

    @classmethod
    def from_array(cls, arr, K: int, p: int, m: int) -> "ParameterVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (1 + K + p + m,):
            raise ValueError(
                f"expected a flat vector of length {1 + K + p + m}, got shape {arr.shape}"
            )
        return cls(
            delta=arr[0],
            omega=arr[1 : 1 + K],
            alpha=arr[1 + K : 1 + K + p],
            beta=arr[1 + K + p :],
        )

    def labels(self, site_ids=None, covariate_names=None) -> list[str]:
        """Human-readable name per flattened coordinate."""
        sites = list(site_ids) if site_ids is not None else [str(k + 1) for k in range(self.K)]
        covs = (
            list(covariate_names)
            if covariate_names is not None
            else [str(i + 1) for i in range(self.m)]
        )
        if len(sites) != self.K or len(covs) != self.m:
            raise ValueError("label lists must match the omega/beta block sizes")
        out = ["delta"]
        out += [f"omega[{s}]" for s in sites]
        out += [f"alpha[{j + 1}]" for j in range(self.p)]
        out += [f"beta[{c}]" for c in covs]
        return out


@dataclass(frozen=True)
class StabilityCheck:
    stable: bool
    alpha_l1: float


def check_stability(theta: ParameterVector) -> StabilityCheck:
    """Report whether the autoregressive block satisfies sum |alpha_j| < 1.

    The condition guarantees a stationary ergodic solution of the model
    (the link has Lipschitz constant 1).  Callers decide the policy: the
    simulator refuses unstable truth, the estimator merely reports.
    """
    l1 = float(np.sum(np.abs(theta.alpha)))
    return StabilityCheck(stable=l1 < 1.0, alpha_l1=l1)


@dataclass(frozen=True)
class PanelSeries:
    """K aligned site series of (y, n, x) on a common year axis.

    ``y`` and ``n`` cover presample plus observed window, shape (K, p + T);
    the first ``p`` columns only feed lag ratios.  ``x`` covers the observed
    window only, shape (K, T, m), since covariates enter contemporaneously.
    """

    site_ids: tuple
    years: np.ndarray
    p: int
    y: np.ndarray
    n: np.ndarray
    x: np.ndarray
    covariate_names: tuple = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "site_ids", tuple(str(s) for s in self.site_ids))
        object.__setattr__(self, "covariate_names", tuple(str(c) for c in self.covariate_names))
        years = np.asarray(self.years, dtype=int)
        y = np.asarray(self.y, dtype=float)
        n = np.asarray(self.n, dtype=int)
        x = np.asarray(self.x, dtype=float)
        K = len(self.site_ids)
        if K == 0:
            raise ValueError("panel needs at least one site")
        if not (isinstance(self.p, int) and self.p >= 0):
            raise ValueError(f"p must be a nonnegative integer, got {self.p}")
        if years.ndim != 1 or years.size <= self.p:
            raise ValueError("year axis must be 1-d with at least p + 1 entries")
        if np.any(np.diff(years) <= 0):
            raise ValueError("years must be strictly increasing")
        total = years.size
        T = total - self.p
        if y.shape != (K, total) or n.shape != (K, total):
            raise ValueError(
                f"y and n must have shape ({K}, {total}); got {y.shape} and {n.shape}"
            )
        if x.ndim != 3 or x.shape[:2] != (K, T):
            raise ValueError(f"x must have shape ({K}, {T}, m); got {x.shape}")
        if not np.all(y > 0):
            raise ValueError("all y values must be strictly positive")
        if not np.all(n >= 1):
            raise ValueError("all n values must be at least 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite within the fitting window")
        if len(self.covariate_names) != x.shape[2]:
            raise ValueError("covariate_names must match the covariate column count")
        for arr in (years, y, n, x):
            arr.flags.writeable = False
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "x", x)

    @property
    def K(self) -> int:
        return len(self.site_ids)

    @property
    def T(self) -> int:
        return self.years.size - self.p

    @property
    def m(self) -> int:
        return self.x.shape[2]

    @property
    def y_obs(self) -> np.ndarray:
        return self.y[:, self.p :]

    @property
    def n_obs(self) -> np.ndarray:
        return self.n[:, self.p :]

    @property
    def obs_years(self) -> np.ndarray:
        return self.years[self.p :]

    def ratio_lags(self) -> np.ndarray:
        """Lagged per-unit ratios, shape (K, T, p); column j-1 holds lag j."""
        ratio = self.y / self.n
        T, p = self.T, self.p
        if p == 0:
            return np.empty((self.K, T, 0))
        return np.stack([ratio[:, p - j : p + T - j] for j in range(1, p + 1)], axis=-1)


@dataclass(frozen=True)
class MeanPath:
    """Linear predictors, means, and the mean Jacobian over a panel."""

    eta: np.ndarray
    lam: np.ndarray
    dlam: np.ndarray


def _check_panel_theta(panel: PanelSeries, theta: ParameterVector) -> None:
    if theta.K != panel.K:
        raise ValueError(f"theta has {theta.K} site intercepts, panel has {panel.K} sites")
    if theta.p != panel.p:
        raise ValueError(f"theta has order p={theta.p}, panel presample has p={panel.p}")
    if theta.m != panel.m:
        raise ValueError(
            f"theta has {theta.m} covariate coefficients, panel has {panel.m} columns"
        )


def compute_mean_path(panel: PanelSeries, theta: ParameterVector) -> MeanPath:
    """Evaluate eta, lam and the full Jacobian dlam over the observed window.

    ``dlam`` has shape (K, T, dim) in the flattening order of
    ``ParameterVector``: the delta slot carries the shift derivative of the
    link, the omega block is nonzero only at the site's own position, and
    the alpha/beta blocks are the link slope times the matching regressor.

    Raises
    ------
    ValueError
        If the panel and theta dimensions disagree, or a non-finite linear
        predictor is produced (wildly scaled covariates or parameters).
    """
    _check_panel_theta(panel, theta)
    K, T, p, m = panel.K, panel.T, panel.p, panel.m
    d = theta.dim

    lags = panel.ratio_lags()
    eta = theta.omega[:, None] + panel.x @ theta.beta
    if p:
        eta = eta + lags @ theta.alpha
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite linear predictor; check covariate and parameter scales")

    lam = softplus(theta.delta, eta)
    d_eta, d_delta = softplus_deriv(theta.delta, eta)

    dlam = np.zeros((K, T, d))
    dlam[:, :, 0] = d_delta
    for k in range(K):
        dlam[k, :, 1 + k] = d_eta[k]
    if p:
        dlam[:, :, 1 + K : 1 + K + p] = d_eta[:, :, None] * lags
    if m:
        dlam[:, :, 1 + K + p :] = d_eta[:, :, None] * panel.x
    return MeanPath(eta=eta, lam=lam, dlam=dlam)
