"""Panel simulation under the random-sum model.

Each observation is a sum of n positive unit draws whose conditional mean
follows the softplus mean recursion.  Two stock covariate designs are
provided: "scenario1" draws one iid exponential covariate path and copies
it to every site, "scenario2" gives site k its own exponential draws with
means scaled by 0.4 * k.  "custom" takes a user-supplied covariate array.

All randomness flows through keyed substreams (see ``streams``), so a panel
is a pure function of (config, replicate) and panels of different lengths
under the same seed share their common prefix bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .link import softplus
from .model import PanelSeries, ParameterVector, check_stability

_FAMILIES = ("exponential", "gamma", "lognormal")


@dataclass(frozen=True)
class UnitDistribution:
    """Distribution of a single unit draw, parametrized to have mean lam.

    exponential: rate 1/lam.
    gamma: shape gamma_shape * lam and rate gamma_shape.
    lognormal: log-scale log(lam) - sigma^2/2 and shape sigma (sigma = 0 is
    the degenerate point mass at lam).
    """

    family: str = "exponential"
    gamma_shape: float | None = None
    sigma: float | None = None

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown unit family {self.family!r}; choose from {_FAMILIES}")
        if self.family == "gamma":
            if self.gamma_shape is None or not (self.gamma_shape > 0):
                raise ValueError("gamma units need gamma_shape > 0")
        if self.family == "lognormal":
            if self.sigma is None or not (self.sigma >= 0):
                raise ValueError("lognormal units need sigma >= 0")

    def draw(self, gen: np.random.Generator, lam: float, size: int) -> np.ndarray:
        if self.family == "exponential":
            return gen.exponential(lam, size)
        if self.family == "gamma":
            return gen.gamma(self.gamma_shape * lam, 1.0 / self.gamma_shape, size)
        return gen.lognormal(math.log(lam) - 0.5 * self.sigma**2, self.sigma, size)


def conditional_moments(unit_dist: UnitDistribution, lam: float, n: int) -> tuple[float, float]:
    """Conditional mean and variance of Y given (lam, n) for iid unit draws.

    The mean is n * lam for every family.  The variance is n times the unit
    variance: lam^2 for exponential units, lam / gamma_shape for gamma
    units, and lam^2 * (e^{sigma^2} - 1) for lognormal units (a lognormal
    with mean lam has second moment lam^2 e^{sigma^2}).
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if not n >= 1:
        raise ValueError(f"n must be at least 1, got {n}")
    mean = n * lam
    if unit_dist.family == "exponential":
        variance = n * lam**2
    elif unit_dist.family == "gamma":
        variance = n * lam / unit_dist.gamma_shape
    else:
        variance = n * lam**2 * math.expm1(unit_dist.sigma**2)
    return float(mean), float(variance)


_SCENARIOS = ("scenario1", "scenario2", "custom")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to generate one experiment's panels.

    ``omega`` and ``size_means`` may be left as None, in which case they are
    drawn once per experiment (uniform on (-K/2, K/2) and exponential with
    mean K respectively) and shared by all replicates.  ``size_constant``
    fixes every n[k, t] instead of drawing Poisson sizes.  For the "custom"
    scenario ``custom_covariates`` must supply the full simulated horizon,
    shape (K, burn_in + p + T, m).
    """

    scenario: str
    K: int
    T: int
    delta: float
    alpha: tuple = ()
    beta: tuple = ()
    omega: tuple | None = None
    unit_dist: UnitDistribution = field(default_factory=UnitDistribution)
    covariate_means: tuple | None = None
    size_means: tuple | None = None
    size_constant: int | None = None
    custom_covariates: np.ndarray | None = None
    burn_in: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in _SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {_SCENARIOS}")
        if not (isinstance(self.K, int) and self.K >= 1):
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if not (isinstance(self.T, int) and self.T >= 1):
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if not (isinstance(self.burn_in, int) and self.burn_in >= 0):
            raise ValueError(f"burn_in must be a nonnegative integer, got {self.burn_in}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be a nonnegative real, got {self.delta}")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.omega is not None:
            omega = tuple(float(w) for w in self.omega)
            if len(omega) != self.K:
                raise ValueError(f"omega must have one entry per site ({self.K}), got {len(omega)}")
            object.__setattr__(self, "omega", omega)
        if sum(abs(a) for a in self.alpha) >= 1.0:
            raise ValueError("unstable truth: sum |alpha_j| must be < 1 for simulation")
        if self.covariate_means is not None:
            means = tuple(float(v) for v in self.covariate_means)
            if len(means) != self.m or any(v <= 0 for v in means):
                raise ValueError(f"covariate_means must be {self.m} positive reals")
            object.__setattr__(self, "covariate_means", means)
        if self.size_means is not None:
            sm = tuple(float(v) for v in self.size_means)
            if len(sm) != self.K or any(v <= 0 for v in sm):
                raise ValueError(f"size_means must be {self.K} positive reals")
            object.__setattr__(self, "size_means", sm)
        if self.size_constant is not None and not (
            isinstance(self.size_constant, int) and self.size_constant >= 1
        ):
            raise ValueError(f"size_constant must be a positive integer, got {self.size_constant}")
        if self.scenario == "custom":
            if self.custom_covariates is None:
                arr = np.zeros((self.K, self.burn_in + self.p + self.T, 0))
            else:
                arr = np.asarray(self.custom_covariates, dtype=float)
            want = (self.K, self.burn_in + self.p + self.T, self.m)
            if arr.shape != want:
                raise ValueError(f"custom_covariates must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("custom_covariates must be finite")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, "custom_covariates", arr)
        elif self.custom_covariates is not None:
            raise ValueError("custom_covariates only apply to the 'custom' scenario")

    @property
    def p(self) -> int:
        return len(self.alpha)

    @property
    def m(self) -> int:
        return len(self.beta)


@dataclass(frozen=True)
class ResolvedSimulation:
    """A config with all experiment-level draws materialized."""

    config: SimulationConfig
    theta_true: ParameterVector
    covariate_means: np.ndarray
    size_means: np.ndarray | None  # None when sizes are constant


def resolve(config: SimulationConfig) -> ResolvedSimulation:
    """Materialize omega, covariate means and Poisson means for an experiment.

    Draws that the config leaves open are taken from experiment-level
    substreams keyed only by site, so every replicate of the experiment
    sees the same values.  (The default laws scale with K, omega uniform
    on (-K/2, K/2) and size means exponential with mean K, so growing K
    rescales them; pin omega and size_means explicitly when panels must
    be invariant to adding sites.)
    """
    K = config.K
    if config.omega is not None:
        omega = np.array(config.omega, dtype=float)
    else:
        half = 0.5 * K
        omega = np.array(
            [streams.substream(config.seed, streams.OMEGA, k).uniform(-half, half) for k in range(K)]
        )
    theta = ParameterVector(
        delta=config.delta, omega=omega, alpha=np.array(config.alpha), beta=np.array(config.beta)
    )
    if not check_stability(theta).stable:
        raise ValueError("unstable truth: sum |alpha_j| must be < 1 for simulation")
    means = (
        np.array(config.covariate_means, dtype=float)
        if config.covariate_means is not None
        else np.ones(config.m)
    )
    if config.size_constant is not None:
        size_means = None
    elif config.size_means is not None:
        size_means = np.array(config.size_means, dtype=float)
    else:
        size_means = np.array(
            [streams.substream(config.seed, streams.TAU, k).exponential(K) for k in range(K)]
        )
    return ResolvedSimulation(
        config=config, theta_true=theta, covariate_means=means, size_means=size_means
    )


@dataclass(frozen=True)
class SimulationStats:
    """Diagnostics from one simulated panel."""

    truncated_steps: int
    total_steps: int

    @property
    def truncation_rate(self) -> float:
        return self.truncated_steps / self.total_steps if self.total_steps else 0.0


def _draw_size(gen: np.random.Generator, tau: float) -> tuple[int, bool]:
    """One zero-truncated Poisson(tau) draw; the flag marks a discarded zero.

    Above a small tau the literal redraw loop is cheap.  Below it the loop
    would spin on the order of 1/tau times per step, so the truncated law is
    sampled exactly by inversion instead; those steps are counted as
    truncated since a raw zero was all but certain.
    """
    if tau >= 0.01:
        n = int(gen.poisson(tau))
        truncated = n == 0
        while n == 0:
            n = int(gen.poisson(tau))
        return n, truncated
    u = float(gen.uniform())
    norm = math.expm1(tau)
    term = tau
    cum = term
    j = 1
    while u * norm > cum:
        j += 1
        term *= tau / j
        cum += term
    return j, True


def _covariate_paths(res: ResolvedSimulation, replicate: int, steps: int) -> np.ndarray:
    """Covariate values for every site and simulated step, shape (K, steps, m)."""
    cfg = res.config
    K, m = cfg.K, cfg.m
    if cfg.scenario == "custom":
        return cfg.custom_covariates
    if m == 0:
        return np.zeros((K, steps, 0))
    if cfg.scenario == "scenario1":
        path = np.empty((steps, m))
        for i in range(steps):
            gen = streams.substream(cfg.seed, streams.COVARIATE, replicate, streams.SHARED, i)
            path[i] = gen.exponential(res.covariate_means)
        return np.broadcast_to(path, (K, steps, m))
    out = np.empty((K, steps, m))
    for k in range(K):
        site_means = 0.4 * (k + 1) * res.covariate_means
        for i in range(steps):
            gen = streams.substream(cfg.seed, streams.COVARIATE, replicate, k + 1, i)
            out[k, i] = gen.exponential(site_means)
    return out


def simulate_panel_detailed(
    source: SimulationConfig | ResolvedSimulation, replicate: int = 0
) -> tuple[PanelSeries, SimulationStats]:
    """Simulate one panel and return it with its diagnostics.

    The recursion runs burn_in + p + T steps per site; the first burn_in
    steps are discarded, the next p become the presample, the rest the
    observed window.  Before any value exists the lag ratios are seeded at
    the covariate-free level softplus(delta, omega_k); with the default
    burn-in the influence of that choice is far below double precision.
    """
    res = source if isinstance(source, ResolvedSimulation) else resolve(source)
    cfg = res.config
    K, T, p, m = cfg.K, cfg.T, cfg.p, cfg.m
    theta = res.theta_true
    delta = theta.delta
    alpha = theta.alpha
    steps = cfg.burn_in + p + T

    x_all = _covariate_paths(res, replicate, steps)
    y_all = np.empty((K, steps))
    n_all = np.empty((K, steps), dtype=int)
    truncated = 0

    for k in range(K):
        omega_k = theta.omega[k]
        seed_ratio = softplus(delta, omega_k)
        # Accumulate beta' x column by column rather than with a matrix
        # product: blocked BLAS kernels can round tail rows differently
        # for different path lengths, and a step's value must not depend
        # on how many steps are simulated or longer panels would stop
        # extending shorter ones bit-exactly.
        bx = np.zeros(steps)
        for c in range(m):
            bx += theta.beta[c] * x_all[k, :, c]
        ratios = np.empty(steps)
        tau = res.size_means[k] if res.size_means is not None else None
        for i in range(steps):
            eta = omega_k + bx[i]
            for j in range(1, p + 1):
                lag = ratios[i - j] if i - j >= 0 else seed_ratio
                eta += alpha[j - 1] * lag
            lam = softplus(delta, eta)
            if tau is None:
                n = cfg.size_constant
            else:
                n, was_truncated = _draw_size(
                    streams.substream(cfg.seed, streams.SIZE, replicate, k, i), tau
                )
                truncated += was_truncated
            units = cfg.unit_dist.draw(
                streams.substream(cfg.seed, streams.UNITS, replicate, k, i), lam, n
            )
            y = float(units.sum())
            y_all[k, i] = y
            n_all[k, i] = n
            ratios[i] = y / n

    window = slice(cfg.burn_in, steps)
    panel = PanelSeries(
        site_ids=tuple(f"site{k + 1}" for k in range(K)),
        years=np.arange(1 - p, T + 1),
        p=p,
        y=y_all[:, window],
        n=n_all[:, window],
        x=x_all[:, cfg.burn_in + p :, :].copy(),
        covariate_names=tuple(f"x{i + 1}" for i in range(m)),
    )
    return panel, SimulationStats(truncated_steps=truncated, total_steps=K * steps)


def simulate_panel(
    source: SimulationConfig | ResolvedSimulation, replicate: int = 0
) -> PanelSeries:
    """Simulate one panel; see ``simulate_panel_detailed`` for diagnostics."""
    panel, _ = simulate_panel_detailed(source, replicate)
    return panel


def scenario1_study_config(K: int, T: int, seed: int, burn_in: int = 500) -> SimulationConfig:
    """The stock ten-covariate study design on shared exponential covariates.

    Truth: delta 0.5, alpha_1 0.6, beta (0, 1, -1, 0.5, -0.5, -1.5, 1.5,
    -2, 2, 0); omega and the Poisson size means are drawn once per
    experiment from the seed.
    """
    return SimulationConfig(
        scenario="scenario1",
        K=K,
        T=T,
        delta=0.5,
        alpha=(0.6,),
        beta=(0.0, 1.0, -1.0, 0.5, -0.5, -1.5, 1.5, -2.0, 2.0, 0.0),
        burn_in=burn_in,
        seed=seed,
    )
