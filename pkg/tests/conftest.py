"""Shared builders for small random panels and parameter vectors."""

import numpy as np

from randsum import PanelSeries, ParameterVector


def make_panel(rng, K=3, T=8, p=1, m=2):
    """A small valid panel with positive growth and mixed sample sizes."""
    y = rng.uniform(0.5, 5.0, size=(K, p + T))
    n = rng.integers(1, 6, size=(K, p + T))
    x = rng.normal(0.0, 1.0, size=(K, T, m))
    return PanelSeries(
        site_ids=tuple(f"site{k + 1}" for k in range(K)),
        years=np.arange(1 - p, T + 1),
        p=p,
        y=y,
        n=n,
        x=x,
        covariate_names=tuple(f"x{i + 1}" for i in range(m)),
    )


def make_theta(rng, K=3, p=1, m=2):
    """A random stable parameter vector matching ``make_panel`` shapes."""
    alpha = rng.uniform(-0.8, 0.8, size=p)
    total = np.sum(np.abs(alpha))
    if total >= 0.9:
        alpha *= 0.9 / total
    return ParameterVector(
        delta=float(rng.uniform(0.05, 1.5)),
        omega=rng.normal(0.0, 0.7, size=K),
        alpha=alpha,
        beta=rng.normal(0.0, 0.5, size=m),
    )
