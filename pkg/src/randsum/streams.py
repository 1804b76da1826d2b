"""Reproducible random substreams keyed by purpose and position.

Every random draw in the simulator comes from a generator derived here.  A
stream depends only on the experiment seed and its own integer key, never on
how much randomness any other stream consumed.  That gives two properties
the simulation design relies on:

* extending a panel in T reuses the exact per-step streams of the shorter
  panel, so the shorter panel is a bit-exact prefix of the longer one;
* work can be split across processes in any way without reordering draws.
"""

from __future__ import annotations

import numpy as np

# Key layout is (purpose, *indices).  Experiment-level draws are keyed only
# by site so that every replicate of the same experiment shares them.
OMEGA = 1  # site intercept draw, key (OMEGA, site)
TAU = 2  # site Poisson-mean draw, key (TAU, site)
SIZE = 3  # sample-size draw, key (SIZE, replicate, site, step)
UNITS = 4  # unit-variable draws, key (UNITS, replicate, site, step)
COVARIATE = 5  # covariate draw, key (COVARIATE, replicate, site_code, step)

# Covariate streams use site_code = SHARED when one path is copied to every
# site, and site k maps to code k + 1 when sites draw their own paths.
SHARED = 0


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the independent generator for ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(part) for part in key))
    return np.random.Generator(np.random.PCG64(ss))
