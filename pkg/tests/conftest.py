import numpy as np
import pytest

from misdid.panel import Panel


def make_panel(d, y, n=None, ids=None, **latent):
    d = np.asarray(d)
    y = np.asarray(y, dtype=float)
    n = np.ones(d.shape) if n is None else np.asarray(n, dtype=float)
    ids = tuple(range(1, d.shape[0] + 1)) if ids is None else tuple(ids)
    return Panel(ids, n, y, d, **latent)


@pytest.fixture
def f1():
    # groups A, B, C over three periods, unit cell sizes
    return make_panel(
        d=[[0, 0, 1], [0, 1, 1], [0, 0, 0]],
        y=[[0, 1, 5], [0, 4, 5], [0, 1, 2]],
        ids=("A", "B", "C"),
    )


def noiseless_panel(
    G=24,
    T=6,
    delta=2.0,
    late_share=0.0,
    n_never=3,
    seed=0,
    effects=None,
    n_varies=False,
    integer=False,
):
    """Outcomes = group level + common time profile + effect from the true onset.

    Cohorts cycle over periods 2..T. Within each cohort starting before T
    the first ``late_share`` of its groups are recorded one period late.
    ``effects`` gives a per-period effect path (defaults to constant
    ``delta``). ``integer`` rounds levels and the time profile so that
    every contrast is computed exactly. Latent truth is attached.
    """
    rng = np.random.default_rng(seed)
    treated = G - n_never
    t0 = np.zeros(G, dtype=int)
    t0[:treated] = 2 + np.arange(treated) % (T - 1)
    t_obs = t0.copy()
    for c in range(2, T):
        members = np.flatnonzero(t0 == c)
        k = int(round(late_share * len(members)))
        t_obs[members[:k]] = c + 1
    periods = np.arange(1, T + 1)
    d_true = ((t0[:, None] > 0) & (periods >= t0[:, None])).astype(float)
    d = ((t_obs[:, None] > 0) & (periods >= t_obs[:, None])).astype(np.int8)
    s_true = (periods == t0[:, None]).astype(float)
    eff_path = np.full(T, float(delta)) if effects is None else np.asarray(effects, dtype=float)
    effect = np.tile(eff_path, (G, 1))
    level = rng.normal(0, 3, size=G)
    profile = np.cumsum(rng.normal(0, 1, size=T))
    if integer:  # exact arithmetic throughout
        level, profile = np.round(level), np.round(profile)
    y = level[:, None] + profile[None, :] + effect * d_true
    if n_varies:
        n = np.tile(rng.integers(1, 9, size=G)[:, None], (1, T)).astype(float)
    else:
        n = np.ones((G, T))
    return Panel(tuple(range(1, G + 1)), n, y, d, d_true=d_true, s_true=s_true, effect=effect)


def random_panel(rng, G=None, T=None, never_share=0.2):
    """Valid staggered panel with random cell sizes and noisy outcomes."""
    G = G or int(rng.integers(6, 30))
    T = T or int(rng.integers(3, 8))
    t_obs = rng.integers(2, T + 2, size=G)  # T + 1: never treated
    t_obs[rng.random(G) < never_share] = T + 1
    periods = np.arange(1, T + 1)
    d = (periods >= t_obs[:, None]).astype(np.int8)
    n = rng.integers(1, 20, size=(G, T)).astype(float)
    y = rng.normal(size=(G, T)) + d * rng.normal(2, 1, size=(G, 1))
    return Panel(tuple(range(G)), n, y, d)


def brute_delta(panel):
    """Switcher-cell and true-switcher average effects by explicit loops."""
    num_s = den_s = num_star = den_star = 0.0
    for g in range(panel.G):
        for j in range(1, panel.T):
            w = panel.n[g, j]
            if panel.d[g, j - 1] == 0 and panel.d[g, j] == 1:
                num_s += w * panel.effect[g, j]
                den_s += w
            share = panel.s_true[g, j]
            num_star += w * share * panel.effect[g, j]
            den_star += w * share
    return num_s / den_s, num_star / den_star
