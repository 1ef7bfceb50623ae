"""Seeded simulation scenarios with ground truth attached.

Six data-generating processes over iid covariates: linear, nonlinear,
hidden (one latent confounder), hidden-multiU (three), tdist (linear
coefficients, t3 covariates), highdim (p=300, dense random outcome
slopes). Treatment is Bernoulli(expit(eta)); each potential outcome gets
its own N(0,1) noise; the observed outcome obeys the consistency identity
Y = T*Y(1) + (1-T)*Y(0) by construction.

Draw-order contract per generate() call (fixed; changing it breaks every
golden fixture): covariates, latent confounders, treatment uniforms,
arm-0 noise, arm-1 noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .datasets import Dataset
from .errors import ConfigError, SchemaError
from .rng import stream

SCENARIO_IDS = {
    "linear": 0,
    "nonlinear": 1,
    "hidden": 2,
    "hidden-multiU": 3,
    "tdist": 4,
    "highdim": 5,
}
SCENARIO_NAMES = tuple(SCENARIO_IDS)

HIGHDIM_P = 300
BETA_SCALE = 0.2
# E[mu1 - mu0] for the nonlinear surfaces, via E[cos X]=exp(-1/2),
# E[sin X]=0, E[X^2]=1, E[X4 X5]=0 for X ~ N(0,1)
NONLINEAR_ATE = 1.2 + 1.2 * np.exp(-0.5)

_TRUE_ATES = {
    "linear": 1.0,
    "nonlinear": NONLINEAR_ATE,
    "hidden": 1.0,
    "hidden-multiU": 1.0,
    "tdist": 1.0,
    "highdim": 1.0,
}


def scenario_p(name):
    _check_scenario(name)
    return HIGHDIM_P if name == "highdim" else 5


def true_ate(name):
    """Closed-form population ATE (all regressors are zero-mean)."""
    _check_scenario(name)
    return _TRUE_ATES[name]


def _check_scenario(name):
    if name not in SCENARIO_IDS:
        raise ConfigError(
            f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}"
        )


@dataclass
class SimulatedDataset(Dataset):
    scenario: str = ""
    seed: int = 0
    latent: np.ndarray | None = None  # hidden confounders, never part of x
    y0: np.ndarray | None = None  # both potential outcomes, noise included
    y1: np.ndarray | None = None


def _linear_eta(x):
    return -0.3 + 1.6 * x[:, 0] - 2.0 * x[:, 1] + 1.0 * x[:, 2] + 1.2 * x[:, 3] + 0.8 * x[:, 4]


def _linear_mu(x):
    mu0 = 1.0 + 1.0 * x[:, 0] + 0.5 * x[:, 1] - 0.5 * x[:, 2] + 1.8 * x[:, 3] - 0.2 * x[:, 4]
    mu1 = 2.0 + 1.2 * x[:, 0] + 0.3 * x[:, 1] - 0.1 * x[:, 2] + 0.2 * x[:, 3] - 1.6 * x[:, 4]
    return mu0, mu1


def _nonlinear_eta(x):
    return -0.3 + 0.6 * x[:, 0] - 2.0 * np.sin(x[:, 1]) + 1.8 * x[:, 2] ** 2 + x[:, 3] * x[:, 4]


def _nonlinear_mu(x):
    mu0 = 1.0 + x[:, 0] + 0.5 * np.sin(x[:, 1]) - 0.5 * x[:, 2] ** 2 + 1.5 * x[:, 3] * x[:, 4]
    mu1 = 2.0 + 1.2 * np.cos(x[:, 0]) + 0.8 * x[:, 1] * x[:, 2] - 0.3 * x[:, 3] ** 2 + 0.5 * x[:, 4]
    return mu0, mu1


def _hidden_eta(x, u):
    return -0.3 + 1.2 * x[:, 0] - 1.0 * x[:, 1] + 0.8 * x[:, 2] + 0.5 * x[:, 3] + 1.5 * u[:, 0]


def _hidden_mu(x, u):
    mu0 = 1.0 + 1.0 * x[:, 0] + 0.5 * x[:, 1] - 0.5 * x[:, 2] + 1.2 * x[:, 3] + 3.0 * u[:, 0]
    mu1 = 2.0 + 1.0 * x[:, 0] + 0.3 * x[:, 1] - 0.2 * x[:, 2] + 0.8 * x[:, 4] + 1.5 * u[:, 0]
    return mu0, mu1


def _multiu_eta(x, u):
    return (
        -0.3 + 1.2 * x[:, 0] - 1.0 * x[:, 1] + 0.8 * x[:, 2] + 0.5 * x[:, 3]
        + 1.5 * u[:, 0] + 1.0 * u[:, 1] - 0.8 * u[:, 2]
    )


def _multiu_mu(x, u):
    mu0 = (
        1.0 + 1.0 * x[:, 0] + 0.5 * x[:, 1] - 0.5 * x[:, 2] + 1.2 * x[:, 3]
        + 3.0 * u[:, 0] + 2.0 * u[:, 1] - 1.0 * u[:, 2]
    )
    mu1 = (
        2.0 + 1.0 * x[:, 0] + 0.3 * x[:, 1] - 0.2 * x[:, 2] + 0.8 * x[:, 4]
        + 1.5 * u[:, 0] + 1.0 * u[:, 1] - 0.2 * u[:, 2]
    )
    return mu0, mu1


def _highdim_eta(x):
    return -2.0 + 1.6 * x[:, 0] - 2.2 * x[:, 1] + 3.1 * x[:, 2] + 1.2 * x[:, 3] + 2.1 * x[:, 4]


def highdim_betas(seed, fresh_rng=None):
    """Outcome slopes for the high-dimensional scenario.

    Default: drawn from a scenario-level stream keyed by the root seed
    alone, so every replicate of one experiment shares the same surfaces
    and the true ATE stays well-defined across replicates. Passing the
    data-level generator instead redraws them per replicate.
    """
    rng = fresh_rng if fresh_rng is not None else stream(seed, SCENARIO_IDS["highdim"], 999)
    beta0 = rng.normal(0.0, BETA_SCALE, size=HIGHDIM_P)
    beta1 = rng.normal(0.0, BETA_SCALE, size=HIGHDIM_P)
    return beta0, beta1


def _draw_t3(rng, shape):
    z = rng.standard_normal(shape)
    chi = rng.chisquare(3, size=shape)
    return z / np.sqrt(chi / 3.0)


def generate(scenario, n, seed, path=(), fresh_betas=False):
    """One dataset on the stream addressed by (seed, scenario_id, *path)."""
    _check_scenario(scenario)
    if n < 2:
        raise ConfigError(f"need n >= 2, got {n}")
    sid = SCENARIO_IDS[scenario]
    rng = stream(seed, sid, *path)
    p = scenario_p(scenario)

    if scenario == "tdist":
        x = _draw_t3(rng, (n, p))
    else:
        x = rng.standard_normal((n, p))

    latent = None
    if scenario == "hidden":
        latent = rng.standard_normal((n, 1))
    elif scenario == "hidden-multiU":
        latent = rng.standard_normal((n, 3))

    if scenario in ("linear", "tdist"):
        eta = _linear_eta(x)
        mu0, mu1 = _linear_mu(x)
    elif scenario == "nonlinear":
        eta = _nonlinear_eta(x)
        mu0, mu1 = _nonlinear_mu(x)
    elif scenario == "hidden":
        eta = _hidden_eta(x, latent)
        mu0, mu1 = _hidden_mu(x, latent)
    elif scenario == "hidden-multiU":
        eta = _multiu_eta(x, latent)
        mu0, mu1 = _multiu_mu(x, latent)
    else:
        eta = _highdim_eta(x)
        beta0, beta1 = highdim_betas(seed, rng if fresh_betas else None)
        mu0 = 1.0 + x @ beta0
        mu1 = 2.0 + x @ beta1

    ps = expit(eta)
    t = (rng.uniform(size=n) < ps).astype(np.int64)
    y0 = mu0 + rng.standard_normal(n)
    y1 = mu1 + rng.standard_normal(n)
    y = np.where(t == 1, y1, y0)
    return SimulatedDataset(
        x=x,
        t=t,
        y=y,
        mu0=mu0,
        mu1=mu1,
        cate=mu1 - mu0,
        propensity=ps,
        scenario=scenario,
        seed=seed,
        latent=latent,
        y0=y0,
        y1=y1,
    )


def mc_ate(scenario, n=1_000_000, seed=12345, chunk=100_000, fresh_betas=False):
    """Monte Carlo estimate of E[mu1 - mu0] with its standard error."""
    _check_scenario(scenario)
    total = 0.0
    total_sq = 0.0
    done = 0
    block = 0
    while done < n:
        m = min(chunk, n - done)
        ds = generate(scenario, m, seed, path=(888, block), fresh_betas=fresh_betas)
        diff = ds.mu1 - ds.mu0
        total += diff.sum()
        total_sq += (diff * diff).sum()
        done += m
        block += 1
    mean = total / n
    var = total_sq / n - mean * mean
    return mean, float(np.sqrt(var / n))


# ---------------------------------------------------------------------------
# CSV round trip: x1..xp,t,y[,mu0,mu1,cate,ps], floats at 17 significant digits

_TRUTH_COLS = ("mu0", "mu1", "cate", "ps")


def write_csv(ds, path, include_truth=True):
    cols = [f"x{j + 1}" for j in range(ds.p)] + ["t", "y"]
    if include_truth:
        if ds.mu0 is None or ds.mu1 is None:
            raise SchemaError("dataset has no ground truth to include")
        cols += list(_TRUTH_COLS)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(ds.n):
            row = [f"{v:.17g}" for v in ds.x[i]] + [str(int(ds.t[i])), f"{ds.y[i]:.17g}"]
            if include_truth:
                row += [
                    f"{ds.mu0[i]:.17g}",
                    f"{ds.mu1[i]:.17g}",
                    f"{ds.cate[i]:.17g}",
                    f"{ds.propensity[i]:.17g}",
                ]
            writer.writerow(row)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        rows = [row for row in reader]
    p = sum(1 for c in header if c.startswith("x"))
    expected = [f"x{j + 1}" for j in range(p)] + ["t", "y"]
    has_truth = header[len(expected):] == list(_TRUTH_COLS)
    if header[: len(expected)] != expected or not (
        has_truth or len(header) == len(expected)
    ):
        raise SchemaError(
            f"{path}: expected columns x1..xp,t,y[,mu0,mu1,cate,ps], got {header}"
        )
    data = np.array([[float(v) for v in row] for row in rows])
    if data.size == 0:
        raise SchemaError(f"{path}: no data rows")
    x = data[:, :p]
    t = data[:, p].astype(np.int64)
    y = data[:, p + 1]
    if has_truth:
        mu0, mu1, cate, ps = (data[:, p + 2 + k] for k in range(4))
        return Dataset(x, t, y, mu0=mu0, mu1=mu1, cate=cate, propensity=ps)
    return Dataset(x, t, y)
