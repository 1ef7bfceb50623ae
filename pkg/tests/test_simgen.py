import numpy as np
import pytest
from scipy.special import expit

from moca.errors import ConfigError, SchemaError
from moca.simgen import (
    NONLINEAR_ATE,
    SCENARIO_NAMES,
    generate,
    highdim_betas,
    mc_ate,
    read_csv,
    scenario_p,
    true_ate,
    write_csv,
)

SMALL = ("linear", "nonlinear", "hidden", "hidden-multiU", "tdist")


def test_scenario_names_and_dimensions():
    assert set(SCENARIO_NAMES) == {
        "linear", "nonlinear", "hidden", "hidden-multiU", "tdist", "highdim",
    }
    for name in SMALL:
        assert scenario_p(name) == 5
    assert scenario_p("highdim") == 300


def test_unknown_scenario_and_tiny_n_rejected():
    with pytest.raises(ConfigError):
        generate("cubic", 10, 0)
    with pytest.raises(ConfigError):
        true_ate("cubic")
    with pytest.raises(ConfigError):
        generate("linear", 1, 0)


def test_zero_covariates_give_intercept_propensity():
    # expit is the only link: expit(0) must be 0.5, and the linear
    # scenario's intercept alone puts the propensity at expit(-0.3)
    assert expit(0.0) == 0.5
    from moca.simgen import _linear_eta

    eta = _linear_eta(np.zeros((1, 5)))
    assert eta[0] == -0.3
    assert abs(expit(eta[0]) - 0.42555748318834102) < 1e-15


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_consistency_identity_rowwise(name):
    ds = generate(name, 500, 3)
    assert np.array_equal(ds.y, np.where(ds.t == 1, ds.y1, ds.y0))
    assert np.array_equal(ds.cate, ds.mu1 - ds.mu0)


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_bitwise_determinism_per_address(name):
    a = generate(name, 200, 7, path=(4,))
    b = generate(name, 200, 7, path=(4,))
    for field in ("x", "t", "y", "mu0", "mu1", "propensity"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    c = generate(name, 200, 7, path=(5,))
    assert not np.array_equal(a.x, c.x)
    d = generate(name, 200, 8, path=(4,))
    assert not np.array_equal(a.x, d.x)


def test_covariate_moments_normal():
    ds = generate("linear", 20_000, 11)
    n = ds.n
    assert np.all(np.abs(ds.x.mean(axis=0)) < 4 / np.sqrt(n))
    assert np.all(np.abs(ds.x.var(axis=0) - 1.0) < 4 * np.sqrt(2.0 / n))


def test_covariate_moments_t3():
    # t3 has variance 3 but an infinite fourth moment, so the sample
    # variance gets only a broad deterministic band
    ds = generate("tdist", 50_000, 13)
    assert np.all(np.abs(ds.x.mean(axis=0)) < 4 * np.sqrt(3.0 / ds.n))
    v = ds.x.var(axis=0)
    assert np.all((v > 2.0) & (v < 4.5))


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_treatment_marginal_matches_propensity_mean(name):
    ds = generate(name, 20_000, 17)
    se = np.sqrt(0.5 / ds.n)
    assert abs(ds.t.mean() - ds.propensity.mean()) < 4 * se
    # true propensities live in [0,1]; heavy-tailed eta may saturate the
    # float boundary exactly, which is the scenario's positivity hazard
    assert np.all((ds.propensity >= 0) & (ds.propensity <= 1))


def test_hidden_latents_shape_and_absence_from_x():
    one = generate("hidden", 300, 19)
    multi = generate("hidden-multiU", 300, 19)
    assert one.latent.shape == (300, 1)
    assert multi.latent.shape == (300, 3)
    assert one.x.shape == (300, 5)
    assert multi.x.shape == (300, 5)


@pytest.mark.parametrize("name", ["hidden", "hidden-multiU"])
def test_hidden_logit_not_a_function_of_x(name):
    ds = generate(name, 2000, 23)
    eta = np.log(ds.propensity / (1.0 - ds.propensity))
    a = np.hstack([np.ones((ds.n, 1)), ds.x])
    coef, *_ = np.linalg.lstsq(a, eta, rcond=None)
    resid = eta - a @ coef
    # the latent terms leave variance no covariate regression can remove
    assert resid.var() > 1.0


def test_highdim_betas_are_experiment_level():
    beta0a, beta1a = highdim_betas(31)
    beta0b, beta1b = highdim_betas(31)
    assert np.array_equal(beta0a, beta0b) and np.array_equal(beta1a, beta1b)
    ds = generate("highdim", 50, 31, path=(2,))
    assert np.allclose(ds.mu0, 1.0 + ds.x @ beta0a, atol=1e-12)
    assert np.allclose(ds.mu1, 2.0 + ds.x @ beta1a, atol=1e-12)
    # replicates on other paths keep the same surfaces
    ds2 = generate("highdim", 50, 31, path=(3,))
    assert np.allclose(ds2.mu0, 1.0 + ds2.x @ beta0a, atol=1e-12)


def test_highdim_fresh_betas_flag_redraws():
    ds = generate("highdim", 50, 37, path=(0,), fresh_betas=True)
    beta0, _ = highdim_betas(37)
    assert not np.allclose(ds.mu0, 1.0 + ds.x @ beta0)


def test_true_ate_closed_forms():
    assert true_ate("linear") == 1.0
    assert true_ate("tdist") == 1.0
    assert true_ate("hidden") == 1.0
    assert true_ate("hidden-multiU") == 1.0
    assert true_ate("highdim") == 1.0
    assert abs(true_ate("nonlinear") - 1.9278367916551602) < 1e-15
    assert true_ate("nonlinear") == NONLINEAR_ATE


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_mc_oracle_agrees_with_closed_form(name):
    est, se = mc_ate(name, n=100_000, seed=41)
    assert abs(est - true_ate(name)) < 3 * se


# ---------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip_is_exact(tmp_path):
    ds = generate("linear", 64, 43)
    path = tmp_path / "sim.csv"
    write_csv(ds, path)
    back = read_csv(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.t, ds.t)
    assert np.array_equal(back.y, ds.y)
    assert np.array_equal(back.mu0, ds.mu0)
    assert np.array_equal(back.propensity, ds.propensity)
    header = path.read_text().splitlines()[0]
    assert header == "x1,x2,x3,x4,x5,t,y,mu0,mu1,cate,ps"


def test_csv_without_truth_columns(tmp_path):
    ds = generate("nonlinear", 20, 47)
    path = tmp_path / "plain.csv"
    write_csv(ds, path, include_truth=False)
    back = read_csv(path)
    assert back.mu0 is None
    assert np.array_equal(back.y, ds.y)


def test_csv_header_validation(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(SchemaError):
        read_csv(path)
