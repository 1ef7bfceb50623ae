"""Classical reference estimators: ridge base learners, IPW, AIPW, X-learner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

EPS_CLIP = 0.01


def _augment(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _solve_ridge(a, b, lam):
    """Solve (AᵀA + λI*)w = Aᵀb with the intercept column unpenalized."""
    gram = a.T @ a
    penalty = np.full(a.shape[1], lam)
    penalty[0] = 0.0
    gram = gram + np.diag(penalty)
    try:
        return np.linalg.solve(gram, a.T @ b)
    except np.linalg.LinAlgError as err:
        raise NumericError(
            f"normal equations are singular ({err}); set a ridge penalty > 0"
        ) from None


@dataclass
class OutcomeRegression:
    coef: np.ndarray
    intercept: float
    lam: float

    def predict(self, x):
        return np.asarray(x) @ self.coef + self.intercept


def fit_ols(x, y, lam=0.0):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = _solve_ridge(_augment(x), y, lam)
    if not np.all(np.isfinite(w)):
        raise NumericError("regression produced non-finite coefficients")
    return OutcomeRegression(coef=w[1:], intercept=float(w[0]), lam=lam)


@dataclass
class PropensityModel:
    coef: np.ndarray
    intercept: float
    eps_clip: float = EPS_CLIP

    def predict(self, x):
        logit = np.asarray(x) @ self.coef + self.intercept
        p = 1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500)))
        return np.clip(p, self.eps_clip, 1.0 - self.eps_clip)

    def predict_raw(self, x):
        logit = np.asarray(x) @ self.coef + self.intercept
        return 1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500)))


def fit_logistic(x, t, lam=1e-4, max_iter=500, tol=1e-6, eps_clip=EPS_CLIP):
    """Ridge logistic regression by iteratively reweighted least squares."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t)
    uniq = np.unique(t)
    if not np.all(np.isin(uniq, (0, 1))):
        raise DataError(f"treatment must be binary 0/1, found values {uniq}")
    t = t.astype(np.float64)
    a = _augment(x)
    w = np.zeros(a.shape[1])
    penalty = np.full(a.shape[1], lam)
    penalty[0] = 0.0
    for _ in range(max_iter):
        eta = np.clip(a @ w, -500, 500)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = a.T @ (t - p) - penalty * w
        if np.linalg.norm(grad) < tol:
            break
        weights = np.maximum(p * (1.0 - p), 1e-10)
        hess = (a * weights[:, None]).T @ a + np.diag(np.maximum(penalty, 1e-12))
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as err:
            raise NumericError(f"IRLS system became singular ({err})") from None
        w = w + step
    if not np.all(np.isfinite(w)):
        raise NumericError("logistic fit diverged to non-finite coefficients")
    return PropensityModel(coef=w[1:], intercept=float(w[0]), eps_clip=eps_clip)


# ---------------------------------------------------------------------------
# weighting estimators


def _clip_propensity(e_hat, eps_clip):
    e = np.clip(np.asarray(e_hat, dtype=np.float64), eps_clip, 1.0 - eps_clip)
    if not np.all((e > 0.0) & (e < 1.0)):
        raise NumericError("propensities remain outside (0, 1) after clipping")
    return e


def ipw_ate(data, e_hat, eps_clip=EPS_CLIP):
    e = _clip_propensity(e_hat, eps_clip)
    t = data.t.astype(np.float64)
    terms = t * data.y / e - (1.0 - t) * data.y / (1.0 - e)
    return float(terms.mean())


def aipw_ate(data, e_hat, mu0, mu1, eps_clip=EPS_CLIP):
    e = _clip_propensity(e_hat, eps_clip)
    t = data.t.astype(np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    terms = (
        mu1
        - mu0
        + t * (data.y - mu1) / e
        - (1.0 - t) * (data.y - mu0) / (1.0 - e)
    )
    return float(terms.mean())


# ---------------------------------------------------------------------------
# X-learner with ridge base learners


@dataclass
class XLearnerResult:
    cate: np.ndarray
    ate: float
    propensity: np.ndarray
    tau0: OutcomeRegression | None = None
    tau1: OutcomeRegression | None = None
    g_model: PropensityModel | None = None

    def predict_cate(self, x):
        g = self.g_model.predict(x)
        return g * self.tau0.predict(x) + (1.0 - g) * self.tau1.predict(x)


def x_learner(data, lam=1e-6, lam_propensity=1e-4, eps_clip=EPS_CLIP):
    """Imputed-effect meta-learner, propensity-weighted combination."""
    treated = data.t == 1
    control = ~treated
    if not treated.any() or not control.any():
        empty = 1 if not treated.any() else 0
        raise DataError(f"arm {empty} has no units; the imputation stages need both")
    mu0 = fit_ols(data.x[control], data.y[control], lam)
    mu1 = fit_ols(data.x[treated], data.y[treated], lam)
    d1 = data.y[treated] - mu0.predict(data.x[treated])
    d0 = mu1.predict(data.x[control]) - data.y[control]
    tau1 = fit_ols(data.x[treated], d1, lam)
    tau0 = fit_ols(data.x[control], d0, lam)
    g_model = fit_logistic(data.x, data.t, lam_propensity, eps_clip=eps_clip)
    g = g_model.predict(data.x)
    cate = g * tau0.predict(data.x) + (1.0 - g) * tau1.predict(data.x)
    return XLearnerResult(
        cate=cate,
        ate=float(cate.mean()),
        propensity=g,
        tau0=tau0,
        tau1=tau1,
        g_model=g_model,
    )
