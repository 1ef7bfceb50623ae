"""Shared-trunk counterfactual regressors.

One training routine covers both nets: a two-layer GELU trunk feeding two
outcome heads, plus an optional propensity head whose BCE term is weighted
by alpha. alpha = 0 is the plain factual regressor; the alpha = 0 branch
skips the propensity term entirely, so it reproduces the alpha-free
trajectory bitwise. With alpha > 0 the treatment gradient flows through the
trunk — exactly the upstream contamination the two-module estimator's cut
is designed to prevent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import backward, bce, constant, mse, no_grad, reshape, sigmoid
from .errors import ConfigError, DataError
from .model import EarlyStop, EstimateResult, ParamStore
from .nn import HeadParams, linear, linear_params, mlp_head
from .optim import Adam
from .rng import stream


@dataclass
class RepConfig:
    p: int
    width: int = 64
    lr: float = 1e-3
    epochs: int = 300
    batch_size: int = 64
    patience: int = 30
    seed: int = 0
    alpha: float = 1.0  # weight of the propensity BCE term

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError(f"need at least one covariate, got p={self.p}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.alpha < 0:
            raise ConfigError(f"treatment-loss weight must be >= 0, got {self.alpha}")


class SharedRepNet:
    """Trunk + per-arm heads; the propensity head exists only when used."""

    def __init__(self, cfg):
        self.cfg = cfg
        rng = stream(cfg.seed, 10)
        w = cfg.width
        self.t1w, self.t1b = linear_params(rng, cfg.p, w)
        self.t2w, self.t2b = linear_params(rng, w, w)
        self.head0 = HeadParams.init(rng, w, w)
        self.head1 = HeadParams.init(rng, w, w)
        # drawn last: earlier draws are then identical whether or not the
        # propensity head is ever trained
        self.prop_head = HeadParams.init(rng, w, w)

    def store(self):
        s = ParamStore("repnet")
        s.register("trunk.w1", self.t1w)
        s.register("trunk.b1", self.t1b)
        s.register("trunk.w2", self.t2w)
        s.register("trunk.b2", self.t2b)
        s.register_block("head0", self.head0)
        s.register_block("head1", self.head1)
        if self.cfg.alpha > 0:
            s.register_block("prop_head", self.prop_head)
        return s

    def trunk(self, xb):
        h = ad.gelu(linear(xb, self.t1w, self.t1b))
        return ad.gelu(linear(h, self.t2w, self.t2b))

    def forward(self, x):
        xb = x if isinstance(x, ad.Tensor) else constant(np.atleast_2d(x))
        n = xb.data.shape[0]
        rep = self.trunk(xb)
        mu0 = reshape(mlp_head(rep, self.head0), (n,))
        mu1 = reshape(mlp_head(rep, self.head1), (n,))
        prop = reshape(sigmoid(mlp_head(rep, self.prop_head)), (n,))
        return mu0, mu1, prop

    def estimate(self, data):
        with no_grad():
            mu0, mu1, prop = self.forward(data.x)
        cate = mu1.data - mu0.data
        propensity = prop.data if self.cfg.alpha > 0 else None
        return EstimateResult(cate=cate, ate=float(cate.mean()), propensity=propensity)


def _factual_loss(net, x, t, y, alpha):
    mu0, mu1, prop = net.forward(constant(x))
    tconst = constant(t.astype(np.float64))
    factual = mu1 * tconst + mu0 * constant(1.0 - t.astype(np.float64))
    loss = mse(factual, constant(y))
    if alpha > 0:
        loss = loss + ad.scale(bce(prop, tconst), alpha)
    return loss


def fit_shared_rep(data, cfg, val=None):
    for arm in (0, 1):
        if not np.any(data.t == arm):
            raise DataError(f"arm {arm} has no units in the training data")
    net = SharedRepNet(cfg)
    store = net.store()
    opt = Adam(store.tensors(), lr=cfg.lr)
    shuffle = stream(cfg.seed, 11)
    stopper = EarlyStop(store, cfg.patience) if val is not None else None
    trace = []
    for _ in range(cfg.epochs):
        perm = shuffle.permutation(data.n)
        total = 0.0
        for lo in range(0, data.n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            opt.zero_grad()
            loss = _factual_loss(net, data.x[idx], data.t[idx], data.y[idx], cfg.alpha)
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / data.n)
        if stopper is not None:
            with no_grad():
                vloss = float(
                    _factual_loss(net, val.x, val.t, val.y, cfg.alpha).data
                )
            if stopper.update(vloss):
                break
    if stopper is not None:
        stopper.restore()
    return net, trace


def fit_tarnet(data, cfg, val=None):
    """Factual regression only; any alpha in the config is overridden to 0."""
    if cfg.alpha != 0:
        cfg = RepConfig(**{**cfg.__dict__, "alpha": 0.0})
    net, trace = fit_shared_rep(data, cfg, val)
    return net, net.estimate(data), trace


def fit_dragonnet(data, cfg, val=None):
    """Adds the alpha-weighted propensity term; alpha comes from the config,
    so alpha=0 degenerates to the plain factual regressor on purpose."""
    net, trace = fit_shared_rep(data, cfg, val)
    return net, net.estimate(data), trace
