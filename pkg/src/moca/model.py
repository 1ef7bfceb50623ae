"""Two-module treatment/outcome effect estimator.

A treatment module learns the propensity surface and distills it into a
single token; an outcome module predicts both potential outcomes, reading
the treatment token only through one-way cross-attention. In ``one-way``
mode the token is detached and training is two-step, so no outcome gradient
ever reaches treatment parameters. In ``two-way`` mode the same
architecture trains jointly on L_Y + alpha * L_T with gradient flowing
everywhere; the contrast isolates what the cut buys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, bce, constant, detach, mul, no_grad, reshape, scale, sigmoid, square, sum_all
from .errors import ConfigError, DataError, DimensionError
from .nn import (
    EncoderLayerParams,
    GateParams,
    HeadParams,
    MhaParams,
    encode,
    fuse_gate,
    mlp_head,
    query_pool,
)
from .optim import Adam
from .rng import stream, uniform_init
from .tokenizer import TokenizerParams, tokenize

MODES = ("one-way", "two-way")


@dataclass
class MocaConfig:
    p: int
    d: int = 16
    heads: int = 2
    depth: int = 1
    d_ff: int = 64
    gate_hidden: int = 32
    head_hidden: int = 32
    tau_g: float = 1.0
    lr: float = 1e-3
    lr_outcome: float | None = None
    epochs: int = 300
    batch_size: int = 64
    patience: int = 30
    seed: int = 0
    mode: str = "one-way"
    joint_weight: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError(f"need at least one covariate, got p={self.p}")
        if self.heads < 1 or self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} not divisible by {self.heads} heads")
        if self.tau_g <= 0:
            raise ConfigError(f"gate temperature must be positive, got {self.tau_g}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.depth < 1:
            raise ConfigError(f"encoder depth must be >= 1, got {self.depth}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def outcome_lr(self):
        return self.lr if self.lr_outcome is None else self.lr_outcome


class ParamStore:
    """Ordered name -> tensor registry for one module's parameters."""

    def __init__(self, prefix):
        self.prefix = prefix
        self._items = {}

    def register(self, name, tensor):
        full = f"{self.prefix}.{name}"
        if full in self._items:
            raise ConfigError(f"duplicate parameter name {full}")
        self._items[full] = tensor

    def register_block(self, name, block):
        for suffix, tensor in block.named_tensors():
            self.register(f"{name}.{suffix}", tensor)

    def names(self):
        return list(self._items)

    def tensors(self):
        return list(self._items.values())

    def items(self):
        return list(self._items.items())

    def snapshot(self):
        return {name: t.data.copy() for name, t in self._items.items()}

    def load(self, snap):
        for name, t in self._items.items():
            t.data[...] = snap[name]


# ---------------------------------------------------------------------------
# modules


@dataclass
class TreatmentModule:
    tok_linear: TokenizerParams
    tok_attn: TokenizerParams
    encoder: list
    query: Tensor  # [1, 1, d], broadcast over the batch
    pool_linear: MhaParams
    pool_attn: MhaParams
    gate: GateParams  # k=2 over (linear, attended) summaries
    head: HeadParams  # propensity logit from the weighted concatenation

    @classmethod
    def init(cls, rng, cfg):
        return cls(
            tok_linear=TokenizerParams.init(rng, cfg.p, cfg.d),
            tok_attn=TokenizerParams.init(rng, cfg.p, cfg.d),
            encoder=[
                EncoderLayerParams.init(rng, cfg.d, cfg.heads, cfg.d_ff)
                for _ in range(cfg.depth)
            ],
            query=ad.param(uniform_init(rng, (1, 1, cfg.d), cfg.d)),
            pool_linear=MhaParams.init(rng, cfg.d, cfg.heads),
            pool_attn=MhaParams.init(rng, cfg.d, cfg.heads),
            gate=GateParams.init(rng, 2, cfg.d, cfg.gate_hidden, cfg.tau_g),
            head=HeadParams.init(rng, 2 * cfg.d, cfg.head_hidden),
        )

    def store(self):
        s = ParamStore("treatment")
        s.register_block("tok_linear", self.tok_linear)
        s.register_block("tok_attn", self.tok_attn)
        for i, layer in enumerate(self.encoder):
            s.register_block(f"encoder.{i}", layer)
        s.register("query", self.query)
        s.register_block("pool_linear", self.pool_linear)
        s.register_block("pool_attn", self.pool_attn)
        s.register_block("gate", self.gate)
        s.register_block("head", self.head)
        return s


@dataclass
class OutcomeModule:
    tok_linear: TokenizerParams
    tok_attn: TokenizerParams
    encoder: list
    q0: Tensor
    q1: Tensor
    pool_linear0: MhaParams
    pool_attn0: MhaParams
    pool_cross0: MhaParams
    pool_linear1: MhaParams
    pool_attn1: MhaParams
    pool_cross1: MhaParams
    gate0: GateParams  # k=3 over (linear, attended, treatment-token) summaries
    gate1: GateParams
    head0: HeadParams
    head1: HeadParams

    @classmethod
    def init(cls, rng, cfg):
        def pools():
            return MhaParams.init(rng, cfg.d, cfg.heads)

        return cls(
            tok_linear=TokenizerParams.init(rng, cfg.p, cfg.d),
            tok_attn=TokenizerParams.init(rng, cfg.p, cfg.d),
            encoder=[
                EncoderLayerParams.init(rng, cfg.d, cfg.heads, cfg.d_ff)
                for _ in range(cfg.depth)
            ],
            q0=ad.param(uniform_init(rng, (1, 1, cfg.d), cfg.d)),
            q1=ad.param(uniform_init(rng, (1, 1, cfg.d), cfg.d)),
            pool_linear0=pools(),
            pool_attn0=pools(),
            pool_cross0=pools(),
            pool_linear1=pools(),
            pool_attn1=pools(),
            pool_cross1=pools(),
            gate0=GateParams.init(rng, 3, cfg.d, cfg.gate_hidden, cfg.tau_g),
            gate1=GateParams.init(rng, 3, cfg.d, cfg.gate_hidden, cfg.tau_g),
            head0=HeadParams.init(rng, 3 * cfg.d, cfg.head_hidden),
            head1=HeadParams.init(rng, 3 * cfg.d, cfg.head_hidden),
        )

    def store(self):
        s = ParamStore("outcome")
        s.register_block("tok_linear", self.tok_linear)
        s.register_block("tok_attn", self.tok_attn)
        for i, layer in enumerate(self.encoder):
            s.register_block(f"encoder.{i}", layer)
        s.register("q0", self.q0)
        s.register("q1", self.q1)
        for name in (
            "pool_linear0",
            "pool_attn0",
            "pool_cross0",
            "pool_linear1",
            "pool_attn1",
            "pool_cross1",
            "gate0",
            "gate1",
            "head0",
            "head1",
        ):
            s.register_block(name, getattr(self, name))
        return s


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class TreatmentForwardOut:
    propensity: Tensor  # [n], strictly inside (0, 1)
    token: Tensor  # [n, 1, d]
    gate_weights: Tensor  # [n, 2]


@dataclass
class OutcomeForwardOut:
    mu0: Tensor  # [n]
    mu1: Tensor  # [n]
    gate_weights0: Tensor  # [n, 3]
    gate_weights1: Tensor  # [n, 3]


def _as_batch(x):
    if isinstance(x, Tensor):
        return x
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return constant(arr)


def treatment_forward(x, module):
    """Propensity and a single fused treatment token per sample."""
    xb = _as_batch(x)
    n = xb.data.shape[0]
    z_lin = query_pool(module.query, tokenize(xb, module.tok_linear), module.pool_linear)
    encoded = encode(tokenize(xb, module.tok_attn), module.encoder)
    z_att = query_pool(module.query, encoded, module.pool_attn)
    weights, fused, wconcat = fuse_gate([z_lin, z_att], module.gate)
    logit = mlp_head(wconcat, module.head)
    prop = reshape(sigmoid(logit), (n,))
    token = reshape(fused, (n, 1, module.query.data.shape[-1]))
    return TreatmentForwardOut(propensity=prop, token=token, gate_weights=weights)


def _outcome_forward(xb, token, module):
    """Both potential-outcome predictions given an already-routed token."""
    n = xb.data.shape[0]
    toks_lin = tokenize(xb, module.tok_linear)
    toks_att = encode(tokenize(xb, module.tok_attn), module.encoder)

    def arm(q, pool_l, pool_a, pool_c, gate, head):
        z_lin = query_pool(q, toks_lin, pool_l)
        z_att = query_pool(q, toks_att, pool_a)
        z_tok = query_pool(q, token, pool_c)
        weights, _, wconcat = fuse_gate([z_lin, z_att, z_tok], gate)
        mu = reshape(mlp_head(wconcat, head), (n,))
        return mu, weights

    mu0, w0 = arm(
        module.q0, module.pool_linear0, module.pool_attn0, module.pool_cross0,
        module.gate0, module.head0,
    )
    mu1, w1 = arm(
        module.q1, module.pool_linear1, module.pool_attn1, module.pool_cross1,
        module.gate1, module.head1,
    )
    return OutcomeForwardOut(mu0=mu0, mu1=mu1, gate_weights0=w0, gate_weights1=w1)


def outcome_forward(x, treatment_out, module, one_way=True):
    """One-way mode severs the token (and propensity) from the tape."""
    xb = _as_batch(x)
    token = detach(treatment_out.token) if one_way else treatment_out.token
    return _outcome_forward(xb, token, module)


# ---------------------------------------------------------------------------
# losses


def treatment_loss(out, t):
    return bce(out.propensity, constant(np.asarray(t, dtype=np.float64)))


def outcome_loss(out, t, y):
    """Factual MSE, each arm normalized by its own unit count."""
    t = np.asarray(t)
    y = constant(np.asarray(y, dtype=np.float64))
    total = None
    for arm_value, mu in ((0, out.mu0), (1, out.mu1)):
        mask = (t == arm_value).astype(np.float64)
        count = mask.sum()
        if count == 0:
            continue
        diff = mul(mu - y, constant(mask))
        term = scale(sum_all(square(diff)), 1.0 / count)
        total = term if total is None else total + term
    if total is None:
        raise DataError("outcome loss needs at least one unit")
    return total


def _bce_value(p, t):
    q = np.clip(p, 1e-7, 1.0 - 1e-7)
    return float(-np.mean(t * np.log(q) + (1.0 - t) * np.log(1.0 - q)))


def _outcome_loss_value(mu0, mu1, t, y):
    total = 0.0
    for arm_value, mu in ((0, mu0), (1, mu1)):
        mask = t == arm_value
        if mask.sum() == 0:
            continue
        total += float(np.sum((mu[mask] - y[mask]) ** 2) / mask.sum())
    return total


# ---------------------------------------------------------------------------
# training


def _check_binary(t):
    uniq = np.unique(np.asarray(t))
    if not np.all(np.isin(uniq, (0, 1))):
        raise DataError(f"treatment must be binary 0/1, found values {uniq}")


def _check_both_arms(t):
    t = np.asarray(t)
    for arm_value in (0, 1):
        if not np.any(t == arm_value):
            raise DataError(f"arm {arm_value} has no units in the training data")


def _batches(n, batch_size, perm):
    for lo in range(0, n, batch_size):
        yield perm[lo : lo + batch_size]


def _chunked(n, size):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


class EarlyStop:
    """Min-validation-loss selection with a patience budget."""

    def __init__(self, store, patience):
        self.store = store
        self.patience = patience
        self.left = patience
        self.best_loss = np.inf
        self.best = None

    def update(self, val_loss):
        """Record an epoch's validation loss; True means stop now."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best = self.store.snapshot()
            self.left = self.patience
            return False
        self.left -= 1
        return self.left <= 0

    def restore(self):
        if self.best is not None:
            self.store.load(self.best)


def _propensity_and_token(x, module, chunk):
    """Forward the treatment module in evaluation mode, chunked."""
    n = x.shape[0]
    props = np.empty(n)
    tokens = None
    with no_grad():
        for sl in _chunked(n, chunk):
            out = treatment_forward(x[sl], module)
            if tokens is None:
                tokens = np.empty((n,) + out.token.data.shape[1:])
            props[sl] = out.propensity.data
            tokens[sl] = out.token.data
    return props, tokens


def _predict_mu(x, tokens, module, chunk):
    n = x.shape[0]
    mu0 = np.empty(n)
    mu1 = np.empty(n)
    with no_grad():
        for sl in _chunked(n, chunk):
            out = _outcome_forward(constant(x[sl]), constant(tokens[sl]), module)
            mu0[sl] = out.mu0.data
            mu1[sl] = out.mu1.data
    return mu0, mu1


def train_treatment(data, module, cfg, val=None):
    """Step 1: minibatch BCE on the propensity, treatment parameters only."""
    _check_binary(data.t)
    store = module.store()
    opt = Adam(store.tensors(), lr=cfg.lr)
    shuffle = stream(cfg.seed, 2)
    stopper = EarlyStop(store, cfg.patience) if val is not None else None
    t_float = data.t.astype(np.float64)
    trace = []
    for _ in range(cfg.epochs):
        perm = shuffle.permutation(data.n)
        total = 0.0
        for idx in _batches(data.n, cfg.batch_size, perm):
            opt.zero_grad()
            out = treatment_forward(data.x[idx], module)
            loss = bce(out.propensity, constant(t_float[idx]))
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / data.n)
        if stopper is not None:
            vprop, _ = _propensity_and_token(val.x, module, cfg.batch_size)
            if stopper.update(_bce_value(vprop, val.t.astype(np.float64))):
                break
    if stopper is not None:
        stopper.restore()
    return trace


def train_outcome(data, treatment_module, module, cfg, val=None):
    """Step 2: factual MSE on outcome parameters; the token arrives frozen.

    The treatment module is not updated here, so its tokens are constants
    for the whole stage and are precomputed once.
    """
    _check_binary(data.t)
    _check_both_arms(data.t)
    store = module.store()
    opt = Adam(store.tensors(), lr=cfg.outcome_lr)
    shuffle = stream(cfg.seed, 3)
    stopper = EarlyStop(store, cfg.patience) if val is not None else None
    _, tokens = _propensity_and_token(data.x, treatment_module, cfg.batch_size)
    if val is not None:
        _, vtokens = _propensity_and_token(val.x, treatment_module, cfg.batch_size)
    trace = []
    for _ in range(cfg.epochs):
        perm = shuffle.permutation(data.n)
        total = 0.0
        for idx in _batches(data.n, cfg.batch_size, perm):
            opt.zero_grad()
            out = _outcome_forward(constant(data.x[idx]), constant(tokens[idx]), module)
            loss = outcome_loss(out, data.t[idx], data.y[idx])
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / data.n)
        if stopper is not None:
            vmu0, vmu1 = _predict_mu(val.x, vtokens, module, cfg.batch_size)
            if stopper.update(_outcome_loss_value(vmu0, vmu1, val.t, val.y)):
                break
    if stopper is not None:
        stopper.restore()
    return trace


def train_joint(data, treatment_module, outcome_module, cfg, val=None):
    """Two-way mode: one loop over L_Y + joint_weight * L_T, no detach."""
    _check_binary(data.t)
    _check_both_arms(data.t)
    t_store = treatment_module.store()
    y_store = outcome_module.store()
    joint = ParamStore("joint")
    for name, tensor in t_store.items() + y_store.items():
        joint.register(name, tensor)
    opt = Adam(joint.tensors(), lr=cfg.lr)
    shuffle = stream(cfg.seed, 4)
    stopper = EarlyStop(joint, cfg.patience) if val is not None else None
    t_float = data.t.astype(np.float64)
    trace = []
    for _ in range(cfg.epochs):
        perm = shuffle.permutation(data.n)
        total = 0.0
        for idx in _batches(data.n, cfg.batch_size, perm):
            opt.zero_grad()
            tout = treatment_forward(data.x[idx], treatment_module)
            yout = _outcome_forward(constant(data.x[idx]), tout.token, outcome_module)
            loss = outcome_loss(yout, data.t[idx], data.y[idx]) + scale(
                bce(tout.propensity, constant(t_float[idx])), cfg.joint_weight
            )
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / data.n)
        if stopper is not None:
            vprop, vtokens = _propensity_and_token(val.x, treatment_module, cfg.batch_size)
            vmu0, vmu1 = _predict_mu(val.x, vtokens, outcome_module, cfg.batch_size)
            vloss = _outcome_loss_value(vmu0, vmu1, val.t, val.y)
            vloss += cfg.joint_weight * _bce_value(vprop, val.t.astype(np.float64))
            if stopper.update(vloss):
                break
    if stopper is not None:
        stopper.restore()
    return trace


# ---------------------------------------------------------------------------
# the model facade


@dataclass
class EstimateResult:
    cate: np.ndarray  # [n] per-unit effect predictions
    ate: float  # mean of cate
    propensity: np.ndarray  # [n]


class MocaModel:
    def __init__(self, config):
        self.config = config
        self.treatment = TreatmentModule.init(stream(config.seed, 0), config)
        self.outcome = OutcomeModule.init(stream(config.seed, 1), config)
        self.traces = {}
        self.fitted = False

    def fit(self, train, val=None):
        if train.p != self.config.p:
            raise DimensionError(
                f"model built for p={self.config.p}, data has p={train.p}"
            )
        if self.config.mode == "one-way":
            self.traces["treatment"] = train_treatment(
                train, self.treatment, self.config, val
            )
            self.traces["outcome"] = train_outcome(
                train, self.treatment, self.outcome, self.config, val
            )
        else:
            self.traces["joint"] = train_joint(
                train, self.treatment, self.outcome, self.config, val
            )
        self.fitted = True
        return self

    def estimate(self, data):
        chunk = self.config.batch_size
        props, tokens = _propensity_and_token(data.x, self.treatment, chunk)
        mu0, mu1 = _predict_mu(data.x, tokens, self.outcome, chunk)
        cate = mu1 - mu0
        return EstimateResult(cate=cate, ate=float(cate.mean()), propensity=props)


def fit(data, config, val=None):
    return MocaModel(config).fit(data, val)


# ---------------------------------------------------------------------------
# serialization (bitwise round-trip via hex floats)


def state_dict(model):
    params = {}
    for store in (model.treatment.store(), model.outcome.store()):
        for name, tensor in store.items():
            params[name] = {
                "shape": list(tensor.data.shape),
                "data": [v.hex() for v in tensor.data.reshape(-1)],
            }
    return {
        "format_version": 1,
        "config": asdict(model.config),
        "params": params,
    }


def model_from_state(state):
    if state.get("format_version") != 1:
        raise ConfigError(f"unsupported model format {state.get('format_version')!r}")
    model = MocaModel(MocaConfig(**state["config"]))
    for store in (model.treatment.store(), model.outcome.store()):
        for name, tensor in store.items():
            entry = state["params"][name]
            flat = np.array([float.fromhex(v) for v in entry["data"]])
            tensor.data[...] = flat.reshape(entry["shape"])
    model.fitted = True
    return model


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(state_dict(model), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_state(json.load(fh))
