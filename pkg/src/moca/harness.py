"""Experiment orchestration: replicate loops, method dispatch, CSV export.

Data generation streams depend only on (root seed, scenario, replicate,
split), never on the method list, so adding a method leaves every
dataset bitwise unchanged. Aggregation is order-independent, which makes
summary CSVs byte-identical across reruns and across worker counts.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import aipw_ate, fit_logistic, fit_ols, ipw_ate, x_learner
from .datasets import Dataset
from .errors import ConfigError, DataError, MocaError, SchemaError, UsageError
from .metrics import (
    ReplicateRecord,
    ate_bias,
    cate_bias,
    cate_rmse,
    rubin_pool,
    summarize,
    within_run_variance,
)
from .model import MocaConfig, fit as fit_moca
from .repnets import RepConfig, fit_dragonnet, fit_tarnet
from .rng import stream
from .simgen import SCENARIO_IDS, generate, true_ate

METHODS = (
    "ipw",
    "aipw",
    "xlearner",
    "moca-oneway",
    "moca-twoway",
    "tarnet",
    "dragonnet",
)
METHOD_IDS = {name: i for i, name in enumerate(METHODS)}
NEURAL_METHODS = frozenset({"moca-oneway", "moca-twoway", "tarnet", "dragonnet"})
CATE_METHODS = frozenset({"xlearner"}) | NEURAL_METHODS

CONFIG_SCHEMA_VERSION = 1

SUMMARY_COLUMNS = (
    "scenario",
    "method",
    "n",
    "replicates",
    "ate_bias_mean",
    "ate_bias_median",
    "ate_bias_sd",
    "ate_rmse_mean",
    "cate_bias_mean",
    "cate_bias_sd",
    "cate_rmse_mean",
    "failures",
)

RECORD_COLUMNS = (
    "scenario",
    "method",
    "replicate",
    "seed",
    "ate",
    "ate_bias",
    "cate_bias",
    "cate_rmse",
    "wall_time",
    "error",
)


@dataclass
class ExperimentConfig:
    scenarios: list = field(default_factory=lambda: ["linear"])
    methods: list = field(default_factory=lambda: list(METHODS))
    n: int = 1000
    replicates: int = 20
    seed: int = 0
    standardize: bool = True
    out_dir: str = "results"
    jobs: int = 1
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if not self.methods:
            raise ConfigError("method list is empty")
        if not self.scenarios:
            raise ConfigError("scenario list is empty")
        for m in self.methods:
            if m not in METHOD_IDS:
                raise ConfigError(
                    f"unknown method '{m}'; expected one of {list(METHODS)}"
                )
        for s in self.scenarios:
            if s not in SCENARIO_IDS:
                raise ConfigError(
                    f"unknown scenario '{s}'; expected one of {sorted(SCENARIO_IDS)}"
                )
        for m, ov in self.overrides.items():
            if m not in METHOD_IDS:
                raise ConfigError(f"override for unknown method '{m}'")
            if not isinstance(ov, dict):
                raise ConfigError(f"override for '{m}' must be a mapping")
            owned = {"p", "seed", "mode"} & set(ov)
            if owned:
                raise ConfigError(
                    f"override for '{m}' sets harness-owned keys {sorted(owned)}"
                )


def config_to_json(cfg):
    import json

    payload = {"schema_version": CONFIG_SCHEMA_VERSION, **asdict(cfg)}
    return json.dumps(payload, indent=2, sort_keys=True)


def config_from_json(text):
    import json

    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    version = payload.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**payload)


# ---------------------------------------------------------------------------
# seeding and data preparation


def method_seed(root_seed, scenario, replicate, method):
    """Deterministic training seed, disjoint from every data stream."""
    key = (SCENARIO_IDS[scenario], replicate, 100 + METHOD_IDS[method])
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)
    return int(ss.generate_state(1)[0])


def real_run_seed(root_seed, method, run):
    ss = np.random.SeedSequence(
        entropy=int(root_seed), spawn_key=(7, METHOD_IDS[method], run)
    )
    return int(ss.generate_state(1)[0])


def make_splits(scenario, n, seed, replicate):
    return tuple(
        generate(scenario, n, seed, path=(replicate, split)) for split in range(3)
    )


def standardize_splits(train, val, test):
    """Z-score covariate columns using train statistics.

    Columns with at most two distinct train values (binary indicators)
    are left alone; everything else is centered and scaled. Outcomes and
    ground-truth columns pass through untouched.
    """
    cont = np.array([len(np.unique(train.x[:, j])) > 2 for j in range(train.p)])
    mean = np.where(cont, train.x.mean(axis=0), 0.0)
    sd = np.where(cont, train.x.std(axis=0), 1.0)
    sd = np.where(sd == 0.0, 1.0, sd)

    def apply(ds):
        if ds is None:
            return None
        out = ds.subset(np.arange(ds.n))
        out.x = (ds.x - mean) / sd
        return out

    return apply(train), apply(val), apply(test)


# ---------------------------------------------------------------------------
# method dispatch


def _arm_outcome_models(train, lam):
    treated = train.t == 1
    if not treated.any() or treated.all():
        empty = 1 if not treated.any() else 0
        raise DataError(f"arm {empty} has no units; cannot fit its outcome model")
    mu0 = fit_ols(train.x[~treated], train.y[~treated], lam)
    mu1 = fit_ols(train.x[treated], train.y[treated], lam)
    return mu0, mu1


def fit_and_estimate(method, train, val, test, seed, overrides=None):
    """Fit one estimator on train (val for early stopping where it applies)
    and return (ate, cate-or-None) evaluated on test."""
    ov = dict(overrides or {})
    try:
        if method == "ipw":
            pm = fit_logistic(train.x, train.t, lam=ov.pop("lam", 1e-4), **ov)
            return ipw_ate(test, pm.predict(test.x)), None
        if method == "aipw":
            lam_out = ov.pop("lam_outcome", 1e-6)
            pm = fit_logistic(train.x, train.t, lam=ov.pop("lam", 1e-4), **ov)
            mu0, mu1 = _arm_outcome_models(train, lam_out)
            ate = aipw_ate(
                test, pm.predict(test.x), mu0.predict(test.x), mu1.predict(test.x)
            )
            return ate, None
        if method == "xlearner":
            res = x_learner(train, **ov)
            cate = res.predict_cate(test.x)
            return float(cate.mean()), cate
        if method in ("moca-oneway", "moca-twoway"):
            mode = "one-way" if method == "moca-oneway" else "two-way"
            cfg = MocaConfig(p=train.p, mode=mode, seed=seed, **ov)
            model = fit_moca(train, cfg, val=val)
            est = model.estimate(test)
            return est.ate, est.cate
        if method == "tarnet":
            cfg = RepConfig(p=train.p, seed=seed, **ov)
            net, _, _ = fit_tarnet(train, cfg, val=val)
            est = net.estimate(test)
            return est.ate, est.cate
        if method == "dragonnet":
            cfg = RepConfig(p=train.p, seed=seed, **ov)
            net, _, _ = fit_dragonnet(train, cfg, val=val)
            est = net.estimate(test)
            return est.ate, est.cate
    except TypeError as err:
        raise ConfigError(f"bad override for '{method}': {err}") from None
    raise ConfigError(f"unknown method '{method}'")


def run_replicate(scenario, replicate, cfg):
    """All configured methods on one replicate's train/val/test triple."""
    raw = make_splits(scenario, cfg.n, cfg.seed, replicate)
    scaled = standardize_splits(*raw) if cfg.standardize else raw
    truth = true_ate(scenario)
    records = []
    for method in cfg.methods:
        train, val, test = scaled if method in NEURAL_METHODS else raw
        seed = method_seed(cfg.seed, scenario, replicate, method)
        rec = ReplicateRecord(
            scenario=scenario,
            method=method,
            replicate=replicate,
            seed=seed,
        )
        start = time.perf_counter()
        try:
            ate, cate = fit_and_estimate(
                method, train, val, test, seed, cfg.overrides.get(method)
            )
            rec.ate = ate
            rec.ate_bias = ate_bias(ate, truth)
            if cate is not None and test.cate is not None:
                rec.cate_bias = cate_bias(cate, test.cate)
                rec.cate_rmse = cate_rmse(cate, test.cate)
        except (MocaError, np.linalg.LinAlgError) as err:
            rec.error = f"{type(err).__name__}: {err}"
        rec.wall_time = time.perf_counter() - start
        records.append(rec)
    return records


def _replicate_task(args):
    scenario, replicate, cfg = args
    return run_replicate(scenario, replicate, cfg)


def run_benchmark(cfg):
    """Full grid of (scenario, replicate, method). Returns (records, summary)."""
    tasks = [
        (scenario, rep, cfg)
        for scenario in cfg.scenarios
        for rep in range(cfg.replicates)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            batches = list(pool.map(_replicate_task, tasks))
    else:
        batches = [_replicate_task(t) for t in tasks]
    records = [rec for batch in batches for rec in batch]
    records.sort(key=lambda r: (r.scenario, METHOD_IDS[r.method], r.replicate))

    summary = []
    for scenario in cfg.scenarios:
        for method in cfg.methods:
            group = [
                r for r in records if r.scenario == scenario and r.method == method
            ]
            row = summarize(group)
            row["n"] = cfg.n
            summary.append(row)
    return records, summary


# ---------------------------------------------------------------------------
# real-data runs with repeated-fit pooling


def run_real(data, methods, pool_runs, seed, standardize=True, overrides=None):
    """Per-method ATE on a real dataset.

    Methods with a per-unit effect surface (the meta-learner and all
    neural nets) are refit pool_runs times under different seeds and
    combined with the pooling rule; purely classical ATE estimators are
    fit once. Bias is reported only when the file carries both potential
    outcome means.
    """
    overrides = overrides or {}
    ml = [m for m in methods if m in CATE_METHODS]
    if ml and pool_runs < 2:
        raise UsageError(
            f"pooling needs at least 2 runs, got {pool_runs} "
            f"(requested for {ml})"
        )
    truth = float(np.mean(data.cate)) if data.cate is not None else None

    train, val = _holdout_split(data, seed)
    if standardize:
        strain, sval, sfull = standardize_splits(train, val, data)
    else:
        strain, sval, sfull = train, val, data

    rows = []
    for method in methods:
        ov = overrides.get(method)
        if method in CATE_METHODS:
            runs = []
            for j in range(pool_runs):
                run_seed = real_run_seed(seed, method, j)
                use_scaled = method in NEURAL_METHODS
                tr = strain if use_scaled else train
                vl = sval if use_scaled else val
                te = sfull if use_scaled else data
                ate, cate = fit_and_estimate(method, tr, vl, te, run_seed, ov)
                runs.append((ate, within_run_variance(cate)))
            pooled = rubin_pool(runs)
            row = {
                "method": method,
                "runs": pool_runs,
                "ate": pooled.tau_bar,
                "ci_low": pooled.ci_low,
                "ci_high": pooled.ci_high,
            }
        else:
            run_seed = real_run_seed(seed, method, 0)
            ate, _ = fit_and_estimate(method, data, None, data, run_seed, ov)
            row = {
                "method": method,
                "runs": 1,
                "ate": ate,
                "ci_low": math.nan,
                "ci_high": math.nan,
            }
        row["ate_bias"] = row["ate"] - truth if truth is not None else math.nan
        rows.append(row)
    return rows


def _holdout_split(data, seed, frac=0.1):
    """Deterministic validation carve-out for early stopping on real data."""
    if data.n < 20:
        return data, None
    rng = stream(seed, 9)
    perm = rng.permutation(data.n)
    n_val = max(2, int(frac * data.n))
    return data.subset(perm[n_val:]), data.subset(perm[:n_val])


# ---------------------------------------------------------------------------
# pooling of saved per-run results


def read_runs_csv(path):
    """Rows of (method, tau, u) for the pool command."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path} is empty")
        names = [n.strip().lower() for n in reader.fieldnames]
        for col in ("method", "tau", "u"):
            if col not in names:
                raise SchemaError(f"{path} is missing required column '{col}'")
        rows = []
        for raw in reader:
            row = {k.strip().lower(): v for k, v in raw.items()}
            rows.append((row["method"], float(row["tau"]), float(row["u"])))
    return rows


def pool_rows(rows):
    """One pooled row per method; input row order is irrelevant."""
    if len(rows) < 2:
        raise UsageError(f"pooling needs at least 2 rows, got {len(rows)}")
    by_method = {}
    for method, tau, u in rows:
        by_method.setdefault(method, []).append((tau, u))
    out = []
    for method in sorted(by_method):
        if len(by_method[method]) < 2:
            raise UsageError(
                f"method '{method}' has a single run; pooling needs at least 2"
            )
        pooled = rubin_pool(by_method[method])
        out.append(
            {
                "method": method,
                "m": pooled.m,
                "tau_bar": pooled.tau_bar,
                "u_bar": pooled.u_bar,
                "between": pooled.between,
                "total": pooled.total,
                "ci_low": pooled.ci_low,
                "ci_high": pooled.ci_high,
            }
        )
    return out


# ---------------------------------------------------------------------------
# CSV export


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return "%.17g" % v
    return str(v)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_summary_csv(summary, path):
    _write_rows(path, SUMMARY_COLUMNS, summary)


def write_records_csv(records, path):
    rows = [
        {c: getattr(r, c) for c in RECORD_COLUMNS}
        for r in records
    ]
    _write_rows(path, RECORD_COLUMNS, rows)


def write_real_csv(rows, path):
    _write_rows(path, ("method", "runs", "ate", "ate_bias", "ci_low", "ci_high"), rows)


def write_pool_csv(rows, path):
    columns = ("method", "m", "tau_bar", "u_bar", "between", "total", "ci_low", "ci_high")
    _write_rows(path, columns, rows)
