"""Experiment orchestration behind the CLI.

Builds datasets/policies from a validated config, runs the evaluate / select /
coverage studies (trial-parallel with deterministic per-trial seeds) and
writes JSON, CSV and Markdown reports plus a manifest that reproduces the run
byte-for-byte.  Worker payloads are plain dicts so trials can run in worker
processes; every cell derives its randomness from the master seed and its
trial index only, which makes outputs independent of the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .core import (
    LoggedDataset,
    PolicyTable,
    effective_sample_size,
    importance_weights,
    is_estimate,
    wis_estimate,
)
from .baselines import (
    chebyshev_wis_bound,
    fit_reward_model,
    dr_point_estimate,
    lambda_dr_bound,
    lambda_is_bound,
)
from .data import (
    ClassificationDataset,
    GeneratorConfig,
    generate_classification,
    load_csv,
    log_interactions,
    save_csv,
)
from .eslb import AdaptiveSchedule, FixedSchedule, eslb_bound, mc_estimate_proxies
from .policies import (
    FitConfig,
    GibbsPolicy,
    fit_policy,
    gibbs_probs,
    gibbs_true_value,
    policy_from_json,
    softmax_probs,
    true_value,
)
from .selection import BOUND_METHODS, ALL_METHODS, score_policies


class ConfigError(ValueError):
    """Config validation failure; the message carries the offending field path."""


# ---------------------------------------------------------------------------
# Config validation


def _path(*parts) -> str:
    return ".".join(str(p) for p in parts)


def _as_int(doc, key, path, default=None, minimum=None):
    value = doc.get(key, default)
    if value is None:
        raise ConfigError(f"{_path(path, key)}: required")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{_path(path, key)}: must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{_path(path, key)}: must be >= {minimum}, got {value}")
    return value


def _as_float(doc, key, path, default=None, lo=None, hi=None):
    value = doc.get(key, default)
    if value is None:
        raise ConfigError(f"{_path(path, key)}: required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{_path(path, key)}: must be a number, got {value!r}")
    value = float(value)
    if lo is not None and value <= lo:
        raise ConfigError(f"{_path(path, key)}: must be > {lo}, got {value}")
    if hi is not None and value >= hi:
        raise ConfigError(f"{_path(path, key)}: must be < {hi}, got {value}")
    return value


def normalize_config(doc: dict, kind: str) -> dict:
    """Validate and fill in defaults; returns a plain, picklable dict."""
    if not isinstance(doc, dict):
        raise ConfigError("config: must be a table/object")
    out: dict = {"kind": kind}
    out["seed"] = _as_int(doc, "seed", "", default=0)
    out["delta"] = _as_float(doc, "delta", "", default=0.01 if kind == "select" else 0.05, lo=0.0, hi=1.0)

    dataset = doc.get("dataset")
    if not isinstance(dataset, dict):
        raise ConfigError("dataset: required table")
    ds_kind = dataset.get("kind", "generate")
    if ds_kind not in ("generate", "csv"):
        raise ConfigError(f"dataset.kind: must be 'generate' or 'csv', got {ds_kind!r}")
    ds: dict = {"kind": ds_kind}
    if ds_kind == "generate":
        ds["n"] = _as_int(dataset, "n", "dataset", minimum=2)
        ds["d"] = _as_int(dataset, "d", "dataset", default=20, minimum=1)
        ds["num_classes"] = _as_int(dataset, "num_classes", "dataset", default=5, minimum=2)
        ds["informative_dims"] = _as_int(dataset, "informative_dims", "dataset", default=10, minimum=1)
        ds["class_separation"] = _as_float(dataset, "class_separation", "dataset", default=2.0, lo=0.0)
        ds["noise_scale"] = _as_float(dataset, "noise_scale", "dataset", default=1.0, lo=-1.0)
        ds["n_test"] = _as_int(dataset, "n_test", "dataset", default=50_000, minimum=1)
    else:
        path = dataset.get("path")
        if not isinstance(path, str) or not path:
            raise ConfigError("dataset.path: required for csv datasets")
        ds["path"] = path
        ds["label_column"] = dataset.get("label_column", "label")
        ds["has_header"] = bool(dataset.get("has_header", True))
        ds["test_fraction"] = _as_float(dataset, "test_fraction", "dataset", default=0.25, lo=0.0, hi=1.0)
    out["dataset"] = ds

    if kind == "generate":
        return out

    behavior = doc.get("behavior")
    if not isinstance(behavior, dict):
        raise ConfigError("behavior: required table")
    out["behavior"] = {
        "tau": _as_float(behavior, "tau", "behavior", lo=0.0),
        "faulty": [int(a) for a in behavior.get("faulty", [])],
    }

    targets = doc.get("targets")
    if not isinstance(targets, list) or not targets:
        raise ConfigError("targets: at least one target is required")
    norm_targets = []
    for i, t in enumerate(targets):
        if not isinstance(t, dict):
            raise ConfigError(f"targets[{i}]: must be a table")
        t_kind = t.get("kind")
        if t_kind not in ("ideal", "faulty", "fitted-is", "fitted-wis", "softmax-file"):
            raise ConfigError(f"targets[{i}].kind: unknown target kind {t_kind!r}")
        entry = {"kind": t_kind}
        if t_kind == "softmax-file":
            if not isinstance(t.get("path"), str):
                raise ConfigError(f"targets[{i}].path: required for softmax-file targets")
            entry["path"] = t["path"]
        else:
            entry["tau"] = _as_float(t, "tau", f"targets[{i}]", lo=0.0)
        if t_kind == "faulty":
            entry["faulty"] = [int(a) for a in t.get("faulty", [])]
            if not entry["faulty"]:
                raise ConfigError(f"targets[{i}].faulty: a faulty target needs faulty actions")
        if t_kind in ("fitted-is", "fitted-wis"):
            entry["steps"] = _as_int(t, "steps", f"targets[{i}]", default=100_000, minimum=1)
            entry["step_size"] = _as_float(t, "step_size", f"targets[{i}]", default=0.01, lo=0.0)
        norm_targets.append(entry)
    out["targets"] = norm_targets

    methods = doc.get("methods", list(ALL_METHODS) if kind != "coverage" else list(BOUND_METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods: non-empty list required")
    for m in methods:
        if m not in ALL_METHODS:
            raise ConfigError(f"methods: unknown method {m!r}; expected one of {ALL_METHODS}")
    out["methods"] = list(methods)

    mc = doc.get("mc", {})
    if not isinstance(mc, dict):
        raise ConfigError("mc: must be a table")
    mode = mc.get("mode", "fixed")
    if mode not in ("fixed", "adaptive"):
        raise ConfigError(f"mc.mode: must be 'fixed' or 'adaptive', got {mode!r}")
    out["mc"] = {
        "mode": mode,
        "iterations": _as_int(mc, "iterations", "mc", default=25, minimum=1),
        "batch_size": _as_int(mc, "batch_size", "mc", default=64, minimum=1),
        "eps": mc.get("eps"),  # None -> 1/n at run time
        "check_base": _as_int(mc, "check_base", "mc", default=2, minimum=2),
        "max_iterations": _as_int(mc, "max_iterations", "mc", default=1_000_000, minimum=2),
    }

    dr = doc.get("dr", {})
    if not isinstance(dr, dict):
        raise ConfigError("dr: must be a table")
    eta_split = dr.get("eta_split", 0.0)
    if isinstance(eta_split, bool) or not isinstance(eta_split, (int, float)) or not 0.0 <= eta_split < 1.0:
        raise ConfigError(f"dr.eta_split: must be a number in [0, 1), got {eta_split!r}")
    out["dr"] = {
        "folds": _as_int(dr, "folds", "dr", default=10, minimum=2),
        "eta_split": float(eta_split),
    }

    if kind in ("select", "coverage"):
        out["trials"] = _as_int(doc, "trials", "", default=10 if kind == "select" else 100, minimum=1)
    if kind == "coverage":
        deltas = doc.get("deltas", [0.01, 0.05, 0.1, 0.5])
        if not isinstance(deltas, list) or not deltas:
            raise ConfigError("deltas: non-empty list required for coverage studies")
        out["deltas"] = [float(v) for v in deltas]
        for v in out["deltas"]:
            if not 0.0 < v < 1.0:
                raise ConfigError(f"deltas: every entry must lie in (0, 1), got {v}")
        if ds_kind != "generate":
            raise ConfigError("dataset.kind: coverage studies need a generated dataset (closed-form true value)")
        if len(out["targets"]) != 1 or out["targets"][0]["kind"] not in ("ideal", "faulty"):
            raise ConfigError("targets: coverage studies need exactly one ideal/faulty target")
    return out


# ---------------------------------------------------------------------------
# Deterministic seed derivation

_ROLE_DATASET, _ROLE_LOG, _ROLE_MC, _ROLE_ETA, _ROLE_SPLIT = range(5)


def _child_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=master, spawn_key=tuple(key)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Builders


def _build_train_test(cfg: dict, trial: int) -> tuple[ClassificationDataset, ClassificationDataset]:
    ds = cfg["dataset"]
    seed = _child_seed(cfg["seed"], trial, _ROLE_DATASET)
    if ds["kind"] == "generate":
        gen = GeneratorConfig(
            n=ds["n"] + ds["n_test"],
            d=ds["d"],
            num_classes=ds["num_classes"],
            informative_dims=ds["informative_dims"],
            class_separation=ds["class_separation"],
            noise_scale=ds["noise_scale"],
            seed=seed,
        )
        full = generate_classification(gen)
        cut = ds["n"]
        train = ClassificationDataset(full.features[:cut], full.labels[:cut], full.num_classes)
        test = ClassificationDataset(full.features[cut:], full.labels[cut:], full.num_classes)
        return train, test
    loaded = load_csv(ds["path"], label_column=ds["label_column"], has_header=ds["has_header"])
    from .data import split as split_ds

    train, test = split_ds(loaded, 1.0 - ds["test_fraction"], seed)
    return train, test


def _build_behavior(cfg: dict, train: ClassificationDataset) -> GibbsPolicy:
    b = cfg["behavior"]
    return GibbsPolicy(
        oracle_labels=train.labels,
        tau=b["tau"],
        num_actions=train.num_classes,
        faulty_set=frozenset(b["faulty"]),
    )


def _build_target(entry: dict, train: ClassificationDataset, logged: LoggedDataset):
    """Returns (policy object, table at the logged contexts)."""
    if entry["kind"] in ("ideal", "faulty"):
        pol = GibbsPolicy(
            oracle_labels=train.labels,
            tau=entry["tau"],
            num_actions=train.num_classes,
            faulty_set=frozenset(entry.get("faulty", [])),
        )
        return pol, gibbs_probs(pol)
    if entry["kind"] == "softmax-file":
        with open(entry["path"], encoding="utf-8") as fh:
            pol = policy_from_json(fh.read())
        return pol, softmax_probs(pol, train.features)
    objective = "is" if entry["kind"] == "fitted-is" else "wis"
    fit_cfg = FitConfig(
        objective=objective,
        step_size=entry["step_size"],
        steps=entry["steps"],
        tau=entry["tau"],
    )
    pol = fit_policy(logged, fit_cfg)
    return pol, softmax_probs(pol, train.features)


def _target_name(entry: dict, index: int) -> str:
    return f"target{index + 1}-{entry['kind']}"


def _mc_schedule(cfg: dict, n: int):
    mc = cfg["mc"]
    if mc["mode"] == "fixed":
        return FixedSchedule(iterations=mc["iterations"], batch_size=mc["batch_size"])
    eps = mc["eps"] if mc["eps"] is not None else 1.0 / n
    return AdaptiveSchedule(
        eps=float(eps),
        x=math.log(2.0 / cfg["delta"]),
        batch_size=mc["batch_size"],
        check_base=mc["check_base"],
        max_iterations=mc["max_iterations"],
    )


def _subset_logged(logged: LoggedDataset, idx: np.ndarray) -> LoggedDataset:
    return LoggedDataset(
        contexts=logged.contexts[idx],
        actions=logged.actions[idx],
        rewards=logged.rewards[idx],
        behavior_table=PolicyTable(logged.behavior_table.probs[idx]),
    )


def _eta_and_eval(cfg: dict, logged: LoggedDataset, tables: list[PolicyTable], trial: int):
    """Fit the reward model, optionally on a split disjoint from DR evaluation.

    Returns (eta, dr_logged, dr_tables).  By default eta is fit on the same
    log the bounds are evaluated on.  With eta_split = f > 0 (the strict
    variant: the DR bound is stated for a fixed eta) a seeded fraction f of
    the log trains eta and only the DR-family methods evaluate on the
    remainder; methods that do not involve eta keep the full log.
    """
    needs_eta = any(m in ("lambda-dr", "dr") for m in cfg["methods"])
    frac = cfg["dr"]["eta_split"]
    if frac <= 0.0:
        eta = (
            fit_reward_model(logged, folds=cfg["dr"]["folds"], seed=_child_seed(cfg["seed"], trial, _ROLE_ETA))
            if needs_eta
            else None
        )
        return eta, logged, tables
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg["seed"], spawn_key=(trial, _ROLE_SPLIT))
    )
    perm = rng.permutation(logged.n)
    cut = int(round(logged.n * frac))
    if cut < 2 or logged.n - cut < 2:
        raise ConfigError("dr.eta_split: both sides of the split must keep at least two samples")
    eta_idx, eval_idx = np.sort(perm[:cut]), np.sort(perm[cut:])
    eta = (
        fit_reward_model(
            _subset_logged(logged, eta_idx),
            folds=cfg["dr"]["folds"],
            seed=_child_seed(cfg["seed"], trial, _ROLE_ETA),
        )
        if needs_eta
        else None
    )
    dr_logged = _subset_logged(logged, eval_idx)
    dr_tables = [PolicyTable(t.probs[eval_idx]) for t in tables]
    return eta, dr_logged, dr_tables


def compute_bound_report(method, logged, table, x, delta, *, eta=None, mc_schedule=None, mc_seed=0):
    """One bound report for one (method, target) cell; raw methods get a pseudo report."""
    if method == "eslb":
        w = importance_weights(table, logged.behavior_table, logged.actions)
        proxies = mc_estimate_proxies(table, logged.behavior_table, w, mc_seed, mc_schedule)
        return eslb_bound(proxies, wis_estimate(w, logged.rewards), logged.n, x, delta=delta)
    if method == "lambda-is":
        return lambda_is_bound(logged, table, None, x, delta=delta)
    if method == "lambda-dr":
        return lambda_dr_bound(logged, table, eta, None, x, delta=delta)
    if method == "cheb-wis":
        return chebyshev_wis_bound(logged, table, x, delta=delta)
    raise ValueError(f"not a bound method: {method!r}")


# ---------------------------------------------------------------------------
# Study cells (module-level for pickling)


def _evaluate_target_cell(payload: tuple[dict, int]) -> dict:
    cfg, target_idx = payload
    train, _ = _build_train_test(cfg, 0)
    behavior = _build_behavior(cfg, train)
    logged = log_interactions(train, behavior, _child_seed(cfg["seed"], 0, _ROLE_LOG))
    entry = cfg["targets"][target_idx]
    _, table = _build_target(entry, train, logged)
    eta, dr_logged, dr_tables = _eta_and_eval(cfg, logged, [table], 0)
    dr_table = dr_tables[0]
    delta = cfg["delta"]
    reports = {}
    for method in cfg["methods"]:
        dr_method = method in ("lambda-dr", "dr")
        m_logged = dr_logged if dr_method else logged
        m_table = dr_table if dr_method else table
        if method in BOUND_METHODS:
            x = math.log(2.0 / delta) if method == "eslb" else math.log(3.0 / delta)
            rep = compute_bound_report(
                method,
                m_logged,
                m_table,
                x,
                delta,
                eta=eta,
                mc_schedule=_mc_schedule(cfg, m_logged.n),
                mc_seed=_child_seed(cfg["seed"], target_idx, _ROLE_MC),
            )
            reports[method] = rep.to_dict()
        else:
            if method == "dr":
                value = dr_point_estimate(m_logged, m_table, eta)
            else:
                w = importance_weights(m_table, m_logged.behavior_table, m_logged.actions)
                if method == "is":
                    value = is_estimate(w, m_logged.rewards)
                else:
                    value = wis_estimate(w, m_logged.rewards)
            reports[method] = {"method": method, "point_estimate": value}
    return {"target": _target_name(entry, target_idx), "reports": reports}


def _select_trial_cell(payload: tuple[dict, int]) -> dict:
    cfg, trial = payload
    train, test = _build_train_test(cfg, trial)
    behavior = _build_behavior(cfg, train)
    logged = log_interactions(train, behavior, _child_seed(cfg["seed"], trial, _ROLE_LOG))
    built = [_build_target(entry, train, logged) for entry in cfg["targets"]]
    tables = [table for _, table in built]
    eta, dr_logged, dr_tables = _eta_and_eval(cfg, logged, tables, trial)

    test_values = []
    for (policy, _), entry in zip(built, cfg["targets"]):
        test_values.append(true_value(policy, test.features, test.labels))

    out: dict = {"trial": trial, "candidates": [
        {"name": _target_name(entry, i), "test_value": test_values[i]}
        for i, entry in enumerate(cfg["targets"])
    ], "methods": {}}
    for method in cfg["methods"]:
        dr_method = method in ("lambda-dr", "dr")
        m_logged = dr_logged if dr_method else logged
        m_tables = dr_tables if dr_method else tables
        report = score_policies(
            m_logged,
            m_tables,
            method,
            cfg["delta"],
            _child_seed(cfg["seed"], trial, _ROLE_MC),
            eta=eta,
            mc_schedule=_mc_schedule(cfg, m_logged.n),
        )
        chosen_value = None if report.abstained else test_values[report.chosen_index - 1]
        doc = report.to_dict()
        doc["test_value"] = chosen_value
        out["methods"][method] = doc
    return out


def _coverage_trial_cell(payload: tuple[dict, int]) -> dict:
    cfg, trial = payload
    train, _ = _build_train_test(cfg, trial)
    behavior = _build_behavior(cfg, train)
    logged = log_interactions(train, behavior, _child_seed(cfg["seed"], trial, _ROLE_LOG))
    entry = cfg["targets"][0]
    _, table = _build_target(entry, train, logged)
    eta, dr_logged, dr_tables = _eta_and_eval(cfg, logged, [table], trial)
    true_v = gibbs_true_value(entry["tau"], train.num_classes, len(entry.get("faulty", [])))

    w = importance_weights(table, logged.behavior_table, logged.actions)
    n_eff = effective_sample_size(w)
    v_hat = wis_estimate(w, logged.rewards)
    proxies = None
    if "eslb" in cfg["methods"]:
        schedule = _mc_schedule(cfg, logged.n)
        proxies = mc_estimate_proxies(
            table, logged.behavior_table, w, _child_seed(cfg["seed"], trial, _ROLE_MC), schedule
        )

    rows = []
    for delta in cfg["deltas"]:
        for method in cfg["methods"]:
            if method == "eslb":
                rep = eslb_bound(proxies, v_hat, logged.n, math.log(2.0 / delta), delta=delta)
            elif method in ("lambda-dr", "dr"):
                rep = compute_bound_report(method, dr_logged, dr_tables[0], math.log(3.0 / delta), delta, eta=eta)
            else:
                rep = compute_bound_report(method, logged, table, math.log(3.0 / delta), delta, eta=eta)
            lb = rep.lower_bound
            rows.append(
                {
                    "delta": delta,
                    "method": method,
                    "trial": trial,
                    "lower_bound": lb,
                    "point_estimate": rep.point_estimate,
                    "true_value": true_v,
                    "width": true_v - lb,
                    "violation": int(lb > true_v),
                    "n_eff": n_eff,
                }
            )
    return {"trial": trial, "rows": rows}


# ---------------------------------------------------------------------------
# Output helpers


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2) + "\n")


def _cell_text(value) -> str:
    if isinstance(value, float):
        if value == -math.inf:
            return "-inf"
        if value == math.inf:
            return "inf"
        return repr(value)
    return str(value)


def write_csv(path: str, headers: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    for row in rows:
        writer.writerow([_cell_text(v) for v in row])
    _atomic_write(path, buf.getvalue())


def write_markdown_table(path: str, headers: list[str], rows: list[list]) -> None:
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join(["---"] * len(headers)) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(_cell_text(v) for v in row) + " |")
    _atomic_write(path, "\n".join(lines) + "\n")


def _manifest(cfg: dict, command: str) -> dict:
    return {
        "tool": "opeselect",
        "version": __version__,
        "numpy": np.__version__,
        "command": command,
        "seed": cfg["seed"],
        "config": cfg,
    }


class PartialFailure(RuntimeError):
    """Some cells of a study failed; the message enumerates them."""

    def __init__(self, failures: list[str]):
        super().__init__("failed cells: " + "; ".join(failures))
        self.failures = failures


def _guarded(fn, payload):
    try:
        return ("ok", fn(payload))
    except Exception as exc:  # noqa: BLE001 - cell isolation by design
        return ("error", f"{type(exc).__name__}: {exc}")


def _run_cells(fn, payloads, jobs: int, labels: list[str]):
    """Run cells (optionally in worker processes), isolating per-cell failures.

    Returns (results, failures): results holds the successful cells in payload
    order with None placeholders for failed ones; failures enumerates the
    failed cells.  Callers write whatever succeeded before surfacing failures.
    """
    if jobs <= 1:
        outcomes = [_guarded(fn, p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_guard_worker, [(fn, p) for p in payloads], chunksize=1))
    results = [result if status == "ok" else None for status, result in outcomes]
    failures = [f"{label}: {msg}" for label, (status, msg) in zip(labels, outcomes) if status == "error"]
    return results, failures


def _guard_worker(packed):
    fn, payload = packed
    return _guarded(fn, payload)


# ---------------------------------------------------------------------------
# Commands


def run_generate(cfg: dict, outdir: str) -> list[str]:
    ds = cfg["dataset"]
    if ds["kind"] != "generate":
        raise ConfigError("dataset.kind: the generate command needs a generator config")
    gen = GeneratorConfig(
        n=ds["n"],
        d=ds["d"],
        num_classes=ds["num_classes"],
        informative_dims=ds["informative_dims"],
        class_separation=ds["class_separation"],
        noise_scale=ds["noise_scale"],
        seed=_child_seed(cfg["seed"], 0, _ROLE_DATASET),
    )
    dataset = generate_classification(gen)
    os.makedirs(outdir, exist_ok=True)
    out_csv = os.path.join(outdir, "dataset.csv")
    save_csv(dataset, out_csv)
    manifest = os.path.join(outdir, "manifest.json")
    write_json(manifest, _manifest(cfg, "generate"))
    return [out_csv, manifest]


def run_evaluate(cfg: dict, outdir: str, jobs: int = 1) -> list[str]:
    payloads = [(cfg, i) for i in range(len(cfg["targets"]))]
    labels = [_target_name(entry, i) for i, entry in enumerate(cfg["targets"])]
    cells, failures = _run_cells(_evaluate_target_cell, payloads, jobs, labels)
    os.makedirs(outdir, exist_ok=True)
    written = []
    decomp_rows = []
    for cell in cells:
        if cell is None:
            continue
        for method, rep in cell["reports"].items():
            path = os.path.join(outdir, f"evaluate_{cell['target']}_{method}.json")
            write_json(path, rep)
            written.append(path)
            if "lower_bound" in rep:
                decomp_rows.append(
                    [
                        cell["target"],
                        method,
                        rep["point_estimate"],
                        rep["concentration"],
                        rep["bias"],
                        rep["context_term"],
                        rep["lower_bound"],
                        rep["delta"],
                        rep["x"],
                    ]
                )
            else:
                decomp_rows.append([cell["target"], method, rep["point_estimate"], "", "", "", "", "", ""])
    headers = [
        "target",
        "method",
        "point_estimate",
        "concentration",
        "bias",
        "context_term",
        "lower_bound",
        "delta",
        "x",
    ]
    for name, writer in (("decomposition.csv", write_csv), ("decomposition.md", write_markdown_table)):
        path = os.path.join(outdir, name)
        writer(path, headers, decomp_rows)
        written.append(path)
    manifest = os.path.join(outdir, "manifest.json")
    write_json(manifest, _manifest(cfg, "evaluate"))
    written.append(manifest)
    if failures:
        raise PartialFailure(failures)
    return written


def summarize_selection_trials(trials: list[dict], method: str) -> dict:
    """Mean +- std of the chosen policy's test value over non-abstained trials."""
    values = [t["methods"][method]["test_value"] for t in trials]
    kept = [v for v in values if v is not None]
    abstentions = sum(1 for v in values if v is None)
    if kept:
        mean = float(np.mean(kept))
        std = float(np.std(kept))
    else:
        mean, std = -math.inf, 0.0
    return {
        "method": method,
        "trials": len(values),
        "abstentions": abstentions,
        "mean_test_value": mean,
        "std_test_value": std,
    }


def run_select(cfg: dict, outdir: str, jobs: int = 1) -> list[str]:
    payloads = [(cfg, t) for t in range(cfg["trials"])]
    labels = [f"trial {t}" for t in range(cfg["trials"])]
    cells, failures = _run_cells(_select_trial_cell, payloads, jobs, labels)
    cells = [c for c in cells if c is not None]
    if not cells:
        raise PartialFailure(failures)
    os.makedirs(outdir, exist_ok=True)
    written = []
    summary_rows = []
    for method in cfg["methods"]:
        summary = summarize_selection_trials(cells, method)
        doc = {
            "method": method,
            "summary": summary,
            "trials": [
                {
                    "trial": cell["trial"],
                    "candidates": cell["candidates"],
                    "selection": cell["methods"][method],
                }
                for cell in cells
            ],
        }
        path = os.path.join(outdir, f"selection_{method}.json")
        write_json(path, doc)
        written.append(path)
        mean = summary["mean_test_value"]
        cell_text = (
            "-inf"
            if mean == -math.inf
            else f"{mean:.3f} +- {summary['std_test_value']:.3f}"
        )
        summary_rows.append([method, cell_text, summary["abstentions"], summary["trials"]])
    headers = ["method", "test_reward", "abstentions", "trials"]
    for name, writer in (("summary.csv", write_csv), ("summary.md", write_markdown_table)):
        path = os.path.join(outdir, name)
        writer(path, headers, summary_rows)
        written.append(path)
    manifest = os.path.join(outdir, "manifest.json")
    write_json(manifest, _manifest(cfg, "select"))
    written.append(manifest)
    if failures:
        raise PartialFailure(failures)
    return written


def run_coverage(cfg: dict, outdir: str, jobs: int = 1) -> list[str]:
    payloads = [(cfg, t) for t in range(cfg["trials"])]
    labels = [f"trial {t}" for t in range(cfg["trials"])]
    cells, failures = _run_cells(_coverage_trial_cell, payloads, jobs, labels)
    cells = [c for c in cells if c is not None]
    if not cells:
        raise PartialFailure(failures)
    os.makedirs(outdir, exist_ok=True)
    rows = [row for cell in cells for row in cell["rows"]]
    headers = [
        "delta",
        "method",
        "trial",
        "lower_bound",
        "point_estimate",
        "true_value",
        "width",
        "violation",
        "n_eff",
    ]
    written = []
    csv_path = os.path.join(outdir, "coverage.csv")
    write_csv(csv_path, headers, [[r[h] for h in headers] for r in rows])
    written.append(csv_path)

    summary = []
    for delta in cfg["deltas"]:
        for method in cfg["methods"]:
            sub = [r for r in rows if r["delta"] == delta and r["method"] == method]
            widths = [r["width"] for r in sub]
            summary.append(
                {
                    "delta": delta,
                    "method": method,
                    "trials": len(sub),
                    "violation_rate": float(np.mean([r["violation"] for r in sub])),
                    "median_width": float(np.median(widths)),
                    "vacuous_rate": float(np.mean([1.0 if r["lower_bound"] <= 0 else 0.0 for r in sub])),
                    "mean_n_eff": float(np.mean([r["n_eff"] for r in sub])),
                }
            )
    summary_path = os.path.join(outdir, "coverage_summary.json")
    write_json(summary_path, {"cells": summary})
    written.append(summary_path)
    manifest = os.path.join(outdir, "manifest.json")
    write_json(manifest, _manifest(cfg, "coverage"))
    written.append(manifest)
    if failures:
        raise PartialFailure(failures)
    return written
