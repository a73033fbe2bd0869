"""Bundled experiment configs, addressable by name via ``--config <name>``.

``synthetic-coverage`` pins the moderate-mismatch study (n = 10^4, both
temperatures 0.3, behavior faulty on {4, 5}, target faulty on {1}); the Gibbs
structure alone fixes the difficulty, E[W^2] ~= 15.2 per sample, so the
effective sample size lands around 655-660 regardless of feature noise.
``synthetic-selection`` pins the 5-action selection benchmark (faulty behavior
at tau = 0.2, ideal/fitted targets at tau = 0.1); the sample size is meant to
be overridden per run.  ``quickstart-evaluate`` is a small smoke-test config.
"""

from __future__ import annotations

import copy

SYNTHETIC_COVERAGE = {
    "seed": 202406,
    "delta": 0.05,
    "deltas": [0.01, 0.05, 0.1, 0.5],
    "trials": 100,
    "methods": ["eslb", "lambda-is", "lambda-dr", "cheb-wis"],
    "dataset": {
        "kind": "generate",
        "n": 10_000,
        "n_test": 1,
        "d": 20,
        "num_classes": 5,
        "informative_dims": 10,
        "class_separation": 2.0,
        "noise_scale": 1.0,
    },
    "behavior": {"tau": 0.3, "faulty": [4, 5]},
    "targets": [{"kind": "faulty", "tau": 0.3, "faulty": [1]}],
    "mc": {"mode": "fixed", "iterations": 20, "batch_size": 64},
}

SYNTHETIC_SELECTION = {
    "seed": 202407,
    "delta": 0.01,
    "trials": 10,
    "methods": ["eslb", "lambda-is", "lambda-dr", "cheb-wis", "dr", "is", "wis"],
    "dataset": {
        "kind": "generate",
        "n": 5_000,
        "n_test": 50_000,
        "d": 20,
        "num_classes": 5,
        "informative_dims": 10,
        "class_separation": 2.0,
        "noise_scale": 1.5,
    },
    "behavior": {"tau": 0.2, "faulty": [4, 5]},
    "targets": [
        {"kind": "ideal", "tau": 0.1},
        {"kind": "fitted-is", "tau": 0.1, "steps": 2000, "step_size": 0.08},
        {"kind": "fitted-wis", "tau": 0.1, "steps": 2000, "step_size": 0.08},
    ],
    "mc": {"mode": "fixed", "iterations": 25, "batch_size": 64},
    # Strict fixed-eta variant: the DR-family bound assumes eta independent of
    # the evaluated sample, so eta trains on a disjoint half of the log.
    "dr": {"eta_split": 0.5},
}

QUICKSTART_EVALUATE = {
    "seed": 7,
    "delta": 0.05,
    "methods": ["eslb", "lambda-is", "cheb-wis", "wis"],
    "dataset": {
        "kind": "generate",
        "n": 2_000,
        "n_test": 1,
        "d": 20,
        "num_classes": 5,
        "informative_dims": 10,
        "class_separation": 2.0,
        "noise_scale": 1.0,
    },
    "behavior": {"tau": 0.3, "faulty": [4, 5]},
    "targets": [{"kind": "faulty", "tau": 0.3, "faulty": [1]}],
    "mc": {"mode": "fixed", "iterations": 15, "batch_size": 64},
}

BUNDLED = {
    "synthetic-coverage": SYNTHETIC_COVERAGE,
    "synthetic-selection": SYNTHETIC_SELECTION,
    "quickstart-evaluate": QUICKSTART_EVALUATE,
}


def bundled_config(name: str) -> dict:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled config {name!r}; available: {sorted(BUNDLED)}")
    return copy.deepcopy(BUNDLED[name])
