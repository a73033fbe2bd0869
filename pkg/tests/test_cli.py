import json
import os
from pathlib import Path

import numpy as np
import pytest

from opeselect.cli import main
from opeselect.data import load_csv
from opeselect.runner import ConfigError, normalize_config

TINY_EVALUATE = """
seed = 5
delta = 0.05
methods = ["eslb", "lambda-is", "lambda-dr", "cheb-wis", "dr", "is", "wis"]

[dataset]
kind = "generate"
n = 300
n_test = 50

[behavior]
tau = 0.3
faulty = [2]

[[targets]]
kind = "ideal"
tau = 0.3

[[targets]]
kind = "fitted-wis"
tau = 0.3
steps = 30
step_size = 0.05

[mc]
mode = "fixed"
iterations = 4
batch_size = 16
"""

TINY_SELECT = """
seed = 6
delta = 0.05
trials = 2
methods = ["eslb", "wis"]

[dataset]
kind = "generate"
n = 250
n_test = 200
num_classes = 3
informative_dims = 4

[behavior]
tau = 0.4
faulty = [1]

[[targets]]
kind = "ideal"
tau = 0.3

[[targets]]
kind = "faulty"
tau = 0.3
faulty = [2]

[mc]
mode = "fixed"
iterations = 4
batch_size = 16
"""

TINY_COVERAGE = """
seed = 7
trials = 3
deltas = [0.1, 0.5]
methods = ["eslb", "cheb-wis"]

[dataset]
kind = "generate"
n = 150
n_test = 1

[behavior]
tau = 0.2
faulty = [3]

[[targets]]
kind = "faulty"
tau = 0.2
faulty = [1]

[mc]
mode = "fixed"
iterations = 4
batch_size = 16
"""


def write(tmp_path: Path, name: str, text: str) -> str:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_tree(root: str) -> dict:
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = os.path.join(base, f)
            out[os.path.relpath(p, root)] = Path(p).read_bytes()
    return out


class TestGenerate:
    def test_writes_dataset_and_manifest(self, tmp_path):
        cfg = write(tmp_path, "gen.toml", "seed = 1\n[dataset]\nkind = 'generate'\nn = 40\nnum_classes = 3\ninformative_dims = 4\n")
        out = tmp_path / "out"
        assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
        ds = load_csv(out / "dataset.csv")
        assert ds.n == 40 and ds.num_classes == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "generate" and manifest["seed"] == 1


class TestEvaluate:
    def test_reports_and_decomposition(self, tmp_path):
        cfg = write(tmp_path, "eval.toml", TINY_EVALUATE)
        out = tmp_path / "out"
        assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
        report = json.loads((out / "evaluate_target1-ideal_eslb.json").read_text())
        assert report["method"] == "eslb"
        assert set(report) >= {"point_estimate", "concentration", "bias", "context_term", "lower_bound", "delta", "x"}
        table = (out / "decomposition.csv").read_text().strip().splitlines()
        assert len(table) == 1 + 2 * 7  # header + targets x methods
        assert (out / "decomposition.md").exists()

    def test_method_flag_restricts(self, tmp_path):
        cfg = write(tmp_path, "eval.toml", TINY_EVALUATE)
        out = tmp_path / "out"
        assert main(["evaluate", "--config", cfg, "--out", str(out), "--method", "wis"]) == 0
        names = {p.name for p in out.iterdir()}
        assert "evaluate_target1-ideal_wis.json" in names
        assert not any("eslb" in n for n in names)


class TestSelect:
    def test_summary_and_reports(self, tmp_path):
        cfg = write(tmp_path, "select.toml", TINY_SELECT)
        out = tmp_path / "out"
        assert main(["select", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "selection_eslb.json").read_text())
        assert doc["summary"]["trials"] == 2
        assert len(doc["trials"]) == 2
        chosen = doc["trials"][0]["selection"]["chosen_index"]
        assert chosen is None or 1 <= chosen <= 2
        lines = (out / "summary.csv").read_text().strip().splitlines()
        assert lines[0].startswith("method,")
        assert len(lines) == 3

    def test_single_target_trivially_selected(self, tmp_path):
        text = TINY_SELECT.replace('[[targets]]\nkind = "faulty"\ntau = 0.3\nfaulty = [2]\n\n', "")
        cfg = write(tmp_path, "single.toml", text)
        out = tmp_path / "out"
        assert main(["select", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "selection_wis.json").read_text())
        assert all(t["selection"]["chosen_index"] == 1 for t in doc["trials"])


class TestCoverage:
    def test_rows_and_summary(self, tmp_path):
        cfg = write(tmp_path, "cov.toml", TINY_COVERAGE)
        out = tmp_path / "out"
        assert main(["coverage", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "coverage.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 3 * 2 * 2  # header + trials x deltas x methods
        summary = json.loads((out / "coverage_summary.json").read_text())
        assert len(summary["cells"]) == 4
        for cell in summary["cells"]:
            assert 0.0 <= cell["violation_rate"] <= 1.0

    def test_vacuous_cells_render_as_minus_inf(self, tmp_path):
        # Chebyshev at n=150 with this mismatch is past vacuous (N_x <= 0).
        cfg = write(tmp_path, "cov.toml", TINY_COVERAGE)
        out = tmp_path / "out"
        main(["coverage", "--config", cfg, "--out", str(out)])
        body = (out / "coverage.csv").read_text()
        assert "-inf" in body

    def test_requires_generated_dataset(self, tmp_path):
        text = TINY_COVERAGE.replace('kind = "generate"\nn = 150\nn_test = 1', 'kind = "csv"\npath = "x.csv"')
        cfg = write(tmp_path, "cov.toml", text)
        assert main(["coverage", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


class TestDeterminismAcrossWorkers:
    @pytest.mark.parametrize("command, config_text", [
        ("evaluate", TINY_EVALUATE),
        ("select", TINY_SELECT),
        ("coverage", TINY_COVERAGE),
    ])
    def test_byte_identical_one_vs_many_workers(self, tmp_path, command, config_text):
        cfg = write(tmp_path, "cfg.toml", config_text)
        out1, out8 = tmp_path / "w1", tmp_path / "w8"
        assert main([command, "--config", cfg, "--out", str(out1), "--jobs", "1"]) == 0
        assert main([command, "--config", cfg, "--out", str(out8), "--jobs", "8"]) == 0
        assert read_tree(str(out1)) == read_tree(str(out8))


class TestSoftmaxFileTarget:
    def test_policy_file_round_trips_through_evaluate(self, tmp_path):
        import numpy as np

        from opeselect.policies import LinearSoftmaxPolicy, policy_to_json

        d, k = 20, 5
        pol = LinearSoftmaxPolicy(theta=np.random.default_rng(0).normal(size=(d, k)), tau=0.5)
        pol_path = tmp_path / "policy.json"
        pol_path.write_text(policy_to_json(pol), encoding="utf-8")
        text = TINY_EVALUATE.replace(
            '[[targets]]\nkind = "fitted-wis"\ntau = 0.3\nsteps = 30\nstep_size = 0.05\n',
            f'[[targets]]\nkind = "softmax-file"\npath = "{pol_path}"\n',
        ).replace('methods = ["eslb", "lambda-is", "lambda-dr", "cheb-wis", "dr", "is", "wis"]', 'methods = ["wis", "eslb"]')
        cfg = write(tmp_path, "eval.toml", text)
        out = tmp_path / "out"
        assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "evaluate_target2-softmax-file_wis.json").exists()


class TestPartialFailures:
    def test_failed_cell_enumerated_and_exit_one(self, tmp_path, capsys):
        # Second target points at a missing policy file: its cell fails while
        # the first target's reports are still written.
        text = TINY_EVALUATE.replace(
            '[[targets]]\nkind = "fitted-wis"\ntau = 0.3\nsteps = 30\nstep_size = 0.05\n',
            '[[targets]]\nkind = "softmax-file"\npath = "/nonexistent/policy.json"\n',
        )
        cfg = write(tmp_path, "eval.toml", text)
        out = tmp_path / "out"
        assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 1
        err = capsys.readouterr().err
        assert "failed cell: target2-softmax-file" in err
        assert (out / "evaluate_target1-ideal_wis.json").exists()


class TestConfigHandling:
    def test_json_config_accepted(self, tmp_path):
        doc = {
            "seed": 3,
            "dataset": {"kind": "generate", "n": 30, "num_classes": 3, "informative_dims": 3},
        }
        cfg = write(tmp_path, "gen.json", json.dumps(doc))
        assert main(["generate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0

    def test_bundled_name_resolves(self, tmp_path):
        # Overriding n keeps the smoke test fast.
        rc = main([
            "evaluate", "--config", "quickstart-evaluate", "--out", str(tmp_path / "o"),
            "--method", "wis",
        ])
        assert rc == 0

    def test_validation_error_has_field_path(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.toml", "[dataset]\nkind = 'generate'\n")
        assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "dataset.n" in capsys.readouterr().err

    def test_unknown_method_rejected(self, tmp_path, capsys):
        text = TINY_EVALUATE.replace('"wis"]', '"bootstrap"]')
        cfg = write(tmp_path, "bad.toml", text)
        assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "methods" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["evaluate", "--config", "nope.toml", "--out", str(tmp_path / "o")]) == 2

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, "gen.toml", "seed = 1\n[dataset]\nkind = 'generate'\nn = 25\nnum_classes = 3\ninformative_dims = 3\n")
        out_a, out_b, out_c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        monkeypatch.setenv("OPE_SEED", "42")
        assert main(["generate", "--config", cfg, "--out", str(out_a)]) == 0
        manifest = json.loads((out_a / "manifest.json").read_text())
        assert manifest["seed"] == 42
        # The explicit flag wins over the environment.
        assert main(["generate", "--config", cfg, "--out", str(out_b), "--seed", "43"]) == 0
        assert json.loads((out_b / "manifest.json").read_text())["seed"] == 43
        monkeypatch.delenv("OPE_SEED")
        assert main(["generate", "--config", cfg, "--out", str(out_c)]) == 0
        assert json.loads((out_c / "manifest.json").read_text())["seed"] == 1

    def test_eta_split_flag_roundtrips_to_manifest(self, tmp_path):
        cfg = write(tmp_path, "eval.toml", TINY_EVALUATE)
        out = tmp_path / "o"
        assert main(["evaluate", "--config", cfg, "--out", str(out), "--eta-split", "0.4"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["dr"]["eta_split"] == 0.4

    def test_normalize_rejects_bad_delta(self):
        with pytest.raises(ConfigError, match="delta"):
            normalize_config({"delta": 2.0, "dataset": {"kind": "generate", "n": 10}}, "generate")

    def test_mc_flags(self, tmp_path):
        cfg = write(tmp_path, "eval.toml", TINY_EVALUATE)
        out = tmp_path / "o"
        assert main([
            "evaluate", "--config", cfg, "--out", str(out),
            "--method", "eslb", "--mc-adaptive-eps", "0.25",
        ]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["mc"]["mode"] == "adaptive"
        report = json.loads((out / "evaluate_target1-ideal_eslb.json").read_text())
        assert report["diagnostics"]["mc_error_budget"] == 0.25
