"""End-to-end CLI runs: exit codes, report schema, determinism."""

import json
import math

import jsonschema
import numpy as np
import pytest

from weightprov.cli import main
from weightprov.containers import load_model, save_model
from weightprov.experiments import prune_depth, scale_residual_branches, toy_transformer_arch
from weightprov.report import load_schema
from weightprov.training import TrainConfig, make_null_pair


@pytest.fixture(scope="module")
def schema():
    return load_schema()


@pytest.fixture(scope="module")
def model_files(tmp_path_factory):
    """Two independent toy models and a depth-pruned copy, saved to disk."""
    root = tmp_path_factory.mktemp("models")
    arch = toy_transformer_arch(L=4, d_mlp=32)
    cfg = TrainConfig(steps=150, batch_size=64)
    a, b = make_null_pair(arch, data_seed=21, init_seeds=(31, 32), cfg=cfg)
    a = scale_residual_branches(a, 0.3)
    b = scale_residual_branches(b, 0.3)
    pruned = prune_depth(a, [0, 2, 3])
    paths = {}
    for name, model in [("a", a), ("b", b), ("pruned", pruned)]:
        container = root / f"{name}.bin"
        manifest = root / f"{name}.manifest.json"
        save_model(model, container, manifest)
        paths[name] = (str(container), str(manifest))
    return paths


def run_cli(*argv):
    return main(list(argv))


def read_report(path):
    with open(path) as fh:
        return json.load(fh)


class TestCmdTest:
    def test_self_comparison_saturates(self, model_files, tmp_path, schema):
        a = model_files["a"]
        out = tmp_path / "r.json"
        code = run_cli(
            "test", "--model-a", a[0], "--manifest-a", a[1],
            "--model-b", a[0], "--manifest-b", a[1],
            "--stat", "u", "--out", str(out),
        )
        assert code == 0
        doc = read_report(out)
        jsonschema.validate(doc, schema)
        assert doc["verdict"]["phi_u"]["log10_p"] <= math.log10(2.3e-308)

    def test_independent_pair_match_stat(self, model_files, tmp_path, schema):
        a, b = model_files["a"], model_files["b"]
        out = tmp_path / "r.json"
        code = run_cli(
            "test", "--model-a", a[0], "--manifest-a", a[1],
            "--model-b", b[0], "--manifest-b", b[1],
            "--stat", "match", "--tokens", "4,16", "--out", str(out),
        )
        assert code == 0
        doc = read_report(out)
        jsonschema.validate(doc, schema)
        p = doc["verdict"]["phi_match"]["display_p"]
        assert 0.0 < p <= 1.0

    def test_jsd_and_l2_and_huref(self, model_files, tmp_path, schema):
        a, b = model_files["a"], model_files["b"]
        for stat in ("jsd", "l2", "huref"):
            out = tmp_path / f"{stat}.json"
            code = run_cli(
                "test", "--model-a", a[0], "--manifest-a", a[1],
                "--model-b", b[0], "--manifest-b", b[1],
                "--stat", stat, "--tokens", "2,8", "--T", "9", "--out", str(out),
            )
            assert code == 0
            jsonschema.validate(read_report(out), schema)

    def test_incompatible_architectures_exit_3(self, model_files, tmp_path):
        a, pruned = model_files["a"], model_files["pruned"]
        code = run_cli(
            "test", "--model-a", a[0], "--manifest-a", a[1],
            "--model-b", pruned[0], "--manifest-b", pruned[1],
            "--stat", "u", "--out", str(tmp_path / "r.json"),
        )
        assert code == 3

    def test_missing_file_exit_2(self, model_files, tmp_path):
        a = model_files["a"]
        code = run_cli(
            "test", "--model-a", "/nonexistent.bin", "--manifest-a", a[1],
            "--model-b", a[0], "--manifest-b", a[1],
            "--stat", "u", "--out", str(tmp_path / "r.json"),
        )
        assert code == 2

    def test_report_reproducible(self, model_files, tmp_path):
        a, b = model_files["a"], model_files["b"]
        docs = []
        for name in ("r1.json", "r2.json"):
            out = tmp_path / name
            assert run_cli(
                "test", "--model-a", a[0], "--manifest-a", a[1],
                "--model-b", b[0], "--manifest-b", b[1],
                "--stat", "h", "--tokens", "2,8", "--seed", "5", "--out", str(out),
            ) == 0
            doc = read_report(out)
            doc.pop("timing")
            doc["args"].pop("out")
            docs.append(doc)
        assert docs[0] == docs[1]


class TestCmdLocalize:
    def test_planted_blocks_reported(self, model_files, tmp_path, schema):
        a, pruned = model_files["a"], model_files["pruned"]
        out = tmp_path / "loc.json"
        code = run_cli(
            "localize", "--model-a", a[0], "--manifest-a", a[1],
            "--model-b", pruned[0], "--manifest-b", pruned[1],
            "--tokens", "8,32", "--out", str(out),
        )
        assert code == 0
        doc = read_report(out)
        jsonschema.validate(doc, schema)
        pairs = sorted(tuple(e["blocks"]) for e in doc["results"][0]["per_block"])
        assert pairs == [(0, 0), (2, 1), (3, 2)]
        assert all("assignment" in e for e in doc["results"][0]["per_block"])

    def test_degenerate_threshold(self, model_files, tmp_path):
        a, b = model_files["a"], model_files["b"]
        out = tmp_path / "loc.json"
        code = run_cli(
            "localize", "--model-a", a[0], "--manifest-a", a[1],
            "--model-b", b[0], "--manifest-b", b[1],
            "--threshold", "1.5", "--tokens", "2,8", "--out", str(out),
        )
        assert code == 0
        doc = read_report(out)
        assert len(doc["results"][0]["per_block"]) == 16


class TestCmdTransform:
    def test_transform_roundtrip_and_determinism(self, model_files, tmp_path):
        a = model_files["a"]
        outs = []
        for name in ("t1.bin", "t2.bin"):
            out = tmp_path / name
            code = run_cli(
                "transform", "--model", a[0], "--manifest", a[1],
                "--kind", "rotate", "--seed", "9", "--out", str(out),
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        sidecar = json.loads((tmp_path / "t1.bin.transform.json").read_text())
        assert sidecar["transform"] == {"kind": "rotate", "seed": 9,
                                        "rotation_gamma_log_sigma": 1.5}
        assert sidecar["self_check_max_logit_diff"] <= 1e-8

    def test_transformed_model_loads_and_defeats_phi_u(self, model_files, tmp_path):
        a = model_files["a"]
        out = tmp_path / "camo.bin"
        assert run_cli(
            "transform", "--model", a[0], "--manifest", a[1],
            "--kind", "permute", "--seed", "4", "--out", str(out),
        ) == 0
        camo = load_model(out, str(out) + ".manifest.json")
        original = load_model(a[0], a[1])
        from weightprov.independence import phi_match_all_blocks, phi_u_block
        from weightprov.model import random_token_batch

        p_u = phi_u_block(original, camo, 0)
        assert math.exp(p_u.ln_p) > 1e-4
        batch = random_token_batch(original.manifest.V, 4, 16, 0)
        for outcome in phi_match_all_blocks(original, camo, batch):
            assert outcome.pvalue.saturated


class TestCmdSimulate:
    def test_single_trial_report_valid(self, tmp_path, schema):
        out = tmp_path / "sim.json"
        code = run_cli(
            "simulate", "--suite", "power", "--trials", "1", "--seed", "3",
            "--out", str(out),
        )
        assert code == 0
        doc = read_report(out)
        jsonschema.validate(doc, schema)
        summary = doc["results"][0]["config"]["summary"]
        assert summary["trials"] == 1
        assert set(summary["fraction_significant"]) == {"phi_u", "phi_h", "phi_match"}
