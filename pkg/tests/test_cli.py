import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tmpgnn import cli
from tmpgnn.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, dispatch, sha256_file

SMALL = ["--nodes", "12", "--layers", "4", "--communities", "2", "--p-in", "0.5"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert dispatch(["synth", *SMALL, "--seed", "3", "-o", "g.csv"]) == EXIT_OK
    return tmp_path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_synth_outputs_and_manifest(workdir):
    for name in ("g.csv", "g.labels.csv", "g.meta.json", "g.manifest.json"):
        assert (workdir / name).exists()
    man = read_json("g.manifest.json")
    assert man["subcommand"] == "synth"
    assert man["config"]["nodes"] == 12 and man["seeds"]["master"] == 3
    assert man["config_hash"] == cli.config_hash(man["config"])
    assert man["outputs"]["g.csv"] == sha256_file("g.csv")
    assert man["version"] and man["wall_clock_seconds"] >= 0


def test_centrality_stdout_and_files(workdir, capsys):
    assert dispatch(["centrality", "g.csv", "--omega", "auto"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["omega"] >= 10 and len(out["mlc"]) == 4
    assert dispatch(["centrality", "g.csv", "-o", "c.csv"]) == EXIT_OK
    with open("c.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["node", "layer", "joint", "cc"]
    cc = np.zeros(4)
    for r in rows:
        cc[int(r["layer"])] += float(r["cc"])
    np.testing.assert_allclose(cc, 1.0, atol=1e-9)
    man = read_json("c.manifest.json")
    assert man["inputs"]["g.csv"] == sha256_file("g.csv")
    assert set(man["outputs"]) == {"c.csv", "c.json"}


def test_embed_writes_grid_csv(workdir):
    assert dispatch(["embed", "g.csv", "--epochs", "2", "--embed-dim", "3", "-o", "z.csv"]) == 0
    with open("z.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["node", "layer", "z_0", "z_1", "z_2"]
    assert len(rows) == 1 + 12 * 4


def test_classify_and_impute_reports(workdir):
    assert dispatch(["classify", "g.csv", "--epochs", "3", "-o", "cl.json"]) == EXIT_OK
    rep = read_json("cl.json")
    assert {"auc_test", "auc_val", "epochs", "seed"} <= set(rep)
    assert dispatch(["impute", "g.csv", "--arch", "etmpgnn2", "--epochs", "2",
                     "-o", "im.json"]) == EXIT_OK
    rep = read_json("im.json")
    assert rep["arch"] == "etmpgnn2" and rep["tau"] == 0.2
    assert {"mae", "rmse", "improvement_vs_mrnn_pct"} <= set(rep)
    assert dispatch(["impute", "g.csv", "--arch", "mrnn", "--grid", "0.1,0.3", "--epochs", "2",
                     "-o", "grid.json"]) == EXIT_OK
    grid = read_json("grid.json")
    assert [r["tau"] for r in grid] == [0.1, 0.3]
    assert all(r["improvement_vs_mrnn_pct"] == 0.0 for r in grid)


@pytest.mark.parametrize("argv", [
    ["centrality", "g.csv", "--bogus"],
    ["nosuch"],
    [],
    ["centrality", "missing.csv"],
    ["centrality"],
    ["centrality", "g.csv", "--omega", "-3"],
    ["impute", "g.csv", "--tau", "1.5"],
    ["embed", "g.csv"],
])
def test_invalid_usage_exits_with_one(workdir, argv):
    assert dispatch(argv) == EXIT_INVALID


def test_malformed_graph_exits_with_one(workdir):
    (workdir / "bad.csv").write_text("layer,src,dst\n0,zero,1\n")
    assert dispatch(["centrality", "bad.csv"]) == EXIT_INVALID


def test_runtime_failure_exits_with_two(workdir, monkeypatch):
    def boom(cfg):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(cli, "run_centrality", boom)
    assert dispatch(["centrality", "g.csv"]) == EXIT_RUNTIME


def test_config_overrides_flags(workdir):
    (workdir / "cfg.json").write_text(json.dumps({"nodes": 8, "layers": 2}))
    assert dispatch(["synth", "--config", "cfg.json", "-o", "h.csv"]) == EXIT_OK
    assert read_json("h.meta.json")["num_nodes"] == 8
    (workdir / "bad.json").write_text(json.dumps({"no_such_option": 1}))
    assert dispatch(["synth", "--config", "bad.json", "-o", "h.csv"]) == EXIT_INVALID
    (workdir / "junk.json").write_text("{not json")
    assert dispatch(["synth", "--config", "junk.json", "-o", "h.csv"]) == EXIT_INVALID


def test_manifest_of_another_subcommand_is_rejected(workdir):
    assert dispatch(["centrality", "g.csv", "--config", "g.manifest.json"]) == EXIT_INVALID


def test_thread_cap_is_recorded(workdir, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert dispatch(["centrality", "g.csv", "-o", "c.csv"]) == EXIT_OK
    assert read_json("c.manifest.json")["threads"] == 1
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert dispatch(["centrality", "g.csv", "-o", "c.csv"]) == EXIT_INVALID


def replay_is_bit_identical(argv, outputs):
    """Run once, snapshot outputs, re-run from the manifest and compare bytes."""
    assert dispatch(argv) == EXIT_OK
    manifest = argv[argv.index("-o") + 1].rsplit(".", 1)[0] + ".manifest.json"
    first = {p: open(p, "rb").read() for p in outputs}
    recorded = read_json(manifest)
    for p in outputs:
        open(p, "wb").write(b"")
    assert dispatch([recorded["subcommand"], "--config", manifest]) == EXIT_OK
    replay = read_json(manifest)
    assert replay["config_hash"] == recorded["config_hash"]
    return all(open(p, "rb").read() == first[p] for p in outputs)


REPLAYS = [
    (["synth", *SMALL, "--seed", "5", "-o", "s.csv"], ["s.csv", "s.labels.csv", "s.meta.json"]),
    (["centrality", "g.csv", "-o", "c.csv"], ["c.csv", "c.json"]),
    (["embed", "g.csv", "--epochs", "3", "-o", "z.csv"], ["z.csv"]),
    (["classify", "g.csv", "--epochs", "3", "-o", "cl.json"], ["cl.json"]),
    (["impute", "g.csv", "--epochs", "2", "-o", "im.json"], ["im.json"]),
]


@pytest.mark.parametrize("argv,outputs", REPLAYS, ids=[r[0][0] for r in REPLAYS])
def test_manifest_replay_is_bit_identical(workdir, argv, outputs):
    assert replay_is_bit_identical(argv, outputs)


def test_console_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "tmpgnn.cli", "centrality", "g.csv"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["omega"] >= 10
    proc = subprocess.run([sys.executable, "-m", "tmpgnn.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip().startswith("tmpgnn")


def test_distance_and_numerator_options_reach_the_embedder(workdir, monkeypatch):
    seen = {}
    real = cli.TMPGNNEmbedder

    def spy(**kwargs):
        seen.update(kwargs)
        return real(**kwargs)

    monkeypatch.setattr(cli, "TMPGNNEmbedder", spy)
    assert dispatch(["embed", "g.csv", "--epochs", "1", "--intra-only", "--cc-numerator", "max",
                     "-o", "z.csv"]) == EXIT_OK
    assert seen["intra_only"] is True and seen["cc_numerator"] == "max"
