"""Pipeline equivalence: the stub server must be indistinguishable from the
pipeline's in-process mock backend.

The pipeline package is driven purely through its public surfaces: the
``maskrefine`` CLI generates fixtures and runs refinement; this server is
reached over the stdio wire protocol. Refined label maps must match byte
for byte, and the per-class scores in the run logs must agree within 1e-5.
"""
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

SCENES = 20

pytestmark = pytest.mark.skipif(
    shutil.which("maskrefine") is None,
    reason="the maskrefine CLI is not installed",
)


def run_cli(*args, env=None):
    result = subprocess.run(
        ["maskrefine", *args],
        capture_output=True,
        text=True,
        env=env,
    )
    assert result.returncode == 0, result.stderr
    return result


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    run_cli(
        "synth", "--out", str(root), "--scenes", str(SCENES), "--seed", "4000",
        "--width", "96", "--height", "96", "--objects", "1-3",
        "--dilate", "3", "--noise", "0.1",
    )
    return root


def test_stub_matches_in_process_mock(fixtures, tmp_path_factory):
    mock_out = tmp_path_factory.mktemp("mock_out")
    bridge_out = tmp_path_factory.mktemp("bridge_out")
    run_cli(
        "refine", str(fixtures), str(mock_out),
        "--backend", "mock", "--points_per_side", "12",
    )
    stub_cmd = f"stdio:{sys.executable} -m sambridge --stub"
    run_cli(
        "refine", str(fixtures), str(bridge_out),
        "--backend", stub_cmd, "--points_per_side", "12",
    )

    names = sorted(p.name for p in mock_out.glob("*.png"))
    assert len(names) == SCENES
    for name in names:
        assert (mock_out / name).read_bytes() == (bridge_out / name).read_bytes(), name

    mock_log = [
        json.loads(line)
        for line in (mock_out / "run_log.jsonl").read_text().splitlines()
    ]
    bridge_log = [
        json.loads(line)
        for line in (bridge_out / "run_log.jsonl").read_text().splitlines()
    ]
    assert len(mock_log) == len(bridge_log) == SCENES
    for mock_row, bridge_row in zip(mock_log, bridge_log):
        assert mock_row["file"] == bridge_row["file"]
        assert mock_row["status"] == bridge_row["status"] == "ok"
        assert len(mock_row["classes"]) == len(bridge_row["classes"])
        for mock_cls, bridge_cls in zip(mock_row["classes"], bridge_row["classes"]):
            assert mock_cls["class_id"] == bridge_cls["class_id"]
            assert mock_cls["status"] == bridge_cls["status"]
            assert abs(mock_cls["score"] - bridge_cls["score"]) <= 1e-5


def test_stub_over_env_var(fixtures, tmp_path_factory, monkeypatch):
    import os

    out = tmp_path_factory.mktemp("env_out")
    env = dict(os.environ)
    env["UO_SAM_BRIDGE"] = f"stdio:{sys.executable} -m sambridge --stub"
    run_cli(
        "refine", str(fixtures), str(out), "--points_per_side", "8", env=env
    )
    log = (out / "run_log.jsonl").read_text().splitlines()
    assert len(log) == SCENES
    assert all(json.loads(line)["status"] == "ok" for line in log)
