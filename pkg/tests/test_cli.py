"""Subprocess harness for the command-line interface and its exit codes."""

import json
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "veritensor"]


def run(*args, **kw):
    return subprocess.run(CLI + list(args), capture_output=True, text=True, **kw)


@pytest.fixture(scope="module")
def cli_model(tmp_path_factory):
    from veritensor.store import make_toy_model
    from conftest import mini_config

    d = tmp_path_factory.mktemp("cli_model")
    make_toy_model(d, mini_config(), seed=3)
    return d


@pytest.fixture(scope="module")
def cli_session(cli_model, tmp_path_factory):
    work = tmp_path_factory.mktemp("cli_work")
    commit = run("commit", "--model", str(cli_model))
    assert commit.returncode == 0
    proof = work / "proof.bin"
    prove = run("prove", "--model", str(cli_model), "--tokens", "1,2,3",
                "--proof", str(proof),
                "--commitment", str(cli_model / "commitment.json"))
    assert prove.returncode == 0, prove.stderr
    return {"model": cli_model, "proof": proof,
            "commitment": cli_model / "commitment.json",
            "root_hex": commit.stdout.strip(),
            "logits_hex": prove.stdout.strip()}


def test_commit_prints_root_and_is_deterministic(cli_session, cli_model):
    again = run("commit", "--model", str(cli_model))
    assert again.returncode == 0
    assert again.stdout.strip() == cli_session["root_hex"]
    assert len(cli_session["root_hex"]) == 64
    doc = json.loads((cli_model / "commitment.json").read_text())
    assert doc["root"] == cli_session["root_hex"]


def test_verify_accepts_honest_proof(cli_session):
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(cli_session["proof"]), "--tokens", "1,2,3")
    assert r.returncode == 0 and "accept" in r.stdout


def test_verify_logits_digest_flag(cli_session):
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(cli_session["proof"]), "--tokens", "1,2,3",
            "--logits", cli_session["logits_hex"])
    assert r.returncode == 0
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(cli_session["proof"]), "--tokens", "1,2,3",
            "--logits", "00" * 32)
    assert r.returncode == 1


def test_verify_spot_mode_and_threads(cli_session):
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(cli_session["proof"]), "--tokens", "1,2,3",
            "--mode", "spot", "--spot", "0.3", "--seed", "5", "--threads", "2")
    assert r.returncode == 0


def test_verify_flipped_byte_exits_1(cli_session, tmp_path):
    raw = bytearray(cli_session["proof"].read_bytes())
    raw[len(raw) // 2] ^= 1
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(raw))
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(bad), "--tokens", "1,2,3")
    assert r.returncode == 1 and "reject" in r.stdout


def test_verify_wrong_tokens_exits_1(cli_session):
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(cli_session["proof"]), "--tokens", "3,2,1")
    assert r.returncode == 1 and "input-digest" in r.stdout


def test_tokens_from_file(cli_session, tmp_path):
    tf = tmp_path / "tokens.txt"
    tf.write_text("1, 2, 3")
    r = run("verify", "--commitment", str(cli_session["commitment"]),
            "--proof", str(cli_session["proof"]), "--tokens", f"@{tf}")
    assert r.returncode == 0


def test_malformed_manifest_exits_2(cli_model, tmp_path):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(cli_model, broken)
    (broken / "manifest.json").write_text("{not json")
    r = run("commit", "--model", str(broken))
    assert r.returncode == 2


def test_truncated_tensor_exits_3(cli_model, tmp_path):
    import shutil

    broken = tmp_path / "trunc"
    shutil.copytree(cli_model, broken)
    f = broken / "L0.wq_a.bin"
    f.write_bytes(f.read_bytes()[:-8])
    r = run("commit", "--model", str(broken))
    assert r.returncode == 3


def test_missing_model_dir_exits_4():
    r = run("commit", "--model", "/nonexistent/model/dir")
    assert r.returncode == 4


def test_shape_reference_outputs():
    r = run("shape", "embedding", "--rows", "24", "--dim", "7168",
            "--segment", "224")
    assert r.returncode == 0 and "counts: 768/24/1" in r.stdout
    r = run("shape", "gemm", "--a", "24", "--n", "7168", "--b", "512",
            "--segment", "112")
    assert r.returncode == 0 and "counts: 64/64/1" in r.stdout
    r = run("shape", "selector", "--rows", "24", "--group-count", "8")
    assert "counts: 192/24/192/24/1" in r.stdout


def test_shape_unknown_component_exits_2():
    r = run("shape", "frobnicator", "--rows", "2")
    assert r.returncode == 2


def test_shape_missing_flag_exits_2():
    r = run("shape", "embedding", "--rows", "24")
    assert r.returncode == 2


def test_usage_error_exits_2():
    r = run("prove", "--model")
    assert r.returncode == 2


def test_selftest_passes():
    r = run("selftest")
    assert r.returncode == 0 and "selftest ok" in r.stdout


def test_log_env_var(cli_session):
    r = subprocess.run(
        CLI + ["shape", "gemm", "--n", "8", "--segment", "4"],
        capture_output=True, text=True, env={"VERITENSOR_LOG": "DEBUG",
                                             "PATH": "/usr/bin:/bin"},
    )
    assert r.returncode == 0
