import hashlib
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import pytest

from boxlevelset.cli import main


def tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main(["synth", "--seed", "7", "--count", "8", "--out", str(out)])
    assert rc == 0
    return out


def test_synth_cli_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--seed", "3", "--count", "3", "--out", str(a)]) == 0
    assert main(["synth", "--seed", "3", "--count", "3", "--out", str(b)]) == 0
    capsys.readouterr()
    assert tree_digest(a) == tree_digest(b)


def test_segment_then_eval(synth_dir, tmp_path, capsys):
    out = tmp_path / "seg"
    rc = main([
        "segment",
        "--images", str(synth_dir),
        "--annotations", str(synth_dir / "annotations.json"),
        "--out", str(out),
        "--jobs", "4",
    ])
    assert rc == 0
    captured = capsys.readouterr()
    payload = json.loads(captured.out)
    assert payload["metrics"]["n_instances"] > 0
    assert not payload["metrics"]["failures"]
    assert "segmented" in captured.err
    assert (out / "results.json").exists()
    # one PNG per instance, grouped by image stem
    pngs = list(out.rglob("*.png"))
    assert len(pngs) == payload["metrics"]["n_instances"]

    rc = main([
        "eval",
        "--pred", str(out / "results.json"),
        "--gt", str(synth_dir / "ground_truth.json"),
    ])
    assert rc == 0
    captured = capsys.readouterr()
    scored = json.loads(captured.out)
    assert scored["n_instances"] == payload["metrics"]["n_instances"]
    assert scored["mean_iou"] >= 0.85
    assert "mean IoU" in captured.err


def test_evolve_demo_writes_frames(synth_dir, tmp_path, capsys):
    ann = json.loads((synth_dir / "annotations.json").read_text())
    image = os.path.join(str(synth_dir), ann[0]["image"])
    box = ",".join(str(v) for v in ann[0]["boxes"][0])
    frames = tmp_path / "frames"
    rc = main([
        "evolve-demo", "--image", image, "--box", box,
        "--frames", str(frames), "--max-iters", "25",
    ])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["iterations"] <= 25
    assert payload["energy_final"] <= payload["energy_initial"]
    stem = Path(image).stem
    names = sorted(p.name for p in frames.glob("*.png"))
    assert f"{stem}_0.png" in names
    assert f"{stem}_{payload['iterations']}.png" in names


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    captured = capsys.readouterr()
    assert "usage:" in captured.err
    assert "error:" in captured.err


def test_no_subcommand(capsys):
    assert main([]) == 1
    assert "subcommand is required" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert main(["segment", "--images", "x"]) == 1
    assert "required" in capsys.readouterr().err


def test_bad_rho_entry(synth_dir, capsys):
    rc = main([
        "segment",
        "--images", str(synth_dir),
        "--annotations", str(synth_dir / "annotations.json"),
        "--out", "/tmp/unused",
        "--rho", "abc",
    ])
    assert rc == 1
    assert "--rho" in capsys.readouterr().err


def test_degenerate_annotations_exit_1(tmp_path, capsys):
    ann = tmp_path / "bad.json"
    ann.write_text(json.dumps([{"image": "x.png", "boxes": [[5, 5, 5, 9, 0]]}]))
    rc = main([
        "segment", "--images", str(tmp_path),
        "--annotations", str(ann), "--out", str(tmp_path / "out"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_eval_missing_file_exit_2(tmp_path, capsys):
    rc = main([
        "eval", "--pred", str(tmp_path / "nope.json"),
        "--gt", str(tmp_path / "nope2.json"),
    ])
    assert rc == 2
    assert "I/O error" in capsys.readouterr().err


def test_dump_config_round_trip(tmp_path, capsys):
    base = ["segment", "--images", "x", "--annotations", "y", "--out", "z"]
    flags = ["--alpha1", "0.25", "--max-iters", "77", "--rho", "2=0.8",
             "--enlarge-factor", "1.5"]
    assert main(base + flags + ["--dump-config"]) == 0
    first = capsys.readouterr().out
    assert "alpha1 = 0.25" in first
    assert "max_iters = 77" in first
    assert "rho_cls.2 = 0.8" in first

    cfg = tmp_path / "run.cfg"
    cfg.write_text(first + "# trailing comment\n")
    assert main(base + ["--config", str(cfg), "--dump-config"]) == 0
    second = capsys.readouterr().out
    assert second == first


def test_flags_beat_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("alpha1 = 0.5\nmax_iters = 10\n")
    base = ["segment", "--images", "x", "--annotations", "y", "--out", "z",
            "--config", str(cfg), "--alpha1", "0.125", "--dump-config"]
    assert main(base) == 0
    out = capsys.readouterr().out
    assert "alpha1 = 0.125" in out  # flag wins
    assert "max_iters = 10" in out  # config beats default


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("gamma = 3\n")
    rc = main(["segment", "--images", "x", "--annotations", "y", "--out", "z",
               "--config", str(cfg), "--dump-config"])
    assert rc == 1
    assert "unknown config key" in capsys.readouterr().err


def test_log_env_var(synth_dir, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BOXLEVELSET_LOG", "info")
    try:
        rc = main([
            "segment",
            "--images", str(synth_dir),
            "--annotations", str(synth_dir / "annotations.json"),
            "--out", str(tmp_path / "out"),
            "--max-iters", "5",
        ])
        assert rc == 0
        assert "instances queued" in capsys.readouterr().err
    finally:
        logger = logging.getLogger("boxlevelset")
        logger.handlers.clear()
        logger.setLevel(logging.NOTSET)


def test_module_help_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "boxlevelset", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "segment" in proc.stdout
    assert "evolve-demo" in proc.stdout
