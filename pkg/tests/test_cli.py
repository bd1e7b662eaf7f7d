import json

import numpy as np
import pytest
from PIL import Image

from diffad.cli import main


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("[ok]") == 3


def test_selftest_mutation_fails(capsys):
    assert main(["selftest", "--mutate", "sign-flip"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] roundtrip" in out


def test_synth_bench_cli(tmp_path, capsys):
    code = main([
        "synth-bench",
        "--out", str(tmp_path / "bench"),
        "--synth.n_images", "8",
        "--synth.side", "32",
        "--run.workers", "1",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "ROC_P" in out
    report = json.loads((tmp_path / "bench" / "report.json").read_text())
    assert "mean" in report and "per_class" in report


def test_scan_and_run_and_evaluate_cli(tmp_path, capsys):
    rng = np.random.default_rng(1)
    root = tmp_path / "data"
    for i in range(2):
        img = (rng.normal(0.5, 0.05, (64, 64, 3)).clip(0, 1) * 255).astype(np.uint8)
        p = root / "bolt" / "test" / "good" / f"{i:03d}.png"
        p.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(p)
    bad = rng.normal(0.5, 0.05, (64, 64, 3))
    bad[10:20, 10:20, 2] += 0.5
    p = root / "bolt" / "test" / "chip" / "000.png"
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((bad.clip(0, 1) * 255).astype(np.uint8)).save(p)
    mask = np.zeros((64, 64), dtype=np.uint8)
    mask[10:20, 10:20] = 255
    mp = root / "bolt" / "ground_truth" / "chip" / "000_mask.png"
    mp.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask).save(mp)

    manifest = tmp_path / "manifest.jsonl"
    assert main(["scan", "--layout", "mvtec", "--root", str(root), "--out", str(manifest)]) == 0
    assert manifest.is_file()

    out_dir = tmp_path / "results"
    assert main([
        "run", "--manifest", str(manifest), "--out", str(out_dir),
        "--run.resize_side", "64", "--ddim.t_prime", "5", "--run.workers", "1",
    ]) == 0

    assert main([
        "evaluate", "--manifest", str(manifest), "--results", str(out_dir),
        "--run.resize_side", "64",
    ]) == 0
    table = capsys.readouterr().out
    assert "bolt" in table
    assert (out_dir / "report.json").is_file()


def test_sweep_cli_table_shape(tmp_path, capsys):
    code = main([
        "sweep", "--values", "10,5",
        "--out", str(tmp_path / "sweep"),
        "--synth.n_images", "6", "--synth.side", "32", "--run.workers", "1",
    ])
    assert code == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip()]
    assert lines[0].split()[0] == "t_prime"
    assert len(lines) == 3


def test_heatmap_cli(tmp_path, capsys):
    img_path = tmp_path / "input.png"
    rng = np.random.default_rng(2)
    arr = (rng.normal(0.5, 0.05, (64, 64, 3)).clip(0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(img_path)
    out_dir = tmp_path / "hm"
    code = main([
        "heatmap", "--image", str(img_path), "--out", str(out_dir),
        "--run.resize_side", "64", "--ddim.t_prime", "5",
        "--backend.kind", "constant",
    ])
    assert code == 0
    assert (out_dir / "heatmap.png").is_file()
    sidecar = json.loads((out_dir / "heatmap.json").read_text())
    assert "image_score" in sidecar and sidecar["t_prime"] == 5
    assert (out_dir / "reconstruction.png").is_file()
    # constant backend reconstructs exactly: heatmap is all black
    hm = np.asarray(Image.open(out_dir / "heatmap.png"))
    assert (hm == 0).all()


def test_cli_error_is_single_line_with_prefix(tmp_path, capsys):
    code = main(["run", "--manifest", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error[")
    assert len(err.strip().splitlines()) == 1


def test_cli_unknown_dotted_key_rejected(capsys):
    code = main(["synth-bench", "--nope.key", "1"])
    assert code == 2
    assert "error[" in capsys.readouterr().err


def test_cli_bad_config_value_rejected(tmp_path, capsys):
    code = main(["synth-bench", "--ddim.t_prime", "200", "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "t_prime" in err
