import json

import numpy as np

from evomask.cli import main
from evomask.core import make_mask, project_mask, right_half_region
from evomask.formats import read_png, write_bfm
from evomask.harness import butterfly_scene


def test_fixture_then_eval_zero_mask(tmp_path, capsys):
    assert main(["fixture", "--name", "canonical-butterfly", "--out", str(tmp_path)]) == 0
    write_bfm(tmp_path / "zero.bfm", np.zeros((128, 64, 3), dtype=np.int16))
    code = main(
        [
            "eval",
            "--image",
            str(tmp_path / "scene.png"),
            "--mask",
            str(tmp_path / "zero.bfm"),
            "--config",
            str(tmp_path / "attack.json"),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "intensity=0.000000 degrad=1.000000 dist=0.000000" in out


def test_attack_with_overrides(tmp_path, capsys):
    main(["fixture", "--name", "canonical-butterfly", "--out", str(tmp_path)])
    doc = json.loads((tmp_path / "attack.json").read_text())
    doc["ga"]["iterations"] = 1
    doc["ga"]["population_size"] = 8
    (tmp_path / "tiny.json").write_text(json.dumps(doc))
    code = main(
        [
            "attack",
            "--config",
            str(tmp_path / "tiny.json"),
            "--seed",
            "9",
            "--out",
            str(tmp_path / "custom_out"),
            "--workers",
            "2",
        ]
    )
    assert code == 0
    run_info = json.loads((tmp_path / "custom_out" / "run.json").read_text())
    assert run_info["seed"] == 9
    assert (tmp_path / "custom_out" / "pareto.csv").exists()


def test_render_writes_images(tmp_path):
    main(["fixture", "--name", "canonical-butterfly", "--out", str(tmp_path)])
    rng = np.random.default_rng(3)
    mask = project_mask(
        make_mask(rng.integers(-90, 91, size=(128, 64, 3))), right_half_region(128, 64)
    )
    write_bfm(tmp_path / "m.bfm", mask)
    code = main(
        [
            "render",
            "--image",
            str(tmp_path / "scene.png"),
            "--mask",
            str(tmp_path / "m.bfm"),
            "--out",
            str(tmp_path / "render"),
        ]
    )
    assert code == 0
    perturbed = read_png(tmp_path / "render" / "perturbed.png")
    assert np.array_equal(perturbed[:, :32], butterfly_scene()[:, :32])
    assert (tmp_path / "render" / "comparison.png").exists()


def test_missing_config_is_reported(tmp_path, capsys):
    code = main(["attack", "--config", str(tmp_path / "nope.json")])
    assert code == 1
    assert "error" in capsys.readouterr().err
