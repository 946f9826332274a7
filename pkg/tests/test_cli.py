import json
import subprocess
import sys

import pytest

from damage25d import cli
from damage25d.errors import ProcessingError
from damage25d.synth import CameraRing, default_scene_layout, layout_to_dict

ALPHA = ["--alpha", "30"]  # 4 mm spacing is too sparse for the default alpha


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    layout = default_scene_layout(spacing=0.004, ring=CameraRing(n_cameras=6, fx=500.0, width=700, height=400))
    (root / "layout.json").write_text(json.dumps(layout_to_dict(layout)))
    assert cli.main(["synth", "--layout", str(root / "layout.json"), "--out", str(root / "scene")]) == 0
    return root


@pytest.fixture(scope="module")
def run1(scene):
    assert cli.main(["pipeline", "--scene", str(scene / "scene"), "--out", str(scene / "run1"), *ALPHA]) == 0
    return scene / "run1"


def test_pipeline_outputs(run1):
    for name in ("segmented.ply", "index.json", "instances.json", "instances.obj", "report.json", "report.txt"):
        assert (run1 / name).is_file()
    inst = json.loads((run1 / "instances.json").read_text())["instances"]
    assert sorted({i["class"] for i in inst}) == ["corrosion", "crack", "spalling"]


def test_pipeline_is_byte_deterministic(scene, run1):
    assert cli.main(["pipeline", "--scene", str(scene / "scene"), "--out", str(scene / "run2"), *ALPHA]) == 0
    for name in ("instances.json", "index.json", "report.json", "segmented.ply"):
        assert (run1 / name).read_bytes() == (scene / "run2" / name).read_bytes()


def test_staged_commands_match_pipeline(scene, run1):
    s, o = scene / "scene", scene / "staged"
    o.mkdir()
    assert cli.main(["map", "--cloud", str(s / "cloud.ply"), "--cameras", str(s / "cameras.json"),
                     "--heatmaps", str(s / "heatmaps"), "--out", str(o / "seg.ply")]) == 0
    assert cli.main(["cluster", "--segmented", str(o / "seg.ply"), "--out", str(o / "index.json")]) == 0
    assert cli.main(["extract", "--segmented", str(o / "seg.ply"), "--index", str(o / "index.json"),
                     "--out", str(o / "instances.json"), "--obj", str(o / "i.obj"), *ALPHA]) == 0
    assert (o / "instances.json").read_bytes() == (run1 / "instances.json").read_bytes()
    assert (o / "index.json").read_bytes() == (run1 / "index.json").read_bytes()


def test_evaluate_tolerance_label(scene, run1, capsys):
    out = scene / "eval.json"
    code = cli.main(["evaluate", "--pred", str(run1 / "instances.json"), "--truth",
                     str(scene / "scene" / "annotations.json"), "--tol", "0.04", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split()[0] == "Tol."
    assert text.splitlines()[1].startswith("4.0 cm")
    assert [r["label"] for r in json.loads(out.read_text())["rows"]] == ["4.0 cm"]


def test_self_evaluation_is_perfect(scene, capsys):
    ann = str(scene / "scene" / "annotations.json")
    assert cli.main(["evaluate", "--pred", ann, "--truth", ann]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert len(rows) == 5
    for row in rows:
        assert set(row.split()[2:]) == {"100.0"}


def test_missing_cameras_file(tmp_path, capsys):
    missing = tmp_path / "cameras.json"
    (tmp_path / "cloud.ply").write_text("ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\n"
                                        "property float y\nproperty float z\nend_header\n")
    code = cli.main(["map", "--cloud", str(tmp_path / "cloud.ply"), "--cameras", str(missing),
                     "--heatmaps", str(tmp_path), "--out", str(tmp_path / "o.ply")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_missing_scene_directory(tmp_path, capsys):
    assert cli.main(["pipeline", "--scene", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    assert "none" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["pipeline", "--scene", "x"],
    ["pipeline", "--scene", "x", "--out", "y", "--bogus"],
    ["frobnicate"],
    ["evaluate", "--pred", "a", "--truth", "b", "--set", "polygon.alfa=3"],
    ["evaluate", "--pred", "a", "--truth", "b", "--threads", "0"],
])
def test_validation_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_processing_error_exit_2(monkeypatch, tmp_path):
    import damage25d.pipeline

    def boom(*a, **k):
        raise ProcessingError("solver failed")

    monkeypatch.setattr(damage25d.pipeline, "run_pipeline", boom)
    assert cli.main(["pipeline", "--scene", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("DAMAGE25D_THREADS", "nope")
    assert cli.main(["pipeline", "--scene", str(tmp_path / "x"), "--out", str(tmp_path / "o")]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "damage25d", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("map", "cluster", "extract", "evaluate", "pipeline", "synth"):
        assert cmd in res.stdout
