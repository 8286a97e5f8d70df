import json
from pathlib import Path

import pytest

from mcmot.cli import main, read_results, sha256_file, write_results
from mcmot.fota import Assignment
from mcmot.model import Box3D, Detection, FrameBundle
from mcmot.scenario import ScenarioConfig, load_schema, read_gt, write_jsonl
from mcmot.tracker import FrameResult, TrackerConfig, TrackOutput

FIXTURES = Path(__file__).parent / "fixtures"
CLEAN = ["--noise", "0", "0", "0", "--miss-rate", "0", "--clutter-rate", "0"]


def gen(tmp_path, *extra, name="sc"):
    prefix = tmp_path / name
    assert main(["generate", "--out", str(prefix), "--num-frames", "40", *extra]) == 0
    return prefix


def test_generate_writes_files_and_manifest(tmp_path):
    prefix = gen(tmp_path)
    fp, gp = Path(f"{prefix}.frames.jsonl"), Path(f"{prefix}.gt.jsonl")
    manifest = json.loads(Path(f"{prefix}.manifest.json").read_text())
    assert manifest["outputs"] == {str(fp): sha256_file(fp), str(gp): sha256_file(gp)}
    assert manifest["config"]["num_frames"] == 40
    again = gen(tmp_path, name="again")
    assert sha256_file(f"{again}.frames.jsonl") == sha256_file(fp)


def test_generate_bad_field_exit_2(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "x"), "--miss-rate", "1.5"]) == 2
    assert "miss_rate" in capsys.readouterr().err


def test_generate_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_cameras": 3, "num_frames": 5, "seed": 1}))
    prefix = tmp_path / "o"
    assert main(["generate", "--config", str(cfg), "--seed", "9", "--out", str(prefix)]) == 0
    header = json.loads(Path(f"{prefix}.frames.jsonl").read_text().splitlines()[0])
    assert header["config"]["seed"] == 9 and header["config"]["num_cameras"] == 3
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["generate", "--config", str(cfg), "--out", str(prefix)]) == 2
    cfg.write_text("{")
    assert main(["generate", "--config", str(cfg), "--out", str(prefix)]) == 2


def test_track_is_byte_identical(tmp_path):
    prefix = gen(tmp_path)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert main(["track", f"{prefix}.frames.jsonl", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads(Path(f"{a}.manifest.json").read_text())
    assert manifest["inputs"][f"{prefix}.frames.jsonl"] == sha256_file(f"{prefix}.frames.jsonl")
    assert manifest["outputs"][str(a)] == sha256_file(a)


def test_track_clean_fixture_has_no_id_switches(tmp_path, capsys):
    prefix = gen(tmp_path, *CLEAN)
    out = tmp_path / "r.jsonl"
    assert main(["track", f"{prefix}.frames.jsonl", "--out", str(out), "--association", "fota",
                 "--metric", "mahalanobis"]) == 0
    capsys.readouterr()
    assert main(["eval", f"{prefix}.gt.jsonl", str(out), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["ids"] == 0


def test_track_km_splits_overlap_fixture(tmp_path):
    frames = [FrameBundle(t, 0.1 * t, (Detection(Box3D((10 + 0.1 * t, 0.1, 0.8), (4, 2, 1.6)), 1, 0.9, 0, t),
                                       Detection(Box3D((10.2 + 0.1 * t, -0.1, 0.8), (4, 2, 1.6)), 1, 0.9, 1, t)))
              for t in range(3)]
    path = tmp_path / "two.frames.jsonl"
    write_jsonl(path, {"schema_version": 1, "config": ScenarioConfig(num_cameras=2).to_dict()},
                [f.to_dict() for f in frames])
    ids = {}
    for assoc in ("km", "fota"):
        out = tmp_path / f"{assoc}.jsonl"
        assert main(["track", str(path), "--out", str(out), "--association", assoc]) == 0
        ids[assoc] = {o.track_id for o in read_results(out)[-1].outputs}
    assert len(ids["km"]) > 1 and len(ids["fota"]) == 1


def test_track_errors(tmp_path):
    assert main(["track", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "r")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["track", "x", "--out", "y", "--metric", "iou"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.frames.jsonl"
    bad.write_text('{"schema_version": 1, "config": {}}\n{"frame_index": 0,\n')
    assert main(["track", str(bad), "--out", str(tmp_path / "r")]) == 2


def test_eval_matches_golden_table(capsys):
    assert main(["eval", str(FIXTURES / "cli_eval.gt.jsonl"), str(FIXTURES / "cli_eval.results.jsonl")]) == 0
    assert capsys.readouterr().out == (FIXTURES / "cli_eval.table.txt").read_text()


def test_eval_perfect_and_report_schema(tmp_path, capsys):
    jsonschema = pytest.importorskip("jsonschema")
    prefix = gen(tmp_path, *CLEAN)
    _, gt = read_gt(f"{prefix}.gt.jsonl")
    perfect = [FrameResult(g.frame_index, tuple(TrackOutput(o.gt_id, o.class_id, o.box, 1.0, o.velocity)
                                                for o in g.visible()), Assignment.empty(0, 0), {}) for g in gt]
    res = tmp_path / "perfect.jsonl"
    write_results(res, TrackerConfig(), perfect)
    report = tmp_path / "report.json"
    assert main(["eval", f"{prefix}.gt.jsonl", str(res), "--report", str(report), "--label", "FOTA"]) == 0
    row = capsys.readouterr().out.splitlines()[1].split()
    assert row[0] == "FOTA" and row[4] == "1.000"
    doc = json.loads(report.read_text())
    jsonschema.validate(doc, load_schema("report.schema.json"))
    assert doc["mota"] == 1.0 and doc["ids"] == 0


@pytest.mark.parametrize("name,assignment,cost", [
    ("solve_zero_cost", [0, 0], 0.0),
    ("solve_diagonal", [0, 1], 0.0),
    ("solve_one_to_two", [0, 0], 2.0),
])
def test_solve_fixtures(tmp_path, name, assignment, cost):
    out = tmp_path / "plan.json"
    assert main(["solve", str(FIXTURES / f"{name}.json"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["assignment"] == assignment and doc["converged"]
    assert doc["transport_cost"] == pytest.approx(cost, abs=1e-9)
    if name == "solve_zero_cost":
        assert doc["plan"][0][:2] == pytest.approx([0.5, 0.5], abs=1e-9)


def test_solve_errors(tmp_path):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"cost": [[1.0, 2.0]], "s": 5}))
    assert main(["solve", str(p)]) == 2
    p.write_text(json.dumps({"nope": 1}))
    assert main(["solve", str(p)]) == 2
    p.write_text(json.dumps({"cost": [[1e300, 0.0]], "s": 1, "epsilon": 1e300, "gamma": 1e-300}))
    assert main(["solve", str(p)]) == 3
    assert main(["solve", str(tmp_path / "missing.json")]) == 1


def test_loss_fixture(capsys):
    assert main(["loss", str(FIXTURES / "loss_touching.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["matching"] == [0, None]
    assert doc["loss"] == pytest.approx(0.75, abs=1e-9)


def test_compare_on_small_scenario(tmp_path, capsys):
    prefix = tmp_path / "c"
    assert main(["generate", "--out", str(prefix), "--num-frames", "15", "--num-objects", "5"]) == 0
    capsys.readouterr()
    assert main(["compare", f"{prefix}.frames.jsonl", f"{prefix}.gt.jsonl", "--seeds", "2", "--n-points", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:3] == ["Cost", "matrix", "Association"]
    assert len(lines) == 7
    assert all("±" in line for line in lines[1:])
    assert main(["compare", f"{prefix}.frames.jsonl"]) == 2
    assert main(["compare", "--seeds", "0"]) == 2
