import json

import numpy as np
import pytest

from roomscene import catalog
from roomscene.cli import main
from roomscene.errors import InvariantViolation, MissingFile, SchemaViolation
from roomscene.geom import box_mesh
from roomscene.layout import room_from_hypothesis
from roomscene.placement import PlacedObject
from roomscene.scene_io import (Instance, SceneResult, bundle_files, export_obj, load_bundle, load_result,
                                save_bundle, save_result)
from roomscene.support import SupportGraph

from .conftest import harness_scene


def read_obj_groups(path):
    """Minimal OBJ reader: vertex and face counts per group."""
    groups, cur = {}, None
    for line in open(path):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "g":
            cur = tok[1]
            groups[cur] = [0, 0]
        elif tok[0] == "v":
            groups[cur][0] += 1
        elif tok[0] == "f":
            groups[cur][1] += 1
    return groups


def test_round_trip_byte_identical(tmp_path):
    _, bundle = harness_scene(3, 8)
    save_bundle(bundle, tmp_path / "a")
    loaded = load_bundle(tmp_path / "a")
    save_bundle(loaded, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert bundle_files(loaded) == bundle_files(bundle)
    for a, b in zip(bundle.instances, loaded.instances):
        assert np.array_equal(a.mask, b.mask) and a.answers == b.answers


def test_mask_size_mismatch_names_instance():
    _, bundle = harness_scene(3, 8)
    bad = Instance(7, 3, np.ones((10, 10), bool))
    b = type(bundle)(**{**bundle.__dict__, "instances": bundle.instances[:1] + [bad]})
    with pytest.raises(InvariantViolation, match="instance 7"):
        b.validate()


def test_more_than_sixty_instances_rejected(tmp_path):
    _, bundle = harness_scene(3, 8)
    save_bundle(bundle, tmp_path)
    man = json.loads((tmp_path / "scene.json").read_text())
    man["instances"] = [dict(man["instances"][0], id=k, mask_value=k + 1) for k in range(61)]
    (tmp_path / "scene.json").write_text(json.dumps(man))
    with pytest.raises(InvariantViolation, match="61 instances"):
        load_bundle(tmp_path)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(MissingFile):
        load_bundle(tmp_path / "nope")
    _, bundle = harness_scene(3, 8)
    save_bundle(bundle, tmp_path)
    (tmp_path / "lines.json").write_text("[[1, 2")
    with pytest.raises(SchemaViolation, match="lines.json"):
        load_bundle(tmp_path)
    (tmp_path / "lines.json").unlink()
    with pytest.raises(MissingFile, match="lines.json"):
        load_bundle(tmp_path)


def _result(objects):
    room = room_from_hypothesis(4.0, 5.0)
    return SceneResult(None, room, SupportGraph(), None, objects)


def test_export_empty_scene(tmp_path):
    export_obj(_result({}), tmp_path / "s.obj")
    assert read_obj_groups(tmp_path / "s.obj") == {"room": [8, 5]}


def test_export_single_cube(tmp_path):
    cube = PlacedObject(0, "cube", 0.0, np.ones(3), np.array([1.0, 1.0, 0.0]), box_mesh(), 0.5)
    export_obj(_result({0: cube}), tmp_path / "s.obj")
    g = read_obj_groups(tmp_path / "s.obj")
    assert list(g) == ["room", "obj_0"] and g["obj_0"] == [8, 12]


def test_export_harness_scene_matches_reader(tmp_path):
    truth, _ = harness_scene(4, 12)
    res = truth.as_result()
    export_obj(res, tmp_path / "s.obj")
    g = read_obj_groups(tmp_path / "s.obj")
    assert list(g) == ["room"] + [f"obj_{i}" for i in sorted(res.objects)]
    for i, o in res.objects.items():
        assert g[f"obj_{i}"] == [len(o.mesh.vertices), len(o.mesh.triangles)]


def test_result_round_trip(tmp_path):
    truth, bundle = harness_scene(4, 8)
    res = truth.as_result()
    save_result(res, tmp_path)
    back = load_result(tmp_path / "result.json", bundle)
    for i, o in res.objects.items():
        assert np.allclose(back.objects[i].world_vertices(), o.world_vertices())
    assert back.graph.edges == res.graph.edges


def test_cli_exit_codes(tmp_path, capsys):
    b = tmp_path / "bundle"
    assert main(["synth", "--out", str(b), "--seed", "5", "--n-objects", "4"]) == 0
    assert main(["pipeline", "--bundle", str(b), "--out", str(tmp_path / "out"), "--iters", "3"]) == 0
    assert (tmp_path / "out" / "scene.obj").is_file()
    assert main(["eval", "--bundle", str(b), "--out", str(tmp_path / "out")]) == 0
    m = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert m["support_accuracy"] == 1.0
    assert main(["layout", "--bundle", str(tmp_path / "missing"), "--out", str(tmp_path / "o2")]) == 2
    (b / "lines.json").write_text("[]")
    assert main(["calibrate", "--bundle", str(b), "--out", str(tmp_path / "o3")]) == 3
    assert "calibrate" in capsys.readouterr().err
