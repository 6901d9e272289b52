import json
import subprocess

import numpy as np

import voxattn as va


def run(cli, *args, cwd=None):
    return subprocess.run([cli, *map(str, args)], capture_output=True, text=True, cwd=cwd)


def test_sparsity_on_plane(cli, tmp_path):
    plane = tmp_path / "plane.ply"
    assert run(cli, "generate", "plane", "--extent", 1, "--spacing", 0.02, "-o", plane).returncode == 0
    out = tmp_path / "nch.json"
    r = run(cli, "analyze", "sparsity", plane, "--voxel-size", 0.02, "--window", 5, "--interior", "-o", out)
    assert r.returncode == 0, r.stderr
    nch = json.loads(out.read_text())
    assert nch["format_version"] == 1
    cum = np.array(nch["cumulative"])
    jump = int(np.argmax(cum > 0))
    assert nch["bin_edges"][jump] <= 0.2 < nch["bin_edges"][jump + 1] and cum[jump] == 1.0


def test_analyze_directory_and_variance(cli, tmp_path):
    scenes = tmp_path / "scenes"
    scenes.mkdir()
    for i in range(2):
        assert run(cli, "generate", "plane", "--extent", 0.5, "-o", scenes / f"s{i}.ply").returncode == 0
    r = run(cli, "analyze", "variance", scenes, "--signal", "color")
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["cumulative"][0] == 1.0
    assert run(cli, "analyze", "variance", scenes).returncode == 64


def test_mask_and_parse_errors(cli, tmp_path):
    p_only = tmp_path / "p.ply"
    assert run(cli, "generate", "noisy", "--count", 200, "--seed", 1, "--mask", "p", "-o", p_only).returncode == 0
    assert run(cli, "analyze", "variance", p_only, "--signal", "normal").returncode == 3
    bad = tmp_path / "bad.ply"
    bad.write_text("not a ply\n")
    assert run(cli, "analyze", "sparsity", bad).returncode == 2


def test_forward_dump(cli, tmp_path):
    model = tmp_path / "m.vxck"
    cloud = tmp_path / "c.ply"
    assert run(cli, "init-model", "--seed", 5, "-o", model).returncode == 0
    assert run(cli, "generate", "noisy", "--count", 400, "--seed", 2, "-o", cloud).returncode == 0
    a, b = tmp_path / "a.vxfd", tmp_path / "b.vxfd"
    for out in (a, b):
        r = run(cli, "forward", "--checkpoint", model, "--input", cloud, "--domain", 1, "-o", out)
        assert r.returncode == 0, r.stderr
    assert a.read_bytes() == b.read_bytes()
    levels = va.read_feature_dump(a)
    hierarchy = va.voxel_hierarchy(va.load_ply(cloud), 0.02, 5)
    assert [c.shape[0] for c, _ in levels] == [h.shape[0] for h in hierarchy]
    r = run(cli, "forward", "--checkpoint", model, "--input", cloud, "--domain", 7, "-o", tmp_path / "x")
    assert r.returncode == 3 and "[0, 2)" in r.stderr


def test_gradcheck_exit_codes(cli):
    ok = run(cli, "gradcheck", "--seed", 4, "--trials", 3)
    assert ok.returncode == 0
    assert ok.stdout == run(cli, "gradcheck", "--seed", 4, "--trials", 3).stdout
    bad = run(cli, "gradcheck", "--seed", 4, "--trials", 2, "--corrupt-gradient")
    assert bad.returncode == 1 and "features[0,0]" in bad.stdout


def test_params_augment_divergence(cli, tmp_path):
    r = run(cli, "params", "--domains", 2, "--mode", "dm")
    assert r.returncode == 0
    report = json.loads(r.stdout)
    assert report["format_version"] == 1 and set(report["modulation_per_block"]) == {864}

    cloud = tmp_path / "scan.ply"
    assert run(cli, "generate", "noisy", "--count", 100, "--seed", 3, "-o", cloud).returncode == 0
    out = tmp_path / "aug"
    r = run(cli, "augment", "--input", cloud, "--subsets", "p,pc,pn,pcn", "--out-dir", out)
    assert r.returncode == 0, r.stderr
    assert sorted(f.name for f in out.iterdir()) == ["scan_p.ply", "scan_pc.ply", "scan_pcn.ply", "scan_pn.ply"]
    assert [s["domain_id"] for s in json.loads(r.stdout)["sources"]] == [0, 1, 2, 3]

    r = run(cli, "divergence", "--err-s", 0, "--err-t", 0)
    assert r.returncode == 0 and r.stdout.strip() == "2.000"
