import json
import os
import subprocess
import sys

import numpy as np
import pytest

from lorank import genzoo, pgm
from lorank.cli import main, read_config, UsageError


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.delenv("LORANK_OUT", raising=False)
    return tmp_path / "out"


def gen_blocky(out, capsys, coupling="0", name="blocky.gen"):
    code, text, _ = run(["gen", "--kind", "blocky", "--dz", "32", "--grid", "16", "--split", "16", "--coupling", coupling, "--seed", "7", "--out", str(out), "--name", name], capsys)
    assert code == 0
    return out / name, text


def test_gen_is_deterministic_and_prints_shapes(out, capsys):
    path, text = gen_blocky(out, capsys)
    first = path.read_bytes()
    assert "intrinsic_dim 32" in text and "layer 1: 256 x 32 identity" in text
    gen_blocky(out, capsys)
    assert path.read_bytes() == first
    assert genzoo.load(path).d_x == 256


def test_gen_linear_identity(out, capsys):
    code, _, _ = run(["gen", "--kind", "linear", "--dz", "8", "--dx", "8", "--identity", "--out", str(out)], capsys)
    assert code == 0
    assert np.array_equal(genzoo.load(out / "linear.gen").layers[0].weight, np.eye(8))


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "--kind", "linear", "--dx", "8"],
        ["gen", "--dz", "8"],
        ["gen", "--kind", "linear", "--dz", "8"],
        ["gen", "--kind", "blocky", "--dz", "32", "--split", "40"],
        ["gen", "--kind", "linear", "--dz", "3", "--dx", "4", "--identity"],
        ["gen", "--kind", "mlp", "--dz", "4"],
        ["gen", "--kind", "linear", "--dz", "2", "--dx", "2", "--name", "../escape.gen"],
        ["bogus"],
    ],
)
def test_gen_usage_errors_exit_2(argv, out, capsys):
    code, _, err = run(argv + ["--out", str(out)] if argv != ["bogus"] else argv, capsys)
    assert code == 2
    assert err


def test_lorank_out_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LORANK_OUT", str(tmp_path / "env"))
    code, _, _ = run(["gen", "--kind", "linear", "--dz", "2", "--dx", "3"], capsys)
    assert code == 0 and (tmp_path / "env" / "linear.gen").exists()


def test_config_file_and_flag_precedence(tmp_path, out, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# comment\nkind = linear\ndz = 3\ndx = 5\nseed = 4\n")
    code, _, _ = run(["gen", "--config", str(cfg), "--dx", "6", "--out", str(out)], capsys)
    assert code == 0
    g = genzoo.load(out / "linear.gen")
    assert (g.d_z, g.d_x) == (3, 6)
    assert genzoo.dumps(g) == genzoo.dumps(genzoo.make_linear(3, 6, seed=4))


def test_unknown_config_key_exits_2(tmp_path, out, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("kind = linear\ncolour = blue\n")
    code, _, err = run(["gen", "--config", str(cfg), "--dz", "2", "--out", str(out)], capsys)
    assert code == 2 and "colour" in err


def test_read_config_rejects_garbage(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("just words\n")
    with pytest.raises(UsageError):
        read_config(str(cfg))


def test_discover_edit_pipeline(out, capsys):
    path, _ = gen_blocky(out, capsys)
    code, text, _ = run(["discover", "--generator", str(path), "--rect", "0,0,8,16", "--name", "a.txt", "--out", str(out)], capsys)
    assert code == 0
    rank = int(text.split("rank ")[1].split()[0])
    assert 1 <= rank <= 16
    assert "top singular values" in text and "pcp iterations" in text
    code, _, _ = run(["discover", "--generator", str(path), "--rect", "8,0,16,16", "--name", "b.txt", "--out", str(out)], capsys)
    assert code == 0

    code, text, _ = run(["edit", "--generator", str(path), "--basis-a", str(out / "a.txt"), "--basis-b", str(out / "b.txt"), "--out", str(out)], capsys)
    assert code == 0
    outside = float(text.split("outside_a ")[1].split()[0])
    inside = float(text.split("inside_a ")[1].split()[0])
    assert outside <= 1e-8 and inside > 0
    for stem in ("before", "after", "heatmap"):
        px, rng = pgm.read(out / (stem + ".pgm"))
        assert px.shape == (16, 16) and rng is not None

    code, _, _ = run(["edit", "--generator", str(path), "--basis-a", str(out / "a.txt"), "--alpha", "0", "--prefix", "zero-", "--out", str(out)], capsys)
    assert code == 0
    assert (out / "zero-before.pgm").read_bytes() == (out / "zero-after.pgm").read_bytes()

    code, _, err = run(["edit", "--generator", str(path), "--basis-a", str(out / "a.txt"), "--index", str(rank), "--out", str(out)], capsys)
    assert code == 2 and "0..%d" % (rank - 1) in err


def test_discover_lambda_n_and_errors(out, capsys):
    path, _ = gen_blocky(out, capsys)
    code, text, _ = run(["discover", "--generator", str(path), "--rect", "0,0,8,16", "--lambda-n", "60", "--out", str(out)], capsys)
    assert code == 0 and "lambda 0.016666666666666666" in text
    for extra in (["--rect", "3,3,3,8"], ["--rect", "1,2,3"], [], ["--indices", "5,2"], ["--rect", "0,0,2,2", "--indices", "1"]):
        code, _, _ = run(["discover", "--generator", str(path), "--out", str(out)] + extra, capsys)
        assert code == 2, extra
    code, _, _ = run(["discover", "--generator", str(out / "missing.gen"), "--rect", "0,0,2,2", "--out", str(out)], capsys)
    assert code == 2


def test_discover_reports_corrupt_generator(out, capsys):
    bad = out.parent / "bad.gen"
    bad.write_text("linear 2 2 2 1\n2 2 identity\n1 x\n")
    code, _, err = run(["discover", "--generator", str(bad), "--indices", "0", "--out", str(out)], capsys)
    assert code == 1 and "line 3" in err


def test_edit_vanishing_direction_exits_1(out, capsys):
    # Region B = everything: its attribute span is the whole latent space.
    run(["gen", "--kind", "linear", "--dz", "3", "--dx", "6", "--out", str(out)], capsys)
    g = str(out / "linear.gen")
    assert run(["discover", "--generator", g, "--indices", "0,1,2", "--name", "a.txt", "--lambda", "10", "--out", str(out)], capsys)[0] == 0
    assert run(["discover", "--generator", g, "--indices", "0,1,2,3,4,5", "--name", "b.txt", "--lambda", "10", "--out", str(out)], capsys)[0] == 0
    code, _, err = run(["edit", "--generator", g, "--basis-a", str(out / "a.txt"), "--basis-b", str(out / "b.txt"), "--out", str(out)], capsys)
    assert code == 1 and "no local direction exists" in err


def small_verify_config(tmp_path):
    cfg = tmp_path / "verify.cfg"
    cfg.write_text("rpca_instances = 2\nrpca_size = 60\nrpca_rank = 3\nfd_latents = 2\n")
    return str(cfg)


def test_verify_subset_writes_reports(tmp_path, out, capsys):
    code, text, _ = run(["verify", "--only", "rpca,jacobian", "--config", small_verify_config(tmp_path), "--out", str(out)], capsys)
    assert code == 0, text
    index = json.loads((out / "index.json").read_text())
    assert sorted(index["experiments"]) == ["jacobian", "rpca"]
    report = json.loads((out / "reports" / "rpca.json").read_text())
    assert report["pass"] is True and report["parameters"]["instances"] == 2
    assert sorted(os.listdir(out / "fixtures")) == sorted(n + ".gen" for n in genzoo.default_zoo(0))


def test_verify_failure_names_metric(tmp_path, out, capsys):
    cfg = tmp_path / "strict.cfg"
    cfg.write_text("fd_tol = 1e-30\nfd_latents = 1\n")
    code, text, _ = run(["verify", "--only", "jacobian", "--config", str(cfg), "--out", str(out)], capsys)
    assert code == 1 and "max_abs_deviation" in text


def test_verify_rejects_corrupt_fixture(tmp_path, out, capsys):
    cfg = small_verify_config(tmp_path)
    assert run(["verify", "--only", "jacobian", "--config", cfg, "--out", str(out)], capsys)[0] == 0
    fixture = out / "fixtures" / "mlp-tanh.gen"
    fixture.write_text(fixture.read_text().replace("tanh", "tahn", 1))
    code, _, err = run(["verify", "--only", "jacobian", "--config", cfg, "--out", str(out)], capsys)
    assert code == 1 and "mlp-tanh.gen" in err
    fixture.write_text(genzoo.dumps(genzoo.default_zoo(0)["mlp-tanh"]).replace("1", "2", 1))
    code, _, err = run(["verify", "--only", "jacobian", "--config", cfg, "--out", str(out)], capsys)
    assert code == 1 and "mlp-tanh.gen" in err


def test_verify_unknown_experiment_is_usage_error(out, capsys):
    assert run(["verify", "--only", "nope", "--out", str(out)], capsys)[0] == 2


def test_module_entry_point(out):
    proc = subprocess.run([sys.executable, "-m", "lorank", "gen", "--kind", "linear", "--dz", "2", "--dx", "2", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0 and "intrinsic_dim 2" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "lorank", "gen"], capture_output=True, text=True)
    assert proc.returncode == 2
