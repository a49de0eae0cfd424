import csv
import math

import numpy as np
import pytest

from gsbudget import codec
from gsbudget.cli import main, parse_budget, UsageError
from gsbudget.model import load_model, parse_schema
from gsbudget.pipeline import prepare


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["synth", str(d / "m.ply"), "--points", "8000", "--channels", "10", "--seed", "5"]) == 0
    return d


def _compress(scene, name, budget, *extra):
    out = scene / name
    code = main(["--threads", "1", "compress", str(scene / "m.ply"), "-o", str(out), "--budget", budget,
                 "--blocks", "16", *extra])
    return code, out


def test_parse_budget():
    assert parse_budget("30MB") == 30_000_000
    assert parse_budget("500kb") == 500_000
    assert parse_budget("1.5 MB") == 1_500_000
    assert parse_budget("1234") == 1234
    for bad in ("", "MB", "-3MB", "3TB", "0"):
        with pytest.raises(UsageError):
            parse_budget(bad)


def test_compress_summary_and_determinism(scene, capsys):
    code, out = _compress(scene, "a.sgsc", "60KB")
    text = capsys.readouterr().out
    assert code == 0
    rel = float(text.split("relative error ")[1].split(")")[0])
    assert rel < 0.05
    assert "mean bits per channel" in text and "tau*" in text
    assert (scene / "a.sgsc.trace.csv").exists()
    code2, out2 = _compress(scene, "b.sgsc", "60KB")
    assert code2 == 0 and out.read_bytes() == out2.read_bytes()


def test_infeasible_writes_nothing(scene):
    code, out = _compress(scene, "tiny.sgsc", "100")
    assert code == 3 and not out.exists()


def test_best_effort_exit(scene):
    code, out = _compress(scene, "huge.sgsc", "50MB")
    assert code == 2 and out.exists()


def test_decompress_error_bound(scene):
    code, out = _compress(scene, "d.sgsc", "80KB")
    assert code == 0
    assert main(["decompress", str(out), "-o", str(scene / "d.ply")]) == 0
    schema = parse_schema((scene / "m.schema").read_text())
    rec = load_model(scene / "d.ply", schema)
    orig = load_model(scene / "m.ply", schema)
    _, bits, diag = codec.decode_container(out)
    tau = min((0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0), key=lambda t: abs(math.ceil(t * orig.n_points) - diag.header.point_count))
    ref = prepare(orig, tau, 16)
    assert ref.n_kept == rec.n_points
    part = ref.partition
    err = np.abs(rec.attributes - ref.model.attributes)
    for j in range(16):
        assert (err[:, part.block_slice(j)].max(axis=1) <= diag.scales[:, j] * (1 + 1e-12)).all()


def test_inspect(scene, capsys):
    code, out = _compress(scene, "i.sgsc", "70KB")
    assert code == 0
    summary = capsys.readouterr().out
    kept, total = (int(v) for v in summary.split("(")[2].split(" points")[0].split(" of "))
    assert main(["inspect", str(out)]) == 0
    text = capsys.readouterr().out
    assert f"points      {kept}" in text
    tau = float(summary.split("tau*")[1].split()[0])
    assert kept == math.ceil(round(tau * total, 9))
    sizes = {}
    for line in text.split("sections:")[1].split("bit-width")[0].strip().splitlines():
        name, value = line.split()
        sizes[name] = int(value)
    assert sizes.pop("total") == sum(sizes.values()) == out.stat().st_size
    _, bits, _ = codec.decode_container(out)
    assert bits.min() >= 1 and bits.max() <= 16


def test_rd_sweep(scene, capsys):
    out = scene / "rd.csv"
    code = main(["rd-sweep", str(scene / "m.ply"), "-o", str(out), "--budgets", "60KB,100KB,180KB",
                 "--blocks", "16", "--tau-grid", "1.0"])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3
    for col in ("loss_l2", "loss_l1", "loss_linf", "mse"):
        vals = [float(r[col]) for r in rows]
        assert vals[0] >= vals[1] >= vals[2]


def test_rd_sweep_single_matches_compress(scene, capsys):
    out = scene / "rd1.csv"
    assert main(["rd-sweep", str(scene / "m.ply"), "-o", str(out), "--budgets", "60KB", "--blocks", "16"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1
    _compress(scene, "same.sgsc", "60KB")
    assert int(rows[0]["achieved_size"]) == (scene / "same.sgsc").stat().st_size


def test_usage_errors(scene, capsys):
    assert main(["rd-sweep", str(scene / "m.ply"), "-o", str(scene / "x.csv"), "--budgets", ","]) == 1
    assert main(["compress", str(scene / "m.ply"), "-o", str(scene / "x"), "--budget", "1MB", "--bogus"]) == 1
    assert main(["compress", str(scene / "m.ply"), "-o", str(scene / "x")]) == 1
    assert main([]) == 1
    assert main(["--help"]) == 0
    assert main(["compress", "--help"]) == 0
    help_text = capsys.readouterr().out
    for flag in ("--budget", "--tau-grid", "--blocks", "--q-max", "--norm", "--tolerance", "--time-limit"):
        assert flag in help_text


def test_io_and_corrupt_codes(scene):
    assert main(["compress", str(scene / "nope.ply"), "-o", str(scene / "x"), "--budget", "1MB"]) == 4
    assert main(["decompress", str(scene / "nope.sgsc"), "-o", str(scene / "x.ply")]) == 4
    (scene / "bad.sgsc").write_bytes(b"SGSC" + bytes(60))
    assert main(["inspect", str(scene / "bad.sgsc")]) == 5
    (scene / "bad.ply").write_bytes(b"not a ply")
    assert main(["compress", str(scene / "bad.ply"), "-o", str(scene / "x"), "--budget", "1MB",
                 "--schema", str(scene / "m.schema")]) == 4


def test_config_file(scene, capsys):
    cfg = scene / "run.cfg"
    cfg.write_text("# defaults\nbudget = 60KB\nblocks = 16\nthreads = 1\n")
    assert main(["--config", str(cfg), "compress", str(scene / "m.ply"), "-o", str(scene / "cfg.sgsc")]) == 0
    assert (scene / "cfg.sgsc").read_bytes() == (scene / "a.sgsc").read_bytes()
    cfg.write_text("budgit = 60KB\n")
    assert main(["--config", str(cfg), "compress", str(scene / "m.ply"), "-o", str(scene / "cfg.sgsc")]) == 1


def test_threads_env(scene, monkeypatch):
    monkeypatch.setenv("SIZEGS_THREADS", "1")
    code, _ = _compress(scene, "env.sgsc", "60KB")
    assert code == 0
