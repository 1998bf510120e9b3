"""Tests for the command-line interface and depth-map export formats."""

import json
import struct

import numpy as np
import pytest

from langdepth import cli
from langdepth.dataset import read_dataset
from langdepth.errors import ConfigError, ContractError, FormatError
from langdepth.gradcheck import GradReport


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared directory with generated datasets and one trained checkpoint."""
    root = tmp_path_factory.mktemp("cliwork")
    assert cli.main(["gen", "--seed", "0", "--count", "24",
                     "--out", str(root / "train.wdph")]) == 0
    assert cli.main(["gen", "--seed", "1", "--count", "8",
                     "--out", str(root / "val.wdph")]) == 0
    assert cli.main(["train", "--data", str(root / "train.wdph"),
                     "--val", str(root / "val.wdph"),
                     "--out-ckpt", str(root / "model.wdck"),
                     "--epochs", "2", "--batch", "8", "--p", "0.25",
                     "--latent-dim", "8"]) == 0
    return root


def _lines(capsys):
    return [json.loads(line) for line in
            capsys.readouterr().out.strip().splitlines()]


def test_gen_echoes_resolved_config_first(workdir, capsys, tmp_path):
    out = tmp_path / "d.wdph"
    assert cli.main(["gen", "--seed", "3", "--count", "5",
                     "--out", str(out)]) == 0
    lines = _lines(capsys)
    echo = lines[0]
    assert echo["subcommand"] == "gen"
    assert echo["seed"] == 3 and echo["count"] == 5
    # defaults fill in everything the flags left unsaid
    assert echo["height"] == 32 and echo["width"] == 32
    assert echo["focal"] == 64.0 and echo["max_objects"] == 3
    samples, _, header = read_dataset(out)
    assert header.count == 5 and len(samples) == 5


def test_echo_lines_are_canonical_json(workdir, capsys, tmp_path):
    assert cli.main(["gen", "--seed", "2", "--count", "3",
                     "--out", str(tmp_path / "x.wdph")]) == 0
    raw = capsys.readouterr().out.strip().splitlines()
    for line in raw:
        assert line == json.dumps(json.loads(line), sort_keys=True)


def test_echo_as_config_reproduces_run_bit_exactly(workdir, capsys, tmp_path):
    args = ["train", "--data", str(workdir / "train.wdph"),
            "--val", str(workdir / "val.wdph"),
            "--epochs", "2", "--batch", "8", "--p", "0.25",
            "--latent-dim", "8"]
    assert cli.main(args + ["--out-ckpt", str(tmp_path / "a.wdck")]) == 0
    first = capsys.readouterr().out.strip().splitlines()
    cfg_path = tmp_path / "echo.json"
    cfg_path.write_text(first[0])

    assert cli.main(["train", "--config", str(cfg_path),
                     "--out-ckpt", str(tmp_path / "b.wdck")]) == 0
    second = capsys.readouterr().out.strip().splitlines()

    a = (tmp_path / "a.wdck").read_bytes()
    b = (tmp_path / "b.wdck").read_bytes()
    assert a == b
    # every epoch log line matches; only the out_ckpt value may differ
    assert first[1:-1] == second[1:-1]


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9, "count": 4,
                               "out": str(tmp_path / "from_cfg.wdph")}))
    out = tmp_path / "from_flag.wdph"
    assert cli.main(["gen", "--config", str(cfg), "--count", "6",
                     "--out", str(out)]) == 0
    echo = _lines(capsys)[0]
    assert echo["count"] == 6        # flag wins
    assert echo["seed"] == 9         # config fills the rest
    assert out.exists()


def test_unknown_flag_exits_one_with_structured_error(capsys):
    code = cli.main(["gen", "--count", "3", "--out", "x", "--frobnicate"])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"
    assert "--frobnicate" in err["message"]


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count": 3, "out": "x", "speling": 1}))
    assert cli.main(["gen", "--config", str(cfg)]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError" and "speling" in err["message"]


def test_config_for_wrong_subcommand_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subcommand": "train"}))
    assert cli.main(["gen", "--config", str(cfg), "--count", "3",
                     "--out", "x"]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"


def test_missing_required_values_exit_one(capsys):
    assert cli.main(["train", "--data", "only_this.wdph"]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"
    assert "val" in err["message"] and "out_ckpt" in err["message"]


def test_missing_file_exits_one(capsys, tmp_path):
    assert cli.main(["eval", "--ckpt", str(tmp_path / "nope.wdck"),
                     "--data", str(tmp_path / "nope.wdph"),
                     "--report", str(tmp_path / "r.json")]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] in ("FileNotFoundError", "OSError")


def test_corrupt_checkpoint_exits_one(workdir, capsys, tmp_path):
    bad = tmp_path / "bad.wdck"
    bad.write_bytes(b"NOPE" + bytes(32))
    assert cli.main(["eval", "--ckpt", str(bad),
                     "--data", str(workdir / "val.wdph"),
                     "--report", str(tmp_path / "r.json")]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "HeaderFormatError"


def test_eval_writes_report_and_error_maps(workdir, capsys, tmp_path):
    report = tmp_path / "report.json"
    maps = tmp_path / "maps"
    assert cli.main(["eval", "--ckpt", str(workdir / "model.wdck"),
                     "--data", str(workdir / "val.wdph"),
                     "--report", str(report),
                     "--error-maps", str(maps)]) == 0
    payload = json.loads(report.read_text())
    for key in ("abs_rel", "rmse", "log10", "rmse_log",
                "delta1", "delta2", "delta3"):
        assert key in payload
    pgms = sorted(maps.glob("error_*.pgm"))
    assert len(pgms) == 8
    units, mpu = cli.read_pgm16(pgms[0])
    assert units.shape == (32, 32) and mpu == cli.EXPORT_METERS_PER_UNIT


def test_sample_writes_maps_and_latent(workdir, capsys, tmp_path):
    out_dir = tmp_path / "draws"
    assert cli.main(["sample", "--ckpt", str(workdir / "model.wdck"),
                     "--caption", "a large room with a chair",
                     "--n", "4", "--seed", "7",
                     "--out-dir", str(out_dir)]) == 0
    assert len(sorted(out_dir.glob("sample_*.pgm"))) == 4
    latent = json.loads((out_dir / "latent.json").read_text())
    assert latent["caption"] == "a large room with a chair"
    assert len(latent["mu"]) == 8 and len(latent["sigma"]) == 8
    assert all(s > 0 for s in latent["sigma"])


def test_sample_is_deterministic_per_seed(workdir, capsys, tmp_path):
    base = ["sample", "--ckpt", str(workdir / "model.wdck"),
            "--caption", "a small room", "--n", "2"]
    assert cli.main(base + ["--seed", "5",
                            "--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--seed", "5",
                            "--out-dir", str(tmp_path / "b")]) == 0
    assert cli.main(base + ["--seed", "6",
                            "--out-dir", str(tmp_path / "c")]) == 0
    a = (tmp_path / "a" / "sample_000.pgm").read_bytes()
    b = (tmp_path / "b" / "sample_000.pgm").read_bytes()
    c = (tmp_path / "c" / "sample_000.pgm").read_bytes()
    assert a == b and a != c


def test_gradcheck_single_trial_passes(capsys):
    assert cli.main(["gradcheck", "--trials", "1"]) == 0
    lines = _lines(capsys)
    checks = [rec for rec in lines if "check" in rec]
    assert all(rec["passed"] for rec in checks)
    names = {rec["check"] for rec in checks}
    assert "caption_loss_seed5" in names and "image_loss_seed5" in names


def test_gradcheck_failure_exits_two(capsys, monkeypatch):
    def fake_battery(seeds):
        return {"broken": GradReport(step_size=1e-6, tolerance=1e-5,
                                     errors={"x": 1.0}, passed=False)}
    monkeypatch.setattr(cli, "run_full_battery", fake_battery)
    assert cli.main(["gradcheck", "--trials", "1"]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "NumericError" and "broken" in err["message"]


def test_sweep_and_ablate_write_reports(workdir, capsys, tmp_path):
    sw = tmp_path / "sweep.json"
    assert cli.main(["sweep", "--data", str(workdir / "train.wdph"),
                     "--val", str(workdir / "val.wdph"),
                     "--p-list", "0.0,0.5", "--report", str(sw),
                     "--epochs", "1", "--batch", "8",
                     "--latent-dim", "8"]) == 0
    payload = json.loads(sw.read_text())
    assert set(payload) == {"0.0", "0.5"}
    assert all("abs_rel" in v for v in payload.values())

    ab = tmp_path / "ablate.json"
    assert cli.main(["ablate", "--data", str(workdir / "train.wdph"),
                     "--val", str(workdir / "val.wdph"),
                     "--report", str(ab),
                     "--epochs", "1", "--batch", "8",
                     "--latent-dim", "8"]) == 0
    payload = json.loads(ab.read_text())
    assert payload["nonzero_caption_rows"] == 0
    assert "abs_rel" in payload["metrics"]


def test_bad_p_list_rejected(capsys):
    assert cli.main(["sweep", "--data", "d", "--val", "v", "--report", "r",
                     "--p-list", "0.1,zebra"]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"


# ---------------------------------------------------------------- exports


def test_pgm16_uniform_one_metre_at_millimetre_scale(tmp_path):
    ones = np.full((4, 6), 1.0, dtype=np.float32)
    path = tmp_path / "one.pgm"
    cli.export_depth(ones, path, "pgm16", meters_per_unit=1e-3)
    units, mpu = cli.read_pgm16(path)
    assert mpu == 1e-3
    np.testing.assert_array_equal(units, np.full((4, 6), 1000, dtype=np.uint16))


def test_pgm16_header_layout(tmp_path):
    path = tmp_path / "h.pgm"
    cli.export_depth(np.full((3, 5), 2.0), path, "pgm16")
    raw = path.read_bytes()
    head = f"P5\n# meters_per_unit 0.001\n5 3\n65535\n".encode("ascii")
    assert raw.startswith(head)
    assert len(raw) == len(head) + 2 * 3 * 5
    sample = struct.unpack(">H", raw[len(head):len(head) + 2])[0]
    assert sample == 2000


def test_raw32_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    arr = rng.uniform(0.5, 9.0, (5, 7)).astype(np.float32)
    path = tmp_path / "m.raw"
    cli.export_depth(arr, path, "raw32")
    back = cli.read_raw32(path)
    assert back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()
    assert path.read_bytes()[:8] == struct.pack("<II", 5, 7)


def test_negative_meters_per_unit_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        cli.export_depth(np.ones((2, 2)), tmp_path / "x.pgm", "pgm16",
                         meters_per_unit=-0.5)


def test_pgm16_range_overflow_is_contract_error(tmp_path):
    with pytest.raises(ContractError):
        cli.export_depth(np.full((2, 2), 70.0), tmp_path / "x.pgm", "pgm16")


def test_export_rejects_bad_inputs(tmp_path):
    with pytest.raises(ContractError):
        cli.export_depth(np.ones((2, 2, 2)), tmp_path / "x.pgm", "pgm16")
    with pytest.raises(ContractError):
        cli.export_depth(np.array([[1.0, -0.5]]), tmp_path / "x.pgm", "raw32")
    with pytest.raises(ConfigError):
        cli.export_depth(np.ones((2, 2)), tmp_path / "x.bin", "tiff")


def test_raw32_reader_rejects_truncation(tmp_path):
    path = tmp_path / "t.raw"
    cli.export_depth(np.ones((3, 3), dtype=np.float32), path, "raw32")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        cli.read_raw32(path)
