import csv
import json

import pytest

from casimir_graphene import calibration, cli, engine

SMALL = ["--a-start-nm", "250", "--a-stop-nm", "290", "--a-step-nm", "20"]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema_version=1 ")
    rows = list(csv.reader(lines[1:]))
    return rows[0], [[float(x) for x in r] for r in rows[1:]]


def run(tmp_path, name, *args):
    out = tmp_path / f"{name}.csv"
    code = cli.main([*args, "--out", str(out)])
    return code, out


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

def test_defaults_grid():
    cfg = cli.RunConfig()
    g = cfg.grid()
    assert len(g) == 35 and g[0] == 250e-9 and g[-1] == 590e-9


def test_precedence_cli_over_file_over_defaults(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment\ntemperature = 300\nmu-ev = 0.2  # inline\nband = yes\n")
    args = vars(cli.build_parser().parse_args(["gradient", "--config", str(conf), "--mu-ev", "0.25"]))
    args.pop("command")
    cfg = cli.merge_config(cli.read_config_file(args.pop("config")), args)
    assert cfg.temperature == 300.0
    assert cfg.mu_ev == 0.25
    assert cfg.band is True
    assert cfg.delta_ev == engine.CENTRAL_DELTA


@pytest.mark.parametrize("text", ["temperature 300\n", "colour = red\n", "temperature = hot\n", "threads = 2\n"])
def test_bad_config_file_exits_2(tmp_path, text, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text(text)
    assert cli.main(["gradient", "--config", str(conf)]) == 2
    assert "error [config]" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["gradient", "--a-step-nm", "-1"],
    ["gradient", "--a-start-nm", "300", "--a-stop-nm", "200"],
    ["gradient", "--temperature", "-3"],
    ["gradient", "--metal-table", "/nonexistent/gold.csv"],
    ["calibrate", "--dataset", "/nonexistent/data.json"],
    ["gradient", "--config", "/nonexistent/run.conf"],
])
def test_config_errors_exit_2(args):
    assert cli.main(args) == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["gradient", "--colour", "red"])
    assert exc.value.code == 2


def test_malformed_material_exits_3(tmp_path, capsys):
    bad = tmp_path / "gold.csv"
    bad.write_text("energy_ev,im_eps\n1.0,abc\n")
    code, out = run(tmp_path, "g", "gradient", *SMALL, "--metal-table", str(bad))
    assert code == 3
    assert "material load" in capsys.readouterr().err
    assert not out.exists()


def test_convergence_failure_exits_4(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise engine.ConvergenceError("Matsubara sum did not settle")
    monkeypatch.setattr(engine, "sweep", boom)
    assert run(tmp_path, "g", "gradient", *SMALL)[0] == 4


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def test_gradient_with_band(tmp_path):
    code, out = run(tmp_path, "g", "gradient", *SMALL, "--band", "--threads", "1")
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["a_nm", "fprime_uN_per_m", "err_uN_per_m", "band_lower_uN_per_m", "band_upper_uN_per_m"]
    assert [r[0] for r in rows] == [250.0, 270.0, 290.0]
    for _, f, err, lo, hi in rows:
        assert hi > lo > 0 and f > 0 and 0 <= err < 1e-6 * f
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["parameters"]["a_step_nm"] == 20.0
    assert side["quadrature"]["matsubara_rtol"] == 1e-9
    assert "threads" not in side["parameters"]


def test_thermal_gradient_exceeds_zero_temperature(tmp_path):
    _, warm = run(tmp_path, "warm", "gradient", *SMALL, "--threads", "1")
    _, cold = run(tmp_path, "cold", "gradient", *SMALL, "--threads", "1", "--zero-t")
    for w, c in zip(read_csv(warm)[1], read_csv(cold)[1]):
        assert w[1] >= c[1]


def test_band_command(tmp_path):
    code, out = run(tmp_path, "b", "band", *SMALL, "--threads", "1", "--padding", "0.01")
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["a_nm", "band_lower_uN_per_m", "band_upper_uN_per_m"]
    assert all(r[2] > r[1] for r in rows)


def test_decompose_rows_sum_to_one(tmp_path):
    code, out = run(tmp_path, "d", "decompose", "--a-start-nm", "300", "--a-stop-nm", "300", "--threads", "1")
    assert code == 0
    _, rows = read_csv(out)
    (_, thermal, imp, exp), = rows
    assert imp + exp == pytest.approx(1.0, abs=1e-15)
    assert 0.03 < thermal < 0.08


def test_decompose_needs_temperature(tmp_path):
    assert run(tmp_path, "d", "decompose", "--zero-t")[0] == 2


def test_epsilon_and_pi_dumps(tmp_path):
    code, out = run(tmp_path, "e", "epsilon", "--l-max", "5")
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["l", "xi_rad_per_s", "eps_metal", "eps_substrate"]
    assert len(rows) == 6 and rows[0][2] == float("inf")
    code, out = run(tmp_path, "p", "pi", "--l-max", "2", "--k-count", "3")
    assert code == 0
    header, rows = read_csv(out)
    assert len(rows) == 9 and header[-1] == "pi_J_s_per_m3"
    assert all(r[3] >= 0 for r in rows)


def test_bundled_calibration_recovers_truth(tmp_path, capsys):
    code, out = run(tmp_path, "c", "calibrate")
    assert code == 0
    side = json.loads(out.with_suffix(".json").read_text())
    res, truth = side["result"], side["truth"]
    assert res["z0"] == pytest.approx(truth["z0"], abs=0.6e-9)
    assert res["c_factor"] == pytest.approx(truth["c_factor"], abs=0.003e5)
    assert res["v0"] == pytest.approx(truth["v0"], abs=1e-4)
    assert abs(side["drift_line"]["theta"]) * 340e-9 < 1e-3
    assert "z0 = 236." in capsys.readouterr().out


def test_corrupt_curve_gives_partial_results(tmp_path, capsys):
    ds = cli.synthetic_dataset(seed=1, step=5e-9)
    doc = json.loads(calibration.dataset_to_json(ds.curves, ds.sphere_radius, ds.noise, ds.truth))
    doc["curves"][2]["delta_omega"] = doc["curves"][2]["delta_omega"][:-1]
    path = tmp_path / "data.json"
    path.write_text(json.dumps(doc))
    code, out = run(tmp_path, "c", "calibrate", "--dataset", str(path))
    assert code == 3
    assert "curve 2" in capsys.readouterr().err
    side = json.loads(out.with_suffix(".json").read_text())
    assert [e["index"] for e in side["curve_errors"]] == [2]
    assert side["result"]["z0"] == pytest.approx(236.9e-9, abs=2e-9)


def test_unusable_dataset_exits_3(tmp_path):
    path = tmp_path / "data.json"
    path.write_text('{"sphere_radius": 6e-05, "curves": []}')
    assert run(tmp_path, "c", "calibrate", "--dataset", str(path))[0] == 3


@pytest.mark.parametrize("args", [["calibrate", "--dataset", "synthetic", "--seed", "9"],
                                  ["gradient", *SMALL, "--band"]])
def test_reruns_are_byte_identical_across_thread_counts(tmp_path, args):
    outputs = []
    for threads in ("1", "2"):
        code, out = run(tmp_path, f"r{threads}", *args, "--threads", threads)
        assert code == 0
        outputs.append((out.read_bytes(), out.with_suffix(".json").read_bytes()))
    assert outputs[0] == outputs[1]
