import json

import numpy as np
import pytest

import main
from config import settings
from db import database
from db.models import RunRecord, RunStatus
from services.measures import AnalyticMeasure
from services.storage import read_curve_csv, read_spectra, write_curve_csv
from services.transforms import DensityCurve, density_eval


def _last_run():
    with database.get_db() as db:
        return db.query(RunRecord).order_by(RunRecord.id.desc()).first()


def test_invert_writes_header_and_density(tmp_path, measure_file):
    path = measure_file(AnalyticMeasure.semicircle(1.0))
    out = tmp_path / "sc.csv"
    code = main.main(["invert", "--measure", path, "--grid", "-1.9:1.9:39", "--out", str(out)])
    assert code == main.EXIT_OK
    header = out.read_text().splitlines()[0]
    assert header == f"# freespec v0.1.0 seed=0 cmd=invert --grid=-1.9:1.9:39 --measure={path}"
    curve = read_curve_csv(out)
    assert np.max(np.abs(curve.values - density_eval(AnalyticMeasure.semicircle(1.0), curve.grid))) < 1e-5

    record = _last_run()
    assert record.command == "invert"
    assert record.status == RunStatus.SUCCESS.value
    assert record.canonical_flags == header.split("cmd=", 1)[1]


def test_usage_errors_exit_with_one(measure_file):
    with pytest.raises(SystemExit) as info:
        main.main(["invert", "--grid", "-1:1:5"])
    assert info.value.code == main.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main.main(["invert", "--measure", measure_file(AnalyticMeasure.arcsine()), "--grid", "1:0:5"])
    assert info.value.code == main.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main.main(["frobnicate"])
    assert info.value.code == main.EXIT_USAGE


def test_bad_inputs_exit_with_one(tmp_path):
    assert main.main(["invert", "--measure", str(tmp_path / "missing.json"), "--grid", "0:1:5"]) == main.EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "kesten_mckay", "params": {"eta": 1}}')
    assert main.main(["invert", "--measure", str(bad), "--grid", "0:1:5"]) == main.EXIT_USAGE
    assert _last_run().status == RunStatus.ERROR.value


def test_convolve_output_does_not_depend_on_threads(tmp_path, measure_file):
    a = measure_file(AnalyticMeasure.arcsine(), "a")
    b = measure_file(AnalyticMeasure.semicircle(1.0), "b")
    outputs = []
    for threads in ("1", "4"):
        out = tmp_path / f"conv{threads}.csv"
        args = ["convolve", "--a", a, "--b", b, "--grid", "-4.2:4.2:129", "--threads", threads, "--out", str(out)]
        assert main.main(args) == main.EXIT_OK
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    assert read_curve_csv(tmp_path / "conv1.csv").mass == pytest.approx(1.0, abs=2e-2)


def test_nonconvergence_exits_with_two(tmp_path, measure_file, monkeypatch):
    monkeypatch.setattr(settings, "fp_max_iter", 1)
    a = measure_file(AnalyticMeasure.semicircle(1.0))
    out = tmp_path / "conv.csv"
    code = main.main(["convolve", "--a", a, "--b", a, "--grid", "-2:2:21", "--out", str(out)])
    assert code == main.EXIT_NONCONVERGED
    assert not read_curve_csv(out).valid.any()
    assert _last_run().status == RunStatus.NONCONVERGED.value


def test_compare_prints_distance_and_checks_tolerance(tmp_path, capsys):
    grid = np.linspace(0.0, 1.0, 11)
    write_curve_csv(tmp_path / "a.csv", DensityCurve(grid=grid, values=np.ones(11)))
    write_curve_csv(tmp_path / "b.csv", DensityCurve(grid=grid, values=np.zeros(11)))
    files = ["--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv")]

    assert main.main(["compare", *files, "--metric", "linf"]) == main.EXIT_OK
    assert capsys.readouterr().out.strip() == "1"
    assert main.main(["compare", *files, "--tol", "0.5"]) == main.EXIT_COMPARE_FAILED
    assert main.main(["compare", *files, "--window", "0:0.5", "--tol", "0.5"]) == main.EXIT_OK
    assert _last_run().status == RunStatus.SUCCESS.value


def test_sample_writes_spectra_and_histogram(tmp_path):
    spectra_path, hist_path = tmp_path / "chain.bin", tmp_path / "chain.csv"
    code = main.main(["sample", "--model", "chain", "--N", "3", "--realizations", "2", "--grid", "-2:2:5",
                      "--seed", "5", "--out", str(spectra_path), "--hist", str(hist_path)])
    assert code == main.EXIT_OK
    spectra = read_spectra(spectra_path)
    assert len(spectra) == 2
    assert spectra[0].eigenvalues == pytest.approx([-np.sqrt(2), 0.0, np.sqrt(2)])
    header = hist_path.read_text().splitlines()[0]
    assert header == "# freespec v0.1.0 seed=5 cmd=sample --N=3 --grid=-2:2:5 --model=chain --realizations=2"
    assert read_curve_csv(hist_path).mass == pytest.approx(1.0)


def test_sample_histogram_to_stdout(capsys):
    code = main.main(["sample", "--model", "goe", "--N", "20", "--realizations", "3", "--bins", "10"])
    assert code == main.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# freespec v0.1.0 seed=0 cmd=sample")
    assert lines[1] == "lambda,density,converged"
    assert len(lines) == 12


def test_pestimate_prints_json(capsys):
    code = main.main(["pestimate", "--a-model", "diag-normal", "--b-model", "permuted-diag-normal",
                      "--N", "30", "--realizations", "10", "--seed", "3"])
    assert code == main.EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"p", "stderr", "m4_native", "m4_classical", "m4_free"}
    assert payload["p"] == pytest.approx(0.0, abs=1e-12)


def test_compress_pde_check(tmp_path, measure_file):
    out = tmp_path / "pde.csv"
    code = main.main(["compress", "--measure", measure_file(AnalyticMeasure.arcsine()), "--alpha", "0.5",
                      "--check-pde", "--out", str(out)])
    assert code == main.EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[1] == "u,re_z,im_z,residual"
    residuals = [float(line.split(",")[3]) for line in lines[2:]]
    assert len(residuals) == 9
    assert max(residuals) < 1e-6


def test_compress_curve_uses_closed_form(tmp_path, measure_file):
    out = tmp_path / "km.csv"
    code = main.main(["compress", "--measure", measure_file(AnalyticMeasure.semicircle(1.0)), "--alpha", "0.5",
                      "--grid", "-1.3:1.3:27", "--out", str(out)])
    assert code == main.EXIT_OK
    curve = read_curve_csv(out)
    assert np.max(np.abs(curve.values - density_eval(AnalyticMeasure.semicircle(0.5), curve.grid))) < 1e-5
    assert _last_run().details["closed_form"] == "orthopoly"


def test_perturb_preset_with_overlay(tmp_path):
    out = tmp_path / "highj.csv"
    code = main.main(["perturb", "--preset", "anderson-high-j", "--J", "10", "--grid", "-25:25:101",
                      "--overlay-alpha", "0.5", "--out", str(out)])
    assert code == main.EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[1] == "lambda,density,converged,compressed"
    assert read_curve_csv(out, "compressed").mass == pytest.approx(1.0, abs=0.05)


def test_perturb_needs_a_model(tmp_path):
    assert main.main(["perturb", "--grid", "-1:1:5", "--out", str(tmp_path / "p.csv")]) == main.EXIT_USAGE


def test_negative_values_are_joined():
    assert main.join_negative_values(["--grid", "-2:2:5", "--alpha", ".5", "--delta", "-.1"]) == [
        "--grid=-2:2:5", "--alpha", ".5", "--delta=-.1"]
