import csv
import io
import json

import pytest

from btest.bench import BlobConfig, sample_blobs
from btest.cli import CSV_COLUMNS, main
from btest.data import write_csv


@pytest.fixture
def blob_files(tmp_path):
    def make(n, which_y, seed):
        cfg = BlobConfig(seed=seed)
        x, y = tmp_path / f"x{seed}.csv", tmp_path / f"y{seed}.csv"
        write_csv(sample_blobs(cfg, n, "P", seed=2 * seed), x)
        write_csv(sample_blobs(cfg, n, which_y, seed=2 * seed + 1), y)
        return str(x), str(y)

    return make


def run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_test_command_rejects_on_separated_samples(capsys, blob_files):
    x, y = blob_files(2000, "Q", 1)
    code, out, _ = run(capsys, ["test", x, y, "--kernel", "fixed:1"])
    result = json.loads(out)
    assert code == 1 and result["reject"]
    assert set(result) == {"statistic", "threshold", "p_value", "reject", "alpha", "elapsed_s", "diagnostics"}
    assert result["diagnostics"]["block_size"] == 45


def test_test_command_accepts_most_null_runs(capsys, blob_files):
    codes = [run(capsys, ["test", *blob_files(200, "P", s), "--seed", str(s)])[0] for s in range(40)]
    assert set(codes) <= {0, 1}
    assert codes.count(0) >= 34


def test_test_command_csv_and_nulls(capsys, blob_files):
    x, y = blob_files(100, "P", 3)
    for null in ("clt", "permutation:200", "spectrum:100", "gamma"):
        code, out, _ = run(capsys, ["test", x, y, "--null", null, "--out", "csv", "--kernel", "fixed:2"])
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code in (0, 1) and len(rows) == 1
        assert rows[0]["reject"] == ("True" if code else "False")


def test_test_command_maxratio_uses_half(capsys, blob_files):
    x, y = blob_files(400, "Q", 4)
    code, out, _ = run(capsys, ["test", x, y, "--kernel", "maxratio", "--block-size", "10"])
    assert json.loads(out)["diagnostics"]["n"] == 200


def test_missing_file_exit_2_without_output(capsys, tmp_path, blob_files):
    x, _ = blob_files(10, "P", 5)
    code, out, err = run(capsys, ["test", x, str(tmp_path / "missing.csv")])
    assert code == 2 and out == "" and "error" in err


def test_data_errors_exit_2(capsys, tmp_path, blob_files):
    x, _ = blob_files(10, "P", 6)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,oops\n")
    code, out, err = run(capsys, ["test", x, str(bad)])
    assert code == 2 and out == "" and "row 2" in err
    one_d = tmp_path / "one.csv"
    one_d.write_text("\n".join(str(v) for v in range(10)) + "\n")
    assert run(capsys, ["test", x, str(one_d)])[0] == 2


@pytest.mark.parametrize(
    "argv, flag",
    [
        (["--alpha", "1.5"], "--alpha"),
        (["--block-size", "1"], "--block-size"),
        (["--gamma", "0"], "--gamma"),
        (["--kernel", "fixed:-1"], "--kernel"),
        (["--null", "permutation:10"], "--null"),
        (["--threads", "0"], "--threads"),
        (["--block-size", "4", "--gamma", "0.5"], "--gamma"),
    ],
)
def test_flag_validation_names_flag(capsys, argv, flag, blob_files):
    x, y = blob_files(10, "P", 7)
    with pytest.raises(SystemExit) as exc:
        main(["test", x, y, *argv])
    assert exc.value.code == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert flag in err


def test_bench_blobs_type2_decreases_and_is_deterministic(capsys, tmp_path):
    argv = ["bench-blobs", "--kernel", "fixed:1", "--block-size", "2,8,32", "--n", "2000",
            "--replications", "500", "--threads", "1", "--manifest", str(tmp_path / "m.json")]
    code, out, _ = run(capsys, argv)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == CSV_COLUMNS["bench-blobs"]
    type2 = [float(r["type2"]) for r in rows]
    assert type2[0] > type2[1] > type2[2]
    manifest = json.loads((tmp_path / "m.json").read_text())
    assert {"seed", "git_describe", "wall_clock_s", "argv"} <= set(manifest)
    assert run(capsys, argv)[1] == out


def test_complexity_rows(capsys):
    code, out, _ = run(capsys, ["complexity", "--grid-size", "1", "--stretch", "100",
                                "--replications", "100", "--out", "json"])
    assert code == 0
    (row,) = json.loads(out)["rows"]
    assert row["status"] == "ok" and row["n"] == 64

    code, out, _ = run(capsys, ["complexity", "--stretch", "1", "--replications", "100",
                                "--n-min", "32", "--n-cap", "100"])
    (row,) = csv.DictReader(io.StringIO(out))
    assert code == 0 and row["status"] == "budget_exceeded" and row["largest_n_tried"] == "100"


def test_timing_and_calibrate(capsys):
    code, out, _ = run(capsys, ["timing", "--n-values", "64,128", "--runs", "1", "--block-size", "auto,4"])
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["block_policy"] for r in rows] == ["n^0.5", "n^0.5", "4", "4"]
    assert all(float(r["seconds"]) > 0 for r in rows)

    code, out, _ = run(capsys, ["calibrate", "--grid-size", "1", "--stretch-values", "100",
                                "--replications", "100"])
    (row,) = csv.DictReader(io.StringIO(out))
    assert code == 0 and row["q_stretch"] == "100.0" and row["n"] == "64"


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip()
