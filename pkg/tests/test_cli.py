"""CLI surface: subcommands, exit codes, file outputs."""

import os

import numpy as np
import pytest

from catpose.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    rc = main(["gen", "--categories", "can,bowl", "--per-cat", "2",
               "--seed", "7", "--profile", "desk", "--out", str(out)])
    assert rc == 0
    return out


class TestGen:
    def test_writes_manifest_and_counts(self, dataset):
        assert (dataset / "manifest.json").is_file()
        sample_dirs = sorted(os.listdir(dataset / "samples"))
        assert len(sample_dirs) == 4
        assert (dataset / "priors" / "can.txt").is_file()

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--bogus", "1"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestTrainEval:
    def test_train_then_eval_roundtrip(self, dataset, tmp_path):
        weights = tmp_path / "w.bin"
        curve = tmp_path / "curve.csv"
        rc = main(["train", "--manifest", str(dataset / "manifest.json"),
                   "--epochs", "1", "--lr", "1e-4", "--seed", "3",
                   "--weights", str(weights), "--curve", str(curve)])
        assert rc == 0
        assert weights.is_file()
        header = curve.read_text().splitlines()[0]
        assert header == "epoch,lr,total,reconstruction,correspondence,deformation,sparsity"

        report = tmp_path / "report.csv"
        rc = main(["eval", "--manifest", str(dataset / "manifest.json"),
                   "--weights", str(weights), "--report", str(report)])
        assert rc == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "category,IoU50,IoU75,5deg2cm,5deg5cm,10deg2cm,10deg5cm,10deg10cm"
        assert any(row.startswith("can,") for row in lines)
        assert any(row.startswith("average,") for row in lines)

    def test_eval_missing_weights_file_exits_1(self, dataset, tmp_path, capsys):
        rc = main(["eval", "--manifest", str(dataset / "manifest.json"),
                   "--weights", str(tmp_path / "nope.bin"),
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 1
        assert "error" in capsys.readouterr().err.lower()

    def test_eval_corrupt_weights_reports_offset(self, dataset, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"\xff\xff\xff\xff\x00")
        rc = main(["eval", "--manifest", str(dataset / "manifest.json"),
                   "--weights", str(bad), "--report", str(tmp_path / "r.csv")])
        assert rc == 1
        assert "byte offset" in capsys.readouterr().err


class TestSelftest:
    def test_selftest_passes(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out
        assert "[FAIL]" not in out


class TestBench:
    def test_bench_reports_monotone_times(self, capsys):
        rc = main(["bench", "--tokens", "1024", "--channels", "16",
                   "--ratios", "1,2,4", "--repeats", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "monotone nonincreasing with R: True" in out

    def test_bench_rejects_non_square_tokens(self, capsys):
        assert main(["bench", "--tokens", "1000"]) == 1


class TestDeterminism:
    def test_gen_twice_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen", "--categories", "can", "--per-cat", "2",
                         "--seed", "11", "--profile", "desk", "--out", str(out)]) == 0
        for root, _, files in os.walk(a):
            for name in files:
                pa = os.path.join(root, name)
                pb = pa.replace(str(a), str(b), 1)
                with open(pa, "rb") as fa, open(pb, "rb") as fb:
                    assert fa.read() == fb.read(), pa
