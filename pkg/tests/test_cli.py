import numpy as np
import pytest

from lhash.bench import rows_from_csv
from lhash.cli import main
from lhash.keyset import load_keyset
from lhash.models import RadixSplineModel, RmiModel, load_model


def test_gen_and_train(tmp_path):
    keys = tmp_path / "k.bin"
    assert main(["gen", "--dataset", "seq1", "--n", "5000", "--out", str(keys)]) == 0
    ks = load_keyset(keys)
    assert ks.count == 5000
    model = tmp_path / "m.bin"
    assert main(["train", "--keys", str(keys), "--model", "rmi", "--leaves", "16",
                 "--out", str(model)]) == 0
    m = load_model(model)
    assert isinstance(m, RmiModel) and m.leaf_count == 16
    assert main(["train", "--keys", str(keys), "--model", "rs", "--radix-bits", "6",
                 "--out", str(model)]) == 0
    assert isinstance(load_model(model), RadixSplineModel)


def test_collisions_to_file(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["collisions", "--dataset", "seq0,uniform", "--n", "2e4", "--hasher", "murmur,rs",
                 "--out", str(out)]) == 0
    rows = rows_from_csv(out.read_text())
    assert len(rows) == 2 * 2 * 3


def test_collisions_accepts_keyfile(tmp_path):
    keys = tmp_path / "k.bin"
    main(["gen", "--dataset", "seq0", "--n", "1000", "--out", str(keys)])
    out = tmp_path / "c.csv"
    assert main(["collisions", "--dataset", str(keys), "--hasher", "rmi", "--leaves", "4",
                 "--out", str(out)]) == 0
    emp = [r for r in rows_from_csv(out.read_text()) if r.metric == "empty_fraction_empirical"]
    assert emp[0].value == 0.0


def test_throughput_stdout(capsys):
    assert main(["throughput", "--dataset", "seq10", "--n", "5000", "--hasher", "murmur,rmi",
                 "--models", "10", "--repetitions", "3", "--batch-s", "2", "--batch-w", "4",
                 "--no-prefetch"]) == 0
    text = capsys.readouterr().out
    assert "throughput:rmi:L=10:batched:s=2:w=4:prefetch=0" in text


def test_probe_strict_exit(tmp_path, capsys):
    args = ["probe", "--dataset", "uniform", "--n", "3000", "--hasher", "murmur", "--table",
            "cuckoo", "--bucket-size", "1", "--load-factor", "1.0", "--max-kicks", "3",
            "--repetitions", "3", "--out", str(tmp_path / "p.csv")]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 3
    assert "failed" in capsys.readouterr().err


def test_gaps_with_report(tmp_path):
    hist, rep = tmp_path / "h.csv", tmp_path / "r.csv"
    assert main(["gaps", "--dataset", "seq10,seq1", "--n", "10000", "--hasher", "rs",
                 "--bins", "50", "--out", str(hist), "--report", str(rep)]) == 0
    assert len(hist.read_text().splitlines()) == 51
    assert {r.dataset for r in rows_from_csv(rep.read_text())} == {"seq10", "seq1"}


@pytest.mark.parametrize("args", [
    ["collisions", "--dataset", "zipf", "--n", "100"],
    ["throughput", "--n", "100", "--repetitions", "2"],
    ["collisions", "--hasher", "crc", "--n", "100"],
])
def test_errors_exit_nonzero(args, capsys):
    assert main(args) == 2
    assert capsys.readouterr().err.startswith("lhash: error:")


def test_bad_keyfile(tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(np.array([5, 1], dtype="<u8").tobytes())
    assert main(["train", "--keys", str(bad), "--out", str(tmp_path / "m.bin")]) == 2
