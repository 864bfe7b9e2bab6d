import io

import numpy as np
import pytest

from stochbt.textio import csv_text, format_float, read_matrix_blocks, write_csv, write_matrix, write_matrix_file
from stochbt.textio import read_matrix_file


def test_float_round_trip(rng):
    x = rng.standard_normal(1000) * 10.0 ** rng.integers(-300, 300, 1000)
    assert all(float(format_float(v)) == v for v in x)
    assert format_float(1.0) == "1.0000000000000000e+00"


def test_matrix_round_trip(tmp_path, rng):
    M = rng.standard_normal((3, 4))
    write_matrix_file(tmp_path / "m.txt", [("X", M), ("Y", np.eye(2))], header="# test")
    back = read_matrix_file(tmp_path / "m.txt")
    np.testing.assert_array_equal(back["X"], M)
    np.testing.assert_array_equal(back["Y"], np.eye(2))


def test_malformed_blocks():
    with pytest.raises(ValueError, match="truncated"):
        read_matrix_blocks(["MATRIX A 2 1", "1.0"])
    with pytest.raises(ValueError, match="entries"):
        read_matrix_blocks(["MATRIX A 1 2", "1.0"])
    with pytest.raises(ValueError, match="MATRIX"):
        read_matrix_blocks(["MATRIX A 1"])


def test_csv_format(tmp_path):
    rows = [[1, 0.5, "exact"], [2, np.float64(1e-7), "approx"]]
    text = csv_text(["r", "x", "s"], rows)
    assert text == "r,x,s\n1,5.0000000000000000e-01,exact\n2,9.9999999999999995e-08,approx\n"
    write_csv(tmp_path / "t.csv", ["r", "x", "s"], rows)
    assert (tmp_path / "t.csv").read_bytes() == text.encode()
    buf = io.StringIO()
    write_matrix(buf, "Z", [[1.0]])
    assert buf.getvalue() == "MATRIX Z 1 1\n1.0000000000000000e+00\n"
