from __future__ import annotations

import numpy as np
import pytest

from ivlate.data import Dataset, load_csv, save_csv
from ivlate.params import DomainError
from ivlate.simulate import DgpSpec, generate_dataset


def small_dataset():
    x = np.column_stack([np.ones(4), [0.5, -0.25, 1.0, 0.0]])
    return Dataset(x=x, z=[0, 1, 0, 1], d=[0, 1, 1, 0], y=[1, 0, 1, 0],
                   colnames=("intercept", "x2"))


class TestDataset:
    def test_basic_accessors(self):
        data = small_dataset()
        assert data.n == 4
        assert data.col("x2") == 1
        assert data.cols(("intercept", "x2")) == (0, 1)
        with pytest.raises(DomainError):
            data.col("nope")

    def test_take_preserves_alignment(self):
        data = small_dataset()
        sub = data.take([2, 0])
        assert sub.n == 2
        assert sub.x[0, 1] == 1.0
        assert sub.d.tolist() == [1, 0]

    def test_binary_validation(self):
        x = np.ones((3, 1))
        with pytest.raises(DomainError):
            Dataset(x=x, z=[0, 1, 2], d=[0, 1, 0], y=[0, 0, 1],
                    colnames=("intercept",))

    def test_missing_covariate_rejected(self):
        x = np.ones((3, 2))
        x[1, 1] = np.nan
        with pytest.raises(DomainError):
            Dataset(x=x, z=[0, 1, 0], d=[0, 1, 0], y=[0, 0, 1],
                    colnames=("intercept", "x2"))


class TestCsv:
    def test_roundtrip(self, tmp_path):
        data = generate_dataset(DgpSpec(n=50, seed=9))
        path = tmp_path / "sim.csv"
        save_csv(data, path)
        back = load_csv(path)
        assert back.colnames == data.colnames
        assert np.array_equal(back.z, data.z)
        assert np.array_equal(back.d, data.d)
        assert np.array_equal(back.y, data.y)
        assert np.allclose(back.x, data.x, atol=0.0)

    def test_intercept_prepended(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x2,z,d,y\n0.5,1,0,1\n-0.5,0,1,0\n", encoding="utf-8")
        data = load_csv(path)
        assert data.colnames == ("intercept", "x2")
        assert np.allclose(data.x[:, 0], 1.0)

    def test_missing_required_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x2,z,d\n0.5,1,0\n", encoding="utf-8")
        with pytest.raises(DomainError):
            load_csv(path)

    def test_nonnumeric_value(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x2,z,d,y\noops,1,0,1\n", encoding="utf-8")
        with pytest.raises(DomainError):
            load_csv(path)

    def test_nonbinary_outcome(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x2,z,d,y\n0.5,1,0,2\n", encoding="utf-8")
        with pytest.raises(DomainError):
            load_csv(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x2,z,d,y\n0.5,1,0\n", encoding="utf-8")
        with pytest.raises(DomainError):
            load_csv(path)
