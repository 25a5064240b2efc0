import numpy as np
import pytest

from mixfda.exceptions import DomainError, FamilySupportError, SchemaError, ValidationError
from mixfda.funcdata import (
    DENSE_GRID,
    MultivariateFunctionalDataset,
    SamplingRegime,
    load_long_csv,
    subsample_regime,
    write_long_csv,
)

SIX_ROWS = """dim,unit,group,t,y
1,1,,0,0.5
1,1,,0.5,1.5
1,1,,1,2.5
2,1,,0,1
2,1,,0.5,0
2,1,,1,1
"""


def _dense(n_units=4, K=2, seed=0):
    rng = np.random.default_rng(seed)
    dim, unit, t, y = [], [], [], []
    for k in range(1, K + 1):
        for i in range(1, n_units + 1):
            dim.append(np.full(101, k))
            unit.append(np.full(101, i))
            t.append(DENSE_GRID)
            y.append(rng.normal(size=101))
    return MultivariateFunctionalDataset(
        np.concatenate(dim), np.concatenate(unit), np.concatenate(t), np.concatenate(y), ["gaussian"] * K
    )


def test_load_six_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(SIX_ROWS)
    ds = load_long_csv(p, ["gaussian", "poisson"])
    assert ds.n_obs == 6 and ds.K == 2
    assert ds.group is None


def test_nan_row_reported(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(SIX_ROWS.replace("1,1,,0.5,1.5", "1,1,,0.5,NaN"))
    with pytest.raises(ValidationError) as err:
        load_long_csv(p, ["gaussian", "poisson"])
    assert err.value.rows == [1]


def test_bernoulli_support(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(SIX_ROWS.replace("2,1,,0,1", "2,1,,0,2"))
    with pytest.raises(FamilySupportError):
        load_long_csv(p, ["gaussian", "bernoulli"])


def test_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("dim,unit,y\n1,1,0\n")
    with pytest.raises(SchemaError):
        load_long_csv(p, ["gaussian"])


def test_schema_mapping_and_roundtrip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(SIX_ROWS.replace("dim,unit,group,t,y", "k,id,group,time,value"))
    ds = load_long_csv(p, ["gaussian", "poisson"], schema={"dim": "k", "unit": "id", "t": "time", "y": "value"})
    out = tmp_path / "out.csv"
    write_long_csv(ds, out)
    back = load_long_csv(out, ["gaussian", "poisson"])
    for attr in ("dim", "unit", "t", "y"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(ds, attr))


def test_roundtrip_with_groups_and_awkward_floats(tmp_path):
    rng = np.random.default_rng(3)
    n = 40
    ds = MultivariateFunctionalDataset(
        rng.integers(1, 3, n), rng.integers(1, 5, n), rng.uniform(0, 1, n), rng.normal(size=n) / 3,
        ["gaussian", "gaussian"], group=rng.integers(1, 4, n),
    )
    out = tmp_path / "g.csv"
    write_long_csv(ds, out)
    back = load_long_csv(out, ["gaussian", "gaussian"])
    for attr in ("dim", "unit", "group", "t", "y"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(ds, attr))


def test_row_order_is_canonical():
    rng = np.random.default_rng(4)
    n = 50
    cols = (rng.integers(1, 3, n), rng.integers(1, 6, n), rng.uniform(0, 1, n), rng.normal(size=n))
    a = MultivariateFunctionalDataset(*cols, ["gaussian"] * 2)
    perm = rng.permutation(n)
    b = MultivariateFunctionalDataset(*(c[perm] for c in cols), ["gaussian"] * 2)
    for attr in ("dim", "unit", "t", "y"):
        np.testing.assert_array_equal(getattr(a, attr), getattr(b, attr))


def test_time_outside_domain():
    with pytest.raises(DomainError):
        MultivariateFunctionalDataset([1], [1], [1.5], [0.0], ["gaussian"])


def test_dimension_out_of_range():
    with pytest.raises(ValidationError):
        MultivariateFunctionalDataset([3], [1], [0.5], [0.0], ["gaussian", "gaussian"])


def test_regular_regime_keeps_eleven_points():
    sub = subsample_regime(_dense(), SamplingRegime.regular(), 0)
    for k in (1, 2):
        for i in range(1, 5):
            tt = sub.t[(sub.dim == k) & (sub.unit == i)]
            np.testing.assert_allclose(tt, np.linspace(0, 1, 11), atol=1e-12)


@pytest.mark.parametrize("regime, lo, hi", [(SamplingRegime.sparse(), 1, 10), (SamplingRegime.irregular(), 11, 20)])
def test_count_ranges(regime, lo, hi):
    dense = _dense(n_units=30)
    sub = subsample_regime(dense, regime, 7)
    counts = [np.sum((sub.dim == k) & (sub.unit == i)) for k in (1, 2) for i in range(1, 31)]
    assert min(counts) >= lo and max(counts) <= hi


def test_subsample_deterministic_and_subset():
    dense = _dense()
    a = subsample_regime(dense, SamplingRegime.sparse(), 11)
    b = subsample_regime(dense, SamplingRegime.sparse(), 11)
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(a.y, b.y)
    dense_set = set(zip(dense.dim, dense.unit, dense.t, dense.y))
    assert set(zip(a.dim, a.unit, a.t, a.y)) <= dense_set


def test_subsample_requires_dense_grid():
    ds = MultivariateFunctionalDataset([1, 1], [1, 1], [0.0, 0.123], [0.0, 1.0], ["gaussian"])
    with pytest.raises(DomainError):
        subsample_regime(ds, SamplingRegime.sparse(), 0)


def test_zero_replacement_is_explicit(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("dim,unit,t,y\n1,1,0.1,0\n1,1,0.2,2\n2,1,0.3,0\n")
    with pytest.raises(FamilySupportError):
        load_long_csv(p, ["gamma", "poisson"])
    raw = load_long_csv(p, ["gamma", "poisson"], check_support=False)
    fixed = raw.replace_values(1, 0.0, 0.5)
    assert fixed.y[0] == 0.5 and fixed.y[2] == 0.0
