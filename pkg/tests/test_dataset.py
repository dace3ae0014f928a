import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spme_soh.dataset import (MANIFEST_COLUMNS, SERIES_COLUMNS, DatasetError, InfeasibleSample, build_dataset,
                              complete_theta, derive_boundary_stoichiometry, latin_hypercube_sample, load_dataset,
                              read_series, resample, split_indices, write_series)
from spme_soh.electrochem import rest_voltage
from spme_soh.ocp import default_ocps
from spme_soh.parameters import AGING_RANGES, INDEPENDENT_NAMES, reference_cell
from spme_soh.solver import SolverSettings, simulate_discharge

CELL = reference_cell()
OCPS = default_ocps()


def test_fresh_boundaries_are_a_fixed_point():
    x0n, x100p = derive_boundary_stoichiometry(0.54, 0.373, 0.795, 0.89, CELL, OCPS)
    assert x0n == pytest.approx(0.0018, abs=1e-9)
    assert x100p == pytest.approx(0.016, abs=1e-9)


def test_charge_balance_closure_available():
    x0n, x100p = derive_boundary_stoichiometry(0.54, 0.373, 0.795, 0.89, CELL, OCPS, closure="charge_balance")
    assert x100p == pytest.approx(0.016, abs=1e-9)
    per_n, per_p = 0.54 * CELL.neg.L * CELL.neg.c_s_max, 0.373 * CELL.pos.L * CELL.pos.c_s_max
    assert per_n * (0.795 - x0n) == pytest.approx(per_p * (0.89 - x100p))
    with pytest.raises(ValueError):
        derive_boundary_stoichiometry(0.54, 0.373, 0.795, 0.89, CELL, OCPS, closure="guess")


@settings(max_examples=40, deadline=None)
@given(*(st.floats(*AGING_RANGES[n]) for n in INDEPENDENT_NAMES))
def test_derivation_inverts_rest_voltage(en, ep, xn, xp):
    th = complete_theta((en, ep, xn, xp), CELL, OCPS)
    assert abs(rest_voltage(th.x100_neg, th.x100_pos, *OCPS) - CELL.V_max) < 1e-3
    assert abs(rest_voltage(th.x0_neg, th.x0_pos, *OCPS) - CELL.V_min) < 1e-3
    assert th.in_box(tol=1e-4)  # derived boundaries may sit just past the tabulated range


def test_derivation_rejects_unreachable_cutoff():
    from dataclasses import replace
    with pytest.raises(InfeasibleSample):
        derive_boundary_stoichiometry(0.54, 0.373, 0.795, 0.89, replace(CELL, V_max=5.0), OCPS)


@pytest.mark.parametrize("n", [1, 7, 100])
def test_lhs_one_sample_per_stratum(n):
    x = latin_hypercube_sample(n, seed=3)
    assert x.shape == (n, 4)
    for k, name in enumerate(INDEPENDENT_NAMES):
        lo, hi = AGING_RANGES[name]
        strata = np.floor((x[:, k] - lo) / (hi - lo) * n).astype(int)
        assert sorted(strata) == list(range(n))


def test_lhs_histogram_and_determinism():
    x = latin_hypercube_sample(100, seed=9)
    lo, hi = AGING_RANGES["eps_s_pos"]
    counts, _ = np.histogram(x[:, 1], bins=10, range=(lo, hi))
    assert np.all(counts == 10)
    np.testing.assert_array_equal(x, latin_hypercube_sample(100, seed=9))
    assert not np.array_equal(x, latin_hypercube_sample(100, seed=10))
    with pytest.raises(ValueError):
        latin_hypercube_sample(0)


def test_resample_contract():
    rec = simulate_discharge(CELL.fresh_theta(), CELL, ocps=OCPS)
    s = resample(rec, 128)
    assert all(len(s[c]) == 128 for c in SERIES_COLUMNS)
    assert s["t_norm"][0] == 0.0 and s["t_norm"][-1] == 1.0
    assert s["t_s"][-1] == rec.duration
    assert s["voltage_v"][0] == rec.V[0] and s["voltage_v"][-1] == rec.V[-1]


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    m = build_dataset(12, out, CELL, seed=4, k=32, config_text="seed = 4\n")
    return out, m


def test_build_dataset_files(small_dataset):
    out, m = small_dataset
    lines = (out / "manifest.csv").read_text().splitlines()
    assert lines[0] == ",".join(MANIFEST_COLUMNS)
    rows = [ln.split(",") for ln in lines[1:] if not ln.startswith("#")]
    assert len(rows) == 12 and m.n_requested == 12
    assert sum(r[-1] == "0" for r in rows) == m.n_kept
    trailer = dict(ln[2:].split(" = ") for ln in lines if ln.startswith("# ") and " = " in ln)
    assert 0 <= float(trailer["filtered_fraction"]) <= 1
    assert float(trailer["fresh_capacity_ah"]) == pytest.approx(1.062, abs=0.01)
    assert (out / "run.cfg").read_text() == "seed = 4\n"
    ds = load_dataset(out)
    assert len(ds) == m.n_kept
    assert ds.series["t_s"].shape == (m.n_kept, 32)
    assert np.all((ds.soh > 0.5) & (ds.soh < 1.1))
    np.testing.assert_allclose(ds.capacity, 4.4 * ds.duration / 3600)
    assert ds.windows().shape == (m.n_kept, 32, 3)


def test_build_dataset_byte_identical(small_dataset, tmp_path):
    out, _ = small_dataset
    build_dataset(12, tmp_path, CELL, seed=4, k=32)
    assert (tmp_path / "manifest.csv").read_bytes() == (out / "manifest.csv").read_bytes()
    for p in (out / "series").iterdir():
        assert (tmp_path / "series" / p.name).read_bytes() == p.read_bytes()


def test_filtered_warning(tmp_path):
    # only samples at least as long as the fresh discharge survive
    m = build_dataset(5, tmp_path, CELL, seed=0, k=16, settings=SolverSettings(min_duration=860.0))
    assert m.filtered_fraction > 0.2 and m.warning
    text = (tmp_path / "manifest.csv").read_text()
    assert "# warning:" in text
    rows = [ln.split(",") for ln in text.splitlines()[1:] if not ln.startswith("#")]
    bad = [r for r in rows if r[-1] == "1"]
    assert bad and all(r[4] == "" and r[7] == "" for r in bad)


def test_series_io_round_trip_and_errors(tmp_path):
    rec = simulate_discharge(CELL.fresh_theta(), CELL, ocps=OCPS)
    s = resample(rec, 16)
    write_series(tmp_path / "a.csv", s)
    back = read_series(tmp_path / "a.csv")
    for c in SERIES_COLUMNS:
        np.testing.assert_array_equal(back[c], s[c])
    p = tmp_path / "b.csv"
    p.write_text("t_s,voltage_v\n0,3\n")
    with pytest.raises(DatasetError, match=":1:"):
        read_series(p)
    p.write_text(",".join(SERIES_COLUMNS) + "\n" + ",".join(["1"] * 8) + "\n" + ",".join(["x"] * 8) + "\n")
    with pytest.raises(DatasetError, match=":3:"):
        read_series(p)
    p.write_text("")
    with pytest.raises(DatasetError):
        read_series(p)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")


@given(st.integers(2, 500), st.floats(0.05, 0.95), st.integers(0, 10))
def test_split_partitions(n, ratio, seed):
    tr, te = split_indices(n, ratio, seed)
    assert len(tr) and len(te)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n))
    np.testing.assert_array_equal(tr, split_indices(n, ratio, seed)[0])
