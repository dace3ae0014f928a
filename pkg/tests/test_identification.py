import numpy as np
import pytest

from gradcheck import fd_compare
from spme_soh.autodiff import Tape, Variable, checkpoint
from spme_soh.autodiff import tensor as T
from spme_soh.autodiff.nn import Dense
from spme_soh.dataset import resample
from spme_soh.identification import (FrozenModelMutated, IdentSettings, Identifier, MeasurementWindow, WindowError,
                                     identifier_network, identify, iterative_identify_oracle, normalize_windows,
                                     reconstruct_voltage, reconstruction_loss, reconstruction_rmse,
                                     train_identifier, write_report)
from spme_soh.parameters import AgingParameters
from spme_soh.solver import simulate_discharge
from spme_soh.surrogate import SurrogateEnsemble, normalize_theta


def _window(k=32, **kw):
    t = np.linspace(0, 1, k)
    base = dict(V=np.linspace(3.3, 2.0, k), I=np.full(k, 4.4), t_norm=t)
    base.update(kw)
    return MeasurementWindow(**base)


def test_window_validation():
    w = _window()
    assert w.array().shape == (32, 3)
    with pytest.raises(WindowError):
        _window(V=np.linspace(3.3, 2.0, 31))
    with pytest.raises(WindowError):
        _window(t_norm=np.linspace(0, 2, 32))
    with pytest.raises(WindowError):
        _window(t_norm=np.r_[0, 0, np.linspace(0.1, 1, 30)])
    with pytest.raises(WindowError):
        _window(V=np.full(32, 12.0))


def test_identifier_output_in_box(tiny_dataset, cell):
    from spme_soh.normalization import default_spec
    _, ds = tiny_dataset
    ident = Identifier(identifier_network(32, seed=1), default_spec(cell))
    th = ident.identify_batch(ds.windows())
    assert th.shape == (len(ds), 6)
    tn = normalize_theta(th, ident.spec)
    assert np.all((tn > 0) & (tn < 1))
    assert isinstance(identify(MeasurementWindow.from_series({k: v[0] for k, v in ds.series.items()}), ident),
                      AgingParameters)


def test_reconstruction_gradient_matches_finite_differences(tiny_ensemble, tiny_dataset, cell, ocps):
    ens, _ = tiny_ensemble
    _, ds = tiny_dataset
    pick = np.arange(20) % len(ds)
    w = ds.windows()[pick]
    th0 = np.random.default_rng(7).uniform(0.05, 0.95, (20, 6))

    def loss(th):
        V, _ = reconstruct_voltage(th, w[..., 1], w[..., 2], ens, cell, ocps, clamp=False)
        return T.sqrt(reconstruction_loss(V, w[..., 0], ens.spec))

    v = Variable(th0)
    with Tape() as tape:
        y = loss(v)
    g = tape.gradient(y, v)
    coords = [(i, j) for i in range(20) for j in range(6)]
    errs = fd_compare(lambda th: float(T.value_of(loss(T.Tensor(th)))), th0.copy(), g, coords)
    assert np.sum(np.isfinite(errs)) >= 100
    assert np.nanmax(errs) < 1e-4


def test_clamp_flags_saturated_predictions(tiny_ensemble, tiny_dataset, cell, ocps):
    ens, _ = tiny_ensemble
    _, ds = tiny_dataset
    nets = dict(ens.nets)
    # push the css_neg output to its upper bound
    sat = nets["css_neg"].__class__.from_descriptor(nets["css_neg"].descriptor())
    sat.set_weights(nets["css_neg"].get_weights())
    last = [layer for layer in sat.layers if isinstance(layer, Dense)][-1]
    last.b.data[:] = 50.0
    bad = SurrogateEnsemble({**nets, "css_neg": sat}, ens.spec)
    w = ds.windows()[:2]
    th = T.Tensor(normalize_theta(ds.theta[:2], ens.spec))
    V, flags = reconstruct_voltage(th, w[..., 1], w[..., 2], bad, cell, ocps)
    assert flags.all() and np.all(np.isfinite(T.value_of(V)))
    _, ok = reconstruct_voltage(th, w[..., 1], w[..., 2], ens, cell, ocps)
    assert ok.shape == (2,)


def test_training_leaves_surrogate_untouched(tiny_ensemble, tiny_dataset, cell, ocps, tmp_path):
    ens, d = tiny_ensemble
    _, ds = tiny_dataset
    before = ens.hashes(d)
    w = ds.windows()
    ident, report = train_identifier(w[:12], w[12:], ens, cell, IdentSettings(epochs=3, batch=8, seed=4),
                                     ocps=ocps, surrogate_dir=d)
    assert ens.hashes(d) == before
    assert len(report) == 3 and all(np.isfinite(r[1]) for r in report)
    write_report(tmp_path / "r.csv", report)
    assert (tmp_path / "r.csv").read_text().startswith("epoch,train_loss,val_loss,clamped_samples\n")
    p = tmp_path / "identifier.ckpt"
    h = ident.save(p)
    assert h == checkpoint.file_hash(p)
    again = Identifier.load(p)
    np.testing.assert_array_equal(again.theta_norm(w), ident.theta_norm(w))
    rmse, theta = reconstruction_rmse(ident, w, ens, cell, ocps)
    assert rmse.shape == (len(w),) and theta.shape == (len(w), 6)


def test_training_detects_mutated_checkpoint(tiny_ensemble, tiny_dataset, cell, ocps, tmp_path, monkeypatch):
    ens, d = tiny_ensemble
    _, ds = tiny_dataset
    copy = tmp_path / "sur"
    ens.save(copy)
    calls = {"n": 0}
    real = SurrogateEnsemble.hashes

    def tampered(self, directory):
        calls["n"] += 1
        out = real(self, directory)
        if calls["n"] > 1:
            out = {k: "0" * 64 for k in out}
        return out

    monkeypatch.setattr(SurrogateEnsemble, "hashes", tampered)
    with pytest.raises(FrozenModelMutated):
        train_identifier(ds.windows()[:8], ds.windows()[8:], ens, cell, IdentSettings(epochs=1, batch=8),
                         ocps=ocps, surrogate_dir=copy)


def test_self_supervision_sees_no_labels():
    import inspect
    params = inspect.signature(train_identifier).parameters
    assert "theta" not in params and "soh" not in params


def test_normalize_windows_keeps_time(cell):
    from spme_soh.normalization import default_spec
    spec = default_spec(cell)
    w = _window().array()[None]
    n = normalize_windows(w, spec)
    np.testing.assert_array_equal(n[..., 2], w[..., 2])
    assert n[0, -1, 0] == pytest.approx(0.0)


def test_oracle_recovers_known_parameters(cell, ocps):
    th = cell.fresh_theta()
    rec = simulate_discharge(th, cell, ocps=ocps)
    w = MeasurementWindow.from_series(resample(rec, 64))
    res = iterative_identify_oracle(w, cell, ocps, starts=1, budget=30, x0=th, tol_rmse=1e-6)
    assert res.rmse < 1e-6
    np.testing.assert_allclose(res.theta.as_array(), th.as_array(), rtol=1e-6)
