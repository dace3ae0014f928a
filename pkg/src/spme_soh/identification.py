"""Self-supervised aging-parameter identification through the frozen surrogate."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .autodiff import Tape, checkpoint, mean
from .autodiff import tensor as T
from .autodiff.nn import Conv1d, Dense, Flatten, MaxPool1d, Network
from .autodiff.optim import Adam
from .dataset import InfeasibleSample, complete_theta, resample
from .electrochem import terminal_voltage
from .normalization import NormalizationSpec
from .ocp import default_ocps
from .parameters import AGING_RANGES, INDEPENDENT_NAMES, THETA_NAMES, AgingParameters, CellParameters
from .solver import AbnormalDischarge, simulate_discharge
from .surrogate import SurrogateEnsemble, TrainingDivergence, denormalize_theta, normalize_theta

log = logging.getLogger(__name__)

TAG = "identifier"
V_PLAUSIBLE = (1.5, 4.0)


class WindowError(ValueError):
    pass


class FrozenModelMutated(RuntimeError):
    pass


@dataclass(frozen=True)
class MeasurementWindow:
    V: np.ndarray
    I: np.ndarray
    t_norm: np.ndarray

    def __post_init__(self):
        V, I, t = (np.asarray(a, dtype=np.float64) for a in (self.V, self.I, self.t_norm))
        if not (V.ndim == I.ndim == t.ndim == 1 and len(V) == len(I) == len(t)):
            raise WindowError("V, I and t_norm must be 1-D and of equal length")
        if np.any(np.diff(t) <= 0) or abs(t[0]) > 1e-9 or abs(t[-1] - 1.0) > 1e-9:
            raise WindowError("t_norm must increase strictly from 0 to 1")
        if np.any(V < V_PLAUSIBLE[0]) or np.any(V > V_PLAUSIBLE[1]):
            raise WindowError(f"voltage outside plausible range {V_PLAUSIBLE}")

    @classmethod
    def from_series(cls, series):
        return cls(series["voltage_v"], series["current_a"], series["t_norm"])

    def array(self):
        return np.stack([self.V, self.I, self.t_norm], axis=-1)


def identifier_network(k=128, seed=0):
    rng = np.random.default_rng(seed)
    l1 = (k - 2) // 2
    flat = ((l1 - 2) // 2) * 32
    layers = [Conv1d(3, 16, 3, "relu", rng=rng), MaxPool1d(2, 2), Conv1d(16, 32, 3, "relu", rng=rng),
              MaxPool1d(2, 2), Flatten(), Dense(flat, 64, "relu", rng=rng), Dense(64, 6, "sigmoid", rng=rng)]
    return Network((k, 3), layers)


def normalize_windows(windows, spec: NormalizationSpec):
    """(N, K, 3) physical [V, I, t_norm] -> network input."""
    w = np.array(windows, dtype=np.float64)
    w[..., 0] = spec.normalize("voltage", w[..., 0])
    w[..., 1] = spec.normalize("current", w[..., 1])
    return w


def reconstruct_voltage(theta_norm, I, t_norm, ensemble: SurrogateEnsemble, cell: CellParameters,
                        ocps=None, clamp=True):
    """V-hat (B, K) from normalized theta (B, 6) via the surrogate and the voltage equation.

    Returns (V, flags); flags[b] is True when the surface concentration of
    sample b had to be clamped.
    """
    ocp_neg, ocp_pos = ocps or default_ocps()
    spec = ensemble.spec
    I = np.atleast_2d(I)
    t_norm = np.atleast_2d(t_norm)
    conc = ensemble.predict_tensor(theta_norm, spec.normalize("current", I), t_norm)
    theta = T.expand_dims(denormalize_theta(theta_norm, spec), 1)
    css_n, css_p = T.value_of(conc["css_neg"]), T.value_of(conc["css_pos"])
    dn, dp = 1e-3 * cell.neg.c_s_max, 1e-3 * cell.pos.c_s_max
    flags = (np.any((css_n < dn) | (css_n > cell.neg.c_s_max - dn), axis=1)
             | np.any((css_p < dp) | (css_p > cell.pos.c_s_max - dp), axis=1))
    V = terminal_voltage(conc, theta, I, cell, ocp_neg, ocp_pos, clamp=clamp)
    return V, flags


def reconstruction_loss(V_hat, V, spec: NormalizationSpec):
    """MSE on voltage normalized over the cutoff window."""
    span = spec.span("voltage")
    return mean(((V_hat - V) * (1.0 / span)) ** 2)


class Identifier:
    def __init__(self, net: Network, spec: NormalizationSpec):
        self.net, self.spec = net, spec

    def theta_norm(self, windows):
        return T.value_of(self.net(normalize_windows(windows, self.spec)))

    def identify_batch(self, windows):
        return denormalize_theta(self.theta_norm(windows), self.spec)

    def identify(self, window: MeasurementWindow):
        return AgingParameters.from_array(self.identify_batch(window.array()[None])[0])

    def save(self, path):
        return checkpoint.save(path, self.net, TAG, self.spec.to_items())

    @classmethod
    def load(cls, path):
        _, net, norm = checkpoint.load(path, TAG)
        return cls(net, NormalizationSpec.from_items(norm))


def identify(window: MeasurementWindow, identifier: Identifier):
    return identifier.identify(window)


@dataclass(frozen=True)
class IdentSettings:
    epochs: int = 500
    batch: int = 64
    lr: float = 1e-3
    patience: int = 25
    seed: int = 0


def _batched_loss(net, windows, ensemble, cell, ocps, batch=64):
    """Mean normalized reconstruction MSE without recording a tape."""
    spec = ensemble.spec
    tot = 0.0
    for s in range(0, len(windows), batch):
        w = windows[s:s + batch]
        th = T.value_of(net(normalize_windows(w, spec)))
        V, _ = reconstruct_voltage(T.Tensor(th), w[..., 1], w[..., 2], ensemble, cell, ocps)
        tot += float(np.sum(((T.value_of(V) - w[..., 0]) / spec.span("voltage")) ** 2))
    return tot / windows[..., 0].size


def train_identifier(windows, val_windows, ensemble: SurrogateEnsemble, cell, settings: IdentSettings,
                     ocps=None, surrogate_dir=None):
    """Self-supervised training: only measured (V, I, t) windows are seen.

    ``windows`` is (N, K, 3).  When ``surrogate_dir`` is given the surrogate
    checkpoint hashes are compared before and after training.
    """
    ocps = ocps or default_ocps()
    before = ensemble.hashes(surrogate_dir) if surrogate_dir else None
    ensemble.freeze()
    snapshot = {n: [w.copy() for w in net.get_weights()] for n, net in ensemble.nets.items()}
    spec = ensemble.spec
    k = windows.shape[1]
    net = identifier_network(k, seed=settings.seed)
    ident = Identifier(net, spec)
    opt = Adam(net.params, lr=settings.lr)
    rng = np.random.default_rng(settings.seed + 1)
    x_all = normalize_windows(windows, spec)
    best, best_w, since = np.inf, net.get_weights(), 0
    report = []
    n = len(windows)
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(n)
        tot, n_clamped = 0.0, 0
        for s in range(0, n, settings.batch):
            idx = perm[s:s + settings.batch]
            w = windows[idx]
            with Tape() as tape:
                th = net(x_all[idx])
                V, flags = reconstruct_voltage(th, w[..., 1], w[..., 2], ensemble, cell, ocps)
                loss = reconstruction_loss(V, w[..., 0], spec)
            opt.step(tape.gradient(loss, net.params))
            tot += float(loss.data) * len(idx)
            n_clamped += int(flags.sum())
        train_loss = tot / n
        val = _batched_loss(net, val_windows, ensemble, cell, ocps) if len(val_windows) else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(val)):
            raise TrainingDivergence(f"identifier: non-finite loss at epoch {epoch}")
        report.append((epoch, train_loss, val, n_clamped))
        if val < best:
            best, best_w, since = val, net.get_weights(), 0
        else:
            since += 1
            if since >= settings.patience:
                break
    net.set_weights(best_w)
    for name, sub in ensemble.nets.items():
        if any(not np.array_equal(a, b) for a, b in zip(sub.get_weights(), snapshot[name])):
            raise FrozenModelMutated(f"surrogate subnetwork {name} changed during identifier training")
    if surrogate_dir and ensemble.hashes(surrogate_dir) != before:
        raise FrozenModelMutated("surrogate checkpoint files changed during identifier training")
    log.info("identifier: %d epochs, best val %.3e", len(report), best)
    return ident, report


def write_report(path, rows):
    lines = ["epoch,train_loss,val_loss,clamped_samples"]
    lines += [f"{e},{float(a)!r},{float(b)!r},{c}" for e, a, b, c in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def reconstruction_rmse(identifier: Identifier, windows, ensemble, cell, ocps=None, batch=256):
    """Per-window voltage RMSE in volts and the identified theta."""
    theta_n = np.concatenate([identifier.theta_norm(windows[s:s + batch]) for s in range(0, len(windows), batch)])
    V, _ = reconstruct_voltage(T.Tensor(theta_n), windows[..., 1], windows[..., 2], ensemble, cell, ocps)
    rmse = np.sqrt(np.mean((T.value_of(V) - windows[..., 0]) ** 2, axis=1))
    return rmse, denormalize_theta(theta_n, ensemble.spec)


# -- iterative oracle ---------------------------------------------------------------

@dataclass
class OracleResult:
    theta: AgingParameters
    rmse: float
    evaluations: int
    converged: bool
    wall_time: float
    start_thetas: list = field(default_factory=list)
    start_rmses: list = field(default_factory=list)

    def spread(self):
        """Std of each parameter over the multi-start solutions."""
        return np.std(np.array([t.as_array() for t in self.start_thetas]), axis=0)


def _reflect(u):
    """Fold R onto [0, 1] by reflection at the bounds."""
    u = np.mod(u, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


def iterative_identify_oracle(window: MeasurementWindow, cell: CellParameters, ocps=None, c_rate=None,
                              starts=5, budget=5000, seed=0, x0=None, tol_rmse=0.0, settings=None):
    """Nelder-Mead on the full-order solver over the four independent parameters.

    The two dependent stoichiometries follow from the cutoff voltages, as in
    dataset generation.  Box constraints are enforced by reflection.
    """
    ocps = ocps or default_ocps()
    if c_rate is None:
        c_rate = float(np.mean(window.I)) / cell.Q_nominal
    lo = np.array([AGING_RANGES[n][0] for n in INDEPENDENT_NAMES])
    span = np.array([AGING_RANGES[n][1] for n in INDEPENDENT_NAMES]) - lo
    k = len(window.V)
    idx = [THETA_NAMES.index(n) for n in INDEPENDENT_NAMES]
    evals = 0
    cache = {}

    def objective(u):
        nonlocal evals
        key = tuple(np.round(_reflect(u), 14))
        if key in cache:
            return cache[key]
        evals += 1
        try:
            theta = complete_theta(lo + np.array(key) * span, cell, ocps)
            rec = simulate_discharge(theta, cell, c_rate, settings=settings, ocps=ocps)
            v = resample(rec, k)["voltage_v"]
            val = float(np.sqrt(np.mean((v - window.V) ** 2)))
        except (InfeasibleSample, AbnormalDischarge, ValueError):
            val = 1.0
        cache[key] = val
        return val

    def stop_at_tol(intermediate_result):
        if intermediate_result.fun <= tol_rmse:
            raise StopIteration

    rng = np.random.default_rng(seed)
    inits = []
    if x0 is not None:
        inits.append((np.asarray(x0.as_array() if isinstance(x0, AgingParameters) else x0)[idx] - lo) / span)
    inits.append(np.full(4, 0.5))
    while len(inits) < starts:
        inits.append(rng.random(4))
    t0 = time.perf_counter()
    best_u, best_f = None, np.inf
    sols, fs = [], []
    per_start = max(budget // starts, 50)
    for u0 in inits[:starts]:
        remaining = budget - evals
        if remaining <= 0:
            break
        f0 = objective(u0)
        if f0 <= tol_rmse:
            u = np.asarray(u0, dtype=np.float64)
            f = f0
        else:
            res = minimize(objective, u0, method="Nelder-Mead", callback=stop_at_tol,
                           options={"maxfev": min(per_start, remaining), "xatol": 1e-7, "fatol": 1e-9,
                                    "initial_simplex": _simplex(u0)})
            u, f = res.x, res.fun
        sols.append(complete_theta(lo + _reflect(u) * span, cell, ocps))
        fs.append(f)
        if f < best_f:
            best_u, best_f = u, f
        if best_f <= tol_rmse:
            break
    theta = complete_theta(lo + _reflect(best_u) * span, cell, ocps)
    converged = best_f < 1.0 and evals < budget
    return OracleResult(theta, best_f, evals, converged, time.perf_counter() - t0, sols, fs)


def _simplex(u0, step=0.15):
    pts = [np.asarray(u0, dtype=np.float64)]
    for i in range(len(u0)):
        p = pts[0].copy()
        p[i] = p[i] + step if p[i] + step <= 1.0 else p[i] - step
        pts.append(p)
    return np.array(pts)
