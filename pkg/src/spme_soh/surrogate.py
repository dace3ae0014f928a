"""Hybrid-driven concentration surrogate: four independent MLPs (theta, I, t) -> c."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, checkpoint, mean
from .autodiff import tensor as T
from .autodiff.nn import mlp, time_derivative
from .autodiff.optim import Adam
from .normalization import CONCENTRATION_NAMES, NormalizationSpec
from .parameters import AgingParameters, CellParameters
from .reduced_order import electrolyte_coefficients, ode_current, solid_forcing

log = logging.getLogger(__name__)

ARCH = [8, 64, 64, 64, 1]
TAGS = {"css_neg": "surrogate_css_neg", "css_pos": "surrogate_css_pos",
        "ce0_neg": "surrogate_ce0", "ceL_pos": "surrogate_ceL"}
REPORT_COLUMNS = ("epoch", "data_loss", "phys_loss", "val_loss")
TIME_INDEX = 7


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 500
    batch: int = 256
    lr: float = 1e-3
    patience: int = 25
    seed: int = 0
    lambda_d: float = 1.0
    lambda_p: float = 0.05


def _theta_array(theta):
    if isinstance(theta, AgingParameters):
        return theta.as_array()
    return np.asarray(theta, dtype=np.float64)


def normalize_theta(theta, spec: NormalizationSpec):
    lo, span = spec.theta_lo_span()
    return (theta - lo) / span


def denormalize_theta(theta_norm, spec: NormalizationSpec):
    lo, span = spec.theta_lo_span()
    return theta_norm * span + lo


def build_inputs(theta, I, t_norm, spec: NormalizationSpec):
    """(N*K, 8) network inputs from (N, 6) theta and (N, K) current / normalized time."""
    theta = np.atleast_2d(_theta_array(theta))
    I = np.atleast_2d(I)
    t_norm = np.atleast_2d(t_norm)
    n, k = I.shape
    th = np.repeat(normalize_theta(theta, spec)[:, None, :], k, axis=1)
    x = np.concatenate([th, spec.normalize("current", I)[..., None], t_norm[..., None]], axis=-1)
    return x.reshape(n * k, 8)


def hybrid_loss(pred, target, residual=None, lambda_d=1.0, lambda_p=0.05):
    """lambda_d * MSE(pred, target) + lambda_p * mean(residual^2); returns (total, data, phys)."""
    data = mean((pred - target) ** 2)
    if residual is None or lambda_p == 0:
        return lambda_d * data, data, None
    phys = mean(residual ** 2)
    return lambda_d * data + lambda_p * phys, data, phys


class PhysicsTerms:
    """Per-row coefficients of the normalized residual r = s*dy/dtau + g*y - a.

    y is the normalized network output, tau normalized time, s = 1/t_end; r is
    in normalized concentration per second.
    """

    def __init__(self, name, theta, I, duration, cell: CellParameters, spec: NormalizationSpec,
                 pade_form="mirrored"):
        theta = np.atleast_2d(_theta_array(theta))
        n, k = np.atleast_2d(I).shape
        I = np.atleast_2d(I).reshape(-1)
        I_ode = ode_current(I)
        self.s = np.repeat(1.0 / np.asarray(duration, dtype=np.float64), k)
        lo, hi = spec.bounds(name)
        span = hi - lo
        if name in ("css_neg", "css_pos"):
            side = "neg" if name == "css_neg" else "pos"
            el = cell.electrode(side)
            eps = np.repeat(theta[:, 0 if side == "neg" else 1], k)
            a_s = 3.0 * eps / el.R_s
            sign = 1.0 if side == "neg" else -1.0
            # charge-positive convention: the negative electrode delithiates on discharge
            j_ode = sign * I_ode / (cell.A * el.L)
            self.g = 0.0
            self.a = solid_forcing(j_ode, el.R_s, a_s) / span
        else:
            co = electrolyte_coefficients(cell, pade_form)["neg" if name == "ce0_neg" else "pos"]
            self.g = co.gamma / co.beta
            self.a = (co.alpha * I_ode - co.gamma * (lo - cell.c_e0)) / (co.beta * span)
        self.s = self.s[:, None]
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1, 1)

    def subset(self, idx):
        out = object.__new__(PhysicsTerms)
        out.s, out.a = self.s[idx], self.a[idx]
        out.g = self.g
        return out

    def residual(self, y, dy):
        r = dy * self.s - self.a
        if self.g:
            r = r + y * self.g
        return r


class SurrogateEnsemble:
    def __init__(self, nets: dict, spec: NormalizationSpec):
        missing = [n for n in CONCENTRATION_NAMES if n not in nets]
        if missing:
            raise ValueError(f"ensemble missing subnetworks {missing}")
        self.nets = nets
        self.spec = spec

    def freeze(self):
        for net in self.nets.values():
            net.freeze()
        return self

    def predict_normalized(self, x):
        return {n: T.value_of(self.nets[n](x))[:, 0] for n in CONCENTRATION_NAMES}

    def predict_concentrations(self, theta, I, t_norm):
        """Four (N, K) series in mol/m^3 (or (K,) for a single theta)."""
        single = np.ndim(_theta_array(theta)) == 1
        I2 = np.atleast_2d(I)
        x = build_inputs(theta, I2, t_norm, self.spec)
        out = {}
        for n, y in self.predict_normalized(x).items():
            c = self.spec.denormalize(n, y).reshape(I2.shape)
            out[n] = c[0] if single else c
        return out

    def predict_tensor(self, theta_norm, I_norm, t_norm):
        """Differentiable path: (B, 6) normalized theta Tensor -> dict of (B, K) Tensors, mol/m^3."""
        B, K = np.shape(I_norm)
        ones = np.ones((1, K, 1))
        th = T.expand_dims(theta_norm, 1) * ones
        rest = np.stack([I_norm, t_norm], axis=-1)
        x = T.reshape(T.concatenate([th, T.Tensor(rest)], axis=2), (B * K, 8))
        out = {}
        for n in CONCENTRATION_NAMES:
            y = T.reshape(self.nets[n](x), (B, K))
            out[n] = self.spec.denormalize(n, y)
        return out

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return {n: checkpoint.save(directory / f"{TAGS[n]}.ckpt", self.nets[n], TAGS[n], self.spec.to_items())
                for n in CONCENTRATION_NAMES}

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        nets, spec = {}, None
        for n in CONCENTRATION_NAMES:
            _, net, norm = checkpoint.load(directory / f"{TAGS[n]}.ckpt", TAGS[n])
            nets[n] = net
            spec = spec or NormalizationSpec.from_items(norm)
        return cls(nets, spec)

    @staticmethod
    def paths(directory):
        return [Path(directory) / f"{TAGS[n]}.ckpt" for n in CONCENTRATION_NAMES]

    def hashes(self, directory):
        return {p.name: checkpoint.file_hash(p) for p in self.paths(directory)}


def _targets(ds, name, spec):
    return spec.normalize(name, ds.series[name]).reshape(-1, 1)


def train_subnetwork(name, x, y, phys, x_val, y_val, settings: TrainSettings, seed):
    """Adam on the hybrid loss with early stopping on validation data MSE."""
    net = mlp(ARCH, "relu", "sigmoid", seed=seed)
    opt = Adam(net.params, lr=settings.lr)
    rng = np.random.default_rng(seed + 1)
    n = len(x)
    dx_full = np.zeros((settings.batch, 8))
    dx_full[:, TIME_INDEX] = 1.0
    best, best_w, since = np.inf, net.get_weights(), 0
    report = []
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(n)
        d_sum = p_sum = 0.0
        n_b = 0
        for start in range(0, n, settings.batch):
            idx = perm[start:start + settings.batch]
            xb = x[idx]
            with Tape() as tape:
                if settings.lambda_p:
                    yb, dyb = net.forward_with_tangent(xb, dx_full[: len(idx)])
                    r = phys.subset(idx).residual(yb, dyb)
                else:
                    yb, r = net(xb), None
                total, data, ph = hybrid_loss(yb, y[idx], r, settings.lambda_d, settings.lambda_p)
            grads = tape.gradient(total, net.params)
            opt.step(grads)
            d_sum += float(data.data)
            p_sum += float(ph.data) if ph is not None else 0.0
            n_b += 1
        val = float(np.mean((T.value_of(net(x_val)) - y_val) ** 2))
        row = (epoch, d_sum / n_b, p_sum / n_b, val)
        if not all(np.isfinite(row)):
            raise TrainingDivergence(f"{name}: non-finite loss at epoch {epoch}")
        report.append(row)
        if val < best:
            best, best_w, since = val, net.get_weights(), 0
        else:
            since += 1
            if since >= settings.patience:
                break
    net.set_weights(best_w)
    log.info("surrogate %s: %d epochs, best val %.3e", name, len(report), best)
    return net, report


def train_surrogate(train, val, cell, spec, settings: TrainSettings, pade_form="mirrored", names=None):
    """Train each subnetwork on its own target; returns (ensemble, {name: report rows}).

    With a partial ``names`` list the raw {name: network} dict is returned instead.
    """
    x = build_inputs(train.theta, train.series["current_a"], train.series["t_norm"], spec)
    x_val = build_inputs(val.theta, val.series["current_a"], val.series["t_norm"], spec)
    nets, reports = {}, {}
    for i, name in enumerate(names or CONCENTRATION_NAMES):
        phys = PhysicsTerms(name, train.theta, train.series["current_a"], train.duration, cell, spec, pade_form)
        nets[name], reports[name] = train_subnetwork(
            name, x, _targets(train, name, spec), phys, x_val, _targets(val, name, spec),
            settings, settings.seed + 17 * i)
    if len(nets) < len(CONCENTRATION_NAMES):
        return nets, reports
    return SurrogateEnsemble(nets, spec), reports


def write_report(path, rows):
    lines = [",".join(REPORT_COLUMNS)]
    lines += [f"{e},{float(d)!r},{float(p)!r},{float(v)!r}" for e, d, p, v in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def ensemble_report(reports):
    """Per-epoch mean over subnetworks; a stopped subnetwork keeps its last row."""
    n_ep = max(len(r) for r in reports.values())
    rows = []
    for e in range(n_ep):
        vals = np.array([r[min(e, len(r) - 1)][1:] for r in reports.values()])
        rows.append((e + 1, *vals.mean(axis=0)))
    return rows


def concentration_rmse(ensemble, ds):
    """RMSE in mol/m^3 per concentration over every (sample, time) point."""
    pred = ensemble.predict_concentrations(ds.theta, ds.series["current_a"], ds.series["t_norm"])
    return {n: float(np.sqrt(np.mean((pred[n] - ds.series[n]) ** 2))) for n in CONCENTRATION_NAMES}


def residual_rms(ensemble, ds, cell, pade_form="mirrored"):
    """Root-mean-square normalized ODE residual of each subnetwork on ``ds``."""
    x = build_inputs(ds.theta, ds.series["current_a"], ds.series["t_norm"], ensemble.spec)
    out = {}
    for name in CONCENTRATION_NAMES:
        phys = PhysicsTerms(name, ds.theta, ds.series["current_a"], ds.duration, cell, ensemble.spec, pade_form)
        y, dy = time_derivative(ensemble.nets[name], x, TIME_INDEX)
        out[name] = float(np.sqrt(np.mean(T.value_of(phys.residual(T.value_of(y), T.value_of(dy))) ** 2)))
    return out

