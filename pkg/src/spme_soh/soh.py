"""SOH regression head on identified parameters, plus dQ/dV sensitivity tools."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import Tape, checkpoint, mean
from .autodiff import tensor as T
from .autodiff.nn import Network, mlp
from .autodiff.optim import Adam
from .dataset import resample
from .identification import FrozenModelMutated, Identifier, MeasurementWindow
from .normalization import NormalizationSpec
from .ocp import default_ocps
from .parameters import AgingParameters, CellParameters
from .solver import SimRecord, SolverSettings, simulate_discharge
from .surrogate import TrainingDivergence, normalize_theta

log = logging.getLogger(__name__)

TAG = "soh_head"
ARCH = [6, 64, 32, 1]
CASES = ("fresh", "lam_ne", "lam_pe", "lli")


class DegenerateInput(ValueError):
    pass


class SohHead:
    def __init__(self, net: Network, spec: NormalizationSpec):
        self.net, self.spec = net, spec

    def predict_norm(self, theta_norm):
        return T.value_of(self.net(np.atleast_2d(theta_norm)))[:, 0]

    def predict(self, theta):
        return self.predict_norm(normalize_theta(np.atleast_2d(theta), self.spec))

    def save(self, path):
        return checkpoint.save(path, self.net, TAG, self.spec.to_items())

    @classmethod
    def load(cls, path):
        _, net, norm = checkpoint.load(path, TAG)
        return cls(net, NormalizationSpec.from_items(norm))


def soh_network(seed=0):
    return mlp(ARCH, "relu", "sigmoid", seed=seed)


def estimate_soh(window: MeasurementWindow, identifier: Identifier, head: SohHead):
    return float(head.predict_norm(identifier.theta_norm(window.array()[None]))[0])


def estimate_soh_batch(windows, identifier: Identifier, head: SohHead):
    return head.predict_norm(identifier.theta_norm(windows))


@dataclass(frozen=True)
class SohSettings:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    patience: int = 25
    seed: int = 0


def train_soh(windows, soh, val_windows, val_soh, identifier: Identifier, settings: SohSettings,
              identifier_path=None):
    """Fit the head on theta-hat from the frozen identifier; only the head is updated."""
    before = checkpoint.file_hash(identifier_path) if identifier_path else None
    identifier.net.freeze()
    snapshot = identifier.net.get_weights()
    x = identifier.theta_norm(windows)
    x_val = identifier.theta_norm(val_windows) if len(val_windows) else x
    y = np.asarray(soh, dtype=np.float64).reshape(-1, 1)
    y_val = np.asarray(val_soh, dtype=np.float64).reshape(-1, 1) if len(val_windows) else y
    net = soh_network(settings.seed)
    opt = Adam(net.params, lr=settings.lr)
    rng = np.random.default_rng(settings.seed + 1)
    best, best_w, since = np.inf, net.get_weights(), 0
    report = []
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(len(x))
        tot = 0.0
        for s in range(0, len(x), settings.batch):
            idx = perm[s:s + settings.batch]
            with Tape() as tape:
                loss = mean((net(x[idx]) - y[idx]) ** 2)
            opt.step(tape.gradient(loss, net.params))
            tot += float(loss.data) * len(idx)
        val = float(np.mean((T.value_of(net(x_val)) - y_val) ** 2))
        if not (np.isfinite(tot) and np.isfinite(val)):
            raise TrainingDivergence(f"soh head: non-finite loss at epoch {epoch}")
        report.append((epoch, tot / len(x), val))
        if val < best:
            best, best_w, since = val, net.get_weights(), 0
        else:
            since += 1
            if since >= settings.patience:
                break
    net.set_weights(best_w)
    if any(not np.array_equal(a, b) for a, b in zip(identifier.net.get_weights(), snapshot)):
        raise FrozenModelMutated("identifier weights changed during SOH training")
    if identifier_path and checkpoint.file_hash(identifier_path) != before:
        raise FrozenModelMutated("identifier checkpoint changed during SOH training")
    log.info("soh head: %d epochs, best val mse %.3e", len(report), best)
    return SohHead(net, identifier.spec), report


def write_report(path, rows):
    lines = ["epoch,train_loss,val_loss"] + [f"{e},{float(a)!r},{float(b)!r}" for e, a, b in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- incremental capacity --------------------------------------------------------

@dataclass(frozen=True)
class DqDvCurve:
    v: np.ndarray  # bin centres, V
    dq_dv: np.ndarray  # Ah/V
    dq: np.ndarray  # Ah per bin

    @property
    def total(self):
        return float(self.dq.sum())


def coulomb_count(t, I):
    """Cumulative charge in Ah by trapezoidal integration."""
    return np.concatenate([[0.0], np.cumsum(0.5 * (I[1:] + I[:-1]) * np.diff(t))]) / 3600.0


def dqdv_curve(record: SimRecord, bin_width=0.01):
    """Charge per fixed-width voltage bin; each step's charge goes to the bin of its mean voltage."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    q = coulomb_count(record.t, record.I)
    v_mid = 0.5 * (record.V[1:] + record.V[:-1])
    dq = np.diff(q)
    lo = np.floor(v_mid.min() / bin_width) * bin_width
    n_bins = int(np.ceil((v_mid.max() - lo) / bin_width - 1e-12))
    n_bins = max(n_bins, 1)
    which = np.minimum(((v_mid - lo) / bin_width).astype(int), n_bins - 1)
    sums = np.bincount(which, weights=dq, minlength=n_bins)
    if n_bins < 3:
        raise DegenerateInput(f"voltage span covers only {n_bins} bin(s) of {bin_width} V")
    centres = lo + (np.arange(n_bins) + 0.5) * bin_width
    return DqDvCurve(centres, sums / bin_width, sums)


# -- local sensitivity ---------------------------------------------------------

def perturbed_theta(case, cell: CellParameters, fraction=0.1):
    base = cell.fresh_theta()
    if case == "fresh":
        return base
    if case == "lam_ne":
        return replace(base, eps_s_neg=base.eps_s_neg * (1 - fraction))
    if case == "lam_pe":
        return replace(base, eps_s_pos=base.eps_s_pos * (1 - fraction))
    if case == "lli":
        # shrink the cyclable window: the lithium removed from the full negative
        # electrode is matched by the same amount on the positive side
        x100_neg = base.x100_neg * (1 - fraction)
        per_n = base.eps_s_neg * cell.neg.L * cell.neg.c_s_max
        per_p = base.eps_s_pos * cell.pos.L * cell.pos.c_s_max
        x100_pos = base.x100_pos + per_n * (base.x100_neg - x100_neg) / per_p
        return replace(base, x100_neg=x100_neg, x100_pos=x100_pos)
    raise ValueError(f"unknown case {case!r}; expected one of {CASES}")


@dataclass
class SensitivityCase:
    label: str
    theta: AgingParameters
    record: SimRecord
    series: dict
    curve: DqDvCurve


def sensitivity_analysis(cell: CellParameters, ocps=None, fraction=0.1, c_rate=4.0, cases=CASES,
                         settings: SolverSettings | None = None, k=128, bin_width=0.01):
    ocps = ocps or default_ocps()
    out = {}
    for case in cases:
        theta = perturbed_theta(case, cell, fraction)
        rec = simulate_discharge(theta, cell, c_rate, settings=settings, ocps=ocps)
        out[case] = SensitivityCase(case, theta, rec, resample(rec, k), dqdv_curve(rec, bin_width))
    return out
