"""Staged pipeline: dataset -> surrogate -> identifier -> SOH head -> metrics.

Directory layout under the output root::

    dataset/                 manifest.csv, series/, run.cfg
    trial<i>/surrogate/      four checkpoints, surrogate_report*.csv, run.cfg
    trial<i>/ident/          identifier.ckpt, ident_report.csv, run.cfg
    trial<i>/soh/            soh_head.ckpt, soh_report.csv, soh.csv, run.cfg
    metrics.csv, run.cfg
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import checkpoint
from .config import RunConfig
from .dataset import build_dataset, load_dataset, split_indices
from .identification import FrozenModelMutated, IdentSettings, Identifier, reconstruction_rmse, train_identifier
from .identification import write_report as write_ident_report
from .normalization import default_spec
from .ocp import default_ocps
from .parameters import THETA_NAMES
from .soh import SohHead, SohSettings, estimate_soh_batch, train_soh
from .soh import write_report as write_soh_report
from .surrogate import SurrogateEnsemble, TrainSettings, concentration_rmse, ensemble_report, train_surrogate
from .surrogate import write_report as write_surrogate_report

log = logging.getLogger(__name__)

VAL_FRACTION = 0.1


class PrerequisiteError(RuntimeError):
    """A stage was run before the stage it depends on."""


@dataclass(frozen=True)
class Layout:
    root: Path

    @property
    def dataset(self):
        return self.root / "dataset"

    def trial(self, i):
        return self.root / f"trial{i}"

    def surrogate(self, i):
        return self.trial(i) / "surrogate"

    def ident(self, i):
        return self.trial(i) / "ident"

    def identifier_ckpt(self, i):
        return self.ident(i) / "identifier.ckpt"

    def soh(self, i):
        return self.trial(i) / "soh"

    def soh_ckpt(self, i):
        return self.soh(i) / "soh_head.ckpt"


def _require(*paths):
    for p in paths:
        if not Path(p).exists():
            raise PrerequisiteError(f"missing prerequisite {p}; run the earlier stage first")


@dataclass
class Splits:
    train: object
    val: object
    test: object


def load_splits(cfg: RunConfig, layout: Layout):
    """Seeded 8:2 train/test split; a tenth of train is held out for early stopping."""
    _require(layout.dataset / "manifest.csv")
    ds = load_dataset(layout.dataset)
    seed = cfg.stage_seed("split")
    tr, te = split_indices(len(ds), cfg.split, seed)
    perm = np.random.default_rng(seed + 1).permutation(tr)
    n_val = max(1, int(round(VAL_FRACTION * len(tr)))) if len(tr) > 1 else 0
    return Splits(ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val])), ds.subset(te))


def gen_data(cfg: RunConfig, layout: Layout):
    return build_dataset(cfg.n_samples, layout.dataset, cfg.cell, c_rate=cfg.c_rate, seed=cfg.stage_seed("data"),
                         k=cfg.k_points, settings=cfg.solver, config_text=cfg.to_text())


def train_surrogate_stage(cfg: RunConfig, layout: Layout, trial=0, splits=None):
    splits = splits or load_splits(cfg, layout)
    st = cfg.surrogate
    settings = TrainSettings(st.epochs, st.batch, st.lr, st.patience, cfg.stage_seed("surrogate", trial),
                             cfg.lambda_d, cfg.lambda_p)
    spec = default_spec(cfg.cell)
    ens, reports = train_surrogate(splits.train, splits.val, cfg.cell, spec, settings)
    out = layout.surrogate(trial)
    ens.save(out)
    write_surrogate_report(out / "surrogate_report.csv", ensemble_report(reports))
    for name, rows in reports.items():
        write_surrogate_report(out / f"surrogate_report_{name}.csv", rows)
    cfg.write(out / "run.cfg")
    return ens


def train_ident_stage(cfg: RunConfig, layout: Layout, trial=0, splits=None, ocps=None):
    sdir = layout.surrogate(trial)
    _require(*SurrogateEnsemble.paths(sdir))
    splits = splits or load_splits(cfg, layout)
    ens = SurrogateEnsemble.load(sdir).freeze()
    st = cfg.ident
    settings = IdentSettings(st.epochs, st.batch, st.lr, st.patience, cfg.stage_seed("ident", trial))
    # self-supervision: only the measured windows reach the trainer
    ident, report = train_identifier(splits.train.windows(), splits.val.windows(), ens, cfg.cell, settings,
                                     ocps=ocps, surrogate_dir=sdir)
    out = layout.ident(trial)
    out.mkdir(parents=True, exist_ok=True)
    ident.save(layout.identifier_ckpt(trial))
    write_ident_report(out / "ident_report.csv", report)
    cfg.write(out / "run.cfg")
    return ident


def train_soh_stage(cfg: RunConfig, layout: Layout, trial=0, splits=None):
    ipath = layout.identifier_ckpt(trial)
    _require(*SurrogateEnsemble.paths(layout.surrogate(trial)), ipath)
    splits = splits or load_splits(cfg, layout)
    ident = Identifier.load(ipath)
    st = cfg.soh
    settings = SohSettings(st.epochs, st.batch, st.lr, st.patience, cfg.stage_seed("soh", trial))
    sur_before = {p.name: checkpoint.file_hash(p) for p in SurrogateEnsemble.paths(layout.surrogate(trial))}
    head, report = train_soh(splits.train.windows(), splits.train.soh, splits.val.windows(), splits.val.soh,
                             ident, settings, identifier_path=ipath)
    sur_after = {p.name: checkpoint.file_hash(p) for p in SurrogateEnsemble.paths(layout.surrogate(trial))}
    if sur_before != sur_after:
        raise FrozenModelMutated("surrogate checkpoints changed during SOH training")
    out = layout.soh(trial)
    out.mkdir(parents=True, exist_ok=True)
    head.save(layout.soh_ckpt(trial))
    write_soh_report(out / "soh_report.csv", report)
    write_soh_csv(out / "soh.csv", splits.test.ids, splits.test.soh,
                  estimate_soh_batch(splits.test.windows(), ident, head))
    cfg.write(out / "run.cfg")
    return head


def write_soh_csv(path, ids, soh_true, soh_pred):
    lines = ["sample_id,soh_true,soh_pred,abs_err"]
    for sid, a, b in zip(ids, soh_true, soh_pred):
        lines.append(f"{sid},{float(a)!r},{float(b)!r},{abs(float(a) - float(b))!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rmse(a, b, axis=None):
    return np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2, axis=axis))


def evaluate_trial(cfg: RunConfig, layout: Layout, trial=0, splits=None, ocps=None, timing_reps=50):
    """Test-split metrics for one trial as an ordered {metric: value} dict."""
    _require(*SurrogateEnsemble.paths(layout.surrogate(trial)), layout.identifier_ckpt(trial), layout.soh_ckpt(trial))
    splits = splits or load_splits(cfg, layout)
    ocps = ocps or default_ocps()
    test = splits.test
    ens = SurrogateEnsemble.load(layout.surrogate(trial)).freeze()
    ident = Identifier.load(layout.identifier_ckpt(trial))
    head = SohHead.load(layout.soh_ckpt(trial))
    w = test.windows()
    m = {}
    for name, v in concentration_rmse(ens, test).items():
        m[f"rmse_{name}_mol_m3"] = v
    v_rmse, theta_hat = reconstruction_rmse(ident, w, ens, cfg.cell, ocps)
    m["rmse_voltage_v"] = float(np.mean(v_rmse))
    for j, name in enumerate(THETA_NAMES):
        m[f"rmse_{name}"] = float(_rmse(theta_hat[:, j], test.theta[:, j]))
    soh_pred = estimate_soh_batch(w, ident, head)
    m["rmse_soh"] = float(_rmse(soh_pred, test.soh))
    m["max_abs_err_soh"] = float(np.max(np.abs(soh_pred - test.soh)))
    one = w[:1]
    estimate_soh_batch(one, ident, head)  # warm-up
    t0 = time.perf_counter()
    for _ in range(timing_reps):
        estimate_soh_batch(one, ident, head)
    m["latency_identify_estimate_s"] = (time.perf_counter() - t0) / timing_reps
    m["flops_identify_estimate"] = float(ident.net.flops() + head.net.flops())
    return m


def write_metrics(path, per_trial):
    """Long-format metrics: one row per (trial, metric) plus the across-trial mean."""
    names = list(per_trial[0].keys())
    lines = ["trial,metric,value"]
    for i, m in enumerate(per_trial):
        lines += [f"{i},{k},{m[k]!r}" for k in names]
    lines += [f"mean,{k},{float(np.mean([m[k] for m in per_trial]))!r}" for k in names]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_all(cfg: RunConfig, root, trials=None, skip_existing=True):
    """Every stage for every trial, reusing finished artifacts when asked."""
    layout = Layout(Path(root))
    layout.root.mkdir(parents=True, exist_ok=True)
    if not (skip_existing and (layout.dataset / "manifest.csv").exists()):
        gen_data(cfg, layout)
    splits = load_splits(cfg, layout)
    per_trial = []
    for i in range(trials if trials is not None else cfg.trials):
        if not (skip_existing and all(p.exists() for p in SurrogateEnsemble.paths(layout.surrogate(i)))):
            train_surrogate_stage(cfg, layout, i, splits)
        if not (skip_existing and layout.identifier_ckpt(i).exists()):
            train_ident_stage(cfg, layout, i, splits)
        if not (skip_existing and layout.soh_ckpt(i).exists()):
            train_soh_stage(cfg, layout, i, splits)
        per_trial.append(evaluate_trial(cfg, layout, i, splits))
    write_metrics(layout.root / "metrics.csv", per_trial)
    cfg.write(layout.root / "run.cfg")
    return per_trial

