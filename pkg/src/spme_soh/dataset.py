"""Latin-hypercube parameter sampling, boundary derivation and dataset files."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .electrochem import rest_voltage
from .ocp import default_ocps
from .parameters import AGING_RANGES, INDEPENDENT_NAMES, THETA_NAMES, AgingParameters, CellParameters
from .solver import AbnormalDischarge, SimRecord, SolverSettings, simulate_discharge

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("sample_id",) + THETA_NAMES + ("capacity_ah", "soh", "duration_s", "filtered")
SERIES_COLUMNS = ("t_s", "t_norm", "current_a", "voltage_v", "css_neg", "css_pos", "ce0_neg", "ceL_pos")
FILTER_WARN_FRACTION = 0.2
# search windows for the dependent stoichiometries (near-empty graphite, near-full LFP)
_X0_NEG_BRACKET = (1e-6, 0.1)
_X100_POS_BRACKET = (1e-6, 0.1)


class InfeasibleSample(ValueError):
    """No stoichiometry in the search window satisfies the cutoff voltages."""


class DatasetError(ValueError):
    pass


def _root(f, bracket, what):
    lo, hi = bracket
    flo, fhi = f(lo), f(hi)
    if not np.isfinite(flo) or not np.isfinite(fhi) or flo * fhi > 0:
        raise InfeasibleSample(f"no root for {what} in {bracket}")
    return brentq(f, lo, hi, xtol=1e-12, rtol=1e-12)


def derive_boundary_stoichiometry(eps_s_neg, eps_s_pos, x100_neg, x0_pos, cell: CellParameters,
                                  ocps=None, closure="voltage"):
    """Return (x0_neg, x100_pos) consistent with the cutoff voltages.

    ``voltage``: full-charge rest voltage = V_max fixes x100_pos and
    fully-discharged rest voltage = V_min fixes x0_neg.
    ``charge_balance``: x100_pos from V_max, then x0_neg so that both
    electrodes exchange the same amount of lithium.
    """
    u_neg, u_pos = ocps or default_ocps()
    x100_pos = _root(lambda x: float(rest_voltage(x100_neg, x, u_neg, u_pos)) - cell.V_max,
                     _X100_POS_BRACKET, "x100_pos")
    if closure == "voltage":
        x0_neg = _root(lambda x: float(rest_voltage(x, x0_pos, u_neg, u_pos)) - cell.V_min,
                       _X0_NEG_BRACKET, "x0_neg")
    elif closure == "charge_balance":
        per_x_neg = eps_s_neg * cell.neg.L * cell.neg.c_s_max
        per_x_pos = eps_s_pos * cell.pos.L * cell.pos.c_s_max
        x0_neg = x100_neg - per_x_pos * (x0_pos - x100_pos) / per_x_neg
        if not 0 < x0_neg < x100_neg:
            raise InfeasibleSample(f"charge balance puts x0_neg at {x0_neg:.4f}")
    else:
        raise ValueError(f"unknown closure {closure!r}")
    return x0_neg, x100_pos


def complete_theta(independent, cell, ocps=None, closure="voltage"):
    """AgingParameters from (eps_s_neg, eps_s_pos, x100_neg, x0_pos)."""
    en, ep, xn, xp = (float(v) for v in independent)
    x0n, x100p = derive_boundary_stoichiometry(en, ep, xn, xp, cell, ocps, closure)
    return AgingParameters(en, ep, xn, x0n, x100p, xp)


def latin_hypercube_sample(n, ranges=None, seed=0, names=INDEPENDENT_NAMES):
    """(n, d) stratified sample: one point per stratum per dimension."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ranges = ranges or AGING_RANGES
    rng = np.random.default_rng(seed)
    d = len(names)
    u = np.empty((n, d))
    for k in range(d):
        u[:, k] = (rng.permutation(n) + rng.random(n)) / n
    lo = np.array([ranges[nm][0] for nm in names], dtype=np.float64)
    hi = np.array([ranges[nm][1] for nm in names], dtype=np.float64)
    return lo + u * (hi - lo)


def resample(record: SimRecord, k=128):
    """Series on k uniform points of the record's own duration."""
    t_end = record.duration
    t = np.linspace(0.0, t_end, k)
    out = {"t_s": t, "t_norm": np.linspace(0.0, 1.0, k)}
    for col, src in (("current_a", record.I), ("voltage_v", record.V), ("css_neg", record.c_ss_neg),
                     ("css_pos", record.c_ss_pos), ("ce0_neg", record.c_e_0), ("ceL_pos", record.c_e_L)):
        out[col] = np.interp(t, record.t, src)
    return out


def _fmt(v):
    return repr(float(v))


def write_series(path, series):
    n = len(series["t_s"])
    lines = [",".join(SERIES_COLUMNS)]
    for i in range(n):
        lines.append(",".join(_fmt(series[c][i]) for c in SERIES_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_series(path, required=SERIES_COLUMNS):
    """Parse a series CSV; schema problems raise DatasetError citing the line."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}:1: empty file, expected header {','.join(SERIES_COLUMNS)}")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise DatasetError(f"{path}:1: header missing {missing}; expected {','.join(SERIES_COLUMNS)}")
        idx = {c: header.index(c) for c in header}
        cols = {c: [] for c in header}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                for c, i in idx.items():
                    cols[c].append(float(row[i]))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric value") from exc
    return {c: np.array(v) for c, v in cols.items()}


@dataclass
class DatasetManifest:
    path: Path
    n_requested: int
    n_kept: int
    filtered_fraction: float
    warning: str = ""


def build_dataset(n, out_dir, cell: CellParameters, c_rate=4.0, seed=0, k=128,
                  settings: SolverSettings | None = None, ocps=None, config_text=None):
    """Sample, simulate, filter and write ``manifest.csv`` plus ``series/*.csv``."""
    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    settings = settings or SolverSettings()
    ocps = ocps or default_ocps()
    fresh = simulate_discharge(cell.fresh_theta(), cell, c_rate, settings=settings, ocps=ocps)
    q_fresh = fresh.capacity_ah
    samples = latin_hypercube_sample(n, AGING_RANGES, seed)
    rows = [",".join(MANIFEST_COLUMNS)]
    n_bad = 0
    for i, indep in enumerate(samples):
        sid = f"s{i:05d}"
        try:
            theta = complete_theta(indep, cell, ocps)
            rec = simulate_discharge(theta, cell, c_rate, settings=settings, ocps=ocps)
        except (InfeasibleSample, AbnormalDischarge, ValueError) as exc:
            log.info("sample %s filtered: %s", sid, exc)
            n_bad += 1
            vals = [_fmt(v) for v in indep]
            rows.append(",".join([sid, vals[0], vals[1], vals[2], "", "", vals[3], "", "", "", "1"]))
            continue
        soh = rec.capacity_ah / q_fresh
        write_series(out / "series" / f"{sid}.csv", resample(rec, k))
        rows.append(",".join([sid] + [_fmt(v) for v in theta.as_array()]
                             + [_fmt(rec.capacity_ah), _fmt(soh), _fmt(rec.duration), "0"]))
    frac = n_bad / n
    rows.append(f"# filtered_fraction = {float(frac)!r}")
    rows.append(f"# fresh_capacity_ah = {float(q_fresh)!r}")
    warning = ""
    if frac > FILTER_WARN_FRACTION:
        warning = f"{n_bad} of {n} samples filtered (more than {FILTER_WARN_FRACTION:.0%})"
        rows.append(f"# warning: {warning}")
        log.warning(warning)
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    if config_text is not None:
        (out / "run.cfg").write_text(config_text, encoding="utf-8")
    return DatasetManifest(manifest, n, n - n_bad, frac, warning)


@dataclass
class Dataset:
    """In-memory view of the kept samples; series arrays are (N, K)."""
    ids: list
    theta: np.ndarray
    capacity: np.ndarray
    soh: np.ndarray
    duration: np.ndarray
    series: dict

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset([self.ids[i] for i in idx], self.theta[idx], self.capacity[idx],
                       self.soh[idx], self.duration[idx], {c: v[idx] for c, v in self.series.items()})

    def windows(self):
        """(N, K, 3) network input [V, I, t_norm] in physical units."""
        return np.stack([self.series["voltage_v"], self.series["current_a"], self.series["t_norm"]], axis=-1)


def load_dataset(path):
    path = Path(path)
    manifest = path / "manifest.csv"
    if not manifest.exists():
        raise DatasetError(f"{manifest} not found")
    lines = [ln for ln in manifest.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    if tuple(header) != MANIFEST_COLUMNS:
        raise DatasetError(f"{manifest}:1: expected header {','.join(MANIFEST_COLUMNS)}")
    ids, theta, cap, soh, dur = [], [], [], [], []
    series = {c: [] for c in SERIES_COLUMNS}
    for lineno, line in enumerate(lines[1:], 2):
        f = line.split(",")
        if len(f) != len(MANIFEST_COLUMNS):
            raise DatasetError(f"{manifest}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields")
        if f[-1] == "1":
            continue
        try:
            theta.append([float(v) for v in f[1:7]])
            cap.append(float(f[7]))
            soh.append(float(f[8]))
            dur.append(float(f[9]))
        except ValueError as exc:
            raise DatasetError(f"{manifest}:{lineno}: non-numeric value") from exc
        ids.append(f[0])
        s = read_series(path / "series" / f"{f[0]}.csv")
        for c in SERIES_COLUMNS:
            series[c].append(s[c])
    if not ids:
        raise DatasetError(f"{manifest}: no usable samples")
    lengths = {len(v) for v in series["t_s"]}
    if len(lengths) != 1:
        raise DatasetError(f"{path}: series lengths differ: {sorted(lengths)}")
    return Dataset(ids, np.array(theta), np.array(cap), np.array(soh), np.array(dur),
                   {c: np.array(v) for c, v in series.items()})


def split_indices(n, ratio=0.8, seed=0):
    """Seeded shuffle into (train, test) index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    n_train = min(max(n_train, 1), n - 1) if n > 1 else n
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
