"""Command-line entry point: staged pipeline plus analysis utilities.

Exit codes: 0 success, 1 usage, 2 data/schema, 3 ordering/prerequisite,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import tensor as T
from .autodiff.checkpoint import CheckpointError
from .config import PAPER_SCALE_N, RunConfig
from .dataset import DatasetError, InfeasibleSample, read_series
from .identification import FrozenModelMutated, Identifier, MeasurementWindow, WindowError, reconstruct_voltage
from .ocp import OcpTableError
from .parameters import THETA_NAMES, ConfigError
from .pipeline import Layout, PrerequisiteError, _require, evaluate_trial, gen_data, load_splits, write_metrics
from .pipeline import train_ident_stage, train_soh_stage, train_surrogate_stage
from .soh import CASES, DegenerateInput, SohHead, estimate_soh, sensitivity_analysis
from .solver import AbnormalDischarge
from .surrogate import SurrogateEnsemble, TrainingDivergence

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ORDER, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("spme_soh")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="spme-soh", description="SPMe-based aging-parameter identification and SOH estimation.")
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output root directory")
    p.add_argument("--trials", type=int, help="number of independent training trials")
    p.add_argument("--paper-scale", action="store_true", help=f"use {PAPER_SCALE_N} samples")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="simulate the Latin-hypercube dataset")
    g.add_argument("--n", type=int, help="number of parameter samples")
    g.add_argument("--c-rate", type=float, help="discharge C-rate")

    t = sub.add_parser("train", help="train one pipeline stage")
    t.add_argument("stage", choices=("surrogate", "ident", "soh"))
    t.add_argument("--trial", type=int, help="train only this trial index")

    sub.add_parser("eval", help="test-split metrics for every trial -> metrics.csv")

    for name, helptext in (("identify", "aging parameters of measured discharges -> theta.csv"),
                           ("estimate", "SOH of measured discharges -> soh.csv")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("inputs", nargs="+", type=Path, help="series CSV file(s)")
        s.add_argument("--trial", type=int, default=0)

    d = sub.add_parser("dqdv", help="incremental-capacity curves -> dqdv.csv")
    d.add_argument("--perturb", choices=CASES[1:], help="add a 10%% degradation case")
    d.add_argument("--fraction", type=float, default=0.1)
    d.add_argument("--bin-width", type=float, default=0.01, help="voltage bin, V")

    s = sub.add_parser("sensitivity", help="fresh / LAM_NE / LAM_PE / LLI comparison")
    s.add_argument("--fraction", type=float, default=0.1)
    s.add_argument("--bin-width", type=float, default=0.01)
    return p


def resolve_config(args):
    base = RunConfig()
    if args.paper_scale:
        base = replace(base, n_samples=PAPER_SCALE_N)
    cfg = RunConfig.from_file(args.config, base) if args.config else base
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.trials is not None:
        over["trials"] = args.trials
    if args.paper_scale:
        over["n_samples"] = PAPER_SCALE_N
    if getattr(args, "n", None) is not None:
        over["n_samples"] = args.n
    if getattr(args, "c_rate", None) is not None:
        over["c_rate"] = args.c_rate
    try:
        return replace(cfg, **over).validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _trials(cfg, args):
    if getattr(args, "trial", None) is not None:
        if args.trial < 0:
            raise UsageError("--trial must be >= 0")
        return [args.trial]
    return list(range(cfg.trials))


def cmd_gen_data(cfg, args, layout):
    m = gen_data(cfg, layout)
    print(f"wrote {m.n_kept} of {m.n_requested} samples to {layout.dataset} "
          f"(filtered {m.filtered_fraction:.1%})")
    if m.warning:
        print(f"warning: {m.warning}", file=sys.stderr)


def cmd_train(cfg, args, layout):
    splits = load_splits(cfg, layout)
    stage = {"surrogate": train_surrogate_stage, "ident": train_ident_stage, "soh": train_soh_stage}[args.stage]
    for i in _trials(cfg, args):
        stage(cfg, layout, i, splits)
        print(f"trained {args.stage} for trial {i} in {layout.trial(i)}")


def cmd_eval(cfg, args, layout):
    splits = load_splits(cfg, layout)
    if len(splits.test) == 0:
        raise DatasetError("empty test split")
    per_trial = [evaluate_trial(cfg, layout, i, splits) for i in range(cfg.trials)]
    write_metrics(layout.root / "metrics.csv", per_trial)
    for k in per_trial[0]:
        print(f"{k}: {np.mean([m[k] for m in per_trial]):.6g}")


def _windows(paths):
    out = []
    for p in paths:
        s = read_series(p, required=("current_a", "voltage_v", "t_norm"))
        out.append((p.stem, MeasurementWindow.from_series(s)))
    return out


def cmd_identify(cfg, args, layout):
    sdir, ipath = layout.surrogate(args.trial), layout.identifier_ckpt(args.trial)
    _require(*SurrogateEnsemble.paths(sdir), ipath)
    ens = SurrogateEnsemble.load(sdir).freeze()
    ident = Identifier.load(ipath)
    lines = ["sample_id," + ",".join(THETA_NAMES) + ",rmse_v"]
    for sid, w in _windows(args.inputs):
        th_n = ident.theta_norm(w.array()[None])
        V, _ = reconstruct_voltage(T.Tensor(th_n), w.I[None], w.t_norm[None], ens, cfg.cell)
        rmse = float(np.sqrt(np.mean((T.value_of(V)[0] - w.V) ** 2)))
        theta = ident.identify(w).as_array()
        lines.append(",".join([sid] + [repr(float(v)) for v in theta] + [repr(rmse)]))
    (layout.root / "theta.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {layout.root / 'theta.csv'}")


def cmd_estimate(cfg, args, layout):
    ipath, hpath = layout.identifier_ckpt(args.trial), layout.soh_ckpt(args.trial)
    _require(ipath, hpath)
    ident, head = Identifier.load(ipath), SohHead.load(hpath)
    lines = ["sample_id,soh_true,soh_pred,abs_err"]
    for sid, w in _windows(args.inputs):
        lines.append(f"{sid},nan,{estimate_soh(w, ident, head)!r},nan")
    (layout.root / "soh.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {layout.root / 'soh.csv'}")


def _write_dqdv(path, curves):
    lines = ["v_volts,dq_dv_ah_per_v,case_label"]
    for label, c in curves:
        lines += [f"{v!r},{q!r},{label}" for v, q in zip(c.v.tolist(), c.dq_dv.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_dqdv(cfg, args, layout):
    cases = ("fresh",) + ((args.perturb,) if args.perturb else ())
    res = sensitivity_analysis(cfg.cell, fraction=args.fraction, c_rate=cfg.c_rate, cases=cases,
                               settings=cfg.solver, k=cfg.k_points, bin_width=args.bin_width)
    _write_dqdv(layout.root / "dqdv.csv", [(c, res[c].curve) for c in cases])
    for c in cases:
        print(f"{c}: capacity {res[c].record.capacity_ah:.4f} Ah")


def cmd_sensitivity(cfg, args, layout):
    res = sensitivity_analysis(cfg.cell, fraction=args.fraction, c_rate=cfg.c_rate, settings=cfg.solver,
                               k=cfg.k_points, bin_width=args.bin_width)
    cols = ("t_s", "t_norm", "voltage_v", "css_neg", "css_pos", "ce0_neg", "ceL_pos")
    lines = ["case_label," + ",".join(cols)]
    for c, r in res.items():
        for i in range(len(r.series["t_s"])):
            lines.append(c + "," + ",".join(repr(float(r.series[k][i])) for k in cols))
    (layout.root / "sensitivity.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_dqdv(layout.root / "dqdv.csv", [(c, r.curve) for c, r in res.items()])
    for c, r in res.items():
        print(f"{c}: capacity {r.record.capacity_ah:.4f} Ah, duration {r.record.duration:.1f} s")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "identify": cmd_identify,
            "estimate": cmd_estimate, "dqdv": cmd_dqdv, "sensitivity": cmd_sensitivity}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported by argparse
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "n", None) is not None and args.n < 1:
            raise UsageError("--n must be >= 1")
        if args.trials is not None and args.trials < 1:
            raise UsageError("--trials must be >= 1")
        cfg = resolve_config(args)
        layout = Layout(args.out)
        layout.root.mkdir(parents=True, exist_ok=True)
        cfg.write(layout.root / "run.cfg")
        COMMANDS[args.command](cfg, args, layout)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PrerequisiteError as exc:
        print(f"ordering error: {exc}", file=sys.stderr)
        return EXIT_ORDER
    except (TrainingDivergence, AbnormalDischarge, FrozenModelMutated, FloatingPointError, InfeasibleSample,
            DegenerateInput) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, WindowError, CheckpointError, OcpTableError, ConfigError, FileNotFoundError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
