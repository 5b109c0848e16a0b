"""Command-line interface.

Subcommands: simulate, fit, train, predict, evaluate, export, pipeline.
Exit codes: 0 success, 1 validation error, 2 missing artifact, 3 numeric
failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, pipeline
from .fitting import default_problem, fit
from .network import CaseRecord
from .pipeline import (
    RunManifest,
    load_network,
    predict_vds,
    read_records_csv,
    read_signal_csv,
    reduced_grids,
    run_phase1,
    run_phase2,
    study_grids,
    write_records_csv,
    write_signal_csv,
)
from .simulate import SimConfig, simulate_case
from .types import (
    MissingArtifactError,
    ModelKind,
    NumericError,
    Provenance,
    SystemParams,
    TimeGrid,
    ValidationError,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with code 2
        raise ValidationError(message)


def _add_case_args(sp, required=True) -> None:
    sp.add_argument("--d", type=float, required=required, help="gap to receiver surface [um]")
    sp.add_argument("--rtx", type=float, default=0.0, help="transmitter radius [um], 0 = point")
    sp.add_argument("--rrx", type=float, required=required, help="receiver radius [um]")
    sp.add_argument("--D", type=float, dest="diff", required=required,
                    help="diffusion coefficient [um^2/s]")


def _add_sim_args(sp) -> None:
    sp.add_argument("--molecules", type=int, default=3000)
    sp.add_argument("--replications", type=int, default=50,
                    help="50 by default; pass 500 for the full-scale study")
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--t-end", type=float, default=1.0)
    sp.add_argument("--substeps", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)


def _sim_config(args) -> SimConfig:
    return SimConfig(n_molecules=args.molecules, n_replications=args.replications,
                     grid=TimeGrid(args.dt, args.t_end), seed=args.seed,
                     substep_factor=args.substeps)


def _case(args) -> SystemParams:
    return SystemParams(d=args.d, r_tx=args.rtx, r_rx=args.rrx, diff_coeff=args.diff)


def _cmd_simulate(args) -> int:
    sig = simulate_case(_case(args), _sim_config(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_signal_csv(sig, out)
    print(f"simulated {args.molecules}x{args.replications} molecules; "
          f"final fraction {sig.final_fraction:.6f} -> {out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    sig = read_signal_csv(Path(args.signal))
    result = fit(default_problem(_case(args), sig, ModelKind(args.model)))
    rec = CaseRecord(_case(args), result.model, Provenance.TDS)
    coeffs = ", ".join(f"{c:.8g}" for c in result.model.coefficients())
    print(f"fit {args.model}: b = ({coeffs}), rss = {result.rss:.6e}, "
          f"iterations = {result.n_iterations}, converged = {result.converged}")
    if args.out:
        write_records_csv([rec], Path(args.out))
    return EXIT_OK


def _cmd_train(args) -> int:
    records = read_records_csv(Path(args.records), Provenance.TDS)
    records = [r for r in records if r.output.kind is ModelKind(args.model)]
    if not records:
        raise ValidationError(f"no {args.model} records in {args.records}")
    _net, report = run_phase2(records, hidden=args.hidden, seed=args.seed,
                              out_dir=Path(args.out))
    print(f"trained {args.model} network: epochs={report.epochs}, "
          f"E_D={report.e_d:.3e}, E_W={report.e_w:.3e}, gamma={report.gamma:.2f}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    net = load_network(Path(args.network))
    if args.grid:
        tds, vds = study_grids()
        cases = (tds if args.grid == "tds" else vds).cases()
    else:
        if args.d is None or args.rrx is None or args.diff is None:
            raise ValidationError("predict needs --grid or a full --d/--rtx/--rrx/--D case")
        cases = [_case(args)]
    records = predict_vds(net, cases)
    if args.out:
        write_records_csv(records, Path(args.out))
        print(f"wrote {len(records)} predictions -> {args.out}")
    else:
        for r in records:
            coeffs = ", ".join(f"{c:.8g}" for c in r.output.coefficients())
            print(f"d={r.input.d} rtx={r.input.r_tx} rrx={r.input.r_rx} "
                  f"D={r.input.diff_coeff}: b = ({coeffs})")
    return EXIT_OK


def _load_run(run_dir: Path):
    manifest = RunManifest.load(run_dir)
    sc = manifest.sim_config
    cfg = SimConfig(n_molecules=int(sc["n_molecules"]),
                    n_replications=int(sc["n_replications"]),
                    grid=TimeGrid(float(sc["dt"]), float(sc["t_end"])),
                    seed=int(sc["seed"]), substep_factor=int(sc["substep_factor"]))
    return manifest, cfg


def _vds_artifacts(run_dir: Path, cfg) -> tuple[list, list, list]:
    fit_records: list[CaseRecord] = []
    for kind in ModelKind:
        path = run_dir / f"records_vds_{kind.value}.csv"
        if path.exists():
            fit_records.extend(read_records_csv(path, Provenance.VDS))
    if not fit_records:
        raise MissingArtifactError(f"no VDS fit records under {run_dir}")
    ann_records: list[CaseRecord] = []
    for kind in ModelKind:
        path = run_dir / f"predictions_{kind.value}.csv"
        if path.exists():
            ann_records.extend(read_records_csv(path, Provenance.ANN_PREDICTION))
    seen = []
    sims = []
    for rec in fit_records:
        cid = (rec.input.d, rec.input.r_tx, rec.input.r_rx, rec.input.diff_coeff)
        if cid in seen:
            continue
        seen.append(cid)
        key = pipeline.case_key(rec.input, cfg)
        sims.append((rec.input, read_signal_csv(run_dir / "signals" / f"sig_{key}.csv")))
    return sims, fit_records, ann_records


def _cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    manifest, cfg = _load_run(run_dir)
    sims, fit_records, ann_records = _vds_artifacts(run_dir, cfg)
    groups = analysis.evaluate_vds(sims, fit_records, ann_records, cfg)
    out = Path(args.out) if args.out else run_dir / "evaluation" / "rmse_groups.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    analysis.write_groups_csv(groups, out)
    print(f"{len(groups)} (d, r_rx) groups -> {out}")
    for g in groups:
        cells = ", ".join(f"{m}={v:.2f}" for m, v in g.mean_rmse.items())
        print(f"  d={g.d} r_rx={g.r_rx} n={g.n_cases}: {cells}")
    return EXIT_OK


def _cmd_export(args) -> int:
    run_dir = Path(args.run)
    manifest, cfg = _load_run(run_dir)
    p = _case(args)
    key = pipeline.case_key(p, cfg)
    sig_path = run_dir / "signals" / f"sig_{key}.csv"
    sim = read_signal_csv(sig_path)
    models = {}
    for kind in ModelKind:
        rec_path = run_dir / f"records_vds_{kind.value}.csv"
        if rec_path.exists():
            for rec in read_records_csv(rec_path, Provenance.VDS):
                if rec.input == p:
                    models[f"{kind.value}_fit"] = rec.output
        net_path = run_dir / f"network_{kind.value}.json"
        if net_path.exists():
            from .network import forward
            models[f"{kind.value}_ann"] = forward(load_network(net_path), p)
    out = Path(args.out) if args.out else run_dir / "exports" / f"case_{key}"
    written = analysis.export_curves(p, sim, models, out, n_emitted=cfg.n_molecules)
    print(f"exported {len(written)} files -> {out}")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    out_dir = Path(args.out)
    cfg = _sim_config(args)
    if args.grid == "full":
        tds_grid, vds_grid = study_grids()
    else:
        tds_grid, vds_grid = reduced_grids()
    kinds = [ModelKind.PRIMITIVE, ModelKind.ENHANCED] if args.model == "both" \
        else [ModelKind(args.model)]
    for kind in kinds:
        tds_records = run_phase1(tds_grid, cfg, kind, out_dir, n_workers=args.workers)
        print(f"phase1 TDS {kind.value}: {len(tds_records)} records")
        net, report = run_phase2(tds_records, hidden=args.hidden, seed=args.seed,
                                 out_dir=out_dir)
        print(f"phase2 {kind.value}: epochs={report.epochs} E_D={report.e_d:.3e}")
        vds_records = run_phase1(vds_grid, cfg, kind, out_dir, n_workers=args.workers)
        print(f"phase1 VDS {kind.value}: {len(vds_records)} records")
        predictions = predict_vds(net, [r.input for r in vds_records])
        write_records_csv(predictions, out_dir / f"predictions_{kind.value}.csv")
    sims, fit_records, ann_records = _vds_artifacts(out_dir, cfg)
    groups = analysis.evaluate_vds(sims, fit_records, ann_records, cfg)
    eval_path = out_dir / "evaluation" / "rmse_groups.csv"
    eval_path.parent.mkdir(parents=True, exist_ok=True)
    analysis.write_groups_csv(groups, eval_path)
    manifest = RunManifest.load(out_dir)
    manifest.add_stage("evaluate")
    manifest.add_artifact("rmse_groups", "evaluation/rmse_groups.csv")
    manifest.save(out_dir)
    print(f"pipeline complete: {len(groups)} RMSE groups -> {eval_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcvd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one Monte Carlo case", parents=[])
    _add_case_args(sp)
    _add_sim_args(sp)
    sp.add_argument("--out", required=True, help="output signal CSV")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("fit", help="fit model coefficients to a signal CSV")
    _add_case_args(sp)
    sp.add_argument("--signal", required=True)
    sp.add_argument("--model", choices=["primitive", "enhanced"], default="enhanced")
    sp.add_argument("--out", help="optional records CSV")
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("train", help="train a network on a records CSV")
    sp.add_argument("--records", required=True)
    sp.add_argument("--model", choices=["primitive", "enhanced"], default="enhanced")
    sp.add_argument("--hidden", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="run directory for the network artifacts")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("predict", help="predict coefficients from system parameters")
    _add_case_args(sp, required=False)
    sp.add_argument("--network", required=True)
    sp.add_argument("--grid", choices=["tds", "vds"])
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_predict)

    sp = sub.add_parser("evaluate", help="grouped RMSE tables for a pipeline run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_evaluate)

    sp = sub.add_parser("export", help="plot-ready CSV + SVG bundle for one case")
    _add_case_args(sp)
    sp.add_argument("--run", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_export)

    sp = sub.add_parser("pipeline", help="full two-phase run: simulate, fit, train, "
                                         "predict, evaluate")
    _add_sim_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--grid", choices=["reduced", "full"], default="reduced",
                    help="full runs the complete 270-case study")
    sp.add_argument("--model", choices=["primitive", "enhanced", "both"], default="both")
    sp.add_argument("--hidden", type=int, default=10)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
