"""Evaluation of the modeling methods against simulation: per-case RMSE in
molecules, grouped means over (d, r_rx), SIR comparisons, and plot-ready
exports (CSV plus static SVG charts)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import sample_model, sample_point_formula, sir_curve
from .network import CaseRecord
from .pipeline import _fmt, _atomic_write
from .simulate import SimConfig
from .svg import line_chart
from .types import (
    MissingArtifactError,
    ModelKind,
    ModelParams,
    ReceivedSignal,
    SystemParams,
    ValidationError,
)

__all__ = [
    "METHODS",
    "RmseGroup",
    "rmse",
    "evaluate_vds",
    "export_curves",
    "sir_vs_reference",
    "spearman",
]

# method labels used in group tables and export file names
METHODS = ("point_formula", "primitive_fit", "enhanced_fit",
           "primitive_ann", "enhanced_ann")


def rmse(signal_a: ReceivedSignal, signal_b: ReceivedSignal, n_emitted: int) -> float:
    """Root mean squared deviation in molecule counts over the shared grid."""
    if signal_a.grid != signal_b.grid:
        raise ValidationError("rmse requires signals on identical grids")
    diff = n_emitted * (signal_a.cumulative_fraction - signal_b.cumulative_fraction)
    return float(np.sqrt(np.mean(diff * diff)))


def sir_vs_reference(sig: ReceivedSignal, reference_end: float) -> np.ndarray:
    """SIR with the interference denominator taken from another curve's final
    value; bins whose denominator is not positive get the +inf sentinel."""
    if reference_end <= 0:
        raise ValidationError("reference end value must be > 0")
    f = sig.cumulative_fraction
    denom = reference_end - f
    out = np.full_like(f, np.inf)
    ok = denom > 0
    out[ok] = f[ok] / denom[ok]
    return out


@dataclass
class RmseGroup:
    d: float
    r_rx: float
    n_cases: int
    mean_rmse: dict[str, float]


def _case_id(p: SystemParams) -> tuple[float, float, float, float]:
    return (p.d, p.r_tx, p.r_rx, p.diff_coeff)


def _records_by_case(records: list[CaseRecord]) -> dict[tuple, dict[ModelKind, ModelParams]]:
    table: dict[tuple, dict[ModelKind, ModelParams]] = {}
    for rec in records:
        table.setdefault(_case_id(rec.input), {})[rec.output.kind] = rec.output
    return table


def evaluate_vds(vds_sims: list[tuple[SystemParams, ReceivedSignal]],
                 fit_records: list[CaseRecord],
                 ann_records: list[CaseRecord],
                 cfg: SimConfig) -> list[RmseGroup]:
    """Per-case RMSE of every available method against simulation, averaged
    into (d, r_rx) groups.

    RMSE is reported in molecules per emission (fraction error times the
    per-emission molecule count). Cases missing from either record set are
    enumerated in one error.
    """
    fits = _records_by_case(fit_records)
    anns = _records_by_case(ann_records)
    methods_present = set()
    per_case: dict[tuple, dict[str, float]] = {}
    missing: list[str] = []
    for p, sim in vds_sims:
        cid = _case_id(p)
        row: dict[str, float] = {}
        point = sample_point_formula(p, sim.grid)
        row["point_formula"] = rmse(sim, point, cfg.n_molecules)
        for label, source in (("fit", fits.get(cid, {})), ("ann", anns.get(cid, {}))):
            for kind, name in ((ModelKind.PRIMITIVE, "primitive"), (ModelKind.ENHANCED, "enhanced")):
                if kind in source:
                    curve = sample_model(p, source[kind], sim.grid)
                    row[f"{name}_{label}"] = rmse(sim, curve, cfg.n_molecules)
        if len(fits.get(cid, {})) == 0 and fit_records:
            missing.append(f"fit records missing for case {cid}")
        if len(anns.get(cid, {})) == 0 and ann_records:
            missing.append(f"ann records missing for case {cid}")
        methods_present.update(row)
        per_case[cid] = row
    if missing:
        raise MissingArtifactError("; ".join(missing))

    groups: dict[tuple[float, float], list[dict[str, float]]] = {}
    for (d, _rtx, r_rx, _dc), row in per_case.items():
        groups.setdefault((d, r_rx), []).append(row)
    out = []
    for (d, r_rx) in sorted(groups):
        rows = groups[(d, r_rx)]
        means = {}
        for m in METHODS:
            vals = [row[m] for row in rows if m in row]
            if vals:
                means[m] = float(np.mean(vals))
        out.append(RmseGroup(d=d, r_rx=r_rx, n_cases=len(rows), mean_rmse=means))
    return out


def groups_csv_text(groups: list[RmseGroup]) -> str:
    lines = ["d_um,rrx_um,n_cases," + ",".join(METHODS)]
    for g in groups:
        cells = [_fmt(g.d), _fmt(g.r_rx), str(g.n_cases)]
        cells += [(_fmt(g.mean_rmse[m]) if m in g.mean_rmse else "") for m in METHODS]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_groups_csv(groups: list[RmseGroup], path: Path) -> None:
    _atomic_write(Path(path), groups_csv_text(groups))


def export_curves(p: SystemParams, sim: ReceivedSignal,
                  models: dict[str, ModelParams], out_dir: Path,
                  n_emitted: int = 3000) -> list[Path]:
    """Write per-method signal and SIR CSVs plus combined SVG charts for one
    case. SIR files come in two variants: each curve against its own final
    value, and against the simulation's final value. Output is byte-stable:
    re-exporting produces identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    times = sim.grid.times()
    curves: dict[str, ReceivedSignal] = {"simulation": sim}
    curves["point_formula"] = sample_point_formula(p, sim.grid)
    for name, m in models.items():
        curves[name] = sample_model(p, m, sim.grid)

    written: list[Path] = []

    def put(path: Path, header: str, values: np.ndarray) -> None:
        lines = [header]
        lines += [f"{_fmt(t)},{_fmt(v)}" for t, v in zip(times, values)]
        _atomic_write(path, "\n".join(lines) + "\n")
        written.append(path)

    sim_end = sim.final_fraction
    signal_series = []
    sir_own_series = []
    sir_vs_sim_series = []
    for name, sig in curves.items():
        put(out_dir / f"signal_{name}.csv", "time_s,cumulative_fraction",
            sig.cumulative_fraction)
        sir_own = sir_curve(sig)
        put(out_dir / f"sir_own_{name}.csv", "time_s,sir", sir_own)
        sir_ref = sir_vs_reference(sig, sim_end)
        put(out_dir / f"sir_vs_sim_{name}.csv", "time_s,sir", sir_ref)
        molecules = n_emitted * sig.cumulative_fraction
        signal_series.append((name, times, molecules))
        sir_own_series.append((name, times, sir_own))
        sir_vs_sim_series.append((name, times, sir_ref))

    chart_sig = out_dir / "received_signal.svg"
    line_chart(signal_series, title=f"Received signal (d={p.d} um)",
               x_label="time [s]", y_label="molecules received", path=chart_sig)
    written.append(chart_sig)
    chart_sir = out_dir / "sir.svg"
    line_chart(sir_own_series, title=f"SIR, own end value (d={p.d} um)",
               x_label="time [s]", y_label="SIR", path=chart_sir)
    written.append(chart_sir)
    chart_sir2 = out_dir / "sir_vs_sim.svg"
    line_chart(sir_vs_sim_series, title=f"SIR vs simulation end (d={p.d} um)",
               x_label="time [s]", y_label="SIR", path=chart_sir2)
    written.append(chart_sir2)
    return written


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValidationError("spearman needs two equal-length sequences, n >= 2")

    def ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="stable")
        r = np.empty(v.size)
        r[order] = np.arange(1, v.size + 1, dtype=float)
        for val in np.unique(v):
            mask = v == val
            if np.count_nonzero(mask) > 1:
                r[mask] = r[mask].mean()
        return r

    rx = ranks(x)
    ry = ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        return 0.0
    return float((rx @ ry) / denom)
