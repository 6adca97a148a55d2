"""Experiment execution and result bundles (CSV tables plus a JSON manifest)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, apply_sweep, load_config
from .detection import ClickRecords
from .protocol import SequenceModel, default_workers, run_pump_probe, simulate_trials
from .stats import (
    FitError,
    UndefinedEstimateError,
    UnderdeterminedFitError,
    cs_report,
    fit_decay_curve,
    fourfold_coincidences,
    g2_cross_trials,
    pump_probe_constants,
)

RECORDS_LIMIT = 5_000_000

COLUMNS = {
    "g2.csv": [
        ("point", "sweep point index"),
        ("sweep_value", "sweep value (SI units), empty without a sweep"),
        ("source", "main run, or the red-only / blue-only reference run"),
        ("pulse", "1 = preparation, 2 = measurement"),
        ("delta_N", "trial offset between detector A and detector B"),
        ("window_s", "analysis window from the pulse start, s (empty = whole pulse)"),
        ("g2", "cross-detector second-order correlation"),
        ("sigma", "bootstrap standard error"),
        ("sigma_poisson", "Poisson-propagated standard error"),
        ("g2_model", "expected value from the analytic model"),
        ("coincidences", "sum over trials of A*B clicks"),
        ("singles_A", "clicks on detector A"),
        ("singles_B", "clicks on detector B"),
        ("trials", "trials entering the estimate"),
    ],
    "cs_bound.csv": [
        ("point", ""),
        ("sweep_value", ""),
        ("pulse", ""),
        ("g2", "g2 at delta_N = 0"),
        ("g2_sigma", ""),
        ("g2_r", "red-only reference g2"),
        ("g2_b", "blue-only reference g2 (pulse 2 reuses the red reference)"),
        ("eta", "ratio parameter maximizing the classical bound"),
        ("bound", "classical bound"),
        ("bound_sigma", "propagated bound uncertainty"),
        ("violated", "1 if g2 exceeds the bound"),
        ("sigmas", "(g2 - bound) / sigma_g2"),
        ("sigmas_propagated", "(g2 - bound) / sqrt(sigma_g2^2 + bound_sigma^2)"),
    ],
    "counts.csv": [
        ("point", ""),
        ("sweep_value", ""),
        ("source", ""),
        ("pulse", ""),
        ("photons_per_trial", "signal photons before detector efficiency"),
        ("clicks_per_trial", "detector clicks (A + B) including dark counts"),
        ("photons_model", "expected photons per trial from the analytic model"),
    ],
    "fits.csv": [
        ("analysis", "windowed_decay (t_d1), delay_decay (t_d2), pump_probe_tail (t_l) or pump_probe_fast (t_s)"),
        ("point", ""),
        ("model", ""),
        ("amplitude", ""),
        ("decay_constant", "fitted time constant, s"),
        ("decay_sigma", ""),
        ("offset", ""),
        ("residual_norm", ""),
        ("n_points", ""),
        ("flags", "'degenerate' when the amplitude is not resolved"),
    ],
    "fourfold.csv": [
        ("point", ""),
        ("sweep_value", ""),
        ("pattern", "22, 20, 02, 00 (twofold click in pulse 1 / pulse 2), 2_zero, zero_2, N"),
        ("count", ""),
    ],
    "pump_probe.csv": [
        ("delay_s", "probe start after the pump end, s"),
        ("response", "probe photons per trial, p_meas * <n_m>"),
        ("occupation", "mechanical occupation at the probe"),
        ("baseline", "response without pump"),
    ],
}


def columns_help() -> str:
    out = []
    for name, cols in COLUMNS.items():
        out.append(f"{name}:")
        for col, desc in cols:
            out.append(f"  {col:<18} {desc}" if desc else f"  {col}")
    return "\n".join(out)


class RunError(RuntimeError):
    pass


class BundleError(RuntimeError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


@dataclass
class Tables:
    rows: dict[str, list[dict]] = field(default_factory=lambda: {k: [] for k in COLUMNS})
    failures: list[str] = field(default_factory=list)

    def add(self, name: str, **row) -> None:
        self.rows[name].append(row)

    def render(self, name: str) -> str:
        buf = io.StringIO()
        cols = [c for c, _ in COLUMNS[name]]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows[name]:
            w.writerow([_fmt(r.get(c)) for c in cols])
        return buf.getvalue()


def _write(path: Path, text: str) -> str:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise RunError(f"cannot write {path}: {exc.strerror}") from None
    return hashlib.sha256(text.encode()).hexdigest()


def _sources(config: ExperimentConfig, schedule):
    kw = dict(params=config.physical, heating=config.heating, detector=config.detector, mode=config.mode, dims=config.dims)
    out = {"main": SequenceModel.build(schedule=schedule, **kw)}
    if config.analysis.references:
        eff = config.analysis.reference_efficiency
        if eff is not None:
            kw["detector"] = config.detector.model_copy(update={"efficiency": eff})
        out["red"] = SequenceModel.build(schedule=schedule.single_tone("red"), **kw)
        out["blue"] = SequenceModel.build(schedule=schedule.single_tone("blue"), **kw)
    return out


def _g2(tables, records, model, point, value, source, pulse, dN, window, n_boot, seed):
    try:
        e = g2_cross_trials(records, pulse, dN, window, n_boot, seed)
    except UndefinedEstimateError as exc:
        tables.failures.append(f"g2 point={point} source={source} pulse={pulse} delta_N={dN} window={window}: {exc}")
        return None
    g_model = model.expected_g2(pulse, window) if dN == 0 else 1.0
    tables.add(
        "g2.csv", point=point, sweep_value=value, source=source, pulse=pulse, delta_N=dN, window_s=window,
        g2=e.value, sigma=e.sigma, sigma_poisson=e.sigma_poisson, g2_model=g_model,
        coincidences=e.coincidences, singles_A=e.singles_A, singles_B=e.singles_B, trials=e.trials,
    )
    return e


def _fit_row(tables, analysis, point, fit):
    tables.add("fits.csv", analysis=analysis, point=point, **{k: v for k, v in fit.as_row().items() if k != "rise_constant"})


def analyze_point(
    config: ExperimentConfig,
    tables: Tables,
    point: int,
    value,
    schedule,
    records: dict[str, ClickRecords],
    models: dict[str, SequenceModel],
    stream: int,
) -> Optional[float]:
    """Fill the tables for one sweep point; returns the pulse-2 g2 used for delay fits."""
    an = config.analysis
    seed = (config.base_seed, stream)
    win2 = schedule.tau_f
    est = {}
    for source, rec in records.items():
        model = models[source]
        for pulse in (1, 2):
            tables.add(
                "counts.csv", point=point, sweep_value=value, source=source, pulse=pulse,
                photons_per_trial=rec.emitted.get(pulse, 0) / rec.n_trials,
                clicks_per_trial=float(rec.counts(pulse).sum()) / rec.n_trials,
                photons_model=model.mean_photons(pulse),
            )
            for dN in an.delta_N:
                if dN >= rec.n_trials:
                    continue
                window = win2 if pulse == 2 else None
                e = _g2(tables, rec, model, point, value, source, pulse, dN, window, an.n_boot, seed)
                if dN == 0:
                    est[(source, pulse)] = e

    main = records["main"]
    windows = (
        config.sweep.values if config.sweep is not None and config.sweep.axis == "tau_f" else an.windows
    )
    dur2 = schedule.meas.tau_eff
    windows = [w for w in windows if w <= dur2 * (1 + 1e-12)]
    w_est = []
    for w in windows:
        if win2 is not None and abs(w - win2) < 1e-15:
            w_est.append(est.get(("main", 2)))
            continue
        w_est.append(_g2(tables, main, models["main"], point, value, "main", 2, 0, w, an.n_boot, seed))
    good = [(w, e) for w, e in zip(windows, w_est) if e is not None]
    if len(good) >= 3:
        try:
            sig = np.array([e.sigma for _, e in good])
            fit = fit_decay_curve([w for w, _ in good], [e.value for _, e in good],
                                  sig if np.all(np.isfinite(sig) & (sig > 0)) else None)
            _fit_row(tables, "windowed_decay", point, fit)
        except (FitError, UnderdeterminedFitError) as exc:
            tables.failures.append(f"windowed_decay point={point}: {exc}")

    if "red" in records and "blue" in records:
        for pulse in (1, 2):
            g = est.get(("main", pulse))
            r = est.get(("red", pulse))
            b = est.get(("blue", pulse)) if pulse == 1 else r
            if g is None or r is None or b is None:
                tables.failures.append(f"cs_bound point={point} pulse={pulse}: missing g2 estimate")
                continue
            if min(g.coincidences, r.coincidences, b.coincidences) == 0:
                tables.failures.append(f"cs_bound point={point} pulse={pulse}: an input g2 has no coincidences")
                continue
            rep = cs_report(g, r, b)
            tables.add(
                "cs_bound.csv", point=point, sweep_value=value, pulse=pulse, g2=g.value, g2_sigma=g.sigma,
                g2_r=r.value, g2_b=b.value, eta=rep.eta, bound=rep.bound, bound_sigma=rep.bound_sigma,
                violated=rep.violated, sigmas=rep.sigmas, sigmas_propagated=rep.sigmas_propagated,
            )

    ff = fourfold_coincidences(main)
    for row in ff.as_rows():
        tables.add("fourfold.csv", point=point, sweep_value=value, **row)
    e2 = est.get(("main", 2))
    return None if e2 is None else e2


def _pump_probe(config: ExperimentConfig, tables: Tables) -> None:
    delays = np.array(sorted(config.sweep.values))
    curve = run_pump_probe(config.physical, config.heating, delays, p_meas=config.schedule.p_meas)
    for d, r, n in zip(curve.delays, curve.response, curve.occupation):
        tables.add("pump_probe.csv", delay_s=d, response=r, occupation=n, baseline=curve.baseline)
    try:
        slow, fast = pump_probe_constants(delays, curve.response, curve.baseline)
        _fit_row(tables, "pump_probe_tail", 0, slow)
        _fit_row(tables, "pump_probe_fast", 0, fast)
    except (FitError, UnderdeterminedFitError) as exc:
        tables.failures.append(f"pump_probe fit: {exc}")


def run_experiment(
    config: ExperimentConfig,
    out_dir,
    keep_records: bool = False,
    workers: Optional[int] = None,
) -> dict:
    """Simulate, analyze and write the bundle; returns the manifest."""
    start = time.perf_counter()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RunError(f"cannot create {out}: {exc.strerror}") from None
    workers = default_workers() if workers is None else workers
    tables = Tables()
    files: dict[str, str] = {}
    notes: list[str] = []
    analyses: list[str] = []

    if config.sweep is not None and config.sweep.axis == "pump_delay":
        _pump_probe(config, tables)
        analyses = ["pump_probe.csv", "fits.csv"]
    else:
        axis = config.sweep.axis if config.sweep else None
        values = config.sweep.values if axis in ("delta_T", "drive_power") else (None,)
        delay_pts = []
        for i, value in enumerate(values):
            schedule = apply_sweep(config, value) if value is not None else config.schedule
            models = _sources(config, schedule)
            records = {}
            for j, (source, model) in enumerate(models.items()):
                n = config.trials if source == "main" else max(2, int(config.trials * config.analysis.reference_fraction))
                stream = 3 * i + j
                records[source] = simulate_trials(model, n, config.base_seed, workers, stream=stream)
                if keep_records:
                    if n > RECORDS_LIMIT:
                        notes.append(f"records for point {i} {source} not kept: {n} trials exceed {RECORDS_LIMIT}")
                    else:
                        name = f"records_p{i}_{source}.txt"
                        buf = io.StringIO()
                        records[source].write(buf)
                        files[name] = _write(out / name, buf.getvalue())
            e2 = analyze_point(config, tables, i, value, schedule, records, models, 3 * i)
            if axis == "delta_T" and e2 is not None:
                delay_pts.append((value, e2))
        if axis == "delta_T":
            try:
                fit = fit_decay_curve(
                    [d for d, _ in delay_pts], [e.value for _, e in delay_pts],
                    None, offset=config.analysis.thermal_floor,
                )
                _fit_row(tables, "delay_decay", -1, fit)
            except (FitError, UnderdeterminedFitError) as exc:
                tables.failures.append(f"delay_decay: {exc}")
        analyses = ["g2.csv", "counts.csv", "fourfold.csv", "fits.csv"]
        if config.analysis.references:
            analyses.append("cs_bound.csv")

    for name in analyses:
        files[name] = _write(out / name, tables.render(name))
    files["config.toml"] = _write(out / "config.toml", config.to_toml())
    results_hash = hashlib.sha256("".join(files[k] for k in sorted(files) if k.endswith(".csv")).encode()).hexdigest()
    manifest = {
        "code_version": __version__,
        "config_hash": config.digest(),
        "seed": config.base_seed,
        "trials": config.trials,
        "mode": config.mode,
        "sweep": None if config.sweep is None else {"axis": config.sweep.axis, "values": list(config.sweep.values)},
        "analyses": analyses,
        "files": files,
        "results_hash": results_hash,
        "failures": tables.failures,
        "notes": notes,
        "workers": workers,
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def analyze_bundle(bundle, out_dir=None) -> dict:
    """Recompute the tables from records kept in a bundle."""
    bundle = Path(bundle)
    missing = [n for n in ("config.toml",) if not (bundle / n).exists()]
    recs = sorted(bundle.glob("records_p*_*.txt"))
    if not recs:
        missing.append("records_p*_*.txt (run with --records keep)")
    if missing:
        raise BundleError(f"{bundle}: missing " + ", ".join(missing))
    config = load_config(bundle / "config.toml")
    out = Path(out_dir) if out_dir is not None else bundle
    out.mkdir(parents=True, exist_ok=True)
    tables = Tables()
    by_point: dict[int, dict[str, ClickRecords]] = {}
    for path in recs:
        p, source = path.stem[len("records_p"):].split("_", 1)
        by_point.setdefault(int(p), {})[source] = ClickRecords.load(path)
    axis = config.sweep.axis if config.sweep else None
    values = config.sweep.values if axis in ("delta_T", "drive_power") else (None,)
    files = {}
    for i, records in sorted(by_point.items()):
        value = values[i] if i < len(values) else None
        schedule = apply_sweep(config, value) if value is not None else config.schedule
        if "main" not in records:
            raise BundleError(f"{bundle}: point {i} has no main records")
        # same source order as the run so the tables come out identical
        models = {k: v for k, v in _sources(config, schedule).items() if k in records}
        records = {k: records[k] for k in models}
        analyze_point(config, tables, i, value, schedule, records, models, 3 * i)
    names = ["g2.csv", "counts.csv", "fourfold.csv", "fits.csv"] + (["cs_bound.csv"] if tables.rows["cs_bound.csv"] else [])
    for name in names:
        files[name] = _write(out / name, tables.render(name))
    return {"files": files, "failures": tables.failures}


REQUIRED = ("manifest.json",)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def report_bundle(bundle) -> tuple[str, bool]:
    """Human-readable summary and whether every requested analysis completed."""
    bundle = Path(bundle)
    if not bundle.is_dir():
        raise BundleError(f"{bundle}: not a directory")
    if not (bundle / "manifest.json").exists():
        raise BundleError(f"{bundle}: missing manifest.json")
    manifest = json.loads((bundle / "manifest.json").read_text(encoding="utf-8"))
    missing = [n for n in manifest.get("analyses", []) if not (bundle / n).exists()]
    if missing:
        raise BundleError(f"{bundle}: missing " + ", ".join(missing))
    lines = [
        f"bundle: {bundle}",
        f"code {manifest['code_version']}  seed {manifest['seed']}  trials {manifest['trials']}  mode {manifest['mode']}",
        f"config {manifest['config_hash'][:16]}  results {manifest['results_hash'][:16]}",
    ]
    if (bundle / "g2.csv").exists():
        lines.append("")
        lines.append("g2 (delta_N = 0)")
        for r in _read_csv(bundle / "g2.csv"):
            if r["delta_N"] == "0" and (r["window_s"] == "" or r["source"] == "main"):
                w = f" window {float(r['window_s']) * 1e9:.0f} ns" if r["window_s"] else ""
                sv = f" [{r['sweep_value']}]" if r["sweep_value"] else ""
                lines.append(
                    f"  {r['source']:<5} pulse {r['pulse']}{w}{sv}: {float(r['g2']):.3f} +/- {float(r['sigma']):.3f}"
                    f"  (model {float(r['g2_model']):.3f})"
                )
    if (bundle / "cs_bound.csv").exists():
        lines.append("")
        lines.append("classical bound")
        for r in _read_csv(bundle / "cs_bound.csv"):
            verdict = "VIOLATED" if r["violated"] == "1" else "not violated"
            sv = f" [{r['sweep_value']}]" if r["sweep_value"] else ""
            lines.append(
                f"  pulse {r['pulse']}{sv}: g2 {float(r['g2']):.3f} +/- {float(r['g2_sigma']):.3f}, bound "
                f"{float(r['bound']):.3f} (eta {float(r['eta']):.3g}) -> {verdict} by {float(r['sigmas']):.2f} sigma "
                f"({float(r['sigmas_propagated']):.2f} with bound error)"
            )
    if (bundle / "fits.csv").exists():
        rows = _read_csv(bundle / "fits.csv")
        if rows:
            lines.append("")
            lines.append("fitted time constants")
            for r in rows:
                flag = f" [{r['flags']}]" if r["flags"] else ""
                lines.append(
                    f"  {r['analysis']:<16} point {r['point']}: {float(r['decay_constant']) * 1e9:.1f} ns"
                    f" +/- {float(r['decay_sigma']) * 1e9:.1f} ns{flag}"
                )
    if (bundle / "fourfold.csv").exists():
        lines.append("")
        lines.append("fourfold coincidences (pulse 1 x pulse 2)")
        table: dict[str, dict[str, str]] = {}
        for r in _read_csv(bundle / "fourfold.csv"):
            table.setdefault(r["point"], {})[r["pattern"]] = r["count"]
        for p, t in table.items():
            lines.append(f"  point {p}: N = {t.get('N')}")
            lines.append("             pulse2=2   pulse2!=2")
            lines.append(f"  pulse1=2   {t.get('22'):>8}   {t.get('20'):>9}")
            lines.append(f"  pulse1!=2  {t.get('02'):>8}   {t.get('00'):>9}")
    failures = manifest.get("failures", [])
    if failures:
        lines.append("")
        lines.append("incomplete analyses")
        lines += [f"  {f}" for f in failures]
    return "\n".join(lines), not failures
