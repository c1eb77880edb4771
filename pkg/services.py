"""
Orchestration layer - turns a RunConfig into a simulation and its output files.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

import storage
from diagnostics import (
    DecayFitError,
    DiagnosticRecord,
    InconsistentRecordError,
    boussinesq_profiles,
    build_record,
    center_of_mass,
    check_record,
    fit_decay_exponent,
    mass,
    sqg_profile,
    theorem_exponents,
)
from evolution import (
    ModelParams,
    SimState,
    SimulationError,
    band_limited_random,
    dipole,
    gaussian_bump,
    initial_state,
    lowest_shell_fraction,
    max_velocity,
    run,
)
from models import ConfigError, InitialCondition, RunConfig, config_to_text, parse_config
from spectral_core import GridSpec, ScalarField

__version__ = "0.1.0"

logger = logging.getLogger(__name__)

FIT_TARGETS = ("l1", "l2", "linf", "weighted_l2_2", "profile_err_l1", "profile_err_l2")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


@dataclass
class ExperimentResult:
    """Where a run wrote its files, and what it measured."""
    output_dir: Path
    series: Dict[str, List[DiagnosticRecord]]
    fits: List[dict]
    final: SimState


# --- Initial data ---

def build_initial_field(ic: InitialCondition, grid: GridSpec) -> ScalarField:
    """Sample one built-in initial-condition family on the grid."""
    if ic.family == "gaussian":
        return gaussian_bump(grid, ic.amplitude, ic.sigma, ic.center)
    if ic.family == "dipole":
        return dipole(grid, ic.amplitude, ic.sigma, ic.center)
    if ic.family == "random":
        return band_limited_random(grid, ic.seed, ic.amplitude, ic.k_cut, ic.mean_zero)
    if ic.family == "zero":
        return ScalarField.zeros(grid)
    raise ValueError(f"family {ic.family!r} is not sampled on a grid")


def build_initial_state(cfg: RunConfig, params: ModelParams) -> SimState:
    """Initial SimState; a snapshot ic resumes the stored state and time."""
    if cfg.ic.family == "snapshot":
        state = storage.read_snapshot(cfg.ic.path, expected=params)
        logger.info("resuming from %s at time %.6g", cfg.ic.path, state.time)
        return state
    fields = {params.transported: build_initial_field(cfg.ic, params.grid)}
    if params.is_boussinesq and cfg.theta_ic is not None:
        if cfg.theta_ic.family == "snapshot":
            raise ConfigError("theta_ic_family = snapshot is not supported; use ic_family = snapshot")
        fields["theta"] = build_initial_field(cfg.theta_ic, params.grid)
    return initial_state(params, fields)


# --- Observers ---

def _profile_center(initial: SimState, params: ModelParams) -> Tuple[float, float]:
    """Center of mass of the field carrying the leading profile, fixed at the start."""
    names = ("theta", "w") if params.is_boussinesq else ("z",)
    for name in names:
        f = initial.real(name)
        if mass(f) != 0:
            return center_of_mass(f)
    return (0.0, 0.0)


def make_observer(cfg: RunConfig, params: ModelParams,
                  initial: SimState) -> Callable[[SimState], Dict[str, DiagnosticRecord]]:
    """
    Observer producing one DiagnosticRecord per field.

    Physical runs compare against the profile built from the initial masses;
    scaled runs against the profile with the current masses at t = 0, centered
    where the drift has carried the initial center.
    """
    alpha = params.alpha
    center0 = _profile_center(initial, params)
    masses0 = {name: mass(initial.real(name)) for name in params.field_names}
    t0 = initial.time

    def profiles(state: SimState, reals: Dict[str, ScalarField]) -> Dict[str, Optional[ScalarField]]:
        if not cfg.profile_errors:
            return {name: None for name in reals}
        if params.is_scaled:
            shrink = math.exp(-(state.time - t0) / alpha)
            center = (center0[0] * shrink, center0[1] * shrink)
            t = 0.0
            current = {name: mass(f) for name, f in reals.items()}
        else:
            center, t, current = center0, state.time, masses0
        if not params.is_boussinesq:
            return {"z": sqg_profile(params.grid, t, current["z"], alpha, center)}
        gamma1, gamma2 = current["w"], current["theta"]
        w_prof, theta_prof = boussinesq_profiles(params.grid, t, gamma1, gamma2, alpha, center)
        if cfg.profile_order == 1:
            w_prof, _ = boussinesq_profiles(params.grid, t, gamma1, 0.0, alpha, center)
        return {"w": w_prof, "theta": theta_prof}

    def observe(state: SimState) -> Dict[str, DiagnosticRecord]:
        reals = {name: state.real(name) for name in params.field_names}
        aux = {"u_max": max_velocity(state, params),
               "low_shell_frac": lowest_shell_fraction(state, params)}
        out = {}
        for name, prof in profiles(state, reals).items():
            record = build_record(reals[name], state.time, prof, aux)
            check_record(record)
            out[name] = record
        logger.debug("t=%.6g %s", state.time,
                     {k: r.lp_norms["2"] for k, r in out.items()})
        return out

    return observe


# --- Fits ---

def fit_records(times: List[float], columns: Dict[str, List[float]], variant: str, alpha: float,
                beta: float, field_name: str, mode: Optional[str] = None) -> List[dict]:
    """One fit row per tracked column; failed fits keep their reason in status."""
    mode = mode or ("tau" if variant.endswith("scaled") else "log1p_t")
    expected = theorem_exponents(alpha, beta, variant, field_name)
    rows = []
    for column in FIT_TARGETS:
        values = columns.get(column, [])
        row = {"field": field_name, "column": column, "expected": expected.get(column, float("nan"))}
        if not values or all(np.isnan(values)):
            row["status"] = "no data"
            rows.append(row)
            continue
        try:
            fit = fit_decay_exponent(zip(times, values), mode=mode)
        except DecayFitError as e:
            row["status"] = str(e)
        else:
            row.update(exponent=fit.exponent, intercept=fit.intercept, r_squared=fit.r_squared,
                       t_min=fit.window[0], t_max=fit.window[1], status="ok")
        rows.append(row)
    return rows


def _series_columns(records: List[DiagnosticRecord]) -> Tuple[List[float], Dict[str, List[float]]]:
    rows = [r.as_row() for r in records]
    times = [row["time"] for row in rows]
    return times, {c: [row[c] for row in rows] for c in FIT_TARGETS}


def fit_series_file(path: Path, mode: Optional[str] = None) -> List[dict]:
    """Re-fit a written series CSV; run metadata next to it supplies variant and exponents."""
    path = Path(path)
    rows = storage.read_series_csv(path)
    meta_path = path.parent / "meta.txt"
    meta = storage.read_meta(meta_path) if meta_path.exists() else {}
    variant = meta.get("variant", "sqg_scaled" if mode == "tau" else "sqg_physical")
    alpha = float(meta.get("alpha", "nan"))
    beta = float(meta.get("beta", "1.0"))
    if path.name == "series_theta.csv":
        field_name = "theta"
    else:
        field_name = "w" if variant.startswith("boussinesq") else "z"
    times = [row["time"] for row in rows]
    columns = {c: [row[c] for row in rows] for c in FIT_TARGETS}
    return fit_records(times, columns, variant, alpha, beta, field_name, mode)


# --- Experiments ---

def resolve_output_dir(cfg: RunConfig, output_root: Optional[Path] = None) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(output_root or storage.OUTPUT_ROOT) / cfg.label


def _segment_ends(cfg: RunConfig, start: float) -> List[float]:
    """Snapshot times after the start, then the end time."""
    ends = sorted({t for t in cfg.snapshot_times if t > start})
    if not ends or ends[-1] < cfg.end_time:
        ends.append(cfg.end_time)
    return ends


def run_experiment(cfg: RunConfig, output_root: Optional[Path] = None) -> ExperimentResult:
    """
    Run one configured experiment and write its files.

    Writes series.csv (series_theta.csv too for Boussinesq), fit.csv,
    meta.txt and snapshots at the configured times. On failure a FAILED
    sentinel with the message is left in the output directory and the error
    propagates.
    """
    out_dir = resolve_output_dir(cfg, output_root)
    out_dir.mkdir(parents=True, exist_ok=True)
    storage.clear_failed(out_dir)
    config_text = config_to_text(cfg)
    storage.write_meta(out_dir / "meta.txt", config_text,
                       {"code_version": __version__, "status": "running"})
    try:
        params = cfg.model_params()
        state = build_initial_state(cfg, params)
        observer = make_observer(cfg, params, state)
        series: Dict[str, List[DiagnosticRecord]] = {name: [] for name in params.field_names}

        for end in _segment_ends(cfg, state.time):
            result = run(params, state, end, cfg.dt, cfg.cadence, observer)
            for records in result.records:
                for name, record in records.items():
                    # chained segments observe their shared endpoint twice
                    if series[name] and series[name][-1].time == record.time:
                        continue
                    series[name].append(record)
            state = result.final
            if any(abs(state.time - t) <= 1e-9 * max(1.0, t) for t in cfg.snapshot_times):
                storage.write_snapshot(state, params, out_dir / storage.snapshot_name(state.time))

        fits = []
        for name, records in series.items():
            filename = "series_theta.csv" if name == "theta" else "series.csv"
            storage.write_series_csv(out_dir / filename, records)
            times, columns = _series_columns(records)
            fits.extend(fit_records(times, columns, cfg.variant, cfg.alpha, cfg.beta, name))
        storage.write_fit_csv(out_dir / "fit.csv", fits)
    except (SimulationError, FloatingPointError, ValueError, OSError) as e:
        storage.mark_failed(out_dir, f"{type(e).__name__}: {e}")
        logger.error("run %s failed: %s", cfg.label, e)
        raise

    storage.write_meta(out_dir / "meta.txt", config_text,
                       {"code_version": __version__, "status": "ok"})
    logger.info("run %s written to %s", cfg.label, out_dir)
    return ExperimentResult(output_dir=out_dir, series=series, fits=fits, final=state)


def exit_code_for(error: BaseException) -> int:
    """Validation problems map to 2, numerical failures to 3."""
    if isinstance(error, (SimulationError, FloatingPointError, InconsistentRecordError)):
        return EXIT_NUMERICAL
    if isinstance(error, (ConfigError, ValidationError, ValueError, OSError)):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def run_config_file(path: str, output_root: Optional[str] = None) -> Tuple[str, int, str]:
    """Parse and run one config file; returns (path, exit code, message). Safe for worker processes."""
    try:
        cfg = parse_config(Path(path).read_text(encoding="utf-8"))
        result = run_experiment(cfg, Path(output_root) if output_root else None)
    except Exception as e:  # reported per config, never raised across the pool
        return path, exit_code_for(e), f"{type(e).__name__}: {e}"
    return path, EXIT_OK, str(result.output_dir)


def run_many(paths: List[str], jobs: int = 1, output_root: Optional[str] = None) -> List[Tuple[str, int, str]]:
    """Run independent configs, in a process pool when jobs > 1; results keep input order."""
    if jobs <= 1 or len(paths) <= 1:
        return [run_config_file(p, output_root) for p in paths]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_config_file, paths, [output_root] * len(paths)))


# --- Presets ---

PRESETS: Dict[str, str] = {
    "smoke": """
        variant = sqg_physical
        alpha = 1.5
        beta = 1.0
        n = 64
        box = 32.0
        dt = 0.05
        t_end = 2.0
        cadence = 0.5
        ic_family = gaussian
        ic_sigma = 1.5
        label = smoke
    """,
    "acceptance:sqg_decay": """
        variant = sqg_physical
        alpha = 1.5
        beta = 1.0
        n = 512
        box = 64.0
        dt = 0.02
        t_end = 80.0
        cadence = 1.0
        ic_family = gaussian
        ic_sigma = 1.5
        label = acceptance_sqg_decay
    """,
    "acceptance:sqg_decay_box128": """
        variant = sqg_physical
        alpha = 1.5
        beta = 1.0
        n = 1024
        box = 128.0
        dt = 0.02
        t_end = 80.0
        cadence = 1.0
        ic_family = gaussian
        ic_sigma = 1.5
        label = acceptance_sqg_decay_box128
    """,
    "acceptance:sqg_scaled_mass": """
        variant = sqg_scaled
        alpha = 1.5
        beta = 1.0
        n = 256
        box = 64.0
        dt = 0.01
        tau_end = 3.0
        cadence = 0.1
        ic_family = gaussian
        ic_sigma = 1.5
        label = acceptance_sqg_scaled_mass
    """,
    "acceptance:linear_scaled": """
        variant = linear_scaled
        alpha = 1.5
        beta = 1.0
        n = 256
        box = 64.0
        dt = 0.001
        tau_end = 2.0
        cadence = 0.5
        ic_family = random
        ic_seed = 7
        label = acceptance_linear_scaled
    """,
    "acceptance:boussinesq_decay": """
        variant = boussinesq_physical
        alpha = 1.4
        n = 512
        box = 64.0
        dt = 0.02
        t_end = 80.0
        cadence = 1.0
        ic_family = dipole
        ic_sigma = 1.5
        theta_ic_family = gaussian
        theta_ic_sigma = 1.5
        label = acceptance_boussinesq_decay
    """,
    "acceptance:boussinesq_scaled_mass": """
        variant = boussinesq_scaled
        alpha = 1.4
        n = 256
        box = 64.0
        dt = 0.01
        tau_end = 3.0
        cadence = 0.1
        ic_family = dipole
        ic_sigma = 1.5
        theta_ic_family = gaussian
        theta_ic_sigma = 1.5
        label = acceptance_boussinesq_scaled_mass
    """,
}


def get_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(sorted(PRESETS))}")
    return parse_config(PRESETS[name])
