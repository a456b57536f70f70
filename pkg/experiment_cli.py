"""
Scenario sweeps: parse a JSON scenario, run every (point, seed) pair,
write a CSV of results plus a JSON manifest, and aggregate over seeds.
"""

import dataclasses
import importlib.metadata
import itertools
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from alternating_optimizer import MAXIMIZE_RATE, MINIMIZE_SI, SURFACES, OptConfig, optimize
from channel_model import (ConfigError, SystemConfig, build_geometry, corrupt_csi, dbm_to_watt,
                           sample_channels, watt_to_dbm)
from ios_surface import data_rate, effective_channels, quantize_phases, si_power

log = logging.getLogger(__name__)

SWEEP_AXES = ("L", "N", "P_th_dbm", "R_th", "tx_rx_distance", "tx_ios_distance", "eta", "quant_bits")
OPTIMIZER_FIELDS = ("epsilon", "max_outer_iters", "G", "P_th_dbm", "R_th")
SCENARIO_FIELDS = ("id", "objective", "surfaces", "system", "optimizer", "sweep", "seeds",
                   "seed_base", "write_traces", "output")
EXCLUDED_STATUSES = ("infeasible", "numerical_failure", "error")
GROUP_KEYS = ["scenario", "point", "surface", "L", "M", "N", "threshold", "P_th_dbm", "R_th",
              "tx_rx_distance", "tx_ios_distance", "eta", "quant_bits"]
_CSI_STREAM = 0x5EED


# --------------------- SCENARIO --------------------- #


@dataclass(frozen=True)
class SweepPoint:
    index: int
    surface: str
    L: int
    N: int
    P_th_dbm: float  # None means no SI cap
    R_th: float
    tx_rx_distance: float
    tx_ios_distance: float
    eta: float
    quant_bits: int

    @property
    def point_id(self):
        return f"p{self.index:03d}"


@dataclass(frozen=True)
class Scenario:
    id: str
    objective: str
    surfaces: tuple
    system: SystemConfig
    optimizer: dict
    sweep: dict
    seeds: int = 1
    seed_base: int = 0
    write_traces: bool = False
    output: str = None
    raw: dict = field(default=None, compare=False, repr=False)

    @classmethod
    def from_dict(cls, data):
        """Validate a parsed scenario document.

        Raises:
            ConfigError: naming the offending field or sweep axis
        """
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        unknown = sorted(set(data) - set(SCENARIO_FIELDS))
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {', '.join(unknown)}")
        for required in ("id", "objective"):
            if required not in data:
                raise ConfigError(f"missing scenario field '{required}'")
        objective = data["objective"]
        if objective not in (MAXIMIZE_RATE, MINIMIZE_SI):
            raise ConfigError(f"field 'objective': expected '{MAXIMIZE_RATE}' or '{MINIMIZE_SI}', got {objective!r}")

        surfaces = data.get("surfaces", ["ES"])
        if not isinstance(surfaces, list) or not surfaces:
            raise ConfigError("field 'surfaces': expected a nonempty list")
        for surface in surfaces:
            if surface not in SURFACES:
                raise ConfigError(f"field 'surfaces': unknown surface {surface!r}")

        system = SystemConfig.from_dict(data.get("system", {}))

        optimizer = dict(data.get("optimizer", {}))
        bad = sorted(set(optimizer) - set(OPTIMIZER_FIELDS))
        if bad:
            raise ConfigError(f"unknown optimizer field(s): {', '.join(bad)}")

        sweep = data.get("sweep", {})
        if not isinstance(sweep, dict):
            raise ConfigError("field 'sweep': expected an object of axis -> list")
        axes = {}
        for axis, values in sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis '{axis}' (known: {', '.join(SWEEP_AXES)})")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis '{axis}' must be a nonempty list")
            axes[axis] = tuple(values)

        seeds = data.get("seeds", 1)
        if not isinstance(seeds, int) or seeds < 1:
            raise ConfigError(f"field 'seeds': expected an integer >= 1, got {seeds!r}")
        seed_base = data.get("seed_base", 0)
        if not isinstance(seed_base, int) or seed_base < 0:
            raise ConfigError(f"field 'seed_base': expected a nonnegative integer, got {seed_base!r}")

        return cls(id=str(data["id"]), objective=objective, surfaces=tuple(surfaces), system=system,
                   optimizer=optimizer, sweep=axes, seeds=seeds, seed_base=seed_base,
                   write_traces=bool(data.get("write_traces", False)), output=data.get("output"),
                   raw=data)

    def points(self):
        """Cross product of surfaces and sweep axes, in canonical order."""
        sys_cfg = self.system
        base = {
            "L": sys_cfg.L,
            "N": sys_cfg.N,
            "P_th_dbm": self.optimizer.get("P_th_dbm"),
            "R_th": self.optimizer.get("R_th", 1.0),
            "tx_rx_distance": float(np.linalg.norm(np.subtract(sys_cfg.first_rx, sys_cfg.first_tx))),
            "tx_ios_distance": float(np.linalg.norm(np.subtract(sys_cfg.first_ios, sys_cfg.first_tx))),
            "eta": 1.0,
            "quant_bits": 0,
        }
        grids = [self.sweep.get(axis, (base[axis],)) for axis in SWEEP_AXES]
        points = []
        for index, (surface, *values) in enumerate(itertools.product(self.surfaces, *grids)):
            points.append(SweepPoint(index, surface, **dict(zip(SWEEP_AXES, values))))
        return points

    def system_for(self, point):
        """SystemConfig of one sweep point; distances move anchors away from the first tx antenna."""
        tx = np.asarray(self.system.first_tx)
        changes = {"L": int(point.L), "N": int(point.N)}
        if "tx_rx_distance" in self.sweep:
            changes["first_rx"] = tuple(tx + np.array([0.0, point.tx_rx_distance, 0.0]))
        if "tx_ios_distance" in self.sweep:
            changes["first_ios"] = tuple(tx + np.array([point.tx_ios_distance, 0.0, 0.0]))
        return self.system.replace(**changes)

    def opt_config_for(self, point, system, seed):
        return OptConfig.for_system(
            system,
            objective=self.objective,
            surface=point.surface,
            P_th=dbm_to_watt(point.P_th_dbm),
            R_th=float(point.R_th),
            epsilon=self.optimizer.get("epsilon", OptConfig.epsilon),
            max_outer_iters=self.optimizer.get("max_outer_iters", OptConfig.max_outer_iters),
            G=self.optimizer.get("G", OptConfig.G),
            seed=seed,
        )


def load_scenario(path):
    """Read and validate a scenario file, reporting JSON errors with line/column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return Scenario.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --------------------- RECORDS --------------------- #


@dataclass
class ResultRecord:
    """One CSV row; ``trace`` is kept out of the CSV."""

    scenario: str
    point: str
    surface: str
    L: int
    M: int
    N: int
    threshold: float
    P_th_dbm: float
    R_th: float
    tx_rx_distance: float
    tx_ios_distance: float
    eta: float
    quant_bits: int
    seed: int
    rate: float
    si_w: float
    si_dbm: float
    iterations: int
    status: str
    wall_time: float
    trace: list = field(default_factory=list, repr=False)

    def row(self):
        out = dataclasses.asdict(self)
        out.pop("trace")
        return out


def _csi_seed(seed):
    return int(np.random.SeedSequence([int(seed), _CSI_STREAM]).generate_state(1)[0])


def run_point(scenario, point, seed):
    """Optimize one (point, seed) pair; failures end up in ``status``."""
    system = scenario.system_for(point)
    p_th_dbm = math.inf if point.P_th_dbm is None else float(point.P_th_dbm)
    threshold = p_th_dbm if scenario.objective == MAXIMIZE_RATE else float(point.R_th)
    record = ResultRecord(
        scenario=scenario.id, point=point.point_id, surface=point.surface, L=system.L, M=system.M,
        N=system.N, threshold=threshold, P_th_dbm=p_th_dbm, R_th=float(point.R_th),
        tx_rx_distance=float(point.tx_rx_distance), tx_ios_distance=float(point.tx_ios_distance),
        eta=float(point.eta), quant_bits=int(point.quant_bits), seed=int(seed),
        rate=math.nan, si_w=math.nan, si_dbm=math.nan, iterations=0, status="error", wall_time=0.0,
    )
    start = time.perf_counter()
    try:
        channels = sample_channels(build_geometry(system), system, seed)
        estimate = corrupt_csi(channels, float(point.eta), _csi_seed(seed))
        result = optimize(scenario.opt_config_for(point, system, seed), estimate)
        coeffs = result.coeffs
        if point.quant_bits:
            coeffs = quantize_phases(coeffs, int(point.quant_bits))
        eff = effective_channels(channels, coeffs)
        record.rate = data_rate(eff, result.w, system.sigma_d2)
        record.si_w = si_power(eff, result.w)
        record.si_dbm = watt_to_dbm(record.si_w)
        record.iterations = result.iters
        record.status = result.status
        record.trace = list(result.objective_trace)
    except Exception as exc:  # noqa: BLE001
        log.error("%s %s seed %d failed: %s", scenario.id, point.point_id, seed, exc)
    record.wall_time = time.perf_counter() - start
    return record


def _run_task(task):
    return run_point(*task)


def point_index(point_id):
    return int(point_id[1:])


def sort_records(records):
    """Canonical CSV order: sweep point index, then seed."""
    return sorted(records, key=lambda r: (point_index(r.point), r.seed))


def records_frame(records):
    return pd.DataFrame([r.row() for r in records])


def build_id():
    """``git describe`` of the working tree, or the installed package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, check=True, timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return f"iosfd-sim {importlib.metadata.version('iosfd-sim')}"
    except importlib.metadata.PackageNotFoundError:
        return "iosfd-sim unversioned"


def write_outputs(scenario, records, out_dir):
    """results.csv, manifest.json and (optionally) per-point trace files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(out_dir / "results.csv", index=False, float_format="%.12g")
    if scenario.write_traces:
        trace_dir = out_dir / "traces"
        trace_dir.mkdir(exist_ok=True)
        for r in records:
            pd.DataFrame({"iteration": range(len(r.trace)), "objective": r.trace}).to_csv(
                trace_dir / f"{r.point}_seed{r.seed}.csv", index=False, float_format="%.12g")
    statuses = pd.Series([r.status for r in records]).value_counts().sort_index()
    manifest = {
        "scenario": scenario.raw if scenario.raw is not None else scenario.id,
        "seed_base": scenario.seed_base,
        "points": len({r.point for r in records}),
        "records": len(records),
        "statuses": {k: int(v) for k, v in statuses.items()},
        "build": build_id(),
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, default=str)
    log.info("Wrote %d records to %s", len(records), out_dir)


def run_scenario(scenario_file, out_dir=None, seed_base=None, parallel=1):
    """Run every (point, seed) of a scenario file and write its outputs.

    Args:
        scenario_file: path to the JSON scenario
        out_dir: output directory, defaulting to the scenario's ``output``
        seed_base: overrides the scenario's ``seed_base``
        parallel: worker processes; 1 runs in-process

    Returns:
        list of ResultRecord sorted by point, then seed
    """
    scenario = load_scenario(scenario_file)
    if seed_base is not None:
        scenario = dataclasses.replace(scenario, seed_base=int(seed_base))
    tasks = [(scenario, point, scenario.seed_base + k)
             for point in scenario.points() for k in range(scenario.seeds)]
    log.info("Scenario %s: %d points x %d seeds", scenario.id, len(tasks) // scenario.seeds, scenario.seeds)

    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(_run_task, tasks))
    else:
        records = [_run_task(task) for task in tasks]
    records = sort_records(records)

    target = out_dir or scenario.output
    if target:
        write_outputs(scenario, records, target)
    return records


# --------------------- SUMMARY --------------------- #


def summarize(records):
    """Mean/std over seeds for every sweep point.

    Infeasible and errored rows are left out of the statistics and counted
    in the ``excluded`` column.
    """
    df = records if isinstance(records, pd.DataFrame) else records_frame(records)
    if df.empty:
        raise ValueError("no records to summarize")
    rows = []
    for key, group in df.groupby(GROUP_KEYS, sort=False, dropna=False):
        kept = group[~group["status"].isin(EXCLUDED_STATUSES)]
        si_mean = kept["si_w"].mean()
        row = dict(zip(GROUP_KEYS, key))
        row.update(
            seeds=len(kept),
            excluded=len(group) - len(kept),
            rate_mean=kept["rate"].mean(),
            rate_std=kept["rate"].std(ddof=0),
            si_w_mean=si_mean,
            si_w_std=kept["si_w"].std(ddof=0),
            si_dbm_mean=watt_to_dbm(si_mean) if len(kept) else math.nan,
            iterations_mean=kept["iterations"].mean(),
        )
        rows.append(row)
    return pd.DataFrame(rows)


def format_table(summary):
    """Aligned plain-text rendering of a summary frame."""
    return summary.to_string(index=False, float_format=lambda v: f"{v:.6g}")


def summarize_csv(csv_path):
    """Summarize a results CSV, writing ``<name>_summary.csv`` next to it."""
    csv_path = Path(csv_path)
    summary = summarize(pd.read_csv(csv_path))
    out = csv_path.with_name(f"{csv_path.stem}_summary.csv")
    summary.to_csv(out, index=False, float_format="%.12g")
    return summary, out
