"""Stage-per-command pipeline driver.

Each command reads the artifacts of the stages before it from ``<out>/<stage>/``
and writes its own, plus a manifest recording the config, input and output
checksums, library versions and row counts.

    bikecast ingest   --config run.yaml
    bikecast graph    --config run.yaml
    bikecast features --config run.yaml
    bikecast train    --config run.yaml
    bikecast evaluate --config run.yaml --kind lsboost
    bikecast sweep    --config run.yaml --axis horizon
    bikecast report   --config run.yaml
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, dump_config, load_config
from .errors import BikecastError, DataError, MissingUpstreamArtifact, NoResults, UserError
from .evaluate import (
    FIGURE_NAMES,
    HORIZON_GRID,
    MEMORY_GRID,
    TREE_GRID,
    DataBundle,
    EvalReport,
    EvalSettings,
    SweepResult,
    comparison_frame,
    evaluate_regions,
    evaluate_stations,
    run_sweep,
)
from .features import (
    WeatherTable,
    build_region_dataset,
    build_station_dataset,
    read_region_datasets,
    read_station_datasets,
    station_zips,
    write_region_datasets,
    write_station_datasets,
)
from .ingest import SnapshotGrid, clean_stations, parse_stations, parse_status, parse_trips, parse_weather, resample_grid
from .learners import feature_importance, fit_model
from .learners.io import save_model
from .network import (
    RegionPartition,
    build_adjacency,
    neighbor_sets,
    partition_regions,
    read_neighbors,
    write_neighbors,
)

logger = logging.getLogger("bikecast")

COMMANDS = ("ingest", "graph", "features", "train", "evaluate", "sweep", "report")
UPSTREAM = {
    "ingest": (),
    "graph": ("ingest",),
    "features": ("ingest", "graph"),
    "train": ("features",),
    "evaluate": ("features",),
    "sweep": ("ingest", "graph"),
    "report": (),
}
DEFAULT_GRIDS = {"horizon": HORIZON_GRID, "trees": TREE_GRID, "memory": MEMORY_GRID}
TOP_MAXAE = 10


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Provenance record written once at the end of each command."""

    def __init__(self, command: str, config: RunConfig):
        self.command = command
        self.config = config
        self.started = datetime.now(timezone.utc)
        self._t0 = time.perf_counter()
        self.inputs: list[dict] = []
        self.outputs: list[dict] = []
        self.rows: dict[str, int] = {}

    def read(self, path) -> Path:
        path = Path(path)
        self.inputs.append({"path": str(path), "sha256": sha256(path), "bytes": path.stat().st_size})
        return path

    def wrote(self, path) -> Path:
        path = Path(path)
        self.outputs.append({"path": str(path), "sha256": sha256(path), "bytes": path.stat().st_size})
        return path

    def count(self, **rows) -> None:
        self.rows.update({k: int(v) for k, v in rows.items()})

    def write(self, path) -> Path:
        import numba
        import scipy

        doc = {
            "command": self.command,
            "config": self.config.to_dict(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "rows": self.rows,
            "versions": {
                "bikecast": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "numba": numba.__version__,
            },
            "started": self.started.isoformat(timespec="seconds"),
            "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "wall_clock_seconds": round(time.perf_counter() - self._t0, 3),
        }
        path = Path(path)
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


def stage_dir(config: RunConfig, stage: str) -> Path:
    return Path(config.out) / stage


def require_upstream(command: str, config: RunConfig) -> None:
    for stage in UPSTREAM[command]:
        if not (stage_dir(config, stage) / "manifest.json").is_file():
            raise MissingUpstreamArtifact(
                f"{command} needs the output of `{stage}` in {stage_dir(config, stage)}; run `bikecast {stage}` first"
            )


def _weather_table(config: RunConfig, manifest: Manifest) -> WeatherTable | None:
    if not config.use_weather:
        return None
    frame = pd.read_csv(manifest.read(stage_dir(config, "ingest") / "weather.csv"), dtype={"zip": str}, parse_dates=["date"], float_precision="round_trip")
    return WeatherTable(frame)


def _stations_frame(config: RunConfig, manifest: Manifest) -> pd.DataFrame:
    return pd.read_csv(manifest.read(stage_dir(config, "ingest") / "stations.csv"))


def _grid(config: RunConfig, manifest: Manifest) -> SnapshotGrid:
    return SnapshotGrid.read_csv(manifest.read(stage_dir(config, "ingest") / "grid.csv"), spacing=config.tick_seconds)


def cmd_ingest(config: RunConfig, manifest: Manifest) -> dict:
    paths = config.require_inputs(("status", "station", "weather"))
    stations = parse_stations(manifest.read(paths["station"]))
    status = parse_status(manifest.read(paths["status"]))
    weather = parse_weather(manifest.read(paths["weather"]))
    raw = resample_grid(status, spacing=config.tick_seconds, max_gap=config.max_gap)
    if config.start or config.end:
        raw = raw.select(start=config.start, end=config.end)
    grid, log = clean_stations(raw, min_coverage=config.min_coverage)
    out = stage_dir(config, "ingest")
    grid.write_csv(out / "grid.csv")
    log.write_json(out / "cleaning_log.json")
    stations.frame.drop(columns="row").to_csv(out / "stations.csv", index=False, lineterminator="\n")
    weather.frame.drop(columns="row").to_csv(out / "weather.csv", index=False, lineterminator="\n", date_format="%Y-%m-%d")
    for name in ("grid.csv", "cleaning_log.json", "stations.csv", "weather.csv"):
        manifest.wrote(out / name)
    manifest.count(
        status_records=len(status),
        station_records=len(stations),
        weather_records=len(weather),
        stations_before=raw.n_stations,
        ticks_before=raw.n_ticks,
        complete_ticks_before=raw.complete_ticks(),
        stations_after=grid.n_stations,
        ticks_after=grid.n_ticks,
        complete_ticks_after=grid.complete_ticks(),
    )
    return {"summary": f"{grid.n_stations} stations x {grid.n_ticks} ticks ({grid.complete_ticks()} complete)"}


def cmd_graph(config: RunConfig, manifest: Manifest) -> dict:
    paths = config.require_inputs(("trip",))
    grid = _grid(config, manifest)
    meta = _stations_frame(config, manifest)
    trips = parse_trips(manifest.read(paths["trip"]), known_stations=meta["station_id"])
    adj = build_adjacency(trips, grid.stations)
    neighbors = neighbor_sets(adj, config.neighbor_k)
    partition = partition_regions(adj, config.region_edge_weight)
    city = dict(zip(meta["station_id"].astype(int), meta["city"]))
    regions = {
        str(z): {"members": members, "cities": sorted({city.get(s, "?") for s in members})}
        for z, members in partition.regions().items()
    }
    out = stage_dir(config, "graph")
    adj.write_csv(out / "adjacency.csv")
    write_neighbors(neighbors, out / "neighbors.csv")
    partition.write_csv(out / "regions.csv")
    summary = {
        "n_regions": partition.n_regions,
        "intra_fraction": partition.intra_fraction,
        "min_edge_weight": partition.min_edge_weight,
        "single_city_regions": all(len(r["cities"]) == 1 for r in regions.values()),
        "regions": regions,
    }
    (out / "regions.json").write_text(json.dumps(summary, indent=2) + "\n")
    for name in ("adjacency.csv", "neighbors.csv", "regions.csv", "regions.json"):
        manifest.wrote(out / name)
    manifest.count(
        trip_records=len(trips),
        unknown_station_trips=int(trips.frame["unknown_station"].sum()),
        trips_in_graph=adj.total,
        trips_outside_graph=adj.skipped,
        regions=partition.n_regions,
    )
    return {"summary": f"{partition.n_regions} regions, intra-region fraction {partition.intra_fraction:.4f}"}


def _bundle(config: RunConfig, manifest: Manifest) -> DataBundle:
    grid = _grid(config, manifest)
    meta = _stations_frame(config, manifest)
    graph = stage_dir(config, "graph")
    return DataBundle(
        grid=grid,
        neighbors=read_neighbors(manifest.read(graph / "neighbors.csv")),
        weather=_weather_table(config, manifest),
        zips=station_zips(meta),
        partition=RegionPartition.read_csv(manifest.read(graph / "regions.csv")),
        stations=config.stations,
        min_rows=config.min_rows,
    )


def cmd_features(config: RunConfig, manifest: Manifest) -> dict:
    b = _bundle(config, manifest)
    stations = build_station_dataset(
        b.grid, b.neighbors, b.weather, config.horizon, config.memory, zips=b.zips, stations=b.stations, min_rows=b.min_rows
    )
    regions = build_region_dataset(b.grid, b.partition, b.weather, config.horizon, zips=b.zips, min_rows=b.min_rows)
    out = stage_dir(config, "features")
    for sub, write, sets in (("stations", write_station_datasets, stations), ("regions", write_region_datasets, regions)):
        write(sets, out / sub)
        for f in sorted((out / sub).iterdir()):
            manifest.wrote(f)
    manifest.count(
        station_datasets=len(stations),
        station_rows=sum(d.n_rows for d in stations.values()),
        region_datasets=len(regions),
        region_rows=sum(d.n_rows for d in regions.values()),
    )
    return {"summary": f"{len(stations)} station datasets, {len(regions)} region datasets (horizon {config.horizon} min, memory {config.memory})"}


def _datasets(config: RunConfig, manifest: Manifest):
    base = stage_dir(config, "features")
    sub = "regions" if config.kind == "plsr" else "stations"
    index = json.loads((base / sub / "datasets.json").read_text())
    if index["horizon"] != config.horizon or (sub == "stations" and index["memory"] != config.memory):
        raise MissingUpstreamArtifact(
            f"features in {base} were built for horizon {index['horizon']}"
            + (f", memory {index['memory']}" if sub == "stations" else "")
            + "; rerun `bikecast features` with the current settings"
        )
    for f in sorted((base / sub).iterdir()):
        manifest.read(f)
    return read_region_datasets(base / sub) if sub == "regions" else read_station_datasets(base / sub)


def run_name(config: RunConfig) -> str:
    if config.kind == "plsr":
        return f"{config.kind}_h{config.horizon}_{config.cv_mode}"
    return f"{config.kind}_h{config.horizon}_m{config.memory}_{config.cv_mode}"


def cmd_train(config: RunConfig, manifest: Manifest) -> dict:
    datasets = _datasets(config, manifest)
    params = config.params
    out = stage_dir(config, "train") / config.kind
    out.mkdir(parents=True, exist_ok=True)
    importance = []
    for key in sorted(datasets):
        ds = datasets[key]
        if config.kind == "plsr":
            model = fit_model(ds.X, ds.Y, params, jobs=config.jobs)
            path = out / f"region_{key}.json"
        else:
            model = fit_model(ds.X, ds.y, params, jobs=config.jobs)
            path = out / f"station_{key}.json"
            for name, w in feature_importance(model, ds.feature_names).items():
                importance.append({"station_id": key, "feature": name, "importance": w})
        save_model(model, path, params.to_dict())
        manifest.wrote(path)
    if importance:
        path = out / "importance.csv"
        pd.DataFrame(importance).to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        manifest.wrote(path)
    manifest.count(models=len(datasets), training_rows=sum(d.n_rows for d in datasets.values()))
    return {"summary": f"{len(datasets)} {config.kind} models in {out}"}


def cmd_evaluate(config: RunConfig, manifest: Manifest) -> dict:
    datasets = _datasets(config, manifest)
    cv = dict(folds=config.cv_folds, seed=config.seed, mode=config.cv_mode, jobs=config.jobs)
    if config.kind == "plsr":
        report = evaluate_regions(datasets, config.params, **cv)
    else:
        report = evaluate_stations(datasets, config.params, **cv)
    for path in report.write(stage_dir(config, "evaluate"), f"eval_{run_name(config)}"):
        manifest.wrote(path)
    manifest.count(stations=len(report.per_station_mae))
    return {"summary": f"{config.kind}: overall MAE {report.overall_mae:.4f} bikes/station over {len(report.per_station_mae)} stations"}


def cmd_sweep(config: RunConfig, manifest: Manifest, axis: str = "horizon", grid=None) -> dict:
    grid = list(DEFAULT_GRIDS[axis] if grid is None else grid)
    bundle = _bundle(config, manifest)
    settings = EvalSettings(
        params=config.params,
        horizon=config.horizon,
        memory=config.memory,
        folds=config.cv_folds,
        seed=config.seed,
        mode=config.cv_mode,
        jobs=config.jobs,
    )
    curves = config.tree_curves if axis == "horizon" and config.kind in ("forest", "lsboost") else None
    result = run_sweep(axis, grid, settings, bundle, tree_curves=curves)
    name = FIGURE_NAMES.get((axis, config.kind), f"sweep_{axis}_{config.kind}")
    if config.cv_mode != "random":
        name += f"_{config.cv_mode}"
    for path in result.write(stage_dir(config, "sweep"), name):
        manifest.wrote(path)
    manifest.count(grid_points=len(grid))
    best = int(np.argmin(result.mae))
    return {"summary": f"{axis} sweep ({config.kind}): best {axis}={grid[best]} MAE {result.mae[best]:.4f}", "name": name}


def _markdown_table(frame: pd.DataFrame) -> str:
    cols = list(frame.columns)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in frame.itertuples(index=False):
        cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def emit_report(out_dir) -> dict:
    """Collect every EvalReport and SweepResult under ``out_dir`` into
    ``report/summary.md`` and ``report/summary.json`` plus delimited tables."""
    out_dir = Path(out_dir)
    reports = {p.stem: EvalReport.read_json(p) for p in sorted((out_dir / "evaluate").glob("eval_*.json"))}
    if not reports:
        raise NoResults(f"no evaluation reports under {out_dir / 'evaluate'}; run `bikecast evaluate` first")
    sweep_files = sorted(p for p in (out_dir / "sweep").glob("*.json") if p.name != "manifest.json" and not p.name.endswith(".manifest.json"))
    sweeps = {p.stem: SweepResult.read_json(p) for p in sweep_files}
    target = out_dir / "report"
    target.mkdir(parents=True, exist_ok=True)
    written = []

    comparison = pd.DataFrame(
        [
            {
                "run": name.removeprefix("eval_"),
                "learner": r.learner,
                "horizon": r.horizon,
                "memory": r.memory,
                "cv_mode": r.cv_mode,
                "stations": len(r.per_station_mae),
                "overall_mae": r.overall_mae,
            }
            for name, r in reports.items()
        ]
    )
    written.append(target / "fig8_comparison.csv")
    comparison.to_csv(written[-1], index=False, lineterminator="\n", float_format="%.10g")

    top = {}
    for name, r in reports.items():
        frame = r.to_frame().sort_values(["max_ae", "station_id"], ascending=[False, True], kind="stable")
        written.append(target / f"fig4_maxae_{name.removeprefix('eval_')}.csv")
        frame.to_csv(written[-1], index=False, lineterminator="\n", float_format="%.10g")
        top[name.removeprefix("eval_")] = frame.head(TOP_MAXAE).to_dict(orient="records")

    minima = []
    for name, s in sweeps.items():
        k = int(np.argmin(s.mae))
        minima.append({"sweep": name, "axis": s.axis, "learner": s.learner, "best": s.grid[k], "mae": s.mae[k]})
    horizon_sweeps = {s.learner: s for s in sweeps.values() if s.axis == "horizon"}
    if len(horizon_sweeps) > 1:
        written.append(target / "fig8_comparison_horizon.csv")
        comparison_frame(horizon_sweeps).to_csv(written[-1], index=False, lineterminator="\n", float_format="%.10g")

    doc = {"learners": comparison.to_dict(orient="records"), "top_maxae": top, "sweep_minima": minima}
    written.append(target / "summary.json")
    written[-1].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    md = ["# Forecast evaluation summary", "", "## Overall MAE (bikes/station)", "", _markdown_table(comparison), ""]
    for run, rows in top.items():
        md += [f"## Largest MaxAE stations: {run}", "", _markdown_table(pd.DataFrame(rows)), ""]
    if minima:
        md += ["## Sweep minima", "", _markdown_table(pd.DataFrame(minima)), ""]
    written.append(target / "summary.md")
    written[-1].write_text("\n".join(md))
    return {"written": written, "summary": f"{len(reports)} evaluation reports, {len(sweeps)} sweeps -> {target / 'summary.md'}"}


def cmd_report(config: RunConfig, manifest: Manifest) -> dict:
    result = emit_report(config.out)
    for p in sorted((Path(config.out) / "evaluate").glob("eval_*.json")) + sorted((Path(config.out) / "sweep").glob("fig*.json")):
        manifest.read(p)
    for p in result["written"]:
        manifest.wrote(p)
    return result


HANDLERS = {
    "ingest": cmd_ingest,
    "graph": cmd_graph,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def manifest_name(command: str, config: RunConfig, extra: dict) -> str:
    if command in ("evaluate", "train"):
        return f"{run_name(config)}.manifest.json" if command == "evaluate" else f"{config.kind}.manifest.json"
    if command == "sweep":
        return f"{extra['name']}.manifest.json"
    return "manifest.json"


def run(command: str, config: RunConfig, **options) -> dict:
    """Run one pipeline stage; returns a dict with a one-line ``summary`` and
    the manifest path."""
    if command not in COMMANDS:
        raise UserError(f"unknown command {command!r}")
    require_upstream(command, config)
    manifest = Manifest(command, config)
    out = stage_dir(config, command)
    out.mkdir(parents=True, exist_ok=True)
    result = HANDLERS[command](config, manifest, **options)
    name = manifest_name(command, config, result)
    # one config snapshot per run, so runs sharing a stage directory keep theirs
    snapshot = out / name.replace("manifest.json", "config.yaml")
    dump_config(config, snapshot)
    manifest.wrote(snapshot)
    result["manifest"] = manifest.write(out / name)
    return result


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _override_parser() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("run settings (each overrides the config file)")
    g.add_argument("--config", help="flat YAML key/value file")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")
    for f in fields(RunConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=argparse.SUPPRESS, metavar=f.name.upper())
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bikecast", description="Bike availability forecasting pipeline")
    parser.add_argument("--version", action="version", version=f"bikecast {__version__}")
    common = _override_parser()
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "ingest": "parse status/station/weather files, resample and clean",
        "graph": "trip adjacency, in-degree neighbours and regions",
        "features": "station and region design matrices",
        "train": "fit one model per station (or region for plsr)",
        "evaluate": "cross-validated MAE and MaxAE",
        "sweep": "MAE over a horizon, tree-count or memory grid",
        "report": "summary tables over all evaluations and sweeps",
    }
    for name in COMMANDS:
        cp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "sweep":
            cp.add_argument("--axis", choices=sorted(DEFAULT_GRIDS), default="horizon")
            cp.add_argument("--grid", help="comma-separated values (default: the standard grid for the axis)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)}
    options = {}
    try:
        config = load_config(args.config, overrides)
        if args.command == "sweep":
            options["axis"] = args.axis
            if args.grid:
                try:
                    options["grid"] = [int(v) for v in args.grid.split(",") if v.strip()]
                except ValueError:
                    raise UserError(f"--grid: expected comma-separated integers, got {args.grid!r}") from None
        result = run(args.command, config, **options)
    except UserError as exc:
        print(f"bikecast {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (DataError, BikecastError) as exc:
        print(f"bikecast {args.command}: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: {result['summary']}")
    return 0
