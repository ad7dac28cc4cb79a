"""Experiment harness: dataset lifecycle, training, evaluation, reporting.

A dataset directory is created by `gen` (instances + manifest), enriched
by `label` (exact traces and references for the train/validation splits),
consumed by `train` (policy file + training report) and `eval` (result
rows CSV + summary), and summarized by `report` (aggregate tables and
figures).  Instances are screened for root feasibility at generation:
seeds whose realization cannot meet its SINR target are skipped
deterministically and recorded in the manifest.

All artifacts are versioned "v1" and reproducible byte-for-byte from
(config, seeds), wall-clock columns excepted.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, bnb, dagger, netgen, policy
from .bnb import SearchLimits
from .conic import Assignment, solve_relaxation
from .errors import (BudgetExceededError, ConfigError, CsvParseError,
                     ManifestError, NonConvergedError)

MANIFEST_SCHEMA = "v1"
RESULTS_SCHEMA = "v1"

RESULT_COLUMNS = [
    "schema", "seed", "tsinr_db", "method", "status", "objective_w",
    "socp_solves", "wall_time_s", "gap_to_exact", "speedup_to_exact",
]

METHODS = ("exact", "learned", "rminlp", "gsbf")


@dataclass
class ExperimentConfig:
    # scenario
    num_rrh: int = 6
    num_users: int = 4
    antennas_per_rrh: int = 2
    region_halfwidth_m: float = 1000.0
    max_tx_power_w: float = 1.0
    amp_efficiency: float = 0.25
    noise_power_w: float = 10.0 ** (-13.2)
    fronthaul_rule: str = "5+l"
    tsinr_db_list: tuple = (0.0, 2.0, 4.0, 6.0, 8.0)
    # split sizes and seed bases
    n_train: int = 100
    n_val: int = 30
    n_test: int = 30
    train_seed_start: int = 1_000
    val_seed_start: int = 20_000
    test_seed_start: int = 40_000
    # budgets
    max_nodes: int = 20_000
    max_seconds: float = 300.0
    # dagger / classifier
    hyper_grid: tuple = ((10.0, 1.0),)
    retrain_every: int = 1
    candidate_count: int = 8
    max_optimal_prune_rate: float = 0.05
    # evaluation
    methods: tuple = METHODS
    workers: int = 1

    def validate(self):
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigError("split sizes must be nonnegative")
        spans = []
        for start, count in ((self.train_seed_start, self.n_train),
                             (self.val_seed_start, self.n_val),
                             (self.test_seed_start, self.n_test)):
            spans.append((start, start + max(1_000, 10 * count)))
        for i in range(3):
            for j in range(i + 1, 3):
                if spans[i][0] < spans[j][1] and spans[j][0] < spans[i][1]:
                    raise ConfigError("split seed ranges overlap")
        if not self.tsinr_db_list:
            raise ConfigError("tsinr_db_list must not be empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        self.gen_config(0.0).validate()

    def gen_config(self, tsinr_db: float) -> netgen.GenConfig:
        return netgen.GenConfig(
            num_rrh=self.num_rrh, num_users=self.num_users,
            antennas_per_rrh=self.antennas_per_rrh,
            region_halfwidth_m=self.region_halfwidth_m,
            max_tx_power_w=self.max_tx_power_w,
            amp_efficiency=self.amp_efficiency,
            noise_power_w=self.noise_power_w,
            sinr_target_db=tsinr_db,
            fronthaul_rule=self.fronthaul_rule,
        )

    def limits(self) -> SearchLimits:
        return SearchLimits(max_nodes=self.max_nodes, max_seconds=self.max_seconds)

    def to_json(self) -> dict:
        doc = dict(vars(self))
        doc["tsinr_db_list"] = list(self.tsinr_db_list)
        doc["hyper_grid"] = [list(h) for h in self.hyper_grid]
        doc["methods"] = list(self.methods)
        return doc

    @staticmethod
    def from_json(doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        for key in ("tsinr_db_list", "methods"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if "hyper_grid" in doc:
            doc["hyper_grid"] = tuple(tuple(h) for h in doc["hyper_grid"])
        return ExperimentConfig(**doc)

    def dataset_hash(self) -> str:
        """Hash of the fields that define the generated instances."""
        fields = {k: v for k, v in self.to_json().items()
                  if k not in ("max_nodes", "max_seconds", "hyper_grid",
                               "retrain_every", "candidate_count",
                               "max_optimal_prune_rate", "methods", "workers")}
        blob = json.dumps(fields, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# gen

def cmd_gen(config: ExperimentConfig, out_dir) -> dict:
    """Generate all splits with root-feasibility screening; idempotent."""
    config.validate()
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text())
        if existing.get("config_hash") == config.dataset_hash():
            return existing  # identical dataset already on disk
        raise ManifestError(
            f"{manifest_path} was generated from a different configuration "
            f"(hash {existing.get('config_hash')} != {config.dataset_hash()}); "
            "refusing to overwrite")
    (out / "instances").mkdir(parents=True, exist_ok=True)

    manifest = {"schema": MANIFEST_SCHEMA, "config_hash": config.dataset_hash(),
                "config": config.to_json(), "splits": {}, "skipped_seeds": {}}
    for split, start, count in (("train", config.train_seed_start, config.n_train),
                                ("val", config.val_seed_start, config.n_val),
                                ("test", config.test_seed_start, config.n_test)):
        entries, skipped = [], []
        seed, i = start, 0
        while i < count:
            tsinr = config.tsinr_db_list[i % len(config.tsinr_db_list)]
            inst = netgen.generate_instance(config.gen_config(tsinr), seed)
            try:
                root = solve_relaxation(inst, Assignment.root(inst.L))
            except NonConvergedError:
                # borderline realization the solver cannot certify; skip it
                skipped.append(seed)
                seed += 1
                continue
            if root.status != "optimal":
                skipped.append(seed)
                seed += 1
                continue
            name = f"instances/{split}_{i:04d}.json"
            netgen.save_instance(inst, out / name)
            entries.append({"file": name, "seed": seed, "tsinr_db": tsinr})
            seed += 1
            i += 1
        manifest["splits"][split] = entries
        manifest["skipped_seeds"][split] = skipped
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise ManifestError(f"no manifest at {path}; run gen first")
    doc = json.loads(path.read_text())
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ManifestError(f"unsupported manifest schema {doc.get('schema')!r}")
    return doc


def load_split(dataset_dir, split: str) -> list:
    manifest = load_manifest(dataset_dir)
    return [netgen.load_instance(Path(dataset_dir) / e["file"])
            for e in manifest["splits"][split]]


# ---------------------------------------------------------------------------
# label

def _label_one(args):
    path, max_nodes, max_seconds = args
    inst = netgen.load_instance(path)
    limits = SearchLimits(max_nodes=max_nodes, max_seconds=max_seconds)
    try:
        incumbent, stats, trace = bnb.solve_exact(inst, limits=limits)
    except BudgetExceededError:
        return {"seed": inst.seed, "ok": False, "reason": "budget exceeded"}
    except NonConvergedError as exc:
        return {"seed": inst.seed, "ok": False, "reason": f"solver: {exc}"}
    if incumbent is None:
        return {"seed": inst.seed, "ok": False, "reason": "infeasible at root"}
    ref = dagger.ExactReference.from_exact(incumbent, stats, trace)
    return {"seed": inst.seed, "ok": True, "trace": trace.to_json(),
            "reference": ref.to_json()}


def cmd_label(dataset_dir, splits=("train", "val"), max_nodes=None,
              max_seconds=None, workers: int = 1) -> dict:
    """Solve every instance of the given splits exactly; store traces and references."""
    out = Path(dataset_dir)
    manifest = load_manifest(out)
    cfg = ExperimentConfig.from_json(manifest["config"])
    max_nodes = max_nodes if max_nodes is not None else cfg.max_nodes
    max_seconds = max_seconds if max_seconds is not None else cfg.max_seconds
    (out / "traces").mkdir(exist_ok=True)
    summary = {"schema": "v1", "labeled": {}, "excluded": {}}
    for split in splits:
        entries = manifest["splits"][split]
        tasks = [(str(out / e["file"]), max_nodes, max_seconds) for e in entries]
        results = _pmap(_label_one, tasks, workers)
        labeled, excluded = [], []
        for entry, res in zip(entries, results):
            stem = Path(entry["file"]).stem
            if not res["ok"]:
                excluded.append({"file": entry["file"], "seed": res["seed"],
                                 "reason": res["reason"]})
                continue
            trace_file = f"traces/{stem}.trace.json"
            ref_file = f"traces/{stem}.ref.json"
            (out / trace_file).write_text(json.dumps(res["trace"]))
            (out / ref_file).write_text(json.dumps(res["reference"]))
            labeled.append({"file": entry["file"], "seed": res["seed"],
                            "trace": trace_file, "reference": ref_file})
        summary["labeled"][split] = labeled
        summary["excluded"][split] = excluded
    (out / "labels.json").write_text(json.dumps(summary, indent=1))
    return summary


def load_labeled(dataset_dir, split: str):
    """(instances, traces, references) for a labeled split, exclusions dropped."""
    out = Path(dataset_dir)
    labels = json.loads((out / "labels.json").read_text())
    instances, traces, refs = [], [], []
    for e in labels["labeled"][split]:
        instances.append(netgen.load_instance(out / e["file"]))
        traces.append(bnb.SearchTrace.from_json(json.loads((out / e["trace"]).read_text())))
        refs.append(dagger.ExactReference.from_json(
            json.loads((out / e["reference"]).read_text())))
    return instances, traces, refs


# ---------------------------------------------------------------------------
# train

def cmd_train(dataset_dir, policy_path=None, report_path=None) -> tuple:
    """DAgger-train on the labeled train split, select on validation."""
    out = Path(dataset_dir)
    manifest = load_manifest(out)
    cfg = ExperimentConfig.from_json(manifest["config"])
    train_insts, train_traces, _ = load_labeled(out, "train")
    val_insts, val_traces, val_refs = load_labeled(out, "val")
    run = dagger.TrainRunConfig(
        train_instances=train_insts, train_traces=train_traces,
        val_instances=val_insts, val_references=val_refs, val_traces=val_traces,
        hyper_grid=tuple(policy.HyperParams(C=c, gamma=g) for c, g in cfg.hyper_grid),
        limits=cfg.limits(), retrain_every=cfg.retrain_every,
        candidate_count=cfg.candidate_count,
        max_optimal_prune_rate=cfg.max_optimal_prune_rate,
    )
    model, report = dagger.dagger_train(run)
    policy_path = Path(policy_path) if policy_path else out / "policy.json"
    report_path = Path(report_path) if report_path else out / "training_report.json"
    policy.save_policy(model, policy_path)
    report_path.write_text(json.dumps(report.to_json(), indent=1))
    return model, report


# ---------------------------------------------------------------------------
# eval

@dataclass
class ResultRow:
    seed: int
    tsinr_db: float
    method: str
    status: str  # feasible | notfound | infeasible
    objective_w: float | None
    socp_solves: int
    wall_time_s: float
    gap_to_exact: float | None
    speedup_to_exact: float | None

    def as_csv(self) -> list:
        def num(v):
            return "" if v is None else repr(float(v))

        return [RESULTS_SCHEMA, self.seed, repr(float(self.tsinr_db)), self.method,
                self.status, num(self.objective_w), self.socp_solves,
                repr(float(self.wall_time_s)), num(self.gap_to_exact),
                num(self.speedup_to_exact)]


def _eval_one(args):
    path, methods, policy_path, no_exact, max_nodes, max_seconds = args
    inst = netgen.load_instance(path)
    limits = SearchLimits(max_nodes=max_nodes, max_seconds=max_seconds)
    tsinr = round(10.0 * math.log10(float(inst.sinr_targets[0])), 6)
    rows = []
    ref = None
    if not no_exact:
        t0 = time.perf_counter()
        incumbent, stats, trace = bnb.solve_exact(inst, limits=limits)
        wall = time.perf_counter() - t0
        if incumbent is None:
            return [ResultRow(inst.seed, tsinr, "exact", "infeasible", None,
                              stats.socp_solves, wall, None, None)]
        ref = dagger.ExactReference.from_exact(incumbent, stats, trace)
        if "exact" in methods:
            rows.append(ResultRow(inst.seed, tsinr, "exact", "feasible",
                                  incumbent.objective, stats.socp_solves, wall,
                                  0.0, 1.0))

    def relate(objective, solves):
        if ref is None:
            return None, None
        return ((objective - ref.objective) / ref.objective if objective is not None else None,
                ref.socp_solves / solves)

    if "learned" in methods:
        model = policy.load_policy(policy_path)
        t0 = time.perf_counter()
        incumbent, stats, _ = bnb.solve_with_policy(inst, model.as_search_policy(),
                                                    limits=limits)
        wall = time.perf_counter() - t0
        if incumbent is None:
            gap, speedup = relate(None, stats.socp_solves)
            rows.append(ResultRow(inst.seed, tsinr, "learned", "notfound", None,
                                  stats.socp_solves, wall, None, speedup))
        else:
            gap, speedup = relate(incumbent.objective, stats.socp_solves)
            rows.append(ResultRow(inst.seed, tsinr, "learned", "feasible",
                                  incumbent.objective, stats.socp_solves, wall,
                                  gap, speedup))
    for name, fn in (("rminlp", baselines.rminlp), ("gsbf", baselines.gsbf)):
        if name not in methods:
            continue
        t0 = time.perf_counter()
        res = fn(inst)
        wall = time.perf_counter() - t0
        if res.status != baselines.FEASIBLE:
            rows.append(ResultRow(inst.seed, tsinr, name, "infeasible", None,
                                  res.socp_solves, wall, None, None))
        else:
            gap, speedup = relate(res.objective, res.socp_solves)
            rows.append(ResultRow(inst.seed, tsinr, name, "feasible", res.objective,
                                  res.socp_solves, wall, gap, speedup))
    return rows


def cmd_eval(dataset_dir, methods=None, policy_path=None, out_csv=None,
             no_exact: bool = False, max_nodes=None, max_seconds=None,
             workers: int = None) -> Path:
    """Run the requested methods on the test split and write result rows."""
    out = Path(dataset_dir)
    manifest = load_manifest(out)
    cfg = ExperimentConfig.from_json(manifest["config"])
    methods = tuple(methods) if methods else cfg.methods
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if "learned" in methods:
        policy_path = Path(policy_path) if policy_path else out / "policy.json"
        if not policy_path.exists():
            raise ConfigError(f"method 'learned' requested but no policy file at {policy_path}")
    if no_exact and "exact" in methods:
        methods = tuple(m for m in methods if m != "exact")
    max_nodes = max_nodes if max_nodes is not None else cfg.max_nodes
    max_seconds = max_seconds if max_seconds is not None else cfg.max_seconds
    workers = workers if workers is not None else cfg.workers

    tasks = [(str(out / e["file"]), methods, str(policy_path), no_exact,
              max_nodes, max_seconds)
             for e in manifest["splits"]["test"]]
    rows = [r for chunk in _pmap(_eval_one, tasks, workers) for r in chunk]
    rows.sort(key=lambda r: (r.seed, r.tsinr_db, r.method))

    out_csv = Path(out_csv) if out_csv else out / "results.csv"
    with out_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow(r.as_csv())
    _write_summary(rows, out_csv.with_suffix(".summary.json"))
    return out_csv


def _write_summary(rows: list[ResultRow], path: Path) -> None:
    groups = {}
    for r in rows:
        groups.setdefault((r.tsinr_db, r.method), []).append(r)
    summary = {"schema": "v1", "cells": []}
    for (tsinr, method), rs in sorted(groups.items()):
        feas = [r for r in rs if r.status == "feasible"]
        gaps = [r.gap_to_exact for r in feas if r.gap_to_exact is not None]
        spd = [r.speedup_to_exact for r in rs if r.speedup_to_exact is not None]
        summary["cells"].append({
            "tsinr_db": tsinr, "method": method, "count": len(rs),
            "n_notfound": sum(r.status == "notfound" for r in rs),
            "mean_power_w": float(np.mean([r.objective_w for r in feas])) if feas else None,
            "mean_gap": float(np.mean(gaps)) if gaps else None,
            "mean_speedup": float(np.mean(spd)) if spd else None,
            "mean_socp_solves": float(np.mean([r.socp_solves for r in rs])),
        })
    path.write_text(json.dumps(summary, indent=1))


# ---------------------------------------------------------------------------
# report

def read_results(csv_path) -> list[ResultRow]:
    rows = []
    with Path(csv_path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULT_COLUMNS:
            raise CsvParseError(f"{csv_path}:1: unexpected header {header}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(RESULT_COLUMNS):
                raise CsvParseError(f"{csv_path}:{lineno}: expected "
                                    f"{len(RESULT_COLUMNS)} columns, got {len(rec)}")
            try:
                rows.append(ResultRow(
                    seed=int(rec[1]), tsinr_db=float(rec[2]), method=rec[3],
                    status=rec[4],
                    objective_w=float(rec[5]) if rec[5] else None,
                    socp_solves=int(rec[6]), wall_time_s=float(rec[7]),
                    gap_to_exact=float(rec[8]) if rec[8] else None,
                    speedup_to_exact=float(rec[9]) if rec[9] else None))
            except ValueError as exc:
                raise CsvParseError(f"{csv_path}:{lineno}: {exc}") from exc
    return rows


def aggregate_results(rows: list[ResultRow]) -> list[dict]:
    """Per-(TSINR, method) mean/std/count tables, plot-ready."""
    groups = {}
    for r in rows:
        groups.setdefault((r.tsinr_db, r.method), []).append(r)
    agg = []
    for (tsinr, method), rs in sorted(groups.items()):
        powers = [r.objective_w for r in rs if r.objective_w is not None]
        gaps = [r.gap_to_exact for r in rs if r.gap_to_exact is not None]
        spd = [r.speedup_to_exact for r in rs if r.speedup_to_exact is not None]
        agg.append({
            "tsinr_db": tsinr, "method": method, "count": len(rs),
            "power_mean_w": float(np.mean(powers)) if powers else None,
            "power_std_w": float(np.std(powers)) if powers else None,
            "gap_mean": float(np.mean(gaps)) if gaps else None,
            "speedup_mean": float(np.mean(spd)) if spd else None,
        })
    return agg


def cmd_report(results_csv, out_dir=None) -> dict:
    """Aggregate a results CSV into tables and render the summary figures."""
    from . import plotting

    rows = read_results(results_csv)
    out = Path(out_dir) if out_dir else Path(results_csv).parent
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate_results(rows)
    table_path = out / "aggregates.csv"
    cols = ["tsinr_db", "method", "count", "power_mean_w", "power_std_w",
            "gap_mean", "speedup_mean"]
    with table_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for a in agg:
            writer.writerow(["" if a[c] is None else a[c] for c in cols])
    figures = {
        "power": out / "power_vs_tsinr.png",
        "speedup": out / "speedup_vs_tsinr.png",
    }
    plotting.render_power_figure(agg, figures["power"])
    plotting.render_speedup_figure(agg, figures["speedup"])
    return {"table": table_path, "figures": figures, "aggregates": agg}


# ---------------------------------------------------------------------------

def _pmap(fn, items, workers: int):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
