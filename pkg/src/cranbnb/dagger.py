"""Imitation learning of the pruning policy with dataset aggregation.

One training iteration walks a depth-first tree on one training problem
where a node is expanded iff it is an optimal node (its fixings agree
with the known optimum) or the current policy votes to keep it.  Forcing
the optimal nodes open means the oracle's keep-decisions are always
observable, while the policy's own mistakes determine which other states
are visited; wherever policy and oracle disagree, the oracle's action is
appended to the aggregate dataset and the classifier is refit.

The first iteration runs under the oracle itself and therefore never
disagrees; it seeds the dataset with all visited judgeable nodes and
their oracle labels instead (flagged in the training report).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bnb
from .bnb import SearchLimits, SearchStats, SearchTrace
from .conic import INFEASIBLE, OPTIMAL, Assignment, SolverTolerances, solve_relaxation
from .errors import BudgetExceededError, ConfigError
from .netgen import NetworkInstance
from .policy import (KEEP, PRUNE, HyperParams, PolicyModel, Sample,
                     extract_features, oracle_policy, train_classifier,
                     tune_threshold)


@dataclass(frozen=True)
class ExactReference:
    """What the exact solver found on one instance; the yardstick for a policy."""

    seed: int
    objective: float
    socp_solves: int
    optimal_a: tuple
    root_objective: float

    @staticmethod
    def from_exact(incumbent, stats: SearchStats, trace: SearchTrace) -> "ExactReference":
        return ExactReference(
            seed=trace.instance_seed, objective=incumbent.objective,
            socp_solves=stats.socp_solves, optimal_a=trace.optimal_a,
            root_objective=trace.root_objective)

    def to_json(self) -> dict:
        return {"seed": self.seed, "objective": self.objective,
                "socp_solves": self.socp_solves, "optimal_a": list(self.optimal_a),
                "root_objective": self.root_objective}

    @staticmethod
    def from_json(doc: dict) -> "ExactReference":
        return ExactReference(seed=doc["seed"], objective=doc["objective"],
                              socp_solves=doc["socp_solves"],
                              optimal_a=tuple(doc["optimal_a"]),
                              root_objective=doc["root_objective"])


def samples_from_trace(instance: NetworkInstance, trace: SearchTrace) -> list[Sample]:
    """Replay a solved trace into (feature, oracle-action) pairs.

    Judgeable nodes are the visited off-children with a feasible
    relaxation: the deployed policy never rules on on-children (the
    on-branch guard keeps them), so those states are not training states.
    Features are recomputed from the recorded node data, no conic solves
    are needed.
    """
    if trace.optimal_a is None:
        raise ValueError("trace has no optimum to label against")
    pc = instance.fronthaul_power
    gains = np.array([instance.channel_gain(l) for l in range(instance.L)])
    out = []
    for r in trace.records:
        if r.node_id == 0 or r.objective is None or r.branch_index is None:
            continue
        if r.branch_value != 0:
            continue
        f = np.array([
            instance.L * float(pc[r.branch_index]) / float(pc.sum()),
            instance.L * gains[r.branch_index] / gains.sum(),
            r.objective / trace.root_objective,
            float(r.parent_relaxed_branch_value),
        ])
        label = KEEP if bnb.record_is_optimal(r, trace.optimal_a) else PRUNE
        out.append(Sample(features=f, label=label,
                          instance_seed=trace.instance_seed, node_id=r.node_id))
    return out


def _imitation_walk(instance: NetworkInstance, optimal_a, policy_fn,
                    tol: Optional[SolverTolerances], limits: Optional[SearchLimits],
                    collect_all: bool):
    """One Algorithm-style training pass over an instance's search tree.

    Expands a non-fathomed node iff it is optimal or the policy keeps it;
    returns (collected samples, visited count, disagreement count).
    """
    limits = limits or SearchLimits()
    a_star = np.asarray(optimal_a)
    counter = iter(range(10 ** 9))
    root = bnb.SearchNode(assignment=Assignment.root(instance.L), depth=0,
                          node_id=next(counter))
    stack = [root]
    samples, visited, disagreements = [], 0, 0
    root_objective = None
    t0 = time.perf_counter()

    while stack:
        if limits.max_nodes is not None and visited >= limits.max_nodes:
            raise BudgetExceededError("node budget exhausted in training walk")
        if limits.max_seconds is not None and time.perf_counter() - t0 > limits.max_seconds:
            raise BudgetExceededError("time budget exhausted in training walk")
        node = stack.pop()
        res = solve_relaxation(instance, node.assignment, tol)
        visited += 1
        node.relaxation = res
        if node.node_id == 0:
            if res.status == INFEASIBLE:
                break
            root_objective = res.objective
        if res.status == INFEASIBLE or node.assignment.is_fully_fixed:
            continue  # fathomed; the policy never acts here

        is_optimal = node.assignment.agrees_with(a_star)
        if node.branch_index is not None:
            features = extract_features(instance, node, root_objective)
            action = policy_fn(features, node)
            if node.branch_value == 0:
                # only off-children are classifier states; on-children are
                # covered by the on-branch guard at deployment
                oracle_label = KEEP if is_optimal else PRUNE
                if action != oracle_label:
                    disagreements += 1
                if collect_all or action != oracle_label:
                    samples.append(Sample(features=features, label=oracle_label,
                                          instance_seed=instance.seed,
                                          node_id=node.node_id))
            expand = is_optimal or action == KEEP
        else:
            expand = True  # the root is expanded unconditionally

        if expand:
            index = bnb.select_variable(node)
            child_off, child_on = bnb.branch(node, index, lambda: next(counter))
            stack.append(child_off)
            stack.append(child_on)

    return samples, visited, disagreements


@dataclass
class TrainRunConfig:
    train_instances: list
    train_traces: list
    val_instances: list
    val_references: list
    val_traces: list = field(default_factory=list)
    hyper_grid: tuple = (HyperParams(),)
    seed: int = 0
    limits: Optional[SearchLimits] = None
    tol: Optional[SolverTolerances] = None
    retrain_every: int = 1
    candidate_count: int = 8
    max_optimal_prune_rate: float = 0.05

    def validate(self):
        if not self.train_instances:
            raise ConfigError("training set is empty")
        if len(self.train_instances) != len(self.train_traces):
            raise ConfigError("one trace per training instance required")
        if len(self.val_instances) != len(self.val_references):
            raise ConfigError("one exact reference per validation instance required")
        train_seeds = {i.seed for i in self.train_instances}
        val_seeds = {i.seed for i in self.val_instances}
        if train_seeds & val_seeds:
            raise ConfigError("training and validation seeds overlap")


@dataclass
class TrainingReport:
    iterations: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    chosen_index: int = -1
    total_samples: int = 0
    bootstrap_note: str = ("iteration 1 runs under the oracle and collects all "
                           "visited judgeable nodes, not just disagreements")
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "schema": "v1",
            "iterations": self.iterations,
            "candidates": self.candidates,
            "chosen_index": self.chosen_index,
            "total_samples": self.total_samples,
            "bootstrap_note": self.bootstrap_note,
            "wall_time": self.wall_time,
        }


_SHIFT_QUANTILES = (0.0, 0.5, 0.75, 0.9, 0.95, 0.99)


def _shift_candidates(model: PolicyModel, samples) -> list[float]:
    """Ascending threshold shifts spanning aggressive to conservative."""
    keep_d = [model.decision_value(s.features) for s in samples if s.label == KEEP]
    if not keep_d:
        return [0.0]
    shifts = {max(0.0, float(np.quantile(keep_d, q))) for q in _SHIFT_QUANTILES}
    return sorted(shifts)


def _tune_on_validation(raw: PolicyModel, samples, config: TrainRunConfig):
    """Pick the most aggressive shift whose realized validation behavior
    keeps the optimal-node-pruning rate within the cap and never loses the
    solution.  Returns [(model, metrics)] for every shift evaluated, the
    compliant one last."""
    from dataclasses import replace

    evaluated = []
    for shift in _shift_candidates(raw, samples):
        candidate = replace(raw, threshold_shift=shift)
        m = evaluate_policy(candidate, config.val_instances, config.val_references,
                            tol=config.tol, limits=config.limits)
        evaluated.append((candidate, m))
        if m.n_notfound == 0 and m.mean_eps2 <= config.max_optimal_prune_rate:
            break  # smallest compliant shift wins; larger ones only keep more
    return evaluated


def dagger_train(config: TrainRunConfig):
    """Run the aggregation loop over the training problems for each
    hyperparameter combo, then pick the best stored policy on validation.

    Returns (PolicyModel, TrainingReport).
    """
    config.validate()
    t0 = time.perf_counter()
    report = TrainingReport()

    tuning_samples = []
    for inst, trace in zip(config.val_instances, config.val_traces):
        tuning_samples.extend(samples_from_trace(inst, trace))

    n = len(config.train_instances)
    retrain_ks = [k for k in range(1, n + 1)
                  if k % config.retrain_every == 0 or k == n]
    picks = np.unique(np.linspace(0, len(retrain_ks) - 1,
                                  min(config.candidate_count, len(retrain_ks))).astype(int))
    checkpoint_ks = {retrain_ks[i] for i in picks}

    candidates = []  # (hyper, k, model, metrics)
    for hyper in config.hyper_grid:
        aggregate: list[Sample] = []
        model: Optional[PolicyModel] = None
        for k in range(1, n + 1):
            inst = config.train_instances[k - 1]
            trace = config.train_traces[k - 1]
            if k == 1 or model is None:
                walk_policy = oracle_policy(trace.optimal_a)
                collect_all = True
            else:
                walk_policy = model.as_search_policy()
                collect_all = False
            t_it = time.perf_counter()
            entry = {"hyper": [hyper.C, hyper.gamma], "k": k,
                     "instance_seed": inst.seed}
            try:
                new, visited, disagreements = _imitation_walk(
                    inst, trace.optimal_a, walk_policy, config.tol,
                    config.limits, collect_all)
            except BudgetExceededError as exc:
                entry.update(skipped=True, reason=str(exc))
                report.iterations.append(entry)
                continue
            aggregate.extend(new)
            if k in retrain_ks:
                raw = train_classifier(aggregate, hyper, config.seed)
                if k in checkpoint_ks and config.val_instances:
                    evaluated = _tune_on_validation(raw, tuning_samples or aggregate,
                                                    config)
                    for cand, m in evaluated:
                        candidates.append((hyper, k, cand, m))
                    model = evaluated[-1][0]  # compliant (or most conservative)
                else:
                    model = tune_threshold(raw, tuning_samples or aggregate,
                                           config.max_optimal_prune_rate)
            entry.update(skipped=False, visited=visited,
                         new_samples=len(new), disagreements=disagreements,
                         dataset_size=len(aggregate),
                         wall_time=time.perf_counter() - t_it)
            report.iterations.append(entry)
        report.total_samples = max(report.total_samples, len(aggregate))

    if not candidates:
        raise ConfigError("no candidate policies were trained (empty validation set "
                          "or every iteration skipped)")
    metrics = []
    for hyper, k, model, m in candidates:
        metrics.append(m)
        report.candidates.append({
            "hyper": [hyper.C, hyper.gamma], "k": k,
            "threshold_shift": model.threshold_shift,
            "n_notfound": m.n_notfound, "mean_gap": m.mean_gap,
            "mean_speedup": m.mean_speedup, "mean_eps1": m.mean_eps1,
            "mean_eps2": m.mean_eps2,
        })
    best = validation_select(metrics)
    report.chosen_index = best
    report.wall_time = time.perf_counter() - t0
    return candidates[best][2], report


@dataclass
class InstanceEval:
    seed: int
    tsinr_db: float
    notfound: bool
    objective: float  # inf when not found
    gap: float  # inf when not found
    speedup: float
    socp_solves: int
    eps1: float
    eps2: float


@dataclass
class EvalMetrics:
    rows: list
    n_notfound: int
    mean_gap: float  # over found instances
    mean_speedup: float
    mean_eps1: float
    mean_eps2: float
    mean_solves_exact: float
    mean_solves_policy: float
    power_by_tsinr: dict

    @property
    def solve_reduction(self) -> float:
        return self.mean_solves_exact / self.mean_solves_policy


def as_policy_fn(p):
    if isinstance(p, PolicyModel):
        return p.as_search_policy()
    return p


def evaluate_policy(p, instances, references, tol=None, limits=None) -> EvalMetrics:
    """Gap/speedup/error-rate metrics of a pruning policy against exact references."""
    if len(instances) != len(references):
        raise ValueError("instances and references must align one-to-one")
    for inst, ref in zip(instances, references):
        if inst.seed != ref.seed:
            raise ValueError(f"reference seed {ref.seed} does not match instance {inst.seed}")
    policy_fn = as_policy_fn(p)
    rows = []
    for inst, ref in zip(instances, references):
        incumbent, stats, trace = bnb.solve_with_policy(inst, policy_fn, limits, tol)
        eps1, eps2 = bnb.expansion_error_rates(trace, ref.optimal_a)
        tsinr = round(10.0 * math.log10(float(inst.sinr_targets[0])), 6)
        if incumbent is None:
            rows.append(InstanceEval(seed=inst.seed, tsinr_db=tsinr, notfound=True,
                                     objective=math.inf, gap=math.inf,
                                     speedup=ref.socp_solves / stats.socp_solves,
                                     socp_solves=stats.socp_solves,
                                     eps1=eps1, eps2=eps2))
            continue
        gap = (incumbent.objective - ref.objective) / ref.objective
        rows.append(InstanceEval(seed=inst.seed, tsinr_db=tsinr, notfound=False,
                                 objective=incumbent.objective, gap=gap,
                                 speedup=ref.socp_solves / stats.socp_solves,
                                 socp_solves=stats.socp_solves,
                                 eps1=eps1, eps2=eps2))
    found = [r for r in rows if not r.notfound]
    by_tsinr = {}
    for r in found:
        by_tsinr.setdefault(r.tsinr_db, []).append(r.objective)
    return EvalMetrics(
        rows=rows,
        n_notfound=sum(r.notfound for r in rows),
        mean_gap=float(np.mean([r.gap for r in found])) if found else math.inf,
        mean_speedup=float(np.mean([r.speedup for r in rows])),
        mean_eps1=float(np.mean([r.eps1 for r in rows])),
        mean_eps2=float(np.mean([r.eps2 for r in rows])),
        mean_solves_exact=float(np.mean([ref.socp_solves for ref in references])),
        mean_solves_policy=float(np.mean([r.socp_solves for r in rows])),
        power_by_tsinr={t: float(np.mean(v)) for t, v in sorted(by_tsinr.items())},
    )


def validation_select(metrics: list[EvalMetrics]) -> int:
    """Fewest failures, then lowest gap, then highest speedup, then first.

    Gaps compare at 0.1% granularity so the speedup rule can actually break
    near-ties; exact float comparison would make it dead code.
    """
    if not metrics:
        raise ValueError("no candidates to select from")
    keys = [(m.n_notfound, round(m.mean_gap, 3) if math.isfinite(m.mean_gap) else math.inf,
             -m.mean_speedup, i)
            for i, m in enumerate(metrics)]
    return min(range(len(metrics)), key=lambda i: keys[i])
