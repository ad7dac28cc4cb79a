"""Depth-first branch-and-bound over the binary RRH modes.

The exact search combines bound pruning against the incumbent with
infeasibility pruning (backed by solver certificates) and fathoms fully
fixed nodes, whose relaxation coincides with the fixed-mode problem.  A
learned pruning policy can be layered on top: it is consulted only after
the exact rules keep a node open, so any incumbent it returns is feasible
and its objective can only exceed the true optimum.

Every visited node costs exactly one conic solve, which makes
``SearchStats.socp_solves`` the canonical complexity measure.  Traces of
visited nodes double as the training-data substrate: the exact solver's
trace carries the optimal mode vector, from which optimal-node labels
are derived.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import netgen
from .conic import (FREE, INFEASIBLE, OPTIMAL, Assignment, RelaxationResult,
                    SolverTolerances, solve_relaxation)
from .errors import BudgetExceededError
from .netgen import NetworkInstance

INT_TOL = 1e-5

TRACE_SCHEMA = "v1"


class PruneDecision(Enum):
    KEEP_OPEN = "keep_open"
    PRUNE_BOUND = "prune_bound"
    PRUNE_INFEASIBLE = "prune_infeasible"
    FATHOM_INTEGRAL = "fathom_integral"


def gap_tolerance(objective: float) -> float:
    """Bound-pruning slack: 1e-6 * (1 + |objective|)."""
    return 1e-6 * (1.0 + abs(objective))


@dataclass
class SearchNode:
    assignment: Assignment
    depth: int
    node_id: int
    parent_id: Optional[int] = None
    branch_index: Optional[int] = None
    branch_value: Optional[int] = None
    parent_relaxed_branch_value: Optional[float] = None
    plunge_depth: int = 0
    relaxation: Optional[RelaxationResult] = None


@dataclass
class Incumbent:
    a: np.ndarray
    w: np.ndarray
    objective: float


@dataclass
class SearchStats:
    nodes_expanded: int = 0
    socp_solves: int = 0
    nodes_pruned_bound: int = 0
    nodes_pruned_infeasible: int = 0
    nodes_pruned_policy: int = 0
    incumbent_updates: int = 0
    wall_time: float = 0.0


@dataclass
class SearchLimits:
    max_nodes: Optional[int] = None  # visited nodes == conic solves
    max_seconds: Optional[float] = None


@dataclass
class NodeRecord:
    """What happened at one visited node; enough to replay features and labels."""

    node_id: int
    parent_id: Optional[int]
    fixed_indices: tuple
    fixed_values: tuple
    depth: int
    plunge_depth: int
    branch_index: Optional[int]
    branch_value: Optional[int]
    parent_relaxed_branch_value: Optional[float]
    status: str
    objective: Optional[float]
    relaxed_a: Optional[tuple]
    outcome: str  # branched | pruned_bound | pruned_infeasible | pruned_policy | fathomed
    cert_residual: Optional[float] = None


@dataclass
class SearchTrace:
    """Per-run log of visited nodes; the exact run's trace carries a*."""

    instance_seed: int
    L: int
    root_objective: Optional[float] = None
    optimal_a: Optional[tuple] = None
    optimal_objective: Optional[float] = None
    records: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "instance_seed": self.instance_seed,
            "L": self.L,
            "root_objective": self.root_objective,
            "optimal_a": list(self.optimal_a) if self.optimal_a is not None else None,
            "optimal_objective": self.optimal_objective,
            "records": [vars(r) | {
                "fixed_indices": list(r.fixed_indices),
                "fixed_values": list(r.fixed_values),
                "relaxed_a": list(r.relaxed_a) if r.relaxed_a is not None else None,
            } for r in self.records],
        }

    @staticmethod
    def from_json(doc: dict) -> "SearchTrace":
        if doc.get("schema") != TRACE_SCHEMA:
            raise ValueError(f"unsupported trace schema {doc.get('schema')!r}")
        trace = SearchTrace(
            instance_seed=doc["instance_seed"], L=doc["L"],
            root_objective=doc["root_objective"],
            optimal_a=tuple(doc["optimal_a"]) if doc["optimal_a"] is not None else None,
            optimal_objective=doc.get("optimal_objective"),
        )
        for r in doc["records"]:
            trace.records.append(NodeRecord(
                node_id=r["node_id"], parent_id=r["parent_id"],
                fixed_indices=tuple(r["fixed_indices"]),
                fixed_values=tuple(r["fixed_values"]),
                depth=r["depth"], plunge_depth=r["plunge_depth"],
                branch_index=r["branch_index"], branch_value=r["branch_value"],
                parent_relaxed_branch_value=r["parent_relaxed_branch_value"],
                status=r["status"], objective=r["objective"],
                relaxed_a=tuple(r["relaxed_a"]) if r["relaxed_a"] is not None else None,
                outcome=r["outcome"], cert_residual=r.get("cert_residual"),
            ))
        return trace


def save_trace(trace: SearchTrace, path) -> None:
    Path(path).write_text(json.dumps(trace.to_json()))


def load_trace(path) -> SearchTrace:
    return SearchTrace.from_json(json.loads(Path(path).read_text()))


def select_variable(node: SearchNode) -> int:
    """First-unchosen rule: the smallest still-free RRH index."""
    for i, s in enumerate(node.assignment.status):
        if s == FREE:
            return i
    raise ValueError("cannot branch a fully fixed node")


def branch(node: SearchNode, index: int, next_id: Callable[[], int] | None = None):
    """Children fixing a_index to 0 and to 1 (in that order)."""
    if node.assignment.status[index] != FREE:
        raise ValueError(f"RRH {index} is already fixed at this node")
    parent_val = None
    if node.relaxation is not None and node.relaxation.a is not None:
        parent_val = float(node.relaxation.a[index])
    ids = (next_id() if next_id else node.node_id * 2 + 1,
           next_id() if next_id else node.node_id * 2 + 2)
    children = tuple(
        SearchNode(
            assignment=node.assignment.with_fixed(index, v),
            depth=node.depth + 1,
            node_id=ids[v],
            parent_id=node.node_id,
            branch_index=index,
            branch_value=v,
            parent_relaxed_branch_value=parent_val,
        )
        for v in (0, 1)
    )
    return children


def exact_prune(result: RelaxationResult, incumbent: Optional[Incumbent],
                fully_fixed: bool = True, int_tol: float = INT_TOL) -> PruneDecision:
    """The two safe pruning rules plus integral fathoming at leaves.

    Only fully fixed nodes fathom: the sparsity-inducing relaxation often
    lands on exactly integral points well above the leaves, and fathoming
    there would cut the surviving root-to-leaf path short (breaking the
    2L+1 oracle node count).  A non-leaf integral point is simply branched;
    its off-child reproduces the same point one level down, so no optimum
    is lost and no extra solve is spent at the node itself.
    """
    if result.status == INFEASIBLE:
        return PruneDecision.PRUNE_INFEASIBLE
    if incumbent is not None and result.objective > incumbent.objective - gap_tolerance(incumbent.objective):
        return PruneDecision.PRUNE_BOUND
    frac = np.minimum(result.a, 1.0 - result.a)
    if fully_fixed and np.all(frac <= int_tol):
        return PruneDecision.FATHOM_INTEGRAL
    return PruneDecision.KEEP_OPEN


def incumbent_from_relaxation(instance: NetworkInstance, result: RelaxationResult) -> Incumbent:
    """Round a near-integral relaxed point into a clean feasible incumbent.

    RRH blocks rounded to off are zeroed so the binary power caps hold
    exactly; the objective is recomputed from the physical power formulas.
    """
    a = (np.asarray(result.a) > 0.5).astype(int)
    w = np.array(result.w)
    for l in np.flatnonzero(a == 0):
        w[:, instance.rrh_slice(l)] = 0.0
    obj = netgen.fronthaul_power(a, instance) + netgen.transmit_power(w, instance)
    return Incumbent(a=a, w=w, objective=obj)


PolicyFn = Callable[[np.ndarray, SearchNode], str]


def _run_search(instance: NetworkInstance, policy: Optional[PolicyFn],
                limits: Optional[SearchLimits], tol: Optional[SolverTolerances],
                feature_fn=None):
    """Shared DFS skeleton for the exact and policy-guided searches."""
    from .policy import PRUNE, extract_features

    feature_fn = feature_fn or extract_features
    limits = limits or SearchLimits()
    stats = SearchStats()
    trace = SearchTrace(instance_seed=instance.seed, L=instance.L)
    t0 = time.perf_counter()

    counter = iter(range(10 ** 9))
    next_id = lambda: next(counter)
    root = SearchNode(assignment=Assignment.root(instance.L), depth=0, node_id=next_id())
    stack = [root]
    incumbent: Optional[Incumbent] = None
    last_popped_id: Optional[int] = None
    last_popped_plunge = 0

    def record(node, outcome):
        res = node.relaxation
        trace.records.append(NodeRecord(
            node_id=node.node_id, parent_id=node.parent_id,
            fixed_indices=node.assignment.fixed_indices,
            fixed_values=node.assignment.fixed_values,
            depth=node.depth, plunge_depth=node.plunge_depth,
            branch_index=node.branch_index, branch_value=node.branch_value,
            parent_relaxed_branch_value=node.parent_relaxed_branch_value,
            status=res.status,
            objective=None if res.status == INFEASIBLE else res.objective,
            relaxed_a=None if res.a is None else tuple(float(v) for v in res.a),
            outcome=outcome, cert_residual=res.cert_residual,
        ))

    while stack:
        if limits.max_nodes is not None and stats.socp_solves >= limits.max_nodes:
            stats.wall_time = time.perf_counter() - t0
            raise BudgetExceededError("node budget exhausted", stats=stats, trace=trace)
        if limits.max_seconds is not None and time.perf_counter() - t0 > limits.max_seconds:
            stats.wall_time = time.perf_counter() - t0
            raise BudgetExceededError("time budget exhausted", stats=stats, trace=trace)

        node = stack.pop()
        # consecutive parent->child pops count as a plunge; anything else resets
        if node.parent_id is not None and node.parent_id == last_popped_id:
            node.plunge_depth = last_popped_plunge + 1
        else:
            node.plunge_depth = 0
        last_popped_id, last_popped_plunge = node.node_id, node.plunge_depth
        res = solve_relaxation(instance, node.assignment, tol)
        stats.socp_solves += 1
        node.relaxation = res
        if node.node_id == 0:
            if res.status == INFEASIBLE:
                record(node, "pruned_infeasible")
                stats.nodes_pruned_infeasible += 1
                break
            trace.root_objective = res.objective

        decision = exact_prune(res, incumbent, node.assignment.is_fully_fixed)
        if decision == PruneDecision.PRUNE_INFEASIBLE:
            stats.nodes_pruned_infeasible += 1
            record(node, "pruned_infeasible")
            continue
        if decision == PruneDecision.PRUNE_BOUND:
            stats.nodes_pruned_bound += 1
            record(node, "pruned_bound")
            continue
        if decision == PruneDecision.FATHOM_INTEGRAL:
            candidate = incumbent_from_relaxation(instance, res)
            if incumbent is None or candidate.objective < incumbent.objective:
                incumbent = candidate
                stats.incumbent_updates += 1
            record(node, "fathomed")
            continue

        # node stays open under the exact rules; the policy may still cut it
        if policy is not None and node.branch_index is not None:
            features = feature_fn(instance, node, trace.root_objective)
            if policy(features, node) == PRUNE:
                stats.nodes_pruned_policy += 1
                record(node, "pruned_policy")
                continue

        index = select_variable(node)
        child_off, child_on = branch(node, index, next_id)
        stack.append(child_off)
        stack.append(child_on)  # on-branch explored first
        stats.nodes_expanded += 1
        record(node, "branched")

    stats.wall_time = time.perf_counter() - t0
    if incumbent is not None:
        trace.optimal_a = tuple(int(v) for v in incumbent.a)
        trace.optimal_objective = incumbent.objective
    return incumbent, stats, trace


def solve_exact(instance: NetworkInstance, limits: Optional[SearchLimits] = None,
                tol: Optional[SolverTolerances] = None):
    """Exact depth-first search.

    Returns (incumbent, stats, trace); incumbent is None when the root
    relaxation is infeasible.  The trace's optimal_a is the incumbent's
    mode vector, which makes optimal-node labels deterministic.
    """
    return _run_search(instance, policy=None, limits=limits, tol=tol)


def solve_with_policy(instance: NetworkInstance, policy: PolicyFn,
                      limits: Optional[SearchLimits] = None,
                      tol: Optional[SolverTolerances] = None):
    """Exact search skeleton with an extra learned pruning stage.

    The exact rules stay active, so any returned incumbent is feasible;
    an over-aggressive policy can at worst return None (no solution found).
    """
    return _run_search(instance, policy=policy, limits=limits, tol=tol)


def optimal_node_set(trace: SearchTrace):
    """Predicate: does a node's feasible set contain the traced optimum?"""
    if trace.optimal_a is None:
        raise ValueError("trace does not carry an optimal mode vector")
    a_star = np.asarray(trace.optimal_a)

    def is_optimal(node: SearchNode) -> bool:
        return node.assignment.agrees_with(a_star)

    return is_optimal


def record_is_optimal(record: NodeRecord, optimal_a) -> bool:
    """Same prefix-agreement test, applied to serialized trace records."""
    a_star = np.asarray(optimal_a)
    return all(a_star[i] == v for i, v in zip(record.fixed_indices, record.fixed_values))


def expansion_error_rates(trace: SearchTrace, optimal_a):
    """(eps1, eps2): non-optimal expansion rate and optimal pruning rate."""
    non_opt_seen = non_opt_expanded = opt_seen = opt_pruned = 0
    for r in trace.records:
        if r.node_id == 0:
            continue
        optimal = record_is_optimal(r, optimal_a)
        expanded = r.outcome == "branched"
        pruned = r.outcome in ("pruned_policy", "pruned_bound", "pruned_infeasible")
        if optimal:
            opt_seen += 1
            opt_pruned += pruned
        else:
            non_opt_seen += 1
            non_opt_expanded += expanded
    eps1 = non_opt_expanded / non_opt_seen if non_opt_seen else 0.0
    eps2 = opt_pruned / opt_seen if opt_seen else 0.0
    return eps1, eps2
