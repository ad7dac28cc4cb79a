"""Second-order cone programs for the RRH-selection/beamforming relaxation.

The complex program is embedded over the reals: each user's beamformer
w_k in C^N becomes the stacked pair [Re(w_k); Im(w_k)] in R^{2N}, and a
complex inner product h^H w realifies as the 2x2 rotation
Re = Re(h)'Re(w) + Im(h)'Im(w), Im = Re(h)'Im(w) - Im(h)'Re(w).

Variable layout of the relaxation: [w_real(2NK), a(L), t(L)] where a_l is
the (possibly fixed) RRH mode and t_l the epigraph of RRH l's transmit
power.  Cones:

  * per-user SINR:  ||(h_k^H w_i)_{i != k}, sigma_k|| <= Re(h_k^H w_k)/sqrt(gamma_k)
  * per-RRH cap:    ||(w_lk)_k|| <= a_l * sqrt(P_l)
  * epigraph:       sum_k ||w_lk||^2 <= t_l   (as a standard SOC)

Objective: sum_l a_l*Pc_l + sum_l t_l/eta_l.  Rows of each SINR cone are
scaled by 1/sigma_k, which leaves the feasible set and objective unchanged
but keeps the data well conditioned for physical channel magnitudes.

Solves are delegated to Clarabel (interior-point on the homogeneous
embedding), which supplies the infeasibility certificates the exact
pruning rule relies on.  Identical programs yield bit-identical results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .errors import ConfigError, DimensionError, NonConvergedError
from .netgen import NetworkInstance

FREE = -1

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

_solve_calls = 0


def solve_calls() -> int:
    """Process-wide count of conic solves; used to audit instrumentation."""
    return _solve_calls


@dataclass(frozen=True)
class Assignment:
    """Per-RRH fixing status: -1 free, 0 fixed off, 1 fixed on."""

    status: tuple[int, ...]

    def __post_init__(self):
        if any(s not in (FREE, 0, 1) for s in self.status):
            raise ConfigError("assignment entries must be -1, 0 or 1")

    @staticmethod
    def root(L: int) -> "Assignment":
        return Assignment(status=(FREE,) * L)

    def __len__(self) -> int:
        return len(self.status)

    @property
    def fixed_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.status) if s != FREE)

    @property
    def fixed_values(self) -> tuple[int, ...]:
        return tuple(s for s in self.status if s != FREE)

    @property
    def free_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.status) if s == FREE)

    @property
    def is_fully_fixed(self) -> bool:
        return all(s != FREE for s in self.status)

    def with_fixed(self, index: int, value: int) -> "Assignment":
        if self.status[index] != FREE:
            raise ValueError(f"RRH {index} is already fixed")
        if value not in (0, 1):
            raise ValueError("fixed value must be 0 or 1")
        st = list(self.status)
        st[index] = value
        return Assignment(status=tuple(st))

    def agrees_with(self, a) -> bool:
        """True iff every fixing matches binary vector a (so a is in this node's feasible set)."""
        a = np.asarray(a)
        return all(a[i] == s for i, s in enumerate(self.status) if s != FREE)


@dataclass
class SolverTolerances:
    abs_gap: float = 1e-8
    rel_gap: float = 1e-7
    feas: float = 1e-8
    infeas_cert: float = 1e-6
    max_iter: int = 200


@dataclass
class ConicProgram:
    """Standard-form container: rows are affine expressions with cone membership.

    Each row is (entries, const) with entries a list of (var, coeff);
    the row value is coeff.x + const.  Zero rows must equal 0, nonneg rows
    must be >= 0, and each SOC block [(t row), (u rows...)] demands
    t >= ||u||.
    """

    num_vars: int
    objective: np.ndarray
    zero_rows: list = field(default_factory=list)
    nonneg_rows: list = field(default_factory=list)
    soc_blocks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_zero(self, entries, const=0.0):
        self.zero_rows.append((list(entries), float(const)))

    def add_nonneg(self, entries, const=0.0):
        self.nonneg_rows.append((list(entries), float(const)))

    def add_soc(self, rows):
        self.soc_blocks.append([(list(e), float(c)) for e, c in rows])

    def objective_value(self, x) -> float:
        return float(self.objective @ np.asarray(x))

    def assemble(self):
        """Clarabel triple (q, A, b, cones) with s = b - Ax in the cone product."""
        rows_i, cols, vals, b = [], [], [], []

        def put(row_list):
            for entries, const in row_list:
                r = len(b)
                for c, v in entries:
                    rows_i.append(r)
                    cols.append(c)
                    vals.append(-float(v))
                b.append(const)

        cones = []
        if self.zero_rows:
            put(self.zero_rows)
            cones.append(clarabel.ZeroConeT(len(self.zero_rows)))
        if self.nonneg_rows:
            put(self.nonneg_rows)
            cones.append(clarabel.NonnegativeConeT(len(self.nonneg_rows)))
        for block in self.soc_blocks:
            put(block)
            cones.append(clarabel.SecondOrderConeT(len(block)))
        A = sparse.csc_matrix((vals, (rows_i, cols)), shape=(len(b), self.num_vars))
        return self.objective, A, np.array(b), cones

    def to_json(self) -> dict:
        def rows(rs):
            return [{"entries": [[int(c), float(v)] for c, v in e], "const": const}
                    for e, const in rs]

        return {
            "schema": "v1",
            "num_vars": self.num_vars,
            "objective": [float(v) for v in self.objective],
            "zero_rows": rows(self.zero_rows),
            "nonneg_rows": rows(self.nonneg_rows),
            "soc_blocks": [rows(blk) for blk in self.soc_blocks],
            "meta": {k: v for k, v in self.meta.items() if not isinstance(v, np.ndarray)},
        }


@dataclass
class RelaxationResult:
    status: str  # OPTIMAL or INFEASIBLE
    a: np.ndarray | None
    w: np.ndarray | None  # (K, N) complex
    objective: float  # +inf when infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    cert_residual: float | None = None  # infeasibility certificate quality
    solve_time: float = 0.0


def _w_index(K: int, N: int, k: int, part: int, j: int) -> int:
    """Flat index of Re (part=0) / Im (part=1) of antenna j in user k's block."""
    return 2 * N * k + part * N + j


def add_sinr_cones(program: ConicProgram, instance: NetworkInstance) -> None:
    """Append one SINR cone per user over the w variables of `program`.

    Assumes the w layout of `_w_index`; rows are scaled by 1/sigma_k for
    conditioning (feasible set unchanged).
    """
    K, N = instance.K, instance.N
    for k in range(K):
        sig = math.sqrt(float(instance.noise_vars[k]))
        hr = instance.channels[k].real / sig
        hi = instance.channels[k].imag / sig
        inv_sqrt_gamma = 1.0 / math.sqrt(float(instance.sinr_targets[k]))
        rows = []
        t_entries = [(_w_index(K, N, k, 0, j), hr[j] * inv_sqrt_gamma) for j in range(N)]
        t_entries += [(_w_index(K, N, k, 1, j), hi[j] * inv_sqrt_gamma) for j in range(N)]
        rows.append((t_entries, 0.0))
        for i in range(K):
            if i == k:
                continue
            re_row = [(_w_index(K, N, i, 0, j), hr[j]) for j in range(N)]
            re_row += [(_w_index(K, N, i, 1, j), hi[j]) for j in range(N)]
            rows.append((re_row, 0.0))
            im_row = [(_w_index(K, N, i, 1, j), hr[j]) for j in range(N)]
            im_row += [(_w_index(K, N, i, 0, j), -hi[j]) for j in range(N)]
            rows.append((im_row, 0.0))
        rows.append(([], 1.0))  # sigma_k / sigma_k
        program.add_soc(rows)


def build_relaxation(instance: NetworkInstance, assignment: Assignment) -> ConicProgram:
    """Assemble the node relaxation with the assignment's fixings pinned.

    Fixed a_l are pinned by equality; free ones are boxed in [0, 1].
    """
    if len(assignment) != instance.L:
        raise DimensionError("assignment length must equal L")
    L, K, N = instance.L, instance.K, instance.N
    nw = 2 * N * K
    num_vars = nw + 2 * L
    a_off, t_off = nw, nw + L

    obj = np.zeros(num_vars)
    obj[a_off:a_off + L] = instance.fronthaul_power
    obj[t_off:t_off + L] = 1.0 / instance.amp_efficiency

    prog = ConicProgram(num_vars=num_vars, objective=obj, meta={
        "kind": "relaxation",
        "L": L, "K": K, "N": N,
        "antennas": list(instance.antennas),
        "a_offset": a_off, "t_offset": t_off,
        "fixed": {int(i): int(v) for i, v in
                  zip(assignment.fixed_indices, assignment.fixed_values)},
        "instance_seed": instance.seed,
    })

    for l in range(L):
        s = assignment.status[l]
        if s == FREE:
            prog.add_nonneg([(a_off + l, 1.0)], 0.0)   # a_l >= 0
            prog.add_nonneg([(a_off + l, -1.0)], 1.0)  # a_l <= 1
        else:
            prog.add_zero([(a_off + l, 1.0)], -float(s))

    add_sinr_cones(prog, instance)

    for l in range(L):
        sl = instance.rrh_slice(l)
        rows = [([(a_off + l, math.sqrt(float(instance.max_tx_power[l])))], 0.0)]
        for k in range(K):
            for j in range(sl.start, sl.stop):
                rows.append(([(_w_index(K, N, k, 0, j), 1.0)], 0.0))
                rows.append(([(_w_index(K, N, k, 1, j), 1.0)], 0.0))
        prog.add_soc(rows)

    # sum_k ||w_lk||^2 <= t_l  <=>  ||[w_l; (t_l-1)/2]|| <= (t_l+1)/2
    for l in range(L):
        sl = instance.rrh_slice(l)
        rows = [([(t_off + l, 0.5)], 0.5)]
        for k in range(K):
            for j in range(sl.start, sl.stop):
                rows.append(([(_w_index(K, N, k, 0, j), 1.0)], 0.0))
                rows.append(([(_w_index(K, N, k, 1, j), 1.0)], 0.0))
        rows.append(([(t_off + l, 0.5)], -0.5))
        prog.add_soc(rows)

    return prog


def solve_conic(program: ConicProgram, tol: SolverTolerances | None = None) -> RelaxationResult:
    """Solve a program to optimality or produce an infeasibility certificate.

    Raises NonConvergedError for any other solver outcome; a budget- or
    accuracy-limited verdict is never reported as Optimal/Infeasible.
    """
    global _solve_calls
    tol = tol or SolverTolerances()
    q, A, b, cones = program.assemble()
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol.abs_gap
    settings.tol_gap_rel = tol.rel_gap
    settings.tol_feas = tol.feas
    settings.max_iter = tol.max_iter
    P = sparse.csc_matrix((program.num_vars, program.num_vars))
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    _solve_calls += 1
    status = str(sol.status)

    if status == "Solved":
        x = np.asarray(sol.x)
        a = w = None
        if "K" in program.meta and "N" in program.meta:
            w = _extract_w(x, program.meta["K"], program.meta["N"])
        if program.meta.get("a_offset") is not None:
            a_off, L = program.meta["a_offset"], program.meta["L"]
            a = np.clip(x[a_off:a_off + L], 0.0, 1.0)
            for i, v in program.meta.get("fixed", {}).items():
                a[int(i)] = float(v)
        return RelaxationResult(
            status=OPTIMAL, a=a, w=w, objective=float(sol.obj_val),
            iterations=int(sol.iterations), primal_residual=float(sol.r_prim),
            dual_residual=float(sol.r_dual), solve_time=float(sol.solve_time),
        )

    if status == "PrimalInfeasible":
        z = np.asarray(sol.z)
        btz = float(b @ z)
        resid = float(np.abs(A.T @ z).max()) / max(-btz, np.finfo(float).tiny)
        if btz >= 0 or resid > tol.infeas_cert:
            raise NonConvergedError(
                f"infeasibility certificate too weak (residual {resid:.2e})", status=status)
        return RelaxationResult(
            status=INFEASIBLE, a=None, w=None, objective=math.inf,
            iterations=int(sol.iterations), primal_residual=float(sol.r_prim),
            dual_residual=float(sol.r_dual), cert_residual=resid,
            solve_time=float(sol.solve_time),
        )

    raise NonConvergedError(f"conic solver returned {status}", status=status)


def _extract_w(x: np.ndarray, K: int, N: int) -> np.ndarray:
    w = np.empty((K, N), dtype=complex)
    for k in range(K):
        blk = x[2 * N * k:2 * N * (k + 1)]
        w[k] = blk[:N] + 1j * blk[N:]
    return w


def solve_relaxation(instance: NetworkInstance, assignment: Assignment,
                     tol: SolverTolerances | None = None) -> RelaxationResult:
    return solve_conic(build_relaxation(instance, assignment), tol)


def solve_fixed(instance: NetworkInstance, a,
                tol: SolverTolerances | None = None) -> RelaxationResult:
    """Solve the problem with the binary mode vector pinned; objective includes f1(a)."""
    a = np.asarray(a)
    if a.shape != (instance.L,):
        raise DimensionError(f"mode vector must have length {instance.L}")
    if not np.all(np.isin(a, (0, 1))):
        raise ConfigError("solve_fixed requires a binary mode vector")
    assignment = Assignment(status=tuple(int(v) for v in a))
    return solve_relaxation(instance, assignment, tol)


def program_to_json_str(program: ConicProgram) -> str:
    return json.dumps(program.to_json())
