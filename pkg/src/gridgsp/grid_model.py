"""Multi-phase network model: case ingestion, admittance assembly, AC power flow.

A case describes an unbalanced distribution network as buses carrying a subset
of the phases {a, b, c}, lines with complex per-phase admittance blocks, and
optionally smart inverters. Everything downstream (the real shift operator,
estimation, forecasting, voltage control) is driven by the node ordering and
the complex bus admittance matrix defined here.

Conventions:
    - per-unit throughout; case files carry ``base_kv`` / ``base_mva`` and line
      blocks in siemens, normalized on load by y_base = base_mva / base_kv**2.
    - node ordering: buses in declaration order, phases a < b < c within a bus.
    - injections are positive into the network; loads are negative.
    - exactly one slack bus, held at nominal 120-degree-separated voltages.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field

import numpy as np

PHASES = ("a", "b", "c")

# nominal phase rotation: a at 0, b at -120 deg, c at +120 deg
PHASE_ANGLE = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}


class CaseError(Exception):
    """Base class for case file problems."""


class CaseParseError(CaseError):
    """Malformed case document (missing/ill-typed field)."""


class CaseValidationError(CaseError):
    """Structurally parsed case violating a model invariant."""


class PowerFlowError(Exception):
    """Power flow did not converge (infeasible or extreme injections)."""


class SingularNetworkError(Exception):
    """Reduced admittance is singular, i.e. some island has no slack."""


@dataclass(frozen=True, order=True)
class NodeIndex:
    """A single electrical node: one phase of one bus."""

    bus: str
    phase: str

    def __str__(self) -> str:
        return f"{self.bus}.{self.phase}"


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    kind: str  # "slack" | "load"


@dataclass(frozen=True)
class LineBranch:
    """A line between two buses on a subset of their phases.

    ``y_series`` is the series admittance block (the term multiplying the
    bus's own voltage in its current balance); the block coupling to the
    other end is ``-y_series``. ``y_shunt`` is the total line shunt, split
    half per end.
    """

    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    y_series: np.ndarray  # complex (p, p)
    y_shunt: np.ndarray  # complex (p, p)

    @property
    def y_transfer(self) -> np.ndarray:
        """Block multiplying the far-end voltage (equals -y_series)."""
        return -self.y_series


@dataclass(frozen=True)
class InverterSpec:
    """Per-phase smart inverter: apparent-power rating caps p**2 + q**2."""

    node: NodeIndex
    s_rating: float
    p_actual: float = 0.0


@dataclass
class GridCase:
    """Validated network description with a fixed total node ordering."""

    buses: list[Bus]
    lines: list[LineBranch]
    inverters: list[InverterSpec]
    base_kv: float
    base_mva: float
    name: str = "case"
    nodes: list[NodeIndex] = field(init=False)
    _node_pos: dict[NodeIndex, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = [
            NodeIndex(b.id, ph) for b in self.buses for ph in b.phases
        ]
        self._node_pos = {n: i for i, n in enumerate(self.nodes)}
        _validate_case(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind == "slack")

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def node_index(self, bus: str, phase: str) -> int:
        return self._node_pos[NodeIndex(bus, phase)]

    def node_indices(self, bus_id: str) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.bus == bus_id]

    @property
    def slack_node_indices(self) -> list[int]:
        return self.node_indices(self.slack_bus.id)

    @property
    def nonslack_node_indices(self) -> list[int]:
        slack = self.slack_bus.id
        return [i for i, n in enumerate(self.nodes) if n.bus != slack]

    def nominal_voltage(self) -> np.ndarray:
        """Flat profile: unit magnitude at the nominal phase rotation."""
        return np.array(
            [cmath.exp(1j * PHASE_ANGLE[n.phase]) for n in self.nodes]
        )


@dataclass(frozen=True)
class OperatingPoint:
    """A solved network state: voltages, net currents and net powers."""

    v: np.ndarray  # complex voltage phasor per node
    i: np.ndarray  # complex net injected current per node, i = Y v
    s: np.ndarray  # complex net injected power per node, s = v * conj(i)
    iterations: int = 0


def _phase_key(ph: str) -> int:
    return PHASES.index(ph)


def _validate_phases(phases, where: str) -> tuple[str, ...]:
    if not phases:
        raise CaseValidationError(f"{where}: empty phase set")
    bad = [p for p in phases if p not in PHASES]
    if bad:
        raise CaseValidationError(f"{where}: unknown phases {bad}")
    if len(set(phases)) != len(phases):
        raise CaseValidationError(f"{where}: duplicate phases {phases}")
    return tuple(sorted(phases, key=_phase_key))


def _validate_case(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseValidationError(f"duplicate bus id(s): {dup}")
    slacks = [b for b in case.buses if b.kind == "slack"]
    if len(slacks) != 1:
        raise CaseValidationError(
            f"exactly one slack bus required, found {len(slacks)}"
        )
    for b in case.buses:
        if b.kind not in ("slack", "load"):
            raise CaseValidationError(f"bus {b.id}: unknown kind {b.kind!r}")
    by_id = {b.id: b for b in case.buses}
    for ln in case.lines:
        where = f"line {ln.from_bus}-{ln.to_bus}"
        for end in (ln.from_bus, ln.to_bus):
            if end not in by_id:
                raise CaseValidationError(f"{where}: unknown bus {end!r}")
        if ln.from_bus == ln.to_bus:
            raise CaseValidationError(f"{where}: self-loop")
        for end in (ln.from_bus, ln.to_bus):
            missing = set(ln.phases) - set(by_id[end].phases)
            if missing:
                raise CaseValidationError(
                    f"{where}: phases {sorted(missing)} not present at bus {end}"
                )
        p = len(ln.phases)
        for nm, blk in (("y_series", ln.y_series), ("y_shunt", ln.y_shunt)):
            if blk.shape != (p, p):
                raise CaseValidationError(
                    f"{where}: {nm} shape {blk.shape}, expected {(p, p)}"
                )
            if not np.allclose(blk, blk.T, atol=1e-12):
                raise CaseValidationError(f"{where}: {nm} not symmetric")
    # bus-level connectivity
    if case.lines or len(case.buses) > 1:
        adj: dict[str, set[str]] = {b.id: set() for b in case.buses}
        for ln in case.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen = {case.buses[0].id}
        stack = [case.buses[0].id]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(case.buses):
            missing = sorted(set(ids) - seen)
            raise CaseValidationError(f"bus graph disconnected: {missing}")
    for inv in case.inverters:
        if inv.node not in case._node_pos:
            raise CaseValidationError(f"inverter at unknown node {inv.node}")
        if inv.s_rating <= 0:
            raise CaseValidationError(f"inverter {inv.node}: s_rating <= 0")
        if not 0.0 <= inv.p_actual <= inv.s_rating:
            raise CaseValidationError(
                f"inverter {inv.node}: p_actual outside [0, s_rating]"
            )


def _complex_block(raw, where: str) -> np.ndarray:
    """Decode a matrix of [re, im] pairs into a complex ndarray."""
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CaseParseError(f"{where}: not a numeric array: {exc}") from None
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise CaseParseError(
            f"{where}: expected square matrix of [re, im] pairs, got shape {arr.shape}"
        )
    return arr[..., 0] + 1j * arr[..., 1]


def _pairs_from_complex(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.atleast_2d(m)]


def load_case(path) -> GridCase:
    """Load and validate a JSON case file.

    Top-level keys: ``buses``, ``lines``, ``inverters``, ``base_kv``,
    ``base_mva``. Complex entries are [re, im] pairs; line blocks are given
    in siemens and normalized to per-unit here. Raises :class:`CaseParseError`
    for malformed documents and :class:`CaseValidationError` when a parsed
    case breaks a model invariant (duplicate bus, disconnected graph, ...).
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseParseError(f"{path}: invalid JSON: {exc}") from None
    return case_from_dict(doc, name=str(path))


def case_from_dict(doc: dict, name: str = "case") -> GridCase:
    for key in ("buses", "lines", "base_kv", "base_mva"):
        if key not in doc:
            raise CaseParseError(f"missing top-level key {key!r}")
    try:
        base_kv = float(doc["base_kv"])
        base_mva = float(doc["base_mva"])
    except (TypeError, ValueError):
        raise CaseParseError("base_kv/base_mva must be numbers") from None
    if base_kv <= 0 or base_mva <= 0:
        raise CaseParseError("base_kv/base_mva must be positive")
    y_base = base_mva / base_kv**2

    buses = []
    for k, b in enumerate(doc["buses"]):
        where = f"buses[{k}]"
        try:
            bid = str(b["id"])
            phases = _validate_phases(b["phases"], where)
            kind = str(b.get("kind", "load"))
        except (KeyError, TypeError) as exc:
            raise CaseParseError(f"{where}: {exc}") from None
        buses.append(Bus(bid, phases, kind))

    lines = []
    for k, ln in enumerate(doc["lines"]):
        where = f"lines[{k}]"
        try:
            frm, to = str(ln["from"]), str(ln["to"])
            phases = _validate_phases(ln["phases"], where)
            ys = _complex_block(ln["y_series"], f"{where}.y_series") / y_base
            ysh = _complex_block(ln["y_shunt"], f"{where}.y_shunt") / y_base
        except KeyError as exc:
            raise CaseParseError(f"{where}: missing field {exc}") from None
        lines.append(LineBranch(frm, to, phases, ys, ysh))

    inverters = []
    for k, inv in enumerate(doc.get("inverters", [])):
        where = f"inverters[{k}]"
        try:
            node = NodeIndex(str(inv["bus"]), str(inv["phase"]))
            s_rating = float(inv["s_rating"])
            p_actual = float(inv.get("p_actual", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise CaseParseError(f"{where}: {exc}") from None
        inverters.append(InverterSpec(node, s_rating, p_actual))

    return GridCase(buses, lines, inverters, base_kv, base_mva, name=name)


def case_to_dict(case: GridCase) -> dict:
    """Inverse of :func:`case_from_dict` (line blocks back in siemens)."""
    y_base = case.base_mva / case.base_kv**2
    return {
        "base_kv": case.base_kv,
        "base_mva": case.base_mva,
        "buses": [
            {"id": b.id, "phases": list(b.phases), "kind": b.kind}
            for b in case.buses
        ],
        "lines": [
            {
                "from": ln.from_bus,
                "to": ln.to_bus,
                "phases": list(ln.phases),
                "y_series": _pairs_from_complex(ln.y_series * y_base),
                "y_shunt": _pairs_from_complex(ln.y_shunt * y_base),
            }
            for ln in case.lines
        ],
        "inverters": [
            {
                "bus": inv.node.bus,
                "phase": inv.node.phase,
                "s_rating": inv.s_rating,
                "p_actual": inv.p_actual,
            }
            for inv in case.inverters
        ],
    }


def _line_slices(case: GridCase, ln: LineBranch) -> tuple[np.ndarray, np.ndarray]:
    """Global node indices of the line's phases at each end."""
    fi = np.array([case.node_index(ln.from_bus, p) for p in ln.phases])
    ti = np.array([case.node_index(ln.to_bus, p) for p in ln.phases])
    return fi, ti


def assemble_admittance(case: GridCase) -> np.ndarray:
    """Complex bus admittance matrix Y (dense, per-unit).

    Each line adds its series block plus half its shunt to both end diagonal
    blocks and the transfer block (-series) to both off-diagonal blocks, so Y
    is symmetric by construction.
    """
    n = case.n_nodes
    y = np.zeros((n, n), dtype=complex)
    for ln in case.lines:
        fi, ti = _line_slices(case, ln)
        # exact symmetrization so Y == Y.T bit-for-bit
        ser = 0.5 * (ln.y_series + ln.y_series.T)
        sh = 0.5 * (ln.y_shunt + ln.y_shunt.T)
        blk = ser + 0.5 * sh
        y[np.ix_(fi, fi)] += blk
        y[np.ix_(ti, ti)] += blk
        y[np.ix_(fi, ti)] += -ser
        y[np.ix_(ti, fi)] += -ser
    return y


def compute_injections(v, y: np.ndarray) -> np.ndarray:
    """Net complex power injections s = v o conj(Y v)."""
    vv = v.v if isinstance(v, OperatingPoint) else np.asarray(v)
    if vv.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: v {vv.shape} vs Y {y.shape}")
    return vv * np.conj(y @ vv)


def solve_power_flow(
    case: GridCase,
    injections: np.ndarray,
    slack_voltage: np.ndarray | None = None,
    y: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    v0: np.ndarray | None = None,
) -> OperatingPoint:
    """Z-bus fixed-point AC power flow.

    ``injections`` is a full-length complex vector of requested net powers;
    entries at the slack bus's nodes are ignored (the slack absorbs the
    mismatch). Iterates i_d = conj(s_d / v_d), v_d = Y_dd^-1 (i_d - Y_ds v_s)
    until the voltage update falls below ``tol`` (infinity norm), then checks
    the power residual at non-slack nodes against 1e-8 p.u.

    Raises :class:`PowerFlowError` on non-convergence and
    :class:`SingularNetworkError` when the slack-reduced admittance block is
    singular (an island with no slack).
    """
    injections = np.asarray(injections, dtype=complex)
    if injections.shape != (case.n_nodes,):
        raise ValueError(
            f"injections shape {injections.shape}, expected ({case.n_nodes},)"
        )
    if y is None:
        y = assemble_admittance(case)
    idx_s = np.array(case.slack_node_indices)
    idx_d = np.array(case.nonslack_node_indices)
    v_s = (
        case.nominal_voltage()[idx_s]
        if slack_voltage is None
        else np.asarray(slack_voltage, dtype=complex)
    )
    if v_s.shape != idx_s.shape:
        raise ValueError("slack_voltage must have one entry per slack node")

    y_dd = y[np.ix_(idx_d, idx_d)]
    y_ds = y[np.ix_(idx_d, idx_s)]
    s_d = injections[idx_d]

    v_d = (
        case.nominal_voltage()[idx_d]
        if v0 is None
        else np.asarray(v0, dtype=complex)[idx_d]
    )
    try:
        # pre-factor via explicit inverse is fine at these sizes and keeps
        # the iteration a single mat-vec
        y_dd_inv = np.linalg.inv(y_dd)
    except np.linalg.LinAlgError:
        raise SingularNetworkError(
            "slack-reduced admittance block is singular (island without slack)"
        ) from None

    rhs_s = y_ds @ v_s
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            i_d = np.conj(s_d / v_d)
        v_new = y_dd_inv @ (i_d - rhs_s)
        delta = np.max(np.abs(v_new - v_d))
        v_d = v_new
        if not np.isfinite(delta):
            break
        if delta <= tol:
            converged = True
            break
    if not converged:
        raise PowerFlowError(
            f"no convergence after {it} iterations (injection max "
            f"{np.max(np.abs(s_d)):.3g} p.u.)"
        )

    v = np.empty(case.n_nodes, dtype=complex)
    v[idx_s] = v_s
    v[idx_d] = v_d
    i = y @ v
    s = v * np.conj(i)
    resid = np.max(np.abs(s[idx_d] - s_d)) if idx_d.size else 0.0
    if resid > 1e-8:
        raise PowerFlowError(
            f"converged iteration but power residual {resid:.3g} > 1e-8 p.u."
        )
    return OperatingPoint(v=v, i=i, s=s, iterations=it)
