"""The flow-optimized protocol: max-min flow over flows and slot lengths.

The program maximises the smaller of the source and destination cut flows. It is solved by
bisection on the target rate, where each step is a convex feasibility problem handed to the
barrier solver. The broadcast power constraint enters in perspective form, so every step is a
smooth convex program.
"""
from typing import Any, Deque, Dict, Final, List, Optional, Sequence, Tuple
from collections import deque
from pathlib import Path
import itertools
import json
import math

from srctools import AtomicWriter
from srctools.logger import get_logger
import attrs
import numpy as np

from .barrier import BarrierProgram, BarrierResult, PerspectiveExp
from .errors import ConfigError
from .flowgraph import (
    Cut, FlowAllocation, SlotKind, SlotSchedule, canonical_schedule, enumerate_cuts,
    min_cut_value, reduced_min_cut,
)
from .netmodel import GAIN_EPS, SOURCE, NetworkInstance, capacity
from .three_node import Strategy, solve_three_node


__all__ = [
    'MAX_NODES', 'RATE_TOL', 'FoProblem', 'RateResult', 'Feasibility', 'Candidate',
    'FlowProgram', 'BcTerm', 'ProgramStats',
    'fo_feasible', 'solve_fo', 'solve_fo_fullcuts', 'build_fo_program', 'program_stats',
    'usable_entries', 'cut_capacity_bound', 'dump_program',
]
LOGGER = get_logger(__name__)

MAX_NODES: Final = 8
FULL_CUT_MAX_NODES: Final = 6
RATE_TOL: Final = 1e-5
SLACK_TOL: Final = 1e-7
MIN_SLOT: Final = 1e-9
START_FLOW: Final = 1e-4
Entry = Tuple[int, int, int]


@attrs.frozen(eq=False)
class FoProblem:
    """One FO instance: a network, a slot template and which cuts to enforce."""
    network: NetworkInstance
    schedule: SlotSchedule = attrs.field()
    full_cuts: bool = False

    @schedule.default
    def _default_schedule(self) -> SlotSchedule:
        return canonical_schedule(self.network.n_nodes)

    def __attrs_post_init__(self) -> None:
        if self.network.n_nodes > MAX_NODES:
            raise ConfigError(f'FO is limited to {MAX_NODES} nodes, not {self.network.n_nodes}!')
        if self.full_cuts and self.network.n_nodes > FULL_CUT_MAX_NODES:
            raise ConfigError(f'Enumerating every cut is limited to {FULL_CUT_MAX_NODES} nodes!')
        if self.schedule.n_nodes != self.network.n_nodes:
            raise ConfigError(
                f'Schedule is for {self.schedule.n_nodes} nodes, '
                f'network has {self.network.n_nodes}!'
            )


@attrs.frozen(eq=False)
class Candidate:
    """A point of a flow program: flows on its usable entries and the slot lengths."""
    flows: np.ndarray
    lengths: np.ndarray


@attrs.frozen(eq=False)
class Feasibility:
    """Verdict of one feasibility problem."""
    feasible: bool
    target: float
    point: Optional[Candidate]
    slack: float
    iterations: int = 0
    kkt_residual: float = 0.0
    solve: Optional[BarrierResult] = attrs.field(default=None, repr=False)
    witness: Optional[FlowAllocation] = None

    def __bool__(self) -> bool:
        return self.feasible


@attrs.frozen(eq=False)
class RateResult:
    """The optimum of a flow program and the allocation attaining it."""
    rate: float
    schedule: SlotSchedule
    flows: FlowAllocation
    iterations: int
    kkt_residual: float
    bisection_steps: int = 0
    # Total flow between relays, recorded to see when relay cooperation matters.
    inter_relay_flow: float = 0.0
    last_solve: Optional[BarrierResult] = attrs.field(default=None, repr=False)


@attrs.frozen(eq=False)
class BcTerm:
    """A broadcast power constraint, already divided by the SNR."""
    slot: int
    positions: np.ndarray  # Flow positions, weakest receiver first.
    weights: np.ndarray
    t_coef: float


@attrs.frozen
class ProgramStats:
    """Size of a flow program."""
    flows: int
    slots: int
    nonlinear: int
    linear: int
    cuts: int

    @property
    def variables(self) -> int:
        """Flows plus slot lengths."""
        return self.flows + self.slots


def usable_entries(entries: Sequence[Entry], gains: np.ndarray) -> np.ndarray:
    """Mark the (slot, tx, rx) entries that can carry flow from the source to the destination.

    Links below the gain floor are dropped, as are links that no source-destination walk uses.
    """
    n_nodes = len(gains)
    dest = n_nodes - 1
    live = [gains[tx, rx] >= GAIN_EPS for _, tx, rx in entries]
    forward: Dict[int, set] = {node: set() for node in range(n_nodes)}
    backward: Dict[int, set] = {node: set() for node in range(n_nodes)}
    for (_, tx, rx), ok in zip(entries, live):
        if ok:
            forward[tx].add(rx)
            backward[rx].add(tx)
    from_source = _reachable(SOURCE, forward)
    to_dest = _reachable(dest, backward)
    return np.array([
        ok and tx in from_source and rx in to_dest
        for (_, tx, rx), ok in zip(entries, live)
    ], dtype=bool)


def _reachable(start: int, adjacency: Dict[int, set]) -> Dict[int, int]:
    """Breadth-first search, returning each reached node's parent."""
    parents = {start: start}
    queue: Deque[int] = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in sorted(adjacency[node]):
            if nxt not in parents:
                parents[nxt] = node
                queue.append(nxt)
    return parents


def _start_flows(entries: Sequence[Entry], n_nodes: int) -> np.ndarray:
    """A strictly positive, conserving flow vector.

    Every entry gets a walk source -> tx -> rx -> destination, so each relay passes on exactly
    what it receives.
    """
    dest = n_nodes - 1
    rep: Dict[Tuple[int, int], int] = {}
    forward: Dict[int, set] = {node: set() for node in range(n_nodes)}
    backward: Dict[int, set] = {node: set() for node in range(n_nodes)}
    for pos, (_, tx, rx) in enumerate(entries):
        rep.setdefault((tx, rx), pos)
        forward[tx].add(rx)
        backward[rx].add(tx)
    parent = _reachable(SOURCE, forward)
    onward = _reachable(dest, backward)

    flows = np.zeros(len(entries))
    for pos, (_, tx, rx) in enumerate(entries):
        flows[pos] += START_FLOW
        node = tx
        while node != SOURCE:
            prev = parent[node]
            flows[rep[prev, node]] += START_FLOW
            node = prev
        node = rx
        while node != dest:
            nxt = onward[node]
            flows[rep[node, nxt]] += START_FLOW
            node = nxt
    return flows


@attrs.define(eq=False)
class FlowProgram:
    """Flows on (slot, tx, rx) entries plus slot lengths, under capacity and cut constraints.

    Capacity rows read ``cap_flow . x + cap_slot . t <= 0``, broadcast slots add one
    perspective-exponential constraint each, and every relay conserves flow.
    """
    n_nodes: int
    n_slots: int
    entries: List[Entry]
    cap_flow: np.ndarray
    cap_slot: np.ndarray
    cap_labels: List[str]
    bc_terms: List[BcTerm]
    cuts: List[Cut]
    source_slot: Optional[int] = None
    dest_slot: Optional[int] = None
    start: np.ndarray = attrs.field(init=False)
    cut_rows: np.ndarray = attrs.field(init=False)
    conservation: np.ndarray = attrs.field(init=False)

    def __attrs_post_init__(self) -> None:
        self.start = _start_flows(self.entries, self.n_nodes)
        self.cut_rows = np.array([
            [1.0 if cut.crosses(tx, rx) else 0.0 for _, tx, rx in self.entries]
            for cut in self.cuts
        ]).reshape(len(self.cuts), len(self.entries))
        rows = []
        for relay in range(1, self.n_nodes - 1):
            row = np.array([
                (tx == relay) - (rx == relay)
                for _, tx, rx in self.entries
            ], dtype=np.float64)
            if np.any(row):
                rows.append(row)
        self.conservation = np.array(rows).reshape(len(rows), len(self.entries))

    @property
    def n_flows(self) -> int:
        """Number of flow variables."""
        return len(self.entries)

    def objective(self, point: Candidate) -> float:
        """The smallest flow across the enforced cuts."""
        if not len(self.cuts):
            return 0.0
        return float(np.min(self.cut_rows @ point.flows))

    def stats(self) -> ProgramStats:
        """Count variables and constraints."""
        return ProgramStats(
            flows=self.n_flows,
            slots=self.n_slots,
            nonlinear=len(self.bc_terms),
            linear=len(self.cap_labels) + len(self.cuts) + len(self.conservation) + 1,
            cuts=len(self.cuts),
        )

    def zero_point(self) -> Candidate:
        """Carry nothing, with equal slot lengths."""
        return Candidate(np.zeros(self.n_flows), np.full(self.n_slots, 1.0 / self.n_slots))

    def barrier_program(self, target: float) -> Tuple[BarrierProgram, np.ndarray]:
        """Build the phase-one program ``min s`` with every inequality relaxed by ``s``.

        Variables are laid out as flows, slot lengths, then the slack.
        """
        n_f = self.n_flows
        n_k = self.n_slots
        n = n_f + n_k + 1
        s_ind = n - 1

        objective = np.zeros(n)
        objective[s_ind] = 1.0

        eq_rows = [np.concatenate([np.zeros(n_f), np.ones(n_k), [0.0]])]
        for row in self.conservation:
            eq_rows.append(np.concatenate([row, np.zeros(n_k + 1)]))
        eq_matrix = np.array(eq_rows)
        eq_rhs = np.zeros(len(eq_rows))
        eq_rhs[0] = 1.0

        n_cap = len(self.cap_labels)
        n_cut = len(self.cuts)
        lin_matrix = np.zeros((n_cap + n_cut, n))
        lin_rhs = np.zeros(n_cap + n_cut)
        if n_cap:
            lin_matrix[:n_cap, :n_f] = self.cap_flow
            lin_matrix[:n_cap, n_f:n_f + n_k] = self.cap_slot
        lin_matrix[n_cap:, :n_f] = -self.cut_rows
        lin_rhs[n_cap:] = -target
        lin_matrix[:, s_ind] = -1.0

        convex = [
            PerspectiveExp(
                t_index=n_f + term.slot,
                order=term.positions,
                weights=term.weights,
                lin_index=np.array([n_f + term.slot, s_ind]),
                lin_coef=np.array([term.t_coef, -1.0]),
            )
            for term in self.bc_terms
        ]
        program = BarrierProgram(
            objective=objective,
            eq_matrix=eq_matrix,
            eq_rhs=eq_rhs,
            lin_matrix=lin_matrix,
            lin_rhs=lin_rhs,
            convex=convex,
            positive=np.arange(n_f + n_k),
        )

        z0 = np.concatenate([self.start, np.full(n_k, 1.0 / n_k), [0.0]])
        worst = float(np.max(lin_matrix @ z0 - lin_rhs, initial=-math.inf))
        for term in convex:
            worst = max(worst, term.value(z0))
        z0[s_ind] = max(worst, 0.0) + 1.0
        return program, z0

    def feasible(self, target: float) -> Feasibility:
        """Decide whether both cut flows can reach the target."""
        if target <= 0.0:
            return Feasibility(True, target, self.zero_point(), 0.0)
        if self.n_flows == 0:
            return Feasibility(False, target, None, target)

        program, z0 = self.barrier_program(target)

        def stop(z: np.ndarray, gap: float) -> bool:
            slack = z[-1]
            return slack < 0.0 or slack - gap > SLACK_TOL

        result = program.minimize(z0, stop=stop)
        slack = float(result.z[-1])
        point = None
        if slack <= SLACK_TOL:
            point = self._clean(result.z)
        LOGGER.debug(
            'Target {:.6f}: slack {:.3e} after {} steps ({})',
            target, slack, result.iterations, 'feasible' if point is not None else 'infeasible',
        )
        return Feasibility(
            point is not None, target, point, slack,
            iterations=result.iterations,
            kkt_residual=result.kkt_residual,
            solve=result,
        )

    def _clean(self, z: np.ndarray) -> Candidate:
        """Zero out degenerate slots and renormalise the lengths."""
        n_f = self.n_flows
        flows = np.maximum(z[:n_f], 0.0)
        lengths = np.maximum(z[n_f:n_f + self.n_slots], 0.0)
        dead = lengths < MIN_SLOT
        lengths[dead] = 0.0
        for pos, (slot, _, _) in enumerate(self.entries):
            if dead[slot]:
                flows[pos] = 0.0
        lengths /= lengths.sum()
        return Candidate(flows, lengths)

    def maximise(self, lower: Optional[Candidate], upper: float) -> Tuple[Candidate, Dict[str, Any]]:
        """Bisect on the target rate, starting from a known feasible point."""
        point = lower if lower is not None else self.zero_point()
        lo = self.objective(point)
        hi = max(upper, lo)
        steps = iterations = 0
        kkt = 0.0
        last_solve = None
        while hi - lo > RATE_TOL:
            mid = 0.5 * (lo + hi)
            verdict = self.feasible(mid)
            steps += 1
            iterations += verdict.iterations
            if verdict.feasible and verdict.point is not None:
                point = verdict.point
                kkt = verdict.kkt_residual
                last_solve = verdict.solve
                lo = min(max(mid, self.objective(point)), hi)
            else:
                hi = mid
        LOGGER.debug('Bisection finished after {} steps: [{:.6f}, {:.6f}]', steps, lo, hi)
        return point, {
            'steps': steps,
            'upper': hi,
            'iterations': iterations,
            'kkt_residual': kkt,
            'last_solve': last_solve,
        }

    def three_node_point(self, network: NetworkInstance) -> Optional[Candidate]:
        """The best single-relay three-node allocation, expressed in this program.

        It only uses the source broadcast slot and the destination receive slot, so it is feasible
        for any program containing both.
        """
        if self.source_slot is None or self.dest_slot is None:
            return None
        dest = network.dest
        best = None
        best_relay = 0
        for relay in network.relays:
            result = solve_three_node(*network.relay_triple(relay), network.snr)
            if best is None or result.rate > best.rate:
                best, best_relay = result, relay
        if best is None:
            return None
        index = {entry: pos for pos, entry in enumerate(self.entries)}
        flows = np.zeros(self.n_flows)
        lengths = np.zeros(self.n_slots)
        x1, x2, x3, x4 = best.flows
        direct = [((self.source_slot, SOURCE, dest), x1)]
        relayed = []
        if best.strategy is Strategy.DIRECT:
            lengths[self.source_slot] = 1.0
        else:
            lengths[self.source_slot] = best.t1_opt
            lengths[self.dest_slot] = best.t2_opt
            direct.append(((self.dest_slot, SOURCE, dest), x3))
            relayed = [
                ((self.source_slot, SOURCE, best_relay), x2),
                ((self.dest_slot, best_relay, dest), x4),
            ]
        # Entries below the gain floor carry negligible flow and are dropped. Relay legs go
        # together so the relay still conserves flow.
        if all(entry in index for entry, _ in relayed):
            direct += relayed
        for entry, flow in direct:
            if entry in index:
                flows[index[entry]] = flow
        return Candidate(flows, lengths)


def cut_capacity_bound(network: NetworkInstance) -> float:
    """An easy upper bound: what the source could send alone, or the destination hear alone."""
    snr = network.snr
    return min(
        capacity(snr * float(network.gains[SOURCE, 1:].sum())),
        capacity(snr * float(network.gains[:-1, network.dest].sum())),
    )


def build_fo_program(problem: FoProblem) -> FlowProgram:
    """Translate a schedule template into a flow program."""
    network = problem.network
    schedule = problem.schedule
    gains = network.gains
    snr = network.snr
    mask = usable_entries(schedule.layout.entries, gains)
    entries = [entry for entry, ok in zip(schedule.layout.entries, mask) if ok]
    index = {entry: pos for pos, entry in enumerate(entries)}
    n_f = len(entries)
    n_k = len(schedule)

    cap_rows: List[Tuple[np.ndarray, np.ndarray]] = []
    labels: List[str] = []
    bc_terms: List[BcTerm] = []
    source_slot = dest_slot = None
    for slot, desc in enumerate(schedule.slots):
        if desc.kind is SlotKind.BC:
            if desc.hub == SOURCE and source_slot is None:
                source_slot = slot
            receivers = sorted(
                (float(gains[desc.hub, peer]), index[slot, desc.hub, peer])
                for peer in desc.peers
                if (slot, desc.hub, peer) in index
            )
            if not receivers:
                continue
            inv = np.array([1.0 / gain for gain, _ in receivers])
            weights = (inv - np.append(inv[1:], 0.0)) / snr
            bc_terms.append(BcTerm(
                slot=slot,
                positions=np.array([pos for _, pos in receivers]),
                weights=weights,
                t_coef=-inv[0] / snr - 1.0,
            ))
        else:
            if desc.hub == network.dest and dest_slot is None:
                dest_slot = slot
            senders = [peer for peer in desc.peers if (slot, peer, desc.hub) in index]
            for size in range(1, len(senders) + 1):
                for subset in itertools.combinations(senders, size):
                    flow_row = np.zeros(n_f)
                    for peer in subset:
                        flow_row[index[slot, peer, desc.hub]] = 1.0
                    slot_row = np.zeros(n_k)
                    slot_row[slot] = -capacity(snr * float(sum(gains[peer, desc.hub] for peer in subset)))
                    cap_rows.append((flow_row, slot_row))
                    labels.append(f'{slot}:MA{list(subset)}->{desc.hub}')

    cuts = enumerate_cuts(network.n_nodes)
    if not problem.full_cuts:
        cuts = [cuts[0], cuts[-1]]
    return FlowProgram(
        n_nodes=network.n_nodes,
        n_slots=n_k,
        entries=entries,
        cap_flow=np.array([row for row, _ in cap_rows]).reshape(len(cap_rows), n_f),
        cap_slot=np.array([row for _, row in cap_rows]).reshape(len(cap_rows), n_k),
        cap_labels=labels,
        bc_terms=bc_terms,
        cuts=cuts,
        source_slot=source_slot,
        dest_slot=dest_slot,
    )


def program_stats(problem: FoProblem) -> ProgramStats:
    """Count the variables and constraints of the FO program."""
    return build_fo_program(problem).stats()


def _to_allocation(problem: FoProblem, program: FlowProgram, point: Candidate) -> FlowAllocation:
    schedule = problem.schedule.with_lengths(point.lengths)
    values = np.zeros(len(schedule.layout))
    for entry, flow in zip(program.entries, point.flows):
        values[schedule.layout.index[entry]] = flow
    return FlowAllocation(schedule, values)


def fo_feasible(problem: FoProblem, target: float) -> Feasibility:
    """Decide whether the target rate is achievable, with a witness allocation if so."""
    program = build_fo_program(problem)
    verdict = program.feasible(target)
    if verdict.point is not None:
        verdict = attrs.evolve(verdict, witness=_to_allocation(problem, program, verdict.point))
    return verdict


def _solve(problem: FoProblem) -> RateResult:
    network = problem.network
    program = build_fo_program(problem)
    lower = program.three_node_point(network)
    point, info = program.maximise(lower, cut_capacity_bound(network))
    alloc = _to_allocation(problem, program, point)
    if problem.full_cuts:
        rate = min_cut_value(alloc)
    else:
        rate = reduced_min_cut(alloc)
    totals = alloc.link_totals()
    relays = list(network.relays)
    inter_relay = float(totals[np.ix_(relays, relays)].sum()) if relays else 0.0
    LOGGER.debug(
        'FO rate {:.6f} nats after {} bisection steps, inter-relay flow {:.3g}',
        rate, info['steps'], inter_relay,
    )
    return RateResult(
        rate=rate,
        schedule=alloc.schedule,
        flows=alloc,
        iterations=info['iterations'],
        kkt_residual=info['kkt_residual'],
        bisection_steps=info['steps'],
        inter_relay_flow=inter_relay,
        last_solve=info['last_solve'],
    )


def solve_fo(problem: FoProblem) -> RateResult:
    """Maximise min(x(C_S), x(C_D)) over flows and slot lengths."""
    if problem.full_cuts:
        problem = attrs.evolve(problem, full_cuts=False)
    return _solve(problem)


def solve_fo_fullcuts(problem: FoProblem) -> RateResult:
    """Maximise the minimum over every cut, to cross-check the two-cut reduction."""
    return _solve(attrs.evolve(problem, full_cuts=True))


def dump_program(problem: FoProblem, result: RateResult, path: Path) -> None:
    """Write the solved program out as JSON, for debugging."""
    network = problem.network
    program = build_fo_program(problem)
    index = result.flows.schedule.layout.index
    flows = np.array([result.flows.values[index[entry]] for entry in program.entries])
    lengths = result.flows.schedule.lengths
    cap_values = program.cap_flow @ flows + program.cap_slot @ lengths if len(program.cap_labels) else []
    bc_values = {}
    for term in program.bc_terms:
        t = lengths[term.slot]
        if t > 0.0:
            rates = np.cumsum(flows[term.positions]) / t
            bc_values[str(term.slot)] = float(t * (term.weights @ np.exp(rates)) + term.t_coef * t)
        else:
            bc_values[str(term.slot)] = 0.0
    data: Dict[str, Any] = {
        'n_nodes': network.n_nodes,
        'snr': network.snr,
        'gains': network.gains.tolist(),
        'rate': result.rate,
        'bisection_steps': result.bisection_steps,
        'iterations': result.iterations,
        'kkt_residual': result.kkt_residual,
        'inter_relay_flow': result.inter_relay_flow,
        'allocation': result.flows.to_json(),
        'cuts': {
            str(cut): float(row @ flows)
            for cut, row in zip(program.cuts, program.cut_rows)
        },
        'ma_constraints': dict(zip(program.cap_labels, map(float, cap_values))),
        'bc_constraints': bc_values,
    }
    if result.last_solve is not None:
        n_cap = len(program.cap_labels)
        multipliers = result.last_solve.lin_multipliers
        data['ma_multipliers'] = dict(zip(program.cap_labels, map(float, multipliers[:n_cap])))
        data['cut_multipliers'] = {
            str(cut): float(mult) for cut, mult in zip(program.cuts, multipliers[n_cap:])
        }
        data['bc_multipliers'] = {
            str(term.slot): float(mult)
            for term, mult in zip(program.bc_terms, result.last_solve.convex_multipliers)
        }
    try:
        with AtomicWriter(path) as file:
            json.dump(data, file, indent='\t')
    except OSError as exc:
        raise OSError(f'Could not write program dump to "{path}": {exc}') from exc
