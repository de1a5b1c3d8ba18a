"""
Desk-scale switch simulator.

Runs a product machine or a lowered decision program over ingress
workloads, monitors the learning and bridging invariants over timed
histories, cross-checks products against their components and estimates
distribution profiles from observed traffic.
"""

import logging
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Union

import config
from emit import DecisionProgram, Verdict, interpret_guard
from formula import (Env, FormulaError, Iface, In, Update, Var, evaluate, literal_of,
                     to_text, walk)
from frames import (BROADCAST, EGRESS, Frame, FrameError, MacTable, TraceEvent, egress, egress_ports,
                    format_proto, format_trace, ingress, is_unicast, learn, normalize_mac, parse_event,
                    parse_proto)
from machine import LambdaSFA, initial_env, run, step
from oracle import DomainConfig
from synth import DistributionProfile

logger = logging.getLogger(__name__)


class SimulationError(Exception):
    """Base exception for simulation and trace handling"""
    pass


class StuckExecutable(SimulationError):
    """No transition of the executable accepts an event"""

    def __init__(self, event: TraceEvent, state: str, detail: str = ''):
        super().__init__(f"stuck in {state} at time {event.time} ({event.frame.da} <- {event.frame.sa})"
                         + (f": {detail}" if detail else ''))
        self.event = event
        self.state = state


class TraceFormatError(SimulationError):
    """Malformed trace or workload line"""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class IngressEvent:
    time: int
    port: int
    frame: Frame

    def event(self) -> TraceEvent:
        return TraceEvent(self.time, self.frame, frozenset({ingress(self.port)}))


def check_workload(workload: list, cfg: DomainConfig):
    """
    Raises:
        SimulationError: ports outside cfg, or ingress times leaving no room for the egress event
    """
    last = None
    for item in workload:
        if item.port not in cfg.ports:
            raise SimulationError(f"ingress port {item.port} at time {item.time} outside 1..{cfg.num_ports}")
        if last is not None and item.time <= last + 1:
            raise SimulationError(f"ingress at time {item.time} too close to the previous one at {last}")
        last = item.time


# Product simulation

def _advance(m: LambdaSFA, instances: dict, event: TraceEvent) -> dict:
    moved = {}
    for port, (state, env) in instances.items():
        nxt = step(m, state, event, env)
        if nxt is None:
            raise StuckExecutable(event, state, f"instance self={port}")
        moved[port] = nxt
    return moved


def _egress_set(m: LambdaSFA, instances: dict, time: int, frame: Frame) -> frozenset:
    """Ports whose instance pins the relayed frame on its own egress interface"""
    ports = []
    for port, (state, env) in instances.items():
        loc = frozenset({egress(port)})
        relayed = step(m, state, TraceEvent(time, frame, loc), env)
        probed = step(m, state, TraceEvent(time, frame.probe(), loc), env)
        if relayed is not None and probed is None:
            ports.append(port)
    return frozenset(egress(port) for port in ports)


def _simulate_product(m: LambdaSFA, workload: list, cfg: DomainConfig) -> list:
    instances = {port: (m.start, initial_env(cfg, port)) for port in cfg.ports}
    events = []
    for item in workload:
        inbound = item.event()
        instances = _advance(m, instances, inbound)
        outbound = TraceEvent(item.time + 1, item.frame,
                              _egress_set(m, instances, item.time + 1, item.frame))
        instances = _advance(m, instances, outbound)
        events += [inbound, outbound]
    return events


# Program simulation

def _is_mask_statement(lit) -> bool:
    atom = lit.atom
    return lit.positive and isinstance(atom, In) and atom.element == Iface(Var('self'), EGRESS) \
        and atom.collection == Var('loc')


def _updates_table(statements) -> bool:
    return any(lit.positive and any(isinstance(node, Update) for node in walk(lit.atom)) for lit in statements)


def _decide(program: DecisionProgram, state: str, base: Env, pre: Env, carried, port: int):
    for tp in program.from_state(state):
        view = replace(base, self_port=port, snapshot=pre if tp.binds else carried)

        def value(atom, view=view):
            try:
                return evaluate(atom, view)
            except FormulaError as e:
                raise SimulationError(f"cannot evaluate guard {to_text(atom)}: {e}")

        verdict, statements = interpret_guard(tp.guard, value)
        if verdict is not Verdict.DISABLED:
            return tp, verdict, statements
    return None


def _program_step(program: DecisionProgram, state: str, env: Env, event: TraceEvent, cfg: DomainConfig):
    """(target, decisions per port, pre env) for one event"""
    pre = replace(env, time=event.time, frame=event.frame, loc=event.loc, snapshot=None)
    decisions = {}
    for port in cfg.ports:
        decision = _decide(program, state, pre, pre, env.snapshot, port)
        if decision is None:
            raise StuckExecutable(event, state, f"no guard enabled for self={port}")
        decisions[port] = decision
    targets = {tp.target for tp, _, _ in decisions.values()}
    if len(targets) != 1:
        raise SimulationError(f"instances disagree on the successor of {state}: {sorted(targets)}")
    return targets.pop(), decisions, pre


def _simulate_program(program: DecisionProgram, workload: list, cfg: DomainConfig) -> list:
    state = program.start
    env = initial_env(cfg)
    events = []
    for item in workload:
        inbound = item.event()
        target, decisions, pre = _program_step(program, state, env, inbound, cfg)
        tp = next(iter(decisions.values()))[0]
        table = env.mlt
        if any(_updates_table(statements) for _, _, statements in decisions.values()):
            table = learn(env.mlt, item.frame, item.port, item.time, cfg.mto, cfg.uplink_port)
        after = replace(pre, mlt=table)
        env = replace(after, snapshot=after if tp.binds else env.snapshot)
        state = target

        probe = TraceEvent(item.time + 1, item.frame, frozenset())
        target, decisions, pre = _program_step(program, state, env, probe, cfg)
        ports = [port for port, (_, verdict, statements) in decisions.items()
                 if verdict is Verdict.ACT and any(_is_mask_statement(lit) for lit in statements)]
        outbound = TraceEvent(item.time + 1, item.frame, frozenset(egress(port) for port in ports))
        env = replace(pre, loc=outbound.loc, snapshot=env.snapshot)
        state = target
        events += [inbound, outbound]
    return events


def simulate(executable: Union[LambdaSFA, DecisionProgram], workload: list,
             cfg: Optional[DomainConfig] = None) -> list:
    """Ingress event followed by its egress event, one second later, for every workload item.

    Raises:
        StuckExecutable: no transition accepts an ingress or egress step
        SimulationError: bad workload
    """
    cfg = cfg or DomainConfig()
    check_workload(workload, cfg)
    if isinstance(executable, DecisionProgram):
        events = _simulate_program(executable, workload, cfg)
    else:
        events = _simulate_product(executable, workload, cfg)
    logger.info("simulated %d ingress frames through %s", len(workload), executable.name)
    return events


# Histories and invariants

@dataclass(frozen=True)
class HistoryStep:
    """One world of a timed history; mlt is the table in effect before the event"""
    index: int
    time: int
    event: TraceEvent
    mlt: tuple


def history_from_trace(trace: list, cfg: Optional[DomainConfig] = None, mlt: Optional[tuple] = None) -> list:
    cfg = cfg or DomainConfig()
    table = mlt if mlt is not None else MacTable.empty(cfg.mlt_size, cfg.mto).entries
    history = []
    for index, event in enumerate(trace):
        history.append(HistoryStep(index, event.time, event, table))
        table = event.mlt if event.mlt is not None else \
            learn(table, event.frame, event.port, event.time, cfg.mto, cfg.uplink_port)
    return history


@dataclass(frozen=True)
class Violation:
    step: int
    clause: str
    detail: str


@dataclass(frozen=True)
class InvariantReport:
    invariant: str
    holds: bool
    first_violation: Optional[Violation] = None

    def __str__(self):
        if self.holds:
            return f"{self.invariant}: holds"
        v = self.first_violation
        return f"{self.invariant}: violated at step {v.step} ({v.clause}): {v.detail}"


def _learns(step_: HistoryStep, cfg: DomainConfig) -> bool:
    event = step_.event
    return event.port is not None and event.port != cfg.uplink_port and is_unicast(event.frame.sa)


def check_phi_ml(history: list, cfg: Optional[DomainConfig] = None) -> InvariantReport:
    """Unexpired table entries match exactly the recent learning ingresses.

    forward: every unexpired entry (m, p, t) traces back to an earlier
    ingress of source m at port p at time t.
    backward: the latest earlier learning ingress of m, if within mto,
    left an entry for m at its port and time.
    """
    cfg = cfg or DomainConfig()
    for k, now in enumerate(history):
        earlier = [h for h in history[:k] if _learns(h, cfg)]
        for entry in now.mlt:
            if now.time - entry.t > cfg.mto:
                continue
            if not any(h.event.frame.sa == entry.mac and h.event.port == entry.port and h.time == entry.t
                       for h in earlier):
                return InvariantReport('phi_ml', False, Violation(
                    k, 'forward', f"entry {entry.mac} port {entry.port} t {entry.t} without a learning ingress"))
        latest = {}
        for h in earlier:
            latest[h.event.frame.sa] = h
        for mac, h in sorted(latest.items()):
            if now.time - h.time > cfg.mto:
                continue
            if not any(e.mac == mac and e.port == h.event.port and e.t == h.time for e in now.mlt):
                return InvariantReport('phi_ml', False, Violation(
                    k, 'backward', f"{mac} learned at port {h.event.port} time {h.time} has no entry"))
    return InvariantReport('phi_ml', True)


def check_phi_b1(history: list, cfg: Optional[DomainConfig] = None) -> InvariantReport:
    """A switched unicast frame leaves only at its unexpired learned port, or its address is unknown"""
    cfg = cfg or DomainConfig()
    for i in range(len(history) - 1):
        inbound, outbound = history[i], history[i + 1]
        event = inbound.event
        port = event.port
        if port is None or port == cfg.uplink_port or not is_unicast(event.frame.da) \
                or event.frame.da == cfg.haddr(port):
            continue
        table = MacTable(outbound.mlt, cfg.mto)
        learned = table.lookup(event.frame.da, outbound.time)
        for out in egress_ports(outbound.event.loc):
            if learned is not None and learned != out:
                return InvariantReport('phi_b1', False, Violation(
                    i + 1, 'learned-port',
                    f"{event.frame.da} left at port {out} but is learned at port {learned}"))
    return InvariantReport('phi_b1', True)


# Equivalence of a product with its components

@dataclass
class EquivalenceReport:
    traces: int = 0
    divergences: list = field(default_factory=list)  # (trace index, self port, detail)

    @property
    def holds(self) -> bool:
        return not self.divergences

    def __str__(self):
        lines = [f"equivalence: {self.traces} traces, {len(self.divergences)} divergences"]
        lines += [f"  trace {i} self={p}: {detail}" for i, p, detail in self.divergences]
        return '\n'.join(lines)


def _status(result) -> tuple:
    return (result.accepted, result.stuck_at)


def equivalence_check(product: LambdaSFA, components: list, traces: list,
                      cfg: Optional[DomainConfig] = None) -> EquivalenceReport:
    """Product acceptance equals the conjunction of component runs, stuck at the earliest component index"""
    cfg = cfg or DomainConfig()
    report = EquivalenceReport()
    for index, trace in enumerate(traces):
        report.traces += 1
        for port in cfg.ports:
            whole = _status(run(product, trace, cfg, port))
            parts = [run(m, trace, cfg, port) for m in components]
            stuck = [r.stuck_at for r in parts if not r.accepted]
            expected = (True, None) if not stuck else (False, min(stuck))
            if whole != expected:
                report.divergences.append((index, port, f"product {whole}, components {expected}"))
    if report.divergences:
        logger.warning("%d divergences between %s and its components", len(report.divergences), product.name)
    return report


# Generators

def _fraction(value) -> Fraction:
    return Fraction(value)


def random_frame(rng: random.Random, cfg: DomainConfig, macs=None) -> Frame:
    pool = [mac for mac in (macs or cfg.macs) if mac != BROADCAST]
    sa = rng.choice([mac for mac in pool if is_unicast(mac)] or pool)
    if rng.random() < _fraction(config.broadcast_ratio):
        target = rng.choice(list(cfg.ports)) if rng.random() < _fraction(config.arp_ratio) else None
        return Frame(BROADCAST, sa, 'arpreq', target)
    da = rng.choice([mac for mac in pool if mac != sa] or pool)
    return Frame(da, sa, rng.choice([tag for tag in cfg.proto_tags if tag != 'arpreq'] or ['data']))


def random_workload(rng: random.Random, cfg: DomainConfig, count: int, macs=None, start: int = 0) -> list:
    """Ingress items spaced config.workload_gap apart"""
    gap = max(2, config.workload_gap)
    return [IngressEvent(start + n * gap, rng.choice(list(cfg.ports)), random_frame(rng, cfg, macs))
            for n in range(count)]


def random_trace(rng: random.Random, cfg: DomainConfig, count: int, macs=None) -> list:
    """Raw events with arbitrary locations, for differential testing"""
    events = []
    for n in range(count):
        frame = random_frame(rng, cfg, macs)
        if rng.random() < 0.5:
            loc = frozenset({ingress(rng.choice(list(cfg.ports)))})
        else:
            loc = frozenset(egress(p) for p in cfg.ports if rng.random() < 0.5)
        events.append(TraceEvent(n, frame, loc))
    return events


# Files

def _lines(text: str):
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line and not line.startswith('#'):
            yield number, line


def loads_trace(text: str) -> list:
    """
    Raises:
        TraceFormatError: malformed line
    """
    events = []
    for number, line in _lines(text):
        try:
            events.append(parse_event(line))
        except FrameError as e:
            raise TraceFormatError(str(e), number)
    return events


def dumps_trace(events: list, header: str = '') -> str:
    return header + format_trace(events)


def load_trace(path: str) -> list:
    with open(path) as f:
        try:
            return loads_trace(f.read())
        except TraceFormatError as e:
            raise TraceFormatError(f"{path}: {e}")


def loads_workload(text: str) -> list:
    """`time port da sa proto` lines, proto optionally `arpreq@port`"""
    items = []
    for number, line in _lines(text):
        parts = line.split()
        if len(parts) != 5:
            raise TraceFormatError(f"expected 'time port da sa proto', got {line!r}", number)
        try:
            proto, target = parse_proto(parts[4])
            items.append(IngressEvent(int(parts[0]), int(parts[1]),
                                      Frame(normalize_mac(parts[2]), normalize_mac(parts[3]), proto, target)))
        except (ValueError, FrameError) as e:
            raise TraceFormatError(str(e), number)
    return items


def dumps_workload(items: list, header: str = '') -> str:
    return header + ''.join(f"{item.time} {item.port} {item.frame.da} {item.frame.sa} {format_proto(item.frame)}\n"
                            for item in items)


def load_workload(path: str) -> list:
    with open(path) as f:
        try:
            return loads_workload(f.read())
        except TraceFormatError as e:
            raise TraceFormatError(f"{path}: {e}")


# Profile estimation

def _event_envs(trace: list, cfg: DomainConfig):
    """Env per event: table in effect, snapshot at the latest ingress"""
    base = initial_env(cfg)
    snapshot = None
    for step_ in history_from_trace(trace, cfg):
        env = replace(base, time=step_.time, frame=step_.event.frame, loc=step_.event.loc, mlt=step_.mlt)
        if step_.event.is_ingress():
            snapshot = replace(env, snapshot=None)
        yield replace(env, snapshot=snapshot)


def estimate_profile(events: list, atoms, cfg: Optional[DomainConfig] = None,
                     threshold: Optional[int] = None) -> DistributionProfile:
    """Add-one smoothed Pr[atom], and Pr[atom | literal] where the literal was seen often enough.

    Atoms that cannot be evaluated over the trace (they read self) keep the
    profile default.
    """
    cfg = cfg or DomainConfig()
    threshold = config.support_threshold if threshold is None else threshold
    atoms = sorted(set(atoms), key=to_text)
    if not atoms:
        return DistributionProfile()
    envs = list(_event_envs(events, cfg))
    table = {}
    for atom in atoms:
        try:
            table[atom] = [evaluate(atom, env) for env in envs]
        except FormulaError as e:
            logger.debug("not estimating %s: %s", to_text(atom), e)
    total = len(envs)
    base = {atom: Fraction(sum(values) + 1, total + 2) for atom, values in table.items()}
    # single-literal conditions only; a longer path uses one of these or the marginal estimate
    conditional = {}
    for atom, values in table.items():
        for other, given in table.items():
            if other == atom:
                continue
            for positive in (True, False):
                rows = [v for v, g in zip(values, given) if g == positive]
                if len(rows) >= threshold:
                    lit = literal_of(other) if positive else literal_of(other).negate()
                    conditional[(atom, frozenset({str(lit)}))] = Fraction(sum(rows) + 1, len(rows) + 2)
    logger.info("estimated %d atoms over %d events", len(base), total)
    return DistributionProfile(base, conditional)
