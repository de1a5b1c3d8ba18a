"""
Lambda-SFA recognizers: component files, trace runs and the tensor product.

A transition whose label is (lambda x ...) binds the snapshot x to the
environment of the event it fires on. Later transitions read the snapshot
through x.f, x.port, x.loc, x.t and x.mlt until the next binding transition
replaces it.
"""

import itertools
import logging
import re
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from formula import (Env, Formula, Lambda, ParseError, SNAPSHOT, binds_snapshot, conj,
                     evaluate, free_vars, parse, references_snapshot, strip_lambda, to_text)
from frames import MacTable, TraceEvent, learn
from oracle import DomainConfig

logger = logging.getLogger(__name__)


class MachineError(Exception):
    """Base exception for recognizer errors"""
    pass


class NondeterminismDetected(MachineError):
    """Two transitions out of one state hold at once"""

    def __init__(self, machine, state, first, second):
        super().__init__(f"{machine}: transitions {first.source} -> {first.target} and "
                         f"{second.source} -> {second.target} both hold in {state}")
        self.machine = machine
        self.state = state
        self.transitions = (first, second)


class VocabularyMismatch(MachineError):
    """Factors of a product share no trace variable"""
    pass


class DslError(MachineError):
    """Malformed component file"""

    def __init__(self, message, line=1, column=1, source='<string>'):
        super().__init__(f"{source}:{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.source = source


class StuckRun(MachineError):
    """No transition holds for an event"""

    def __init__(self, machine, state, event):
        super().__init__(f"{machine} stuck in {state} at time {event.time}")
        self.state = state
        self.event = event


class Outcome(Enum):
    ACCEPTED = 'accepted-prefix'
    STUCK = 'stuck'


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    label: Formula

    @property
    def binds_snapshot(self) -> bool:
        return binds_snapshot(self.label)

    @property
    def body(self) -> Formula:
        return strip_lambda(self.label)


@dataclass(frozen=True)
class ProductState:
    """Ordered (machine name, component state) pairs"""
    components: tuple

    @property
    def name(self) -> str:
        return ''.join(state for _, state in self.components)


@dataclass(frozen=True)
class LambdaSFA:
    name: str
    params: tuple
    states: tuple
    start: str
    transitions: tuple
    origins: tuple = ()  # ProductState per state, products only
    pruned: tuple = ()   # unsatisfiable combinations dropped by product()

    def __post_init__(self):
        if self.start not in self.states:
            raise MachineError(f"{self.name}: start state {self.start} is not a state")
        if self.transitions and self.transitions[0].source != self.start:
            raise MachineError(f"{self.name}: the first transition must leave the start state {self.start}")
        for tr in self.transitions:
            if tr.source not in self.states or tr.target not in self.states:
                raise MachineError(f"{self.name}: transition {tr.source} -> {tr.target} uses an unknown state")

    def outgoing(self, state: str) -> list:
        return [tr for tr in self.transitions if tr.source == state]

    def vocabulary(self) -> set:
        """Trace variables the labels read, snapshot copies folded onto their originals"""
        names = set()
        for tr in self.transitions:
            names |= {name[len(SNAPSHOT) + 1:] if name.startswith(SNAPSHOT + '.') else name
                      for name in free_vars(tr.body)}
        return names


# Runs

@dataclass
class RunResult:
    outcome: Outcome
    final_state: str
    binding_history: list = field(default_factory=list)  # (time, Env) per consumed event
    stuck_at: Optional[int] = None
    env: Optional[Env] = None
    states: list = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED


def initial_env(cfg: Optional[DomainConfig] = None, self_port: Optional[int] = None) -> Env:
    """No frame, empty location and a table whose entries are all expired"""
    cfg = cfg or DomainConfig()
    return Env(time=None, frame=None, loc=frozenset(), self_port=self_port,
               uplink_port=cfg.uplink_port, mto=cfg.mto,
               mlt=MacTable.empty(cfg.mlt_size, cfg.mto).entries,
               haddr_prefix=cfg.haddr_prefix)


def event_envs(event: TraceEvent, env: Env):
    """(pre, cur) views of one event.

    pre holds the table in effect before the event and no snapshot; cur holds
    the table after it and the snapshot carried in env.
    """
    table = event.mlt
    if table is None:
        table = learn(env.mlt, event.frame, event.port, event.time, env.mto, env.uplink_port)
    pre = replace(env, time=event.time, frame=event.frame, loc=event.loc, snapshot=None)
    return pre, replace(pre, mlt=table, snapshot=env.snapshot)


def fire(m: LambdaSFA, state: str, event: TraceEvent, env: Env):
    """(transition, pre, cur) for the unique transition that holds; transition is None when stuck"""
    pre, cur = event_envs(event, env)
    fired = None
    for tr in m.outgoing(state):
        view = replace(cur, snapshot=pre) if tr.binds_snapshot else cur
        if evaluate(tr.label, view):
            if fired is not None:
                raise NondeterminismDetected(m.name, state, fired, tr)
            fired = tr
    return fired, pre, cur


def step(m: LambdaSFA, state: str, event: TraceEvent, env: Env):
    """Next (state, Env), or None when no transition holds.

    Raises:
        NondeterminismDetected: two labels hold for the event
    """
    fired, pre, cur = fire(m, state, event, env)
    if fired is None:
        return None
    snapshot = replace(pre, mlt=cur.mlt) if fired.binds_snapshot else env.snapshot
    return fired.target, replace(cur, snapshot=snapshot)


def run(m: LambdaSFA, trace: list, cfg: Optional[DomainConfig] = None,
        self_port: Optional[int] = None, env: Optional[Env] = None) -> RunResult:
    """Fold step over a trace with strictly increasing times"""
    env = env or initial_env(cfg, self_port)
    state = m.start
    result = RunResult(Outcome.ACCEPTED, state, env=env)
    last = None
    for event in trace:
        if last is not None and event.time <= last:
            raise MachineError(f"trace times must increase: {event.time} after {last}")
        last = event.time
        moved = step(m, state, event, env)
        if moved is None:
            logger.debug("%s stuck in %s at time %s", m.name, state, event.time)
            result.outcome = Outcome.STUCK
            result.stuck_at = event.time
            return result
        state, next_env = moved
        result.binding_history.append((event.time, replace(next_env, snapshot=env.snapshot)))
        result.states.append(state)
        env = next_env
        result.final_state = state
        result.env = env
    return result


def run_multistep(m: LambdaSFA, seq: list, sigma0: Optional[Env] = None,
                  cfg: Optional[DomainConfig] = None, self_port: Optional[int] = None):
    """Multistep transition function over a nonempty timed sequence.

    The first element initializes: the result for a one-element sequence is
    (start, sigma0). Each later element is one step.

    Raises:
        StuckRun: some element has no transition
    """
    if not seq:
        raise MachineError("a timed state sequence is never empty")
    first = seq[0]
    if sigma0 is None:
        base = initial_env(cfg, self_port)
        sigma0 = replace(base, time=first.time, frame=first.frame, loc=first.loc)
    state, env = m.start, sigma0
    for event in seq[1:]:
        moved = step(m, state, event, env)
        if moved is None:
            raise StuckRun(m.name, state, event)
        state, env = moved
    return state, env


# Product

def product_label(parts) -> Formula:
    """Conjunction of factor labels, bound when some factor binds and no other reads x"""
    body = conj(tr.body for tr in parts)
    binders = [tr for tr in parts if tr.binds_snapshot]
    readers = [tr for tr in parts if not tr.binds_snapshot and references_snapshot(tr.body)]
    return Lambda(SNAPSHOT, body) if binders and not readers else body


def product(machines: list, oracle=None, name: Optional[str] = None) -> LambdaSFA:
    """Tensor product over the reachable state tuples.

    Combinations the oracle finds unsatisfiable are dropped and kept in
    the result's pruned field.

    Raises:
        VocabularyMismatch: two factors read disjoint sets of trace variables
    """
    machines = list(machines)
    if not machines:
        raise MachineError("product of no machines")
    vocab = [(m.name, m.vocabulary()) for m in machines]
    for (a, va), (b, vb) in itertools.combinations(vocab, 2):
        if va and vb and not va & vb:
            raise VocabularyMismatch(f"{a} and {b} share no trace variable")

    def state_of(combo):
        return ProductState(tuple((m.name, s) for m, s in zip(machines, combo)))

    start = tuple(m.start for m in machines)
    names = {start: state_of(start).name}
    origins = [state_of(start)]
    queue = deque([start])
    transitions, pruned = [], []
    while queue:
        combo = queue.popleft()
        for parts in itertools.product(*(m.outgoing(s) for m, s in zip(machines, combo))):
            label = product_label(parts)
            target = tuple(tr.target for tr in parts)
            target_name = state_of(target).name
            if oracle is not None and not oracle.is_satisfiable(label):
                logger.debug("pruned %s -> %s", names[combo], target_name)
                pruned.append(Transition(names[combo], target_name, label))
                continue
            if target not in names:
                names[target] = target_name
                origins.append(state_of(target))
                queue.append(target)
            transitions.append(Transition(names[combo], target_name, label))
    params = tuple(dict.fromkeys(p for m in machines for p in m.params))
    result = LambdaSFA(name or 'x'.join(m.name for m in machines), params,
                       tuple(names.values()), names[start], tuple(transitions),
                       tuple(origins), tuple(pruned))
    logger.info("product %s: %d states, %d transitions, %d pruned",
                result.name, len(result.states), len(transitions), len(pruned))
    return result


def check_deterministic(m: LambdaSFA, oracle):
    """Raise NondeterminismDetected when two labels out of one state can hold together"""
    for state in m.states:
        for first, second in itertools.combinations(m.outgoing(state), 2):
            if oracle.is_satisfiable(conj([first.body, second.body])):
                raise NondeterminismDetected(m.name, state, first, second)


def product_report(m: LambdaSFA) -> str:
    """States and transitions listed the way component tables are read"""
    lines = [f"{m.name} ({', '.join(m.params)})", f"states: {' '.join(m.states)}", f"start: {m.start}", ""]
    for tr in m.transitions:
        lines.append(f"{tr.source} -> {tr.target}{'  [binds x]' if tr.binds_snapshot else ''}")
        lines.append(f"  {to_text(tr.label)}")
        lines.append("")
    if m.pruned:
        lines.append(f"pruned: {len(m.pruned)} unsatisfiable combination(s)")
        for tr in m.pruned:
            lines.append(f"  {tr.source} -> {tr.target}")
    return '\n'.join(lines).rstrip() + '\n'


# Component files

_MACHINE_RE = re.compile(r'^machine\s+([A-Za-z][\w\-]*)\s*\(([^)]*)\)\s*$')
_START_RE = re.compile(r'^start\s+(\w+)\s*$')
_TRANSITION_RE = re.compile(r'^transition\s+(\w+)\s*->\s*(\w+)\s*$')


def loads_machine(text: str, source: str = '<string>') -> LambdaSFA:
    """Parse component text.

    Raises:
        DslError: with the line and column of the problem
    """
    name = params = start = None
    pending = []  # (source, target, header line, [(line no, text)])
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split('#', 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith('machine'):
            match = _MACHINE_RE.match(stripped)
            if not match or name is not None:
                raise DslError("expected a single 'machine NAME (params)' header", line_no, 1, source)
            name = match.group(1)
            params = tuple(p.strip() for p in match.group(2).split(',') if p.strip())
        elif stripped.startswith('start'):
            match = _START_RE.match(stripped)
            if not match:
                raise DslError("expected 'start STATE'", line_no, 1, source)
            start = match.group(1)
        elif stripped.startswith('transition'):
            match = _TRANSITION_RE.match(stripped)
            if not match:
                raise DslError("expected 'transition SRC -> DST'", line_no, 1, source)
            pending.append((match.group(1), match.group(2), line_no, []))
        elif pending:
            pending[-1][3].append((line_no, line))
        else:
            raise DslError(f"unexpected text {stripped!r}", line_no, 1, source)
    if name is None:
        raise DslError("missing 'machine' header", 1, 1, source)
    if start is None:
        raise DslError("missing 'start' line", 1, 1, source)

    transitions = []
    states = [start]
    for src, dst, header_line, body in pending:
        if not body:
            raise DslError(f"transition {src} -> {dst} has no label", header_line, 1, source)
        first_line = body[0][0]
        label_text = '\n'.join(text for _, text in body)
        try:
            label = parse(label_text, first_line, 1)
        except ParseError as e:
            raise DslError(e.message, e.line, e.column, source)
        transitions.append(Transition(src, dst, label))
        for state in (src, dst):
            if state not in states:
                states.append(state)
    try:
        return LambdaSFA(name, params, tuple(states), start, tuple(transitions))
    except DslError:
        raise
    except MachineError as e:
        raise DslError(str(e), pending[0][2] if pending else 1, 1, source)


def load_machine(path: str) -> LambdaSFA:
    with open(path, encoding='utf-8') as handle:
        return loads_machine(handle.read(), path)


def dumps_machine(m: LambdaSFA) -> str:
    lines = [f"machine {m.name} ({', '.join(m.params)})", f"start {m.start}"]
    for tr in m.transitions:
        lines += ['', f"transition {tr.source} -> {tr.target}", f"  {to_text(tr.label)}"]
    return '\n'.join(lines) + '\n'
