"""
Satisfiability of transition formulas over a finite switch domain.

The internal backend grounds a formula (quantifiers unrolled over the table
size, frame and table equalities split into field equalities), branches over
atom truth values and checks every partial literal set for a model of the
underlying slots: location, self, time, frame fields, table entries and
their snapshot copies. The external backend hands an SMT-LIB v2 script to a
solver process.
"""

import itertools
import logging
import os
import re
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import admin
import config
from formula import (TRUE, And, BoolConst, Const, Diff, Env, Eq, Exists, Field,
                     Forall, Formula, Haddr, Hole, Iface, Implies, In, Lambda, Le, Lookup,
                     Not, Or, PENDING, Pred, Prop, SetLit, Subset, Term, Update, Var,
                     atoms_in_order, conj, evaluate_partial, expand_quantifiers, is_atom,
                     strip_lambda, substitute, to_text, walk)
from frames import BROADCAST, EGRESS, INGRESS, Frame, MacEntry, haddr, is_unicast

logger = logging.getLogger(__name__)

FRAME_SLOTS = ('da', 'sa', 'proto', 'arp')
ENTRY_SLOTS = ('mac', 't', 'port')


class OracleError(Exception):
    """Base exception for satisfiability checking"""
    pass


class InvalidDomain(OracleError):
    """Domain configuration violates its own invariants"""
    pass


class DomainTooLarge(OracleError):
    """Search budget exhausted before an answer was found"""
    pass


class ExternalSolverError(OracleError):
    """Solver process failed, timed out or replied with something other than sat/unsat"""
    pass


class UnsupportedConstruct(OracleError):
    """Construct the SMT-LIB translation cannot express"""
    pass


def _default(name):
    return field(default_factory=lambda: getattr(config, name))


def _default_tuple(name):
    return field(default_factory=lambda: tuple(getattr(config, name)))


@dataclass(frozen=True)
class DomainConfig:
    """Finite sorts the oracle searches over"""
    num_ports: int = _default('num_ports')
    mac_universe: tuple = _default_tuple('mac_universe')
    time_bound: int = _default('time_bound')
    mlt_size: int = _default('mlt_size')
    proto_tags: tuple = _default_tuple('proto_tags')
    uplink_port: int = _default('uplink_port')
    mto: int = _default('mto')
    haddr_prefix: str = _default('haddr_prefix')

    def __post_init__(self):
        if self.num_ports < 2:
            raise InvalidDomain(f"num_ports must be at least 2, got {self.num_ports}")
        if self.mlt_size < 1:
            raise InvalidDomain(f"mlt_size must be at least 1, got {self.mlt_size}")
        if BROADCAST not in self.mac_universe:
            raise InvalidDomain("mac_universe must include the broadcast address")
        if self.uplink_port not in self.ports:
            raise InvalidDomain(f"uplink port {self.uplink_port} is not a switch port")
        object.__setattr__(self, 'mac_universe', tuple(self.mac_universe))
        object.__setattr__(self, 'proto_tags', tuple(self.proto_tags))

    @classmethod
    def from_settings(cls, settings: dict) -> 'DomainConfig':
        names = ('num_ports', 'mac_universe', 'time_bound', 'mlt_size', 'proto_tags',
                 'uplink_port', 'mto', 'haddr_prefix')
        return cls(**{name: settings[name] for name in names if name in settings})

    @property
    def ports(self) -> range:
        return range(1, self.num_ports + 1)

    def haddr(self, port: int) -> str:
        return haddr(port, self.haddr_prefix)

    @property
    def macs(self) -> tuple:
        """MAC universe plus the ports' own hardware addresses"""
        return tuple(dict.fromkeys(self.mac_universe + tuple(self.haddr(p) for p in self.ports)))

    @property
    def times(self) -> range:
        return range(0, self.time_bound + 1)

    @property
    def interfaces(self) -> list:
        return [(p, d) for p in self.ports for d in (INGRESS, EGRESS)]

    @property
    def locations(self) -> list:
        """Every interface set: ingress singletons first, then egress sets, then mixed sets"""
        singles = [frozenset({(p, INGRESS)}) for p in self.ports]
        egress_sets = [frozenset((p, EGRESS) for p in combo)
                       for size in range(self.num_ports + 1)
                       for combo in itertools.combinations(self.ports, size)]
        seen = set(singles) | set(egress_sets)
        mixed = []
        for size in range(1, len(self.interfaces) + 1):
            for combo in itertools.combinations(self.interfaces, size):
                loc = frozenset(combo)
                if loc not in seen:
                    mixed.append(loc)
        return singles + egress_sets + mixed


# Slots: the scalar unknowns behind trace variables

def _table_slots(prefix: str, size: int) -> set:
    return {f"{prefix}[{k}].{name}" for k in range(size) for name in ENTRY_SLOTS}


def _var_slots(name: str, cfg: DomainConfig) -> set:
    if name in ('t', 'x.t', 'self'):
        return {name}
    if name in ('loc', 'port'):
        return {'loc'}
    if name in ('x.loc', 'x.port'):
        return {'x.loc'}
    if name in ('f', 'x.f'):
        return {f"{name}.{part}" for part in FRAME_SLOTS}
    if name in ('mlt', 'x.mlt'):
        return _table_slots(name, cfg.mlt_size)
    return set()


def term_slots(node, cfg: DomainConfig) -> set:
    """Slots an atom or term depends on"""
    if isinstance(node, Prop):
        return {f"prop:{node.name}"}
    if isinstance(node, Var):
        return _var_slots(node.name, cfg)
    if isinstance(node, Field):
        base = node.base
        if isinstance(base, Var) and base.name in ('f', 'x.f'):
            return {f"{base.name}.{node.name}"}
        if isinstance(base, Lookup) and isinstance(base.table, Var) and isinstance(base.index, Const):
            return {f"{base.table.name}[{base.index.value}].{node.name}"}
        return term_slots(base, cfg)
    found = set()
    for child in node.children():
        found |= term_slots(child, cfg)
    return found


def slot_domain(slot: str, cfg: DomainConfig) -> list:
    if slot.startswith('prop:'):
        return [True, False]
    if slot in ('loc', 'x.loc'):
        return cfg.locations
    if slot == 'self' or slot.endswith('.port'):
        return list(cfg.ports)
    if slot in ('t', 'x.t') or slot.endswith('.t'):
        return list(cfg.times)
    if slot.endswith(('.da', '.sa', '.mac')):
        return list(cfg.macs)
    if slot.endswith('.proto'):
        return list(cfg.proto_tags)
    if slot.endswith('.arp'):
        return [None] + list(cfg.ports)
    raise OracleError(f"no domain for slot {slot}")


def slot_env(assign: dict, cfg: DomainConfig, prop_names=()) -> Env:
    """Partial environment; unassigned slots read as PENDING"""

    def get(slot):
        return assign.get(slot, PENDING)

    def frame(prefix):
        return Frame(*(get(f"{prefix}.{part}") for part in FRAME_SLOTS))

    def table(prefix):
        return tuple(MacEntry(*(get(f"{prefix}[{k}].{part}") for part in ENTRY_SLOTS))
                     for k in range(cfg.mlt_size))

    snapshot = Env(time=get('x.t'), frame=frame('x.f'), loc=get('x.loc'), self_port=get('self'),
                   uplink_port=cfg.uplink_port, mto=cfg.mto, mlt=table('x.mlt'),
                   haddr_prefix=cfg.haddr_prefix)
    props = frozenset(name for name in prop_names if assign.get(f"prop:{name}") is True)
    pending = frozenset(name for name in prop_names if f"prop:{name}" not in assign)
    return Env(time=get('t'), frame=frame('f'), loc=get('loc'), self_port=get('self'),
               uplink_port=cfg.uplink_port, mto=cfg.mto, mlt=table('mlt'), snapshot=snapshot,
               props=props, pending_props=pending, haddr_prefix=cfg.haddr_prefix)


# Grounding

def _frame_var(term) -> bool:
    return isinstance(term, Var) and term.name in ('f', 'x.f')


def _table_term(term) -> bool:
    return isinstance(term, Update) or (isinstance(term, Var) and term.name in ('mlt', 'x.mlt'))


def _entry_field(table: Term, k: int, name: str) -> Term:
    if isinstance(table, Update):
        if not isinstance(table.index, Const):
            raise UnsupportedConstruct(f"update index {to_text(table.index)} is not ground")
        if table.index.value == k:
            return {'mac': table.mac, 't': table.t, 'port': table.port}[name]
        return _entry_field(table.table, k, name)
    return Field(Lookup(table, Const(k, 'int')), name)


def _split_equality(atom: Eq, cfg: DomainConfig) -> Formula:
    left, right = atom.left, atom.right
    if left == right:
        return TRUE
    if _frame_var(left) and _frame_var(right):
        return conj(Eq(Field(left, part), Field(right, part)) for part in FRAME_SLOTS)
    if _table_term(left) and _table_term(right):
        parts = []
        for k in range(cfg.mlt_size):
            for name in ENTRY_SLOTS:
                a, b = _entry_field(left, k, name), _entry_field(right, k, name)
                if a != b:
                    parts.append(Eq(a, b))
        return conj(parts)
    return atom


def ground(formula: Formula, cfg: DomainConfig) -> Formula:
    """Quantifier-free form with frame and table equalities split into field equalities"""
    expanded = expand_quantifiers(strip_lambda(formula), cfg.mlt_size)

    def visit(node):
        if isinstance(node, Eq):
            return _split_equality(node, cfg)
        if is_atom(node) or isinstance(node, Term):
            return node
        return node.rebuild(visit)

    return visit(expanded)


# Internal backend

class _Search:
    """Branch over atom values with unit propagation, check each literal set against the slot domains.

    Theory results are cached per independent group of literals, so a cache
    passed in by the oracle carries over between queries on one domain.
    """

    def __init__(self, formula: Formula, cfg: DomainConfig, budget: int, theory_cache: Optional[dict] = None):
        self.cfg = cfg
        self.formula = ground(formula, cfg)
        self.budget = budget
        self.steps = 0
        self.prop_names = sorted(node.name for node in walk(self.formula) if isinstance(node, Prop))
        self.slots = {atom: term_slots(atom, cfg) for atom in atoms_in_order(self.formula)}
        self.theory_cache = {} if theory_cache is None else theory_cache

    def tick(self):
        self.steps += 1
        if self.steps > self.budget:
            raise DomainTooLarge(f"search budget of {self.budget} steps exhausted")

    def value(self, node, assign) -> Optional[bool]:
        """Truth value under a partial atom assignment, None while undecided"""
        if isinstance(node, BoolConst):
            return node.value
        if isinstance(node, Not):
            value = self.value(node.body, assign)
            return None if value is None else not value
        if isinstance(node, Implies):
            return self.value(Or((Not(node.left), node.right)), assign)
        if isinstance(node, (And, Or)):
            stop = isinstance(node, Or)
            undecided = False
            for item in node.items:
                value = self.value(item, assign)
                if value is stop:
                    return stop
                if value is None:
                    undecided = True
            return None if undecided else not stop
        if node in self.slots:
            return assign.get(node)
        raise OracleError(f"unexpected node in ground formula: {to_text(node)}")

    def propagate(self, node, want: bool, assign: dict, trail: list) -> bool:
        """Assign the atoms node forces when it must evaluate to want; False on conflict"""
        if isinstance(node, BoolConst):
            return node.value == want
        if isinstance(node, Not):
            return self.propagate(node.body, not want, assign, trail)
        if isinstance(node, Implies):
            return self.propagate(Or((Not(node.left), node.right)), want, assign, trail)
        if isinstance(node, (And, Or)):
            if isinstance(node, And) == want:
                return all(self.propagate(item, want, assign, trail) for item in node.items)
            open_items = []
            for item in node.items:
                value = self.value(item, assign)
                if value is want:
                    return True
                if value is None:
                    open_items.append(item)
            if len(open_items) == 1:
                return self.propagate(open_items[0], want, assign, trail)
            return bool(open_items)
        current = assign.get(node)
        if current is None:
            assign[node] = want
            trail.append(node)
            return True
        return current == want

    def unit_propagate(self, assign: dict, trail: list) -> bool:
        while True:
            before = len(trail)
            if not self.propagate(self.formula, True, assign, trail):
                return False
            if len(trail) == before:
                return True

    def pick(self, node, want: bool, assign: dict):
        """(open choices, atom, preferred value) for the most constrained choice under node"""
        if isinstance(node, Not):
            return self.pick(node.body, not want, assign)
        if isinstance(node, Implies):
            return self.pick(Or((Not(node.left), node.right)), want, assign)
        if isinstance(node, (And, Or)):
            open_items = [item for item in node.items if self.value(item, assign) is None]
            if isinstance(node, And) == want:
                best = None
                for item in open_items:
                    found = self.pick(item, want, assign)
                    if found is not None and (best is None or found[0] < best[0]):
                        best = found
                return best
            if not open_items:
                return None
            _, atom, prefer = self.pick(open_items[0], want, assign)
            return len(open_items), atom, prefer
        return 1, node, want

    def solve(self, assign: dict) -> bool:
        self.tick()
        trail = []
        found = False
        if self.unit_propagate(assign, trail) and self.consistent(assign):
            value = self.value(self.formula, assign)
            if value is True:
                found = True
            elif value is None:
                _, atom, prefer = self.pick(self.formula, True, assign)
                for choice in (prefer, not prefer):
                    assign[atom] = choice
                    found = self.solve(assign)
                    del assign[atom]
                    if found:
                        break
        for atom in trail:
            del assign[atom]
        return found

    def consistent(self, assign: dict) -> bool:
        for group in self.components(list(assign.items()), {}):
            key = frozenset(group)
            if key not in self.theory_cache:
                self.theory_cache[key] = self.model_exists(group, {})
            if not self.theory_cache[key]:
                return False
        return True

    def model_exists(self, literals: list, slots: dict) -> bool:
        self.tick()
        env = slot_env(slots, self.cfg, self.prop_names)
        pending = []
        for atom, wanted in literals:
            value = evaluate_partial(atom, env)
            if value is None:
                pending.append((atom, wanted))
            elif value != wanted:
                return False
        for group in self.components(pending, slots):
            if not self.solve_component(group, slots):
                return False
        return True

    def components(self, literals: list, slots: dict) -> list:
        """Split literals into groups that share no unassigned slot"""
        groups = []
        for literal in literals:
            open_slots = self.slots[literal[0]] - slots.keys()
            joined = [g for g in groups if g[1] & open_slots]
            merged_lits = [literal]
            merged_slots = set(open_slots)
            for g in joined:
                merged_lits = g[0] + merged_lits
                merged_slots |= g[1]
                groups.remove(g)
            groups.append((merged_lits, merged_slots))
        return [g[0] for g in groups]

    def solve_component(self, literals: list, slots: dict) -> bool:
        counts = {}
        for atom, _ in literals:
            for slot in self.slots[atom] - slots.keys():
                counts[slot] = counts.get(slot, 0) + 1
        if not counts:
            return False
        slot = min(counts, key=lambda s: (-counts[s], s))
        for value in slot_domain(slot, self.cfg):
            slots[slot] = value
            found = self.model_exists(literals, slots)
            del slots[slot]
            if found:
                return True
        return False


def _internal_check(formula: Formula, cfg: DomainConfig, budget: int, theory_cache: Optional[dict] = None) -> bool:
    search = _Search(formula, cfg, budget, theory_cache)
    result = search.solve({})
    logger.debug("internal oracle: %s after %d steps", 'sat' if result else 'unsat', search.steps)
    return result


# SMT-LIB translation

def _smt_name(slot: str) -> str:
    if slot == 'self':
        return 'self_port'
    return re.sub(r'[^A-Za-z0-9_\-]+', '_', slot).strip('_')


def _and(parts) -> str:
    parts = [p for p in parts if p != 'true']
    if 'false' in parts:
        return 'false'
    if not parts:
        return 'true'
    return parts[0] if len(parts) == 1 else '(and ' + ' '.join(parts) + ')'


def _or(parts) -> str:
    parts = [p for p in parts if p != 'false']
    if 'true' in parts:
        return 'true'
    if not parts:
        return 'false'
    return parts[0] if len(parts) == 1 else '(or ' + ' '.join(parts) + ')'


def _int(value: int) -> str:
    return str(value) if value >= 0 else f"(- {-value})"


class _SmtWriter:
    """Ground formula to SMT-LIB text over enumerated MAC and protocol sorts"""

    def __init__(self, cfg: DomainConfig):
        self.cfg = cfg
        self.macs = list(cfg.macs)

    def mac(self, value: str) -> str:
        if value not in self.macs:
            raise UnsupportedConstruct(f"MAC {value} is outside the domain")
        return f"mac{self.macs.index(value)}"

    def tag(self, value: str) -> str:
        if value not in self.cfg.proto_tags:
            raise UnsupportedConstruct(f"protocol tag {value} is outside the domain")
        return f"tag_{value}"

    def loc_set(self, name: str) -> dict:
        prefix = _smt_name(name)
        return {iface: f"{prefix}_{iface[0]}{iface[1]}" for iface in self.cfg.interfaces}

    def single_ingress(self, loc: dict, port: int) -> str:
        return _and(loc[iface] if iface == (port, INGRESS) else f"(not {loc[iface]})"
                    for iface in self.cfg.interfaces)

    def term(self, term):
        if isinstance(term, Var):
            if term.name in ('loc', 'x.loc'):
                return self.loc_set(term.name)
            if term.name == 'egress':
                return {iface: 'true' if iface[1] == EGRESS else 'false' for iface in self.cfg.interfaces}
            if term.name in ('t', 'x.t', 'self'):
                return _smt_name(term.name)
            if term.name == 'uplink-port':
                return _int(self.cfg.uplink_port)
            if term.name == 'mto':
                return _int(self.cfg.mto)
            raise UnsupportedConstruct(f"{term.name} has no scalar encoding")
        if isinstance(term, Const):
            if term.sort == 'mac':
                return self.mac(term.value)
            if term.sort == 'tag':
                return self.tag(term.value)
            return _int(term.value)
        if isinstance(term, Field):
            slots = term_slots(term, self.cfg)
            if len(slots) != 1:
                raise UnsupportedConstruct(f"{to_text(term)} is not a single field")
            return _smt_name(slots.pop())
        if isinstance(term, Haddr):
            if isinstance(term.port, Const):
                return self.mac(self.cfg.haddr(term.port.value))
            port = self.term(term.port)
            ports = list(self.cfg.ports)
            text = self.mac(self.cfg.haddr(ports[-1]))
            for p in reversed(ports[:-1]):
                text = f"(ite (= {port} {p}) {self.mac(self.cfg.haddr(p))} {text})"
            return text
        if isinstance(term, Diff):
            return f"(- {self.term(term.left)} {self.term(term.right)})"
        if isinstance(term, SetLit):
            return {iface: _or(self.member(item, iface) for item in term.items)
                    for iface in self.cfg.interfaces}
        raise UnsupportedConstruct(f"no SMT-LIB encoding for {to_text(term)}")

    def member(self, item, iface) -> str:
        if not isinstance(item, Iface):
            raise UnsupportedConstruct(f"set member {to_text(item)} is not an interface")
        if item.direction != iface[1]:
            return 'false'
        return f"(= {self.term(item.port)} {iface[0]})"

    def atom(self, atom: Formula) -> str:
        ports_used = sorted({node.name for node in walk(atom)
                             if isinstance(node, Var) and node.name in ('port', 'x.port')})
        if ports_used:
            name = ports_used[0]
            loc = self.loc_set('loc' if name == 'port' else 'x.loc')
            return _or(f"(and {self.single_ingress(loc, p)} "
                       f"{self.atom(substitute(atom, {name: Const(p, 'int')}))})"
                       for p in self.cfg.ports)
        if isinstance(atom, Prop):
            return _smt_name(f"prop:{atom.name}")
        if isinstance(atom, Eq):
            left, right = self.term(atom.left), self.term(atom.right)
            if isinstance(left, dict) or isinstance(right, dict):
                return _and(f"(= {left[i]} {right[i]})" for i in self.cfg.interfaces)
            return f"(= {left} {right})"
        if isinstance(atom, In):
            element, collection = atom.element, self.term(atom.collection)
            if not isinstance(element, Iface):
                raise UnsupportedConstruct(f"membership of {to_text(element)}")
            port = self.term(element.port)
            return _or(f"(and (= {port} {q}) {collection[(q, element.direction)]})" for q in self.cfg.ports)
        if isinstance(atom, Subset):
            left, right = self.term(atom.left), self.term(atom.right)
            return _and(f"(=> {left[i]} {right[i]})" for i in self.cfg.interfaces)
        if isinstance(atom, Le):
            return f"(<= {self.term(atom.left)} {self.term(atom.right)})"
        if isinstance(atom, Pred):
            if atom.name == 'arp-reqrx':
                frame, port = atom.args
                if 'arpreq' not in self.cfg.proto_tags:
                    return 'false'
                prefix = _smt_name(frame.name)
                return f"(and (= {prefix}_proto tag_arpreq) (= {prefix}_arp {self.term(port)}))"
            mac = self.term(atom.args[0])
            if atom.name == 'bcast':
                return f"(= {mac} {self.mac(BROADCAST)})"
            return _or(f"(= {mac} {self.mac(m)})" for m in self.macs if is_unicast(m))
        raise UnsupportedConstruct(f"no SMT-LIB encoding for {to_text(atom)}")

    def formula(self, node: Formula) -> str:
        if isinstance(node, BoolConst):
            return 'true' if node.value else 'false'
        if isinstance(node, Not):
            return f"(not {self.formula(node.body)})"
        if isinstance(node, And):
            return _and(self.formula(item) for item in node.items)
        if isinstance(node, Or):
            return _or(self.formula(item) for item in node.items)
        if isinstance(node, Implies):
            return f"(=> {self.formula(node.left)} {self.formula(node.right)})"
        if isinstance(node, (Exists, Forall, Lambda, Hole)):
            raise UnsupportedConstruct(f"{to_text(node)} must be expanded first")
        return self.atom(node)

    def declare(self, slot: str) -> list:
        if slot in ('loc', 'x.loc'):
            return [f"(declare-const {name} Bool)" for name in self.loc_set(slot).values()]
        name = _smt_name(slot)
        if slot.startswith('prop:'):
            return [f"(declare-const {name} Bool)"]
        if slot.endswith(('.da', '.sa', '.mac')):
            return [f"(declare-const {name} Mac)"]
        if slot.endswith('.proto'):
            return [f"(declare-const {name} Proto)"]
        low, high = {
            'arp': (0, self.cfg.num_ports),
            'port': (1, self.cfg.num_ports),
        }.get(slot.rsplit('.', 1)[-1], (0, self.cfg.time_bound))
        if slot == 'self':
            low, high = 1, self.cfg.num_ports
        return [f"(declare-const {name} Int)", f"(assert (and (<= {low} {name}) (<= {name} {high})))"]


def to_smtlib(formula: Formula, cfg: Optional[DomainConfig] = None) -> str:
    """SMT-LIB v2 script deciding satisfiability of formula.

    Frame arp targets are encoded as port numbers with 0 for "no target".

    Raises:
        UnsupportedConstruct: formula still holds a table update term
    """
    cfg = cfg or DomainConfig()
    if any(isinstance(node, Update) for node in walk(formula)):
        raise UnsupportedConstruct("table update terms must be rewritten to field equalities first")
    grounded = ground(formula, cfg)
    writer = _SmtWriter(cfg)
    body = writer.formula(grounded)
    slots = set()
    for atom in atoms_in_order(grounded):
        slots |= term_slots(atom, cfg)
    lines = [f"; {admin.tool_name} {admin.version}",
             "(set-logic ALL)",
             "(declare-datatype Mac (" + ' '.join(f"(mac{k})" for k in range(len(writer.macs))) + "))",
             "(declare-datatype Proto (" + ' '.join(f"(tag_{tag})" for tag in cfg.proto_tags) + "))"]
    for slot in sorted(slots):
        lines.extend(writer.declare(slot))
    lines.append(f"(assert {body})")
    lines.append("(check-sat)")
    return '\n'.join(lines) + '\n'


# External backend

class ExternalSolver:
    """One solver process per query, script on stdin, verdict on stdout"""

    def __init__(self, path=None, args=None, timeout=None, max_retries=None, retry_delay=None):
        """
        Args:
            path: solver executable; NFC_SOLVER overrides config.solver_path
            args: extra command line arguments
            timeout: seconds per query
            max_retries: retries after a timeout or failed launch
            retry_delay: initial delay between retries (exponential backoff)
        """
        self.path = path or os.getenv('NFC_SOLVER') or config.solver_path
        self.args = list(config.solver_args if args is None else args)
        self.timeout = config.solver_timeout if timeout is None else timeout
        self.max_retries = config.solver_retries if max_retries is None else max_retries
        self.retry_delay = config.solver_retry_delay if retry_delay is None else retry_delay

    def check(self, script: str) -> bool:
        command = [self.path] + shlex.split(' '.join(self.args))
        for attempt in range(self.max_retries + 1):
            try:
                result = subprocess.run(command, input=script, capture_output=True,
                                        text=True, timeout=self.timeout)
            except (subprocess.TimeoutExpired, OSError) as e:
                if attempt < self.max_retries:
                    delay = self.retry_delay * (2 ** attempt)
                    logger.warning(f"Solver error: {e}, retrying in {delay}s "
                                   f"(attempt {attempt + 1}/{self.max_retries + 1})")
                    time.sleep(delay)
                    continue
                raise ExternalSolverError(f"solver failed after {self.max_retries} retries: {e}")
            lines = [line.strip() for line in result.stdout.splitlines() if line.strip()]
            reply = lines[0] if lines else ''
            if reply in ('sat', 'unsat'):
                return reply == 'sat'
            if result.returncode != 0:
                raise ExternalSolverError(f"solver exited with status {result.returncode}: "
                                          f"{result.stderr.strip() or reply}")
            raise ExternalSolverError(f"unexpected solver reply {reply!r}")
        raise ExternalSolverError("max retries exceeded")


# Oracle front end

class SatOracle:
    """Cached satisfiability checks over one domain"""

    def __init__(self, domain: Optional[DomainConfig] = None, backend: Optional[str] = None,
                 solver: Optional[ExternalSolver] = None, budget: Optional[int] = None):
        self.domain = domain or DomainConfig()
        self.backend = backend or config.solver_backend
        if self.backend not in ('internal', 'external'):
            raise OracleError(f"unknown solver backend {self.backend!r}")
        self.solver = solver or (ExternalSolver() if self.backend == 'external' else None)
        self.budget = budget or config.oracle_budget
        self.cache = {}
        self.theory_cache = {}
        self.calls = 0

    def is_satisfiable(self, formula: Formula) -> bool:
        if formula in self.cache:
            return self.cache[formula]
        self.calls += 1
        started = time.time()
        if self.backend == 'external':
            result = self.solver.check(to_smtlib(ground(formula, self.domain), self.domain))
        else:
            result = _internal_check(formula, self.domain, self.budget, self.theory_cache)
        logger.debug("oracle %s -> %s (%.1f ms)", to_text(formula), 'sat' if result else 'unsat',
                     (time.time() - started) * 1000)
        self.cache[formula] = result
        return result

    def implies(self, antecedent: Formula, consequent: Formula) -> bool:
        return not self.is_satisfiable(conj([strip_lambda(antecedent), Not(strip_lambda(consequent))]))


def is_satisfiable(formula: Formula, cfg: Optional[DomainConfig] = None, backend: str = 'internal') -> bool:
    """Whether some trace state over the finite domain satisfies formula.

    Raises:
        DomainTooLarge: internal search budget exhausted
        ExternalSolverError: external backend failure
    """
    return SatOracle(cfg, backend).is_satisfiable(formula)


def implies(antecedent: Formula, consequent: Formula, cfg: Optional[DomainConfig] = None) -> bool:
    return SatOracle(cfg).implies(antecedent, consequent)


# Brute-force enumeration

_SLOT_ORDER = ('loc', 'self', 't', 'f.da', 'f.sa', 'f.proto', 'f.arp',
               'x.loc', 'x.t', 'x.f.da', 'x.f.sa', 'x.f.proto', 'x.f.arp')


def _slot_rank(slot: str):
    if slot in _SLOT_ORDER:
        return (0, _SLOT_ORDER.index(slot), '')
    if slot.startswith('prop:'):
        return (1, 0, slot)
    match = re.match(r'^(x\.)?mlt\[(\d+)\]\.(\w+)$', slot)
    if match:
        return (2, int(match.group(2)) * 10 + ENTRY_SLOTS.index(match.group(3)) * 2 + bool(match.group(1)), '')
    return (3, 0, slot)


def enumerate_models(formula: Formula, cfg: Optional[DomainConfig] = None) -> Iterator[dict]:
    """Every slot assignment satisfying formula, evaluated without grounding.

    Partial assignments that already falsify the formula are cut off; every
    other combination of slot values is visited.
    """
    cfg = cfg or DomainConfig()
    body = strip_lambda(formula)
    slots = set()
    for atom in atoms_in_order(expand_quantifiers(body, cfg.mlt_size)):
        slots |= term_slots(atom, cfg)
    order = sorted(slots, key=_slot_rank)
    prop_names = sorted(node.name for node in walk(body) if isinstance(node, Prop))
    assign = {}

    def visit(position):
        value = evaluate_partial(body, slot_env(assign, cfg, prop_names))
        if value is False:
            return
        if position == len(order):
            if value:
                yield dict(assign)
            return
        slot = order[position]
        for choice in slot_domain(slot, cfg):
            assign[slot] = choice
            yield from visit(position + 1)
            del assign[slot]

    yield from visit(0)
