"""
From product transitions to guarded source text.

Each transition label is minimized, stripped of what the service wrapper
already guarantees and split into checkable guards and enforceable actions.
The guards become a synthesized decision tree; a discharge table turns the
tree into C against the wrapper declaration contract.
"""

import hashlib
import logging
import re
from dataclasses import dataclass, fields
from enum import Enum
from typing import Optional

import admin
import config
from formula import (And, BoolConst, Const, DisjunctSet, Exists, Forall, Formula, Hole, Implies,
                     Literal, Node, Not, Or, ParseError, Prop, Term, Var, conjoin, format_disjunct,
                     free_vars, literal_of, minimize_dnf, parse, parse_pattern, sorted_literals,
                     substitute, to_dnf, to_text, walk, Eq)
from synth import DistributionProfile, Leaf, Objective, synthesize

logger = logging.getLogger(__name__)


class EmitError(Exception):
    """Base exception for classification, lowering and discharge"""
    pass


class UnclassifiableAtom(EmitError):
    """No classification rule matches an atom"""
    pass


class ClassificationConflict(EmitError):
    """An atom that is not checkable ended up where a guard is required"""
    pass


class MissingTemplate(EmitError):
    """No discharge table entry for a guard, statement or expression"""
    pass


class PlaceholderArityMismatch(EmitError):
    """Template placeholder without a matching pattern hole"""
    pass


class AmbiguousTemplate(EmitError):
    """Two discharge table entries with the same pattern and kind"""
    pass


class ProgramFormatError(EmitError):
    """Malformed decision program or discharge table text"""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class PredicateClass(Enum):
    CHECKABLE = 'checkable'
    ENFORCEABLE = 'enforceable'
    WRAPPER = 'wrapper'


# Pattern matching

def match(pattern, node, bindings: Optional[dict] = None, top: bool = True) -> Optional[dict]:
    """Hole bindings making pattern equal node, or None.

    A bare hole as the whole formula pattern matches only a propositional
    letter; anywhere else a hole matches any term or formula. Equalities
    match in either operand order and ?name quantifier binders bind the
    index variable.
    """
    found = dict(bindings or {})
    if isinstance(pattern, Hole):
        if top and not isinstance(node, Prop):
            return None
        if pattern.name in found:
            return found if found[pattern.name] == node else None
        found[pattern.name] = node
        return found
    if isinstance(pattern, Eq) and isinstance(node, Eq):
        for left, right in ((node.left, node.right), (node.right, node.left)):
            got = _match_all((pattern.left, pattern.right), (left, right), found)
            if got is not None:
                return got
        return None
    if isinstance(pattern, (Exists, Forall)) and type(node) is type(pattern):
        if pattern.var.startswith('?'):
            name = pattern.var[1:]
            if name in found and found[name] != Var(node.var):
                return None
            found[name] = Var(node.var)
        elif pattern.var != node.var:
            return None
        return match(pattern.body, node.body, found, top=False)
    if type(pattern) is not type(node):
        return None
    for f in fields(pattern):
        want, have = getattr(pattern, f.name), getattr(node, f.name)
        if isinstance(want, Node):
            found = match(want, have, found, top=False) if isinstance(have, Node) else None
        elif isinstance(want, tuple):
            found = _match_all(want, have, found) if isinstance(have, tuple) else None
        elif want != have:
            found = None
        if found is None:
            return None
    return found


def _match_all(patterns, nodes, bindings) -> Optional[dict]:
    if len(patterns) != len(nodes):
        return None
    found = bindings
    for want, have in zip(patterns, nodes):
        if isinstance(want, Node):
            found = match(want, have, found, top=False)
        elif want != have:
            found = None
        if found is None:
            return None
    return found


def pattern_holes(pattern) -> set:
    names = set()
    for node in walk(pattern):
        if isinstance(node, Hole):
            names.add(node.name)
        elif isinstance(node, (Exists, Forall)) and node.var.startswith('?'):
            names.add(node.var[1:])
    return names


# Classification

class Classifier:
    """Ordered (pattern, class) rules, first match wins"""

    def __init__(self, rules=None):
        self.rules = []
        for text, kind in (config.classification_rules if rules is None else rules):
            try:
                self.rules.append((parse_pattern(text), PredicateClass(kind)))
            except (ParseError, ValueError) as e:
                raise EmitError(f"bad classification rule {text!r}: {e}")
        self.cache = {}

    def classify(self, atom: Formula) -> PredicateClass:
        """
        Raises:
            UnclassifiableAtom: no rule matches
        """
        if atom not in self.cache:
            for pattern, kind in self.rules:
                if match(pattern, atom) is not None:
                    self.cache[atom] = kind
                    break
            else:
                raise UnclassifiableAtom(f"no classification rule matches {to_text(atom)}")
        return self.cache[atom]


def classify(atom: Formula, rules=None) -> PredicateClass:
    return Classifier(rules).classify(atom)


def guard_atom(atom: Formula) -> Formula:
    """Guards read the relayed input frame wherever the label names the output frame"""
    return substitute(atom, {'f': Var('x.f')})


# Transition plans

@dataclass(frozen=True)
class TransitionPlan:
    source: str
    target: str
    binds: bool
    context: tuple       # wrapper literals every disjunct carries
    eliminated: tuple    # literals the context implies
    disjuncts: DisjunctSet
    actions: dict        # checkable projection -> action disjunct
    fallback: tuple      # checkable alternatives of the default disjuncts
    tree: object


def _pins(lit: Literal) -> bool:
    """An enforced literal that fixes the output frame or the table"""
    return bool(free_vars(lit.atom) & {'f', 'mlt'})


def _projection(disjunct, classifier) -> frozenset:
    return frozenset(Literal(guard_atom(lit.atom), lit.positive) for lit in disjunct
                     if classifier.classify(lit.atom) is PredicateClass.CHECKABLE)


def plan_transition(tr, oracle, profile: DistributionProfile, classifier: Classifier,
                    objective=Objective.EXPECTED_TIME) -> TransitionPlan:
    """Minimize, remove wrapper guarantees, split into actions and defaults, synthesize guards"""
    dset = minimize_dnf(to_dnf(tr.label), oracle)
    classes = {atom: classifier.classify(atom) for atom in dset.atoms()}
    wrapper_sets = [frozenset(lit for lit in d if lit.positive and classes[lit.atom] is PredicateClass.WRAPPER)
                    for d in dset]
    context = frozenset.intersection(*wrapper_sets) if wrapper_sets else frozenset()
    context_formula = conjoin(context)
    eliminated = set()
    reduced = []
    for d in dset:
        if not oracle.is_satisfiable(conjoin(d | context)):
            continue
        implied = {lit for lit in d if oracle.implies(context_formula, lit.to_formula())}
        eliminated |= implied
        reduced.append(d - implied)
    for lit in sorted_literals(eliminated):
        logger.debug("%s -> %s: wrapper guarantees %s", tr.source, tr.target, lit)
    dset = minimize_dnf(DisjunctSet.build(reduced), oracle)

    body = dset.to_formula()
    actions, defaults = {}, []
    for d in dset:
        enforced = {lit for lit in d
                    if lit.positive and classifier.classify(lit.atom) is PredicateClass.ENFORCEABLE}
        if enforced and not any(_pins(lit) for lit in enforced):
            idle = (d - enforced) | {lit.negate() for lit in enforced}
            if oracle.implies(conjoin(idle | context), body):
                logger.debug("%s -> %s: idle covers %s", tr.source, tr.target, format_disjunct(d))
                enforced = set()
        if enforced:
            actions.setdefault(_projection(d, classifier), d)
        else:
            defaults.append(_projection(d, classifier))
    fallback = tuple(sorted(dict.fromkeys(defaults), key=lambda alt: (len(alt), format_disjunct(alt))))
    if actions:
        tree = synthesize(DisjunctSet.build(actions), profile, objective, oracle)
    else:
        tree = Leaf(None, ())
    return TransitionPlan(tr.source, tr.target, tr.binds_snapshot, tuple(sorted_literals(context)),
                          tuple(sorted_literals(eliminated)), dset, actions, fallback, tree)


# Decision programs

@dataclass(frozen=True)
class GuardNode:
    atom: Formula
    then: object
    orelse: object


@dataclass(frozen=True)
class ActionNode:
    statements: tuple   # enforceable and leftover wrapper literals


@dataclass(frozen=True)
class NoMatchNode:
    alternatives: tuple  # frozensets of checkable literals; empty means always


@dataclass(frozen=True)
class TransitionProgram:
    source: str
    target: str
    binds: bool
    context: tuple
    guard: object


@dataclass(frozen=True)
class DecisionProgram:
    name: str
    states: tuple
    start: str
    transitions: tuple

    def from_state(self, state: str) -> list:
        return [tp for tp in self.transitions if tp.source == state]


class Verdict(Enum):
    ACT = 'act'
    NOOP = 'noop'
    DISABLED = 'disabled'


def lower(tree, classifier: Classifier, actions: Optional[dict] = None, fallback: tuple = ()):
    """Guard tree of checkable tests with action and no-match blocks at the leaves.

    Raises:
        ClassificationConflict: a tested atom is not checkable
    """
    actions = actions or {}
    if isinstance(tree, Leaf):
        if not tree.matched:
            return NoMatchNode(tuple(fallback))
        disjunct = actions.get(tree.disjunct, tree.disjunct)
        return ActionNode(tuple(sorted_literals(lit for lit in disjunct
                                                if classifier.classify(lit.atom) is not PredicateClass.CHECKABLE)))
    if classifier.classify(tree.atom) is not PredicateClass.CHECKABLE:
        raise ClassificationConflict(f"{to_text(tree.atom)} is not checkable but is tested")
    return GuardNode(tree.atom, lower(tree.then, classifier, actions, fallback),
                     lower(tree.orelse, classifier, actions, fallback))


def lower_plan(plan: TransitionPlan, classifier: Classifier) -> TransitionProgram:
    return TransitionProgram(plan.source, plan.target, plan.binds, plan.context,
                             lower(plan.tree, classifier, plan.actions, plan.fallback))


def compile_product(m, oracle, profile: DistributionProfile, classifier: Optional[Classifier] = None,
                    objective=Objective.EXPECTED_TIME):
    """(DecisionProgram, plans) for every transition of a product"""
    classifier = classifier or Classifier()
    plans = [plan_transition(tr, oracle, profile, classifier, objective) for tr in m.transitions]
    programs = tuple(lower_plan(plan, classifier) for plan in plans)
    logger.info("lowered %d transitions of %s", len(programs), m.name)
    return DecisionProgram(m.name, tuple(m.states), m.start, programs), plans


def interpret_guard(node, valuation):
    """(Verdict, statements) for one guard tree; valuation maps a guard atom to bool"""
    while isinstance(node, GuardNode):
        node = node.then if valuation(node.atom) else node.orelse
    if isinstance(node, ActionNode):
        return Verdict.ACT, node.statements
    for alternative in node.alternatives:
        if all(valuation(lit.atom) == lit.positive for lit in alternative):
            return Verdict.NOOP, ()
    return Verdict.DISABLED, ()


def interpret(program: DecisionProgram, state: str, valuation):
    """(target, verdict, statements) of the first enabled transition out of state, or None"""
    for tp in program.from_state(state):
        verdict, statements = interpret_guard(tp.guard, valuation)
        if verdict is not Verdict.DISABLED:
            return tp.target, verdict, statements
    return None


def guard_count(program: DecisionProgram, state: str) -> int:
    """Tests plus guarded fallback alternatives out of one state"""

    def count(node):
        if isinstance(node, GuardNode):
            return 1 + count(node.then) + count(node.orelse)
        if isinstance(node, NoMatchNode):
            return sum(1 for alt in node.alternatives if alt)
        return 0

    return sum(count(tp.guard) for tp in program.from_state(state))


# Decision program text

def _literals_text(literals) -> str:
    return format_disjunct(literals) if literals else 'true'


def _parse_literals(text: str, line: int) -> frozenset:
    if text.strip() == 'true':
        return frozenset()
    try:
        return frozenset(literal_of(parse(part.strip(), line)) for part in text.split(' ; '))
    except Exception as e:
        raise ProgramFormatError(str(e), line)


def dumps_program(program: DecisionProgram) -> str:
    lines = [f"program {program.name}",
             f"states {' '.join(program.states)}",
             f"start {program.start}"]

    def node_lines(node, depth):
        pad = '  ' * depth
        if isinstance(node, GuardNode):
            lines.append(f"{pad}guard {to_text(node.atom)}")
            node_lines(node.then, depth + 1)
            node_lines(node.orelse, depth + 1)
        elif isinstance(node, ActionNode):
            lines.append(f"{pad}action {_literals_text(node.statements)}")
        else:
            lines.append(f"{pad}nomatch")
            for alt in node.alternatives:
                lines.append(f"{pad}  alt {_literals_text(alt)}")

    for tp in program.transitions:
        lines.append(f"transition {tp.source} -> {tp.target}{' binds' if tp.binds else ''}")
        lines.append(f"  context {_literals_text(tp.context)}")
        node_lines(tp.guard, 1)
    return '\n'.join(lines) + '\n'


def loads_program(text: str) -> DecisionProgram:
    """
    Raises:
        ProgramFormatError: malformed program text
    """
    rows = []
    for number, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith('#'):
            continue
        depth = (len(raw) - len(raw.lstrip(' '))) // 2
        rows.append((number, depth, raw.strip()))
    header = {}
    for key in ('program', 'states', 'start'):
        if not rows or not rows[0][2].startswith(key):
            raise ProgramFormatError(f"expected {key!r}", rows[0][0] if rows else None)
        header[key] = rows.pop(0)[2][len(key):].strip()
    pos = 0

    def node(depth):
        nonlocal pos
        if pos >= len(rows) or rows[pos][1] != depth:
            raise ProgramFormatError(f"expected a guard tree node at depth {depth}",
                                     rows[pos][0] if pos < len(rows) else None)
        number, _, body = rows[pos]
        pos += 1
        keyword, _, rest = body.partition(' ')
        if keyword == 'guard':
            try:
                atom = parse(rest, number)
            except ParseError as e:
                raise ProgramFormatError(e.message, number)
            return GuardNode(atom, node(depth + 1), node(depth + 1))
        if keyword == 'action':
            return ActionNode(tuple(sorted_literals(_parse_literals(rest, number))))
        if keyword == 'nomatch':
            alternatives = []
            while pos < len(rows) and rows[pos][1] == depth + 1 and rows[pos][2].startswith('alt '):
                alternatives.append(_parse_literals(rows[pos][2][4:], rows[pos][0]))
                pos += 1
            return NoMatchNode(tuple(alternatives))
        raise ProgramFormatError(f"unknown node {keyword!r}", number)

    transitions = []
    while pos < len(rows):
        number, depth, body = rows[pos]
        match_ = re.match(r'transition (\S+) -> (\S+)( binds)?$', body)
        if depth != 0 or not match_:
            raise ProgramFormatError(f"expected a transition, got {body!r}", number)
        pos += 1
        if pos >= len(rows) or not rows[pos][2].startswith('context'):
            raise ProgramFormatError("expected 'context'", number)
        context = _parse_literals(rows[pos][2][len('context'):].strip(), rows[pos][0])
        pos += 1
        transitions.append(TransitionProgram(match_.group(1), match_.group(2), bool(match_.group(3)),
                                             tuple(sorted_literals(context)), node(1)))
    return DecisionProgram(header['program'], tuple(header['states'].split()), header['start'],
                           tuple(transitions))


# Discharge tables

TEMPLATE_KINDS = ('guard', 'statement', 'expr')
_PLACEHOLDER_RE = re.compile(r'\{(\w+)\}')


@dataclass(frozen=True)
class TableEntry:
    pattern: object
    text: str
    kind: str
    template: str
    line: int


class DischargeTable:
    """Pattern to source-template entries, looked up in file order.

    File format::

        pattern (ucast ?0)
        kind guard
          is_unicast_ether_addr({0})
        end
    """

    def __init__(self, entries, source: str = '<table>', digest: str = ''):
        self.entries = list(entries)
        self.source = source
        self.digest = digest
        seen = {}
        for entry in self.entries:
            key = (entry.text, entry.kind)
            if key in seen:
                raise AmbiguousTemplate(f"{source}: {entry.kind} {entry.text} defined on lines "
                                        f"{seen[key]} and {entry.line}")
            seen[key] = entry.line
            missing = set(_PLACEHOLDER_RE.findall(entry.template)) - pattern_holes(entry.pattern)
            if missing:
                raise PlaceholderArityMismatch(f"{source}:{entry.line}: template uses "
                                               f"{', '.join(sorted(missing))} not bound by {entry.text}")

    @classmethod
    def loads(cls, text: str, source: str = '<table>') -> 'DischargeTable':
        """
        Raises:
            ProgramFormatError: malformed entry
            AmbiguousTemplate: duplicate pattern for one kind
            PlaceholderArityMismatch: template placeholder without a hole
        """
        entries = []
        lines = text.splitlines()
        i = 0
        while i < len(lines):
            raw = lines[i].strip()
            i += 1
            if not raw or raw.startswith('#'):
                continue
            start = i
            if not raw.startswith('pattern '):
                raise ProgramFormatError(f"{source}: expected 'pattern', got {raw!r}", start)
            pattern_text = raw[len('pattern '):].strip()
            if i >= len(lines) or not lines[i].strip().startswith('kind '):
                raise ProgramFormatError(f"{source}: expected 'kind'", i + 1)
            kind = lines[i].strip()[len('kind '):].strip()
            i += 1
            if kind not in TEMPLATE_KINDS:
                raise ProgramFormatError(f"{source}: unknown kind {kind!r}", i)
            body = []
            while i < len(lines) and lines[i].strip() != 'end':
                body.append(lines[i].strip())
                i += 1
            if i >= len(lines):
                raise ProgramFormatError(f"{source}: entry without 'end'", start)
            i += 1
            try:
                pattern = parse_pattern(pattern_text, term=(kind == 'expr'))
            except ParseError as e:
                raise ProgramFormatError(f"{source}: {e.message}", start)
            entries.append(TableEntry(pattern, pattern_text, kind, '\n'.join(body), start))
        digest = hashlib.sha256(text.encode()).hexdigest()
        logger.debug("loaded %d discharge entries from %s", len(entries), source)
        return cls(entries, source, digest)

    @classmethod
    def load(cls, path: str) -> 'DischargeTable':
        with open(path) as f:
            return cls.loads(f.read(), path)

    def lookup(self, node, kind: str):
        """(entry, bindings) of the first entry of kind matching node"""
        for entry in self.entries:
            if entry.kind != kind:
                continue
            found = match(entry.pattern, node, top=(kind != 'expr'))
            if found is not None:
                return entry, found
        raise MissingTemplate(f"{self.source}: no {kind} template for {to_text(node)}")

    def _instantiate(self, entry, bindings, bound):
        rendered = {}
        for name, value in bindings.items():
            if isinstance(value, Var) and value.name in bound:
                rendered[name] = value.name
            elif isinstance(value, Term):
                rendered[name] = self.render_expr(value, bound)
            else:
                rendered[name] = self.render_guard(value, bound)
        return _PLACEHOLDER_RE.sub(lambda m: rendered[m.group(1)], entry.template)

    def render_expr(self, term, bound=frozenset()) -> str:
        if isinstance(term, Var) and term.name in bound:
            return term.name
        if isinstance(term, Const):
            if term.sort == 'int':
                return str(term.value)
            if term.sort == 'tag':
                return 'PROTO_' + term.value.upper().replace('-', '_')
            return '0x' + term.value.replace(':', '') + 'ULL'
        entry, bindings = self.lookup(term, 'expr')
        return self._instantiate(entry, bindings, bound)

    def render_guard(self, formula, bound=frozenset()) -> str:
        if isinstance(formula, BoolConst):
            return '1' if formula.value else '0'
        if isinstance(formula, Prop):
            return f"flag_{formula.name}"
        if isinstance(formula, Not):
            return f"!{self.render_guard(formula.body, bound)}"
        if isinstance(formula, (And, Or)):
            glue = ' && ' if isinstance(formula, And) else ' || '
            return '(' + glue.join(self.render_guard(item, bound) for item in formula.items) + ')'
        if isinstance(formula, Implies):
            return f"(!{self.render_guard(formula.left, bound)} || {self.render_guard(formula.right, bound)})"
        entry, bindings = self.lookup(formula, 'guard')
        if isinstance(formula, (Exists, Forall)):
            bound = bound | {formula.var}
        return self._instantiate(entry, bindings, bound)

    def render_statement(self, literal: Literal) -> str:
        formula = literal.to_formula()
        entry, bindings = self.lookup(formula, 'statement')
        if isinstance(formula, (Exists, Forall)):
            return self._instantiate(entry, bindings, frozenset({formula.var}))
        if isinstance(formula, Not) and isinstance(formula.body, (Exists, Forall)):
            return self._instantiate(entry, bindings, frozenset({formula.body.var}))
        return self._instantiate(entry, bindings, frozenset())


# C emission

WRAPPER_HEADER = 'nfc_wrapper.h'


def discharge(program: DecisionProgram, table: DischargeTable, profile_digest: str = '') -> str:
    """C source with one dispatch function per product state.

    Each function returns the next state, or NFC_STUCK when no transition
    out of the state is enabled for this egress port.

    Raises:
        MissingTemplate: a guard, statement or expression has no table entry
    """
    out = ['/*',
           f' * generated by {admin.tool_name} {admin.version}',
           f' * product: {program.name}',
           f' * discharge table: {table.source} sha256 {table.digest}']
    if profile_digest:
        out.append(f' * profile: sha256 {profile_digest}')
    out += [f' * wrapper contract: {WRAPPER_HEADER}',
            ' * discipline: single core, one frame in flight',
            ' */',
            '',
            f'#include "{WRAPPER_HEADER}"',
            '']
    if program.states:
        out.append('enum nfc_state {')
        out += [f'    STATE_{state},' for state in program.states]
        out += ['};', '']

    def guard_text(alternative):
        parts = [table.render_guard(lit.to_formula()) for lit in sorted_literals(alternative)]
        return parts[0] if len(parts) == 1 else '(' + ' && '.join(parts) + ')'

    def emit(node, target, depth):
        pad = '    ' * depth
        if isinstance(node, GuardNode):
            out.append(f"{pad}if ({table.render_guard(node.atom)}) {{")
            emit(node.then, target, depth + 1)
            out.append(f"{pad}}} else {{")
            emit(node.orelse, target, depth + 1)
            out.append(f"{pad}}}")
        elif isinstance(node, ActionNode):
            for lit in node.statements:
                for row in table.render_statement(lit).splitlines():
                    out.append(pad + row)
            out.append(f"{pad}return STATE_{target};")
        elif any(not alt for alt in node.alternatives):
            out.append(f"{pad}return STATE_{target};")
        elif node.alternatives:
            cond = ' || '.join(guard_text(alt) for alt in node.alternatives)
            out.append(f"{pad}if ({cond})")
            out.append(f"{pad}    return STATE_{target};")
        else:
            out.append(f"{pad}/* no match */")

    for state in program.states:
        out.append(f"int dispatch_{state}(struct nfc_ctx *ctx, uint16_t buf, unsigned self)")
        out.append('{')
        for tp in program.from_state(state):
            out.append(f"    /* {tp.source} -> {tp.target} */")
            emit(tp.guard, tp.target, 1)
        out.append('    return NFC_STUCK;')
        out += ['}', '']
    logger.info("discharged %d states of %s", len(program.states), program.name)
    return '\n'.join(out)
