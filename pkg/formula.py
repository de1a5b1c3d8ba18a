"""
Predicate language labelling lambda-SFA transitions.

Formulas are written as S-expressions, for example

    (=> (= loc (set (ing port))) (or (= port uplink-port) (= f.da (haddr port))))

and parse into immutable dataclass trees. This module evaluates them against
an Env, normalizes them to disjunctive normal form and minimizes the result
with help from a satisfiability oracle. DSL_REFERENCE.md has the grammar.
"""

import logging
import re
from dataclasses import dataclass, field, fields, replace
from itertools import combinations, product as cartesian
from typing import Iterable, Iterator, Optional

import config
from frames import (EGRESS, INGRESS, Frame, MacEntry, haddr, ingress_port,
                    is_broadcast, is_mac, is_unicast)

logger = logging.getLogger(__name__)

TRACE_VARS = ('t', 'f', 'loc', 'port', 'self', 'uplink-port', 'mto', 'mlt', 'egress')
SNAPSHOT_VARS = ('x.f', 'x.port', 'x.mlt', 'x.loc', 'x.t')
FRAME_FIELDS = ('da', 'sa', 'proto', 'arp')
ENTRY_FIELDS = ('mac', 't', 'port')
PREDICATES = {'ucast': 1, 'bcast': 1, 'arp-reqrx': 2}
SNAPSHOT = 'x'


class FormulaError(Exception):
    """Base exception for formula errors"""
    pass


class ParseError(FormulaError):
    """Syntax error in formula text"""

    def __init__(self, message, line=1, column=1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class UnboundVariable(FormulaError):
    """A variable has no value in the evaluation environment"""
    pass


class MalformedProjection(FormulaError):
    """Field or index projection that does not fit the term's sort"""
    pass


class DnfTooLarge(FormulaError):
    """Disjunctive normal form exceeded the configured disjunct cap"""
    pass


class Node:
    """Common base of terms and formulas"""

    def __str__(self):
        return to_text(self)

    def children(self) -> Iterator['Node']:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Node):
                yield value
            elif isinstance(value, tuple):
                yield from (item for item in value if isinstance(item, Node))

    def rebuild(self, fn) -> 'Node':
        """Copy of this node with fn applied to every direct child"""
        changes = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Node):
                changes[f.name] = fn(value)
            elif isinstance(value, tuple) and any(isinstance(item, Node) for item in value):
                changes[f.name] = tuple(fn(item) if isinstance(item, Node) else item for item in value)
        return replace(self, **changes) if changes else self


class Term(Node):
    pass


class Formula(Node):
    pass


# Terms

@dataclass(frozen=True, eq=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Const(Term):
    value: object
    sort: str  # mac | int | tag


@dataclass(frozen=True)
class Field(Term):
    base: Term
    name: str


@dataclass(frozen=True)
class Lookup(Term):
    table: Term
    index: Term


@dataclass(frozen=True)
class Haddr(Term):
    port: Term


@dataclass(frozen=True)
class Diff(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Iface(Term):
    port: Term
    direction: str


@dataclass(frozen=True)
class SetLit(Term):
    items: tuple


@dataclass(frozen=True)
class Update(Term):
    """table with entry index replaced by (mac, t, port)"""
    table: Term
    index: Term
    mac: Term
    t: Term
    port: Term


@dataclass(frozen=True)
class Hole(Term, Formula):
    """Pattern placeholder, only accepted by parse_pattern"""
    name: str


# Formulas

@dataclass(frozen=True)
class BoolConst(Formula):
    value: bool


TRUE = BoolConst(True)
FALSE = BoolConst(False)


@dataclass(frozen=True)
class Prop(Formula):
    name: str


@dataclass(frozen=True)
class Eq(Formula):
    left: Term
    right: Term

    def __post_init__(self):
        if to_text(self.right) < to_text(self.left):
            left, right = self.right, self.left
            object.__setattr__(self, 'left', left)
            object.__setattr__(self, 'right', right)


@dataclass(frozen=True)
class In(Formula):
    element: Term
    collection: Term


@dataclass(frozen=True)
class Subset(Formula):
    left: Term
    right: Term


@dataclass(frozen=True)
class Le(Formula):
    left: Term
    right: Term


@dataclass(frozen=True)
class Pred(Formula):
    name: str
    args: tuple


@dataclass(frozen=True)
class Not(Formula):
    body: Formula


@dataclass(frozen=True)
class And(Formula):
    items: tuple


@dataclass(frozen=True)
class Or(Formula):
    items: tuple


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Exists(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Forall(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Lambda(Formula):
    var: str
    body: Formula


ATOM_TYPES = (Prop, Eq, In, Subset, Le, Pred, Exists, Forall, Hole)


def is_atom(node) -> bool:
    """Atoms of the DNF machinery; quantified subformulas count as one atom"""
    return isinstance(node, ATOM_TYPES)


def conj(items: Iterable[Formula]) -> Formula:
    """Flattened conjunction without duplicates or literal true"""
    flat = []
    for item in items:
        for part in (item.items if isinstance(item, And) else (item,)):
            if part == TRUE or part in flat:
                continue
            flat.append(part)
    if FALSE in flat:
        return FALSE
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def disj(items: Iterable[Formula]) -> Formula:
    flat = []
    for item in items:
        for part in (item.items if isinstance(item, Or) else (item,)):
            if part == FALSE or part in flat:
                continue
            flat.append(part)
    if TRUE in flat:
        return TRUE
    if not flat:
        return FALSE
    return flat[0] if len(flat) == 1 else Or(tuple(flat))


def neg(body: Formula) -> Formula:
    if isinstance(body, Not):
        return body.body
    if isinstance(body, BoolConst):
        return BoolConst(not body.value)
    return Not(body)


# Printing

def _text_term(term) -> str:
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Hole):
        return '?' + term.name
    if isinstance(term, Const):
        if term.sort == 'tag':
            return f"(tag {term.value})"
        return str(term.value)
    if isinstance(term, Field):
        if isinstance(term.base, Var):
            return f"{term.base.name}.{term.name}"
        return f"(fld {_text_term(term.base)} {term.name})"
    if isinstance(term, Lookup):
        return f"(lookup {_text_term(term.table)} {_text_term(term.index)})"
    if isinstance(term, Haddr):
        return f"(haddr {_text_term(term.port)})"
    if isinstance(term, Diff):
        return f"(- {_text_term(term.left)} {_text_term(term.right)})"
    if isinstance(term, Iface):
        head = 'ing' if term.direction == INGRESS else 'egr'
        return f"({head} {_text_term(term.port)})"
    if isinstance(term, SetLit):
        return '(set' + ''.join(' ' + _text_term(item) for item in term.items) + ')'
    if isinstance(term, Update):
        parts = (term.table, term.index, term.mac, term.t, term.port)
        return '(update ' + ' '.join(_text_term(part) for part in parts) + ')'
    raise FormulaError(f"cannot print term {term!r}")


def to_text(node) -> str:
    """Canonical text; parse(to_text(phi)) == phi"""
    if isinstance(node, Hole):
        return '?' + node.name
    if isinstance(node, Term):
        return _text_term(node)
    if isinstance(node, BoolConst):
        return 'true' if node.value else 'false'
    if isinstance(node, Prop):
        return node.name
    if isinstance(node, Eq):
        return f"(= {_text_term(node.left)} {_text_term(node.right)})"
    if isinstance(node, In):
        return f"(in {_text_term(node.element)} {_text_term(node.collection)})"
    if isinstance(node, Subset):
        return f"(subset {_text_term(node.left)} {_text_term(node.right)})"
    if isinstance(node, Le):
        return f"(<= {_text_term(node.left)} {_text_term(node.right)})"
    if isinstance(node, Pred):
        return f"({node.name}" + ''.join(' ' + _text_term(arg) for arg in node.args) + ')'
    if isinstance(node, Not):
        if isinstance(node.body, Eq):
            return f"(!= {_text_term(node.body.left)} {_text_term(node.body.right)})"
        if isinstance(node.body, Le):
            return f"(> {_text_term(node.body.left)} {_text_term(node.body.right)})"
        return f"(not {to_text(node.body)})"
    if isinstance(node, (And, Or)):
        head = 'and' if isinstance(node, And) else 'or'
        return f"({head}" + ''.join(' ' + to_text(item) for item in node.items) + ')'
    if isinstance(node, Implies):
        return f"(=> {to_text(node.left)} {to_text(node.right)})"
    if isinstance(node, Exists):
        return f"(exists {node.var} {to_text(node.body)})"
    if isinstance(node, Forall):
        return f"(forall {node.var} {to_text(node.body)})"
    if isinstance(node, Lambda):
        return f"(lambda {node.var} {to_text(node.body)})"
    raise FormulaError(f"cannot print {node!r}")


# Parsing

_TOKEN_RE = re.compile(r'\s*(?:(\()|(\))|([^\s()]+))')
_INT_RE = re.compile(r'^-?\d+$')
_NAME_RE = re.compile(r'^[A-Za-z][A-Za-z0-9_\-]*$')


@dataclass
class _Tok:
    text: str
    line: int
    column: int


@dataclass
class _List:
    items: list
    line: int
    column: int


def _tokenize(text: str, line: int = 1, column: int = 1) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match or match.end() == pos:
            break
        start = match.start(match.lastindex)
        tok_line = line + text.count('\n', 0, start)
        last_nl = text.rfind('\n', 0, start)
        tok_col = (column + start) if last_nl < 0 else start - last_nl
        tokens.append(_Tok(match.group(match.lastindex), tok_line, tok_col))
        pos = match.end()
    return tokens


def _read(tokens: list) -> object:
    stack = []
    result = None
    for tok in tokens:
        if tok.text == '(':
            stack.append(_List([], tok.line, tok.column))
        elif tok.text == ')':
            if not stack:
                raise ParseError("unbalanced ')'", tok.line, tok.column)
            done = stack.pop()
            if stack:
                stack[-1].items.append(done)
            elif result is None:
                result = done
            else:
                raise ParseError("trailing input after formula", tok.line, tok.column)
        elif stack:
            stack[-1].items.append(tok)
        elif result is None:
            result = tok
        else:
            raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.column)
    if stack:
        raise ParseError("missing ')'", stack[-1].line, stack[-1].column)
    if result is None:
        raise ParseError("empty formula")
    return result


class _Parser:
    def __init__(self, holes: bool = False):
        self.holes = holes

    def error(self, message, sx):
        raise ParseError(message, sx.line, sx.column)

    def head(self, sx) -> str:
        if not sx.items or not isinstance(sx.items[0], _Tok):
            self.error("expected an operator", sx)
        return sx.items[0].text

    def arity(self, sx, count):
        if len(sx.items) - 1 != count:
            self.error(f"{self.head(sx)} takes {count} argument(s)", sx)
        return sx.items[1:]

    def formula(self, sx, bound: frozenset, top: bool = False) -> Formula:
        if isinstance(sx, _Tok):
            text = sx.text
            if text == 'true':
                return TRUE
            if text == 'false':
                return FALSE
            if text.startswith('?') and self.holes:
                return Hole(text[1:])
            if _NAME_RE.match(text) and text not in TRACE_VARS and text not in bound:
                return Prop(text)
            self.error(f"{text!r} is not a formula", sx)
        op = self.head(sx)
        args = sx.items[1:]
        if op == 'not':
            (body,) = self.arity(sx, 1)
            return Not(self.formula(body, bound))
        if op in ('and', 'or'):
            items = tuple(self.formula(arg, bound) for arg in args)
            if not items:
                return TRUE if op == 'and' else FALSE
            if len(items) == 1:
                return items[0]
            return And(items) if op == 'and' else Or(items)
        if op == '=>':
            left, right = self.arity(sx, 2)
            return Implies(self.formula(left, bound), self.formula(right, bound))
        if op in ('exists', 'forall'):
            var, body = self.arity(sx, 2)
            name = self.binder(var)
            inner = self.formula(body, bound | {name})
            return Exists(name, inner) if op == 'exists' else Forall(name, inner)
        if op == 'lambda':
            if not top:
                self.error("lambda is only allowed as the outermost binder", sx)
            var, body = self.arity(sx, 2)
            if self.binder(var) != SNAPSHOT:
                self.error("the snapshot binder must be named x", var)
            return Lambda(SNAPSHOT, self.formula(body, bound))
        if op in ('=', '!='):
            left, right = self.arity(sx, 2)
            atom = Eq(self.term(left, bound), self.term(right, bound))
            self.check_update(atom, sx)
            return atom if op == '=' else Not(atom)
        if op in ('<=', '>'):
            left, right = self.arity(sx, 2)
            atom = Le(self.term(left, bound), self.term(right, bound))
            return atom if op == '<=' else Not(atom)
        if op == 'in':
            left, right = self.arity(sx, 2)
            return In(self.term(left, bound), self.term(right, bound))
        if op == 'subset':
            left, right = self.arity(sx, 2)
            return Subset(self.term(left, bound), self.term(right, bound))
        if op in PREDICATES:
            return Pred(op, tuple(self.term(arg, bound) for arg in self.arity(sx, PREDICATES[op])))
        self.error(f"unknown operator {op!r}", sx)

    def binder(self, sx) -> str:
        if isinstance(sx, _Tok) and self.holes and sx.text.startswith('?'):
            return sx.text
        if not isinstance(sx, _Tok) or not _NAME_RE.match(sx.text) or sx.text in TRACE_VARS:
            self.error("expected a variable name", sx)
        return sx.text

    def check_update(self, atom: Eq, sx):
        sides = (atom.left, atom.right)
        for side, other in (sides, sides[::-1]):
            if isinstance(side, Update) and not (isinstance(other, Var) and other.name == 'mlt') \
                    and not isinstance(other, Hole):
                self.error("a table update may only be compared with mlt", sx)

    def term(self, sx, bound: frozenset) -> Term:
        if isinstance(sx, _Tok):
            return self.symbol(sx, bound)
        op = self.head(sx)
        if op == 'fld':
            base, name = self.arity(sx, 2)
            if not isinstance(name, _Tok):
                self.error("field name expected", name)
            return Field(self.term(base, bound), name.text)
        if op == 'lookup':
            table, index = self.arity(sx, 2)
            return Lookup(self.term(table, bound), self.term(index, bound))
        if op == 'haddr':
            (port,) = self.arity(sx, 1)
            return Haddr(self.term(port, bound))
        if op == '-':
            left, right = self.arity(sx, 2)
            return Diff(self.term(left, bound), self.term(right, bound))
        if op in ('ing', 'egr'):
            (port,) = self.arity(sx, 1)
            return Iface(self.term(port, bound), INGRESS if op == 'ing' else EGRESS)
        if op == 'set':
            return SetLit(tuple(self.term(arg, bound) for arg in sx.items[1:]))
        if op == 'update':
            table, index, mac, t, port = self.arity(sx, 5)
            return Update(*(self.term(part, bound) for part in (table, index, mac, t, port)))
        if op == 'tag':
            (name,) = self.arity(sx, 1)
            if not isinstance(name, _Tok) or not _NAME_RE.match(name.text):
                self.error("protocol tag expected", sx)
            return Const(name.text, 'tag')
        self.error(f"unknown term constructor {op!r}", sx)

    def symbol(self, sx: _Tok, bound: frozenset) -> Term:
        text = sx.text
        if text.startswith('?') and self.holes:
            return Hole(text[1:])
        if is_mac(text):
            return Const(text.lower(), 'mac')
        if _INT_RE.match(text):
            return Const(int(text), 'int')
        if text in TRACE_VARS or text in SNAPSHOT_VARS or text in bound:
            return Var(text)
        # dotted projection: longest variable prefix, the rest are field names
        parts = text.split('.')
        for cut in range(len(parts) - 1, 0, -1):
            root = '.'.join(parts[:cut])
            if root in TRACE_VARS or root in SNAPSHOT_VARS or root in bound \
                    or (self.holes and root.startswith('?')):
                term = Hole(root[1:]) if root.startswith('?') else Var(root)
                for name in parts[cut:]:
                    if not name:
                        self.error(f"empty field name in {text!r}", sx)
                    term = Field(term, name)
                return term
        self.error(f"unknown variable {text!r}", sx)


def parse(text: str, line: int = 1, column: int = 1) -> Formula:
    """Parse formula text; line/column offsets locate errors inside larger files"""
    return _Parser().formula(_read(_tokenize(text, line, column)), frozenset(), top=True)


def parse_term(text: str) -> Term:
    return _Parser().term(_read(_tokenize(text)), frozenset())


def parse_pattern(text: str, term: bool = False):
    """Formula pattern (or term pattern when term is set) with ?name holes"""
    parser = _Parser(holes=True)
    sx = _read(_tokenize(text))
    if term:
        return parser.term(sx, frozenset())
    return parser.formula(sx, frozenset(), top=True)


# Evaluation

class _Marker:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


PENDING = _Marker('PENDING')  # value not yet chosen (partial evaluation)
UNDEF = _Marker('UNDEF')      # port when loc is not an ingress singleton
EGRESS_ALL = _Marker('EGRESS_ALL')


@dataclass(frozen=True)
class Env:
    """Bindings of the trace variables at one step of a run"""
    time: object
    frame: Optional[Frame]
    loc: object
    self_port: object = None
    uplink_port: int = field(default_factory=lambda: config.uplink_port)
    mto: int = field(default_factory=lambda: config.mto)
    mlt: tuple = ()
    snapshot: Optional['Env'] = None
    props: frozenset = frozenset()
    pending_props: frozenset = frozenset()
    haddr_prefix: Optional[str] = None

    @property
    def port(self):
        if self.loc is PENDING:
            return PENDING
        port = ingress_port(self.loc)
        return UNDEF if port is None else port


def _var_value(name: str, env: Env, idx: dict):
    if name in idx:
        return idx[name]
    if name.startswith(SNAPSHOT + '.'):
        if env.snapshot is None:
            raise UnboundVariable(f"{name} referenced but no snapshot is bound")
        return _var_value(name[2:], env.snapshot, {})
    if name == 't':
        return env.time
    if name == 'f':
        if env.frame is None:
            raise UnboundVariable("f referenced but the environment has no frame")
        return env.frame
    if name == 'loc':
        return env.loc
    if name == 'port':
        return env.port
    if name == 'self':
        if env.self_port is None:
            raise UnboundVariable("self referenced but the machine has no self parameter bound")
        return env.self_port
    if name == 'uplink-port':
        return env.uplink_port
    if name == 'mto':
        return env.mto
    if name == 'mlt':
        return env.mlt
    if name == 'egress':
        return EGRESS_ALL
    raise UnboundVariable(f"unknown variable {name}")


def _blocked(*values):
    """UNDEF wins over PENDING; None when every value is concrete"""
    if any(value is UNDEF for value in values):
        return UNDEF
    if any(value is PENDING for value in values):
        return PENDING
    return None


def term_value(term: Term, env: Env, idx: Optional[dict] = None):
    idx = idx or {}
    if isinstance(term, Var):
        return _var_value(term.name, env, idx)
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Field):
        base = term_value(term.base, env, idx)
        if _blocked(base):
            return base
        if isinstance(base, Frame) and term.name in FRAME_FIELDS:
            return getattr(base, term.name)
        if isinstance(base, MacEntry) and term.name in ENTRY_FIELDS:
            return getattr(base, term.name)
        raise MalformedProjection(f"{term.name} is not a field of {to_text(term.base)}")
    if isinstance(term, Lookup):
        table, index = term_value(term.table, env, idx), term_value(term.index, env, idx)
        blocked = _blocked(table, index)
        if blocked:
            return blocked
        if not isinstance(table, tuple) or not isinstance(index, int) or not 0 <= index < len(table):
            raise MalformedProjection(f"cannot index {to_text(term.table)} with {index!r}")
        return table[index]
    if isinstance(term, Haddr):
        port = term_value(term.port, env, idx)
        return _blocked(port) or haddr(port, env.haddr_prefix)
    if isinstance(term, Diff):
        left, right = term_value(term.left, env, idx), term_value(term.right, env, idx)
        blocked = _blocked(left, right)
        if blocked:
            return blocked
        if not isinstance(left, int) or not isinstance(right, int):
            raise MalformedProjection(f"{to_text(term)} is not an integer difference")
        return left - right
    if isinstance(term, Iface):
        port = term_value(term.port, env, idx)
        return _blocked(port) or (port, term.direction)
    if isinstance(term, SetLit):
        items = [term_value(item, env, idx) for item in term.items]
        return _blocked(*items) or frozenset(items)
    if isinstance(term, Update):
        table, index, mac, t, port = (term_value(part, env, idx) for part in
                                      (term.table, term.index, term.mac, term.t, term.port))
        blocked = _blocked(table, index)
        if blocked:
            return blocked
        if not isinstance(table, tuple) or not 0 <= index < len(table):
            raise MalformedProjection(f"cannot update {to_text(term.table)} at {index!r}")
        entries = list(table)
        entries[index] = MacEntry(mac, t, port)
        return tuple(entries)
    raise FormulaError(f"cannot evaluate term {term!r}")


def _kleene_and(values) -> Optional[bool]:
    result = True
    for value in values:
        if value is False:
            return False
        if value is None:
            result = None
    return result


def _kleene_or(values) -> Optional[bool]:
    result = False
    for value in values:
        if value is True:
            return True
        if value is None:
            result = None
    return result


def _equal(left, right) -> Optional[bool]:
    if left is PENDING or right is PENDING:
        return None
    if isinstance(left, tuple) and isinstance(right, tuple):
        if len(left) != len(right):
            return False
        return _kleene_and(_equal(a, b) for a, b in zip(left, right))
    if isinstance(left, (Frame, MacEntry)) and type(left) is type(right):
        return _kleene_and(_equal(getattr(left, f.name), getattr(right, f.name)) for f in fields(left))
    return left == right


def _atom_truth(atom: Formula, env: Env, idx: dict) -> Optional[bool]:
    if isinstance(atom, Prop):
        if atom.name in env.pending_props:
            return None
        return atom.name in env.props
    if isinstance(atom, Pred):
        values = [term_value(arg, env, idx) for arg in atom.args]
        if any(value is UNDEF for value in values):
            return False
        if atom.name == 'arp-reqrx':
            frame, port = values
            if frame is PENDING or frame.proto is PENDING:
                return None
            if frame.proto != 'arpreq':
                return False
            if frame.arp is PENDING or port is PENDING:
                return None
            return frame.arp == port
        (mac,) = values
        if mac is PENDING:
            return None
        return is_unicast(mac) if atom.name == 'ucast' else is_broadcast(mac)
    left_term, right_term = (atom.element, atom.collection) if isinstance(atom, In) else (atom.left, atom.right)
    left, right = term_value(left_term, env, idx), term_value(right_term, env, idx)
    blocked = _blocked(left, right)
    if blocked is UNDEF:
        return False
    if isinstance(atom, Eq):
        return _equal(left, right)
    if blocked is PENDING:
        return None
    if isinstance(atom, In):
        if right is EGRESS_ALL:
            return isinstance(left, tuple) and left[1] == EGRESS
        return left in right
    if isinstance(atom, Subset):
        if right is EGRESS_ALL:
            return all(direction == EGRESS for _, direction in left)
        return frozenset(left) <= frozenset(right)
    if isinstance(atom, Le):
        if not isinstance(left, int) or not isinstance(right, int):
            raise MalformedProjection(f"{to_text(atom)} compares non-integers")
        return left <= right
    raise FormulaError(f"not an atom: {atom!r}")


def _truth(node: Formula, env: Env, idx: dict) -> Optional[bool]:
    if isinstance(node, BoolConst):
        return node.value
    if isinstance(node, Not):
        value = _truth(node.body, env, idx)
        return None if value is None else not value
    if isinstance(node, And):
        return _kleene_and(_truth(item, env, idx) for item in node.items)
    if isinstance(node, Or):
        return _kleene_or(_truth(item, env, idx) for item in node.items)
    if isinstance(node, Implies):
        antecedent = _truth(node.left, env, idx)
        if antecedent is False:
            return True
        return _kleene_or((_negate3(antecedent), _truth(node.right, env, idx)))
    if isinstance(node, (Exists, Forall)):
        size = len(env.mlt)
        values = (_truth(node.body, env, {**idx, node.var: k}) for k in range(size))
        return _kleene_or(values) if isinstance(node, Exists) else _kleene_and(values)
    if isinstance(node, Lambda):
        return _truth(node.body, env, idx)
    return _atom_truth(node, env, idx)


def _negate3(value: Optional[bool]) -> Optional[bool]:
    return None if value is None else not value


def evaluate(formula: Formula, env: Env) -> bool:
    """Truth value of formula in env.

    Bounded quantifiers expand over the indices of env.mlt. Atoms that need
    the ingress port while loc is not an ingress singleton are false.

    Raises:
        UnboundVariable: x.* without a snapshot, or self without a binding
        MalformedProjection: a field or index that does not fit its operand
    """
    value = _truth(formula, env, {})
    if value is None:
        raise FormulaError(f"environment leaves {to_text(formula)} undecided")
    return value


def evaluate_partial(formula: Formula, env: Env) -> Optional[bool]:
    """Kleene evaluation; None while PENDING values leave the result open"""
    return _truth(formula, env, {})


# Structure

def walk(node: Node) -> Iterator[Node]:
    yield node
    for child in node.children():
        yield from walk(child)


def strip_lambda(formula: Formula) -> Formula:
    return formula.body if isinstance(formula, Lambda) else formula


def binds_snapshot(formula: Formula) -> bool:
    return isinstance(formula, Lambda)


def free_vars(formula: Node) -> set:
    names = set()

    def visit(node, bound):
        if isinstance(node, Var):
            if node.name not in bound:
                names.add(node.name)
            return
        if isinstance(node, (Exists, Forall)):
            visit(node.body, bound | {node.var})
            return
        for child in node.children():
            visit(child, bound)

    visit(formula, frozenset())
    return names


def references_snapshot(formula: Node) -> bool:
    return any(name.startswith(SNAPSHOT + '.') for name in free_vars(formula))


def atoms_in_order(formula: Node) -> list:
    """Distinct atoms by first occurrence"""
    found = []

    def visit(node):
        if is_atom(node):
            if node not in found:
                found.append(node)
            return
        for child in node.children():
            visit(child)

    visit(formula)
    return found


def atoms(formula: Node) -> set:
    return set(atoms_in_order(formula))


def substitute(node: Node, mapping: dict) -> Node:
    """Replace free variables by terms"""
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, (Exists, Forall)) and node.var in mapping:
        inner = {name: term for name, term in mapping.items() if name != node.var}
        return node.rebuild(lambda child: substitute(child, inner))
    return node.rebuild(lambda child: substitute(child, mapping))


def expand_quantifiers(formula: Formula, size: int) -> Formula:
    """Unroll bounded quantifiers over table indices 0..size-1"""
    if isinstance(formula, (Exists, Forall)):
        cases = [expand_quantifiers(substitute(formula.body, {formula.var: Const(k, 'int')}), size)
                 for k in range(size)]
        return disj(cases) if isinstance(formula, Exists) else conj(cases)
    if isinstance(formula, Term):
        return formula
    return formula.rebuild(lambda child: expand_quantifiers(child, size))


# Disjunctive normal form

@dataclass(frozen=True)
class Literal:
    atom: Formula
    positive: bool = True

    def negate(self) -> 'Literal':
        return Literal(self.atom, not self.positive)

    def to_formula(self) -> Formula:
        return self.atom if self.positive else Not(self.atom)

    def sort_key(self):
        return (to_text(self.atom), not self.positive)

    def __str__(self):
        return to_text(self.to_formula())


def literal_of(formula: Formula) -> Literal:
    if isinstance(formula, Not) and is_atom(formula.body):
        return Literal(formula.body, False)
    if is_atom(formula):
        return Literal(formula, True)
    raise FormulaError(f"{to_text(formula)} is not a literal")


def sorted_literals(literals: Iterable[Literal]) -> list:
    return sorted(literals, key=Literal.sort_key)


def conjoin(literals: Iterable[Literal]) -> Formula:
    return conj(lit.to_formula() for lit in sorted_literals(literals))


def contradictory(literals) -> bool:
    return any(lit.negate() in literals for lit in literals)


def _absorb(disjuncts: list) -> list:
    unique = list(dict.fromkeys(disjuncts))
    unique.sort(key=len)
    kept = []
    for candidate in unique:
        if not any(other <= candidate for other in kept):
            kept.append(candidate)
    return kept


def _disjunct_key(disjunct: frozenset):
    return (len(disjunct), [lit.sort_key() for lit in sorted_literals(disjunct)])


@dataclass(frozen=True)
class DisjunctSet:
    """Disjunction of literal conjunctions; no contradictory or subsumed disjuncts"""
    disjuncts: tuple

    @classmethod
    def build(cls, disjuncts: Iterable) -> 'DisjunctSet':
        clean = [frozenset(d) for d in disjuncts if not contradictory(frozenset(d))]
        return cls(tuple(sorted(_absorb(clean), key=_disjunct_key)))

    def __iter__(self):
        return iter(self.disjuncts)

    def __len__(self):
        return len(self.disjuncts)

    def atoms(self) -> set:
        return {lit.atom for d in self.disjuncts for lit in d}

    def to_formula(self) -> Formula:
        return disj(conjoin(d) for d in self.disjuncts)

    def __str__(self):
        if not self.disjuncts:
            return 'false'
        return '\n'.join(format_disjunct(d) for d in self.disjuncts)


def format_disjunct(disjunct) -> str:
    if not disjunct:
        return 'true'
    return ' ; '.join(str(lit) for lit in sorted_literals(disjunct))


def _combine(left: list, right: list, cap: int) -> list:
    result = {}
    for a, b in cartesian(left, right):
        merged = a | b
        if contradictory(merged):
            continue
        result[merged] = None
        if len(result) > cap:
            raise DnfTooLarge(f"more than {cap} disjuncts")
    return list(result)


def _dnf(node: Formula, positive: bool, cap: int) -> list:
    if isinstance(node, BoolConst):
        return [frozenset()] if node.value == positive else []
    if isinstance(node, Lambda):
        return _dnf(node.body, positive, cap)
    if isinstance(node, Not):
        return _dnf(node.body, not positive, cap)
    if isinstance(node, Implies):
        antecedent_false = _dnf(node.left, False, cap)
        if positive:
            # keep the antecedent next to the consequent it triggers
            both = _combine(_dnf(node.left, True, cap), _dnf(node.right, True, cap), cap)
            return _union(antecedent_false, both, cap)
        return _combine(_dnf(node.left, True, cap), _dnf(node.right, False, cap), cap)
    if isinstance(node, (And, Or)):
        conjunctive = isinstance(node, And) == positive
        parts = [_dnf(item, positive, cap) for item in node.items]
        result = [frozenset()] if conjunctive else []
        for part in parts:
            result = _combine(result, part, cap) if conjunctive else _union(result, part, cap)
        return result
    if is_atom(node):
        return [frozenset({Literal(node, positive)})]
    raise FormulaError(f"cannot normalize {node!r}")


def _union(left: list, right: list, cap: int) -> list:
    result = list(dict.fromkeys(left + right))
    if len(result) > cap:
        raise DnfTooLarge(f"more than {cap} disjuncts")
    return result


def to_dnf(formula: Formula, max_disjuncts: Optional[int] = None) -> DisjunctSet:
    """Equivalent DisjunctSet.

    The lambda binder is dropped and quantified subformulas stay opaque atoms.
    An implication a => b becomes (not a) or (a and b).

    Raises:
        DnfTooLarge: more disjuncts than max_disjuncts (config.dnf_max_disjuncts)
    """
    cap = max_disjuncts or config.dnf_max_disjuncts
    return DisjunctSet.build(_dnf(formula, True, cap))


def _drop_redundant(disjunct: frozenset, oracle) -> frozenset:
    """Remove literals the rest of the disjunct already implies"""
    current = set(disjunct)
    for lit in sorted_literals(disjunct):
        rest = current - {lit}
        if not oracle.is_satisfiable(conjoin(rest | {lit.negate()})):
            current = rest
    return frozenset(current)


def _merge(disjuncts: list) -> list:
    """(c and l) or (c and not l) becomes c, repeated until nothing merges"""
    current = list(dict.fromkeys(disjuncts))
    merged = True
    while merged:
        merged = False
        present = set(current)
        for d in current:
            for lit in sorted_literals(d):
                twin = (d - {lit}) | {lit.negate()}
                if twin in present:
                    reduced = d - {lit}
                    current = [c for c in current if c not in (d, twin)] + [reduced]
                    merged = True
                    break
            if merged:
                break
    return current


def _consensus(disjuncts: list) -> list:
    """Drop disjuncts that contain the consensus of two others, as in ab + a'c + bc = ab + a'c"""
    current = list(dict.fromkeys(disjuncts))
    dropped = True
    while dropped:
        dropped = False
        for a, b in combinations(current, 2):
            clash = [lit for lit in a if lit.negate() in b]
            if len(clash) != 1:
                continue
            resolvent = (a - {clash[0]}) | (b - {clash[0].negate()})
            implied = [d for d in current if d not in (a, b) and resolvent <= d]
            if implied:
                current = [d for d in current if d not in implied]
                dropped = True
                break
    return current


def minimize_dnf(dset: DisjunctSet, oracle) -> DisjunctSet:
    """Prune unsatisfiable disjuncts, absorb, drop implied literals, merge and apply consensus, to a fixpoint.

    Args:
        dset: disjunct set to minimize
        oracle: object with is_satisfiable(formula) -> bool

    Returns:
        Equivalent DisjunctSet, minimal under these rules
    """
    current = list(dset.disjuncts)
    rounds = 0
    while True:
        rounds += 1
        kept = [d for d in current if oracle.is_satisfiable(conjoin(d))]
        kept = _absorb(kept)
        kept = _absorb([_drop_redundant(d, oracle) for d in kept])
        kept = _consensus(_absorb(_merge(kept)))
        if set(kept) == set(current):
            break
        current = kept
    logger.debug("minimized %d -> %d disjuncts in %d rounds", len(dset), len(current), rounds)
    return DisjunctSet.build(current)
