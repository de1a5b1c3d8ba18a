"""
Branching logic from a minimized disjunct set.

The expected-time objective picks, at every node, the atom with the least
expected residual under the traffic profile; min-size searches all atom
orders for the fewest tests. Probabilities are Fractions throughout.
"""

import hashlib
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

import config
from formula import (DisjunctSet, Formula, Literal, ParseError, conjoin, format_disjunct,
                     literal_of, parse, to_text)

logger = logging.getLogger(__name__)


class SynthesisError(Exception):
    """Base exception for branch synthesis"""
    pass


class MissingProbability(SynthesisError):
    """Profile has no entry for an atom and no default"""
    pass


class EmptyDisjunctSet(SynthesisError):
    """Nothing to branch on; only raised when synthesis is strict"""
    pass


class SearchTooLarge(SynthesisError):
    """Too many atoms for the exhaustive min-size search"""
    pass


class ProfileError(SynthesisError):
    """Malformed profile file or probability outside [0, 1]"""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class Objective(Enum):
    EXPECTED_TIME = 'expected-time'
    MIN_SIZE = 'min-size'


# Profiles

def _fraction(value) -> Fraction:
    try:
        result = Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        raise ProfileError(f"not a probability: {value!r}")
    if not 0 <= result <= 1:
        raise ProfileError(f"probability {value} outside [0, 1]")
    return result


def _atom_key(atom) -> str:
    return atom if isinstance(atom, str) else to_text(atom)


def _literal_key(lit) -> str:
    return lit if isinstance(lit, str) else str(lit)


@dataclass
class DistributionProfile:
    """Pr[atom] and Pr[atom | literals], keyed by canonical text"""
    base: dict = field(default_factory=dict)
    conditional: dict = field(default_factory=dict)  # (atom, frozenset of literals) -> Fraction
    default: Optional[Fraction] = field(default_factory=lambda: Fraction(config.default_probability))

    def __post_init__(self):
        self.base = {_atom_key(a): _fraction(p) for a, p in self.base.items()}
        self.conditional = {(_atom_key(a), frozenset(_literal_key(l) for l in lits)): _fraction(p)
                            for (a, lits), p in self.conditional.items()}
        if self.default is not None:
            self.default = _fraction(self.default)

    def probability(self, atom, assignment=()) -> Fraction:
        """Pr[atom | assignment]: exact entry, else the most specific profiled subset, else base, else default.

        Raises:
            MissingProbability: nothing applies and default is None
        """
        key = _atom_key(atom)
        given = frozenset(_literal_key(lit) for lit in assignment)
        if (key, given) in self.conditional:
            return self.conditional[(key, given)]
        subsets = [lits for (a, lits) in self.conditional if a == key and lits and lits <= given]
        if subsets:
            best = max(subsets, key=lambda lits: (len(lits), sorted(lits)))
            return self.conditional[(key, best)]
        if key in self.base:
            return self.base[key]
        if self.default is None:
            raise MissingProbability(f"no probability for {key}")
        return self.default


def loads_profile(text: str) -> DistributionProfile:
    """Read `atom = p/q`, `atom | lit ; lit = p/q` and `default = p/q` lines"""
    base, conditional, default = {}, {}, Fraction(config.default_probability)
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        left, sep, value = line.rpartition('=')
        if not sep or not left.strip():
            raise ProfileError(f"expected 'atom = probability', got {line!r}", line_no)
        left = left.strip()
        try:
            prob = _fraction(value.strip())
            if left == 'default':
                default = prob
                continue
            atom_text, bar, given = left.partition('|')
            atom = to_text(parse(atom_text.strip()))
            if bar:
                lits = frozenset(str(literal_of(parse(part.strip())))
                                 for part in given.split(';') if part.strip())
                conditional[(atom, lits)] = prob
            else:
                base[atom] = prob
        except ParseError as e:
            raise ProfileError(e.message, line_no)
        except ProfileError as e:
            raise ProfileError(str(e), line_no)
    return DistributionProfile(base, conditional, default)


def load_profile(path: str) -> DistributionProfile:
    with open(path, encoding='utf-8') as handle:
        return loads_profile(handle.read())


def _ratio(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def dumps_profile(profile: DistributionProfile) -> str:
    lines = []
    if profile.default is not None:
        lines.append(f"default = {_ratio(profile.default)}")
    for atom in sorted(profile.base):
        lines.append(f"{atom} = {_ratio(profile.base[atom])}")
    for (atom, lits) in sorted(profile.conditional, key=lambda k: (k[0], sorted(k[1]))):
        lines.append(f"{atom} | {' ; '.join(sorted(lits))} = {_ratio(profile.conditional[(atom, lits)])}")
    return '\n'.join(lines) + '\n'


def profile_hash(profile: DistributionProfile) -> str:
    return hashlib.sha256(dumps_profile(profile).encode('utf-8')).hexdigest()


# Residuals

def _literal(p: Union[Formula, Literal]) -> Literal:
    return p if isinstance(p, Literal) else literal_of(p)


def _consistent(disjunct, literals, oracle) -> bool:
    combined = frozenset(disjunct) | frozenset(literals)
    if any(lit.negate() in combined for lit in combined):
        return False
    return oracle is None or oracle.is_satisfiable(conjoin(combined))


def residual(p, dset, oracle=None) -> set:
    """Atoms still to be tested once p is known.

    Empty when p alone is a disjunct; otherwise every atom other than p's that
    occurs in a disjunct consistent with p.
    """
    lit = _literal(p)
    disjuncts = [frozenset(d) for d in dset]
    if frozenset({lit}) in disjuncts:
        return set()
    found = set()
    for d in disjuncts:
        if _consistent(d, {lit}, oracle):
            found |= {q.atom for q in d if q.atom != lit.atom}
    return found


def expected_residual(p, dset, assignment, profile: DistributionProfile, oracle=None) -> Fraction:
    lit = _literal(p)
    pr = profile.probability(lit.atom, assignment)
    return pr * len(residual(Literal(lit.atom, True), dset, oracle)) + \
        (1 - pr) * len(residual(Literal(lit.atom, False), dset, oracle))


# Trees

@dataclass(frozen=True)
class Leaf:
    """Chosen disjunct, or None for no match"""
    disjunct: Optional[frozenset]
    assignment: tuple = ()

    @property
    def matched(self) -> bool:
        return self.disjunct is not None


@dataclass(frozen=True)
class Branch:
    atom: Formula
    then: 'BranchTree'
    orelse: 'BranchTree'
    assignment: tuple = ()


BranchTree = Union[Leaf, Branch]


def _restrict(items: tuple, assignment: tuple, oracle) -> tuple:
    """Drop disjuncts the assignment falsifies, strip the literals it satisfies"""
    kept = []
    for original, remaining in items:
        if _consistent(original, assignment, oracle):
            kept.append((original, remaining - frozenset(assignment)))
    return tuple(kept)


def _leaf(items: tuple, assignment: tuple) -> Optional[Leaf]:
    if not items:
        return Leaf(None, assignment)
    for original, remaining in items:
        if not remaining:
            return Leaf(original, assignment)
    return None


def _candidates(items: tuple) -> list:
    return sorted({lit.atom for _, remaining in items for lit in remaining}, key=to_text)


class _Synthesizer:
    def __init__(self, profile: DistributionProfile, oracle):
        self.profile = profile
        self.oracle = oracle
        self.sizes = {}

    def split(self, items, assignment, atom):
        then_a = assignment + (Literal(atom, True),)
        else_a = assignment + (Literal(atom, False),)
        return (then_a, _restrict(items, then_a, self.oracle)), (else_a, _restrict(items, else_a, self.oracle))

    def greedy(self, items: tuple, assignment: tuple) -> BranchTree:
        leaf = _leaf(items, assignment)
        if leaf:
            return leaf
        remaining = DisjunctSet(tuple(r for _, r in items))
        scored = [(expected_residual(Literal(atom, True), remaining, assignment, self.profile, self.oracle),
                   to_text(atom), atom) for atom in _candidates(items)]
        score, _, atom = min(scored, key=lambda s: (s[0], s[1]))
        logger.debug("branch on %s (expected residual %s) under %s", to_text(atom), score,
                     format_disjunct(assignment))
        (then_a, then_items), (else_a, else_items) = self.split(items, assignment, atom)
        return Branch(atom, self.greedy(then_items, then_a), self.greedy(else_items, else_a), assignment)

    def size(self, items: tuple, assignment: tuple) -> int:
        key = (items, frozenset(assignment))
        if key in self.sizes:
            return self.sizes[key][0]
        if _leaf(items, assignment):
            self.sizes[key] = (0, None)
            return 0
        best = None
        for atom in _candidates(items):
            (then_a, then_items), (else_a, else_items) = self.split(items, assignment, atom)
            total = 1 + self.size(then_items, then_a) + self.size(else_items, else_a)
            if best is None or total < best[0]:
                best = (total, atom)
        self.sizes[key] = best
        return best[0]

    def smallest(self, items: tuple, assignment: tuple) -> BranchTree:
        leaf = _leaf(items, assignment)
        if leaf:
            return leaf
        self.size(items, assignment)
        atom = self.sizes[(items, frozenset(assignment))][1]
        (then_a, then_items), (else_a, else_items) = self.split(items, assignment, atom)
        return Branch(atom, self.smallest(then_items, then_a), self.smallest(else_items, else_a), assignment)


def synthesize(dset: DisjunctSet, profile: DistributionProfile, objective=Objective.EXPECTED_TIME,
               oracle=None, strict: bool = False) -> BranchTree:
    """Decision tree equivalent to dset.

    Ties between equally good atoms go to the smaller canonical text.

    Raises:
        EmptyDisjunctSet: dset is empty and strict is set
        SearchTooLarge: min-size over more atoms than config.min_size_atom_limit
    """
    objective = Objective(objective)
    if not len(dset):
        if strict:
            raise EmptyDisjunctSet("no disjuncts to branch on")
        logger.warning("empty disjunct set, emitting a no-match tree")
        return Leaf(None, ())
    items = tuple((frozenset(d), frozenset(d)) for d in dset)
    synth = _Synthesizer(profile, oracle)
    if objective is Objective.MIN_SIZE:
        if len(dset.atoms()) > config.min_size_atom_limit:
            raise SearchTooLarge(f"{len(dset.atoms())} atoms exceed the min-size limit "
                                 f"of {config.min_size_atom_limit}")
        return synth.smallest(items, ())
    return synth.greedy(items, ())


def resynthesize(tree: BranchTree, new_profile: DistributionProfile, dset: DisjunctSet, oracle=None) -> BranchTree:
    """Fresh expected-time tree for an updated profile"""
    fresh = synthesize(dset, new_profile, Objective.EXPECTED_TIME, oracle)
    if render_tree(fresh) != render_tree(tree):
        logger.info("branch order changed: root %s -> %s", _root_text(tree), _root_text(fresh))
    return fresh


def _root_text(tree: BranchTree) -> str:
    return to_text(tree.atom) if isinstance(tree, Branch) else 'leaf'


@dataclass(frozen=True)
class TreeMetrics:
    size: int
    expected_tests: Fraction


def tree_metrics(tree: BranchTree, profile: DistributionProfile) -> TreeMetrics:
    """Test count and probability-weighted number of tests per decision"""

    def size(node):
        return 0 if isinstance(node, Leaf) else 1 + size(node.then) + size(node.orelse)

    def expected(node):
        if isinstance(node, Leaf):
            return Fraction(0)
        pr = profile.probability(node.atom, node.assignment)
        return 1 + pr * expected(node.then) + (1 - pr) * expected(node.orelse)

    return TreeMetrics(size(tree), expected(tree))


def decide(tree: BranchTree, valuation) -> Leaf:
    """Leaf reached when atoms take the values valuation(atom) gives"""
    node = tree
    while isinstance(node, Branch):
        node = node.then if valuation(node.atom) else node.orelse
    return node


def satisfies(disjunct, valuation) -> bool:
    return all(valuation(lit.atom) == lit.positive for lit in disjunct)


def equivalent(first: BranchTree, second: BranchTree, atoms) -> bool:
    """Both trees match on the same full assignments over atoms.

    Only the matched flag is compared, so trees that pick different action
    disjuncts for the same assignment still count as equivalent.
    """
    atoms = sorted(atoms, key=to_text)
    for values in itertools.product((False, True), repeat=len(atoms)):
        table = dict(zip(atoms, values))
        if decide(first, table.__getitem__).matched != decide(second, table.__getitem__).matched:
            return False
    return True


def render_tree(tree: BranchTree, indent: int = 0) -> str:
    pad = '  ' * indent
    if isinstance(tree, Leaf):
        return f"{pad}{'match ' + format_disjunct(tree.disjunct) if tree.matched else 'no-match'}\n"
    return (f"{pad}test {to_text(tree.atom)}\n"
            f"{pad}then:\n{render_tree(tree.then, indent + 1)}"
            f"{pad}else:\n{render_tree(tree.orelse, indent + 1)}")
