#!/usr/bin/python3
"""
Unit tests for the formula module.

Covers parsing and canonical printing, evaluation over trace environments,
DNF conversion and oracle-driven minimization.
"""

import itertools
import os
import sys
import unittest

from hypothesis import given, settings, strategies as st

# Add the parent directory to the path so we can import formula
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from formula import (And, DnfTooLarge, Env, Exists, Field, Lambda, Literal, Not, Or, ParseError, Prop, UnboundVariable,
                     Var, binds_snapshot, conj, disj, evaluate, evaluate_partial, free_vars, minimize_dnf, neg, parse,
                     references_snapshot, to_dnf, to_text)
from frames import Frame, MacEntry, egress, ingress
from oracle import DomainConfig, SatOracle

LETTERS = ('B', 'C', 'E', 'F')


def props_env(true_letters):
    return Env(time=0, frame=None, loc=frozenset(), props=frozenset(true_letters))


def letter_formulas():
    atoms = st.sampled_from([Prop(name) for name in LETTERS])
    return st.recursive(atoms, lambda inner: st.one_of(
        inner.map(Not),
        st.lists(inner, min_size=2, max_size=3).map(lambda items: And(tuple(items))),
        st.lists(inner, min_size=2, max_size=3).map(lambda items: Or(tuple(items)))), max_leaves=8)


class TestParsing(unittest.TestCase):
    """Parser and canonical printer."""

    def test_round_trip_of_hub_label(self):
        """Printing a parsed label and parsing it again gives the same formula."""
        text = ('(lambda x (and (= loc (set (ing port))) (!= port uplink-port) '
                '(!= f.da (haddr port))))')
        phi = parse(text)
        self.assertIsInstance(phi, Lambda)
        self.assertEqual(parse(to_text(phi)), phi)

    def test_equality_operands_are_sorted(self):
        """(= b a) and (= a b) are the same atom."""
        self.assertEqual(parse('(= self port)'), parse('(= port self)'))
        self.assertEqual(to_text(parse('(= self port)')), '(= port self)')

    def test_negated_comparisons_print_short(self):
        """Negated equality and order print as != and >."""
        self.assertEqual(to_text(parse('(not (= port self))')), '(!= port self)')
        self.assertEqual(to_text(parse('(not (<= t mto))')), '(> t mto)')

    def test_dotted_projection(self):
        """x.f.da is the da field of the snapshot frame."""
        term = parse('(ucast x.f.da)').args[0]
        self.assertEqual(term, Field(Var('x.f'), 'da'))

    def test_parse_error_carries_position(self):
        """Unknown operators are reported with line and column."""
        with self.assertRaises(ParseError) as ctx:
            parse('(and B\n  (frob C))')
        self.assertEqual(ctx.exception.line, 2)
        self.assertGreaterEqual(ctx.exception.column, 3)

    def test_lambda_only_outermost(self):
        """A nested lambda is rejected."""
        with self.assertRaises(ParseError):
            parse('(and B (lambda x C))')

    def test_letters_are_propositions(self):
        """Bare names in formula position are propositional letters."""
        phi = parse('(or (and C B) (and F B) E)')
        self.assertEqual(phi, Or((And((Prop('C'), Prop('B'))), And((Prop('F'), Prop('B'))), Prop('E'))))


class TestStructure(unittest.TestCase):
    """Free variables and snapshot helpers."""

    def test_bound_index_is_not_free(self):
        phi = parse('(exists i (= (fld (lookup mlt i) mac) f.da))')
        self.assertIsInstance(phi, Exists)
        self.assertEqual(free_vars(phi), {'mlt', 'f'})

    def test_snapshot_helpers(self):
        """Binding and reading the snapshot are told apart."""
        hub_out = parse('(=> (in (egr self) loc) (= f x.f))')
        self.assertFalse(binds_snapshot(hub_out))
        self.assertTrue(references_snapshot(hub_out))
        self.assertTrue(binds_snapshot(parse('(lambda x (= loc (set (ing port))))')))

    def test_smart_constructors(self):
        """conj and disj flatten and collapse trivial cases."""
        b, c = Prop('B'), Prop('C')
        self.assertEqual(conj([b]), b)
        self.assertEqual(disj([b, disj([c])]), Or((b, c)))
        self.assertEqual(neg(neg(b)), b)


class TestEvaluation(unittest.TestCase):
    """Evaluation over the first two rows of the ARP trace."""

    def setUp(self):
        self.cfg = DomainConfig()
        self.request = Frame('ff:ff:ff:ff:ff:ff', '04:0c:ce:d2:08:6c', 'arpreq')
        self.ingress_env = Env(time=0, frame=self.request, loc=frozenset({ingress(2)}), self_port=3,
                               uplink_port=1, mto=5, haddr_prefix=self.cfg.haddr_prefix)

    def test_port_is_ingress_port(self):
        self.assertTrue(evaluate(parse('(= port 2)'), self.ingress_env))
        self.assertTrue(evaluate(parse('(!= port uplink-port)'), self.ingress_env))

    def test_broadcast_predicates(self):
        self.assertTrue(evaluate(parse('(bcast f.da)'), self.ingress_env))
        self.assertFalse(evaluate(parse('(ucast f.da)'), self.ingress_env))
        self.assertTrue(evaluate(parse('(ucast f.sa)'), self.ingress_env))

    def test_port_undefined_at_egress(self):
        """Atoms that need the port are false on an egress set, their negations true."""
        env = Env(time=1, frame=self.request, loc=frozenset({egress(3), egress(4)}), self_port=3)
        self.assertFalse(evaluate(parse('(= port 2)'), env))
        self.assertTrue(evaluate(parse('(!= port 2)'), env))
        self.assertTrue(evaluate(parse('(in (egr self) loc)'), env))
        self.assertTrue(evaluate(parse('(subset loc egress)'), env))

    def test_partial_evaluation(self):
        """Kleene connectives leave the value open only while it depends on a pending letter."""
        env = Env(time=0, frame=None, loc=frozenset(), props=frozenset({'B'}), pending_props=frozenset({'C'}))
        self.assertIsNone(evaluate_partial(parse('(and B C)'), env))
        self.assertTrue(evaluate_partial(parse('(or B C)'), env))
        self.assertFalse(evaluate_partial(parse('(and (not B) C)'), env))

    def test_snapshot_without_binding_raises(self):
        with self.assertRaises(UnboundVariable):
            evaluate(parse('(= f x.f)'), self.ingress_env)

    def test_bounded_quantifier_over_table(self):
        """An unexpired entry for the destination is found through exists."""
        table = (MacEntry('04:0c:ce:d2:08:6c', 0, 2), MacEntry('00:00:00:00:00:00', -6, 0))
        reply = Frame('04:0c:ce:d2:08:6c', '7c:d1:c3:e8:a4:67', 'arpreply')
        env = Env(time=3, frame=reply, loc=frozenset({egress(2)}), self_port=2, mto=5, mlt=table)
        phi = parse('(exists i (and (= (fld (lookup mlt i) mac) f.da) '
                    '(<= (- t (fld (lookup mlt i) t)) mto) (= (fld (lookup mlt i) port) self)))')
        self.assertTrue(evaluate(phi, env))
        self.assertFalse(evaluate(phi, Env(time=3, frame=reply, loc=frozenset({egress(3)}), self_port=3,
                                           mto=5, mlt=table)))


class TestDnf(unittest.TestCase):
    """DNF conversion and minimization."""

    def test_branching_example(self):
        dset = to_dnf(parse('(or (and C B) (and F B) E)'))
        self.assertEqual(set(dset), {frozenset({Literal(Prop('B')), Literal(Prop('C'))}),
                                     frozenset({Literal(Prop('B')), Literal(Prop('F'))}),
                                     frozenset({Literal(Prop('E'))})})

    def test_implication_keeps_antecedent(self):
        """a => b becomes (not a) or (a and b)."""
        dset = to_dnf(parse('(=> B C)'))
        self.assertIn(frozenset({Literal(Prop('B'), False)}), set(dset))
        self.assertIn(frozenset({Literal(Prop('B')), Literal(Prop('C'))}), set(dset))

    def test_quantifier_is_opaque(self):
        phi = parse('(and (ucast f.da) (exists i (= (fld (lookup mlt i) mac) f.da)))')
        (disjunct,) = to_dnf(phi)
        self.assertEqual(len(disjunct), 2)

    def test_disjunct_cap(self):
        with self.assertRaises(DnfTooLarge):
            to_dnf(parse('(or B C E)'), max_disjuncts=2)

    def test_contradictions_vanish(self):
        self.assertEqual(len(to_dnf(parse('(and B (not B))'))), 0)

    def test_minimize_merges_complements(self):
        """(B and C) or (B and not C) minimizes to B."""
        dset = minimize_dnf(to_dnf(parse('(or (and B C) (and B (not C)))')), SatOracle())
        self.assertEqual(list(dset), [frozenset({Literal(Prop('B'))})])

    def test_minimize_drops_consensus_disjunct(self):
        """(B and C) is covered by (E and B) or (not E and C)."""
        dset = minimize_dnf(to_dnf(parse('(or (and E B) (and (not E) C) (and B C))')), SatOracle())
        self.assertEqual(set(dset), {frozenset({Literal(Prop('E')), Literal(Prop('B'))}),
                                     frozenset({Literal(Prop('E'), False), Literal(Prop('C'))})})

    def test_minimize_drops_theory_implied_literal(self):
        """port = 2 makes port != uplink-port redundant under uplink 1."""
        phi = parse('(and (= port 2) (!= port uplink-port))')
        (disjunct,) = minimize_dnf(to_dnf(phi), SatOracle())
        self.assertEqual(disjunct, frozenset({Literal(parse('(= port 2)'))}))

    @settings(max_examples=60, deadline=None)
    @given(letter_formulas())
    def test_dnf_is_equivalent(self, phi):
        """to_dnf never changes the truth table over the letters."""
        dnf = to_dnf(phi).to_formula()
        for values in itertools.product((False, True), repeat=len(LETTERS)):
            env = props_env(name for name, value in zip(LETTERS, values) if value)
            self.assertEqual(evaluate(phi, env), evaluate(dnf, env))


if __name__ == '__main__':
    unittest.main()
