#!/usr/bin/python3
"""
Unit tests for classification, lowering, decision programs and discharge.
"""

import itertools
import os
import sys
import unittest

# Add the parent directory to the path so we can import emit
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import config
from emit import (ActionNode, AmbiguousTemplate, ClassificationConflict, Classifier, DischargeTable,
                  GuardNode, MissingTemplate, NoMatchNode, PlaceholderArityMismatch, PredicateClass,
                  ProgramFormatError, UnclassifiableAtom, Verdict, compile_product, discharge,
                  dumps_program, guard_atom, guard_count, interpret, interpret_guard, loads_program,
                  lower, match, pattern_holes)
from formula import Literal, conjoin, free_vars, parse, parse_pattern, to_text
from machine import load_machine, product
from oracle import SatOracle
from synth import Branch, Leaf, decide, load_profile, profile_hash, satisfies

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SMALL_PROGRAM = """\
program P
states A B
start A
transition A -> B
  context true
  guard (bcast x.f.da)
    action (in (egr self) loc)
    nomatch
      alt (= port 2)
"""


def switch_product():
    machines = [load_machine(os.path.join(ROOT, 'components', f'{name}.sfa')) for name in 'HBIM']
    return product(machines, SatOracle())


def dpdk_table():
    return DischargeTable.load(os.path.join(ROOT, 'tables', 'dpdk.dt'))


def guard_atoms(node):
    if isinstance(node, GuardNode):
        return [node.atom] + guard_atoms(node.then) + guard_atoms(node.orelse)
    return []


class TestMatching(unittest.TestCase):

    def test_equality_in_either_order(self):
        found = match(parse_pattern('(= port ?0)'), parse('(= port 3)'))
        self.assertIsNotNone(found)
        self.assertEqual(to_text(found['0']), '3')

    def test_bare_hole_matches_only_letters(self):
        self.assertEqual(match(parse_pattern('?letter'), parse('B')), {'letter': parse('B')})
        self.assertIsNone(match(parse_pattern('?letter'), parse('(ucast f.da)')))

    def test_binder_holes(self):
        pattern = parse_pattern('(exists ?i (= mlt (update x.mlt ?i ?0 ?1 ?2)))')
        self.assertEqual(pattern_holes(pattern), {'i', '0', '1', '2'})
        found = match(pattern, parse('(exists k (= mlt (update x.mlt k f.sa t port)))'))
        self.assertEqual(to_text(found['0']), 'f.sa')

    def test_guard_atom_reads_relayed_frame(self):
        self.assertEqual(guard_atom(parse('(ucast f.da)')), parse('(ucast x.f.da)'))


class TestClassification(unittest.TestCase):

    def setUp(self):
        self.classifier = Classifier()

    def test_default_rules(self):
        cases = {
            '(subset loc egress)': PredicateClass.WRAPPER,
            '(= mlt x.mlt)': PredicateClass.WRAPPER,
            '(in (egr self) loc)': PredicateClass.ENFORCEABLE,
            '(= f x.f)': PredicateClass.ENFORCEABLE,
            '(exists k (= mlt (update x.mlt k f.sa t port)))': PredicateClass.ENFORCEABLE,
            '(ucast x.f.da)': PredicateClass.CHECKABLE,
            '(= loc (set (ing port)))': PredicateClass.CHECKABLE,
            '(exists i (= (fld (lookup mlt i) mac) f.da))': PredicateClass.CHECKABLE,
            'B': PredicateClass.CHECKABLE,
        }
        for text, kind in cases.items():
            with self.subTest(atom=text):
                self.assertEqual(self.classifier.classify(parse(text)), kind)

    def test_unclassifiable(self):
        classifier = Classifier([('(ucast ?0)', 'checkable')])
        with self.assertRaises(UnclassifiableAtom):
            classifier.classify(parse('(bcast f.da)'))

    def test_tested_atom_must_be_checkable(self):
        tree = Branch(parse('(= f x.f)'), Leaf(None), Leaf(None))
        with self.assertRaises(ClassificationConflict):
            lower(tree, self.classifier)


class TestCompile(unittest.TestCase):
    """Lowering the four-component switch product."""

    @classmethod
    def setUpClass(cls):
        cls.switch = switch_product()
        cls.profile = load_profile(os.path.join(ROOT, 'profiles', 'switch4.prof'))
        cls.oracle = SatOracle()
        cls.program, cls.plans = compile_product(cls.switch, cls.oracle, cls.profile)

    def test_one_program_per_transition(self):
        edges = [(tp.source, tp.target, tp.binds) for tp in self.program.transitions]
        self.assertEqual(edges, [(tr.source, tr.target, tr.binds_snapshot) for tr in self.switch.transitions])
        self.assertEqual(self.program.start, 'H1B1I1ML')

    def test_egress_context(self):
        """The wrapper guarantees an egress-only location on the return transition."""
        (plan,) = [p for p in self.plans if p.source == 'H2B2I2ML']
        self.assertIn(Literal(parse('(subset loc egress)')), plan.context)

    def test_default_budget_compiles_switch(self):
        self.assertEqual(self.oracle.budget, config.oracle_budget)
        self.assertEqual(len(self.plans), len(self.switch.transitions))
        self.assertTrue(self.oracle.theory_cache)

    def test_eliminated_literals_follow_from_context(self):
        oracle = SatOracle()
        for plan in self.plans:
            for lit in plan.eliminated:
                with self.subTest(transition=f'{plan.source} -> {plan.target}', literal=str(lit)):
                    self.assertTrue(oracle.implies(conjoin(plan.context), lit.to_formula()))

    def test_lowering_keeps_meaning(self):
        """Tree, minimized disjuncts and program agree on every consistent valuation of the guard atoms."""
        classifier = Classifier()
        oracle = SatOracle()
        programs = {(tp.source, tp.target): tp for tp in self.program.transitions}
        for plan in self.plans:
            tp = programs[(plan.source, plan.target)]
            projections = [frozenset(Literal(guard_atom(lit.atom), lit.positive) for lit in d
                                     if classifier.classify(lit.atom) is PredicateClass.CHECKABLE)
                           for d in plan.disjuncts]
            atoms = sorted({lit.atom for alt in projections for lit in alt}, key=to_text)
            with self.subTest(transition=f'{plan.source} -> {plan.target}'):
                for values in itertools.product((False, True), repeat=len(atoms)):
                    table = dict(zip(atoms, values))
                    acts = any(satisfies(key, table.__getitem__) for key in plan.actions)
                    enabled = any(satisfies(alt, table.__getitem__) for alt in projections)
                    verdict, _ = interpret_guard(tp.guard, table.__getitem__)
                    observed = (decide(plan.tree, table.__getitem__).matched,
                                verdict is Verdict.ACT, verdict is not Verdict.DISABLED)
                    if observed != (acts, acts, enabled):
                        # only valuations no trace state can produce may disagree
                        state = conjoin(Literal(atom, value) for atom, value in table.items())
                        self.assertFalse(oracle.is_satisfiable(state), f"{observed} at {table}")

    def test_guards_are_checkable_and_read_snapshot(self):
        classifier = Classifier()
        for tp in self.program.transitions:
            for atom in guard_atoms(tp.guard):
                with self.subTest(transition=f'{tp.source} -> {tp.target}', atom=to_text(atom)):
                    self.assertEqual(classifier.classify(atom), PredicateClass.CHECKABLE)
                    self.assertNotIn('f', free_vars(atom))

    def test_program_text_round_trip(self):
        self.assertEqual(loads_program(dumps_program(self.program)), self.program)

    def test_discharge(self):
        table = dpdk_table()
        source = discharge(self.program, table, profile_hash(self.profile))
        self.assertIn('#include "nfc_wrapper.h"', source)
        self.assertIn('STATE_H2B2I2ML,', source)
        for state in self.switch.states:
            self.assertIn(f'int dispatch_{state}(struct nfc_ctx *ctx, uint16_t buf, unsigned self)', source)
        self.assertEqual(source.count('return NFC_STUCK;'), len(self.switch.states))
        self.assertIn(f'sha256 {table.digest}', source)
        self.assertEqual(discharge(self.program, table, profile_hash(self.profile)), source)


class TestInterpret(unittest.TestCase):
    """A hand-written program with one guard and a guarded fallback."""

    def setUp(self):
        self.program = loads_program(SMALL_PROGRAM)
        self.bcast = parse('(bcast x.f.da)')
        self.port2 = parse('(= port 2)')

    def test_structure(self):
        (tp,) = self.program.transitions
        self.assertEqual(tp.guard, GuardNode(self.bcast, ActionNode((Literal(parse('(in (egr self) loc)')),)),
                                             NoMatchNode((frozenset({Literal(self.port2)}),))))
        self.assertEqual(guard_count(self.program, 'A'), 2)
        self.assertEqual(guard_count(self.program, 'B'), 0)

    def test_verdicts(self):
        guard = self.program.transitions[0].guard
        values = {self.bcast: True, self.port2: False}
        self.assertEqual(interpret_guard(guard, values.__getitem__)[0], Verdict.ACT)
        values = {self.bcast: False, self.port2: True}
        self.assertEqual(interpret_guard(guard, values.__getitem__), (Verdict.NOOP, ()))
        values = {self.bcast: False, self.port2: False}
        self.assertEqual(interpret_guard(guard, values.__getitem__)[0], Verdict.DISABLED)
        self.assertIsNone(interpret(self.program, 'A', values.__getitem__))

    def test_interpret_returns_target(self):
        values = {self.bcast: True, self.port2: False}
        target, verdict, statements = interpret(self.program, 'A', values.__getitem__)
        self.assertEqual((target, verdict), ('B', Verdict.ACT))
        self.assertEqual(len(statements), 1)

    def test_missing_header(self):
        with self.assertRaises(ProgramFormatError):
            loads_program('program P\nstates A\n')

    def test_unknown_node(self):
        text = 'program P\nstates A\nstart A\ntransition A -> A\n  context true\n  frob\n'
        with self.assertRaises(ProgramFormatError) as ctx:
            loads_program(text)
        self.assertEqual(ctx.exception.line, 6)


class TestDischargeTable(unittest.TestCase):

    def setUp(self):
        self.table = dpdk_table()

    def test_guard_rendering(self):
        self.assertEqual(self.table.render_guard(parse('(ucast x.f.da)')), 'is_unicast_addr(dst_haddr(bufs[buf]))')
        self.assertEqual(self.table.render_guard(parse('(= port uplink-port)')).count('in_port'), 1)

    def test_quantifier_rendering(self):
        text = self.table.render_guard(parse('(exists i (= (fld (lookup mlt i) mac) x.f.da))'))
        self.assertIn('for (unsigned i = 0; i < MLT_SIZE', text)
        self.assertIn('mlt[i].mac', text)

    def test_statement_rendering(self):
        lit = Literal(parse('(in (egr self) loc)'))
        self.assertEqual(self.table.render_statement(lit), 'port_mask |= (1u << self);')
        self.assertEqual(self.table.render_statement(lit.negate()), 'port_mask &= ~(1u << self);')
        learn = Literal(parse('(exists k (= mlt (update x.mlt k f.sa t port)))'))
        self.assertEqual(self.table.render_statement(learn), 'mlt_learn(mlt, src_haddr(bufs[buf]), now, in_port);')

    def test_missing_template(self):
        with self.assertRaises(MissingTemplate):
            DischargeTable.loads('').render_guard(parse('(ucast f.da)'))

    def test_duplicate_entry(self):
        text = 'pattern (ucast ?0)\nkind guard\n  a({0})\nend\npattern (ucast ?0)\nkind guard\n  b({0})\nend\n'
        with self.assertRaises(AmbiguousTemplate):
            DischargeTable.loads(text)

    def test_placeholder_without_hole(self):
        with self.assertRaises(PlaceholderArityMismatch):
            DischargeTable.loads('pattern (ucast ?0)\nkind guard\n  a({1})\nend\n')

    def test_unknown_kind(self):
        with self.assertRaises(ProgramFormatError):
            DischargeTable.loads('pattern (ucast ?0)\nkind macro\n  a({0})\nend\n')


if __name__ == '__main__':
    unittest.main()
