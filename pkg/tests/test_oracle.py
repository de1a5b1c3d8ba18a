#!/usr/bin/python3
"""
Unit tests for the satisfiability oracle.

The internal backend is cross-checked against brute-force enumeration on a
small domain; the external backend is exercised with a mocked solver process.
"""

import os
import subprocess
import sys
import unittest
from unittest.mock import MagicMock, patch

import pytest

# Add the parent directory to the path so we can import oracle
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from formula import FALSE, parse
from frames import BROADCAST
from oracle import (DomainConfig, ExternalSolver, ExternalSolverError, InvalidDomain, SatOracle,
                    UnsupportedConstruct, enumerate_models, implies, is_satisfiable, to_smtlib)

HUB_STAY = '(=> (= loc (set (ing port))) (or (= port uplink-port) (= f.da (haddr port))))'
HUB_BIND = '(lambda x (and (= loc (set (ing port))) (!= port uplink-port) (!= f.da (haddr port))))'
BRIDGE_LEAVE = '(and (= loc (set (ing port))) (!= port uplink-port) (!= f.da (haddr port)))'
RELAY_DISJUNCT = ('(and (ucast x.f.da) (!= self x.port) (!= self uplink-port) (= f x.f) '
                  '(in (egr self) loc) (subset loc egress) (= mlt x.mlt) '
                  '(exists i (and (= (fld (lookup mlt i) mac) x.f.da) '
                  '(<= (- t (fld (lookup mlt i) t)) mto) (= (fld (lookup mlt i) port) self))))')


def small_domain():
    return DomainConfig(num_ports=2, mac_universe=(BROADCAST, '04:0c:ce:d2:08:6c'), time_bound=2,
                        mlt_size=1, proto_tags=('arpreq', 'data'), uplink_port=1, mto=1)


def reply(stdout, returncode=0, stderr=''):
    result = MagicMock()
    result.stdout = stdout
    result.returncode = returncode
    result.stderr = stderr
    return result


class TestDomainConfig(unittest.TestCase):
    """Validation of the finite sorts."""

    def test_defaults_are_valid(self):
        cfg = DomainConfig()
        self.assertEqual(list(cfg.ports), [1, 2, 3, 4])
        self.assertIn(BROADCAST, cfg.macs)
        self.assertIn(cfg.haddr(3), cfg.macs)

    def test_rejects_single_port(self):
        with self.assertRaises(InvalidDomain):
            DomainConfig(num_ports=1)

    def test_rejects_missing_broadcast(self):
        with self.assertRaises(InvalidDomain):
            DomainConfig(mac_universe=('04:0c:ce:d2:08:6c',))

    def test_rejects_empty_table(self):
        with self.assertRaises(InvalidDomain):
            DomainConfig(mlt_size=0)


class TestInternalBackend(unittest.TestCase):
    """Internal DPLL and finite-domain theory check."""

    def setUp(self):
        self.oracle = SatOracle()

    def test_contradiction(self):
        self.assertFalse(self.oracle.is_satisfiable(parse('(and (ucast f.da) (not (ucast f.da)))')))

    def test_hub_and_bridge_leave_together(self):
        """The product keeps H1B1I1ML -> H2B2I2ML."""
        phi = parse(f"(and {HUB_BIND[len('(lambda x '):-1]} {BRIDGE_LEAVE})")
        self.assertTrue(self.oracle.is_satisfiable(phi))

    def test_hub_stays_only_for_uplink_or_switch(self):
        """Staying in H1 is impossible for a switched ingress frame."""
        phi = parse(f"(and {HUB_STAY} (= loc (set (ing port))) (!= port uplink-port) (!= f.da (haddr port)))")
        self.assertFalse(self.oracle.is_satisfiable(phi))

    def test_relay_disjunct_is_satisfiable(self):
        self.assertTrue(self.oracle.is_satisfiable(parse(RELAY_DISJUNCT)))

    def test_implies(self):
        """Port 2 is never the uplink under the default config."""
        self.assertTrue(implies(parse('(= port 2)'), parse('(!= port uplink-port)')))
        self.assertFalse(implies(parse('(ucast f.da)'), parse('(= f.da f.sa)')))

    def test_results_are_cached(self):
        phi = parse('(and (bcast f.da) (= port 3))')
        self.assertTrue(self.oracle.is_satisfiable(phi))
        self.assertTrue(self.oracle.is_satisfiable(phi))
        self.assertEqual(self.oracle.calls, 1)

    def test_location_conflict_found_before_table_atoms(self):
        """A loc contradiction is settled without branching over the unrolled table update."""
        oracle = SatOracle(budget=2000)
        phi = parse('(and (not (exists k (= mlt (update x.mlt k f.sa t port)))) '
                    '(= loc (set (ing port))) (subset loc egress))')
        self.assertFalse(oracle.is_satisfiable(phi))
        self.assertTrue(oracle.theory_cache)

    def test_theory_results_shared_across_queries(self):
        self.assertTrue(self.oracle.is_satisfiable(parse('(and (bcast f.da) (= port 3))')))
        cached = dict(self.oracle.theory_cache)
        self.assertTrue(self.oracle.is_satisfiable(parse('(and (bcast f.da) (= port 3) (= self 2))')))
        self.assertTrue(cached)
        self.assertLessEqual(cached.items(), self.oracle.theory_cache.items())

    def test_module_level_helper(self):
        self.assertFalse(is_satisfiable(parse('(and (= port uplink-port) (!= port uplink-port))')))


class TestBruteForce(unittest.TestCase):
    """The internal backend agrees with exhaustive enumeration on a small domain."""

    CORPUS = [
        '(and (ucast f.da) (= port 2))',
        '(and (bcast f.da) (ucast f.da))',
        f"(and {HUB_STAY} (= loc (set (ing port))) (!= port uplink-port) (!= f.da (haddr port)))",
        '(and (= loc (set (ing port))) (!= port uplink-port))',
        '(and (in (egr self) loc) (subset loc egress) (!= self uplink-port))',
        '(exists i (and (= (fld (lookup mlt i) mac) f.sa) (<= (- t (fld (lookup mlt i) t)) mto)))',
        '(and (= f x.f) (!= f.da x.f.da))',
    ]

    def test_agreement(self):
        cfg = small_domain()
        oracle = SatOracle(cfg)
        for text in self.CORPUS:
            phi = parse(text)
            with self.subTest(formula=text):
                found = next(enumerate_models(phi, cfg), None) is not None
                self.assertEqual(oracle.is_satisfiable(phi), found)

    def test_no_model_for_hub_stay(self):
        cfg = small_domain()
        phi = parse(self.CORPUS[2])
        self.assertEqual(list(enumerate_models(phi, cfg)), [])


class TestSmtlib(unittest.TestCase):
    """SMT-LIB translation."""

    def test_script_shape(self):
        script = to_smtlib(parse('(and (= port uplink-port) (!= port uplink-port))'), DomainConfig())
        self.assertIn('(set-logic ALL)', script)
        self.assertTrue(script.rstrip().endswith('(check-sat)'))
        self.assertIn('(assert', script)

    def test_false_is_translated(self):
        self.assertIn('(check-sat)', to_smtlib(FALSE, DomainConfig()))

    def test_update_must_be_grounded(self):
        with self.assertRaises(UnsupportedConstruct):
            to_smtlib(parse('(= mlt (update x.mlt 0 f.sa t port))'), DomainConfig())


class TestExternalBackend(unittest.TestCase):
    """Solver process driven through a mocked subprocess.run."""

    @patch('oracle.subprocess.run')
    def test_unsat_reply(self, mock_run):
        mock_run.return_value = reply('unsat\n')
        oracle = SatOracle(backend='external', solver=ExternalSolver(path='z3', args=['-in', '-smt2']))
        self.assertFalse(oracle.is_satisfiable(parse('(and (= port uplink-port) (!= port uplink-port))')))
        command = mock_run.call_args[0][0]
        self.assertEqual(command, ['z3', '-in', '-smt2'])
        self.assertIn('(check-sat)', mock_run.call_args[1]['input'])

    @patch('oracle.subprocess.run')
    def test_sat_reply(self, mock_run):
        mock_run.return_value = reply('sat\n')
        solver = ExternalSolver(path='z3')
        self.assertTrue(solver.check('(check-sat)\n'))

    @patch('oracle.subprocess.run')
    def test_unexpected_reply(self, mock_run):
        mock_run.return_value = reply('unknown\n')
        with self.assertRaises(ExternalSolverError):
            ExternalSolver(path='z3').check('(check-sat)\n')

    @patch('oracle.time.sleep')
    @patch('oracle.subprocess.run')
    def test_timeout_is_retried(self, mock_run, mock_sleep):
        mock_run.side_effect = [subprocess.TimeoutExpired(cmd='z3', timeout=1), reply('sat\n')]
        solver = ExternalSolver(path='z3', max_retries=2, retry_delay=0.5)
        self.assertTrue(solver.check('(check-sat)\n'))
        self.assertEqual(mock_run.call_count, 2)
        mock_sleep.assert_called_once_with(0.5)

    @patch('oracle.time.sleep')
    @patch('oracle.subprocess.run')
    def test_retries_exhausted(self, mock_run, mock_sleep):
        mock_run.side_effect = OSError('no such file')
        with self.assertRaises(ExternalSolverError):
            ExternalSolver(path='missing-solver', max_retries=1, retry_delay=0).check('(check-sat)\n')
        self.assertEqual(mock_run.call_count, 2)

    def test_env_override(self):
        with patch.dict(os.environ, {'NFC_SOLVER': '/opt/solvers/z3'}):
            self.assertEqual(ExternalSolver().path, '/opt/solvers/z3')


@pytest.mark.parametrize('stdout, returncode', [('', 1), ('(error "bad")\n', 1)])
def test_failed_process_is_an_error(mocker, stdout, returncode):
    mocker.patch('oracle.subprocess.run', return_value=reply(stdout, returncode, 'boom'))
    with pytest.raises(ExternalSolverError):
        ExternalSolver(path='z3').check('(check-sat)\n')


if __name__ == '__main__':
    unittest.main()
