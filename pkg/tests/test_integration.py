"""
Integration tests for the nfcompile pipeline

Runs product, synth, emit, simulate, check and adapt through cli.main
against a project file in a temporary directory, the way a user would from
the shell.
"""

import io
import unittest
import os
import sys
import tempfile
import shutil
from unittest.mock import patch

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import cli
from cli import ConfigError, read_project
from formula import DisjunctSet, Literal, parse
from frames import Frame, TraceEvent, ingress
from netsim import estimate_profile
from synth import Branch, DistributionProfile, equivalent, resynthesize, synthesize

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

BROADCAST = 'ff:ff:ff:ff:ff:ff'
STATION_A = '04:0c:ce:d2:08:6c'
STATION_B = '7c:d1:c3:e8:a4:67'


def project_text(output_dir, **overrides):
    settings = {
        'components': [os.path.join(ROOT, 'components', f'{name}.sfa') for name in 'HBIM'],
        'table': os.path.join(ROOT, 'tables', 'dpdk.dt'),
        'profile': os.path.join(ROOT, 'profiles', 'switch4.prof'),
        'workload': os.path.join(ROOT, 'workloads', 'arp.wl'),
        'output_dir': output_dir,
        'seed': 7,
        'num_ports': 4,
        'uplink_port': 1,
        'mto': 5,
    }
    settings.update(overrides)
    return ''.join(f"{key} = {value!r}\n" for key, value in settings.items())


class TestReadProject(unittest.TestCase):
    """Project file validation"""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, 'config-test.py')

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def write(self, text):
        with open(self.path, 'w') as f:
            f.write(text)

    def test_reads_bundled_project(self):
        project = read_project(os.path.join(ROOT, 'profiles', 'config-switch4.py'))
        self.assertEqual(len(project.components), 4)
        self.assertTrue(project.table.endswith(os.path.join('tables', 'dpdk.dt')))
        self.assertEqual(project.domain.num_ports, 4)
        self.assertEqual(project.seed, 7)

    def test_relative_paths_follow_project_file(self):
        self.write(project_text('out'))
        self.assertEqual(read_project(self.path).output_dir, os.path.join(self.test_dir, 'out'))

    def test_unknown_key(self):
        self.write(project_text('out') + "colour = 'blue'\n")
        with self.assertRaises(ConfigError):
            read_project(self.path)

    def test_missing_component_file(self):
        self.write(project_text('out', components=[os.path.join(self.test_dir, 'X.sfa')]))
        with self.assertRaises(ConfigError):
            read_project(self.path)

    def test_bad_domain(self):
        self.write(project_text('out', num_ports=1))
        with self.assertRaises(ConfigError):
            read_project(self.path)

    def test_unknown_objective(self):
        self.write(project_text('out', objective='fastest'))
        with self.assertRaises(ConfigError):
            read_project(self.path)


@patch('cli.setup_logging')
@patch('cli.log.start')
class TestPipeline(unittest.TestCase):
    """Every command in order, each reading what the previous one wrote"""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.out = os.path.join(self.test_dir, 'build')
        self.path = os.path.join(self.test_dir, 'config-test.py')
        with open(self.path, 'w') as f:
            f.write(project_text(self.out))

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def main(self, *args):
        return cli.main(list(args) + ['--config', self.path])

    def read(self, name):
        with open(os.path.join(self.out, name)) as f:
            return f.read()

    def test_full_pipeline(self, mock_start, mock_setup):
        self.assertEqual(self.main('product'), 0)
        self.assertTrue(self.read('product.sfa').startswith('# nfcompile v1.020\n# seed 7\n'))
        self.assertIn('H1B1I1ML -> H2B2I2ML  [binds x]', self.read('product.txt'))

        self.assertEqual(self.main('synth'), 0)
        self.assertIn('# objective expected-time', self.read('program.dp'))

        self.assertEqual(self.main('emit'), 0)
        self.assertIn('int dispatch_H1B1I1ML(', self.read('switch.c'))

        self.assertEqual(self.main('simulate'), 0)
        egress = [line for line in self.read('egress.txt').splitlines() if not line.startswith('#')]
        self.assertEqual(egress, ['1 {3e,4e}', '3 {2e}'])

        self.assertEqual(self.main('simulate', '--program'), 0)
        egress = [line for line in self.read('egress.txt').splitlines() if not line.startswith('#')]
        self.assertEqual(egress, ['1 {3e,4e}', '3 {2e}'])

        self.assertEqual(self.main('check', '--traces', '5', '--length', '4'), 0)
        self.assertIn('phi_ml: holds', self.read('check.txt'))

        self.assertEqual(self.main('adapt'), 0)
        self.assertIn('default = ', self.read('adapted.prof'))
        self.assertIn('equivalent yes', self.read('adapt.txt'))
        mock_start.assert_called_with('adapt')

    def test_nondeterministic_component_is_rejected(self, mock_start, mock_setup):
        """Overlapping labels stop product before anything is written"""
        components = [os.path.join(ROOT, 'components', 'H.sfa'),
                      os.path.join(ROOT, 'tests', 'fixtures', 'overlap.sfa')]
        with open(self.path, 'w') as f:
            f.write(project_text(self.out, components=components))
        with patch('sys.stderr', new_callable=io.StringIO) as stderr:
            self.assertEqual(self.main('product'), 1)
        self.assertIn('A -> A', stderr.getvalue())
        self.assertIn('A -> B', stderr.getvalue())
        self.assertFalse(os.path.exists(os.path.join(self.out, 'product.sfa')))

    def test_stage_order_is_enforced(self, mock_start, mock_setup):
        """synth before product is a toolchain error"""
        with patch('sys.stderr'):
            self.assertEqual(self.main('synth'), 1)

    def test_missing_project_file(self, mock_start, mock_setup):
        with patch('sys.stderr'):
            self.assertEqual(cli.main(['product', '--config', os.path.join(self.test_dir, 'nope.py')]), 1)


def ingress_trace(broadcasts, total=14):
    """total frames from STATION_B into port 2, the first few of them broadcast"""
    return [TraceEvent(n, Frame(BROADCAST if n < broadcasts else STATION_A, STATION_B, 'data'),
                       frozenset({ingress(2)})) for n in range(total)]


class TestAdaptation(unittest.TestCase):
    """Profiles estimated from opposite traffic mixes move the first test"""

    def setUp(self):
        self.bcast = parse('(bcast x.f.da)')
        self.sa_bcast = parse('(bcast x.f.sa)')
        self.same = parse('(= x.f.da x.f.sa)')
        self.dset = DisjunctSet.build([frozenset({Literal(self.bcast)}),
                                       frozenset({Literal(self.sa_bcast), Literal(self.same)})])
        self.original = synthesize(self.dset, DistributionProfile())

    def adapted(self, broadcasts):
        profile = estimate_profile(ingress_trace(broadcasts), [self.bcast, self.sa_bcast, self.same])
        return resynthesize(self.original, profile, self.dset)

    def test_root_follows_traffic(self):
        broadcast_heavy = self.adapted(12)
        unicast_heavy = self.adapted(0)
        self.assertIsInstance(broadcast_heavy, Branch)
        self.assertIsInstance(unicast_heavy, Branch)
        self.assertEqual(broadcast_heavy.atom, self.bcast)
        self.assertEqual(unicast_heavy.atom, self.same)

    def test_adapted_trees_keep_meaning(self):
        for broadcasts in (12, 0):
            with self.subTest(broadcasts=broadcasts):
                self.assertTrue(equivalent(self.original, self.adapted(broadcasts), self.dset.atoms()))


if __name__ == '__main__':
    unittest.main()
