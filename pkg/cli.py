#!/usr/bin/env python3
"""
nfcompile command line driver.

    python cli.py product  --config profiles/config-switch4.py
    python cli.py synth    --config profiles/config-switch4.py [--objective min-size]
    python cli.py emit     --config profiles/config-switch4.py
    python cli.py simulate --config profiles/config-switch4.py [--program]
    python cli.py check    --config profiles/config-switch4.py [--traces 100]
    python cli.py adapt    --config profiles/config-switch4.py [--trace FILE]

Stages talk to each other only through the files in the project's output
directory. Exit status is 0 on success, 1 on any toolchain error and 2 when
check finds an invariant violation or a divergence.
"""

import argparse
import ast
import hashlib
import os
import random
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import admin
import config
import log
from emit import (Classifier, DecisionProgram, DischargeTable, EmitError, GuardNode, NoMatchNode, compile_product,
                  discharge, dumps_program, loads_program, lower_plan)
from formula import DisjunctSet, FormulaError, format_disjunct
from frames import format_loc
from logging_config import log_stage_timing, logging_context, setup_logging
from machine import MachineError, check_deterministic, dumps_machine, load_machine, product, product_report
from netsim import (SimulationError, check_phi_b1, check_phi_ml, dumps_trace, equivalence_check,
                    estimate_profile, history_from_trace, load_trace, load_workload, random_trace, simulate)
from oracle import DomainConfig, OracleError, SatOracle
from synth import (DistributionProfile, Objective, SynthesisError, dumps_profile, equivalent, load_profile,
                   profile_hash, render_tree, resynthesize, tree_metrics)

logger = log.logger

DOMAIN_KEYS = ('num_ports', 'mac_universe', 'time_bound', 'mlt_size', 'proto_tags', 'uplink_port', 'mto',
               'haddr_prefix')
PROJECT_KEYS = ('components', 'profile', 'table', 'workload', 'output_dir', 'objective', 'seed', 'solver')
PATH_KEYS = ('profile', 'table', 'workload')

PRODUCT_FILE = 'product.sfa'
PRODUCT_REPORT = 'product.txt'
PROGRAM_FILE = 'program.dp'
SYNTH_REPORT = 'synth.txt'
SOURCE_FILE = 'switch.c'
TRACE_FILE = 'trace.txt'
EGRESS_FILE = 'egress.txt'
CHECK_REPORT = 'check.txt'
ADAPTED_PROFILE = 'adapted.prof'
ADAPTED_PROGRAM = 'program-adapted.dp'
ADAPT_REPORT = 'adapt.txt'


class ConfigError(Exception):
    """Unreadable project file, unknown key or missing referenced file"""
    pass


@dataclass
class ProjectConfig:
    path: str
    domain: DomainConfig
    components: list
    table: str
    profile: Optional[str] = None
    workload: Optional[str] = None
    output_dir: str = 'build'
    objective: str = Objective.EXPECTED_TIME.value
    seed: int = 0
    solver: str = field(default_factory=lambda: config.solver_backend)

    def output(self, name: str) -> str:
        return os.path.join(self.output_dir, name)


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def read_project(path: str) -> ProjectConfig:
    """Read `key = value` lines, values written as Python literals.

    Raises:
        ConfigError: unreadable file, unknown key or missing referenced file
    """
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read project file {path}: {e}")
    settings = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep:
            raise ConfigError(f"{path}:{number}: expected 'key = value'")
        if key not in DOMAIN_KEYS and key not in PROJECT_KEYS:
            raise ConfigError(f"{path}:{number}: unknown key {key!r}")
        try:
            settings[key] = ast.literal_eval(value.strip())
        except (ValueError, SyntaxError):
            raise ConfigError(f"{path}:{number}: bad value for {key}: {value.strip()!r}")
    base = os.path.dirname(os.path.abspath(path))
    if not settings.get('components') or 'table' not in settings:
        raise ConfigError(f"{path}: components and table are required")
    try:
        domain = DomainConfig.from_settings({k: v for k, v in settings.items() if k in DOMAIN_KEYS})
    except OracleError as e:
        raise ConfigError(f"{path}: {e}")
    project = ProjectConfig(
        path=path, domain=domain,
        components=[_resolve(base, p) for p in settings['components']],
        table=_resolve(base, settings['table']),
        profile=_resolve(base, settings['profile']) if settings.get('profile') else None,
        workload=_resolve(base, settings['workload']) if settings.get('workload') else None,
        output_dir=_resolve(base, settings.get('output_dir', 'build')),
        objective=settings.get('objective', Objective.EXPECTED_TIME.value),
        seed=int(settings.get('seed', 0)),
        solver=settings.get('solver', config.solver_backend))
    for name in project.components + [getattr(project, key) for key in PATH_KEYS]:
        if name and not os.path.exists(name):
            raise ConfigError(f"{path}: referenced file {name} does not exist")
    try:
        Objective(project.objective)
    except ValueError:
        raise ConfigError(f"{path}: unknown objective {project.objective!r}")
    return project


def _digest(path: str) -> str:
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


def provenance(project: ProjectConfig, inputs: list, comment: str = '#') -> str:
    lines = [f"{admin.tool_name} {admin.version}", f"seed {project.seed}"]
    lines += [f"input {os.path.basename(p)} sha256:{_digest(p)}" for p in inputs]
    return ''.join(f"{comment} {line}\n" for line in lines)


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w') as f:
        f.write(text)
    logger.info("wrote %s", path)


def _require(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{path} is missing; run '{producer}' first")
    return path


def _oracle(project: ProjectConfig) -> SatOracle:
    return SatOracle(project.domain, project.solver)


def _profile(project: ProjectConfig) -> DistributionProfile:
    return load_profile(project.profile) if project.profile else DistributionProfile()


# Commands

def cmd_product(project: ProjectConfig, args) -> int:
    machines = [load_machine(path) for path in project.components]
    oracle = _oracle(project)
    for m in machines:
        check_deterministic(m, oracle)
    if len(machines) == 1:
        m = machines[0]
    else:
        m = product(machines, oracle)
    header = provenance(project, project.components)
    _write(project.output(PRODUCT_FILE), header + dumps_machine(m))
    _write(project.output(PRODUCT_REPORT), header + product_report(m))
    print(f"{m.name}: {len(m.states)} states, {len(m.transitions)} transitions")
    return 0


def _synth_report(plans, profile) -> str:
    lines = []
    for plan in plans:
        lines.append(f"{plan.source} -> {plan.target}")
        lines.append(f"  context: {format_disjunct(plan.context)}")
        for lit in plan.eliminated:
            lines.append(f"  eliminated: {lit}")
        lines.append(f"  disjuncts: {len(plan.disjuncts)}")
        for d in plan.disjuncts:
            lines.append(f"    {format_disjunct(d)}")
        metrics = tree_metrics(plan.tree, profile)
        lines.append(f"  tests: {metrics.size}  expected: {metrics.expected_tests.numerator}/"
                     f"{metrics.expected_tests.denominator}")
        lines += ['  ' + row for row in render_tree(plan.tree).splitlines()]
        lines.append('')
    return '\n'.join(lines)


def cmd_synth(project: ProjectConfig, args) -> int:
    product_path = _require(project.output(PRODUCT_FILE), 'product')
    m = load_machine(product_path)
    profile = _profile(project)
    objective = Objective(args.objective or project.objective)
    program, plans = compile_product(m, _oracle(project), profile, Classifier(), objective)
    inputs = [product_path] + ([project.profile] if project.profile else [])
    header = provenance(project, inputs) + f"# objective {objective.value}\n"
    _write(project.output(PROGRAM_FILE), header + dumps_program(program))
    _write(project.output(SYNTH_REPORT), header + _synth_report(plans, profile))
    return 0


def cmd_emit(project: ProjectConfig, args) -> int:
    program_path = _require(project.output(PROGRAM_FILE), 'synth')
    with open(program_path) as f:
        program = loads_program(f.read())
    table = DischargeTable.load(project.table)
    digest = profile_hash(_profile(project)) if project.profile else ''
    _write(project.output(SOURCE_FILE), discharge(program, table, digest))
    return 0


def cmd_simulate(project: ProjectConfig, args) -> int:
    if not project.workload:
        raise ConfigError(f"{project.path}: simulate needs a workload")
    workload = load_workload(project.workload)
    if args.program:
        source = _require(project.output(PROGRAM_FILE), 'synth')
        with open(source) as f:
            executable = loads_program(f.read())
    else:
        source = _require(project.output(PRODUCT_FILE), 'product')
        executable = load_machine(source)
    events = simulate(executable, workload, project.domain)
    header = provenance(project, [source, project.workload])
    _write(project.output(TRACE_FILE), dumps_trace(events, header))
    egress_lines = [f"{e.time} {format_loc(e.loc)}" for e in events if not e.is_ingress()]
    _write(project.output(EGRESS_FILE), header + '\n'.join(egress_lines) + '\n')
    return 0


def cmd_check(project: ProjectConfig, args) -> int:
    trace_path = _require(args.trace or project.output(TRACE_FILE), 'simulate')
    product_path = _require(project.output(PRODUCT_FILE), 'product')
    history = history_from_trace(load_trace(trace_path), project.domain)
    reports = [check_phi_ml(history, project.domain), check_phi_b1(history, project.domain)]
    rng = random.Random(project.seed)
    traces = [random_trace(rng, project.domain, args.length) for _ in range(args.traces)]
    components = [load_machine(path) for path in project.components]
    equivalence = equivalence_check(load_machine(product_path), components, traces, project.domain)
    lines = [str(r) for r in reports] + [str(equivalence)]
    _write(project.output(CHECK_REPORT), provenance(project, [trace_path, product_path]) + '\n'.join(lines) + '\n')
    for line in lines:
        print(line.splitlines()[0])
    return 0 if all(r.holds for r in reports) and equivalence.holds else 2


def _guard_atoms(node, found):
    if isinstance(node, GuardNode):
        found.add(node.atom)
        _guard_atoms(node.then, found)
        _guard_atoms(node.orelse, found)
    elif isinstance(node, NoMatchNode):
        found.update(lit.atom for alt in node.alternatives for lit in alt)
    return found


def cmd_adapt(project: ProjectConfig, args) -> int:
    trace_path = _require(args.trace or project.output(TRACE_FILE), 'simulate')
    product_path = _require(project.output(PRODUCT_FILE), 'product')
    m = load_machine(product_path)
    oracle = _oracle(project)
    classifier = Classifier()
    old_profile = _profile(project)
    _, plans = compile_product(m, oracle, old_profile, classifier)
    atoms = set()
    for plan in plans:
        _guard_atoms(lower_plan(plan, classifier).guard, atoms)
    new_profile = estimate_profile(load_trace(trace_path), atoms, project.domain)
    header = provenance(project, [trace_path, product_path])
    _write(project.output(ADAPTED_PROFILE), header + dumps_profile(new_profile))

    lines = []
    adapted = []
    for plan in plans:
        dset = DisjunctSet.build(plan.actions)
        tree = resynthesize(plan.tree, new_profile, dset, oracle) if plan.actions else plan.tree
        adapted.append(replace(plan, tree=tree))
        before, after = tree_metrics(plan.tree, new_profile), tree_metrics(tree, new_profile)
        same = equivalent(plan.tree, tree, dset.atoms())
        lines.append(f"{plan.source} -> {plan.target}: tests {before.size} -> {after.size}, expected "
                     f"{before.expected_tests} -> {after.expected_tests}, equivalent {'yes' if same else 'NO'}")
        if render_tree(plan.tree) != render_tree(tree):
            lines += ['  before:'] + ['    ' + r for r in render_tree(plan.tree).splitlines()]
            lines += ['  after:'] + ['    ' + r for r in render_tree(tree).splitlines()]
    program = DecisionProgram(m.name, tuple(m.states), m.start,
                              tuple(lower_plan(plan, classifier) for plan in adapted))
    _write(project.output(ADAPTED_PROGRAM), header + dumps_program(program))
    _write(project.output(ADAPT_REPORT), header + '\n'.join(lines) + '\n')
    return 0


COMMANDS = {
    'product': cmd_product,
    'synth': cmd_synth,
    'emit': cmd_emit,
    'simulate': cmd_simulate,
    'check': cmd_check,
    'adapt': cmd_adapt,
}

ERRORS = (ConfigError, FormulaError, OracleError, MachineError, SynthesisError, EmitError,
          SimulationError, OSError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=admin.tool_name, description='λ-SFA network function compiler')
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', required=True, help='project file, e.g. profiles/config-switch4.py')
    parser.add_argument('--objective', choices=[o.value for o in Objective], help='branching objective')
    parser.add_argument('--seed', type=int, help='override the project seed')
    parser.add_argument('--solver', choices=['internal', 'external'], help='satisfiability backend')
    parser.add_argument('--program', action='store_true', help='simulate the lowered program')
    parser.add_argument('--trace', help='trace file for check and adapt')
    parser.add_argument('--traces', type=int, default=100, help='random traces for the equivalence check')
    parser.add_argument('--length', type=int, default=8, help='events per random trace')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log.start(args.command)
    setup_logging(log_dir=config.log_dir)
    try:
        project = read_project(args.config)
        if args.seed is not None:
            project.seed = args.seed
        if args.solver:
            project.solver = args.solver
        started = time.time()
        with logging_context(stage='cli', seed=project.seed):
            status = COMMANDS[args.command](project, args)
        log_stage_timing(args.command, time.time() - started)
        return status
    except ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
