#config.py - toolchain defaults. Project files in profiles/ override any of these keys.

# Switch domain (4-port switch, uplink port 1)
num_ports = 4
uplink_port = 1
mto = 5
mlt_size = 4
time_bound = 8
haddr_prefix = '02:00:00:00:00'
mac_universe = ['ff:ff:ff:ff:ff:ff', '04:0c:ce:d2:08:6c', '7c:d1:c3:e8:a4:67', '00:1b:21:3a:4f:10']
proto_tags = ['arpreq', 'arpreply', 'data']

# Satisfiability oracle
solver_backend = 'internal'
solver_path = 'z3'
solver_args = ['-in', '-smt2']
solver_timeout = 10
solver_retries = 2
solver_retry_delay = 0.5
oracle_budget = 1000000

# Formula normalization
dnf_max_disjuncts = 4096

# Branch synthesis
objective = 'expected-time'
default_probability = '1/2'
support_threshold = 4
min_size_atom_limit = 10

# Predicate classification, first match wins.
# ?0..?9 match any term, ?i matches the bound index of a quantifier,
# a bare ?name as the whole pattern matches a propositional letter.
classification_rules = [
    ('(subset loc egress)', 'wrapper'),
    ('(= mlt x.mlt)', 'wrapper'),
    ('(in (egr self) loc)', 'enforceable'),
    ('(= f x.f)', 'enforceable'),
    ('(exists ?i (= mlt (update x.mlt ?i ?0 ?1 ?2)))', 'enforceable'),
    ('(ucast ?0)', 'checkable'),
    ('(bcast ?0)', 'checkable'),
    ('(arp-reqrx ?0 ?1)', 'checkable'),
    ('(= ?0 ?1)', 'checkable'),
    ('(<= ?0 ?1)', 'checkable'),
    ('(exists ?i ?0)', 'checkable'),
    ('(forall ?i ?0)', 'checkable'),
    ('?letter', 'checkable'),
]

# Simulation and trace generation
broadcast_ratio = '1/4'
arp_ratio = '1/3'
workload_gap = 2

# Logging
loglevel = 'INFO'
logfile = './nfcompile.log'
log_dir = './logs'
log_max_bytes = 1000000
log_backup_count = 1
