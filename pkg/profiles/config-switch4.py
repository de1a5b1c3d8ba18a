#config-switch4.py - 4-port learning switch, uplink at port 1; paths are relative to this file

components = ['../components/H.sfa', '../components/B.sfa', '../components/I.sfa', '../components/M.sfa']
table = '../tables/dpdk.dt'
profile = 'switch4.prof'
workload = '../workloads/arp.wl'
output_dir = '../build'
objective = 'expected-time'
seed = 7
solver = 'internal'

num_ports = 4
uplink_port = 1
mto = 5
mlt_size = 4
time_bound = 8
haddr_prefix = '02:00:00:00:00'
mac_universe = ['ff:ff:ff:ff:ff:ff', '04:0c:ce:d2:08:6c', '7c:d1:c3:e8:a4:67', '00:1b:21:3a:4f:10']
proto_tags = ['arpreq', 'arpreply', 'data']
