"""
Two PUFs, one set of challenges
===============================

An eavesdropper often sees the same challenges sent to several devices.
The multi-gate model trains one gate, tower and head per device on top of
a shared pool of experts, so one run models every device at once.

Runs in a few minutes on one core.
"""

import numpy as np

from pufexperts.dataset import generate_crps, split_counts
from pufexperts.mmope import MmopeConfig, train_mmope
from pufexperts.mope import MopeConfig, train_mope
from pufexperts.puf import parse_spec

# Two independent 3-XOR PUFs queried with identical challenges.
devices = [parse_spec("xor:3", 64, seed=s) for s in (11, 12)]
crps = generate_crps(devices, challenge_seed=3, count=34_000)
print("response columns:", crps.tasks)
print("devices agree on %.1f%% of challenges" % (100 * np.mean(crps.responses[:, 0] == crps.responses[:, 1])))

train, test = split_counts(crps, 24_000, 10_000, seed=4)

cfg = MmopeConfig()
print("experts for %d tasks: %d" % (crps.tasks, MmopeConfig(tasks=crps.tasks).expert_count))

net, reports = train_mmope(train, cfg, test)
for r in reports:
    print("device %d: %.1f%%" % (r.task, 100 * r.accuracy))
joint = reports[0].wall_time

##############################################################################
# The same budget spent on one device alone, for the time comparison.

_, single = train_mope(train.column(0), MopeConfig(), test.column(0))
print("single-task run: %.1f%% in %.0fs; two-task run: %.0fs" % (100 * single.accuracy, single.wall_time, joint))
