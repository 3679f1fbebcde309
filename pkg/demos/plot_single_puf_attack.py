"""
Modelling an XOR arbiter PUF without knowing it is one
======================================================

We simulate a 2-XOR arbiter PUF, harvest challenge-response pairs and
train the mixture-of-experts model on them.  The attacker never tells the
model how many chains the PUF has.  For contrast, the logistic-regression
baseline is told ``k`` and still needs to be.

Runs in about a minute on one core.
"""

import numpy as np

from pufexperts.attacks import run_attack
from pufexperts.dataset import generate_crps, split_counts
from pufexperts.puf import instantiate, parse_spec

# A 64-stage 2-XOR PUF; the seed fixes its manufacturing variation.
spec = parse_spec("xor:2", 64, seed=7)
puf = instantiate(spec)
print(spec.label(), "with", len(puf.chains), "chains")

# Responses are close to balanced for a fresh instance.
crps = generate_crps([spec], challenge_seed=1, count=18_000)
print("fraction of 1 responses: %.3f" % crps.responses.mean())

# The model sees parity features x_i = prod_{j>=i} (1 - 2 c_j), not raw bits.
print("first challenge:", crps.challenges[0, :8], "... features:", crps.features()[0, :8], "...")

train, test = split_counts(crps, 8000, 10_000, seed=2)

##############################################################################
# Structure-blind attack: default configuration, no ``k``.

net, report = run_attack("mope", train, test)
print("MoPE: %.1f%% on %d held-out CRPs after %d epochs (%.1fs)"
      % (100 * report.accuracy, report.n_test, report.epochs, report.wall_time))

# Mean gate weight per expert over the training set.  Several experts share
# the work; none is switched off entirely by the sparse softmax here.
print("gate means:", np.round(report.gate_means, 3))

##############################################################################
# The product-of-linear-models baseline needs ``k``; give it the right one.

_, lr = run_attack("lr", train, test, k=2)
print("LR (k=2): %.1f%%" % (100 * lr.accuracy))
