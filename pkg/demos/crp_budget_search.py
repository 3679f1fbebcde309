"""
How many CRPs does an attack need?
==================================

For a 128-bit identifier, guessing with per-bit accuracy p collides with
probability p**128.  That sets the bar an attack has to clear before it is
a threat, and the budget search then finds the smallest training set that
clears it on every one of ``m`` fresh PUF instances.
"""

from pufexperts.metrics import collision_probability, crp_search, viability_threshold
from pufexperts.puf import parse_spec

for p in (0.6, 0.7, 0.9):
    print("p=%.1f: full 128-bit collision %.2e" % (p, collision_probability(p, 128)))

for bits in (32, 64, 128):
    print("%3d-bit ID: attack must reach %.3f per bit" % (bits, viability_threshold(bits)))

##############################################################################
# Search the budget for a plain arbiter PUF.  Failing levels double the
# count; passing levels bisect back toward the last failure.

result = crp_search(parse_spec("apuf", 64), "mope", start=250, target=0.95, m=2, n_test=5000)
print(result.to_markdown())
print("smallest passing budget:", result.minimal_count)
