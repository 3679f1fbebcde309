import numpy as np


def all_challenges(n):
    """Every n-bit challenge; row i holds the bits of i, lowest bit first."""
    idx = np.arange(2 ** n)[:, None]
    return ((idx >> np.arange(n)) & 1).astype(np.uint8)
