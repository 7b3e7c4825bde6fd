"""Deterministic seed derivation.

Sequential seeds (``seed``, ``seed + 1``, ...) fed straight into a generator
produce correlated streams for some generators, so every per-sample or
per-fold seed is passed through one round of the SplitMix64 finaliser.
"""

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance by the golden gamma and mix."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Seed for item ``index`` of a collection rooted at ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return splitmix64((seed + index) & MASK64)
