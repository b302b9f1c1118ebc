"""Counter-addressable random streams.

Every random draw in the package is a U[0, 1) double taken from a Philox
stream keyed by ``(seed, member)``.  Step ``s`` of a member whose noise model
consumes ``q`` uniforms per step reads the uniforms at offsets
``s*q .. s*q + q - 1`` of that stream, so the value of any draw depends only
on ``(seed, member, step)`` and never on how work is split across calls or
threads.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError

_MASK64 = (1 << 64) - 1
# numpy's Generator.random consumes one 64-bit word per double and Philox
# emits four words per counter increment
_WORDS_PER_BLOCK = 4


def check_seed(seed):
    """Validate a master seed and return it as a Python int."""
    try:
        value = int(seed)
    except (TypeError, ValueError):
        raise DomainError(f"seed must be an integer, got {seed!r}") from None
    if value != seed or not 0 <= value <= _MASK64:
        raise DomainError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return value


def stream(seed, member=0, offset=0):
    """Generator for stream ``(seed, member)`` positioned at uniform ``offset``."""
    seed = check_seed(seed)
    member = int(member)
    if not 0 <= member <= _MASK64:
        raise DomainError(f"member index out of range: {member}")
    bitgen = np.random.Philox(key=(member << 64) | seed)
    blocks, rem = divmod(int(offset), _WORDS_PER_BLOCK)
    if blocks:
        bitgen.advance(blocks)
    gen = np.random.Generator(bitgen)
    if rem:
        gen.random(rem)
    return gen


def uniforms(seed, member, offset, count):
    """``count`` uniforms of stream ``(seed, member)`` starting at ``offset``."""
    return stream(seed, member, offset).random(int(count))


class MemberStreams:
    """Persistent per-member generators for members ``lo .. hi - 1``.

    ``draw(steps, q)`` returns an array of shape ``(hi - lo, steps, q)``
    holding the uniforms of the next ``steps`` steps of every member.
    """

    def __init__(self, seed, lo, hi, step, q):
        self.seed = check_seed(seed)
        self.lo = int(lo)
        self.hi = int(hi)
        self.q = int(q)
        self.step = int(step)
        self._gens = [stream(self.seed, j, self.step * self.q)
                      for j in range(self.lo, self.hi)]

    def draw(self, steps):
        out = np.empty((self.hi - self.lo, int(steps), self.q))
        for i, gen in enumerate(self._gens):
            out[i] = gen.random((int(steps), self.q))
        self.step += int(steps)
        return out


def chunk_generator(seed, chunk):
    """Generator for Monte Carlo chunk ``chunk`` under master ``seed``.

    Estimators split their sample budget into fixed-size chunks, so results
    depend on the seed and sample count only.
    """
    return stream(seed, chunk, 0)


def as_generator(rng):
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else rng)
