import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chaotic_gd.errors import DomainError
from chaotic_gd.rng import MemberStreams, as_generator, check_seed, stream, uniforms


@pytest.mark.parametrize("bad", [-1, 2 ** 64, 1.5, "x", None])
def test_check_seed_rejects(bad):
    with pytest.raises(DomainError):
        check_seed(bad)


def test_check_seed_accepts_range_ends():
    assert check_seed(0) == 0
    assert check_seed(2 ** 64 - 1) == 2 ** 64 - 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 1000), st.integers(0, 5000),
       st.integers(1, 20))
def test_offset_addressing_matches_sequential_read(seed, member, offset, count):
    full = stream(seed, member).random(offset + count)
    assert np.array_equal(uniforms(seed, member, offset, count), full[offset:])


def test_members_are_distinct_streams():
    a = uniforms(7, 0, 0, 8)
    b = uniforms(7, 1, 0, 8)
    c = uniforms(8, 0, 0, 8)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_member_streams_split_invariance():
    q = 2
    whole = MemberStreams(3, 0, 5, 0, q).draw(10)
    part = MemberStreams(3, 2, 4, 4, q).draw(6)
    assert np.array_equal(part, whole[2:4, 4:])
    ms = MemberStreams(3, 0, 5, 0, q)
    head = ms.draw(4)
    tail = ms.draw(6)
    assert np.array_equal(np.concatenate([head, tail], axis=1), whole)


def test_member_stream_layout_matches_uniforms():
    out = MemberStreams(11, 3, 4, 2, 3).draw(2)
    assert np.array_equal(out[0].ravel(), uniforms(11, 3, 6, 6))


def test_as_generator():
    g = np.random.default_rng(0)
    assert as_generator(g) is g
    assert np.array_equal(as_generator(5).random(3), uniforms(5, 0, 0, 3))
