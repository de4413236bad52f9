from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lesionseg.errors import ShapeError
from lesionseg.imaging import BinaryMask
from lesionseg.metrics import jaccard
from lesionseg.morphology import closing, dilate, erode, kernel_offsets
from oracles import erode_bruteforce, jaccard_bruteforce


def test_kernel_offsets():
    assert kernel_offsets(1) == (0, 0)
    assert kernel_offsets(3) == (1, 1)
    assert kernel_offsets(10) == (4, 5)
    with pytest.raises(ValueError):
        kernel_offsets(0)


def test_erode_block():
    bits = np.zeros((30, 30), np.uint8)
    bits[7:19, 9:21] = 1
    out = erode(BinaryMask(bits), 10, 10).bits
    expected = np.zeros_like(bits)
    expected[11:14, 13:16] = 1
    assert np.array_equal(out, expected)


def test_erode_trivial_cases(rng):
    assert erode(BinaryMask.zeros(8, 8), 3, 3).area == 0
    m = BinaryMask((rng.random((9, 11)) < 0.5).astype(np.uint8))
    assert erode(m, 1, 1) == m


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.uint8, st.tuples(st.integers(1, 16), st.integers(1, 16)), elements=st.integers(0, 1)),
    st.integers(1, 6),
    st.integers(1, 6),
)
def test_erode_matches_oracle(bits, kw, kh):
    assert np.array_equal(erode(BinaryMask(bits), kw, kh).bits, erode_bruteforce(bits, kw, kh))


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.uint8, st.tuples(st.integers(1, 14), st.integers(1, 14)), elements=st.integers(0, 1)),
    st.integers(1, 5),
)
def test_dilate_erode_duality(bits, k):
    # dilation with the reflected window is the complement of eroding the complement,
    # when out-of-image pixels count as foreground for the complement
    m = BinaryMask(bits)
    d = dilate(m, k, k).bits
    pad = k
    comp = np.pad(1 - bits, pad, constant_values=1)
    ref = 1 - erode_bruteforce(comp[:, ::-1][::-1], k, k)[::-1, ::-1][pad:-pad, pad:-pad]
    assert np.array_equal(d, ref)
    # closing is extensive wherever the whole window lies inside the image
    a, b = kernel_offsets(k)
    h, w = bits.shape
    inner = (slice(a, h - b), slice(a, w - b))
    assert np.all(closing(m, k, k).bits[inner] >= bits[inner])


def test_jaccard_values():
    a = np.zeros((4, 4), np.uint8)
    a.ravel()[:6] = 1
    b = np.zeros((4, 4), np.uint8)
    b.ravel()[4:8] = 1
    assert jaccard(BinaryMask(a), BinaryMask(b)) == 0.25
    assert jaccard(BinaryMask(a), BinaryMask(a)) == 1.0
    assert jaccard(BinaryMask(a), BinaryMask(1 - a)) == 0.0
    assert jaccard(BinaryMask.zeros(3, 3), BinaryMask.zeros(3, 3)) == 1.0
    with pytest.raises(ShapeError):
        jaccard(BinaryMask.zeros(3, 3), BinaryMask.zeros(3, 4))


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 12).flatmap(
        lambda n: st.tuples(
            arrays(np.uint8, (n, n), elements=st.integers(0, 1)),
            arrays(np.uint8, (n, n), elements=st.integers(0, 1)),
        )
    )
)
def test_jaccard_matches_oracle_and_is_symmetric(pair):
    a, b = pair
    j = jaccard(BinaryMask(a), BinaryMask(b))
    assert j == jaccard_bruteforce(a, b)
    assert j == jaccard(BinaryMask(b), BinaryMask(a))
    assert 0.0 <= j <= 1.0
