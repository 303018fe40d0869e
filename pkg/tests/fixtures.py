"""Small hand-built masks shared by several test modules."""

import numpy as np


def ring(size=48, top=8, left=8, side=32):
    """One-pixel-wide closed square outline."""
    m = np.zeros((size, size), np.uint8)
    bottom, right = top + side - 1, left + side - 1
    m[top, left:right + 1] = 1
    m[bottom, left:right + 1] = 1
    m[top:bottom + 1, left] = 1
    m[top:bottom + 1, right] = 1
    return m


def broken_ring_pair():
    """A closed outline and the same outline with a 3-pixel gap.

    Both have exactly one component, so whole-image component counts agree,
    but a window straddling the gap sees two pieces in one and one in the other.
    """
    closed = ring()
    broken = closed.copy()
    broken[8, 22:25] = 0
    return broken, closed


def three_blobs():
    m = np.zeros((8, 8), np.uint8)
    m[0:2, 0:3] = 1
    m[2, 2] = 1
    m[5:8, 1] = 1
    m[6, 2] = 1
    m[1:4, 6:8] = 1
    return m
