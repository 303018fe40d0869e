"""Slow reference implementations used as test oracles."""

import math

import numpy as np


def flood_fill_count(mask, connectivity=8):
    mask = np.asarray(mask) > 0
    h, w = mask.shape
    seen = np.zeros_like(mask)
    if connectivity == 8:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    count = 0
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            count += 1
            stack = [(r, c)]
            seen[r, c] = True
            while stack:
                y, x = stack.pop()
                for dy, dx in steps:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return count


def frechet_by_enumeration(a, b):
    """Minimum over every monotone coupling of the maximum coupled distance."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, m = len(a), len(b)
    best = math.inf

    def walk(i, j, worst):
        nonlocal best
        worst = max(worst, float(np.hypot(*(a[i] - b[j]))))
        if worst >= best:
            return
        if i == n - 1 and j == m - 1:
            best = worst
            return
        if i + 1 < n:
            walk(i + 1, j, worst)
        if j + 1 < m:
            walk(i, j + 1, worst)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, worst)

    walk(0, 0, 0.0)
    return best


def longest_simple_path(pixels):
    """Exhaustive DFS over simple paths in the 8-neighbour graph of a small pixel set."""
    pixels = set(pixels)
    best = []

    def extend(path, visited):
        nonlocal best
        if len(path) > len(best):
            best = list(path)
        r, c = path[-1]
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nxt = (r + dr, c + dc)
                if nxt != (r, c) and nxt in pixels and nxt not in visited:
                    visited.add(nxt)
                    path.append(nxt)
                    extend(path, visited)
                    path.pop()
                    visited.remove(nxt)

    for start in pixels:
        extend([start], {start})
    return best
