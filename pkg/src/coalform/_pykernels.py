"""Pure numpy fallback for the blocking-coalition scan.

A coalition ``c`` blocks a structure ``s`` when, for at least one mechanism
layer ``m``, every member ``i`` of ``c`` has ``util[m, c, i] > cur[s, i] + eps``.
Coalitions are scanned in table order and the first blocking index is
reported (``-1`` if none).
"""
from __future__ import annotations

import numpy as np

_CHUNK = 256


def _member_mask(members: np.ndarray, n: int) -> np.ndarray:
    mask = np.zeros((members.shape[0], n), dtype=bool)
    rows, cols = np.nonzero(members >= 0)
    mask[rows, members[rows, cols]] = True
    return mask


def scan_blocking(members, sizes, util, cur, eps):
    util = np.asarray(util, dtype=float)
    cur = np.asarray(cur, dtype=float)
    n = cur.shape[1]
    outside = ~_member_mask(np.asarray(members), n)
    out = np.full(cur.shape[0], -1, dtype=np.int64)
    for start in range(0, cur.shape[0], _CHUNK):
        block = cur[start:start + _CHUNK]
        # (S, M, C, n) -> does every member strictly gain?
        gains = util[None, :, :, :] > block[:, None, None, :] + eps
        hit = np.all(gains | outside[None, None, :, :], axis=3).any(axis=1)
        any_hit = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        out[start:start + _CHUNK] = np.where(any_hit, first, -1)
    return out


def first_blocking(members, sizes, util, cur, eps):
    return int(scan_blocking(members, sizes, util, np.asarray(cur, dtype=float)[None, :], eps)[0])
