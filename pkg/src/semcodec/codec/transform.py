from __future__ import annotations

import numpy as np

from .types import BLOCK_SIZE


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0, :] = np.sqrt(1.0 / n)
    return m


DCT8 = _dct_matrix(BLOCK_SIZE)
DCT8_T = np.ascontiguousarray(DCT8.T)


def _zigzag(n: int) -> np.ndarray:
    order = sorted(
        ((r, c) for r in range(n) for c in range(n)),
        key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]),
    )
    return np.array([r * n + c for r, c in order], dtype=np.int64)


ZIGZAG = _zigzag(BLOCK_SIZE)
INV_ZIGZAG = np.argsort(ZIGZAG)


def fdct(blocks: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a stack of (n, 8, 8) blocks."""
    return DCT8 @ blocks @ DCT8_T


def idct(coeffs: np.ndarray) -> np.ndarray:
    return DCT8_T @ coeffs @ DCT8


def quantize(coeffs: np.ndarray, step: np.ndarray, rounding: float) -> np.ndarray:
    """Dead-zone scalar quantizer; ``step`` broadcasts per block as (n, 1, 1)."""
    mag = np.floor(np.abs(coeffs) / step + rounding)
    return (np.sign(coeffs) * mag).astype(np.int64)


def dequantize(levels: np.ndarray, step: np.ndarray) -> np.ndarray:
    return levels * step
