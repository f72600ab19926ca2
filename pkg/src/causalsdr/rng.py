"""Reproducible random streams with explicit splitting.

All randomness in the package flows through :class:`RngStream`, a thin wrapper
around the Philox counter-based generator.  A stream is identified by a 64-bit
root seed plus a path of labels; the 128-bit Philox key is derived by hashing
``seed || path`` with SHA-256, so child streams are independent of the order
in which they are created and of anything drawn from the parent.

Draw conventions (kept deliberately simple so results can be reproduced from
the raw uniform stream):

* uniforms come straight from the generator's ``random()``,
* standard normals are the inverse normal CDF of a uniform (no ziggurat),
* chi-square with 2 df is ``-2*log(1-u)``,
* Bernoulli(p) is ``u < p``,
* multivariate normals are ``mean + z @ chol(cov).T`` with row-major ``z``.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

_U_EPS = 2.0 ** -53  # keep uniforms strictly inside (0, 1) for inverse CDFs


def derive_seed(*parts: int | str) -> int:
    """Hash an arbitrary label path into a stable 64-bit seed."""
    return int.from_bytes(_digest(parts)[:8], "little")


def _digest(parts: tuple[int | str, ...]) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(int(part).to_bytes(16, "little", signed=True))
        else:
            h.update(b"s")
            h.update(str(part).encode("utf-8"))
            h.update(b"\x00")
    return h.digest()


class RngStream:
    """A named, splittable random stream.

    Parameters
    ----------
    seed : int
        Root seed (any Python int; reduced to 64 bits by hashing).
    path : ints or strings
        Labels identifying this stream below the root.
    """

    def __init__(self, seed: int, *path: int | str):
        self.seed = int(seed)
        self.path = tuple(path)
        key = np.frombuffer(_digest((self.seed, *self.path))[:16], dtype=np.uint64)
        self._gen = Generator(Philox(key=key))

    def child(self, *path: int | str) -> "RngStream":
        """Independent stream addressed by extending this stream's path.

        Calling ``child`` with the same labels always yields a stream that
        replays the same sequence, regardless of what has been drawn here.
        """
        return RngStream(self.seed, *self.path, *path)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        u = np.clip(self._gen.random(size), _U_EPS, 1.0 - _U_EPS)
        return ndtri(u)

    def chisq2(self, size=None) -> np.ndarray:
        # inverse CDF of chi-square with 2 df: F(x) = 1 - exp(-x/2)
        u = np.clip(self._gen.random(size), _U_EPS, 1.0 - _U_EPS)
        return -2.0 * np.log1p(-u)

    def bernoulli(self, p, size=None) -> np.ndarray:
        p = np.asarray(p)
        if size is None:
            size = p.shape
        return (self._gen.random(size) < p).astype(np.float64)

    def multivariate_normal(self, mean, cov, size: int) -> np.ndarray:
        """Rows are draws from N(mean, cov); mean may vary per row.

        ``mean`` is either a length-p vector shared by all rows or an
        (size, p) matrix.  Normals are consumed row-major.
        """
        cov = np.asarray(cov, dtype=np.float64)
        chol = np.linalg.cholesky(cov)
        z = self.normal((size, cov.shape[0]))
        return np.asarray(mean, dtype=np.float64) + z @ chol.T
