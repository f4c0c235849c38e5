"""Dense linear algebra and seeded randomness.

Everything here works on float64 numpy arrays. The SVD is a one-sided
(Hestenes) Jacobi method with a round-robin pair ordering so that each
round rotates ``n // 2`` disjoint column pairs at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError

JACOBI_TOL = 1e-12
MAX_SWEEPS = 80


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray      # (rows, k)
    sigma: np.ndarray  # (k,), descending
    vt: np.ndarray     # (k, cols)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every (p, q), p < q, exactly once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: np.ndarray, bad: np.ndarray) -> None:
    """Replace columns flagged in ``bad`` with unit vectors orthogonal to the rest (in place)."""
    rows = u.shape[0]
    good = [j for j in range(u.shape[1]) if not bad[j]]
    for j in np.flatnonzero(bad):
        for e in range(rows):
            cand = np.zeros(rows)
            cand[e] = 1.0
            for _ in range(2):
                for g in good:
                    cand -= (u[:, g] @ cand) * u[:, g]
            nrm = np.linalg.norm(cand)
            if nrm > 1e-6:
                u[:, j] = cand / nrm
                good.append(j)
                break


def svd(m) -> SvdResult:
    """Thin SVD ``m = U diag(sigma) V^T`` with ``k = min(rows, cols)`` singular values."""
    a = as_matrix(m)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    rows, n = a.shape
    u = a.copy()
    v = np.eye(n)
    rounds = _round_robin(n) if n > 1 else []
    # columns shrunk to rounding noise count as orthogonal to everything
    floor = (n * np.finfo(float).eps) ** 2 * float(np.sum(a * a))
    residual = 0.0
    for _ in range(MAX_SWEEPS):
        residual = 0.0
        rotated = False
        for p, q in rounds:
            up, uq = u[:, p], u[:, q]
            alpha = np.einsum("ij,ij->j", up, up)
            beta = np.einsum("ij,ij->j", uq, uq)
            gamma = np.einsum("ij,ij->j", up, uq)
            scale = np.sqrt(alpha * beta)
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.where((scale > 0) & (np.minimum(alpha, beta) > floor), np.abs(gamma) / scale, 0.0)
            residual = max(residual, float(rel.max(initial=0.0)))
            act = rel > JACOBI_TOL
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            up, uq = up[:, act], uq[:, act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            u[:, p] = c * up - s * uq
            u[:, q] = s * up + c * uq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise NumericalError(
            f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps "
            f"(max relative off-diagonal {residual:.3e})",
            residual=residual,
        )

    sigma = np.linalg.norm(u, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = u[:, order]
    v = v[:, order]
    smax = sigma[0] if sigma.size else 0.0
    bad = sigma <= max(smax, 1e-300) * n * np.finfo(float).eps
    safe = np.where(bad, 1.0, sigma)
    u = u / safe
    if bad.any():
        _complete_basis(u, bad)
    if transposed:
        return SvdResult(u=v, sigma=sigma, vt=u.T)
    return SvdResult(u=u, sigma=sigma, vt=v.T)


def singular_values(m) -> np.ndarray:
    return svd(m).sigma


def spectral_norm(m) -> float:
    return float(svd(m).sigma[0])


class SeededRng:
    """Seeded random stream backed by numpy's Philox counter-based generator.

    ``child(*keys)`` derives an independent stream from the original seed and
    the keys only, so forks do not depend on how much of the parent stream was
    consumed.
    """

    def __init__(self, seed: int, _keys: tuple = ()):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in _keys)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.keys)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, self.keys + tuple(keys))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        if not lo < hi:
            raise InvalidInputError(f"need lo < hi, got [{lo}, {hi})")
        return self.generator.uniform(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, lo: int, hi: int, size=None):
        return self.generator.integers(lo, hi, size)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, keys={self.keys})"


def rng_normal(rng: SeededRng, n: int) -> np.ndarray:
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    return rng.normal(n)


def rng_uniform(rng: SeededRng, lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    return rng.uniform(lo, hi, n)
