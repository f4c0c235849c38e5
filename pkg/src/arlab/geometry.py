"""Piecewise-linear geometry of bias-free ReLU networks.

Along a segment ``x + t (x' - x)``, every pre-activation is affine in ``t``
inside a linear region, so the breakpoints where some unit switches can be
found exactly by solving one linear equation per unit and region.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, RegionExplosionError
from .losses import margin_operator
from .model import ActivationPattern, Network, forward, logit_difference_gradient, logits_batch
from .numerics import as_matrix, singular_values

MAX_BREAKPOINTS = 100_000
MERGE_TOL = 1e-12


@dataclass
class SegmentDecomposition:
    breakpoints: list[tuple[float, float]]
    patterns: list[ActivationPattern]
    directions: list[np.ndarray]   # prod_i W_i^{q_j} (x' - x), one per segment
    per_segment_norm: np.ndarray
    layer: int
    net: Network

    @property
    def n_segments(self) -> int:
        return len(self.breakpoints)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e - s for s, e in self.breakpoints])

    @property
    def total(self) -> float:
        """Sum over segments of ``(e_j - s_j) * ||prod_i W_i^{q_j} (x' - x)||``.

        This is the length of the image path, so it is at least
        ``||I_l(x) - I_l(x')||`` and equal to it only when the image is a
        straight, non-reversing path.
        """
        return float(np.dot(self.lengths, self.per_segment_norm))

    @property
    def chord(self) -> float:
        """``||sum_j (e_j - s_j) prod_i W_i^{q_j} (x' - x)||``, which equals ``||I_l(x') - I_l(x)||``."""
        if not self.directions:
            return 0.0
        return float(np.linalg.norm(np.tensordot(self.lengths, np.stack(self.directions), axes=1)))

    def induced(self, j: int) -> list[np.ndarray]:
        """The matrices ``W_i^{q_j}``, i = 1..layer, of segment ``j``."""
        taus = self.patterns[j].taus
        out = []
        for i in range(self.layer):
            w = self.net.weights[i]
            out.append(w * taus[i][:, None] if i < len(taus) else w.copy())
        return out


def _feature(net: Network, x: np.ndarray, layer: int) -> np.ndarray:
    h = x
    for i in range(layer):
        h = net.weights[i] @ h
        if i < net.depth - 1:
            h = np.maximum(h, 0.0)
    return h


def trace_segment(net: Network, x, x2, layer: int, max_breakpoints: int = MAX_BREAKPOINTS,
                  merge_tol: float = MERGE_TOL) -> SegmentDecomposition:
    """Exact region decomposition of the segment from ``x`` to ``x2`` for layers 1..layer.

    ``layer`` may equal the network depth, in which case the last (linear)
    layer is applied without masking.
    """
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != (net.input_dim,) or x2.shape != (net.input_dim,):
        raise InvalidInputError("segment endpoints must match the network input dimension")
    if not 1 <= layer <= net.depth:
        raise InvalidInputError(f"layer must be in 1..{net.depth}, got {layer}")
    d = x2 - x
    hidden = min(layer, net.depth - 1)
    breaks, patterns, dirs, norms = [], [], [], []
    t0 = 0.0
    while t0 < 1.0:
        h, g = x, d
        taus, t_next = [], 1.0
        for i in range(layer):
            za = net.weights[i] @ h
            zb = net.weights[i] @ g
            if i < hidden:
                v = za + t0 * zb
                tol = 1e-12 * (np.abs(za) + np.abs(t0 * zb))
                on = (v > tol) | ((np.abs(v) <= tol) & (zb > 0))
                nz = zb != 0
                roots = -za[nz] / zb[nz]
                roots = roots[roots > t0 + merge_tol]
                if roots.size:
                    t_next = min(t_next, float(roots.min()))
                taus.append(on.astype(np.int8))
                h, g = za * on, zb * on
            else:
                h, g = za, zb
        breaks.append((t0, t_next))
        patterns.append(ActivationPattern(taus))
        dirs.append(g)
        norms.append(float(np.linalg.norm(g)))
        if len(breaks) > max_breakpoints:
            raise RegionExplosionError(f"more than {max_breakpoints} breakpoints along the segment")
        t0 = t_next
    return SegmentDecomposition(breaks, patterns, dirs, np.array(norms), layer, net)


class Lemma1Check(NamedTuple):
    lhs: float            # ||I_l(x) - I_l(x')|| from two forward passes
    rhs: float            # sum_j (e_j - s_j) ||prod W^{q_j} (x - x')||
    rel_err: float
    chord: float          # ||sum_j (e_j - s_j) prod W^{q_j} (x - x')||
    chord_rel_err: float
    n_segments: int


def verify_lemma1(net: Network, x, x2, layer: int) -> Lemma1Check:
    dec = trace_segment(net, x, x2, layer)
    lhs = float(np.linalg.norm(_feature(net, np.asarray(x, float), layer)
                               - _feature(net, np.asarray(x2, float), layer)))
    rhs, chord = dec.total, dec.chord
    return Lemma1Check(lhs, rhs, abs(lhs - rhs) / (1 + lhs), chord, abs(lhs - chord) / (1 + lhs),
                       dec.n_segments)


# -- Cauchy interlacing -----------------------------------------------------

@dataclass
class InterlacingReport:
    ok: bool
    max_violation: float
    steps: list[tuple[np.ndarray, np.ndarray]]  # (sigma before, sigma after) per deleted row


def _interlaces(sa: np.ndarray, sb: np.ndarray, n: int, tol: float) -> float:
    a = np.zeros(n + 1)
    b = np.zeros(n + 1)
    a[:sa.size] = sa
    b[:sb.size] = sb
    upper = b[:n] - a[:n]          # need sigma_k(B) <= sigma_k(A)
    lower = a[1:n + 1] - b[:n]     # need sigma_k(B) >= sigma_{k+1}(A)
    return float(max(upper.max(initial=0.0), lower.max(initial=0.0)))


def interlacing_check(w, deleted_rows, tol: float = 1e-9) -> tuple[bool, InterlacingReport]:
    """Check singular-value interlacing for each single-row deletion in turn."""
    a = as_matrix(w)
    rows = sorted(set(int(r) for r in deleted_rows))
    if any(r < 0 or r >= a.shape[0] for r in rows):
        raise InvalidInputError("deleted row index out of range")
    if len(rows) >= a.shape[0]:
        raise InvalidInputError("cannot delete every row")
    n = a.shape[1]
    keep = list(range(a.shape[0]))
    sa = singular_values(a)
    worst, steps = 0.0, []
    if not rows:
        steps.append((sa, sa.copy()))
    for r in rows:
        keep.remove(r)
        sb = singular_values(a[keep])
        worst = max(worst, _interlaces(sa, sb, n, tol))
        steps.append((sa, sb))
        sa = sb
    ok = worst <= tol
    return ok, InterlacingReport(ok, worst, steps)


# -- instance-space margin --------------------------------------------------

@dataclass
class BoundaryProbe:
    x: np.ndarray
    v: float
    x_boundary: np.ndarray
    converged: bool
    label: int
    iterations: int = 0


def _pred_margin(net: Network, x: np.ndarray, label: int) -> float:
    return margin_operator(logits_batch(net, x)[0], label)


def boundary_distance(net: Network, x, max_iter: int = 200, overshoot: float = 0.02,
                      tol: float = 1e-4, radius_cap: float | None = None) -> BoundaryProbe:
    """Upper estimate of the l2 distance from ``x`` to the decision boundary.

    Linearised minimal steps towards the nearest linearised class boundary until the
    predicted label flips, then false-position search on ``[x, x_flip]``
    for a point whose margin is within ``tol * (1 + |M(x)|)`` of zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise InvalidInputError("input dimension mismatch")
    logits = forward(net, x).logits
    label = int(np.argmax(logits))
    m0 = margin_operator(logits, label)
    if m0 <= 0:
        return BoundaryProbe(x, 0.0, x.copy(), True, label)
    cap = radius_cap if radius_cap is not None else 10 * np.linalg.norm(x) + 1
    stop = tol * (1 + abs(m0))

    def fail(xt, it):
        return BoundaryProbe(x, float("inf"), xt, False, label, it)

    xt = x.copy()
    flipped = False
    it = 0
    for it in range(1, max_iter + 1):
        s = logits_batch(net, xt)[0]
        if margin_operator(s, label) <= 0:
            flipped = True
            break
        # nearest linearised class boundary, as in DeepFool
        best = None
        for b in range(net.output_dim):
            if b == label:
                continue
            f, grad = logit_difference_gradient(net, xt, label, b)
            gn = float(np.linalg.norm(grad))
            if gn > 0 and (best is None or f / gn < best[0]):
                best = (f / gn, f, grad, gn)
        if best is None:
            return fail(xt, it)
        _, f, grad, gn = best
        xt = xt - (1 + overshoot) * (f / gn ** 2) * grad
        if np.linalg.norm(xt - x) > cap:
            return fail(xt, it)
    if not flipped:
        if _pred_margin(net, xt, label) > 0:
            return fail(xt, it)

    # Illinois false position on t in [0, 1], M(0) > 0 >= M(1).
    direction = xt - x
    lo, hi = 0.0, 1.0
    mlo, mhi = m0, _pred_margin(net, xt, label)
    if abs(mhi) <= stop:
        return BoundaryProbe(x, float(np.linalg.norm(direction)), xt, True, label, it)
    side = 0
    for _ in range(500):
        t = (lo * mhi - hi * mlo) / (mhi - mlo)
        if not lo < t < hi:
            t = 0.5 * (lo + hi)
        mt = _pred_margin(net, x + t * direction, label)
        if abs(mt) <= stop:
            xb = x + t * direction
            return BoundaryProbe(x, float(np.linalg.norm(xb - x)), xb, True, label, it)
        if mt > 0:
            lo, mlo = t, mt
            if side == 1:
                mhi *= 0.5
            side = 1
        else:
            hi, mhi = t, mt
            if side == -1:
                mlo *= 0.5
            side = -1
    return fail(x + hi * direction, it)


@dataclass
class MonotonyReport:
    violations: int
    max_increase: float
    ts: np.ndarray
    margins: np.ndarray


def check_monotony(net: Network, x, probe: BoundaryProbe, grid: int, tol: float = 1e-6) -> MonotonyReport:
    """Margin samples on ``x -> x_boundary``; counts increases larger than ``tol``."""
    if grid < 1:
        raise InvalidInputError("grid must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, grid + 1)
    pts = x[None, :] + ts[:, None] * (probe.x_boundary - x)[None, :]
    logits = logits_batch(net, pts)
    m = np.array([margin_operator(s, probe.label) for s in logits])
    inc = np.diff(m)
    bad = inc > tol
    return MonotonyReport(int(bad.sum()), float(inc.max(initial=0.0)) if bad.any() else 0.0, ts, m)
