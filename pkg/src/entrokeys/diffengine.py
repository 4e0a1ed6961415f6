"""Closed-form gradients of the combined loss w.r.t. keypoint parameters.

Entropy maps are constants; the chain runs coordinates -> Gaussian fields ->
heatmaps -> aggregated mask -> losses, and status logits -> statuses -> mask
and status loss. The coverage schedule ``1 - me`` multiplying the status
term is held constant when differentiating.

Parameter layout is keypoint-major, ``x1, y1, l1, x2, y2, l2, ...``. When
gradients w.r.t. the previous frame are requested the vector is
``[previous (3K), current (3K)]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import math

import numba
import numpy as np

from .geometry import HeatmapParams, KeypointState, heatmap_area, logistic, pixel_grid
from .losses import STATIC_EPS, LossBreakdown, LossWeights

ABS_FLOOR = 1e-6


@dataclass
class GradientReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    flagged: np.ndarray
    max_rel_error: float
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def to_json(self) -> dict:
        return {
            "analytic": self.analytic.tolist(),
            "numeric": self.numeric.tolist(),
            "rel_error": self.rel_error.tolist(),
            "flagged": self.flagged.tolist(),
            "n_checked": int((~self.flagged).sum()),
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


@numba.njit(cache=True, nogil=True)
def _fused(Ht, Hp, Hc, xc, s, hp, xcp, paired, wrt_prev, sigma, tau, eta, kappa,
           c_me, c_mce, c_it, deficit, g_xy, g_s, g_xyp):
    """Single pass over pixels accumulating loss sums and parameter gradients.

    Coverage weights enter as ``c_me = lambda_me / sum(H_t)`` etc. Returns
    ``(sum(H_t M), sum(H_cond M), argmax of sum G, max of sum G)``.
    """
    n_rows, n_cols = Ht.shape
    K = xc.shape[0]
    inv2s2 = 0.5 / (sigma * sigma)
    inv_s2 = 1.0 / (sigma * sigma)
    G = np.empty(K)
    h = np.empty(K)
    lin = np.empty(K, dtype=np.bool_)
    deficit[:] = 0.0
    g_xy[:] = 0.0
    g_s[:] = 0.0
    g_xyp[:] = 0.0
    sum_hm = 0.0
    sum_cm = 0.0
    peak = 0
    peak_val = -1.0
    for r in range(n_rows):
        for c in range(n_cols):
            ht = Ht[r, c]
            A = 0.0
            S = 0.0
            for k in range(K):
                dx = c - xc[k, 0]
                dy = r - xc[k, 1]
                g = math.exp(-(dx * dx + dy * dy) * inv2s2)
                u = eta * (g - tau)
                G[k] = g
                lin[k] = u > 0.0 and u < 1.0
                h[k] = 0.0 if u <= 0.0 else (1.0 if u >= 1.0 else u)
                A += s[k] * h[k]
                S += g
            if S > peak_val:
                peak_val = S
                peak = r * n_cols + c
            hc = Hc[r, c]
            unsat = A < 1.0
            m = A if unsat else 1.0
            sum_hm += ht * m
            sum_cm += hc * m
            gA = -(c_me * ht + c_mce * hc) if unsat else 0.0
            hpix = Hp[r, c]
            for k in range(K):
                gh = s[k] * gA
                g_s[k] += gA * h[k]
                if paired:
                    hpk = hp[k, r, c]
                    rec = hpix * (1.0 - hpk) * (1.0 - h[k]) + ht * h[k] + kappa * hc * (1.0 - h[k])
                    if ht > rec:
                        deficit[k] += ht - rec
                        gh -= c_it * (ht - hpix * (1.0 - hpk) - kappa * hc)
                        if wrt_prev:
                            dxp = c - xcp[k, 0]
                            dyp = r - xcp[k, 1]
                            gp = math.exp(-(dxp * dxp + dyp * dyp) * inv2s2)
                            up = eta * (gp - tau)
                            if up > 0.0 and up < 1.0:
                                w = c_it * hpix * (1.0 - h[k]) * eta * gp * inv_s2
                                g_xyp[k, 0] += w * dxp
                                g_xyp[k, 1] += w * dyp
                if lin[k] and gh != 0.0:
                    w = gh * eta * G[k] * inv_s2
                    g_xy[k, 0] += w * (c - xc[k, 0])
                    g_xy[k, 1] += w * (r - xc[k, 1])
    return sum_hm, sum_cm, peak, peak_val


class PairObjective:
    """Loss and gradient for one frame (optionally paired with its predecessor).

    Holds the constant entropy maps of the pair. Not reentrant: create one
    per optimization.
    """

    def __init__(self, H_t, H_prev=None, H_cond=None, weights: LossWeights = LossWeights(),
                 heat: HeatmapParams = HeatmapParams()):
        self.H_t = np.asarray(H_t, dtype=np.float64)
        self.paired = H_prev is not None
        self.weights = weights if self.paired else weights.single_frame()
        self.heat = heat
        self.H_prev = np.zeros_like(self.H_t) if H_prev is None else np.asarray(H_prev, dtype=np.float64)
        self.H_cond = np.zeros_like(self.H_t) if H_cond is None else np.asarray(H_cond, dtype=np.float64)
        if self.H_prev.shape != self.H_t.shape or self.H_cond.shape != self.H_t.shape:
            raise ValueError("entropy maps must share dimensions")
        self.height, self.width = self.H_t.shape
        self.xs, self.ys = pixel_grid(self.height, self.width)
        self.area = float(heatmap_area(heat.sigma, heat.tau, heat.eta))
        self.sum_h = float(self.H_t.sum())
        self.sum_cond = float(self.H_cond.sum())
        self._prev_key = None
        self._prev_h = None
        self.flags = []
        if self.sum_h <= 0.0:
            self.flags.append("blank_frame")
        if self.paired and self.sum_cond <= STATIC_EPS:
            self.flags.append("static_pair")

    # -- pieces -------------------------------------------------------------
    def _clamp(self, xy):
        lo = np.zeros(2)
        hi = np.array([self.width - 1, self.height - 1], dtype=np.float64)
        xc = np.clip(xy, lo, hi)
        inside = (xy >= lo) & (xy <= hi)
        return xc, inside

    def _fields(self, xc):
        dx = self.xs[None] - xc[:, 0, None, None]
        dy = self.ys[None] - xc[:, 1, None, None]
        G = np.exp(-(dx * dx + dy * dy) / (2.0 * self.heat.sigma ** 2))
        u = self.heat.eta * (G - self.heat.tau)
        h = np.clip(u, 0.0, 1.0)
        band = (u > 0).astype(np.int8) + (u >= 1).astype(np.int8)
        return G, dx, dy, h, band

    def _prev_heatmaps(self, xcp):
        key = xcp.tobytes()
        if self._prev_key != key:
            self._prev_h = self._fields(xcp)[3]
            self._prev_key = key
        return self._prev_h

    def evaluate(self, state: KeypointState, prev: KeypointState | None = None,
                 wrt_prev: bool = False, branches: bool = False, schedule: float | None = None):
        """Returns ``(breakdown, gradient)``, plus branch indicators if ``branches``.

        ``schedule`` overrides the status-term factor ``1 - me``; the gradient
        never flows through that factor, so a fixed value gives the function
        whose exact derivative is returned.
        """
        if not (np.all(np.isfinite(state.xy)) and np.all(np.isfinite(state.logits))):
            raise ValueError("non-finite keypoint parameters")
        if self.paired and prev is None:
            raise ValueError("paired objective needs the previous keypoint state")
        if self.paired and prev.k != state.k:
            raise ValueError("keypoint counts differ between frames")
        if wrt_prev and not self.paired:
            raise ValueError("single-frame objective has no previous parameters")
        if branches:
            return self.evaluate_reference(state, prev, wrt_prev, True, schedule)
        w = self.weights
        K = state.k
        xc, inside = self._clamp(state.xy)
        s = logistic(state.logits)
        if self.paired:
            xcp, inside_p = self._clamp(prev.xy)
            hp = self._prev_heatmaps(xcp)
        else:
            xcp, inside_p = np.zeros((K, 2)), np.zeros((K, 2), dtype=bool)
            hp = np.zeros((K, 1, 1))
        c_me = w.lambda_me / self.sum_h if self.sum_h > 0.0 else 0.0
        mce_ok = self.paired and self.sum_cond > STATIC_EPS
        c_mce = w.lambda_mce / self.sum_cond if mce_ok else 0.0
        c_it = w.lambda_it / self.area if self.paired else 0.0
        deficit = np.empty(K)
        g_xy = np.empty((K, 2))
        g_s = np.empty(K)
        g_xyp = np.empty((K, 2))
        sum_hm, sum_cm, peak, peak_val = _fused(
            self.H_t, self.H_prev, self.H_cond, xc, s, hp, xcp, self.paired, wrt_prev,
            self.heat.sigma, self.heat.tau, self.heat.eta, w.kappa, c_me, c_mce, c_it,
            deficit, g_xy, g_s, g_xyp)
        me = 1.0 - sum_hm / self.sum_h if self.sum_h > 0.0 else 0.0
        mce = 1.0 - sum_cm / self.sum_cond if mce_ok else 0.0
        if self.paired:
            delta = xc - xcp
            dist = (delta ** 2).sum(axis=1)
            it_terms = deficit / self.area + w.m_d * dist
            g_move = 2.0 * w.lambda_it * w.m_d * delta
        else:
            dist = np.zeros(K)
            it_terms = np.zeros(K)
            g_move = np.zeros((K, 2))
        it = float(it_terms.sum())
        excess = peak_val - w.beta
        if w.overlap_form == "hinge":
            overlap, o_active = max(excess, 0.0) / K, excess > 0.0
        else:
            overlap, o_active = min(excess, 0.0) / K, excess < 0.0
        status = float(s.mean())
        sched = 1.0 - me if schedule is None else schedule
        total = (w.lambda_me * me + w.lambda_mce * mce + w.lambda_it * it
                 + w.lambda_o * overlap + sched * w.lambda_s * status)
        breakdown = LossBreakdown(me=me, mce=mce, it=it, overlap=overlap, status=status, total=float(total),
                                  it_terms=it_terms, distances=dist, flags=tuple(self.flags))
        if o_active:
            py, px = divmod(peak, self.width)
            d = np.array([px, py], dtype=np.float64) - xc
            Gk = np.exp(-(d ** 2).sum(axis=1) / (2.0 * self.heat.sigma ** 2))
            g_xy = g_xy + (w.lambda_o / K) * (Gk / self.heat.sigma ** 2)[:, None] * d
        g_xy = (g_xy + g_move) * inside
        g_l = (g_s + sched * w.lambda_s / K) * s * (1.0 - s)
        grad = np.column_stack([g_xy, g_l]).reshape(-1)
        if wrt_prev:
            g_xyp = (g_xyp - g_move) * inside_p
            grad = np.concatenate([np.column_stack([g_xyp, np.zeros(K)]).reshape(-1), grad])
        return breakdown, grad

    def evaluate_reference(self, state: KeypointState, prev: KeypointState | None = None,
                           wrt_prev: bool = False, branches: bool = False, schedule: float | None = None):
        """Array-at-a-time evaluation, also reporting branch indicators.

        ``branches`` is a dict of discrete branch indicators (clamp, heatmap
        band, mask saturation, deficit sign, overlap arg-max) used to detect
        parameters sitting near a kink, with per-pixel relevance masks.
        """
        w = self.weights
        sigma2 = self.heat.sigma ** 2
        eta = self.heat.eta
        K = state.k

        xc, inside = self._clamp(state.xy)
        G, dx, dy, h, band = self._fields(xc)
        s = logistic(state.logits)
        A = np.tensordot(s, h, axes=1)
        unsat = A < 1.0
        M = np.where(unsat, A, 1.0)

        # coverage losses
        gM = np.zeros_like(self.H_t)
        if self.sum_h > 0.0:
            me = 1.0 - float((self.H_t * M).sum()) / self.sum_h
            gM -= w.lambda_me * self.H_t / self.sum_h
        else:
            me = 0.0
        if self.paired and self.sum_cond > STATIC_EPS:
            mce = 1.0 - float((self.H_cond * M).sum()) / self.sum_cond
            gM -= w.lambda_mce * self.H_cond / self.sum_cond
        else:
            mce = 0.0
        gA = gM * unsat
        g_h = s[:, None, None] * gA[None]
        sched = 1.0 - me if schedule is None else schedule
        g_s = (gA[None] * h).sum(axis=(1, 2)) + sched * w.lambda_s / K

        # transport
        it = 0.0
        it_terms = np.zeros(K)
        dist = np.zeros(K)
        g_xy_move = np.zeros((K, 2))
        if self.paired:
            if prev.k != K:
                raise ValueError("keypoint counts differ between frames")
            xcp, inside_p = self._clamp(prev.xy)
            Gp, dxp, dyp, hp, band_p = self._fields(xcp)
            Ht, Hp, Hc = self.H_t[None], self.H_prev[None], self.H_cond[None]
            R = Hp * (1.0 - hp) * (1.0 - h) + Ht * h + w.kappa * Hc * (1.0 - h)
            gap = Ht - R
            short = gap > 0.0
            deficit = np.where(short, gap, 0.0).sum(axis=(1, 2)) / self.area
            delta = xc - xcp
            dist = (delta ** 2).sum(axis=1)
            it_terms = deficit + w.m_d * dist
            it = float(it_terms.sum())
            g_R = -w.lambda_it * short / self.area
            g_h = g_h + g_R * (Ht - Hp * (1.0 - hp) - w.kappa * Hc)
            g_hp = g_R * (-Hp * (1.0 - h))
            g_xy_move = 2.0 * w.lambda_it * w.m_d * delta

        # overlap
        S = G.sum(axis=0)
        peak = int(np.argmax(S))
        excess = float(S.flat[peak]) - w.beta
        if w.overlap_form == "hinge":
            overlap = max(excess, 0.0) / K
            o_active = excess > 0.0
        else:
            overlap = min(excess, 0.0) / K
            o_active = excess < 0.0
        status = float(s.mean())

        total = (w.lambda_me * me + w.lambda_mce * mce + w.lambda_it * it
                 + w.lambda_o * overlap + sched * w.lambda_s * status)
        breakdown = LossBreakdown(me=me, mce=mce, it=it, overlap=overlap, status=status, total=float(total),
                                  it_terms=it_terms, distances=dist, flags=tuple(self.flags))

        # backprop into fields and coordinates
        g_G = g_h * (eta * (band == 1))
        if o_active:
            py, px = divmod(peak, self.width)
            g_G[:, py, px] += w.lambda_o / K
        gGd = g_G * G / sigma2
        g_xy = np.column_stack([(gGd * dx).sum(axis=(1, 2)), (gGd * dy).sum(axis=(1, 2))])
        g_xy = (g_xy + g_xy_move) * inside
        g_l = g_s * s * (1.0 - s)
        grad = np.column_stack([g_xy, g_l]).reshape(-1)

        if wrt_prev:
            if not self.paired:
                raise ValueError("single-frame objective has no previous parameters")
            g_Gp = g_hp * (eta * (band_p == 1))
            gGdp = g_Gp * Gp / sigma2
            g_xyp = np.column_stack([(gGdp * dxp).sum(axis=(1, 2)), (gGdp * dyp).sum(axis=(1, 2))])
            g_xyp = (g_xyp - g_xy_move) * inside_p
            grad_prev = np.column_stack([g_xyp, np.zeros(K)]).reshape(-1)
            grad = np.concatenate([grad_prev, grad])

        if not branches:
            return breakdown, grad

        sig = {
            "inside": inside,
            "band": band,
            "band_relevant": g_h != 0.0,
            "unsat": unsat,
            "unsat_relevant": gM != 0.0,
            "overlap": (peak if o_active else -1, o_active),
        }
        if self.paired:
            sig["short"] = short
            sig["short_relevant"] = np.broadcast_to(self.H_t[None] != 0.0, short.shape) | (R != 0.0)
            sig["inside_prev"] = inside_p
            sig["band_prev"] = band_p
            sig["band_prev_relevant"] = g_hp != 0.0
        return breakdown, grad, sig

    # -- vector interface ----------------------------------------------------
    def split(self, vec, prev: KeypointState | None, wrt_prev: bool):
        vec = np.asarray(vec, dtype=np.float64)
        if wrt_prev:
            half = vec.size // 2
            return KeypointState.from_vector(vec[half:]), KeypointState.from_vector(vec[:half])
        return KeypointState.from_vector(vec), prev

    def function(self, base, prev: KeypointState | None = None, wrt_prev: bool = False):
        """Adapter ``vec -> (value, gradient, branches)`` for :func:`finite_diff_check`.

        The status schedule is frozen at its value for ``base``.
        """
        state, p = self.split(base, prev, wrt_prev)
        schedule = 1.0 - self.evaluate(state, p)[0].me

        def f(vec):
            state, p = self.split(vec, prev, wrt_prev)
            bd, g = self.evaluate(state, p, wrt_prev=wrt_prev, schedule=schedule)
            sig = self.evaluate_reference(state, p, wrt_prev, True, schedule)[2]
            return bd.total, g, sig
        return f


def evaluate_with_gradients(params, H_t, H_prev, H_cond, weights: LossWeights = LossWeights(),
                            heat: HeatmapParams = HeatmapParams(), prev_params=None):
    """Functional form: ``params`` is the 3K vector of the current frame, or
    6K ``[previous, current]`` when ``prev_params`` is None and maps are paired.
    """
    obj = PairObjective(H_t, H_prev, H_cond, weights, heat)
    params = np.asarray(params, dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise ValueError("non-finite parameters")
    if not obj.paired:
        return obj.evaluate(KeypointState.from_vector(params))
    if prev_params is not None:
        return obj.evaluate(KeypointState.from_vector(params), KeypointState.from_vector(prev_params))
    state, prev = obj.split(params, None, True)
    return obj.evaluate(state, prev, wrt_prev=True)


def _branches_differ(a, b) -> bool:
    if a is None or b is None:
        return False
    for key, va in a.items():
        if key.endswith("_relevant"):
            continue
        vb = b[key]
        rel = key + "_relevant"
        if rel in a:
            mask = a[rel] | b[rel]
            if np.any((np.asarray(va) != np.asarray(vb)) & mask):
                return True
        elif isinstance(va, tuple):
            if va != vb:
                return True
        elif np.any(np.asarray(va) != np.asarray(vb)):
            return True
    return False


def finite_diff_check(func, params, step: float = 1e-3, tolerance: float = 1e-4) -> GradientReport:
    """Central differences against the analytic gradient of ``func``.

    ``func(vec)`` returns ``(value, gradient)`` or ``(value, gradient,
    branches)``. A parameter is flagged, and left out of the verdict, when
    any branch indicator changes within two steps of the current value.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = np.asarray(params, dtype=np.float64)

    def call(v):
        out = func(v)
        return (out[0], out[1], out[2]) if len(out) == 3 else (out[0], out[1], None)

    _, analytic, sig0 = call(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.zeros_like(params)
    flagged = np.zeros(params.size, dtype=bool)
    for j in range(params.size):
        vals = {}
        for m in (-2, -1, 1, 2):
            p = params.copy()
            p[j] += m * step
            vals[m], _, sig = call(p)
            if _branches_differ(sig0, sig):
                flagged[j] = True
        numeric[j] = (vals[1] - vals[-1]) / (2.0 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    rel = np.abs(analytic - numeric) / scale
    checked = rel[~flagged]
    max_rel = float(checked.max()) if checked.size else 0.0
    return GradientReport(analytic, numeric, rel, flagged, max_rel, tolerance)


def random_case(seed: int, size: int = 64, k: int = 5):
    """Seeded frame pair with keypoints, for gradient checks.

    The frames are 8-px random colour blocks, the second shifted by a few
    pixels with one block repainted, so both maps and their conditional map
    have structure. Returns ``(objective, current, previous)``.
    """
    from .entropy import HistogramSpec, conditional_entropy, spatial_entropy
    from .image_io import preprocess

    rng = np.random.default_rng(seed)
    n = -(-size // 8)
    blocks = rng.random((n, n, 3))
    f0 = np.kron(blocks, np.ones((8, 8, 1)))[:size, :size]
    f1 = np.roll(f0, tuple(rng.integers(-3, 4, 2)), axis=(0, 1)).copy()
    r, c = rng.integers(0, n, 2)
    f1[8 * r:8 * r + 8, 8 * c:8 * c + 8] = rng.random(3)
    spec = HistogramSpec()
    H_prev = spatial_entropy(preprocess(f0), spec, threads=1)
    H_t = spatial_entropy(preprocess(f1), spec, threads=1)
    obj = PairObjective(H_t, H_prev, conditional_entropy(H_t, H_prev))
    prev = KeypointState(rng.uniform(4, size - 5, (k, 2)), rng.normal(0.0, 1.5, k))
    cur = KeypointState(prev.xy + rng.normal(0.0, 3.0, (k, 2)), rng.normal(0.0, 1.5, k))
    return obj, cur, prev


def gradcheck(seed: int, size: int = 64, k: int = 5, step: float = 1e-3,
              tolerance: float = 1e-4) -> GradientReport:
    """Finite-difference check on :func:`random_case`, w.r.t. both frames."""
    obj, cur, prev = random_case(seed, size, k)
    vec = np.concatenate([prev.to_vector(), cur.to_vector()])
    return finite_diff_check(obj.function(vec, wrt_prev=True), vec, step, tolerance)
