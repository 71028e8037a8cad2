"""Fine registration: inverse-compositional Gauss-Newton on pixel
intensities over the 8 homography parameters, coarse-to-fine.

Matching-stage homographies are often accurate only locally, so each view
member is re-registered against the reference photometrically.  Success
requires convergence and a normalized-cross-correlation floor on the
overlap; a single failed member removes the whole view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from ..imgcore import GrayImage, Homography
from .views import View, ViewMember

log = logging.getLogger(__name__)

MIN_LEVEL_SIZE = 24
MIN_VALID_PIXELS = 64


@dataclass
class RefineResult:
    homography: Homography | None
    converged: bool
    ncc: float
    level_costs: list[tuple[float, float]]  # (entry, exit) mean squared residual
    reason: str = ""

    @property
    def success(self) -> bool:
        return self.homography is not None


def _downsample2(px: np.ndarray) -> np.ndarray:
    h, w = px.shape
    px = px[: h - h % 2, : w - w % 2]
    return 0.25 * (px[0::2, 0::2] + px[0::2, 1::2] + px[1::2, 0::2] + px[1::2, 1::2])


def _level_transform(level: int) -> np.ndarray:
    """Level -> full-resolution pixel coordinates (2x2 box pyramid)."""
    s = float(2**level)
    return np.array([[s, 0.0, (s - 1) / 2.0],
                     [0.0, s, (s - 1) / 2.0],
                     [0.0, 0.0, 1.0]])


MAX_GN_SAMPLES = 80_000


def _steepest_descent(template: np.ndarray):
    """Per-pixel 8-vector of intensity change per warp parameter, plus the
    corresponding template samples and coordinates (1-px border excluded).

    Large levels are subsampled on a regular stride: tens of thousands of
    samples vastly overdetermine 8 parameters, and the normal equations
    are the per-iteration cost that matters.
    """
    ty, tx = np.gradient(template)
    h, w = template.shape
    n_interior = (h - 2) * (w - 2)
    stride = max(1, int(np.ceil(np.sqrt(n_interior / MAX_GN_SAMPLES))))
    ys, xs = np.mgrid[1 : h - 1 : stride, 1 : w - 1 : stride]
    xs = xs.ravel()
    ys = ys.ravel()
    xf = xs.astype(np.float64)
    yf = ys.astype(np.float64)
    gx = tx[ys, xs]
    gy = ty[ys, xs]
    sd = np.stack([
        gx * xf, gx * yf, gx,
        gy * xf, gy * yf, gy,
        -(gx * xf + gy * yf) * xf,
        -(gx * xf + gy * yf) * yf,
    ], axis=1)
    return sd, template[ys, xs], xs, ys


def _delta_warp(dp: np.ndarray) -> np.ndarray:
    return np.eye(3) + np.array([
        [dp[0], dp[1], dp[2]],
        [dp[3], dp[4], dp[5]],
        [dp[6], dp[7], 0.0],
    ])


def _corner_motion(m: np.ndarray, w: int, h: int) -> float:
    corners = np.array([[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]])
    ones = np.ones((4, 1))
    q = np.hstack([corners, ones]) @ m.T
    moved = q[:, :2] / q[:, 2:3]
    return float(np.max(np.linalg.norm(moved - corners, axis=1)))


def _mean_cost(template_vals, warped, valid, xs, ys):
    sel = valid[ys, xs]
    if sel.sum() < MIN_VALID_PIXELS:
        return None, sel
    r = warped[ys[sel], xs[sel]] - template_vals[sel]
    return float(np.mean(r * r)), sel


UPDATE_TOL = 1e-2  # corner motion in level pixels
BACKTRACK_HALVINGS = 8


def _refine_level(template: np.ndarray, moving: np.ndarray, g: np.ndarray,
                  max_iters: int, update_tol: float):
    """Gauss-Newton at one pyramid level; only improving steps are kept so
    the exit cost never exceeds the entry cost.

    Returns (g, entry_cost, exit_cost, converged, reason).
    """
    h, w = template.shape
    sd, tvals, xs, ys = _steepest_descent(template)
    converged = False

    warped, valid = kernels.warp_perspective(moving, g, h, w)
    cost, sel = _mean_cost(tvals, warped, valid, xs, ys)
    if cost is None:
        return g, None, None, False, "insufficient overlap"
    entry_cost = cost

    for _ in range(max_iters):
        sd_v = sd[sel]
        r = warped[ys[sel], xs[sel]] - tvals[sel]
        # Huber-weighted normal equations: moving clutter (a boat, a car)
        # must not steer the step, it only adds a constant to the residual
        scale = 1.4826 * float(np.median(np.abs(r))) + 1e-12
        k = 2.0 * scale
        absr = np.abs(r)
        wts = np.where(absr <= k, 1.0, k / np.maximum(absr, 1e-12))
        hess = (sd_v * wts[:, None]).T @ sd_v
        b = sd_v.T @ (wts * r)
        try:
            dp = np.linalg.solve(hess, b)
        except np.linalg.LinAlgError:
            dp, *_ = np.linalg.lstsq(hess, b, rcond=None)
        if not np.all(np.isfinite(dp)):
            return g, entry_cost, cost, False, "diverged"

        accepted = False
        motion = _corner_motion(_delta_warp(dp), w, h)
        for _ in range(BACKTRACK_HALVINGS):  # halve while the residual worsens
            delta = _delta_warp(dp)
            try:
                g_new = g @ np.linalg.inv(delta)
            except np.linalg.LinAlgError:
                break
            if abs(g_new[2, 2]) < 1e-12:
                break
            g_new = g_new / g_new[2, 2]
            warped_new, valid_new = kernels.warp_perspective(moving, g_new, h, w)
            cost_new, sel_new = _mean_cost(tvals, warped_new, valid_new, xs, ys)
            if cost_new is None:
                return g, entry_cost, cost, False, "insufficient overlap"
            if cost_new <= cost:
                accepted = True
                improvement = (cost - cost_new) / max(cost, 1e-300)
                g, warped, cost, sel = g_new, warped_new, cost_new, sel_new
                break
            dp = 0.5 * dp
            motion = 0.5 * motion
        if motion < update_tol:
            # at the residual floor: further steps would move corners less
            # than the tolerance whether or not the last one was accepted
            converged = True
            break
        if accepted and improvement < 1e-6 and motion < 0.5:
            # cost plateau with a sub-pixel step: the objective has nothing
            # left to say at this level
            converged = True
            break
        if not accepted:
            break  # stuck at a local minimum with a non-trivial step left
    return g, entry_cost, cost, converged, ""


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _standardize(px: np.ndarray) -> np.ndarray:
    return (px - px.mean()) / max(float(px.std()), 1e-8)


def refine_registration(ref: GrayImage, moving: GrayImage, h_init: Homography,
                        levels: int = 3, max_iters: int = 50,
                        ncc_floor: float = 0.8,
                        update_tol: float = UPDATE_TOL) -> RefineResult:
    """Refine the moving->reference homography photometrically.

    Minimizes the sum of squared intensity differences between the
    reference and the warped moving image over a `levels`-deep pyramid,
    at most `max_iters` Gauss-Newton iterations per level.  Both frames
    are standardized (zero mean, unit variance) first: frames of one
    webcam view differ mostly by exposure, and a gain/bias mismatch
    would otherwise dominate the residual the geometry has to fight.
    Success requires convergence at the finest level and NCC >=
    `ncc_floor` on the valid overlap.
    """
    # g samples the moving image at reference coordinates
    g = np.linalg.inv(h_init.h)
    g = g / g[2, 2]

    pyr_ref = [_standardize(ref.pixels)]
    pyr_mov = [_standardize(moving.pixels)]
    for _ in range(levels - 1):
        nxt_r = _downsample2(pyr_ref[-1])
        nxt_m = _downsample2(pyr_mov[-1])
        if min(nxt_r.shape) < MIN_LEVEL_SIZE or min(nxt_m.shape) < MIN_LEVEL_SIZE:
            break
        pyr_ref.append(nxt_r)
        pyr_mov.append(nxt_m)

    level_costs = []
    converged = False
    for level in reversed(range(len(pyr_ref))):
        a = _level_transform(level)
        g_level = np.linalg.inv(a) @ g @ a
        g_level = g_level / g_level[2, 2]
        g_level, entry, exit_, converged, reason = _refine_level(
            pyr_ref[level], pyr_mov[level], g_level, max_iters, update_tol
        )
        if entry is None:
            return RefineResult(None, False, 0.0, level_costs, reason)
        level_costs.append((entry, exit_))
        if reason:
            return RefineResult(None, False, 0.0, level_costs, reason)
        g = a @ g_level @ np.linalg.inv(a)
        g = g / g[2, 2]

    warped, valid = kernels.warp_perspective(pyr_mov[0], g, ref.height, ref.width)
    if valid.sum() < MIN_VALID_PIXELS:
        return RefineResult(None, False, 0.0, level_costs, "insufficient overlap")
    ncc = normalized_cross_correlation(pyr_ref[0][valid.astype(bool)],
                                       warped[valid.astype(bool)])
    if not converged:
        return RefineResult(None, False, ncc, level_costs, "did not converge")
    if ncc < ncc_floor:
        return RefineResult(None, False, ncc, level_costs,
                            f"ncc {ncc:.3f} below floor {ncc_floor}")
    try:
        h_refined = Homography(np.linalg.inv(g))
    except ValueError:
        return RefineResult(None, False, ncc, level_costs, "degenerate homography")
    return RefineResult(h_refined, True, ncc, level_costs)


def verify_view_registration(view: View, get_image, levels: int = 3,
                             max_iters: int = 50, ncc_floor: float = 0.8,
                             pool=None):
    """Re-register every non-reference member against the reference.

    Returns (registered view, None) with refined homographies on success;
    (None, reason) when any member fails, which removes the whole view.
    `get_image(image_id)` loads pixels; `pool` optionally maps the
    per-member refinements concurrently.
    """
    ref_img = get_image(view.reference_image_id)

    def refine_member(member: ViewMember) -> RefineResult:
        return refine_registration(ref_img, get_image(member.image_id),
                                   member.h_to_ref, levels=levels,
                                   max_iters=max_iters, ncc_floor=ncc_floor)

    rest = view.members[1:]
    results = list(pool.map(refine_member, rest)) if pool else [refine_member(m) for m in rest]

    new_members = [ViewMember(view.reference_image_id, Homography.identity())]
    for member, result in zip(rest, results):
        if not result.success:
            reason = f"registration failed for {member.image_id}: {result.reason}"
            log.info("view %s removed: %s", view.view_id, reason)
            return None, reason
        new_members.append(ViewMember(member.image_id, result.homography))
    return replace(view, members=new_members, status="registered"), None
