"""Compiled hot-path kernels for the control loop.

Everything here mirrors a plain-python reference implementation elsewhere in
the package (potentials/heuristic/controller); the two routes are equality-
tested. Keep fastmath off: runs must be bit-reproducible across machines and
thread counts.

Static obstacle encoding, one row per obstacle, width 7:
  sphere: [0, cx, cy, cz, r, 0, 0]
  box:    [1, lox, loy, loz, hix, hiy, hiz]
  plane:  [2, px, py, pz, nx, ny, nz]

Scalar parameter vector layout (see pack_pvec):
  [r_f, r_s, r_c, k_or, k_od, k_delta, delta, k_rho, k_rp, k_rv, k_ob]
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EPS = 1e-9

# pvec indices
_RF, _RS, _RC, _KOR, _KOD, _KDELTA, _DELTA, _KRHO, _KRP, _KRV, _KOB = range(11)


def pack_pvec(params, hparams) -> np.ndarray:
    """Pack potential + heuristic gains into the kernel parameter vector."""
    return np.array([
        params.r_f, params.r_s, params.r_c, params.k_or, params.k_od,
        params.k_delta, params.delta, params.k_rho, params.k_rp, params.k_rv,
        hparams.k_ob,
    ])


# ---------------------------------------------------------------------------
# scalar pieces
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def psi_ar_scalar(d, k_a, r_eff, k_t):
    knee = k_t * r_eff
    if d <= knee:
        return k_a * (1.0 + math.cos(math.pi * d / r_eff))
    slope = -(math.pi * k_a / r_eff) * math.sin(math.pi * k_t)
    return k_a * (1.0 + math.cos(math.pi * k_t)) + slope * (d - knee)


@njit(cache=True, nogil=True)
def _rho_scalar(lam, delta, z, k_rho):
    if z < lam:
        return k_rho
    if z < delta:
        return 1.0
    if z < 1.0:
        return 0.5 * (1.0 + math.cos(math.pi * (z - delta) / (1.0 - delta)))
    return 0.0


@njit(cache=True, nogil=True)
def _risk_sector(ix, iy, iz, wx, wy, wz, r_beta, pvec):
    """Collision-course classification of one robot-obstacle pair.

    Returns (dist, speed, sector, z, theta_3). Caller guarantees a nonzero
    separation vector.
    """
    k_delta = pvec[_KDELTA]
    dist = math.sqrt(ix * ix + iy * iy + iz * iz)
    speed = math.sqrt(wx * wx + wy * wy + wz * wz)
    safe = r_beta + pvec[_RC]
    lam = 1.0 / (1.0 + k_delta)
    penetrating = dist < safe
    if penetrating:
        theta_3 = 0.5 * math.pi
    else:
        s3 = (1.0 + k_delta) * safe / dist
        if s3 > 1.0:
            s3 = 1.0
        theta_3 = math.asin(s3)
    z = 0.0
    if speed < EPS:
        sector = 4
    else:
        ct = -(ix * wx + iy * wy + iz * wz) / (dist * speed)
        if ct > 1.0:
            ct = 1.0
        elif ct < -1.0:
            ct = -1.0
        theta = math.acos(ct)
        z = dist * math.sin(theta) / ((1.0 + k_delta) * safe)
        if penetrating:
            sector = 1
        elif theta >= theta_3:
            sector = 4
        elif z < lam:
            sector = 1
        elif z < pvec[_DELTA]:
            sector = 2
        else:
            sector = 3
    return dist, speed, sector, z, theta_3


@njit(cache=True, nogil=True)
def _u_go(ix, iy, iz, wx, wy, wz, dist, sector, theta_3, pvec):
    """Bypass direction for one pair: repulsion gradient plus, when the
    encounter is active (sector I-III inside sensing range), the rotated
    unit direction scaled by k_ob."""
    r_f = pvec[_RF]
    gx = 0.0
    gy = 0.0
    gz = 0.0
    if dist <= r_f:
        arg = math.pi * dist / (2.0 * r_f)
        coef = (pvec[_KOR] * math.exp(1.0 - math.sin(arg)) * math.cos(arg)
                * (math.pi / (2.0 * r_f)))
        gx += coef * ix / dist
        gy += coef * iy / dist
        gz += coef * iz / dist
    if sector != 4 and dist < pvec[_RS]:
        l1x = -ix / dist
        l1y = -iy / dist
        l1z = -iz / dist
        cx = iy * wz - iz * wy
        cy = iz * wx - ix * wz
        cz = ix * wy - iy * wx
        nc = math.sqrt(cx * cx + cy * cy + cz * cz)
        if nc < EPS:
            # cross with the least-aligned canonical axis (ties in x, y, z
            # order), axis first so the deflection side matches the
            # reference implementation
            ax = abs(ix)
            ay = abs(iy)
            az = abs(iz)
            if ax <= ay and ax <= az:
                cx, cy, cz = 0.0, -iz, iy
            elif ay <= az:
                cx, cy, cz = iz, 0.0, -ix
            else:
                cx, cy, cz = -iy, ix, 0.0
            nc = math.sqrt(cx * cx + cy * cy + cz * cz)
        l3x = -cx / nc
        l3y = -cy / nc
        l3z = -cz / nc
        l2x = l3y * l1z - l3z * l1y
        l2y = l3z * l1x - l3x * l1z
        l2z = l3x * l1y - l3y * l1x
        c3 = math.cos(theta_3)
        s3 = math.sin(theta_3)
        k_ob = pvec[_KOB]
        gx += k_ob * (c3 * l1x + s3 * l2x)
        gy += k_ob * (c3 * l1y + s3 * l2y)
        gz += k_ob * (c3 * l1z + s3 * l2z)
    return gx, gy, gz


@njit(cache=True, nogil=True)
def _obstacle_pair_energy(px, py, pz, vx, vy, vz,
                          bpx, bpy, bpz, bvx, bvy, bvz, r_beta, pvec):
    """psi_or + psi_od for one candidate state against one beta agent."""
    ix = px - bpx
    iy = py - bpy
    iz = pz - bpz
    if ix * ix + iy * iy + iz * iz < EPS * EPS:
        ix, iy, iz = EPS, 0.0, 0.0
    wx = vx - bvx
    wy = vy - bvy
    wz = vz - bvz
    dist, speed, sector, z, theta_3 = _risk_sector(ix, iy, iz, wx, wy, wz,
                                                   r_beta, pvec)
    r_f = pvec[_RF]
    e = 0.0
    if dist <= r_f:
        e += pvec[_KOR] * (math.exp(1.0 - math.sin(math.pi * dist / (2.0 * r_f))) - 1.0)
    if sector != 4:
        w = _rho_scalar(1.0 / (1.0 + pvec[_KDELTA]), pvec[_DELTA], z, pvec[_KRHO])
        if w > 0.0:
            gx, gy, gz = _u_go(ix, iy, iz, wx, wy, wz, dist, sector, theta_3, pvec)
            nv = math.sqrt(vx * vx + vy * vy + vz * vz)
            ng = math.sqrt(gx * gx + gy * gy + gz * gz)
            if nv >= EPS and ng >= EPS:
                ca = (vx * gx + vy * gy + vz * gz) / (nv * ng)
                if ca > 1.0:
                    ca = 1.0
                elif ca < -1.0:
                    ca = -1.0
                e += pvec[_KOD] * w * (math.exp(math.acos(ca)) - 1.0)
    return e


@njit(cache=True, nogil=True)
def _surface_query_row(px, py, pz, row):
    """Signed distance (negative inside) and outward unit direction from a
    point to one encoded static obstacle."""
    kind = int(row[0])
    if kind == 0:
        dx = px - row[1]
        dy = py - row[2]
        dz = pz - row[3]
        nn = math.sqrt(dx * dx + dy * dy + dz * dz)
        if nn < 1e-15:
            return -row[4], 1.0, 0.0, 0.0
        return nn - row[4], dx / nn, dy / nn, dz / nn
    if kind == 1:
        qx = min(max(px, row[1]), row[4])
        qy = min(max(py, row[2]), row[5])
        qz = min(max(pz, row[3]), row[6])
        dx = px - qx
        dy = py - qy
        dz = pz - qz
        dn = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dn > 0.0:
            return dn, dx / dn, dy / dn, dz / dn
        gl0 = px - row[1]
        gl1 = py - row[2]
        gl2 = pz - row[3]
        gh0 = row[4] - px
        gh1 = row[5] - py
        gh2 = row[6] - pz
        k_lo = 0
        g_lo = gl0
        if gl1 < g_lo:
            k_lo = 1
            g_lo = gl1
        if gl2 < g_lo:
            k_lo = 2
            g_lo = gl2
        k_hi = 0
        g_hi = gh0
        if gh1 < g_hi:
            k_hi = 1
            g_hi = gh1
        if gh2 < g_hi:
            k_hi = 2
            g_hi = gh2
        if g_lo <= g_hi:
            if k_lo == 0:
                return -g_lo, -1.0, 0.0, 0.0
            if k_lo == 1:
                return -g_lo, 0.0, -1.0, 0.0
            return -g_lo, 0.0, 0.0, -1.0
        if k_hi == 0:
            return -g_hi, 1.0, 0.0, 0.0
        if k_hi == 1:
            return -g_hi, 0.0, 1.0, 0.0
        return -g_hi, 0.0, 0.0, 1.0
    # plane
    sd = ((px - row[1]) * row[4] + (py - row[2]) * row[5] + (pz - row[3]) * row[6])
    return sd, row[4], row[5], row[6]


# ---------------------------------------------------------------------------
# visibility masks
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def build_masks(ego, states_p, statics, dyn_p, dyn_r, r_s):
    """Sensing masks for one robot's local problem.

    nbr marks agent pairs within r_s of each other. smask/dmask mark
    each agent's perceived obstacles, gated by the ego's own perception: an
    obstacle the ego cannot sense is dropped for every agent in its problem.
    """
    A = states_p.shape[0]
    S = statics.shape[0]
    D = dyn_p.shape[0]
    nbr = np.zeros((A, A), dtype=np.uint8)
    for a in range(A):
        for b in range(a + 1, A):
            dx = states_p[a, 0] - states_p[b, 0]
            dy = states_p[a, 1] - states_p[b, 1]
            dz = states_p[a, 2] - states_p[b, 2]
            if math.sqrt(dx * dx + dy * dy + dz * dz) <= r_s:
                nbr[a, b] = 1
                nbr[b, a] = 1
    smask = np.zeros((A, S), dtype=np.uint8)
    for s in range(S):
        sd, ox, oy, oz = _surface_query_row(
            states_p[ego, 0], states_p[ego, 1], states_p[ego, 2], statics[s])
        if sd <= r_s:
            for a in range(A):
                sa, ox, oy, oz = _surface_query_row(
                    states_p[a, 0], states_p[a, 1], states_p[a, 2], statics[s])
                if sa <= r_s:
                    smask[a, s] = 1
    dmask = np.zeros((A, D), dtype=np.uint8)
    for k in range(D):
        reach = r_s + dyn_r[k]
        dx = dyn_p[k, 0] - states_p[ego, 0]
        dy = dyn_p[k, 1] - states_p[ego, 1]
        dz = dyn_p[k, 2] - states_p[ego, 2]
        if math.sqrt(dx * dx + dy * dy + dz * dz) <= reach:
            for a in range(A):
                dx = dyn_p[k, 0] - states_p[a, 0]
                dy = dyn_p[k, 1] - states_p[a, 1]
                dz = dyn_p[k, 2] - states_p[a, 2]
                if math.sqrt(dx * dx + dy * dy + dz * dz) <= reach:
                    dmask[a, k] = 1
    return nbr, smask, dmask


@njit(cache=True, nogil=True)
def build_masks_local(i, robots_p, robots_v, statics, dyn_p, dyn_r, r_s):
    """Select robot i's local agents (itself plus rows within r_s) and build
    their masks in one pass. Returns (lid, ego, states_p, states_v, nbr,
    smask, dmask) where lid holds the selected row indices in ascending order
    and ego is i's position within them."""
    n = robots_p.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    cnt = 0
    for j in range(n):
        dx = robots_p[j, 0] - robots_p[i, 0]
        dy = robots_p[j, 1] - robots_p[i, 1]
        dz = robots_p[j, 2] - robots_p[i, 2]
        if math.sqrt(dx * dx + dy * dy + dz * dz) <= r_s:
            keep[j] = 1
            cnt += 1
    lid = np.empty(cnt, dtype=np.int64)
    states_p = np.empty((cnt, 3))
    states_v = np.empty((cnt, 3))
    ego = 0
    k = 0
    for j in range(n):
        if keep[j] == 1:
            lid[k] = j
            states_p[k, 0] = robots_p[j, 0]
            states_p[k, 1] = robots_p[j, 1]
            states_p[k, 2] = robots_p[j, 2]
            states_v[k, 0] = robots_v[j, 0]
            states_v[k, 1] = robots_v[j, 1]
            states_v[k, 2] = robots_v[j, 2]
            if j == i:
                ego = k
            k += 1
    nbr, smask, dmask = build_masks(ego, states_p, statics, dyn_p, dyn_r, r_s)
    return lid, ego, states_p, states_v, nbr, smask, dmask


# ---------------------------------------------------------------------------
# energy tables
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def pair_table(pa, pb, k_a, r_eff, k_t):
    na = pa.shape[0]
    nb = pb.shape[0]
    out = np.empty((na, nb))
    for m in range(na):
        for n in range(nb):
            dx = pa[m, 0] - pb[n, 0]
            dy = pa[m, 1] - pb[n, 1]
            dz = pa[m, 2] - pb[n, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            out[m, n] = psi_ar_scalar(d, k_a, r_eff, k_t)
    return out


@njit(cache=True, nogil=True)
def single_table(cand_p, cand_v, statics, dyn_p, dyn_v, dyn_r,
                 xr_p, xr_v, pvec):
    """Per-candidate obstacle + goal energy.

    cand_p/cand_v: predicted candidate states (n, 3). statics: encoded rows
    (see module docstring); the beta agent is re-projected per candidate.
    dyn_p/dyn_v/dyn_r: dynamic beta agents already propagated to the
    prediction instant. xr_p/xr_v: reference state at the prediction instant.
    """
    n = cand_p.shape[0]
    out = np.empty(n)
    for m in range(n):
        px = cand_p[m, 0]
        py = cand_p[m, 1]
        pz = cand_p[m, 2]
        vx = cand_v[m, 0]
        vy = cand_v[m, 1]
        vz = cand_v[m, 2]
        e = 0.0
        for s in range(statics.shape[0]):
            sd, ox, oy, oz = _surface_query_row(px, py, pz, statics[s])
            d_eff = sd if sd > EPS else EPS
            e += _obstacle_pair_energy(px, py, pz, vx, vy, vz,
                                       px - d_eff * ox, py - d_eff * oy,
                                       pz - d_eff * oz,
                                       0.0, 0.0, 0.0, 0.0, pvec)
        for k in range(dyn_p.shape[0]):
            e += _obstacle_pair_energy(px, py, pz, vx, vy, vz,
                                       dyn_p[k, 0], dyn_p[k, 1], dyn_p[k, 2],
                                       dyn_v[k, 0], dyn_v[k, 1], dyn_v[k, 2],
                                       dyn_r[k], pvec)
        dpx = px - xr_p[0]
        dpy = py - xr_p[1]
        dpz = pz - xr_p[2]
        dvx = vx - xr_v[0]
        dvy = vy - xr_v[1]
        dvz = vz - xr_v[2]
        e += pvec[_KRP] * (math.exp(math.sqrt(dpx * dpx + dpy * dpy + dpz * dpz)) - 1.0)
        e += pvec[_KRV] * (math.exp(math.sqrt(dvx * dvx + dvy * dvy + dvz * dvz)) - 1.0)
        out[m] = e
    return out


# ---------------------------------------------------------------------------
# batch heuristic solutions
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def heuristic_ug(states_p, states_v, nbr_mask, statics, smask,
                 dyn_p, dyn_v, dyn_r, dmask, xr_p, xr_v, pvec,
                 k_a, r_eff, k_t, k_av, k_rv2):
    """Gradient heuristic u_g for every agent row, at the current instant.

    nbr_mask (A, A) marks sensing-range pairs; smask/dmask mark each agent's
    perceived obstacles. Obstacle geometry is taken at current positions.
    """
    A = states_p.shape[0]
    out = np.zeros((A, 3))
    for h in range(A):
        px = states_p[h, 0]
        py = states_p[h, 1]
        pz = states_p[h, 2]
        vx = states_v[h, 0]
        vy = states_v[h, 1]
        vz = states_v[h, 2]
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for j in range(A):
            if j == h or nbr_mask[h, j] == 0:
                continue
            dx = px - states_p[j, 0]
            dy = py - states_p[j, 1]
            dz = pz - states_p[j, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d <= k_t * r_eff:
                mag = (math.pi * k_a / r_eff) * math.sin(math.pi * d / r_eff)
            else:
                mag = (math.pi * k_a / r_eff) * math.sin(math.pi * k_t)
            gx += mag * dx / d - k_av * (vx - states_v[j, 0])
            gy += mag * dy / d - k_av * (vy - states_v[j, 1])
            gz += mag * dz / d - k_av * (vz - states_v[j, 2])
        dx = px - xr_p[0]
        dy = py - xr_p[1]
        dz = pz - xr_p[2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d >= EPS:
            coef = -pvec[_KRP] * math.exp(d) / d
            gx += coef * dx
            gy += coef * dy
            gz += coef * dz
        gx -= k_rv2 * (vx - xr_v[0])
        gy -= k_rv2 * (vy - xr_v[1])
        gz -= k_rv2 * (vz - xr_v[2])
        for s in range(statics.shape[0]):
            if smask[h, s] == 0:
                continue
            sd, ox, oy, oz = _surface_query_row(px, py, pz, statics[s])
            d_eff = sd if sd > EPS else EPS
            ix = d_eff * ox
            iy = d_eff * oy
            iz = d_eff * oz
            dist, speed, sector, z, theta_3 = _risk_sector(
                ix, iy, iz, vx, vy, vz, 0.0, pvec)
            ax, ay, az = _u_go(ix, iy, iz, vx, vy, vz, dist, sector, theta_3, pvec)
            gx += ax
            gy += ay
            gz += az
        for k in range(dyn_p.shape[0]):
            if dmask[h, k] == 0:
                continue
            ix = px - dyn_p[k, 0]
            iy = py - dyn_p[k, 1]
            iz = pz - dyn_p[k, 2]
            if ix * ix + iy * iy + iz * iz < EPS * EPS:
                ix, iy, iz = EPS, 0.0, 0.0
            wx = vx - dyn_v[k, 0]
            wy = vy - dyn_v[k, 1]
            wz = vz - dyn_v[k, 2]
            dist, speed, sector, z, theta_3 = _risk_sector(
                ix, iy, iz, wx, wy, wz, dyn_r[k], pvec)
            ax, ay, az = _u_go(ix, iy, iz, wx, wy, wz, dist, sector, theta_3, pvec)
            gx += ax
            gy += ay
            gz += az
        out[h, 0] = gx
        out[h, 1] = gy
        out[h, 2] = gz
    return out


# ---------------------------------------------------------------------------
# Gauss-Seidel belief iteration
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def gs_converge(q, n_cands, singles, edges, pairs, tol, max_sweeps):
    """Sweep beliefs in ascending agent order until the max per-entry change
    drops below tol. q is modified in place.

    q: (A, M) padded beliefs, rows normalized over their first n_cands[a]
    entries. singles: (A, M) padded single-state energies. edges: (E, 2) with
    a < b. pairs: (E, M, M) pair energies indexed [edge, cand_a, cand_b].
    Returns (sweeps_used, last_max_change, underflow_flag).
    """
    A = q.shape[0]
    M = q.shape[1]
    E = edges.shape[0]
    logits = np.empty(M)
    underflow = 0
    sweeps = 0
    max_change = 0.0
    for _ in range(max_sweeps):
        sweeps += 1
        max_change = 0.0
        for a in range(A):
            na = n_cands[a]
            for m in range(na):
                logits[m] = -singles[a, m]
            for e in range(E):
                if edges[e, 0] == a:
                    b = edges[e, 1]
                    for m in range(na):
                        acc = 0.0
                        for n in range(n_cands[b]):
                            acc += pairs[e, m, n] * q[b, n]
                        logits[m] -= acc
                elif edges[e, 1] == a:
                    b = edges[e, 0]
                    for m in range(na):
                        acc = 0.0
                        for n in range(n_cands[b]):
                            acc += pairs[e, n, m] * q[b, n]
                        logits[m] -= acc
            mx = -np.inf
            for m in range(na):
                if logits[m] > mx:
                    mx = logits[m]
            if not np.isfinite(mx):
                # every factor vanished: fall back to uniform, flag it
                underflow = 1
                for m in range(na):
                    ch = abs(1.0 / na - q[a, m])
                    if ch > max_change:
                        max_change = ch
                    q[a, m] = 1.0 / na
                continue
            ssum = 0.0
            for m in range(na):
                logits[m] = math.exp(logits[m] - mx)
                ssum += logits[m]
            for m in range(na):
                nv = logits[m] / ssum
                ch = abs(nv - q[a, m])
                if ch > max_change:
                    max_change = ch
                q[a, m] = nv
        if max_change < tol:
            break
    return sweeps, max_change, underflow


# ---------------------------------------------------------------------------
# fused per-robot inference
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def local_infer(states_p, states_v, ug, dirs, n_u, u_max, k_u,
                H, v_max, statics, smask, dyn_p, dyn_v, dyn_r, dmask,
                xr_p, xr_v, pvec, k_a, r_eff, k_t, tol, max_sweeps):
    """Candidate generation + energy tables + belief iteration in one pass.

    dyn_p/dyn_v hold current dynamic-obstacle states; propagation over the
    horizon and the reference advance happen here. Returns
    (q, cand_u, cand_p, cand_v, n_cands, n_cone, fallback, sweeps,
    max_change, underflow).
    """
    A = states_p.shape[0]
    Dn = dirs.shape[0]
    M = n_u * Dn + 1
    cand_u = np.zeros((A, M, 3))
    cand_p = np.zeros((A, M, 3))
    cand_v = np.zeros((A, M, 3))
    n_cands = np.zeros(A, dtype=np.int64)
    n_cone = np.zeros(A, dtype=np.int64)
    fallback = np.zeros(A, dtype=np.int64)
    idx = np.empty(Dn, dtype=np.int64)
    for a in range(A):
        gx = ug[a, 0]
        gy = ug[a, 1]
        gz = ug[a, 2]
        ng = math.sqrt(gx * gx + gy * gy + gz * gz)
        kept = 0
        if k_u < 1.0 and ng >= EPS:
            best = -2.0
            best_k = 0
            for kk in range(Dn):
                ca = (dirs[kk, 0] * gx + dirs[kk, 1] * gy + dirs[kk, 2] * gz) / ng
                if ca > best:
                    best = ca
                    best_k = kk
                cc = ca
                if cc > 1.0:
                    cc = 1.0
                elif cc < -1.0:
                    cc = -1.0
                if math.acos(cc) <= k_u * math.pi:
                    idx[kept] = kk
                    kept += 1
            if kept == 0:
                idx[0] = best_k
                kept = 1
                fallback[a] = 1
        else:
            for kk in range(Dn):
                idx[kk] = kk
            kept = Dn
        n_cone[a] = kept
        px = states_p[a, 0]
        py = states_p[a, 1]
        pz = states_p[a, 2]
        vx = states_v[a, 0]
        vy = states_v[a, 1]
        vz = states_v[a, 2]
        m = 0
        for t in range(1, n_u + 1):
            mag = u_max * t / n_u
            for kk in range(kept):
                ux = mag * dirs[idx[kk], 0]
                uy = mag * dirs[idx[kk], 1]
                uz = mag * dirs[idx[kk], 2]
                cand_u[a, m, 0] = ux
                cand_u[a, m, 1] = uy
                cand_u[a, m, 2] = uz
                m += 1
        # zero input, always last
        m += 1
        n_cands[a] = m
        for mm in range(m):
            ux = cand_u[a, mm, 0]
            uy = cand_u[a, mm, 1]
            uz = cand_u[a, mm, 2]
            ppx = px + vx * H + 0.5 * ux * H * H
            ppy = py + vy * H + 0.5 * uy * H * H
            ppz = pz + vz * H + 0.5 * uz * H * H
            vvx = vx + ux * H
            vvy = vy + uy * H
            vvz = vz + uz * H
            vn = math.sqrt(vvx * vvx + vvy * vvy + vvz * vvz)
            if vn > v_max:
                sc = v_max / vn
                vvx *= sc
                vvy *= sc
                vvz *= sc
            cand_p[a, mm, 0] = ppx
            cand_p[a, mm, 1] = ppy
            cand_p[a, mm, 2] = ppz
            cand_v[a, mm, 0] = vvx
            cand_v[a, mm, 1] = vvy
            cand_v[a, mm, 2] = vvz

    Mu = int(np.max(n_cands))
    # propagate the world to the prediction instant
    xr_ph = np.empty(3)
    xr_ph[0] = xr_p[0] + H * xr_v[0]
    xr_ph[1] = xr_p[1] + H * xr_v[1]
    xr_ph[2] = xr_p[2] + H * xr_v[2]
    D = dyn_p.shape[0]
    dyn_ph = np.empty((D, 3))
    for k in range(D):
        dyn_ph[k, 0] = dyn_p[k, 0] + H * dyn_v[k, 0]
        dyn_ph[k, 1] = dyn_p[k, 1] + H * dyn_v[k, 1]
        dyn_ph[k, 2] = dyn_p[k, 2] + H * dyn_v[k, 2]

    singles = np.zeros((A, Mu))
    for a in range(A):
        for m in range(n_cands[a]):
            px = cand_p[a, m, 0]
            py = cand_p[a, m, 1]
            pz = cand_p[a, m, 2]
            vx = cand_v[a, m, 0]
            vy = cand_v[a, m, 1]
            vz = cand_v[a, m, 2]
            e = 0.0
            for s in range(statics.shape[0]):
                if smask[a, s] == 0:
                    continue
                sd, ox, oy, oz = _surface_query_row(px, py, pz, statics[s])
                d_eff = sd if sd > EPS else EPS
                e += _obstacle_pair_energy(px, py, pz, vx, vy, vz,
                                           px - d_eff * ox, py - d_eff * oy,
                                           pz - d_eff * oz,
                                           0.0, 0.0, 0.0, 0.0, pvec)
            for k in range(D):
                if dmask[a, k] == 0:
                    continue
                e += _obstacle_pair_energy(px, py, pz, vx, vy, vz,
                                           dyn_ph[k, 0], dyn_ph[k, 1], dyn_ph[k, 2],
                                           dyn_v[k, 0], dyn_v[k, 1], dyn_v[k, 2],
                                           dyn_r[k], pvec)
            dpx = px - xr_ph[0]
            dpy = py - xr_ph[1]
            dpz = pz - xr_ph[2]
            dvx = vx - xr_v[0]
            dvy = vy - xr_v[1]
            dvz = vz - xr_v[2]
            e += pvec[_KRP] * (math.exp(math.sqrt(dpx * dpx + dpy * dpy + dpz * dpz)) - 1.0)
            e += pvec[_KRV] * (math.exp(math.sqrt(dvx * dvx + dvy * dvy + dvz * dvz)) - 1.0)
            singles[a, m] = e

    E = A * (A - 1) // 2
    edges = np.empty((E, 2), dtype=np.int64)
    e_i = 0
    for a in range(A):
        for b in range(a + 1, A):
            edges[e_i, 0] = a
            edges[e_i, 1] = b
            e_i += 1
    pairs = np.empty((E, Mu, Mu))
    for e in range(E):
        a = edges[e, 0]
        b = edges[e, 1]
        for m in range(n_cands[a]):
            for n in range(n_cands[b]):
                dx = cand_p[a, m, 0] - cand_p[b, n, 0]
                dy = cand_p[a, m, 1] - cand_p[b, n, 1]
                dz = cand_p[a, m, 2] - cand_p[b, n, 2]
                d = math.sqrt(dx * dx + dy * dy + dz * dz)
                pairs[e, m, n] = psi_ar_scalar(d, k_a, r_eff, k_t)

    q = np.zeros((A, Mu))
    for a in range(A):
        for m in range(n_cands[a]):
            q[a, m] = 1.0 / n_cands[a]
    sweeps, max_change, underflow = gs_converge(q, n_cands, singles, edges,
                                                pairs, tol, max_sweeps)
    return (q, cand_u, cand_p, cand_v, n_cands, n_cone, fallback, sweeps,
            max_change, underflow)
