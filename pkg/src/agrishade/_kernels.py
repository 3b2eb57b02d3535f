"""Compiled geometry kernels.

Polygons are passed as ``(m, K, 2)`` float arrays with a ``(m,)`` vertex-count
array. Shadow quads are always 4-vertex, counter-clockwise.
"""

import math

import numpy as np
from numba import njit

MAXV = 40          # vertices per working polygon
PIECE_CAP = 4096   # convex pieces alive while subtracting one polygon
EPS_AREA = 1e-14
EPS_LEN = 1e-9


@njit(cache=True, nogil=True)
def poly_area(poly, n):
    a = 0.0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        a += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return 0.5 * a


@njit(cache=True, nogil=True)
def clip_halfplane(src, n, ax, ay, bx, by, keep_left, dst):
    """Sutherland-Hodgman against the line a->b; returns the vertex count."""
    if n == 0:
        return 0
    ex = bx - ax
    ey = by - ay
    sgn = 1.0 if keep_left else -1.0
    m = 0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        px, py = src[i, 0], src[i, 1]
        qx, qy = src[j, 0], src[j, 1]
        dp = sgn * (ex * (py - ay) - ey * (px - ax))
        dq = sgn * (ex * (qy - ay) - ey * (qx - ax))
        if dp >= 0.0:
            if m >= MAXV:
                raise ValueError("polygon vertex buffer overflow")
            dst[m, 0] = px
            dst[m, 1] = py
            m += 1
        if (dp >= 0.0 and dq < 0.0) or (dp < 0.0 and dq >= 0.0):
            if dp != dq:
                t = dp / (dp - dq)
                if m >= MAXV:
                    raise ValueError("polygon vertex buffer overflow")
                dst[m, 0] = px + t * (qx - px)
                dst[m, 1] = py + t * (qy - py)
                m += 1
    # drop consecutive duplicates
    k = 0
    for i in range(m):
        if k > 0 and abs(dst[i, 0] - dst[k - 1, 0]) <= 1e-15 and abs(dst[i, 1] - dst[k - 1, 1]) <= 1e-15:
            continue
        dst[k, 0] = dst[i, 0]
        dst[k, 1] = dst[i, 1]
        k += 1
    if k > 1 and abs(dst[0, 0] - dst[k - 1, 0]) <= 1e-15 and abs(dst[0, 1] - dst[k - 1, 1]) <= 1e-15:
        k -= 1
    return k


@njit(cache=True, nogil=True)
def _bbox(poly, n, out):
    out[0] = out[1] = np.inf
    out[2] = out[3] = -np.inf
    for i in range(n):
        out[0] = min(out[0], poly[i, 0])
        out[1] = min(out[1], poly[i, 1])
        out[2] = max(out[2], poly[i, 0])
        out[3] = max(out[3], poly[i, 1])


@njit(cache=True, nogil=True)
def _overlap(a, b):
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


@njit(cache=True, nogil=True)
def union_area(polys, counts, x0, y0, x1, y1):
    """Area of the union of convex CCW polygons clipped to a rectangle.

    Each polygon is reduced to the part not covered by earlier ones, as a
    set of disjoint convex pieces obtained by half-plane splitting.
    """
    m = polys.shape[0]
    clipped = np.empty((m, MAXV, 2))
    ccount = np.zeros(m, np.int64)
    boxes = np.empty((m, 4))
    areas = np.zeros(m)
    t1 = np.empty((MAXV, 2))
    t2 = np.empty((MAXV, 2))
    for i in range(m):
        n = counts[i]
        for k in range(n):
            t1[k, 0] = polys[i, k, 0]
            t1[k, 1] = polys[i, k, 1]
        if poly_area(t1, n) < 0.0:
            for k in range(n // 2):
                a0, a1 = t1[k, 0], t1[k, 1]
                t1[k, 0], t1[k, 1] = t1[n - 1 - k, 0], t1[n - 1 - k, 1]
                t1[n - 1 - k, 0], t1[n - 1 - k, 1] = a0, a1
        n = clip_halfplane(t1, n, x0, y0, x1, y0, True, t2)
        n = clip_halfplane(t2, n, x1, y0, x1, y1, True, t1)
        n = clip_halfplane(t1, n, x1, y1, x0, y1, True, t2)
        n = clip_halfplane(t2, n, x0, y1, x0, y0, True, t1)
        ccount[i] = n
        for k in range(n):
            clipped[i, k, 0] = t1[k, 0]
            clipped[i, k, 1] = t1[k, 1]
        if n >= 3:
            areas[i] = poly_area(t1, n)
            _bbox(t1, n, boxes[i])

    buf_a = np.empty((PIECE_CAP, MAXV, 2))
    buf_b = np.empty((PIECE_CAP, MAXV, 2))
    cnt_a = np.zeros(PIECE_CAP, np.int64)
    cnt_b = np.zeros(PIECE_CAP, np.int64)
    cur = np.empty((MAXV, 2))
    tmp = np.empty((MAXV, 2))
    out = np.empty((MAXV, 2))
    pbox = np.empty(4)
    total = 0.0
    for i in range(m):
        if areas[i] <= EPS_AREA:
            continue
        na = 1
        cnt_a[0] = ccount[i]
        for k in range(ccount[i]):
            buf_a[0, k, 0] = clipped[i, k, 0]
            buf_a[0, k, 1] = clipped[i, k, 1]
        for j in range(i):
            if areas[j] <= EPS_AREA or not _overlap(boxes[i], boxes[j]):
                continue
            nj = ccount[j]
            nb = 0
            for q in range(na):
                nq = cnt_a[q]
                _bbox(buf_a[q], nq, pbox)
                if not _overlap(pbox, boxes[j]):
                    if nb >= PIECE_CAP:
                        raise ValueError("union piece buffer overflow")
                    for k in range(nq):
                        buf_b[nb, k, 0] = buf_a[q, k, 0]
                        buf_b[nb, k, 1] = buf_a[q, k, 1]
                    cnt_b[nb] = nq
                    nb += 1
                    continue
                nc = nq
                for k in range(nq):
                    cur[k, 0] = buf_a[q, k, 0]
                    cur[k, 1] = buf_a[q, k, 1]
                for e in range(nj):
                    f = e + 1 if e + 1 < nj else 0
                    ax, ay = clipped[j, e, 0], clipped[j, e, 1]
                    bx, by = clipped[j, f, 0], clipped[j, f, 1]
                    no = clip_halfplane(cur, nc, ax, ay, bx, by, False, out)
                    if no >= 3 and poly_area(out, no) > EPS_AREA:
                        if nb >= PIECE_CAP:
                            raise ValueError("union piece buffer overflow")
                        for k in range(no):
                            buf_b[nb, k, 0] = out[k, 0]
                            buf_b[nb, k, 1] = out[k, 1]
                        cnt_b[nb] = no
                        nb += 1
                    nc = clip_halfplane(cur, nc, ax, ay, bx, by, True, tmp)
                    for k in range(nc):
                        cur[k, 0] = tmp[k, 0]
                        cur[k, 1] = tmp[k, 1]
                    if nc < 3 or poly_area(cur, nc) <= EPS_AREA:
                        break
            buf_a, buf_b = buf_b, buf_a
            cnt_a, cnt_b = cnt_b, cnt_a
            na = nb
            if na == 0:
                break
        for q in range(na):
            total += poly_area(buf_a[q], cnt_a[q])
    return total


@njit(cache=True, nogil=True)
def project_to_ground(quads, s, out):
    """Project (n, 4, 3) corners along ``s`` onto z = 0; out is (n, 4, 2), CCW."""
    n = quads.shape[0]
    for i in range(n):
        for k in range(4):
            t = -quads[i, k, 2] / s[2]
            out[i, k, 0] = quads[i, k, 0] + t * s[0]
            out[i, k, 1] = quads[i, k, 1] + t * s[1]
        a = 0.0
        for k in range(4):
            j = (k + 1) % 4
            a += out[i, k, 0] * out[i, j, 1] - out[i, j, 0] * out[i, k, 1]
        if a < 0.0:
            for c in range(2):
                tmp = out[i, 1, c]
                out[i, 1, c] = out[i, 3, c]
                out[i, 3, c] = tmp


@njit(cache=True, nogil=True)
def shading_table(quads, dirs, x0, y0, x1, y1):
    """Shaded fraction of the crop rectangle for each direction in ``dirs``."""
    k = dirs.shape[0]
    n = quads.shape[0]
    res = np.zeros(k)
    if n == 0:
        return res
    shadows = np.empty((n, 4, 2))
    counts = np.full(n, 4, np.int64)
    a_tot = (x1 - x0) * (y1 - y0)
    for d in range(k):
        if dirs[d, 2] <= 0.0:
            continue
        project_to_ground(quads, dirs[d], shadows)
        res[d] = union_area(shadows, counts, x0, y0, x1, y1) / a_tot
    return res


@njit(cache=True, nogil=True)
def rasterize_union(polys, counts, x0, y0, res, nx, ny, tol):
    """Cells (ny, nx) whose centre lies inside any polygon (boundary inclusive)."""
    grid = np.zeros((ny, nx), np.bool_)
    m = polys.shape[0]
    for i in range(m):
        n = counts[i]
        if n < 3 or abs(poly_area(polys[i], n)) <= EPS_AREA:
            continue
        sgn = 1.0 if poly_area(polys[i], n) > 0 else -1.0
        xmin = ymin = np.inf
        xmax = ymax = -np.inf
        for k in range(n):
            xmin = min(xmin, polys[i, k, 0])
            xmax = max(xmax, polys[i, k, 0])
            ymin = min(ymin, polys[i, k, 1])
            ymax = max(ymax, polys[i, k, 1])
        ix0 = max(0, int(math.ceil((xmin - tol - x0) / res - 0.5)))
        ix1 = min(nx - 1, int(math.floor((xmax + tol - x0) / res - 0.5)))
        iy0 = max(0, int(math.ceil((ymin - tol - y0) / res - 0.5)))
        iy1 = min(ny - 1, int(math.floor((ymax + tol - y0) / res - 0.5)))
        for iy in range(iy0, iy1 + 1):
            py = y0 + (iy + 0.5) * res
            for ix in range(ix0, ix1 + 1):
                if grid[iy, ix]:
                    continue
                px = x0 + (ix + 0.5) * res
                inside = True
                for k in range(n):
                    j = k + 1 if k + 1 < n else 0
                    ex = polys[i, j, 0] - polys[i, k, 0]
                    ey = polys[i, j, 1] - polys[i, k, 1]
                    cr = sgn * (ex * (py - polys[i, k, 1]) - ey * (px - polys[i, k, 0]))
                    if cr < -tol * math.sqrt(ex * ex + ey * ey):
                        inside = False
                        break
                if inside:
                    grid[iy, ix] = True
    return grid


@njit(cache=True, nogil=True)
def ray_hits_quads(origin, d, quads, tol):
    """True if the ray origin + t*d (t > 0) meets any quad (cyclic corner order)."""
    for i in range(quads.shape[0]):
        p0 = quads[i, 0]
        e1 = quads[i, 1] - p0
        e2 = quads[i, 3] - p0
        nx_ = e1[1] * e2[2] - e1[2] * e2[1]
        ny_ = e1[2] * e2[0] - e1[0] * e2[2]
        nz_ = e1[0] * e2[1] - e1[1] * e2[0]
        den = nx_ * d[0] + ny_ * d[1] + nz_ * d[2]
        if den == 0.0:
            continue
        t = (nx_ * (p0[0] - origin[0]) + ny_ * (p0[1] - origin[1]) + nz_ * (p0[2] - origin[2])) / den
        if t <= 0.0:
            continue
        hx = origin[0] + t * d[0] - p0[0]
        hy = origin[1] + t * d[1] - p0[1]
        hz = origin[2] + t * d[2] - p0[2]
        l1 = e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]
        l2 = e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]
        u = (hx * e1[0] + hy * e1[1] + hz * e1[2]) / l1
        v = (hx * e2[0] + hy * e2[1] + hz * e2[2]) / l2
        if -tol <= u <= 1.0 + tol and -tol <= v <= 1.0 + tol:
            return True
    return False


@njit(cache=True, nogil=True)
def _inside_footprint(quad, cx, cy, tol):
    # quad corners in cyclic order; works for either orientation
    pos = False
    neg = False
    for k in range(4):
        j = (k + 1) % 4
        ex = quad[j, 0] - quad[k, 0]
        ey = quad[j, 1] - quad[k, 1]
        cr = ex * (cy - quad[k, 1]) - ey * (cx - quad[k, 0])
        if cr > tol:
            pos = True
        elif cr < -tol:
            neg = True
    return not (pos and neg)


@njit(cache=True, nogil=True)
def _tan_of(h, s):
    if s > 0.0:
        return h / s
    if h > 0.0:
        return np.inf
    if h < 0.0:
        return -np.inf
    return 0.0


@njit(cache=True, nogil=True)
def _approx_deg(r):
    # arctangent within ~0.25 deg; only seeds the exact table search
    ar = abs(r)
    if ar <= 1.0:
        t = ar * (0.7853981633974483 + 0.273 * (1.0 - ar))
    else:
        q = 1.0 / ar
        t = 1.5707963267948966 - q * (0.7853981633974483 + 0.273 * (1.0 - q))
    t = math.degrees(t)
    return t if r >= 0.0 else -t


@njit(cache=True, nogil=True)
def _first_at_or_above(r, tans, da, na):
    """Smallest node index whose altitude tangent is >= r (boundary inclusive)."""
    if r == -np.inf:
        return 0
    if r == np.inf:
        return na - 1
    tol = 1e-11 * (1.0 + r * r)
    k = int(_approx_deg(r) / da)
    if k < 0:
        k = 0
    elif k > na - 1:
        k = na - 1
    while k > 0 and tans[k - 1] >= r - tol:
        k -= 1
    while k < na and tans[k] < r - tol:
        k += 1
    return k


@njit(cache=True, nogil=True)
def _last_at_or_below(r, tans, da, na):
    """Largest node index whose altitude tangent is <= r; -1 when none."""
    if r == np.inf:
        return na - 1
    if r == -np.inf:
        return -1
    tol = 1e-11 * (1.0 + r * r)
    k = int(_approx_deg(r) / da)
    if k < 0:
        k = 0
    elif k > na - 1:
        k = na - 1
    while k + 1 < na and tans[k + 1] <= r + tol:
        k += 1
    while k >= 0 and tans[k] > r + tol:
        k -= 1
    return k


@njit(cache=True, nogil=True)
def per_cell_diffuse(quads, xs, ys, da, na, az0, dz, nz, weights):
    """Cosine-weighted blocked fraction of the discretised dome for each cell.

    Altitude nodes are ``i * da`` (i < na) and azimuth nodes ``az0 + j * dz``
    (j < nz), both in degrees, azimuth measured in the layout frame.
    For each azimuth node, the vertical half-plane through the cell cuts each
    panel in a segment whose altitude span gives the blocked nodes exactly.
    Returns a (len(ys) * len(xs),) array ordered x-fastest.
    """
    n = quads.shape[0]
    nxc = xs.shape[0]
    nyc = ys.shape[0]
    out = np.zeros(nyc * nxc)
    if n == 0:
        return out
    cumw = np.zeros(na + 1)
    for i in range(na):
        cumw[i + 1] = cumw[i] + weights[i]
    total = nz * cumw[na]
    tans = np.empty(na)
    for i in range(na):
        tans[i] = np.inf if i * da >= 90.0 - 1e-12 else math.tan(math.radians(i * da))
    sin_g = np.empty(nz)
    cos_g = np.empty(nz)
    for j in range(nz):
        g = math.radians(az0 + j * dz)
        sin_g[j] = math.sin(g)
        cos_g[j] = math.cos(g)
    zmax = np.empty(n)
    for p in range(n):
        zmax[p] = max(max(quads[p, 0, 2], quads[p, 1, 2]), max(quads[p, 2, 2], quads[p, 3, 2]))

    lo_buf = np.empty((nz, n), np.int64)
    hi_buf = np.empty((nz, n), np.int64)
    cnt = np.zeros(nz, np.int64)
    rel = np.empty((4, 3))
    ps = np.empty(4)
    ph = np.empty(4)
    dd = np.empty(4)
    eps_deg = 1e-9

    for iy in range(nyc):
        cy = ys[iy]
        for ix in range(nxc):
            cx = xs[ix]
            cnt[:] = 0
            for p in range(n):
                if zmax[p] <= 0.0:
                    continue
                for k in range(4):
                    rel[k, 0] = quads[p, k, 0] - cx
                    rel[k, 1] = quads[p, k, 1] - cy
                    rel[k, 2] = quads[p, k, 2]
                if _inside_footprint(quads[p], cx, cy, 1e-9):
                    j_lo = 0
                    j_hi = nz - 1
                else:
                    g0 = math.degrees(math.atan2(rel[0, 0], rel[0, 1]))
                    gmin = 0.0
                    gmax = 0.0
                    for k in range(1, 4):
                        dg = math.degrees(math.atan2(rel[k, 0], rel[k, 1])) - g0
                        if dg > 180.0:
                            dg -= 360.0
                        elif dg <= -180.0:
                            dg += 360.0
                        gmin = min(gmin, dg)
                        gmax = max(gmax, dg)
                    j_lo = int(math.ceil((g0 + gmin - eps_deg - az0) / dz))
                    j_hi = int(math.floor((g0 + gmax + eps_deg - az0) / dz))
                    if j_hi - j_lo >= nz:
                        j_lo = 0
                        j_hi = nz - 1
                for jj in range(j_lo, j_hi + 1):
                    j = jj % nz
                    sg = sin_g[j]
                    cg = cos_g[j]
                    # plane through the cell containing the azimuth direction (sg, cg)
                    npts = 0
                    for k in range(4):
                        dd[k] = cg * rel[k, 0] - sg * rel[k, 1]
                    for k in range(4):
                        k2 = (k + 1) & 3
                        d1 = dd[k]
                        d2 = dd[k2]
                        if abs(d1) <= 1e-10:
                            ps[npts] = sg * rel[k, 0] + cg * rel[k, 1]
                            ph[npts] = rel[k, 2]
                            npts += 1
                        elif (d1 < -1e-10 and d2 > 1e-10) or (d2 < -1e-10 and d1 > 1e-10):
                            t = d1 / (d1 - d2)
                            qx = rel[k, 0] + t * (rel[k2, 0] - rel[k, 0])
                            qy = rel[k, 1] + t * (rel[k2, 1] - rel[k, 1])
                            ps[npts] = sg * qx + cg * qy
                            ph[npts] = rel[k, 2] + t * (rel[k2, 2] - rel[k, 2])
                            npts += 1
                    if npts == 0:
                        continue
                    a = 0
                    b = npts - 1
                    if npts > 2:
                        # segment end points: the farthest pair
                        best = -1.0
                        for u in range(npts):
                            for v in range(u + 1, npts):
                                d2 = (ps[u] - ps[v]) ** 2 + (ph[u] - ph[v]) ** 2
                                if d2 > best:
                                    best = d2
                                    a = u
                                    b = v
                    s1, h1, s2, h2 = ps[a], ph[a], ps[b], ph[b]
                    if s1 < 0.0 and s2 < 0.0:
                        continue
                    # end points as tangents of their altitude (+-inf at the zenith/nadir)
                    r1 = _tan_of(h1, s1)
                    r2 = _tan_of(h2, s2)
                    if s1 < 0.0 or s2 < 0.0:
                        h0 = h1 + (h2 - h1) * (0.0 - s1) / (s2 - s1)
                        across = np.inf if h0 > 0.0 else -np.inf
                        if s1 < 0.0:
                            r1 = across
                        else:
                            r2 = across
                    i_lo = _first_at_or_above(min(r1, r2), tans, da, na)
                    i_hi = _last_at_or_below(max(r1, r2), tans, da, na)
                    if i_lo > i_hi:
                        continue
                    c = cnt[j]
                    lo_buf[j, c] = i_lo
                    hi_buf[j, c] = i_hi
                    cnt[j] = c + 1

            acc = 0.0
            for j in range(nz):
                c = cnt[j]
                if c == 0:
                    continue
                if c == 1:
                    acc += cumw[hi_buf[j, 0] + 1] - cumw[lo_buf[j, 0]]
                    continue
                # insertion sort by lower index, then merge
                for u in range(1, c):
                    kl = lo_buf[j, u]
                    kh = hi_buf[j, u]
                    v = u - 1
                    while v >= 0 and lo_buf[j, v] > kl:
                        lo_buf[j, v + 1] = lo_buf[j, v]
                        hi_buf[j, v + 1] = hi_buf[j, v]
                        v -= 1
                    lo_buf[j, v + 1] = kl
                    hi_buf[j, v + 1] = kh
                cl = lo_buf[j, 0]
                ch = hi_buf[j, 0]
                for u in range(1, c):
                    if lo_buf[j, u] <= ch + 1:
                        if hi_buf[j, u] > ch:
                            ch = hi_buf[j, u]
                    else:
                        acc += cumw[ch + 1] - cumw[cl]
                        cl = lo_buf[j, u]
                        ch = hi_buf[j, u]
                acc += cumw[ch + 1] - cumw[cl]
            out[iy * nxc + ix] = acc / total
    return out
