"""Per-voxel kernels: numba-compiled versions with pure-numpy fallbacks.

Set ``PNPRR_NUMBA=0`` in the environment before import to force the numpy
path. Both paths produce the same numbers up to floating-point summation
order in the scatter kernel.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("PNPRR_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _cell(coords, dims):
    """Clamp coordinates and split them into base index, fraction and an
    in-range mask (derivatives vanish where a coordinate was clamped)."""
    d = len(dims)
    i0 = np.empty(coords.shape, dtype=np.intp)
    i1 = np.empty(coords.shape, dtype=np.intp)
    frac = np.empty(coords.shape, dtype=np.float64)
    live = np.empty(coords.shape, dtype=bool)
    for a in range(d):
        n = dims[a]
        p = coords[a]
        live[a] = (p >= 0.0) & (p <= n - 1)
        q = np.clip(p, 0.0, n - 1)
        base = np.floor(q).astype(np.intp)
        base = np.minimum(base, max(n - 2, 0))
        i0[a] = base
        i1[a] = np.minimum(base + 1, n - 1)
        frac[a] = q - base
    return i0, i1, frac, live


def _corners(d):
    return [tuple((c >> a) & 1 for a in range(d)) for c in range(2 ** d)]


def _np_interp(field, coords, with_grad):
    dims = field.shape
    d = len(dims)
    i0, i1, frac, live = _cell(coords, dims)
    out = np.zeros(coords.shape[1:])
    grad = np.zeros(coords.shape) if with_grad else None
    for corner in _corners(d):
        idx = tuple(i1[a] if corner[a] else i0[a] for a in range(d))
        val = field[idx]
        w = np.ones(coords.shape[1:])
        for a in range(d):
            w = w * (frac[a] if corner[a] else 1.0 - frac[a])
        out += w * val
        if with_grad:
            for b in range(d):
                wb = np.ones(coords.shape[1:])
                for a in range(d):
                    if a == b:
                        wb = wb * (1.0 if corner[a] else -1.0)
                    else:
                        wb = wb * (frac[a] if corner[a] else 1.0 - frac[a])
                grad[b] += wb * val
    if with_grad:
        for b in range(d):
            grad[b] *= live[b]
            # degenerate axis (n == 1): the field is constant along it
            if dims[b] == 1:
                grad[b] = 0.0
    return out, grad


def _np_scatter(values, coords, dims):
    d = len(dims)
    i0, i1, frac, _ = _cell(coords, dims)
    out = np.zeros(int(np.prod(dims)))
    for corner in _corners(d):
        idx = tuple(i1[a] if corner[a] else i0[a] for a in range(d))
        flat = np.ravel_multi_index(idx, dims).ravel()
        w = np.ones(coords.shape[1:])
        for a in range(d):
            w = w * (frac[a] if corner[a] else 1.0 - frac[a])
        out += np.bincount(flat, weights=(w * values).ravel(), minlength=out.size)
    return out.reshape(dims)


def _np_nlm(image, patch_radius, search_radius, h):
    """Non-local means with periodic boundaries (numpy path)."""
    from scipy.ndimage import uniform_filter

    d = image.ndim
    axes = tuple(range(d))
    h2 = h * h
    offsets = np.array(np.meshgrid(*[np.arange(-search_radius, search_radius + 1)] * d,
                                   indexing="ij")).reshape(d, -1).T
    acc = np.zeros(image.shape)
    wsum = np.zeros(image.shape)
    wmax = np.zeros(image.shape)
    for off in offsets:
        if not off.any():
            continue
        shifted = np.roll(image, tuple(-off), axis=axes)
        # mean squared patch distance at every voxel
        dist = uniform_filter((image - shifted) ** 2, size=2 * patch_radius + 1, mode="wrap")
        w = np.exp(-np.maximum(dist - 2.0 * h2, 0.0) / h2)
        acc += w * shifted
        wsum += w
        np.maximum(wmax, w, out=wmax)
    wself = np.where(wmax > 0.0, wmax, 1.0)
    return (acc + wself * image) / (wsum + wself)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _axis_cell(p, n):
        live = p >= 0.0 and p <= n - 1
        q = min(max(p, 0.0), n - 1.0)
        base = int(np.floor(q))
        if base > n - 2:
            base = max(n - 2, 0)
        top = min(base + 1, n - 1)
        return base, top, q - base, live

    @numba.njit(cache=True)
    def _nb_interp2(field, coords, out, grad, with_grad):
        ny, nx = field.shape
        m = coords.shape[1]
        for k in range(m):
            y0, y1, fy, ly = _axis_cell(coords[0, k], ny)
            x0, x1, fx, lx = _axis_cell(coords[1, k], nx)
            f00 = field[y0, x0]
            f01 = field[y0, x1]
            f10 = field[y1, x0]
            f11 = field[y1, x1]
            out[k] = ((1.0 - fy) * ((1.0 - fx) * f00 + fx * f01)
                      + fy * ((1.0 - fx) * f10 + fx * f11))
            if with_grad:
                gy = 0.0
                gx = 0.0
                if ly and ny > 1:
                    gy = (1.0 - fx) * (f10 - f00) + fx * (f11 - f01)
                if lx and nx > 1:
                    gx = (1.0 - fy) * (f01 - f00) + fy * (f11 - f10)
                grad[0, k] = gy
                grad[1, k] = gx

    @numba.njit(cache=True)
    def _nb_interp3(field, coords, out, grad, with_grad):
        nz, ny, nx = field.shape
        m = coords.shape[1]
        for k in range(m):
            z0, z1, fz, lz = _axis_cell(coords[0, k], nz)
            y0, y1, fy, ly = _axis_cell(coords[1, k], ny)
            x0, x1, fx, lx = _axis_cell(coords[2, k], nx)
            c000 = field[z0, y0, x0]
            c001 = field[z0, y0, x1]
            c010 = field[z0, y1, x0]
            c011 = field[z0, y1, x1]
            c100 = field[z1, y0, x0]
            c101 = field[z1, y0, x1]
            c110 = field[z1, y1, x0]
            c111 = field[z1, y1, x1]
            c00 = (1.0 - fx) * c000 + fx * c001
            c01 = (1.0 - fx) * c010 + fx * c011
            c10 = (1.0 - fx) * c100 + fx * c101
            c11 = (1.0 - fx) * c110 + fx * c111
            c0 = (1.0 - fy) * c00 + fy * c01
            c1 = (1.0 - fy) * c10 + fy * c11
            out[k] = (1.0 - fz) * c0 + fz * c1
            if with_grad:
                gz = 0.0
                gy = 0.0
                gx = 0.0
                if lz and nz > 1:
                    gz = c1 - c0
                if ly and ny > 1:
                    gy = (1.0 - fz) * (c01 - c00) + fz * (c11 - c10)
                if lx and nx > 1:
                    gx = ((1.0 - fz) * ((1.0 - fy) * (c001 - c000) + fy * (c011 - c010))
                          + fz * ((1.0 - fy) * (c101 - c100) + fy * (c111 - c110)))
                grad[0, k] = gz
                grad[1, k] = gy
                grad[2, k] = gx

    @numba.njit(cache=True)
    def _nb_scatter2(values, coords, out):
        ny, nx = out.shape
        for k in range(values.shape[0]):
            y0, y1, fy, _ = _axis_cell(coords[0, k], ny)
            x0, x1, fx, _ = _axis_cell(coords[1, k], nx)
            v = values[k]
            out[y0, x0] += (1.0 - fy) * (1.0 - fx) * v
            out[y0, x1] += (1.0 - fy) * fx * v
            out[y1, x0] += fy * (1.0 - fx) * v
            out[y1, x1] += fy * fx * v

    @numba.njit(cache=True)
    def _nb_scatter3(values, coords, out):
        nz, ny, nx = out.shape
        for k in range(values.shape[0]):
            z0, z1, fz, _ = _axis_cell(coords[0, k], nz)
            y0, y1, fy, _ = _axis_cell(coords[1, k], ny)
            x0, x1, fx, _ = _axis_cell(coords[2, k], nx)
            v = values[k]
            out[z0, y0, x0] += (1.0 - fz) * (1.0 - fy) * (1.0 - fx) * v
            out[z0, y0, x1] += (1.0 - fz) * (1.0 - fy) * fx * v
            out[z0, y1, x0] += (1.0 - fz) * fy * (1.0 - fx) * v
            out[z0, y1, x1] += (1.0 - fz) * fy * fx * v
            out[z1, y0, x0] += fz * (1.0 - fy) * (1.0 - fx) * v
            out[z1, y0, x1] += fz * (1.0 - fy) * fx * v
            out[z1, y1, x0] += fz * fy * (1.0 - fx) * v
            out[z1, y1, x1] += fz * fy * fx * v

    # The NLM kernels work on the image padded periodically by pr + sr. For
    # each search offset the squared difference is formed on the image grid
    # grown by pr, then box-summed one axis at a time with running sums.

    @numba.njit(cache=True)
    def _nb_nlm2(P, ny, nx, pr, sr, h):
        h2 = h * h
        inv = 1.0 / (2 * pr + 1) ** 2
        pad = pr + sr
        ey = ny + 2 * pr
        ex = nx + 2 * pr
        acc = np.zeros((ny, nx))
        wsum = np.zeros((ny, nx))
        wmax = np.zeros((ny, nx))
        E = np.empty((ey, ex))
        R = np.empty((ey, nx))
        col = np.empty(nx)
        for di in range(-sr, sr + 1):
            for dj in range(-sr, sr + 1):
                if di == 0 and dj == 0:
                    continue
                for a in range(ey):
                    for b in range(ex):
                        t = P[a + sr, b + sr] - P[a + sr + di, b + sr + dj]
                        E[a, b] = t * t
                for a in range(ey):
                    s = 0.0
                    for b in range(2 * pr + 1):
                        s += E[a, b]
                    for j in range(nx):
                        R[a, j] = s
                        if j + 1 < nx:
                            s += E[a, j + 2 * pr + 1] - E[a, j]
                for j in range(nx):
                    col[j] = 0.0
                for a in range(2 * pr + 1):
                    for j in range(nx):
                        col[j] += R[a, j]
                for i in range(ny):
                    for j in range(nx):
                        w = np.exp(-max(col[j] * inv - 2.0 * h2, 0.0) / h2)
                        acc[i, j] += w * P[i + pad + di, j + pad + dj]
                        wsum[i, j] += w
                        if w > wmax[i, j]:
                            wmax[i, j] = w
                    if i + 1 < ny:
                        for j in range(nx):
                            col[j] += R[i + 2 * pr + 1, j] - R[i, j]
        out = np.empty((ny, nx))
        for i in range(ny):
            for j in range(nx):
                ws = wmax[i, j] if wmax[i, j] > 0.0 else 1.0
                out[i, j] = (acc[i, j] + ws * P[i + pad, j + pad]) / (wsum[i, j] + ws)
        return out

    @numba.njit(cache=True)
    def _nb_nlm3(P, nz, ny, nx, pr, sr, h):
        h2 = h * h
        inv = 1.0 / (2 * pr + 1) ** 3
        pad = pr + sr
        k = 2 * pr + 1
        ez = nz + 2 * pr
        ey = ny + 2 * pr
        ex = nx + 2 * pr
        acc = np.zeros((nz, ny, nx))
        wsum = np.zeros((nz, ny, nx))
        wmax = np.zeros((nz, ny, nx))
        E = np.empty((ez, ey, ex))
        A = np.empty((ez, ey, nx))
        B = np.empty((ez, ny, nx))
        C = np.empty((nz, ny, nx))
        for di in range(-sr, sr + 1):
            for dj in range(-sr, sr + 1):
                for dl in range(-sr, sr + 1):
                    if di == 0 and dj == 0 and dl == 0:
                        continue
                    for a in range(ez):
                        for b in range(ey):
                            for c in range(ex):
                                t = (P[a + sr, b + sr, c + sr]
                                     - P[a + sr + di, b + sr + dj, c + sr + dl])
                                E[a, b, c] = t * t
                    for a in range(ez):
                        for b in range(ey):
                            s = 0.0
                            for c in range(k):
                                s += E[a, b, c]
                            for l in range(nx):
                                A[a, b, l] = s
                                if l + 1 < nx:
                                    s += E[a, b, l + k] - E[a, b, l]
                    for a in range(ez):
                        for l in range(nx):
                            B[a, 0, l] = 0.0
                        for b in range(k):
                            for l in range(nx):
                                B[a, 0, l] += A[a, b, l]
                        for j in range(1, ny):
                            for l in range(nx):
                                B[a, j, l] = B[a, j - 1, l] + A[a, j + k - 1, l] - A[a, j - 1, l]
                    for j in range(ny):
                        for l in range(nx):
                            C[0, j, l] = 0.0
                    for a in range(k):
                        for j in range(ny):
                            for l in range(nx):
                                C[0, j, l] += B[a, j, l]
                    for i in range(1, nz):
                        for j in range(ny):
                            for l in range(nx):
                                C[i, j, l] = C[i - 1, j, l] + B[i + k - 1, j, l] - B[i - 1, j, l]
                    for i in range(nz):
                        for j in range(ny):
                            for l in range(nx):
                                w = np.exp(-max(C[i, j, l] * inv - 2.0 * h2, 0.0) / h2)
                                acc[i, j, l] += w * P[i + pad + di, j + pad + dj, l + pad + dl]
                                wsum[i, j, l] += w
                                if w > wmax[i, j, l]:
                                    wmax[i, j, l] = w
        out = np.empty((nz, ny, nx))
        for i in range(nz):
            for j in range(ny):
                for l in range(nx):
                    ws = wmax[i, j, l] if wmax[i, j, l] > 0.0 else 1.0
                    out[i, j, l] = ((acc[i, j, l] + ws * P[i + pad, j + pad, l + pad])
                                    / (wsum[i, j, l] + ws))
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def interp_linear(field, coords, with_grad=False, use_numba=None):
    """Sample ``field`` at ``coords`` (shape ``(d, ...)``) with clamped
    linear interpolation.

    Returns ``(values, grad)`` where ``grad`` has shape ``coords.shape`` and
    holds the derivative of the interpolant with respect to each coordinate
    (``None`` unless ``with_grad``).
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    field = np.ascontiguousarray(field, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    d = field.ndim
    if not use_numba or d not in (2, 3):
        return _np_interp(field, coords, with_grad)
    shape = coords.shape[1:]
    flat = np.ascontiguousarray(coords.reshape(d, -1))
    out = np.empty(flat.shape[1])
    grad = np.zeros(flat.shape) if with_grad else np.zeros((d, 1))
    kern = _nb_interp2 if d == 2 else _nb_interp3
    kern(field, flat, out, grad, with_grad)
    if with_grad:
        return out.reshape(shape), grad.reshape(coords.shape)
    return out.reshape(shape), None


def scatter_linear(values, coords, dims, use_numba=None):
    """Transpose of :func:`interp_linear` with respect to the field values."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    dims = tuple(int(n) for n in dims)
    values = np.asarray(values, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    d = len(dims)
    if not use_numba or d not in (2, 3):
        return _np_scatter(values, coords, dims)
    out = np.zeros(dims)
    kern = _nb_scatter2 if d == 2 else _nb_scatter3
    kern(np.ascontiguousarray(values.ravel()),
         np.ascontiguousarray(coords.reshape(d, -1)), out)
    return out


def nlm(image, patch_radius, search_radius, h, use_numba=None):
    """Periodic-boundary non-local means; see :func:`pnprr.denoise.nlm_denoise`."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    image = np.asarray(image, dtype=np.float64)
    if not use_numba or image.ndim not in (2, 3):
        return _np_nlm(image, patch_radius, search_radius, float(h))
    padded = np.pad(image, patch_radius + search_radius, mode="wrap")
    kern = _nb_nlm2 if image.ndim == 2 else _nb_nlm3
    return kern(padded, *image.shape, int(patch_radius), int(search_radius), float(h))
