"""Compiled inner loops for the N-body engine.

All kernels operate on structure-of-arrays data (separate contiguous x/y/z
arrays) because LLVM vectorizes those loops well; the (3, N) layout used by
CloudState provides them as contiguous row views.

A velocity-Verlet step is split into three kernels: an O(N) first half-kick
plus drift, the O(N^2) pair-force pass (kept minimal so it vectorizes), and
an O(N) pass adding the trap/tickle fields and applying the second
half-kick. Only the pair-force pass is worth threading; the O(N) kernels
are serial (parallel launch overhead exceeds their work).

Determinism: every per-ion accumulation runs over j in ascending index order
and rows are fully independent, so results do not depend on how prange
distributes rows over threads. The serial/parallel dispatch threshold is a
fixed constant, so a given cloud size always takes the same code path.
"""

import numpy as np
from numba import njit, prange

from .constants import K_COULOMB

# Above this ion count the parallel Coulomb build wins over the serial twin
# (~80 us parallel launch overhead dominates small clouds).
PARALLEL_THRESHOLD = 160


def _coulomb_body(px, py, pz, ck, q_over_m, soft2, ax, ay, az):
    # ck[j] = K_COULOMB * charge_j; the per-target factor charge_i / mass_i
    # comes in through q_over_m. The self term contributes zero automatically
    # (dx = dy = dz = 0 while r2 = soft2 > 0 stays finite).
    n = px.shape[0]
    for i in prange(n):
        xi = px[i]
        yi = py[i]
        zi = pz[i]
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for j in range(n):
            dx = xi - px[j]
            dy = yi - py[j]
            dz = zi - pz[j]
            r2 = dx * dx + dy * dy + dz * dz + soft2
            w = ck[j] / (r2 * np.sqrt(r2))
            sx += w * dx
            sy += w * dy
            sz += w * dz
        scale = q_over_m[i]
        ax[i] = sx * scale
        ay[i] = sy * scale
        az[i] = sz * scale


coulomb_serial = njit(fastmath=True, cache=True)(_coulomb_body)
# cache=True forces a relocatable parfor build that loses SIMD here (3x
# slower); the parallel variant therefore recompiles per process.
coulomb_parallel = njit(parallel=True, fastmath=True, cache=False)(_coulomb_body)


@njit(fastmath=True, cache=True)
def coulomb_cells(px, py, pz, ck, q_over_m, soft2, order, cell_start, cell_count,
                  ncx, ncy, ncz, cell_of, reach, ax, ay, az):
    """Cell-list traversal of the same softened pair interaction.

    `order` lists ion indices sorted by cell id, `cell_start`/`cell_count`
    index into it; `reach` is the neighbor-cell range covering the cutoff.
    Summation order differs from the direct kernel (cells, then index), so
    results agree with it only to floating-point rounding.
    """
    n = px.shape[0]
    for i in range(n):
        xi = px[i]
        yi = py[i]
        zi = pz[i]
        ci = cell_of[i]
        cz = ci % ncz
        cy = (ci // ncz) % ncy
        cx = ci // (ncz * ncy)
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for ox in range(-reach, reach + 1):
            gx = cx + ox
            if gx < 0 or gx >= ncx:
                continue
            for oy in range(-reach, reach + 1):
                gy = cy + oy
                if gy < 0 or gy >= ncy:
                    continue
                for oz in range(-reach, reach + 1):
                    gz = cz + oz
                    if gz < 0 or gz >= ncz:
                        continue
                    c = (gx * ncy + gy) * ncz + gz
                    start = cell_start[c]
                    for k in range(start, start + cell_count[c]):
                        j = order[k]
                        if j == i:
                            continue
                        dx = xi - px[j]
                        dy = yi - py[j]
                        dz = zi - pz[j]
                        r2 = dx * dx + dy * dy + dz * dz + soft2
                        w = ck[j] / (r2 * np.sqrt(r2))
                        sx += w * dx
                        sy += w * dy
                        sz += w * dz
        scale = q_over_m[i]
        ax[i] = sx * scale
        ay[i] = sy * scale
        az[i] = sz * scale


@njit(fastmath=True, cache=True)
def kick_drift(px, py, pz, vx, vy, vz, acx, acy, acz, dt,
               nbeams, bkx, bky, bkz, bgamma, bs, bdelta, bkmag,
               hk_over_m, coolable):
    """First velocity-Verlet half-kick (cached forces + cooling) and drift."""
    n = px.shape[0]
    half = 0.5 * dt
    for i in range(n):
        cax = 0.0
        cay = 0.0
        caz = 0.0
        if nbeams > 0 and coolable[i] != 0:
            for b in range(nbeams):
                vpar = bkx[b] * vx[i] + bky[b] * vy[i] + bkz[b] * vz[i]
                det = 2.0 * (bdelta[b] - bkmag[b] * vpar) / bgamma[b]
                rate = 0.5 * bgamma[b] * bs[b] / (1.0 + bs[b] + det * det)
                f = hk_over_m[i] * rate
                cax += f * bkx[b]
                cay += f * bky[b]
                caz += f * bkz[b]
        vx[i] += half * (acx[i] + cax)
        vy[i] += half * (acy[i] + cay)
        vz[i] += half * (acz[i] + caz)
        px[i] += dt * vx[i]
        py[i] += dt * vy[i]
        pz[i] += dt * vz[i]


@njit(fastmath=True, cache=True)
def add_fields(px, py, pz, acx, acy, acz, use_base, t, mode, crf, cdc, wr2, wz2,
               omega_rf, tk_amp, tk_omega, ctk):
    """Add trap and tickle accelerations at time t to the Coulomb part.

    use_base = 0 discards the array contents first (Coulomb disabled).
    mode 0 = full RF quadrupole, mode 1 = secular (pseudopotential gradient).
    """
    n = px.shape[0]
    cosw = np.cos(omega_rf * t)
    costk = np.cos(tk_omega * t)
    for i in range(n):
        ax = acx[i] * use_base
        ay = acy[i] * use_base
        az = acz[i] * use_base
        if mode == 0:
            ax += -crf[i] * cosw * px[i] + cdc[i] * px[i]
            ay += crf[i] * cosw * py[i] + cdc[i] * py[i]
            az += -2.0 * cdc[i] * pz[i]
        else:
            ax += -wr2[i] * px[i]
            ay += -wr2[i] * py[i]
            az += -wz2[i] * pz[i]
        if tk_amp != 0.0:
            ax += -ctk[i] * costk * px[i]
            ay += ctk[i] * costk * py[i]
        acx[i] = ax
        acy[i] = ay
        acz[i] = az


@njit(fastmath=True, cache=True)
def second_kick(px, py, pz, vx, vy, vz, acx, acy, acz, dt,
                nbeams, bkx, bky, bkz, bgamma, bs, bdelta, bkmag,
                hk_over_m, coolable, rates, r0, z0):
    """Second half-kick with cooling at the half-step velocity.

    Fills `rates` with the per-ion scattering rate (recoil draws happen
    outside). Returns (max speed^2, ions outside the trap box).
    """
    n = px.shape[0]
    half = 0.5 * dt
    maxv2 = 0.0
    n_out = 0
    for i in range(n):
        cax = 0.0
        cay = 0.0
        caz = 0.0
        rate_sum = 0.0
        if nbeams > 0 and coolable[i] != 0:
            for b in range(nbeams):
                vpar = bkx[b] * vx[i] + bky[b] * vy[i] + bkz[b] * vz[i]
                det = 2.0 * (bdelta[b] - bkmag[b] * vpar) / bgamma[b]
                rate = 0.5 * bgamma[b] * bs[b] / (1.0 + bs[b] + det * det)
                rate_sum += rate
                f = hk_over_m[i] * rate
                cax += f * bkx[b]
                cay += f * bky[b]
                caz += f * bkz[b]
        rates[i] = rate_sum
        vx[i] += half * (acx[i] + cax)
        vy[i] += half * (acy[i] + cay)
        vz[i] += half * (acz[i] + caz)
        v2 = vx[i] * vx[i] + vy[i] * vy[i] + vz[i] * vz[i]
        if v2 > maxv2:
            maxv2 = v2
        if abs(px[i]) >= r0 or abs(py[i]) >= r0 or abs(pz[i]) >= z0:
            n_out += 1
    return maxv2, n_out


def effective_soft2(softening):
    soft2 = softening * softening
    # keeps the self term finite when softening is zero; real pairs unaffected
    return soft2 if soft2 > 0.0 else 1e-300


def coulomb_direct(px, py, pz, charges, q_over_m, softening):
    """Direct O(N^2) softened Coulomb accelerations, SoA interface."""
    n = px.shape[0]
    ax = np.empty(n)
    ay = np.empty(n)
    az = np.empty(n)
    ck = K_COULOMB * charges
    kern = coulomb_parallel if n >= PARALLEL_THRESHOLD else coulomb_serial
    kern(px, py, pz, ck, q_over_m, effective_soft2(softening), ax, ay, az)
    return ax, ay, az


def coulomb_direct_into(px, py, pz, ck, q_over_m, soft2, ax, ay, az):
    kern = coulomb_parallel if px.shape[0] >= PARALLEL_THRESHOLD else coulomb_serial
    kern(px, py, pz, ck, q_over_m, soft2, ax, ay, az)


def coulomb_cell_list(px, py, pz, charges, q_over_m, softening, cutoff=None):
    """Cell-list evaluation of the same interaction.

    With the default cutoff (none) a single cell covers the whole cloud, so
    every pair is included and the result matches the direct kernel up to
    floating-point summation order. An explicit cutoff truncates the
    interaction at roughly that range (one cell layer of reach).
    """
    n = px.shape[0]
    ax = np.empty(n)
    ay = np.empty(n)
    az = np.empty(n)
    if n == 0:
        return ax, ay, az
    cell_list_into(px, py, pz, K_COULOMB * charges, q_over_m,
                   effective_soft2(softening), cutoff, ax, ay, az)
    return ax, ay, az


def cell_list_into(px, py, pz, ck, q_over_m, soft2, cutoff, ax, ay, az):
    lo = np.array([px.min(), py.min(), pz.min()])
    hi = np.array([px.max(), py.max(), pz.max()])
    extent = float(np.max(hi - lo))
    if cutoff is None:
        cutoff = extent + 1e-12
    h = max(cutoff, 1e-12)
    ncx = int((hi[0] - lo[0]) / h) + 1
    ncy = int((hi[1] - lo[1]) / h) + 1
    ncz = int((hi[2] - lo[2]) / h) + 1
    ix = np.minimum(((px - lo[0]) / h).astype(np.int64), ncx - 1)
    iy = np.minimum(((py - lo[1]) / h).astype(np.int64), ncy - 1)
    iz = np.minimum(((pz - lo[2]) / h).astype(np.int64), ncz - 1)
    cell_of = (ix * ncy + iy) * ncz + iz
    order = np.argsort(cell_of, kind="stable").astype(np.int64)
    ncells = ncx * ncy * ncz
    cell_count = np.bincount(cell_of, minlength=ncells).astype(np.int64)
    cell_start = np.zeros(ncells, dtype=np.int64)
    np.cumsum(cell_count[:-1], out=cell_start[1:])
    coulomb_cells(px, py, pz, ck, q_over_m, soft2, order, cell_start, cell_count,
                  ncx, ncy, ncz, cell_of, 1, ax, ay, az)


def warmup():
    """Compile every kernel variant on tiny inputs (call before timing runs)."""
    n = 4
    px, py, pz, vx, vy, vz = [np.zeros(n) for _ in range(6)]
    ax, ay, az = [np.zeros(n) for _ in range(3)]
    one = np.ones(n)
    beam1 = np.ones(1)
    cool = np.ones(n, dtype=np.int64)
    rates = np.zeros(n)
    kick_drift(px, py, pz, vx, vy, vz, ax, ay, az, 1e-9,
               1, beam1, beam1, beam1, beam1, beam1, beam1, beam1, one, cool)
    add_fields(px, py, pz, ax, ay, az, 1.0, 0.0, 0, one, one, one, one, 1.0,
               1.0, 1.0, one)
    add_fields(px, py, pz, ax, ay, az, 0.0, 0.0, 1, one, one, one, one, 1.0,
               0.0, 0.0, one)
    second_kick(px, py, pz, vx, vy, vz, ax, ay, az, 1e-9,
                1, beam1, beam1, beam1, beam1, beam1, beam1, beam1, one, cool,
                rates, 1.0, 1.0)
    rng = np.random.default_rng(0)
    for kern in (coulomb_serial, coulomb_parallel):
        kern(rng.random(n), rng.random(n), rng.random(n), one, one, 1e-14,
             ax, ay, az)
    coulomb_cell_list(rng.random(n), rng.random(n), rng.random(n), one, one, 1e-7)
