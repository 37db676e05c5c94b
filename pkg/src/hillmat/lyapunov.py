"""Lyapunov values Delta_m(z), branch tracking, and the discriminant.

The N values Delta_m(z) = (tau_m + 1/tau_m)/2 are read off as the doubly
degenerate eigenvalues of the L matrix; near z = 0, where the balanced
matrix is singular, they fall back to pairing the multipliers of M itself.
Branches carry no intrinsic labels, so continuity along paths is
established by minimal-distance matching between consecutive multisets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .monodromy import SolverConfig, integrate_monodromy_batch, l_matrix


class PairingError(RuntimeError):
    """Eigenvalues of L did not group into N near-identical pairs."""


class TrackingError(RuntimeError):
    """Branch matching stayed ambiguous after path subdivision."""


@dataclass(frozen=True)
class LyapunovBranchSet:
    """Multiset of Lyapunov values at one z.

    ``deltas`` carries an implicit factor exp(log_scale) when the sample was
    rescaled at large |Im z|.  ``labels[i]`` gives the branch id assigned by
    tracking; None outside of a tracked path.
    """

    z: complex
    deltas: np.ndarray
    collision_flag: bool = False
    degenerate_flag: bool = False
    labels: tuple | None = None
    pair_gap: float = 0.0
    log_scale: float = 0.0


def _greedy_pairs(vals):
    """Nearest-pair decomposition by repeatedly extracting the closest pair."""
    vals = list(vals)
    means = []
    worst = 0.0
    while len(vals) > 1:
        arr = np.asarray(vals)
        diff = np.abs(arr[:, None] - arr[None, :])
        np.fill_diagonal(diff, np.inf)
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        worst = max(worst, diff[i, j])
        means.append(0.5 * (arr[i] + arr[j]))
        for k in sorted((int(i), int(j)), reverse=True):
            vals.pop(k)
    return np.array(means), worst


def _deltas_from_sample(ms, cfg):
    """Lyapunov multiset for one monodromy sample."""
    if abs(ms.z) <= cfg.small_z:
        tau = np.linalg.eigvals(ms.monodromy)
        cand = 0.5 * (tau + 1.0 / tau)       # each Delta appears twice
    else:
        cand = np.linalg.eigvals(l_matrix(ms))
    deltas, worst = _greedy_pairs(cand)
    scale = 1.0 + np.abs(deltas).max(initial=0.0)
    if worst > cfg.pair_tol * scale:
        gaps = ", ".join(f"{g:.2e}" for g in sorted(np.abs(np.subtract.outer(cand, cand))[np.triu_indices(len(cand), 1)])[: 4])
        raise PairingError(
            f"z={ms.z}: eigenvalues of L do not pair into doubles "
            f"(worst gap {worst:.3e}, tol {cfg.pair_tol * scale:.3e}; "
            f"smallest pairwise gaps {gaps})")
    order = np.lexsort((deltas.imag, deltas.real))
    return deltas[order], worst


def _min_pairwise_gap(deltas):
    if len(deltas) < 2:
        return np.inf
    diff = np.abs(deltas[:, None] - deltas[None, :])
    np.fill_diagonal(diff, np.inf)
    return float(diff.min())


def lyapunov_values_batch(p, zs, cfg=None, steps=None):
    """Branch sets at each z (shared integrator step count)."""
    cfg = cfg or SolverConfig()
    samples = integrate_monodromy_batch(p, zs, cfg=cfg, steps=steps)
    out = []
    for ms in samples:
        deltas, worst = _deltas_from_sample(ms, cfg)
        gap = _min_pairwise_gap(deltas)
        scale = 1.0 + np.abs(deltas).max(initial=0.0)
        out.append(LyapunovBranchSet(
            z=ms.z, deltas=deltas, pair_gap=worst,
            collision_flag=bool(gap < cfg.merge_tol * scale),
            log_scale=ms.log_scale))
    return out


def lyapunov_values(p, z, cfg=None, steps=None):
    return lyapunov_values_batch(p, [z], cfg=cfg, steps=steps)[0]


def delta_array_batch(p, zs, cfg=None, steps=None):
    """(len(zs), N) array of Lyapunov values; fast path for sweeps."""
    sets = lyapunov_values_batch(p, zs, cfg=cfg, steps=steps)
    return np.array([bs.deltas for bs in sets])


# ---------------------------------------------------------------------------
# structural degeneracy

_PROBE_POINTS = (0.7301 + 0.4105j, 1.9113 + 1.0516j, 3.3721 + 0.5772j,
                 0.3141 + 1.7183j)


def coincidence_signature(p, cfg=None):
    """Multiplicities of permanently coincident branches, or None.

    Probes a fixed set of generic z values; branches that coincide at every
    probe are treated as structurally identical (block-diagonal potentials
    with equal blocks, the free operator, ...).  Returns the sorted
    multiplicity pattern, e.g. (1, 2), or None when all N branches are
    distinct functions.
    """
    cfg = cfg or SolverConfig()
    scale = 1.0 + abs(p.mean).max(initial=0.0)
    zs = [scale * w for w in _PROBE_POINTS]
    patterns = []
    for bs in lyapunov_values_batch(p, zs, cfg=cfg):
        tol = 1e-9 * (1.0 + np.abs(bs.deltas).max())
        mult = _dedupe(bs.deltas, tol)[1]
        patterns.append(tuple(sorted(mult)))
    if all(pat == (1,) * p.dim for pat in patterns):
        return None
    # keep the coarsest pattern seen at every probe
    if len(set(patterns)) == 1:
        return patterns[0]
    return max(patterns, key=lambda pat: pat[-1])


def _dedupe(deltas, tol):
    reps, mult = [], []
    for d in sorted(deltas, key=lambda v: (v.real, v.imag)):
        if reps and abs(d - reps[-1]) <= tol:
            mult[-1] += 1
        else:
            reps.append(d)
            mult.append(1)
    return np.array(reps), tuple(mult)


# ---------------------------------------------------------------------------
# discriminant

@dataclass(frozen=True)
class DiscriminantValue:
    z: complex
    rho: complex
    degenerate: bool = False
    rho_distinct: complex | None = None


def rho_from_deltas(deltas):
    """prod_{i<j} (Delta_i - Delta_j)^2 (label-free symmetric function)."""
    rho = 1.0 + 0.0j
    n = len(deltas)
    for i in range(n):
        for j in range(i + 1, n):
            rho *= (deltas[i] - deltas[j]) ** 2
    return rho


def discriminant(p, z, cfg=None, degenerate=None):
    """Discriminant at z; pass ``degenerate`` to skip the structural probe."""
    cfg = cfg or SolverConfig()
    if degenerate is None:
        degenerate = coincidence_signature(p, cfg) is not None
    bs = lyapunov_values(p, z, cfg=cfg)
    rho = rho_from_deltas(bs.deltas)
    rho_distinct = None
    if degenerate:
        tol = 1e-9 * (1.0 + np.abs(bs.deltas).max())
        reps, _ = _dedupe(bs.deltas, tol)
        rho_distinct = rho_from_deltas(reps)
    return DiscriminantValue(z=complex(z), rho=rho, degenerate=bool(degenerate),
                             rho_distinct=rho_distinct)


def rho_batch(p, zs, cfg=None, steps=None):
    """Discriminant values along an array of z (full product, no dedupe)."""
    ds = delta_array_batch(p, zs, cfg=cfg, steps=steps)
    out = np.ones(len(ds), dtype=complex)
    n = ds.shape[1]
    for i in range(n):
        for j in range(i + 1, n):
            out *= (ds[:, i] - ds[:, j]) ** 2
    return out


# ---------------------------------------------------------------------------
# branch tracking

def _match(prev, cur):
    """Permutation sigma minimizing sum |prev_i - cur_sigma(i)|."""
    cost = np.abs(prev[:, None] - cur[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(prev), dtype=int)
    perm[rows] = cols
    moved = float(cost[rows, cols].max(initial=0.0))
    return perm, moved


def track_branches(p, path, cfg=None, max_depth=10):
    """Continuity-labeled branch sets along ``path``.

    Consecutive multisets are matched by minimal total distance.  When the
    largest matched movement is comparable to the smallest separation the
    matching is ambiguous and midpoints are inserted, up to ``max_depth``
    rounds; persistent ambiguity raises TrackingError.  Points where
    distinct branches approach within merge_tol are flagged as branch-point
    candidates and the labels across them are not trustworthy.
    """
    cfg = cfg or SolverConfig()
    path = [complex(z) for z in path]
    if len(path) < 1:
        return []
    degenerate = coincidence_signature(p, cfg) is not None

    sets = {z: bs for z, bs in zip(path, lyapunov_values_batch(p, path, cfg=cfg))}

    def values(z):
        return sets[z].deltas

    work = list(path)
    for _ in range(max_depth):
        new_pts = []
        for a, b in zip(work, work[1:]):
            va, vb = values(a), values(b)
            gap = min(_effective_gap(va, degenerate), _effective_gap(vb, degenerate))
            _, moved = _match(va, vb)
            scale = 1.0 + max(np.abs(va).max(), np.abs(vb).max())
            if moved > 0.45 * gap and moved > cfg.merge_tol * scale:
                new_pts.append(0.5 * (a + b))
        if not new_pts:
            break
        for z, bs in zip(new_pts, lyapunov_values_batch(p, new_pts, cfg=cfg)):
            sets[z] = bs
        merged = []
        for a, b in zip(work, work[1:]):
            merged.append(a)
            mid = 0.5 * (a + b)
            if mid in sets and mid not in work:
                merged.append(mid)
        merged.append(work[-1])
        work = merged
    else:
        raise TrackingError(
            f"branch matching still ambiguous after {max_depth} subdivisions")

    out = []
    perm = np.arange(p.dim)
    prev_vals = None
    for z in work:
        bs = sets[z]
        vals = bs.deltas
        if prev_vals is not None:
            step_perm, _ = _match(prev_vals, vals)
            perm = step_perm[perm]
        labeled = vals[perm] if prev_vals is not None else vals
        gap = _effective_gap(vals, degenerate)
        scale = 1.0 + np.abs(vals).max(initial=0.0)
        collision = bool(gap < cfg.merge_tol * scale)
        out.append(LyapunovBranchSet(
            z=z, deltas=labeled, collision_flag=collision,
            degenerate_flag=degenerate, labels=tuple(range(p.dim)),
            pair_gap=bs.pair_gap, log_scale=bs.log_scale))
        prev_vals = vals
    return out


def _effective_gap(deltas, degenerate):
    """Smallest separation, ignoring permanently coincident copies."""
    if not degenerate:
        return _min_pairwise_gap(deltas)
    tol = 1e-9 * (1.0 + np.abs(deltas).max(initial=0.0))
    reps, _ = _dedupe(deltas, tol)
    return _min_pairwise_gap(reps)


def loop_permutation(p, center, radius, cfg=None, points=48):
    """Branch permutation after one closed loop around ``center``.

    Returns a permutation array sigma with sigma[i] = index of the branch
    that the i-th branch turned into; a simple (square-root) branch point
    inside the loop produces a single transposition.
    """
    cfg = cfg or SolverConfig()
    theta = np.linspace(0.0, 2.0 * np.pi, points + 1)
    path = center + radius * np.exp(1j * theta)
    tracked = track_branches(p, path, cfg=cfg)
    first = [bs for bs in tracked if bs.z == path[0]][0]
    last = [bs for bs in tracked if bs.z == path[-1]][-1]
    perm, _ = _match(first.deltas, last.deltas)
    return perm


# ---------------------------------------------------------------------------
# high-energy reference values

def asymptotic_delta(p, z, m):
    """Two-term reference cos z + (sin z / 2z) V0_m for branch m = 1..N.

    V0_m is the m-th ascending eigenvalue of the mean matrix; the remainder
    is O(exp(|Im z|) / z^2).
    """
    if not 1 <= m <= p.dim:
        raise ValueError(f"branch index m={m} outside 1..{p.dim}")
    z = complex(z)
    if abs(z) < 1.0:
        raise ValueError("asymptotic reference defined for |z| >= 1")
    v0 = p.mean_eigenvalues()[m - 1]
    return np.cos(z) + np.sin(z) / (2.0 * z) * v0


def phi_root_check(p, z, cfg=None):
    """Max mismatch between L-eigenvalue branches and the roots of Phi.

    The two routes are independent reductions of the same characteristic
    polynomial; the mismatch is the assignment distance between the two
    multisets, relative to 1 + max |Delta|.
    """
    from .monodromy import char_poly, integrate_monodromy

    cfg = cfg or SolverConfig()
    ms = integrate_monodromy(p, z, cfg=cfg)
    deltas = _deltas_from_sample(ms, cfg)[0]
    roots = char_poly(ms).phi_roots()
    cost = np.abs(deltas[:, None] - roots[None, :])
    rows, cols = linear_sum_assignment(cost)
    scale = 1.0 + np.abs(deltas).max(initial=0.0)
    return float(cost[rows, cols].max()) / scale
