"""Signed-permutation symmetries of realified CME fields and sector bases.

A symmetry acts on complex envelopes by

    (g A)_{perm[c]}(y) = mult[c] * T(A_c(map^{-1} y)),   T = identity or conj,

where ``map`` is one of the point maps below and mult is in {+-1, +-i}. On
the realified vector (Re A_c, Im A_c for the active components) this becomes
a signed permutation, and a finite group of them splits the space into
orthogonal sectors. Newton and the kernel eigen-solves run sector by sector
on P^T J P, which is what keeps 2D Jacobians of a few hundred thousand
unknowns inside a few GB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

POINT_MAPS = ("id", "r1", "r2", "sw")


@dataclass(frozen=True)
class Generator:
    perm: tuple        # target component for each component 0..2
    mult: tuple        # complex multiplier per source component
    conj: bool
    point_map: str
    name: str = ""

    def apply(self, a):
        """Act on a (3, n, n) complex array."""
        out = np.zeros_like(a)
        for c in range(3):
            v = np.conj(a[c]) if self.conj else a[c]
            out[self.perm[c]] = self.mult[c] * _map_points(v, self.point_map)
        return out


def _map_points(v, pm):
    if pm == "id":
        return v
    if pm == "r1":
        return v[::-1, :]
    if pm == "r2":
        return v[:, ::-1]
    if pm == "sw":
        return v.T
    raise ValueError(pm)


def _point_index(n, pm):
    idx = np.arange(n * n).reshape(n, n)
    # target position of the value stored at each source position
    return _map_points(idx, pm).ravel().argsort() if pm != "id" else idx.ravel()


def signed_permutation(g: Generator, active, n):
    """(target index, sign) arrays for every source index of the realified vector."""
    size = n * n
    slot = {c: s for s, c in enumerate(active)}
    # _map_points(v)[p] = v[src(p)], so a value at source q lands at inverse(src)[q]
    src = _map_points(np.arange(size).reshape(n, n), g.point_map).ravel()
    dest_point = np.empty(size, dtype=np.int64)
    dest_point[src] = np.arange(size)
    total = 2 * len(active) * size
    target = np.empty(total, dtype=np.int64)
    sign = np.empty(total)
    for c in active:
        tc = g.perm[c]
        if tc not in slot:
            raise ValueError("symmetry maps an active component onto an inactive one")
        for part, unit in ((0, 1.0 + 0j), (1, 1j)):
            val = g.mult[c] * (np.conj(unit) if g.conj else unit)
            if abs(val.imag) < 0.5:
                tpart, sg = 0, val.real
            else:
                tpart, sg = 1, val.imag
            base_src = (2 * slot[c] + part) * size
            base_dst = (2 * slot[tc] + tpart) * size
            target[base_src:base_src + size] = base_dst + dest_point
            sign[base_src:base_src + size] = np.round(sg)
    return target, sign


@dataclass
class GroupElement:
    target: np.ndarray
    sign: np.ndarray
    word: tuple  # exponent (mod 2) of each generator, for abelian characters


def generate_group(gens, active, n, max_order=64):
    """Close the generators under composition (all generators are involutions)."""
    total = 2 * len(active) * n * n
    ident = GroupElement(np.arange(total), np.ones(total), tuple(0 for _ in gens))
    base = [signed_permutation(g, active, n) for g in gens]
    elems = [ident]
    keys = {ident.target.tobytes() + ident.sign.tobytes()}
    frontier = [ident]
    while frontier:
        nxt = []
        for e in frontier:
            for k, (t, s) in enumerate(base):
                # apply e first, then generator k
                target = t[e.target]
                sign = e.sign * s[e.target]
                key = target.tobytes() + sign.tobytes()
                if key in keys:
                    continue
                keys.add(key)
                word = list(e.word)
                word[k] ^= 1
                el = GroupElement(target, sign, tuple(word))
                elems.append(el)
                nxt.append(el)
        frontier = nxt
        if len(elems) > max_order:
            raise ValueError("symmetry group unexpectedly large; check the generators")
    return elems


def sector_basis(elems, chars=None):
    """Orthonormal basis P (sparse, columns) of the sector with the given characters.

    ``chars`` gives +-1 per generator; None means the trivial character.
    The projector is (1/|G|) sum chi(g) g; its range is spanned by orbit sums.
    """
    total = elems[0].target.size
    rep = np.minimum.reduce([e.target for e in elems])
    # rep[i] is min over the orbit only if the orbit is {g(i)}: true for a group
    reps = np.flatnonzero(rep == np.arange(total))
    col_of = np.full(total, -1, dtype=np.int64)
    col_of[reps] = np.arange(reps.size)
    rows, cols, vals = [], [], []
    for e in elems:
        chi = 1.0
        if chars is not None:
            chi = float(np.prod([c if w else 1.0 for c, w in zip(chars, e.word)]))
        rows.append(e.target[reps])
        cols.append(col_of[reps])
        vals.append(chi * e.sign[reps])
    p = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(total, reps.size)).tocsc()
    p.sum_duplicates()
    norms = np.sqrt(np.asarray(p.multiply(p).sum(axis=0)).ravel())
    keep = norms > 1e-12
    p = p[:, np.flatnonzero(keep)] @ sp.diags(1.0 / norms[keep])
    return p.tocsc()
