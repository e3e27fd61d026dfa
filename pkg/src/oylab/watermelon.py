"""Scaled watermelon geometry and the pathwise bound k log Z >= sum of corridor pieces.

Starting from (0, 0), one path branches dyadically into k = 2^N1 paths.
The paths then spread apart in separation steps, each step doubling the
spacing and costing a height proportional to (2^j)^{3/2} k.  Next they run
straight up the diagonal in disjoint corridors.  Finally they merge into
(n, n) along the point reflection of the first two phases.  Every piece
from one marked point to the next is a corridor-constrained partition
function, and concatenating the pieces of one chain gives a subset of
all paths.  Hence the sum over the k chains is at most k log Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .polymer import Corridor, LatticePoint, log_partition, log_partition_constrained


class GeometryError(ValueError):
    """The requested watermelon does not fit or violates disjointness."""


@dataclass(frozen=True)
class Piece:
    start: LatticePoint
    end: LatticePoint
    width: float
    phase: int


@dataclass
class WatermelonGeometry:
    n: int
    k: int
    branch_step: int
    sep_unit: int
    heights: tuple[int, ...]  # h0 .. h5
    chains: list[list[Piece]] = field(default_factory=list)
    separation: int = 0
    middle_width: float = 0.0

    def pieces(self):
        for chain in self.chains:
            yield from chain


def _pt(h: int, ad: int) -> LatticePoint:
    return LatticePoint(float(h - ad), h + ad)


def _mirror(p: LatticePoint, n: int) -> LatticePoint:
    return LatticePoint(float(n - p.time), n - p.level)


def _straight(h0, a0, h1, a1, n_sub, width, phase):
    """Pieces along the line from (h0, a0) to (h1, a1) split into n_sub steps, rounded to the lattice."""
    pts = []
    for m in range(n_sub + 1):
        h = h0 + round(m * (h1 - h0) / n_sub)
        a = a0 + round(m * (a1 - a0) / n_sub)
        pts.append(_pt(h, a))
    return [Piece(u, v, width, phase) for u, v in zip(pts, pts[1:]) if u != v]


def _split_heights(total: int, weights: list[float]) -> list[int]:
    cum = 0.0
    tot_w = sum(weights)
    out = []
    prev = 0
    for w in weights:
        cum += w
        cur = round(total * cum / tot_w)
        out.append(cur - prev)
        prev = cur
    return out


def build_geometry(n: int, k: int, geometry_scale: float = 1.0) -> WatermelonGeometry:
    """Five-phase geometry with branch step 8 and separation unit 2 times ``geometry_scale``."""
    if k < 1 or k & (k - 1):
        raise GeometryError("k must be a power of two")
    n1 = k.bit_length() - 1
    S = max(1, round(8 * geometry_scale))
    U = 2 * max(1, round(geometry_scale))

    # phase 1: dyadic branching; pieces_by_branch[i] is the chain of branch i so far
    width1 = max(1.0, U / 2)
    level_h = S
    pieces_by_branch = [[Piece(_pt(0, 0), _pt(S, 0), width1, 1)]]
    for j in range(1, n1 + 1):
        new_pieces = []
        h_split = level_h + S
        h_wide = h_split + S * 2**j
        for i in range(1, 2**j + 1):
            parent = (i + 1) // 2 - 1
            p_parent = 2 * U * ((2 ** (j - 1) + 1) / 2 - (parent + 1)) if j > 1 else 0
            p_child = U * ((2**j + 1) / 2 - i)
            p_wide = 2 * p_child
            chain = list(pieces_by_branch[parent])
            chain.append(Piece(_pt(level_h, int(p_parent)), _pt(h_split, int(p_child)), width1, 1))
            chain.extend(_straight(h_split, int(p_child), h_wide, int(p_wide), 2**j, width1, 1))
            new_pieces.append(chain)
        pieces_by_branch = new_pieces
        level_h = h_wide
    h1 = level_h
    ads = [int(2 * U * ((k + 1) / 2 - i)) if k > 1 else 0 for i in range(1, k + 1)]

    # phase 2: separation towards spacing ~ (n/k)^(2/3)
    h2 = round(n / 3)
    if h1 >= h2:
        raise GeometryError(f"branching phase ends at height {h1}, above n/3 = {n / 3:.1f}")
    target = (n / k) ** (2.0 / 3.0)
    n2 = 0
    while U * 2 ** (n2 + 2) <= target:
        n2 += 1

    def phase2_plan(steps):
        if steps == 0:
            return []
        dh = _split_heights(h2 - h1, [(2**j) ** 1.5 * k for j in range(1, steps + 1)])
        plan = []
        for j, d in enumerate(dh, start=1):
            shift = [int(U * 2 ** (j - 1) * ((k + 1) - 2 * i)) // 1 for i in range(1, k + 1)]
            if d <= 0 or max(abs(s) for s in shift) > d / 2:
                return None
            plan.append((d, shift))
        return plan

    plan = phase2_plan(n2)
    while plan is None:
        n2 -= 1
        plan = phase2_plan(n2)
    sep = 2 * U if k > 1 else 0
    h = h1
    cur = list(ads)
    for j, (d, shift) in enumerate(plan, start=1):
        width2 = max(1.0, math.floor((sep - 1) / 2)) if k > 1 else float(U)
        for i in range(k):
            pieces_by_branch[i].append(Piece(_pt(h, cur[i]), _pt(h + d, cur[i] + shift[i]), width2, 2))
        cur = [c + s for c, s in zip(cur, shift)]
        h += d
        sep = min(abs(a - b) for a, b in zip(cur, cur[1:])) if k > 1 else 0
    h2 = h

    # phase 3: straight diagonal runs in disjoint corridors
    h3 = n - h2
    if h3 <= h2:
        raise GeometryError("no room for the middle phase")
    width3 = float(max(1, (sep - 1) // 2)) if k > 1 else float(max(1, (h3 - h2) // 8))
    for i in range(k):
        marks = [h2 + round(m * (h3 - h2) / k) for m in range(k + 1)]
        for a, b in zip(marks, marks[1:]):
            pieces_by_branch[i].append(Piece(_pt(a, cur[i]), _pt(b, cur[i]), width3, 3))

    # phases 4 and 5: point reflection of phases 2 and 1 of the mirrored path
    chains = []
    for i in range(k):
        chain = list(pieces_by_branch[i])
        twin = pieces_by_branch[k - 1 - i]
        for piece in reversed([pc for pc in twin if pc.phase in (1, 2)]):
            chain.append(Piece(_mirror(piece.end, n), _mirror(piece.start, n), piece.width, 6 - piece.phase))
        chains.append(chain)
    geom = WatermelonGeometry(n, k, S, U, (0, h1, h2, h3, n - h1, n), chains, sep, width3)
    check_geometry(geom)
    return geom


def check_geometry(geom: WatermelonGeometry) -> None:
    """Chains are connected and ordered, and middle-phase corridors are pairwise disjoint."""
    origin, top = LatticePoint(0.0, 0), LatticePoint(float(geom.n), geom.n)
    for chain in geom.chains:
        if chain[0].start != origin or chain[-1].end != top:
            raise GeometryError("chain does not join (0,0) to (n,n)")
        for a, b in zip(chain, chain[1:]):
            if a.end != b.start:
                raise GeometryError("chain is not connected")
        for pc in chain:
            if not pc.start.precedes(pc.end) or pc.start == pc.end:
                raise GeometryError(f"piece {pc} is not increasing")
    if geom.k > 1:
        mids = [[pc for pc in chain if pc.phase == 3] for chain in geom.chains]
        for a_chain, b_chain in zip(mids, mids[1:]):
            for pa, pb in zip(a_chain, b_chain):
                gap = abs(pa.start.ad - pb.start.ad)
                if not gap > pa.width + pb.width:
                    raise GeometryError("middle-phase corridors overlap")
                if not gap >= 2 * max(pa.width, pb.width):
                    raise GeometryError("middle-phase separation below twice the corridor width")


def watermelon_bound_check(env, k: int, geometry_scale: float, n: int, geometry: WatermelonGeometry | None = None):
    """(lhs, rhs, slack) with lhs = log Z_{(0,0),(n,n)} and rhs = (1/k) sum of corridor pieces."""
    geom = geometry or build_geometry(n, k, geometry_scale)
    lhs = log_partition(env, LatticePoint(0.0, 0), LatticePoint(float(n), n))
    cache: dict[Piece, float] = {}
    total = 0.0
    for chain in geom.chains:
        for pc in chain:
            if pc not in cache:
                cache[pc] = log_partition_constrained(env, Corridor(pc.start, pc.end, pc.width))
            total += cache[pc]
    rhs = total / k
    return lhs, rhs, lhs - rhs
