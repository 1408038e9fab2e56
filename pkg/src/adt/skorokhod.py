"""Quantile representation of filtered processes on the unit cube.

A filtered process is realized as an adapted step function on [0,1]^N under
the product Lebesgue measure: at every stage the successor atoms of its
canonical form receive consecutive subintervals of [0,1] (in canonical atom
order) with lengths equal to their conditional probabilities.  Two processes
represented this way share one source of randomness, so their pathwise L^p
gap is computable exactly by sweeping the common interval refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .canonical import CanonicalForm, NestedAtom, information_process
from .errors import SolverError
from .process_model import (
    DiscreteMeasure,
    FilteredTree,
    MetricConfig,
    TreeNode,
    law_on_paths,
    path_cost,
    path_distance,
)

__all__ = [
    "QuantileCell",
    "BoxPartition",
    "QuantileMap",
    "quantile_map",
    "evaluate",
    "pushforward_path_law",
    "induced_tree",
    "lp_distance",
    "max_pointwise_gap",
    "lp_representation_on_common_basis",
    "ConvergenceRow",
    "ConvergenceReport",
    "convergence_report",
    "FixtureAnalysis",
    "FixtureResult",
    "non_coexistence_fixture",
]


@dataclass(frozen=True)
class QuantileCell:
    """One interval [lo, hi) at some stage, carrying the atom it realizes.

    Children partition [0, 1) afresh (each coordinate of the cube is spent on
    one stage), with lengths equal to the atom's conditional successor
    probabilities in canonical order.
    """

    atom: NestedAtom
    lo: Fraction
    hi: Fraction
    children: tuple["QuantileCell", ...]

    @property
    def length(self) -> Fraction:
        return self.hi - self.lo


@dataclass(frozen=True)
class BoxPartition:
    """Tree of interval cells mirroring the canonical process tree."""

    cells: tuple[QuantileCell, ...]

    def breakpoints(self, num_steps: int) -> list[list[Fraction]]:
        """Per stage, the sorted union of all interval endpoints in use."""
        levels: list[set[Fraction]] = [set() for _ in range(num_steps)]

        def walk(cells: tuple[QuantileCell, ...], t: int) -> None:
            for cell in cells:
                levels[t].add(cell.lo)
                levels[t].add(cell.hi)
                if cell.children:
                    walk(cell.children, t + 1)

        walk(self.cells, 0)
        return [sorted(points) for points in levels]


@dataclass(frozen=True)
class QuantileMap:
    """Adapted step function on the unit cube realizing a canonical form."""

    config: MetricConfig
    form: CanonicalForm
    partition: BoxPartition

    @property
    def cells(self) -> tuple[QuantileCell, ...]:
        return self.partition.cells


def _cells_for_law(law, cache: dict) -> tuple[QuantileCell, ...]:
    out = []
    cursor = Fraction(0)
    for atom, weight in law:
        hi = cursor + weight
        children = cache.get(atom.uid)
        if children is None:
            children = _cells_for_law(atom.law, cache)
            cache[atom.uid] = children
        out.append(QuantileCell(atom=atom, lo=cursor, hi=hi, children=children))
        cursor = hi
    if out and cursor != 1:
        raise SolverError(f"interval lengths sum to {cursor}, expected 1")
    return tuple(out)


def quantile_map(tree: FilteredTree) -> QuantileMap:
    """Quantile representation of a filtered process.

    The law of the step function under the product Lebesgue measure equals
    the canonical path law exactly, and the induced process on the cube
    (with the interval filtration) is equivalent to the source.
    """
    form = information_process(tree).form
    cells = _cells_for_law(form.law, {})
    return QuantileMap(config=tree.config, form=form, partition=BoxPartition(cells))


def evaluate(qmap: QuantileMap, point: Sequence) -> tuple[tuple[Fraction, ...], ...]:
    """Value path of the step function at a point of [0,1]^N."""
    n = qmap.config.num_steps
    if len(point) != n:
        raise SolverError(f"point has {len(point)} coordinates, expected {n}")
    values = []
    cells = qmap.cells
    for t, raw in enumerate(point):
        u = Fraction(raw)
        if not 0 <= u <= 1:
            raise SolverError(f"coordinate {t + 1} is outside [0, 1]: {u}")
        chosen = None
        for cell in cells:
            if cell.lo <= u < cell.hi:
                chosen = cell
                break
        if chosen is None:
            chosen = cells[-1]  # u == 1 joins the last box
        values.append(chosen.atom.value)
        cells = chosen.children
    return tuple(values)


def pushforward_path_law(qmap: QuantileMap) -> DiscreteMeasure:
    """Law of the step function under the product Lebesgue measure: each box
    carries its volume (product of interval lengths)."""
    pairs: list[tuple[tuple, Fraction]] = []

    def walk(cells, prefix: tuple, volume: Fraction) -> None:
        for cell in cells:
            path = prefix + (cell.atom.value,)
            vol = volume * cell.length
            if cell.children:
                walk(cell.children, path, vol)
            else:
                pairs.append((path, vol))

    walk(qmap.cells, (), Fraction(1))
    return DiscreteMeasure.from_pairs(pairs)


def induced_tree(qmap: QuantileMap) -> FilteredTree:
    """The process the quantile map induces on the cube, as a filtered tree:
    nodes are interval cells, info labels record the interval."""
    nodes: dict[str, TreeNode] = {}
    counter = [0]

    def build(cell: QuantileCell, time: int) -> str:
        counter[0] += 1
        node_id = f"q{time}.{counter[0]}"
        kids = tuple(
            (build(child, time + 1), child.length) for child in cell.children
        )
        nodes[node_id] = TreeNode(
            node_id=node_id,
            time=time,
            value=cell.atom.value,
            info=f"[{cell.lo},{cell.hi})",
            children=kids,
        )
        return node_id

    root = tuple((build(cell, 1), cell.length) for cell in qmap.cells)
    return FilteredTree(qmap.config, nodes, root)


# -- exact L^p distance between representations --------------------------------


def _overlap_laws(law_a, law_b):
    """Sweep two conditional laws sharing [0,1): yields (atom, atom, length)."""
    i = j = 0
    rem_a = law_a[i][1] if law_a else Fraction(0)
    rem_b = law_b[j][1] if law_b else Fraction(0)
    while i < len(law_a) and j < len(law_b):
        lam = min(rem_a, rem_b)
        if lam > 0:
            yield law_a[i][0], law_b[j][0], lam
        rem_a -= lam
        rem_b -= lam
        if rem_a == 0:
            i += 1
            if i < len(law_a):
                rem_a = law_a[i][1]
        if rem_b == 0:
            j += 1
            if j < len(law_b):
                rem_b = law_b[j][1]


def _overlap_cells(cells_a, cells_b):
    """Sweep two cell rows: yields (cell, cell, lo, length) on the refinement."""
    i = j = 0
    cursor = Fraction(0)
    while i < len(cells_a) and j < len(cells_b):
        hi = min(cells_a[i].hi, cells_b[j].hi)
        lam = hi - cursor
        if lam > 0:
            yield cells_a[i], cells_b[j], cursor, lam
        if cells_a[i].hi == hi:
            i += 1
        if cells_b[j].hi == hi:
            j += 1
        cursor = hi


def lp_distance(f: QuantileMap, g: QuantileMap):
    """Exact integral of the path cost between two quantile representations
    over the unit cube (p-th power of the L^p gap; for weak mode, the
    integral of the truncated distance).

    Computed on the common refinement of the two interval systems; the
    shared uniform coordinates couple the processes stage by stage.
    """
    f.config.require_same_shape(g.config, "lp_distance")
    cfg = f.config
    top_f = [(cell.atom, cell.length) for cell in f.cells]
    top_g = [(cell.atom, cell.length) for cell in g.cells]

    if cfg.is_weak:

        def walk(a: NestedAtom, b: NestedAtom, acc):
            acc = acc + cfg.step_cost(a.value, b.value)
            if acc >= 1:
                return Fraction(1)
            if a.is_terminal:
                return acc
            total = Fraction(0)
            for ca, cb, lam in _overlap_laws(a.law, b.law):
                total += lam * walk(ca, cb, acc)
            return total

        return sum(
            (lam * walk(a, b, Fraction(0)) for a, b, lam in _overlap_laws(top_f, top_g)),
            Fraction(0),
        )

    memo: dict[tuple[int, int], object] = {}

    def pair(a: NestedAtom, b: NestedAtom):
        key = (a.uid, b.uid)
        hit = memo.get(key)
        if hit is not None:
            return hit
        total = cfg.step_cost(a.value, b.value)
        if not a.is_terminal:
            for ca, cb, lam in _overlap_laws(a.law, b.law):
                total = total + lam * pair(ca, cb)
        memo[key] = total
        return total

    zero = Fraction(0) if cfg.exact_costs else 0.0
    total = zero
    for a, b, lam in _overlap_laws(top_f, top_g):
        total = total + lam * pair(a, b)
    return total


def max_pointwise_gap(f: QuantileMap, g: QuantileMap):
    """Largest path distance between the two step functions over the
    deterministic grid of refinement-box midpoints.

    Returns (gap, point); a diagnostic for pointwise closeness — finite data
    cannot certify almost-sure statements beyond this grid.
    """
    f.config.require_same_shape(g.config, "max_pointwise_gap")
    cfg = f.config
    best: dict = {"gap": None, "point": None}

    def walk(cells_a, cells_b, xs, ys, point):
        for ca, cb, lo, lam in _overlap_cells(cells_a, cells_b):
            mid = lo + lam / 2
            nxs = xs + (ca.atom.value,)
            nys = ys + (cb.atom.value,)
            npoint = point + (mid,)
            if ca.children and cb.children:
                walk(ca.children, cb.children, nxs, nys, npoint)
            else:
                gap = path_distance(nxs, nys, cfg)
                if best["gap"] is None or gap > best["gap"]:
                    best["gap"] = gap
                    best["point"] = npoint

    walk(f.cells, g.cells, (), (), ())
    if best["gap"] is None:
        raise SolverError("gap diagnostic found no boxes (empty representation)")
    return best["gap"], best["point"]


def lp_representation_on_common_basis(a: FilteredTree, b: FilteredTree):
    """Optimal common-basis realization: solve the adapted distance, assemble
    the optimal coupling, and realize it as a pair process.

    Returns (product, cost) with cost the exact expected path cost of the
    pair — equal to the adapted transport value for orders p >= 1.
    """
    from .couplings import assemble_optimal_coupling, pair_path_cost, product_process
    from .transport import aw_distance

    _, table = aw_distance(a, b)
    coupling = assemble_optimal_coupling(table, a, b)
    product = product_process(coupling)
    cost = pair_path_cost(product.tree, a.config.dim)
    return product, cost


# -- convergence diagnostics -----------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    index: int
    aw: object
    lp: object
    grid_max: object


@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple[ConvergenceRow, ...]
    aw_converges: bool
    lp_converges: bool
    consistent: bool

    def to_csv(self) -> str:
        lines = ["n,aw_distance,lp_distance,grid_max"]
        for row in self.rows:
            lines.append(
                f"{row.index},{float(row.aw)!r},{float(row.lp)!r},{float(row.grid_max)!r}"
            )
        return "\n".join(lines) + "\n"


def _to_zero(values) -> bool:
    first, last = values[0], values[-1]
    if last == 0:
        return True
    return first > 0 and last <= first / 8


def convergence_report(sequence: Sequence[FilteredTree], limit: FilteredTree) -> ConvergenceReport:
    """Per sequence member: adapted distance to the limit, exact L^p gap of
    the quantile representations, and the pointwise grid diagnostic.

    Flags whether the adapted and L^p columns decrease to zero together;
    they must, on families where either does.
    """
    from .transport import aw_distance

    if not sequence:
        raise SolverError("convergence report needs a nonempty sequence")
    cfg = limit.config
    q_limit = quantile_map(limit)
    rows = []
    for k, tree in enumerate(sequence, start=1):
        tree.config.require_same_shape(cfg, "convergence_report")
        value, _ = aw_distance(tree, limit)
        q_tree = quantile_map(tree)
        lp = lp_distance(q_tree, q_limit)
        gap, _ = max_pointwise_gap(q_tree, q_limit)
        rows.append(
            ConvergenceRow(
                index=k,
                aw=cfg.root_cost(value),
                lp=cfg.root_cost(lp),
                grid_max=gap,
            )
        )
    aw_ok = _to_zero([row.aw for row in rows])
    lp_ok = _to_zero([row.lp for row in rows])
    return ConvergenceReport(
        rows=tuple(rows),
        aw_converges=aw_ok,
        lp_converges=lp_ok,
        consistent=aw_ok == lp_ok,
    )


# -- the fixture where pathwise and per-step optimality cannot coexist -----------


@dataclass(frozen=True)
class FixtureAnalysis:
    n: int
    k: int
    aligned: bool
    segment: tuple[Fraction, Fraction]
    segment_mass: Fraction
    w1: Fraction
    lower_bound: Fraction
    diagonal_cost: Fraction
    perturbed_cost: Fraction
    strict_gap: bool
    ot_value: Fraction | None
    ot_plan_diagonal: bool | None
    union_fraction: Fraction
    union_covers: bool


@dataclass(frozen=True)
class FixtureResult:
    process: FilteredTree
    limit: FilteredTree
    analysis: FixtureAnalysis


def _harmonic(j: int) -> Fraction:
    return sum((Fraction(1, i) for i in range(1, j + 1)), Fraction(0))


def _segment(n: int) -> tuple[Fraction, Fraction]:
    s = _harmonic(n - 1) % 1
    e = _harmonic(n) % 1
    return s, e


def _in_segment(x: Fraction, seg: tuple[Fraction, Fraction]) -> bool:
    s, e = seg
    if s < e:
        return s <= x < e
    return x >= s or x < e  # wrap-around (also covers the full circle s == e)


def _indicator_tree(k: int, seg: tuple[Fraction, Fraction] | None, decimals: int) -> FilteredTree:
    """Two-step process: uniform grid point on [0,1), then the indicator of a
    circular segment (zero everywhere when seg is None)."""
    cfg = MetricConfig(num_steps=2, dim=1, order=Fraction(1), value_decimals=decimals)
    nodes: dict[str, TreeNode] = {}
    root = []
    w = Fraction(1, k)
    for i in range(k):
        left = Fraction(i, k)
        mid = Fraction(2 * i + 1, 2 * k)
        hit = seg is not None and _in_segment(left, seg)
        leaf_id = f"c{i}.ind"
        nodes[leaf_id] = TreeNode(
            node_id=leaf_id,
            time=2,
            value=(Fraction(1 if hit else 0),),
            info="",
            children=(),
        )
        cell_id = f"c{i}"
        nodes[cell_id] = TreeNode(
            node_id=cell_id,
            time=1,
            value=(mid,),
            info="",
            children=((leaf_id, Fraction(1)),),
        )
        root.append((cell_id, w))
    return FilteredTree(cfg, nodes, tuple(root))


def non_coexistence_fixture(n: int, k: int) -> FixtureResult:
    """Grid discretization of the moving-segment family at index n.

    The processes are (grid point, indicator of the n-th circular segment)
    and its indicator-free limit.  The plain transport cost between them is
    the segment's grid mass exactly — every unit of indicator mass must pay
    one in the second coordinate, and the diagonal plan attains that — while
    any plan displacing a grid point pays strictly more.  Sweeping n, the
    segments eventually cover the whole circle, which is why no single
    realization can be pathwise optimal for every n at once.
    """
    if n < 1:
        raise SolverError(f"fixture index must be >= 1, got {n}")
    if k < 4:
        raise SolverError(f"fixture grid must have at least 4 cells, got {k}")
    seg = _segment(n)
    decimals = 12
    process = _indicator_tree(k, seg, decimals)
    limit = _indicator_tree(k, None, decimals)

    grid = Fraction(1, k)
    member = [_in_segment(Fraction(i, k), seg) for i in range(k)]
    segment_mass = sum((grid for hit in member if hit), Fraction(0))
    aligned = (seg[0] * k).denominator == 1 and (seg[1] * k).denominator == 1

    # Any coupling must flip every unit of indicator mass (the limit has
    # none), at per-step cost 1 — an assignment-free lower bound.
    lower_bound = segment_mass

    def plan_cost(assignment: dict[int, int]) -> Fraction:
        total = Fraction(0)
        for i, j in assignment.items():
            move = abs(Fraction(2 * i + 1, 2 * k) - Fraction(2 * j + 1, 2 * k))
            flip = Fraction(1) if member[i] else Fraction(0)
            total += grid * (move + flip)
        return total

    diagonal_cost = plan_cost({i: i for i in range(k)})
    if diagonal_cost != lower_bound:
        raise SolverError("fixture internal accounting failed")
    w1 = diagonal_cost

    perturbed = {i: i for i in range(k)}
    perturbed[0], perturbed[1] = 1, 0
    perturbed_cost = plan_cost(perturbed)

    ot_value = None
    ot_plan_diagonal = None
    if k <= 80:
        from .transport import ot_solve

        mu = law_on_paths(process)
        nu = law_on_paths(limit)
        cost = [
            [path_cost(x, y, process.config) for y in nu.atoms] for x in mu.atoms
        ]
        ot_value, plan = ot_solve(mu.weights, nu.weights, cost, canonical=True)
        ot_plan_diagonal = all(
            mu.atoms[i][0] == nu.atoms[j][0] for i, j, _ in plan.support
        )

    union: set[int] = set()
    for j in range(2, n + 1):
        seg_j = _segment(j)
        union.update(i for i in range(k) if _in_segment(Fraction(i, k), seg_j))
    union_fraction = Fraction(len(union), k)

    analysis = FixtureAnalysis(
        n=n,
        k=k,
        aligned=aligned,
        segment=seg,
        segment_mass=segment_mass,
        w1=w1,
        lower_bound=lower_bound,
        diagonal_cost=diagonal_cost,
        perturbed_cost=perturbed_cost,
        strict_gap=perturbed_cost > w1,
        ot_value=ot_value,
        ot_plan_diagonal=ot_plan_diagonal,
        union_fraction=union_fraction,
        union_covers=union_fraction == 1,
    )
    return FixtureResult(process=process, limit=limit, analysis=analysis)
