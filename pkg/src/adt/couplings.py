"""Couplings of filtered processes: causality checks, optimal assembly,
product processes, geodesics, randomization extensions, and realization of a
coupling on another basis.

A coupling lives on pairs of leaves.  Causality in a given direction is the
conditional-independence property that the coupled partner's past carries no
information about one's own future beyond one's own past; it is verified by
exact rational comparisons over all finite atoms, so the verdicts carry no
tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .canonical import (
    NestedAtom,
    atom_level_ranks,
    information_process,
)
from .errors import (
    ConfigMismatchError,
    DocumentError,
    GridResolutionError,
    NotBicausalError,
    SolverError,
    TreeValidationError,
)
from .process_model import (
    FilteredTree,
    MetricConfig,
    TreeNode,
    load_tree,
    parse_probability,
    path_cost,
)
from .transport import NestedDistanceTable

__all__ = [
    "PathCoupling",
    "CausalityReport",
    "BicausalReport",
    "check_causal",
    "check_bicausal",
    "assemble_optimal_coupling",
    "ProductTree",
    "product_process",
    "project_product",
    "pair_path_cost",
    "geodesic",
    "RandomizedExtension",
    "extend_with_randomization",
    "verify_extension",
    "verify_randomization_independence",
    "augmented_self_aware_lift",
    "TransferResult",
    "transfer",
    "load_coupling",
]


class PathCoupling:
    """Joint law on leaf pairs with exact marginal bookkeeping."""

    def __init__(self, left: FilteredTree, right: FilteredTree, weights: Mapping):
        left.config.require_same_shape(right.config, "PathCoupling")
        self.left = left
        self.right = right
        cleaned: dict[tuple[str, str], Fraction] = {}
        for (l, r), w in weights.items():
            w = Fraction(w)
            if w < 0:
                raise TreeValidationError(f"coupling weight at ({l!r}, {r!r}) is negative")
            if w > 0:
                cleaned[(l, r)] = w
        self.weights = cleaned
        self._validate_marginals()

    def _validate_marginals(self) -> None:
        left_mass: dict[str, Fraction] = {}
        right_mass: dict[str, Fraction] = {}
        left_leaves = set(self.left.leaves())
        right_leaves = set(self.right.leaves())
        for (l, r), w in self.weights.items():
            if l not in left_leaves:
                raise TreeValidationError(f"{l!r} is not a leaf of the left tree", l)
            if r not in right_leaves:
                raise TreeValidationError(f"{r!r} is not a leaf of the right tree", r)
            left_mass[l] = left_mass.get(l, Fraction(0)) + w
            right_mass[r] = right_mass.get(r, Fraction(0)) + w
        for leaf in left_leaves:
            if left_mass.get(leaf, Fraction(0)) != self.left.prob(leaf):
                raise TreeValidationError(
                    f"left marginal mismatch at leaf {leaf!r}: "
                    f"{left_mass.get(leaf, Fraction(0))} vs {self.left.prob(leaf)}",
                    leaf,
                )
        for leaf in right_leaves:
            if right_mass.get(leaf, Fraction(0)) != self.right.prob(leaf):
                raise TreeValidationError(
                    f"right marginal mismatch at leaf {leaf!r}: "
                    f"{right_mass.get(leaf, Fraction(0))} vs {self.right.prob(leaf)}",
                    leaf,
                )

    def support_items(self) -> list[tuple[tuple[str, str], Fraction]]:
        return sorted(self.weights.items())

    def expected_cost(self):
        """Expected path cost under the coupling (the true path metric; in
        weak mode each path pair is truncated before averaging)."""
        cfg = self.left.config
        total = Fraction(0)
        for (l, r), w in self.weights.items():
            total += w * path_cost(
                self.left.value_path(l), self.right.value_path(r), cfg
            )
        return total

    def to_document(self) -> dict:
        return {
            "left_tree": self.left.to_document(),
            "right_tree": self.right.to_document(),
            "support": [
                {"left": l, "right": r, "weight": str(w)}
                for (l, r), w in self.support_items()
            ],
        }


def load_coupling(document) -> PathCoupling:
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, Mapping):
        raise DocumentError("coupling document must be a JSON object")
    for key in ("left_tree", "right_tree", "support"):
        if key not in document:
            raise DocumentError(f"coupling document is missing key {key!r}")
    left = load_tree(document["left_tree"])
    right = load_tree(document["right_tree"])
    weights = {}
    for entry in document["support"]:
        if not isinstance(entry, Mapping) or not {"left", "right", "weight"} <= set(entry):
            raise DocumentError("each support entry needs 'left', 'right', 'weight'")
        key = (entry["left"], entry["right"])
        weights[key] = weights.get(key, Fraction(0)) + parse_probability(entry["weight"])
    return PathCoupling(left, right, weights)


# -- causality ----------------------------------------------------------------


@dataclass(frozen=True)
class CausalityReport:
    ok: bool
    witness: tuple[int, str, str] | None


@dataclass(frozen=True)
class BicausalReport:
    ok: bool
    left_to_right: CausalityReport
    right_to_left: CausalityReport


def _ancestor_maps(tree: FilteredTree) -> list[dict[str, str]]:
    """Per time t (1-based index t-1): leaf id -> ancestor node id at time t."""
    n = tree.config.num_steps
    maps: list[dict[str, str]] = [dict() for _ in range(n)]
    for leaf in tree.leaves():
        chain = tree.node_path(leaf)
        for t in range(1, n + 1):
            maps[t - 1][leaf] = chain[t - 1]
    return maps


def check_causal(pi: PathCoupling, direction: str = "left_to_right") -> CausalityReport:
    """Exact conditional-independence test for causality in one direction.

    For ``left_to_right`` the right process may not anticipate the left one:
    conditionally on the left past at every time t, the full left path gives
    no extra information about right atoms at time t.  The test compares
    conditional probabilities atom by atom in exact arithmetic and returns
    the first violation as (time, conditioning atom, target atom).
    """
    if direction == "left_to_right":
        own, other = pi.left, pi.right
        pairs = list(pi.weights.items())
    elif direction == "right_to_left":
        own, other = pi.right, pi.left
        pairs = [((r, l), w) for (l, r), w in pi.weights.items()]
    else:
        raise SolverError(f"unknown direction {direction!r}")

    n = own.config.num_steps
    own_anc = _ancestor_maps(own)
    other_anc = _ancestor_maps(other)
    own_leaf_mass: dict[str, Fraction] = {}
    for (l, r), w in pairs:
        own_leaf_mass[l] = own_leaf_mass.get(l, Fraction(0)) + w

    for t in range(1, n):
        fine: dict[tuple[str, str], Fraction] = {}
        for (l, r), w in pairs:
            key = (l, other_anc[t - 1][r])
            fine[key] = fine.get(key, Fraction(0)) + w
        coarse: dict[tuple[str, str], Fraction] = {}
        coarse_mass: dict[str, Fraction] = {}
        for (l, b), w in fine.items():
            a = own_anc[t - 1][l]
            coarse[(a, b)] = coarse.get((a, b), Fraction(0)) + w
        for l, w in own_leaf_mass.items():
            a = own_anc[t - 1][l]
            coarse_mass[a] = coarse_mass.get(a, Fraction(0)) + w
        # compare conditional laws without dividing
        targets: dict[str, list[str]] = {}
        for aa, bb in coarse:
            targets.setdefault(aa, []).append(bb)
        for l in sorted(own_leaf_mass):
            m_l = own_leaf_mass[l]
            a = own_anc[t - 1][l]
            for b in sorted(targets.get(a, ())):
                lhs = fine.get((l, b), Fraction(0)) * coarse_mass[a]
                rhs = coarse.get((a, b), Fraction(0)) * m_l
                if lhs != rhs:
                    return CausalityReport(ok=False, witness=(t, l, b))
    return CausalityReport(ok=True, witness=None)


def check_bicausal(pi: PathCoupling) -> BicausalReport:
    lr = check_causal(pi, "left_to_right")
    rl = check_causal(pi, "right_to_left")
    return BicausalReport(ok=lr.ok and rl.ok, left_to_right=lr, right_to_left=rl)


# -- assembling the optimal coupling -------------------------------------------


def assemble_optimal_coupling(
    table: NestedDistanceTable, a: FilteredTree, b: FilteredTree
) -> PathCoupling:
    """Realize the table's stage-optimal plans as a coupling of the two trees.

    Atom-level plans are split proportionally over the tree children
    realizing each atom, which preserves marginals exactly and keeps the
    coupling bicausal; its expected path cost equals the table value.
    """
    table.check_matches(a, b)
    res_a = information_process(a)
    res_b = information_process(b)

    weights: dict[tuple[str, str], Fraction] = {}

    def masses(edges, node_atom):
        out: dict[NestedAtom, Fraction] = {}
        for cid, p in edges:
            atom = node_atom[cid]
            out[atom] = out.get(atom, Fraction(0)) + p
        return out

    def descend(u: str | None, v: str | None, weight: Fraction, plan) -> None:
        edges_a = a.children(u)
        edges_b = b.children(v)
        mass_a = masses(edges_a, res_a.node_atom)
        mass_b = masses(edges_b, res_b.node_atom)
        plan_map = {(x, y): w for x, y, w in plan}
        for cu, q in edges_a:
            atom_u = res_a.node_atom[cu]
            for cv, r in edges_b:
                atom_v = res_b.node_atom[cv]
                base = plan_map.get((atom_u, atom_v), Fraction(0))
                if base == 0:
                    continue
                w = weight * base * (q / mass_a[atom_u]) * (r / mass_b[atom_v])
                child_a = a.node(cu)
                if child_a.is_leaf:
                    weights[(cu, cv)] = weights.get((cu, cv), Fraction(0)) + w
                else:
                    time = child_a.time
                    entry = table.entry(time, atom_u, atom_v)
                    descend(cu, cv, w, entry.plan)

    descend(None, None, Fraction(1), table.root_plan)
    return PathCoupling(a, b, weights)


# -- product process ------------------------------------------------------------


@dataclass(frozen=True)
class ProductTree:
    """A coupling realized as a filtered process on the pair space.

    ``tree`` carries concatenated values (left block then right block) under
    the product filtration; ``pairs`` maps its node ids back to the coupled
    node pairs.
    """

    tree: FilteredTree
    left: FilteredTree
    right: FilteredTree
    pairs: dict[str, tuple[str, str]]

    @property
    def base_dim(self) -> int:
        return self.left.config.dim


def product_process(pi: PathCoupling) -> ProductTree:
    """Build the product filtered process of a bicausal coupling.

    Nodes at time t are pairs of time-t atoms with positive joint mass;
    transition probabilities are the conditional coupling masses.  Inputs
    failing the bicausality check are rejected.
    """
    report = check_bicausal(pi)
    if not report.ok:
        bad = report.left_to_right if not report.left_to_right.ok else report.right_to_left
        raise NotBicausalError(
            f"coupling is not bicausal; witness (time, atom, atom): {bad.witness}"
        )
    left, right = pi.left, pi.right
    cfg = left.config
    n = cfg.num_steps
    anc_l = _ancestor_maps(left)
    anc_r = _ancestor_maps(right)

    mass: list[dict[tuple[str, str], Fraction]] = [dict() for _ in range(n)]
    for (l, r), w in pi.weights.items():
        for t in range(1, n + 1):
            key = (anc_l[t - 1][l], anc_r[t - 1][r])
            mass[t - 1][key] = mass[t - 1].get(key, Fraction(0)) + w

    order_l = {nid: k for t in range(1, n + 1) for k, nid in enumerate(left.level(t))}
    order_r = {nid: k for t in range(1, n + 1) for k, nid in enumerate(right.level(t))}

    ids: dict[tuple[int, tuple[str, str]], str] = {}
    for t in range(1, n + 1):
        level_pairs = sorted(mass[t - 1], key=lambda uv: (order_l[uv[0]], order_r[uv[1]]))
        for k, uv in enumerate(level_pairs):
            ids[(t, uv)] = f"p{t}.{k}"

    children_of: dict[tuple[int, tuple[str, str]], list[tuple[str, Fraction]]] = {}
    for t in range(2, n + 1):
        for uv, w in mass[t - 1].items():
            parent = (left.parent(uv[0]), right.parent(uv[1]))
            children_of.setdefault((t - 1, parent), []).append(
                (ids[(t, uv)], w / mass[t - 2][parent])
            )

    nodes: dict[str, TreeNode] = {}
    pairs_map: dict[str, tuple[str, str]] = {}
    for (t, uv), pid in ids.items():
        u, v = uv
        node_u, node_v = left.node(u), right.node(v)
        kids = children_of.get((t, uv), [])
        kids.sort(key=lambda item: item[0])
        # the info label carries the full pair identity so that slicing the
        # values (projections, interpolation) never merges distinct atoms
        nodes[pid] = TreeNode(
            node_id=pid,
            time=t,
            value=node_u.value + node_v.value,
            info=json.dumps([u, v]),
            children=tuple(kids),
        )
        pairs_map[pid] = uv

    root = [
        (ids[(1, uv)], w) for uv, w in sorted(
            mass[0].items(), key=lambda item: (order_l[item[0][0]], order_r[item[0][1]])
        )
    ]
    prod_cfg = MetricConfig(
        num_steps=n,
        dim=2 * cfg.dim,
        order=cfg.order,
        value_decimals=max(cfg.value_decimals, right.config.value_decimals),
    )
    tree = FilteredTree(prod_cfg, nodes, root)
    return ProductTree(tree=tree, left=left, right=right, pairs=pairs_map)


def project_product(product: ProductTree, side: str) -> FilteredTree:
    """One coordinate process of a product tree, kept on the product basis
    (values are sliced; the filtration and info labels stay those of the pair)."""
    if side not in ("left", "right"):
        raise SolverError(f"side must be 'left' or 'right', got {side!r}")
    d = product.base_dim
    lo, hi = (0, d) if side == "left" else (d, 2 * d)
    src = product.tree
    cfg = src.config
    nodes = {
        node.node_id: TreeNode(
            node_id=node.node_id,
            time=node.time,
            value=node.value[lo:hi],
            info=node.info,
            children=node.children,
        )
        for node in src.nodes()
    }
    out_cfg = MetricConfig(
        num_steps=cfg.num_steps, dim=d, order=cfg.order, value_decimals=cfg.value_decimals
    )
    return FilteredTree(out_cfg, nodes, src.root_children)


def pair_path_cost(tree: FilteredTree, base_dim: int):
    """Expected path cost between the two coordinate blocks of a pair process."""
    cfg = tree.config
    if cfg.dim != 2 * base_dim:
        raise ConfigMismatchError(
            f"pair process has dimension {cfg.dim}, expected {2 * base_dim}"
        )
    base_cfg = MetricConfig(
        num_steps=cfg.num_steps, dim=base_dim, order=cfg.order,
        value_decimals=cfg.value_decimals,
    )
    total = Fraction(0)
    for leaf in tree.leaves():
        path = tree.value_path(leaf)
        x = tuple(step[:base_dim] for step in path)
        y = tuple(step[base_dim:] for step in path)
        total += tree.prob(leaf) * path_cost(x, y, base_cfg)
    return total


# -- geodesics -------------------------------------------------------------------


def geodesic(product: ProductTree, lam) -> FilteredTree:
    """Convex interpolation between the two coordinate processes of an
    (optimal) product tree, at parameter ``lam`` in [0, 1].

    The interpolated process keeps the product filtration, so distances
    between interpolates scale linearly in the parameter gap.
    """
    lam = Fraction(lam)
    if not 0 <= lam <= 1:
        raise SolverError(f"interpolation parameter must lie in [0, 1], got {lam}")
    d = product.base_dim
    src = product.tree
    nodes = {}
    for node in src.nodes():
        x = node.value[:d]
        y = node.value[d:]
        value = tuple(a + lam * (b - a) for a, b in zip(x, y))
        nodes[node.node_id] = TreeNode(
            node_id=node.node_id,
            time=node.time,
            value=value,
            info=node.info,
            children=node.children,
        )
    cfg = src.config
    out_cfg = MetricConfig(
        num_steps=cfg.num_steps, dim=d, order=cfg.order, value_decimals=cfg.value_decimals
    )
    return FilteredTree(out_cfg, nodes, src.root_children)


# -- randomized extensions --------------------------------------------------------


@dataclass(frozen=True)
class RandomizedExtension:
    """Base process on an enlarged basis carrying one independent uniform
    m-point coordinate per time step.

    ``node_map`` sends extension node ids to (base node id, digit chain).
    """

    base: FilteredTree
    m: int
    tree: FilteredTree
    node_map: dict[str, tuple[str, tuple[int, ...]]]


def extend_with_randomization(tree: FilteredTree, m: int) -> RandomizedExtension:
    """Adjoin an independent uniform grid coordinate at every time step.

    Values and their filtration embed unchanged; each original transition
    splits into ``m`` equally likely copies whose digit is recorded in the
    info label (the grid lives in the filtration, not in the value)."""
    if m < 2:
        raise SolverError(f"grid size must be at least 2, got {m}")
    cfg = tree.config
    inv_m = Fraction(1, m)
    nodes: dict[str, TreeNode] = {}
    node_map: dict[str, tuple[str, tuple[int, ...]]] = {}
    counter = [0]

    def build(base_id: str, chain: tuple[int, ...]) -> str:
        counter[0] += 1
        base = tree.node(base_id)
        ext_id = f"e{base.time}.{counter[0]}"
        kids = []
        for cid, q in base.children:
            for g in range(m):
                kids.append((build(cid, chain + (g,)), q * inv_m))
        digit = chain[-1]
        nodes[ext_id] = TreeNode(
            node_id=ext_id,
            time=base.time,
            value=base.value,
            info=f"{base.info}|u{digit}",
            children=tuple(kids),
        )
        node_map[ext_id] = (base_id, chain)
        return ext_id

    root = []
    for cid, q in tree.root_children:
        for g in range(m):
            root.append((build(cid, (g,)), q * inv_m))
    ext_tree = FilteredTree(cfg, nodes, root)
    return RandomizedExtension(base=tree, m=m, tree=ext_tree, node_map=node_map)


def verify_extension(ext: RandomizedExtension) -> bool:
    """Exact check of the extension axioms: the base marginal is preserved
    node by node, and the joint law of (base path, grid path) is causal from
    the base toward the grid."""
    base, etree = ext.base, ext.tree
    mass: dict[str, Fraction] = {}
    for node in etree.nodes():
        base_id, _ = ext.node_map[node.node_id]
        mass[base_id] = mass.get(base_id, Fraction(0)) + etree.prob(node.node_id)
    for node in base.nodes():
        if mass.get(node.node_id, Fraction(0)) != base.prob(node.node_id):
            return False

    grid = _uniform_grid_tree(ext.m, base.config)
    weights: dict[tuple[str, str], Fraction] = {}
    for leaf in etree.leaves():
        base_leaf, chain = ext.node_map[leaf]
        grid_leaf = _grid_leaf_id(chain)
        key = (base_leaf, grid_leaf)
        weights[key] = weights.get(key, Fraction(0)) + etree.prob(leaf)
    joint = PathCoupling(base, grid, weights)
    return check_causal(joint, "left_to_right").ok


def _uniform_grid_tree(m: int, like: MetricConfig) -> FilteredTree:
    """The i.i.d. uniform digit process on {0, ..., m-1}^N."""
    n = like.num_steps
    inv_m = Fraction(1, m)
    nodes: dict[str, TreeNode] = {}

    def build(time: int, chain: tuple[int, ...]) -> str:
        node_id = _grid_node_id(time, chain)
        if time == n:
            kids = ()
        else:
            kids = tuple((build(time + 1, chain + (g,)), inv_m) for g in range(m))
        nodes[node_id] = TreeNode(
            node_id=node_id,
            time=time,
            value=(Fraction(chain[-1]),),
            info="",
            children=kids,
        )
        return node_id

    root = tuple((build(1, (g,)), inv_m) for g in range(m))
    cfg = MetricConfig(
        num_steps=n, dim=1, order=like.order, value_decimals=like.value_decimals
    )
    return FilteredTree(cfg, nodes, root)


def _grid_node_id(time: int, chain: tuple[int, ...]) -> str:
    return "g" + "-".join(str(g) for g in chain)


def _grid_leaf_id(chain: tuple[int, ...]) -> str:
    return _grid_node_id(len(chain), chain)


def verify_randomization_independence(ext: RandomizedExtension) -> bool:
    """Check that each digit is uniform and exactly independent of the
    decorated base path together with the strictly earlier extension atoms."""
    from .canonical import self_aware_lift

    etree = ext.tree
    n = etree.config.num_steps
    lift = self_aware_lift(ext.base)
    inv_m = Fraction(1, ext.m)
    for t in range(1, n + 1):
        joint: dict[tuple, Fraction] = {}
        marginal: dict[tuple, Fraction] = {}
        for leaf in etree.leaves():
            base_leaf, chain = ext.node_map[leaf]
            w = etree.prob(leaf)
            lift_path = lift.value_path(base_leaf)
            prior = etree.node_path(leaf)[t - 2] if t >= 2 else None
            digit = chain[t - 1]
            joint_key = (lift_path, prior, digit)
            joint[joint_key] = joint.get(joint_key, Fraction(0)) + w
            marg_key = (lift_path, prior)
            marginal[marg_key] = marginal.get(marg_key, Fraction(0)) + w
        for (lift_path, prior), w in marginal.items():
            for g in range(ext.m):
                if joint.get((lift_path, prior, g), Fraction(0)) != w * inv_m:
                    return False
    return True


def augmented_self_aware_lift(ext: RandomizedExtension) -> FilteredTree:
    """Self-aware decoration of the base, carried onto the extension and
    augmented with the grid digit: value = (base value, atom rank, digit)."""
    res = information_process(ext.base)
    ranks = atom_level_ranks(res.form)
    etree = ext.tree
    cfg = etree.config
    nodes = {}
    for node in etree.nodes():
        base_id, chain = ext.node_map[node.node_id]
        rank = ranks[node.time - 1][res.node_atom[base_id]]
        value = node.value + (Fraction(rank), Fraction(chain[-1]))
        nodes[node.node_id] = TreeNode(
            node_id=node.node_id,
            time=node.time,
            value=value,
            info=node.info,
            children=node.children,
        )
    out_cfg = MetricConfig(
        num_steps=cfg.num_steps, dim=cfg.dim + 2, order=cfg.order,
        value_decimals=cfg.value_decimals,
    )
    return FilteredTree(out_cfg, nodes, etree.root_children)


# -- transfer ---------------------------------------------------------------------


@dataclass(frozen=True)
class TransferResult:
    """Outcome of realizing a pair process on a randomized extension."""

    pair_tree: FilteredTree
    y_tree: FilteredTree
    required_m: int


def transfer(product: ProductTree, target: RandomizedExtension) -> TransferResult:
    """Realize the second coordinate of a pair process on another basis.

    The target's base must be equivalent to the pair's first coordinate
    process.  Walking the extension, the next pair atom is drawn from its
    conditional law given the realized first-coordinate atom by slicing the
    uniform digit into consecutive blocks (a conditional-quantile pick), so
    the construction is adapted, keeps the first coordinate pointwise
    unchanged, and reproduces the pair process's canonical form exactly.
    """
    base = target.base
    d = base.config.dim
    prod_tree = product.tree
    if prod_tree.config.dim != 2 * d or prod_tree.config.num_steps != base.config.num_steps:
        raise ConfigMismatchError(
            "transfer: product tree shape does not match the target base"
        )

    from .canonical import _intern  # shared intern table

    res_p = information_process(prod_tree)
    res_base = information_process(base)

    first_atom: dict[NestedAtom, NestedAtom] = {}

    def project_atom(gamma: NestedAtom) -> NestedAtom:
        hit = first_atom.get(gamma)
        if hit is not None:
            return hit
        value = gamma.value[:d]
        if gamma.is_terminal:
            atom = _intern(value, ())
        else:
            atom = _intern(
                value, ((project_atom(child), w) for child, w in gamma.law)
            )
        first_atom[gamma] = atom
        return atom

    def pushed(law) -> dict[NestedAtom, dict[NestedAtom, Fraction]]:
        grouped: dict[NestedAtom, dict[NestedAtom, Fraction]] = {}
        for gamma, w in law:
            alpha = project_atom(gamma)
            bucket = grouped.setdefault(alpha, {})
            bucket[gamma] = bucket.get(gamma, Fraction(0)) + w
        return grouped

    top_grouped = pushed(res_p.form.law)
    top_marginal = {
        alpha: sum(bucket.values(), Fraction(0)) for alpha, bucket in top_grouped.items()
    }
    base_law = {atom: w for atom, w in res_base.form.law}
    if top_marginal != base_law:
        raise ConfigMismatchError(
            "transfer: target base is not equivalent to the first coordinate "
            "of the product process"
        )

    m = target.m

    def conditional_blocks(grouped):
        """Per projected atom: candidates in canonical order with their
        conditional probabilities."""
        out = {}
        for alpha, bucket in grouped.items():
            alpha_mass = sum(bucket.values(), Fraction(0))
            ordered = sorted(bucket.items(), key=lambda item: item[0].sort_key)
            out[alpha] = [(gamma, w / alpha_mass) for gamma, w in ordered]
        return out

    # every conditional law the walk could need, keyed by the parent pair atom
    block_table: dict[NestedAtom | None, dict] = {None: conditional_blocks(top_grouped)}
    for level in res_p.form.levels():
        for gamma in level:
            if not gamma.is_terminal:
                block_table[gamma] = conditional_blocks(pushed(gamma.law))

    required = 1
    for table in block_table.values():
        for block_list in table.values():
            for _, q in block_list:
                required = math.lcm(required, q.denominator)
    if m % required != 0:
        raise GridResolutionError(
            f"grid size {m} is too coarse: conditional laws need a multiple of {required}",
            required=required,
        )

    def pick(block_list, digit: int) -> NestedAtom:
        cursor = 0
        for gamma, q in block_list:
            cursor += int(q * m)
            if digit < cursor:
                return gamma
        raise SolverError("digit fell outside all conditional blocks")

    etree = target.tree
    realized: dict[str, NestedAtom] = {}
    for node in etree.nodes():
        base_id, chain = target.node_map[node.node_id]
        alpha = res_base.node_atom[base_id]
        parent = etree.parent(node.node_id)
        gamma_parent = realized[parent] if parent else None
        digit = chain[-1]
        gamma = pick(block_table[gamma_parent][alpha], digit)
        if gamma.value[:d] != base.node(base_id).value:
            raise SolverError("transfer misaligned the first coordinate")
        realized[node.node_id] = gamma

    pair_nodes = {}
    y_nodes = {}
    for node in etree.nodes():
        gamma = realized[node.node_id]
        base_id, chain = target.node_map[node.node_id]
        # label by (base node, digit): the atom identity on the extension,
        # which keeps siblings distinct however the values slice
        info = f"{base_id}|u{chain[-1]}"
        pair_nodes[node.node_id] = TreeNode(
            node_id=node.node_id,
            time=node.time,
            value=gamma.value,
            info=info,
            children=node.children,
        )
        y_nodes[node.node_id] = TreeNode(
            node_id=node.node_id,
            time=node.time,
            value=gamma.value[d:],
            info=info,
            children=node.children,
        )
    ecfg = etree.config
    pair_cfg = MetricConfig(
        num_steps=ecfg.num_steps, dim=2 * d, order=ecfg.order,
        value_decimals=prod_tree.config.value_decimals,
    )
    y_cfg = MetricConfig(
        num_steps=ecfg.num_steps, dim=d, order=ecfg.order,
        value_decimals=prod_tree.config.value_decimals,
    )
    pair_tree = FilteredTree(pair_cfg, pair_nodes, etree.root_children)
    y_tree = FilteredTree(y_cfg, y_nodes, etree.root_children)
    return TransferResult(pair_tree=pair_tree, y_tree=y_tree, required_m=required)
