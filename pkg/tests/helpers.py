"""Shared tree builders for the test suite.

Everything here builds exact-rational trees small enough that the whole
suite stays fast; random trees draw values from a quarter-integer lattice
and probabilities from small integer weights, so every expected quantity is
an exact fraction.
"""

from __future__ import annotations

import random
from fractions import Fraction as F

from adt import FilteredTree, MetricConfig, TreeNode


def cfg(n=2, d=1, p=1, decimals=12) -> MetricConfig:
    return MetricConfig(num_steps=n, dim=d, order=F(p), value_decimals=decimals)


def chain_tree(values, p=1, d=1) -> FilteredTree:
    """Deterministic path through the given per-time values."""
    steps = []
    for v in values:
        step = tuple(F(x) for x in v) if isinstance(v, (tuple, list)) else (F(v),)
        steps.append(step)
    nodes = {}
    for t, step in enumerate(steps, start=1):
        kids = ((f"n{t + 1}", F(1)),) if t < len(steps) else ()
        nodes[f"n{t}"] = TreeNode(f"n{t}", t, step, "", kids)
    return FilteredTree(cfg(n=len(steps), d=d, p=p), nodes, ((f"n1", F(1)),))


def bernoulli_x(p=1) -> FilteredTree:
    """Two steps: start at 0, then +/-1 with probability 1/2 each."""
    nodes = {
        "a": TreeNode("a", 1, (F(0),), "", (("a+", F(1, 2)), ("a-", F(1, 2)))),
        "a+": TreeNode("a+", 2, (F(1),), "", ()),
        "a-": TreeNode("a-", 2, (F(-1),), "", ()),
    }
    return FilteredTree(cfg(p=p), nodes, (("a", F(1)),))


def y_eps(eps, p=1) -> FilteredTree:
    """Two steps: +/-eps with probability 1/2, then the matching sign unit."""
    e = F(eps)
    nodes = {
        "b+": TreeNode("b+", 1, (e,), "", (("b++", F(1)),)),
        "b-": TreeNode("b-", 1, (-e,), "", (("b--", F(1)),)),
        "b++": TreeNode("b++", 2, (F(1),), "", ()),
        "b--": TreeNode("b--", 2, (F(-1),), "", ()),
    }
    return FilteredTree(cfg(p=p), nodes, (("b+", F(1, 2)), ("b-", F(1, 2))))


def sign_lift(p=1) -> FilteredTree:
    """Bernoulli start, but the filtration reveals the future sign at time 1."""
    nodes = {
        "l+": TreeNode("l+", 1, (F(0),), "up", (("l++", F(1)),)),
        "l-": TreeNode("l-", 1, (F(0),), "down", (("l--", F(1)),)),
        "l++": TreeNode("l++", 2, (F(1),), "", ()),
        "l--": TreeNode("l--", 2, (F(-1),), "", ()),
    }
    return FilteredTree(cfg(p=p), nodes, (("l+", F(1, 2)), ("l-", F(1, 2))))


def redundant_lift(p=1) -> FilteredTree:
    """Bernoulli start split into two informationally identical copies: the
    extra label carries nothing, so this collapses to bernoulli_x."""
    nodes = {
        "r0": TreeNode("r0", 1, (F(0),), "copy0", (("r0+", F(1, 2)), ("r0-", F(1, 2)))),
        "r1": TreeNode("r1", 1, (F(0),), "copy1", (("r1+", F(1, 2)), ("r1-", F(1, 2)))),
        "r0+": TreeNode("r0+", 2, (F(1),), "", ()),
        "r0-": TreeNode("r0-", 2, (F(-1),), "", ()),
        "r1+": TreeNode("r1+", 2, (F(1),), "", ()),
        "r1-": TreeNode("r1-", 2, (F(-1),), "", ()),
    }
    return FilteredTree(cfg(p=p), nodes, (("r0", F(1, 2)), ("r1", F(1, 2))))


def perturbed_x(n: int, p=1) -> FilteredTree:
    """bernoulli_x with the second-step values pushed out to +/-(1 + 1/n)."""
    v = F(1) + F(1, n)
    nodes = {
        "a": TreeNode("a", 1, (F(0),), "", (("a+", F(1, 2)), ("a-", F(1, 2)))),
        "a+": TreeNode("a+", 2, (v,), "", ()),
        "a-": TreeNode("a-", 2, (-v,), "", ()),
    }
    return FilteredTree(cfg(p=p), nodes, (("a", F(1)),))


def random_walk_tree(n=3, p=1, step=F(1)) -> FilteredTree:
    """Symmetric +-step random walk from 0 with the natural filtration."""
    nodes = {}

    def build(time, value, path) -> str:
        nid = "w" + path
        if time == n:
            nodes[nid] = TreeNode(nid, time, (value,), "", ())
            return nid
        kids = (
            (build(time + 1, value + step, path + "u"), F(1, 2)),
            (build(time + 1, value - step, path + "d"), F(1, 2)),
        )
        nodes[nid] = TreeNode(nid, time, (value,), "", kids)
        return nid

    root = build(1, F(0), "r")
    return FilteredTree(cfg(n=n, p=p), nodes, ((root, F(1)),))


def random_tree(
    rng: random.Random,
    n: int | None = None,
    d: int = 1,
    p=1,
    max_children: int = 3,
    with_info: bool = True,
) -> FilteredTree:
    """Small random tree with lattice values and exact rational probabilities.

    Occasionally duplicates sibling values with distinct info labels so the
    filtration genuinely differs from the natural one.
    """
    if n is None:
        n = rng.choice((2, 2, 3))
    counter = [0]
    nodes = {}

    def random_value():
        return tuple(F(rng.randint(-4, 4), 2) for _ in range(d))

    def build(time: int) -> str:
        counter[0] += 1
        nid = f"t{counter[0]}"
        if time == n:
            nodes[nid] = TreeNode(nid, time, random_value(), "", ())
            return nid
        width = rng.randint(1, max_children)
        weights = [rng.randint(1, 4) for _ in range(width)]
        total = sum(weights)
        kids = []
        seen = set()
        for k, w in enumerate(weights):
            cid = build(time + 1)
            node = nodes[cid]
            info = ""
            if with_info and rng.random() < 0.25:
                info = f"i{k}"
            while (node.value, info) in seen:
                info = f"i{k}.{len(seen)}"
            seen.add((node.value, info))
            if info != node.info:
                nodes[cid] = TreeNode(cid, node.time, node.value, info, node.children)
            kids.append((cid, F(w, total)))
        nodes[nid] = TreeNode(nid, time, random_value(), "", tuple(kids))
        return nid

    width = rng.randint(1, max_children)
    weights = [rng.randint(1, 4) for _ in range(width)]
    total = sum(weights)
    roots = []
    seen = set()
    for k, w in enumerate(weights):
        cid = build(1)
        node = nodes[cid]
        info = ""
        while (node.value, info) in seen:
            info = f"r{k}.{len(seen)}"
        seen.add((node.value, info))
        if info != node.info:
            nodes[cid] = TreeNode(cid, node.time, node.value, info, node.children)
        roots.append((cid, F(w, total)))
    return FilteredTree(cfg(n=n, d=d, p=p), nodes, tuple(roots))


def random_pair(rng: random.Random, p=1, d: int = 1, n: int | None = None):
    """Two independent random trees sharing one metric configuration."""
    if n is None:
        n = rng.choice((2, 2, 3))
    return (
        random_tree(rng, n=n, d=d, p=p),
        random_tree(rng, n=n, d=d, p=p),
    )


REGRESSION_EPS = (F(1, 10), F(1, 100))


def regression_pairs(p=1, rng_seed: int = 424242, extra_random: int = 12):
    """The named worked pairs plus a few random ones, all at order p."""
    pairs = [
        (bernoulli_x(p), y_eps(F(1, 10), p)),
        (bernoulli_x(p), y_eps(F(1, 100), p)),
        (bernoulli_x(p), sign_lift(p)),
        (bernoulli_x(p), redundant_lift(p)),
        (sign_lift(p), y_eps(F(1, 10), p)),
        (random_walk_tree(3, p), random_walk_tree(3, p, step=F(1, 2))),
    ]
    rng = random.Random(rng_seed)
    for _ in range(extra_random):
        pairs.append(random_pair(rng, p=p))
    return pairs


def regression_trees(p=1, rng_seed: int = 535353, extra_random: int = 10):
    trees = [
        bernoulli_x(p),
        y_eps(F(1, 10), p),
        sign_lift(p),
        redundant_lift(p),
        chain_tree([0, 1], p=p),
        random_walk_tree(3, p),
    ]
    rng = random.Random(rng_seed)
    for _ in range(extra_random):
        trees.append(random_tree(rng, p=p))
    return trees
