"""Branch-and-bound verification with proof-tree reuse across network edits.

``verify`` runs the search on one network, growing a specification tree
whose leaves partition the property into subproblems the analyzer can
settle.  ``verify_incremental`` verifies an original network, then replays
its proof tree (reused, reordered, or pruned, depending on the mode)
against an updated network so the second run starts from the structure
that worked the first time instead of from scratch.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from incver.analyzer import Verdict, analyze, compute_bounds
from incver.heuristics import HeuristicConfig, choose_input_split, choose_split
from incver.model import Affine, Network, same_architecture
from incver.props import Property
from incver.spectree import (
    NodeStatus,
    SpecTree,
    leaves,
    observed_scores,
    prune,
    reset_copy,
    singleton,
    spec_of,
    split,
)

BRANCHINGS = ("relu", "input")


class Mode(Enum):
    """How the second run of verify_incremental uses the first run's tree."""

    BASELINE = "baseline"
    REUSE = "reuse"
    REORDER = "reorder"
    IVAN = "ivan"


class RunVerdict(Enum):
    VERIFIED = "Verified"
    COUNTEREXAMPLE = "Counterexample"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class VerifierConfig:
    mode: Mode = Mode.BASELINE
    heuristic: HeuristicConfig = HeuristicConfig()
    timeout: float = 60.0
    max_nodes: int = 100_000
    branching: str = "relu"
    min_width: float = 1e-6

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_nodes < 1:
            raise ValueError(f"max_nodes must be at least 1, got {self.max_nodes}")
        if self.branching not in BRANCHINGS:
            raise ValueError(f"branching must be one of {BRANCHINGS}, got {self.branching!r}")
        if self.min_width <= 0:
            raise ValueError(f"min_width must be positive, got {self.min_width}")


@dataclass(frozen=True)
class RunMetrics:
    """Work done by one verification run.

    boundings counts analyzer calls; branchings counts tree splits.  For a
    completed run these satisfy the tree accounting identities

        boundings  == nodes_final - nodes_initial + leaves_initial
        branchings == internal_final - internal_initial

    because every starting leaf and every created node is bounded exactly
    once, and every split adds one internal node.
    """

    boundings: int
    branchings: int
    wall_time: float
    nodes_initial: int
    nodes_final: int
    leaves_final: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RunResult:
    verdict: RunVerdict
    tree: SpecTree
    metrics: RunMetrics
    counterexample: Optional[np.ndarray] = None
    note: str = ""


@dataclass(frozen=True)
class DeltaBound:
    """Certified radius for last-layer weight perturbations.

    Any perturbation E of the final affine weights with Frobenius norm at
    most ``delta`` leaves every leaf of the recorded proof tree verifiable
    without further splitting, because the bounding LP's feasible region is
    unchanged and its objective shifts by at most |c|_2 * |E|_F * eta.
    ``eta`` upper-bounds the 2-norm of the activations feeding the final
    layer over the whole input box; ``lb_min`` is the weakest leaf bound.
    A degenerate eta of zero makes every perturbation harmless, reported
    as delta = inf.
    """

    delta: float
    lb_min: float
    eta: float
    c_norm: float


def _metrics(boundings, branchings, start, tree, nodes_initial) -> RunMetrics:
    return RunMetrics(
        boundings=boundings,
        branchings=branchings,
        wall_time=time.perf_counter() - start,
        nodes_initial=nodes_initial,
        nodes_final=tree.num_nodes(),
        leaves_final=tree.num_leaves(),
    )


def _node_property(tree: SpecTree, nid: int, prop: Property):
    box, assignment = spec_of(tree, nid, box=prop.input)
    return Property(box, prop.output, name=prop.name), assignment


def verify(
    net: Network,
    prop: Property,
    cfg: VerifierConfig,
    initial_tree: Optional[SpecTree] = None,
    hobs: Optional[dict] = None,
) -> RunResult:
    """Branch-and-bound from the given tree's leaves (singleton if omitted).

    The run works phase by phase: bound every active node, then split the
    inconclusive ones and make their children the next phase's frontier.
    A whole phase is bounded before any counterexample is acted on, and the
    lowest-numbered violating node wins, so results and call counts do not
    depend on evaluation order within a phase.

    ``hobs`` carries per-split effectiveness statistics recorded on an
    earlier proof tree; when absent, candidates are ranked purely by the
    base heuristic (the mixed score's correction term has nothing to say).
    The caller's ``initial_tree`` is never mutated: its structure is copied
    and re-annotated from scratch, since bounds proved on one network mean
    nothing on another.
    """
    start = time.perf_counter()
    if initial_tree is None:
        tree = singleton(prop, branching=cfg.branching)
    else:
        if initial_tree.branching != cfg.branching:
            raise ValueError(
                f"initial tree branches on {initial_tree.branching!r} "
                f"but the configuration says {cfg.branching!r}"
            )
        tree = reset_copy(initial_tree)
    nodes_initial = tree.num_nodes()
    ranking_cfg = cfg.heuristic
    if hobs is None:
        ranking_cfg = dataclasses.replace(cfg.heuristic, alpha=1.0)

    boundings = 0
    branchings = 0
    c = prop.output.c
    active = leaves(tree)
    while active:
        # Bounding phase: analyze the whole frontier.
        outcomes = []
        for nid in active:
            if time.perf_counter() - start > cfg.timeout:
                return RunResult(
                    RunVerdict.TIMEOUT,
                    tree,
                    _metrics(boundings, branchings, start, tree, nodes_initial),
                    note="wall-clock timeout",
                )
            node_prop, assignment = _node_property(tree, nid, prop)
            res = analyze(net, node_prop, assignment)
            boundings += 1
            node = tree.node(nid)
            node.lb = res.lb_value
            node.status = NodeStatus(res.status.value)
            outcomes.append((nid, res))

        violations = [(nid, r) for nid, r in outcomes if r.status is Verdict.COUNTEREXAMPLE]
        if violations:
            nid, res = min(violations, key=lambda pair: pair[0])
            return RunResult(
                RunVerdict.COUNTEREXAMPLE,
                tree,
                _metrics(boundings, branchings, start, tree, nodes_initial),
                counterexample=res.candidate,
            )

        # Branching phase: split every node the analyzer could not settle.
        next_active = []
        for nid in (n for n, r in outcomes if r.status is Verdict.UNKNOWN):
            if tree.num_nodes() + 2 > cfg.max_nodes:
                return RunResult(
                    RunVerdict.TIMEOUT,
                    tree,
                    _metrics(boundings, branchings, start, tree, nodes_initial),
                    note=f"node budget of {cfg.max_nodes} exhausted",
                )
            node_prop, assignment = _node_property(tree, nid, prop)
            if tree.branching == "relu":
                bounds = compute_bounds(net, node_prop.input, assignment, objective=c)
                pick = choose_split(ranking_cfg, bounds, forbidden=set(assignment), observed=hobs)
                if pick is None:
                    raise RuntimeError(
                        f"node {nid} is inconclusive but every ReLU is stable or "
                        "already split; an exactly-encoded subproblem must resolve"
                    )
            else:
                widths = node_prop.input.upper - node_prop.input.lower
                if float(widths.max()) <= cfg.min_width:
                    return RunResult(
                        RunVerdict.TIMEOUT,
                        tree,
                        _metrics(boundings, branchings, start, tree, nodes_initial),
                        note=f"minimum box width {cfg.min_width} reached at node {nid}",
                    )
                pick = choose_input_split(node_prop.input)
            left, right = split(tree, nid, pick)
            branchings += 1
            next_active.extend((left, right))
        active = next_active

    return RunResult(
        RunVerdict.VERIFIED,
        tree,
        _metrics(boundings, branchings, start, tree, nodes_initial),
    )


def verify_incremental(
    net_original: Network,
    net_updated: Network,
    prop: Property,
    cfg: VerifierConfig,
) -> Tuple[RunResult, RunResult]:
    """Verify the original network, then the updated one using its proof.

    The first run is always a from-scratch search on ``net_original``.  The
    second run starts from material the first produced, per ``cfg.mode``:

    * baseline: nothing carried over, fresh search on the updated network;
    * reuse: start from a blank copy of the first run's final tree;
    * reorder: fresh tree, but candidate splits are re-ranked by their
      recorded effectiveness;
    * ivan: both, after cutting splits that improved bounds by less than
      theta out of the reused tree.

    A first run that ended in a counterexample or timeout still hands its
    partial tree over (noted on the second result); the structure it did
    build remains a valid, if unfinished, decomposition.
    """
    if not same_architecture(net_original, net_updated):
        raise ValueError("networks have different architectures; nothing to carry over")
    base_cfg = dataclasses.replace(cfg, mode=Mode.BASELINE)
    first = verify(net_original, prop, base_cfg)

    note = ""
    if first.verdict is not RunVerdict.VERIFIED:
        note = f"reused tree comes from a first run that ended {first.verdict.value}"

    if cfg.mode is Mode.BASELINE:
        second = verify(net_updated, prop, cfg)
    elif cfg.mode is Mode.REUSE:
        second = verify(net_updated, prop, cfg, initial_tree=first.tree)
    elif cfg.mode is Mode.REORDER:
        second = verify(net_updated, prop, cfg, hobs=observed_scores(first.tree))
    else:
        pruned = prune(first.tree, cfg.heuristic.theta)
        second = verify(
            net_updated, prop, cfg, initial_tree=pruned, hobs=observed_scores(first.tree)
        )
    if note:
        joined = f"{second.note}; {note}" if second.note else note
        second = dataclasses.replace(second, note=joined)
    return first, second


def predicted_cost(t_a: float, t_h: float, tree0: SpecTree, tree_f: SpecTree) -> float:
    """Closed-form cost of extending tree0 into tree_f.

    With unit costs this equals boundings + branchings of the actual run:
    (t_a + t_h) * (|nodes_f| + (1 - |nodes_0|) / 2) - t_h * |leaves_f|.
    """
    return (t_a + t_h) * (tree_f.num_nodes() + (1 - tree0.num_nodes()) / 2) - (
        t_h * tree_f.num_leaves()
    )


def theoretical_speedup(tree: SpecTree) -> float:
    """Best-case bounding-count ratio of a fresh run to a full reuse run."""
    return tree.num_nodes() / tree.num_leaves()


def speedup(baseline_times, incremental_times) -> float:
    """Ratio of summed baseline time to summed incremental time."""
    base = list(baseline_times)
    inc = list(incremental_times)
    if len(base) != len(inc):
        raise ValueError(f"mismatched lengths: {len(base)} baseline vs {len(inc)} incremental")
    if not base:
        raise ValueError("speedup is undefined on an empty instance set")
    return float(sum(base)) / float(sum(inc))


def delta_bound(net: Network, prop: Property, tree: SpecTree) -> DeltaBound:
    """How much the last layer's weights may move before the proof breaks.

    Requires a tree whose every leaf carries a recorded lower bound (a
    finished run on ``net``).  eta is computed from this network's bounds
    over the unsplit root region, so it dominates every leaf subregion.
    """
    leaf_lbs = []
    for nid in leaves(tree):
        lb = tree.node(nid).lb
        if lb is None:
            raise ValueError(f"leaf {nid} has no recorded lower bound; run was not completed")
        leaf_lbs.append(lb)
    lb_min = min(leaf_lbs)

    # Bound the vector feeding the final affine layer by swapping that layer
    # for an identity map and reading the probe network's output bounds; this
    # covers single-affine nets and consecutive trailing affines alike.
    k = net.layers[-1].in_dim
    probe = Network(net.layers[:-1] + (Affine(np.eye(k), np.zeros(k)),))
    bounds = compute_bounds(probe, prop.input, {})
    lo, hi = bounds.out_lb, bounds.out_ub
    eta = float(np.sqrt(np.sum(np.maximum(lo**2, hi**2))))
    c_norm = float(np.linalg.norm(prop.output.c))

    if lb_min == 0.0:
        delta = 0.0
    elif c_norm * eta == 0.0:
        delta = math.inf
    else:
        delta = abs(lb_min) / (c_norm * eta)
    return DeltaBound(delta=delta, lb_min=lb_min, eta=eta, c_norm=c_norm)
