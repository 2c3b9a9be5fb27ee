"""Specification trees: the branching state a verification run records.

A specification tree is a rooted full binary tree.  Each edge carries a split
decision (one ReLU pinned to a sign, or one input dimension halved), so every
node denotes a subproblem: the root property restricted by the decisions on
the node's root path.  Nodes carry the lower bound the analyzer proved for
that subproblem and a status.

Trees outlive single runs: a finished run's tree can be saved, loaded,
scored (per-decision observed improvements), and pruned (ineffective splits
spliced out) to warm-start verification of a modified network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from incver.model import ParseError, ReluId
from incver.props import InputBox, Property

__all__ = [
    "InputDecision",
    "NodeStatus",
    "ReluDecision",
    "SpecNode",
    "SpecTree",
    "improvement",
    "leaves",
    "load_tree",
    "observed_scores",
    "prune",
    "reset_copy",
    "save_tree",
    "singleton",
    "spec_of",
    "split",
]


class NodeStatus(Enum):
    UNANALYZED = "Unanalyzed"
    VERIFIED = "Verified"
    UNKNOWN = "Unknown"
    COUNTEREXAMPLE = "Counterexample"


@dataclass(frozen=True)
class ReluDecision:
    """One ReLU unit pinned to a sign: "+" keeps x = xhat, "-" pins x = 0."""

    rid: ReluId
    sign: str

    def __post_init__(self) -> None:
        if self.sign not in ("+", "-"):
            raise ValueError(f"sign must be '+' or '-', got {self.sign!r}")

    def complement(self) -> "ReluDecision":
        return ReluDecision(self.rid, "-" if self.sign == "+" else "+")

    def key(self):
        return self.rid


@dataclass(frozen=True)
class InputDecision:
    """One input dimension restricted to a half: "low" is [lo, cut], "high" is [cut, hi]."""

    dim: int
    half: str
    cut: float

    def __post_init__(self) -> None:
        if self.half not in ("low", "high"):
            raise ValueError(f"half must be 'low' or 'high', got {self.half!r}")

    def complement(self) -> "InputDecision":
        return InputDecision(self.dim, "high" if self.half == "low" else "low", self.cut)

    def key(self):
        return self.dim


Decision = Union[ReluDecision, InputDecision]


@dataclass
class SpecNode:
    node_id: int
    parent: Optional[int] = None
    decision: Optional[Decision] = None  # the edge decision from the parent
    left: Optional[int] = None
    right: Optional[int] = None
    lb: Optional[float] = None
    status: NodeStatus = NodeStatus.UNANALYZED

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class SpecTree:
    branching: str  # "relu" or "input"
    nodes: dict = field(default_factory=dict)
    root: int = 0
    next_id: int = 1
    root_box: Optional[InputBox] = None

    def node(self, node_id: int) -> SpecNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise ValueError(f"no node with id {node_id}") from None

    def num_nodes(self) -> int:
        return len(self.nodes)

    def num_leaves(self) -> int:
        return sum(1 for n in self.nodes.values() if n.is_leaf)

    def num_internal(self) -> int:
        return self.num_nodes() - self.num_leaves()


def singleton(prop: Property, branching: str = "relu") -> SpecTree:
    """A one-node tree rooted at the full property."""
    if branching not in ("relu", "input"):
        raise ValueError(f"branching must be 'relu' or 'input', got {branching!r}")
    tree = SpecTree(branching=branching, root_box=prop.input)
    tree.nodes[0] = SpecNode(node_id=0)
    return tree


def path_decisions(tree: SpecTree, node_id: int) -> list:
    """Edge decisions from the root down to the node, in path order."""
    chain = []
    cur = tree.node(node_id)
    while cur.parent is not None:
        chain.append(cur.decision)
        cur = tree.node(cur.parent)
    chain.reverse()
    return chain


def split(tree: SpecTree, node_id: int, decision_pair: tuple) -> tuple:
    """Split a leaf in place; returns (left_id, right_id).

    The pair must be complementary (same ReLU with opposite signs, or the two
    halves of the same cut).  Splitting an internal node, or re-splitting a
    ReLU already decided on the node's path, is a usage error.
    """
    node = tree.node(node_id)
    if not node.is_leaf:
        raise ValueError(f"node {node_id} is internal; only leaves can be split")
    left_d, right_d = decision_pair
    if type(left_d) is not type(right_d) or left_d.complement() != right_d:
        raise ValueError(f"decisions {left_d} and {right_d} are not complementary")
    if isinstance(left_d, ReluDecision):
        if tree.branching != "relu":
            raise ValueError("ReLU decision in an input-splitting tree")
        on_path = {d.rid for d in path_decisions(tree, node_id)}
        if left_d.rid in on_path:
            raise ValueError(f"{left_d.rid} is already split on the path to node {node_id}")
    elif tree.branching != "input":
        raise ValueError("input decision in a ReLU-splitting tree")
    left = SpecNode(node_id=tree.next_id, parent=node_id, decision=left_d)
    right = SpecNode(node_id=tree.next_id + 1, parent=node_id, decision=right_d)
    tree.nodes[left.node_id] = left
    tree.nodes[right.node_id] = right
    tree.next_id += 2
    node.left = left.node_id
    node.right = right.node_id
    return left.node_id, right.node_id


def spec_of(tree: SpecTree, node_id: int, box: Optional[InputBox] = None) -> tuple:
    """Reconstruct a node's subproblem: (input box, ordered split assignment).

    The root box comes from the tree when it was built in this process, or
    from ``box`` for loaded trees (serialized trees do not carry the box).
    """
    if box is None:
        box = tree.root_box
    if box is None:
        raise ValueError("tree has no root box; pass the property's box explicitly")
    lower = np.array(box.lower, dtype=float)
    upper = np.array(box.upper, dtype=float)
    assignment: dict = {}
    for d in path_decisions(tree, node_id):
        if isinstance(d, ReluDecision):
            assignment[d.rid] = d.sign
        else:
            if d.half == "low":
                upper[d.dim] = min(upper[d.dim], d.cut)
            else:
                lower[d.dim] = max(lower[d.dim], d.cut)
    return InputBox(lower, upper), assignment


def improvement(tree: SpecTree, node_id: int) -> float:
    """How much the node's split tightened the bound: the worse child's gain.

    Defined as min over the two children of (child lb - node lb).  Negative
    values are possible only through solver tolerance; they are returned
    unclamped so callers can see them.
    """
    node = tree.node(node_id)
    if node.is_leaf:
        raise ValueError(f"node {node_id} is a leaf; improvement needs a split")
    lbs = (node.lb, tree.node(node.left).lb, tree.node(node.right).lb)
    if any(v is None for v in lbs):
        raise ValueError(f"node {node_id} or a child has no recorded lower bound")
    return min(lbs[1] - lbs[0], lbs[2] - lbs[0])


def _split_key(tree: SpecTree, node: SpecNode):
    return tree.node(node.left).decision.key()


def observed_scores(tree: SpecTree) -> dict:
    """Mean improvement per split key over the internal nodes that used it.

    Keys are ReluIds for ReLU trees and input dimensions for input trees.
    Internal nodes lacking recorded bounds (hand-off trees from interrupted
    runs) are skipped; keys never split in this tree are absent.
    """
    sums: dict = {}
    counts: dict = {}
    for node in tree.nodes.values():
        if node.is_leaf:
            continue
        try:
            imp = improvement(tree, node.node_id)
        except ValueError:
            continue
        key = _split_key(tree, node)
        sums[key] = sums.get(key, 0.0) + imp
        counts[key] = counts.get(key, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}


def leaves(tree: SpecTree) -> list:
    """Leaf ids in ascending id order (the verifier's processing order)."""
    return sorted(n.node_id for n in tree.nodes.values() if n.is_leaf)


def _fresh_node(tree: SpecTree, parent, decision) -> SpecNode:
    node = SpecNode(node_id=tree.next_id, parent=parent, decision=decision)
    tree.nodes[node.node_id] = node
    tree.next_id += 1
    return node


def prune(tree: SpecTree, theta: float) -> SpecTree:
    """Copy the tree, splicing out splits whose recorded improvement is below
    ``theta``.

    Walking top-down: a node whose split improved the bound by less than
    ``theta`` (strictly) is replaced by its weaker child (the one with the
    smaller recorded bound; ties keep the left child), repeating through runs
    of consecutive ineffective splits.  Splits whose improvement cannot be
    computed (missing bounds on interrupted runs) are kept.  The copy's nodes
    are all reset to Unanalyzed with no recorded bounds.
    """
    out = SpecTree(branching=tree.branching, root_box=tree.root_box)
    out.nodes[0] = SpecNode(node_id=0)
    work = [(tree.root, 0)]
    while work:
        src_id, dst_id = work.pop()
        src = tree.node(src_id)
        while not src.is_leaf:
            try:
                imp = improvement(tree, src.node_id)
            except ValueError:
                break  # unevaluable split: keep it as recorded
            if imp >= theta:
                break
            left, right = tree.node(src.left), tree.node(src.right)
            src = left if left.lb <= right.lb else right
        if src.is_leaf:
            continue
        dst = out.node(dst_id)
        left, right = tree.node(src.left), tree.node(src.right)
        dl = _fresh_node(out, dst_id, left.decision)
        dr = _fresh_node(out, dst_id, right.decision)
        dst.left = dl.node_id
        dst.right = dr.node_id
        work.append((right.node_id, dr.node_id))
        work.append((left.node_id, dl.node_id))
    return out


def reset_copy(tree: SpecTree) -> SpecTree:
    """Structural copy with statuses and bounds cleared (for re-running)."""
    out = SpecTree(branching=tree.branching, root=tree.root, next_id=tree.next_id, root_box=tree.root_box)
    for nid, n in tree.nodes.items():
        out.nodes[nid] = SpecNode(
            node_id=n.node_id,
            parent=n.parent,
            decision=n.decision,
            left=n.left,
            right=n.right,
        )
    return out


# ------------------------------------------------------------- serialization


def _decision_to_json(d: Optional[Decision]):
    if d is None:
        return None
    if isinstance(d, ReluDecision):
        return {"kind": "relu", "layer": d.rid.layer, "neuron": d.rid.neuron, "sign": d.sign}
    return {"kind": "input", "dim": d.dim, "half": d.half, "cut": d.cut}


def _decision_from_json(obj, where: str) -> Decision:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    kind = obj.get("kind")
    try:
        if kind == "relu":
            layer, neuron, sign = obj["layer"], obj["neuron"], obj["sign"]
            if not isinstance(layer, int) or not isinstance(neuron, int):
                raise ParseError(f"{where}: layer and neuron must be integers")
            return ReluDecision(ReluId(layer, neuron), sign)
        if kind == "input":
            dim, half, cut = obj["dim"], obj["half"], obj["cut"]
            if not isinstance(dim, int) or not isinstance(cut, (int, float)):
                raise ParseError(f"{where}: dim must be int and cut a number")
            return InputDecision(dim, half, float(cut))
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    raise ParseError(f"{where}.kind: expected 'relu' or 'input', got {kind!r}")


def tree_to_json(tree: SpecTree) -> dict:
    nodes = []
    for nid in sorted(tree.nodes):
        n = tree.nodes[nid]
        nodes.append(
            {
                "id": n.node_id,
                "parent": n.parent,
                "decision": _decision_to_json(n.decision),
                "split": None if n.is_leaf else {"left": n.left, "right": n.right},
                "lb": n.lb,
                "status": n.status.value,
            }
        )
    return {"branching": tree.branching, "nodes": nodes}


def tree_from_json(obj, where: str = "tree") -> SpecTree:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    branching = obj.get("branching")
    if branching not in ("relu", "input"):
        raise ParseError(f"{where}.branching: expected 'relu' or 'input', got {branching!r}")
    items = obj.get("nodes")
    if not isinstance(items, list) or not items:
        raise ParseError(f"{where}.nodes: expected a non-empty list")

    tree = SpecTree(branching=branching)
    tree.nodes = {}
    roots = []
    for k, item in enumerate(items):
        w = f"{where}.nodes[{k}]"
        if not isinstance(item, dict):
            raise ParseError(f"{w}: expected an object")
        nid = item.get("id")
        if not isinstance(nid, int):
            raise ParseError(f"{w}.id: expected an integer")
        if nid in tree.nodes:
            raise ParseError(f"{w}.id: duplicate id {nid}")
        parent = item.get("parent")
        if parent is not None and not isinstance(parent, int):
            raise ParseError(f"{w}.parent: expected an integer or null")
        dec = item.get("decision")
        decision = None if dec is None else _decision_from_json(dec, f"{w}.decision")
        if (parent is None) != (decision is None):
            raise ParseError(f"{w}: parent and decision must both be present or both null")
        if parent is None:
            roots.append(nid)
        sp = item.get("split")
        left = right = None
        if sp is not None:
            if not isinstance(sp, dict) or not isinstance(sp.get("left"), int) or not isinstance(sp.get("right"), int):
                raise ParseError(f"{w}.split: expected an object with integer 'left' and 'right'")
            left, right = sp["left"], sp["right"]
        lb = item.get("lb")
        if lb is not None and not isinstance(lb, (int, float)):
            raise ParseError(f"{w}.lb: expected a number or null")
        status_s = item.get("status", "Unanalyzed")
        try:
            status = NodeStatus(status_s)
        except ValueError:
            raise ParseError(f"{w}.status: unknown status {status_s!r}") from None
        tree.nodes[nid] = SpecNode(
            node_id=nid,
            parent=parent,
            decision=decision,
            left=left,
            right=right,
            lb=None if lb is None else float(lb),
            status=status,
        )

    if len(roots) != 1:
        raise ParseError(f"{where}: expected exactly one root, found {len(roots)}")
    tree.root = roots[0]
    tree.next_id = max(tree.nodes) + 1

    # structural validation: parent/child agreement, full binary, acyclic
    child_count: dict = {nid: 0 for nid in tree.nodes}
    for n in tree.nodes.values():
        if n.parent is not None:
            if n.parent not in tree.nodes:
                raise ParseError(f"{where}: node {n.node_id} has unknown parent {n.parent}")
            child_count[n.parent] += 1
            p = tree.nodes[n.parent]
            if n.node_id not in (p.left, p.right):
                raise ParseError(
                    f"{where}: node {n.node_id} claims parent {n.parent}, "
                    "which does not list it as a child"
                )
    for n in tree.nodes.values():
        expected = 0 if n.is_leaf else 2
        if child_count[n.node_id] != expected:
            raise ParseError(
                f"{where}: node {n.node_id} has {child_count[n.node_id]} children, "
                f"expected {expected} (full-binary violation)"
            )
        if not n.is_leaf:
            for cid in (n.left, n.right):
                if cid not in tree.nodes:
                    raise ParseError(f"{where}: node {n.node_id} lists unknown child {cid}")
                if tree.nodes[cid].parent != n.node_id:
                    raise ParseError(
                        f"{where}: child {cid} of node {n.node_id} has parent "
                        f"{tree.nodes[cid].parent}"
                    )
            ld, rd = tree.nodes[n.left].decision, tree.nodes[n.right].decision
            if type(ld) is not type(rd) or ld.complement() != rd:
                raise ParseError(
                    f"{where}: node {n.node_id} has non-complementary child decisions"
                )

    # reachability doubles as the acyclicity check
    seen = set()
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise ParseError(f"{where}: cycle detected at node {nid}")
        seen.add(nid)
        n = tree.nodes[nid]
        if not n.is_leaf:
            stack.extend((n.left, n.right))
    if seen != set(tree.nodes):
        stray = sorted(set(tree.nodes) - seen)
        raise ParseError(f"{where}: nodes {stray} are not reachable from the root")

    if branching == "relu":
        for nid in leaves(tree):
            rids = [d.rid for d in path_decisions(tree, nid)]
            if len(rids) != len(set(rids)):
                raise ParseError(f"{where}: a ReLU repeats on the path to leaf {nid}")
    return tree


def save_tree(tree: SpecTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_json(tree), fh, indent=1)
        fh.write("\n")


def load_tree(path) -> SpecTree:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return tree_from_json(obj, where=str(path))
