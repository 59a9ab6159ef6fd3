"""LLM-guided hierarchy refinement: recursive cluster splitting, bottom-up
triple refinement and hierarchy statistics.
"""
from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass

import numpy as np

from . import llm
from .llm import ChatClient, SchemaError
from .tree import HierarchyTree, Node, iter_preorder

log = logging.getLogger(__name__)

MAX_SUBCLUSTERS = 5


class Action(enum.Enum):
    NO_UPDATE = "NO UPDATE"
    PARENT_MERGE = "PARENT MERGE"
    LEAF_MERGE = "LEAF MERGE"
    LEFT_INCLUDES_RIGHT = "A INCLUDES B"
    RIGHT_INCLUDES_LEFT = "B INCLUDES A"


@dataclass(frozen=True)
class RefineAction:
    action: Action
    name: str | None = None

    def __post_init__(self):
        if self.action is not Action.NO_UPDATE and not self.name:
            raise ValueError(f"{self.action.value} needs a name")


# --------------------------------------------------------------------------- parsers

def parse_description(text: str) -> str:
    text = text.strip()
    if not text:
        raise SchemaError("empty description")
    return text


def parse_name(text: str) -> str:
    m = re.search(r"^\s*Name:\s*(.+?)\s*$", text, flags=re.M)
    if not m:
        raise SchemaError('missing "Name:" line')
    return m.group(1)


def make_split_parser(entities: list[str]):
    expected = set(entities)

    def parse(text: str) -> list[tuple[str, list[str]]]:
        groups: list[tuple[str, list[str]]] = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("## "):
                name = line[3:].strip()
                if not name:
                    raise SchemaError("subcluster with an empty name")
                groups.append((name, []))
            elif line.startswith("- "):
                if not groups:
                    raise SchemaError("entity listed before any subcluster header")
                groups[-1][1].append(line[2:].strip())
            else:
                raise SchemaError(f"unexpected line {line[:60]!r}")
        if not 1 <= len(groups) <= MAX_SUBCLUSTERS:
            raise SchemaError(f"expected 1-{MAX_SUBCLUSTERS} subclusters, got {len(groups)}")
        seen: list[str] = [e for _, ents in groups for e in ents]
        if any(not ents for _, ents in groups):
            raise SchemaError("empty subcluster")
        if len(seen) != len(set(seen)):
            raise SchemaError("an entity appears in more than one subcluster")
        if set(seen) != expected:
            missing = sorted(expected - set(seen))[:5]
            extra = sorted(set(seen) - expected)[:5]
            raise SchemaError(f"entity set mismatch (missing {missing}, unknown {extra})")
        return groups

    return parse


def parse_refine(text: str) -> RefineAction:
    m = re.search(r"^\s*Action:\s*(.+?)\s*$", text, flags=re.M)
    if not m:
        raise SchemaError('missing "Action:" line')
    label = " ".join(m.group(1).upper().replace("_", " ").split())
    try:
        action = Action(label)
    except ValueError:
        raise SchemaError(f"unknown action {m.group(1)!r}") from None
    n = re.search(r"^\s*Name:\s*(.+?)\s*$", text, flags=re.M)
    name = n.group(1) if n else None
    if action is not Action.NO_UPDATE and not name:
        raise SchemaError(f"{action.value} requires a name")
    return RefineAction(action, name)


# --------------------------------------------------------------------------- operations

def describe_entity(entity: str, client: ChatClient, hint: str | None = None) -> str:
    return client.ask(llm.describe_prompt(entity, hint), parse_description)


def describe_entities(entities: list[str], client: ChatClient, hints: dict | None = None) -> list[str]:
    hints = hints or {}
    return client.map(lambda e: describe_entity(e, client, hints.get(e)), entities)


def _name_cluster(client, names):
    return client.ask(llm.name_prompt(names), parse_name)


def split_clusters(tree: HierarchyTree, client: ChatClient, entity_names: list[str],
                   min_entities_in_leaf: int = 4) -> HierarchyTree:
    """Offer every leaf with at least ``min_entities_in_leaf`` entities to the
    LLM for splitting, recursing into the returned subclusters.

    Responses failing validation after the client's retries leave that leaf
    unsplit; the reason is appended to ``tree.warnings``.
    """
    out = tree.copy("split")
    warnings: list[str] = []

    def split_leaf(entities: list[int], name: str | None) -> tuple[Node, list[str]]:
        notes: list[str] = []
        if len(entities) < min_entities_in_leaf:
            return Node(name=name, entities=entities), notes
        labels = [entity_names[e] for e in entities]
        try:
            if name is None:
                name = _name_cluster(client, labels)
            groups = client.ask(llm.split_prompt(name, labels), make_split_parser(labels))
        except (SchemaError, llm.ClientError) as exc:
            notes.append(f"split of cluster {name!r} ({len(entities)} entities) skipped: {exc}")
            return Node(name=name, entities=entities), notes
        if len(groups) == 1:
            return Node(name=name, entities=entities), notes
        lookup = {entity_names[e]: e for e in entities}
        children = []
        for sub_name, members in groups:
            child, sub_notes = split_leaf([lookup[m] for m in members], sub_name)
            children.append(child)
            notes.extend(sub_notes)
        return Node(name=name, children=children), notes

    leaves = out.leaves()
    parents = {}
    for node in iter_preorder(out.root):
        for i, child in enumerate(node.children):
            parents[id(child)] = (node, i)
    results = client.map(lambda leaf: split_leaf(list(leaf.entities), leaf.name), leaves)
    for leaf, (new, notes) in zip(leaves, results):
        warnings.extend(notes)
        if id(leaf) in parents:
            parent, i = parents[id(leaf)]
            parent.children[i] = new
        else:
            out.root = new
    for w in warnings:
        log.warning(w)
    out.renumber()
    out.warnings = warnings
    return out


def _cluster_view(node: Node, entity_names) -> dict:
    return {
        "name": node.name,
        "entities": [entity_names[e] for e in node.subtree_entities()],
        "subclusters": [c.name for c in node.children],
    }


def _kids(node: Node) -> list[Node]:
    return list(node.children) if not node.is_leaf else [node]


def apply_action(parent: Node, act: RefineAction) -> None:
    """Rewrite ``parent`` (with children left, right) according to ``act``."""
    left, right = parent.children
    if act.action is Action.NO_UPDATE:
        if act.name:
            parent.name = act.name
        return
    parent.name = act.name
    if act.action is Action.PARENT_MERGE:
        parent.children = _kids(left) + _kids(right)
    elif act.action is Action.LEAF_MERGE:
        parent.entities = left.subtree_entities() + right.subtree_entities()
        parent.children = []
    elif act.action is Action.LEFT_INCLUDES_RIGHT:
        parent.children = _kids(left) + [right]
    elif act.action is Action.RIGHT_INCLUDES_LEFT:
        parent.children = [left] + _kids(right)


def refine_bottom_up(tree: HierarchyTree, client: ChatClient, entity_names: list[str]) -> HierarchyTree:
    """Post-order pass offering each (parent, left, right) triple to the LLM.

    Leaves without a name are named first. Only nodes with exactly two
    children form a triple; other internal nodes are left as they are. A
    response that stays malformed after retries counts as NO UPDATE.
    """
    out = tree.copy("refined")
    warnings: list[str] = []

    def visit(node: Node) -> None:
        if node.is_leaf:
            if node.name is None:
                try:
                    node.name = _name_cluster(client, [entity_names[e] for e in node.entities])
                except (SchemaError, llm.ClientError) as exc:
                    warnings.append(f"naming leaf failed: {exc}")
            return
        for child in node.children:
            visit(child)
        if len(node.children) != 2:
            return
        left, right = node.children
        prompt = llm.refine_prompt(_cluster_view(left, entity_names), _cluster_view(right, entity_names))
        try:
            act = client.ask(prompt, parse_refine)
        except (SchemaError, llm.ClientError) as exc:
            warnings.append(f"refinement of node {node.id} kept as NO UPDATE: {exc}")
            return
        apply_action(node, act)

    visit(out.root)
    for w in warnings:
        log.warning(w)
    out.renumber()
    out.warnings = warnings
    return out


# --------------------------------------------------------------------------- statistics

@dataclass
class HierarchyStats:
    clusters: int
    nodes: int
    entities_max: int
    entities_min: int
    entities_avg: float
    depth_max: int
    depth_min: int
    depth_avg: float
    branch_max: int
    branch_min: int
    branch_avg: float

    def as_rows(self):
        return [
            ("# Cluster", f"{self.clusters}"),
            ("# Node", f"{self.nodes}"),
            ("# Entity in a Cluster (max/min/avg)", f"{self.entities_max} / {self.entities_min} / {self.entities_avg:.2f}"),
            ("Cluster Depth (max/min/avg)", f"{self.depth_max} / {self.depth_min} / {self.depth_avg:.2f}"),
            ("# Branch of a Node (max/min/avg)", f"{self.branch_max} / {self.branch_min} / {self.branch_avg:.2f}"),
        ]

    def table(self) -> str:
        rows = self.as_rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def stats(tree: HierarchyTree) -> HierarchyStats:
    """Leaf, depth (root = 0) and branching statistics; branching is over
    internal nodes only and reported as 0 when the tree is a single leaf."""
    tree.renumber()
    depths = tree.depths()
    leaves = tree.leaves()
    sizes = np.array([len(l.entities) for l in leaves])
    leaf_depths = np.array([depths[l.id] for l in leaves])
    branches = np.array([len(n.children) for n in iter_preorder(tree.root) if not n.is_leaf])
    if branches.size == 0:
        branches = np.zeros(1, dtype=int)
    return HierarchyStats(
        clusters=len(leaves),
        nodes=tree.num_nodes,
        entities_max=int(sizes.max()), entities_min=int(sizes.min()), entities_avg=float(sizes.mean()),
        depth_max=int(leaf_depths.max()), depth_min=int(leaf_depths.min()), depth_avg=float(leaf_depths.mean()),
        branch_max=int(branches.max()), branch_min=int(branches.min()), branch_avg=float(branches.mean()),
    )
