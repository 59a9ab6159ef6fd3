"""Entity hierarchy: a rooted tree whose leaves hold disjoint entity clusters."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterator, Optional

STATES = ("seed", "split", "refined")


class TreeInvariantError(ValueError):
    pass


@dataclass(eq=False)
class Node:
    name: Optional[str] = None
    children: list["Node"] = field(default_factory=list)
    entities: Optional[list[int]] = None
    id: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.entities is not None

    def subtree_entities(self) -> list[int]:
        out = []
        for node in iter_preorder(self):
            if node.is_leaf:
                out.extend(node.entities)
        return out

    def leaves(self) -> list["Node"]:
        return [node for node in iter_preorder(self) if node.is_leaf]


def iter_preorder(root: Node) -> Iterator[Node]:
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def iter_postorder(root: Node) -> Iterator[Node]:
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded or not node.children:
            yield node
            continue
        stack.append((node, True))
        for child in reversed(node.children):
            stack.append((child, False))


class HierarchyTree:
    def __init__(self, root: Node, state: str = "seed"):
        if state not in STATES:
            raise ValueError(f"unknown tree state {state!r}")
        self.root = root
        self.state = state
        self.warnings: list[str] = []
        self.renumber()

    def renumber(self) -> None:
        """Assign ids 0..N-1 in pre-order."""
        for i, node in enumerate(iter_preorder(self.root)):
            node.id = i

    def nodes(self) -> list[Node]:
        return list(iter_preorder(self.root))

    def leaves(self) -> list[Node]:
        return self.root.leaves()

    @property
    def num_nodes(self) -> int:
        return sum(1 for _ in iter_preorder(self.root))

    def parents(self) -> dict[int, Node]:
        """Map node id -> parent node (root absent)."""
        out = {}
        for node in iter_preorder(self.root):
            for child in node.children:
                out[child.id] = node
        return out

    def depths(self) -> dict[int, int]:
        out = {self.root.id: 0}
        for node in iter_preorder(self.root):
            for child in node.children:
                out[child.id] = out[node.id] + 1
        return out

    def copy(self, state: str | None = None) -> "HierarchyTree":
        return HierarchyTree(copy.deepcopy(self.root), state or self.state)

    def entity_partition(self) -> list[list[int]]:
        return [list(leaf.entities) for leaf in self.leaves()]

    def validate(self, num_entities: int | None = None) -> None:
        seen_nodes = set()
        seen = set()
        for node in iter_preorder(self.root):
            if id(node) in seen_nodes:
                raise TreeInvariantError("node reachable twice (cycle or shared subtree)")
            seen_nodes.add(id(node))
            if node.is_leaf:
                if node.children:
                    raise TreeInvariantError(f"leaf {node.id} has children")
                if not node.entities:
                    raise TreeInvariantError(f"leaf {node.id} is empty")
                for e in node.entities:
                    if e in seen:
                        raise TreeInvariantError(f"entity {e} appears in two leaves")
                    seen.add(e)
            elif not node.children:
                raise TreeInvariantError(f"internal node {node.id} has no children")
        if num_entities is not None and seen != set(range(num_entities)):
            raise TreeInvariantError(
                f"leaves cover {len(seen)} entities, expected all {num_entities}"
            )

    def topology(self):
        """Nested tuples of sorted entity lists; ignores names and ids."""

        def rec(node):
            if node.is_leaf:
                return tuple(sorted(node.entities))
            return tuple(rec(c) for c in node.children)

        return rec(self.root)

    def to_json(self, entity_names=None) -> dict:
        def name_of(e):
            return entity_names[e] if entity_names is not None else e

        def rec(node):
            return {
                "id": node.id,
                "name": node.name,
                "entities": [name_of(e) for e in node.entities] if node.is_leaf else None,
                "children": [rec(c) for c in node.children],
            }

        self.renumber()
        obj = rec(self.root)
        obj["state"] = self.state
        return obj

    @classmethod
    def from_json(cls, obj: dict, entity_ids=None, state: str | None = None) -> "HierarchyTree":
        """Inverse of :meth:`to_json`; ``entity_ids`` maps names back to ids."""

        def conv(e):
            if entity_ids is None:
                return int(e)
            try:
                return entity_ids[e]
            except KeyError:
                raise TreeInvariantError(f"hierarchy names unknown entity {e!r}") from None

        def rec(o):
            ents = o.get("entities")
            return Node(
                name=o.get("name"),
                children=[rec(c) for c in o.get("children") or []],
                entities=[conv(e) for e in ents] if ents is not None else None,
            )

        return cls(rec(obj), state or obj.get("state", "seed"))
