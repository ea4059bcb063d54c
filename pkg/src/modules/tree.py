"""
Tree - Construcción recursiva del árbol visual T_{K,L}, validación estructural y exportación DOT
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core.errors import ModelFormatError, UsageError
from ..core.seeding import derive_seed
from .metric import AffinityMatrix
from .spectral import spectral_partition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeNode:
    """Nodo v con su conjunto de categorías C(v); el i-ésimo hijo es C_v^i"""
    id: int
    depth: int
    categories: Tuple[int, ...]
    children: Tuple[int, ...] = ()
    parent: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def fanout(self) -> int:
        return len(self.children)

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "depth": self.depth,
            "categories": list(self.categories),
            "children": list(self.children),
            "parent": self.parent,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TreeNode":
        return cls(
            id=int(data["id"]),
            depth=int(data["depth"]),
            categories=tuple(int(c) for c in data["categories"]),
            children=tuple(int(c) for c in data["children"]),
            parent=None if data.get("parent") is None else int(data["parent"]),
        )


@dataclass(frozen=True)
class VisualTree:
    """Jerarquía de categorías con fan-out máximo K y profundidad L (raíz en profundidad 1)"""
    nodes: Tuple[TreeNode, ...]
    branching: int
    max_depth: int
    n_categories: int
    root: int = 0
    _leaf_of: Dict[int, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        leaf_of = {}
        for node in self.nodes:
            if node.is_leaf and len(node.categories) == 1:
                leaf_of[node.categories[0]] = node.id
        object.__setattr__(self, "_leaf_of", leaf_of)

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def leaves(self) -> List[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def internal_nodes(self) -> List[TreeNode]:
        return [n for n in self.nodes if not n.is_leaf]

    def leaf_of(self, category: int) -> int:
        """Id del nodo hoja que contiene la categoría"""
        return self._leaf_of[category]

    def edges(self) -> List[Tuple[int, int]]:
        """Aristas (nodo, índice de hijo) en orden de id de nodo y luego de hijo"""
        return [(n.id, i) for n in self.nodes for i in range(n.fanout)]

    @property
    def n_edges(self) -> int:
        return sum(n.fanout for n in self.nodes)

    def max_fanout(self) -> int:
        return max((n.fanout for n in self.nodes), default=0)

    def height(self) -> int:
        """Profundidad máxima alcanzada por algún nodo"""
        return max(n.depth for n in self.nodes)

    def path_to(self, node_id: int) -> List[Tuple[int, int]]:
        """Aristas (nodo, índice de hijo) desde la raíz hasta node_id"""
        path = []
        current = self.nodes[node_id]
        while current.parent is not None:
            parent = self.nodes[current.parent]
            path.append((parent.id, parent.children.index(current.id)))
            current = parent
        return path[::-1]

    def beam_budget(self, beam: int) -> int:
        """
        Cota de evaluaciones de clasificador por consulta para una búsqueda con Q = beam:
        fan-out de la raíz más, en cada profundidad posterior, la suma de los Q mayores fan-outs.
        Vale K + (L-1)QK cuando ningún fan-out supera K.
        """
        by_depth: Dict[int, List[int]] = {}
        for node in self.internal_nodes():
            by_depth.setdefault(node.depth, []).append(node.fanout)
        budget = 0
        for depth, fanouts in by_depth.items():
            if depth == self.nodes[self.root].depth:
                budget += sum(fanouts)
            else:
                budget += sum(sorted(fanouts, reverse=True)[:beam])
        return budget

    def to_dict(self) -> Dict:
        return {
            "branching": self.branching,
            "max_depth": self.max_depth,
            "n_categories": self.n_categories,
            "root": self.root,
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "VisualTree":
        try:
            nodes = tuple(TreeNode.from_dict(n) for n in data["nodes"])
            return cls(
                nodes=nodes,
                branching=int(data["branching"]),
                max_depth=int(data["max_depth"]),
                n_categories=int(data["n_categories"]),
                root=int(data.get("root", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"malformed tree structure: {e}") from None

    def get_statistics(self) -> Dict:
        return {
            "nodes": len(self.nodes),
            "leaves": len(self.leaves()),
            "edges": self.n_edges,
            "height": self.height(),
            "max_fanout": self.max_fanout(),
        }


def _split(affinity: AffinityMatrix, categories: np.ndarray, depth: int, K: int, L: int,
           seed: int, means: Optional[np.ndarray]) -> List[np.ndarray]:
    """Conjuntos hijos de un nodo (lista vacía si es hoja), ordenados por su menor categoría"""
    if categories.size == 1:
        return []
    if categories.size < K or depth >= L:
        # regla |C(v)| < K y expansión plana en profundidad L
        return [categories[i:i + 1] for i in range(categories.size)]

    part = spectral_partition(
        affinity.submatrix(categories),
        K,
        derive_seed(seed, "partition", depth, int(categories[0])),
        means=None if means is None else means[categories],
    )
    groups = [categories[rows] for rows in part.groups()]
    groups.sort(key=lambda g: int(g[0]))
    return groups


def build_tree(affinity: AffinityMatrix, K: int, L: int, seed: int = 0,
               means: Optional[np.ndarray] = None) -> VisualTree:
    """
    Construcción de arriba hacia abajo: la raíz contiene todas las categorías y cada nodo
    se divide por clustering espectral sobre la submatriz de A hasta llegar a hojas.
    Los ids se asignan por niveles (raíz = 0).
    """
    if K < 2:
        raise UsageError(f"branching K must be >= 2, got {K}")
    if L < 1:
        raise UsageError(f"depth L must be >= 1, got {L}")
    n = affinity.n
    if n < 1:
        raise UsageError("tree needs at least one category")

    # (categorías, profundidad, padre)
    queue = deque([(np.arange(n, dtype=np.int64), 1, None)])
    specs: List[Tuple[np.ndarray, int, Optional[int]]] = []
    children: List[List[int]] = []
    while queue:
        categories, depth, parent = queue.popleft()
        node_id = len(specs)
        specs.append((categories, depth, parent))
        children.append([])
        if parent is not None:
            children[parent].append(node_id)
        for group in _split(affinity, categories, depth, K, L, seed, means):
            queue.append((group, depth + 1, node_id))

    nodes = tuple(
        TreeNode(id=i, depth=depth, categories=tuple(int(c) for c in cats),
                 children=tuple(children[i]), parent=parent)
        for i, (cats, depth, parent) in enumerate(specs)
    )
    tree = VisualTree(nodes=nodes, branching=K, max_depth=L, n_categories=n)
    logger.info("built tree K=%d L=%d N=%d: %s", K, L, n, tree.get_statistics())
    return tree


def validate_tree(tree: VisualTree) -> List[str]:
    """Comprobar los invariantes del árbol; devuelve violaciones legibles (vacío = válido)"""
    violations: List[str] = []
    nodes = tree.nodes
    if not nodes:
        return ["tree has no nodes"]
    for position, node in enumerate(nodes):
        if node.id != position:
            violations.append(f"node at position {position} has id {node.id}")
    if violations:
        return violations
    if not 0 <= tree.root < len(nodes):
        return [f"root id {tree.root} out of range"]

    root = nodes[tree.root]
    if root.depth != 1:
        violations.append(f"root depth is {root.depth}, expected 1")
    if root.parent is not None:
        violations.append("root has a parent")
    if set(root.categories) != set(range(tree.n_categories)):
        violations.append("root does not contain every category (coverage)")

    seen = {tree.root}
    stack = [tree.root]
    while stack:
        node = nodes[stack.pop()]
        cats = set(node.categories)
        if list(node.categories) != sorted(cats):
            violations.append(f"node {node.id}: category set is not sorted and unique")
        if node.depth > tree.max_depth + 1:
            violations.append(f"node {node.id}: depth {node.depth} exceeds L+1 = {tree.max_depth + 1}")
        if node.is_leaf:
            if len(cats) != 1:
                violations.append(f"node {node.id}: leaf holds {len(cats)} categories")
            continue
        if len(cats) == 1:
            violations.append(f"node {node.id}: single-category node has children")
        if node.fanout > tree.branching and node.depth != tree.max_depth:
            violations.append(f"node {node.id}: fan-out {node.fanout} exceeds K = {tree.branching}")
        if node.fanout > len(cats):
            violations.append(f"node {node.id}: fan-out {node.fanout} exceeds |C(v)| = {len(cats)}")

        union = set()
        overlap = set()
        mins = []
        for child_id in node.children:
            if not 0 <= child_id < len(nodes):
                violations.append(f"node {node.id}: child id {child_id} out of range")
                continue
            if child_id in seen:
                violations.append(f"node {child_id} is reachable twice")
                continue
            seen.add(child_id)
            child = nodes[child_id]
            if child.parent != node.id:
                violations.append(f"node {child_id}: parent is {child.parent}, expected {node.id}")
            if child.depth != node.depth + 1:
                violations.append(f"node {child_id}: depth {child.depth}, expected {node.depth + 1}")
            child_cats = set(child.categories)
            overlap |= union & child_cats
            union |= child_cats
            mins.append(min(child.categories) if child.categories else -1)
            stack.append(child_id)
        if overlap:
            violations.append(f"node {node.id}: children are not disjoint, shared categories {sorted(overlap)}")
        if union != cats:
            missing = sorted(cats - union)
            extra = sorted(union - cats)
            violations.append(f"node {node.id}: children do not cover C(v) (coverage), missing {missing}, extra {extra}")
        if mins != sorted(mins):
            violations.append(f"node {node.id}: children are not ordered by smallest category")

    unreachable = sorted(set(range(len(nodes))) - seen)
    if unreachable:
        violations.append(f"nodes {unreachable} are not reachable from the root")

    leaf_count: Dict[int, int] = {}
    for node in nodes:
        if node.is_leaf:
            for c in node.categories:
                leaf_count[c] = leaf_count.get(c, 0) + 1
    for c in range(tree.n_categories):
        count = leaf_count.get(c, 0)
        if count == 0:
            violations.append(f"category {c} is in no leaf (coverage)")
        elif count > 1:
            violations.append(f"category {c} is in {count} leaves (not disjoint)")
    return violations


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def export_dot(tree: VisualTree, labels: Optional[Dict[int, str]] = None,
               category_ids: Optional[Tuple[int, ...]] = None) -> str:
    """
    Grafo dirigido en formato DOT: cada nodo lista sus categorías y cada arista padre->hijo
    aparece una vez. category_ids traduce ids densos a los originales; labels los nombra.
    """
    def show(category: int) -> str:
        original = category_ids[category] if category_ids is not None else category
        if labels and original in labels:
            return labels[original]
        return str(original)

    lines = ["digraph visual_tree {", "  node [shape=box];"]
    for node in tree.nodes:
        text = ", ".join(show(c) for c in node.categories)
        lines.append(f'  n{node.id} [label="{_dot_escape(text)}"];')
    for node in tree.nodes:
        for child in node.children:
            lines.append(f"  n{node.id} -> n{child};")
    lines.append("}")
    return "\n".join(lines) + "\n"
