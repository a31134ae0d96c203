"""Walking nested parameter records (dataclasses, lists, arrays)."""

import dataclasses

import numpy as np

from .autodiff import Node


def _is_leaf(obj):
    return isinstance(obj, (np.ndarray, Node))


def tree_map(fn, obj, path=""):
    """Rebuild ``obj`` with ``fn(path, leaf)`` applied to every tensor leaf."""
    if _is_leaf(obj):
        return fn(path, obj)
    if dataclasses.is_dataclass(obj):
        kwargs = {
            f.name: tree_map(fn, getattr(obj, f.name), f"{path}.{f.name}" if path else f.name)
            for f in dataclasses.fields(obj)
        }
        return type(obj)(**kwargs)
    if isinstance(obj, (list, tuple)):
        return type(obj)(tree_map(fn, v, f"{path}.{i}" if path else str(i)) for i, v in enumerate(obj))
    return obj


def flatten(obj):
    """Ordered ``[(path, tensor), ...]`` over every tensor leaf."""
    out = []

    def visit(path, leaf):
        out.append((path, leaf))
        return leaf

    tree_map(visit, obj)
    return out


def to_nodes(obj):
    return tree_map(lambda path, leaf: Node(leaf, name=path), obj)


def to_values(obj):
    return tree_map(lambda path, leaf: leaf.value if isinstance(leaf, Node) else leaf, obj)


def count(obj):
    return sum(int(np.size(t.value if isinstance(t, Node) else t)) for _, t in flatten(obj))
