"""The rotation groups p4 (four 90-degree rotations) and p4m (plus mirrors).

An element ``(rotation=r, flip=m)`` acts on the plane as "mirror left-right
if ``m``, then rotate counter-clockwise by ``r`` quarter turns", matching
``np.rot90(np.flip(x, -1) if m else x, r)``.  Composition follows from
``F R = R^-1 F``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..exceptions import InvalidArgumentError

GROUP_ORDERS = {"p4": 4, "p4m": 8}


@dataclass(frozen=True, order=True)
class GroupElement:
    rotation: int = 0
    flip: bool = False

    def __post_init__(self):
        if self.rotation not in (0, 1, 2, 3):
            raise InvalidArgumentError(f"rotation must be in 0..3, got {self.rotation}")
        object.__setattr__(self, "flip", bool(self.flip))

    def __mul__(self, other):
        sign = -1 if self.flip else 1
        return GroupElement((self.rotation + sign * other.rotation) % 4, self.flip != other.flip)

    def inverse(self):
        if self.flip:
            return self
        return GroupElement((-self.rotation) % 4, False)

    @property
    def is_identity(self):
        return self.rotation == 0 and not self.flip

    def matrix(self):
        """Integer 2x2 matrix acting on centred ``(row, col)`` offsets."""
        rot = np.array([[0, -1], [1, 0]])  # one counter-clockwise quarter turn in (row, col)
        flip = np.array([[1, 0], [0, -1]]) if self.flip else np.eye(2, dtype=int)
        return np.linalg.matrix_power(rot, self.rotation) @ flip


@lru_cache(maxsize=None)
def group_elements(group):
    """Elements in canonical order: rotations first, then mirrored rotations."""
    if group not in GROUP_ORDERS:
        raise InvalidArgumentError(f"unknown group {group!r}; expected one of {sorted(GROUP_ORDERS)}")
    elems = [GroupElement(r, False) for r in range(4)]
    if group == "p4m":
        elems += [GroupElement(r, True) for r in range(4)]
    return tuple(elems)


def element_index(group, g):
    return group_elements(group).index(g)


@lru_cache(maxsize=None)
def cayley_table(group):
    """``table[i, j]`` is the index of ``elems[i] * elems[j]``."""
    elems = group_elements(group)
    return np.array([[elems.index(a * b) for b in elems] for a in elems])


@lru_cache(maxsize=None)
def inverse_indices(group):
    elems = group_elements(group)
    return np.array([elems.index(g.inverse()) for g in elems])


def transform_spatial(x, g):
    """Apply ``g`` to the last two (square) axes of ``x``."""
    if x.shape[-1] != x.shape[-2]:
        raise InvalidArgumentError(f"group action needs a square spatial grid, got {x.shape[-2:]}")
    if g.flip:
        x = np.flip(x, axis=-1)
    return np.rot90(x, g.rotation, axes=(-2, -1))
