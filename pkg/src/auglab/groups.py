"""Finite groups and sampled compact groups acting on data.

Groups are represented explicitly: an ordered tuple of elements carrying
exact action matrices (permutation / sign / orthogonal), with the uniform
measure playing the role of the Haar measure. Element 0 is always the
identity and element ordering is deterministic, so downstream Monte Carlo
runs are reproducible.

Groups above the enumeration cutoff (and continuous groups) carry no
element list; they support sampling and, where documented, a closed-form
mean matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import CapabilityError, DimensionError

#: Largest group order that is fully enumerated. Covers S_p up to p = 7
#: and binomial families of similar size; above it only sampling plus
#: closed-form mean matrices are available.
ENUMERATION_CUTOFF = 10_000


@dataclass(frozen=True, eq=False)
class GroupElement:
    """One group (or semigroup) element together with its action.

    Exactly one action representation is set:

    - ``matrix``: d x d linear action ``x -> matrix @ x``;
    - ``subset``: 0-based row indices, acting on a stacked dataset by
      selecting rows (subsample semigroup);
    - ``row_action``: a base element applied to every row of a dataset;
    - ``parts``: one base element per row of a dataset.

    ``index`` is the id within the parent group; sampled elements of
    non-enumerated groups use ``index = -1``.
    """

    index: int
    matrix: Optional[np.ndarray] = None
    subset: Optional[tuple[int, ...]] = None
    row_action: Optional["GroupElement"] = None
    parts: Optional[tuple["GroupElement", ...]] = None


@dataclass(frozen=True, eq=False)
class FiniteGroup:
    """An ordered collection of group elements with uniform measure.

    ``kind`` is one of ``cyclic_shift | flip | sign | permutation |
    subsample_semigroup | orthogonal_sampled | trivial | dataset_diagonal |
    dataset_product``. ``semigroup`` marks transform sets without inverses,
    for which closure tests are skipped. ``order`` is the abstract order
    (``None`` for continuous groups); it equals ``len(elements)`` whenever
    the group is enumerated.
    """

    kind: str
    dim: int
    elements: tuple[GroupElement, ...]
    semigroup: bool = False
    order: Optional[int] = None
    mean_closed_form: Optional[np.ndarray] = None
    base: Optional["FiniteGroup"] = None
    subset_size: Optional[int] = None
    n_rows: Optional[int] = None

    @property
    def enumerated(self) -> bool:
        return len(self.elements) > 0

    def __len__(self) -> int:
        if self.order is None:
            raise CapabilityError(f"{self.kind} group has no finite order")
        return self.order

    def identity(self) -> GroupElement:
        if not self.enumerated:
            raise CapabilityError(f"{self.kind} group is not enumerated")
        return self.elements[0]


def _shift_matrix(d: int, i: int) -> np.ndarray:
    mat = np.zeros((d, d))
    for j in range(d):
        mat[(j + i) % d, j] = 1.0
    return mat


def _reversal_matrix(d: int) -> np.ndarray:
    return np.eye(d)[::-1].copy()


def _permutation_matrix(perm: tuple[int, ...]) -> np.ndarray:
    # perm maps source position j to target position perm[j]
    d = len(perm)
    mat = np.zeros((d, d))
    for j, pj in enumerate(perm):
        mat[pj, j] = 1.0
    return mat


def make_cyclic_shift_group(d: int) -> FiniteGroup:
    """Group of the d circular shifts of a length-d vector.

    Element i moves coordinate j to position (j + i) mod d.
    """
    if d < 1:
        raise DimensionError(f"action dimension must be positive, got {d}")
    elements = tuple(
        GroupElement(index=i, matrix=_shift_matrix(d, i)) for i in range(d)
    )
    return FiniteGroup(kind="cyclic_shift", dim=d, elements=elements, order=d)


def make_flip_group(d: int) -> FiniteGroup:
    """Order-2 group {identity, coordinate reversal} on R^d."""
    if d < 1:
        raise DimensionError(f"action dimension must be positive, got {d}")
    elements = (
        GroupElement(index=0, matrix=np.eye(d)),
        GroupElement(index=1, matrix=_reversal_matrix(d)),
    )
    return FiniteGroup(kind="flip", dim=d, elements=elements, order=2)


def make_sign_group(d: int = 1) -> FiniteGroup:
    """Order-2 negation group {+I, -I} on R^d."""
    if d < 1:
        raise DimensionError(f"action dimension must be positive, got {d}")
    elements = (
        GroupElement(index=0, matrix=np.eye(d)),
        GroupElement(index=1, matrix=-np.eye(d)),
    )
    return FiniteGroup(kind="sign", dim=d, elements=elements, order=2)


def make_trivial_group(d: int) -> FiniteGroup:
    """The one-element group {identity} on R^d."""
    if d < 1:
        raise DimensionError(f"action dimension must be positive, got {d}")
    return FiniteGroup(
        kind="trivial",
        dim=d,
        elements=(GroupElement(index=0, matrix=np.eye(d)),),
        order=1,
    )


def make_permutation_group(p: int, require_enumeration: bool = False) -> FiniteGroup:
    """Symmetric group permuting the p coordinates of R^p.

    Fully enumerated (in lexicographic order, identity first) when
    p! <= ENUMERATION_CUTOFF. Larger p yields a sampler-backed group whose
    mean matrix is available in closed form as (1/p) * ones.
    """
    if p < 1:
        raise DimensionError(f"permutation degree must be positive, got {p}")
    order = math.factorial(p)
    if order <= ENUMERATION_CUTOFF:
        elements = tuple(
            GroupElement(index=i, matrix=_permutation_matrix(perm))
            for i, perm in enumerate(itertools.permutations(range(p)))
        )
        return FiniteGroup(kind="permutation", dim=p, elements=elements, order=order)
    if require_enumeration:
        raise CapabilityError(
            f"S_{p} has order {order} > cutoff {ENUMERATION_CUTOFF}; "
            "exact enumeration is not available"
        )
    return FiniteGroup(
        kind="permutation",
        dim=p,
        elements=(),
        order=order,
        mean_closed_form=np.full((p, p), 1.0 / p),
    )


def make_subsample_semigroup(n: int, r: int) -> FiniteGroup:
    """Semigroup of the C(n, r) maps selecting r of n stacked rows.

    Elements are unordered index subsets in lexicographic order. This is a
    semigroup (no inverses), so closure tests do not apply.
    """
    if not 1 <= r <= n:
        raise DimensionError(f"need 1 <= r <= n, got r={r}, n={n}")
    order = math.comb(n, r)
    if order > ENUMERATION_CUTOFF:
        raise CapabilityError(
            f"C({n},{r}) = {order} exceeds cutoff {ENUMERATION_CUTOFF}"
        )
    elements = tuple(
        GroupElement(index=i, subset=subset)
        for i, subset in enumerate(itertools.combinations(range(n), r))
    )
    return FiniteGroup(
        kind="subsample_semigroup",
        dim=n,
        elements=elements,
        semigroup=True,
        order=order,
        subset_size=r,
    )


def make_orthogonal_group(d: int) -> FiniteGroup:
    """The orthogonal group O(d), available through Haar sampling only.

    The mean matrix is the zero matrix in closed form.
    """
    if d < 1:
        raise DimensionError(f"action dimension must be positive, got {d}")
    return FiniteGroup(
        kind="orthogonal_sampled",
        dim=d,
        elements=(),
        order=None,
        mean_closed_form=np.zeros((d, d)),
    )


def diagonal_action_group(base: FiniteGroup, n_rows: int) -> FiniteGroup:
    """Lift a linear group to n-row datasets: one g applied to every row."""
    if not base.enumerated:
        raise CapabilityError("diagonal action requires an enumerated base group")
    elements = tuple(
        GroupElement(index=g.index, row_action=g) for g in base.elements
    )
    return FiniteGroup(
        kind="dataset_diagonal",
        dim=base.dim,
        elements=elements,
        semigroup=base.semigroup,
        order=base.order,
        base=base,
        n_rows=n_rows,
    )


def per_point_product_group(base: FiniteGroup, n_rows: int) -> FiniteGroup:
    """Lift a linear group to n-row datasets with one independent g per row.

    The product group has |base|^n_rows elements and is only available
    below the enumeration cutoff.
    """
    if not base.enumerated:
        raise CapabilityError("product action requires an enumerated base group")
    order = len(base.elements) ** n_rows
    if order > ENUMERATION_CUTOFF:
        raise CapabilityError(
            f"product group order {order} exceeds cutoff {ENUMERATION_CUTOFF}"
        )
    elements = tuple(
        GroupElement(index=i, parts=parts)
        for i, parts in enumerate(
            itertools.product(base.elements, repeat=n_rows)
        )
    )
    return FiniteGroup(
        kind="dataset_product",
        dim=base.dim,
        elements=elements,
        semigroup=base.semigroup,
        order=order,
        base=base,
        n_rows=n_rows,
    )


def apply(g: GroupElement, x: np.ndarray) -> np.ndarray:
    """Apply a group element to a point (or stacked dataset)."""
    x = np.asarray(x, dtype=float)
    if g.matrix is not None:
        d = g.matrix.shape[1]
        if x.ndim == 1:
            if x.shape[0] != d:
                raise DimensionError(
                    f"point has length {x.shape[0]}, action dimension is {d}"
                )
            return g.matrix @ x
        if x.shape[-1] != d:
            raise DimensionError(
                f"rows have length {x.shape[-1]}, action dimension is {d}"
            )
        return x @ g.matrix.T
    if g.subset is not None:
        if x.shape[0] <= max(g.subset):
            raise DimensionError(
                f"subset {g.subset} needs at least {max(g.subset) + 1} rows, "
                f"got {x.shape[0]}"
            )
        return x[list(g.subset)]
    if g.row_action is not None:
        return apply(g.row_action, np.atleast_2d(x))
    if g.parts is not None:
        if x.shape[0] != len(g.parts):
            raise DimensionError(
                f"dataset has {x.shape[0]} rows, product element has "
                f"{len(g.parts)}"
            )
        return np.stack([apply(part, row) for part, row in zip(g.parts, x)])
    raise CapabilityError("element carries no action")


def haar_sample(group: FiniteGroup, rng: np.random.Generator) -> GroupElement:
    """Draw one element uniformly (Haar for the built-in compact groups)."""
    if group.enumerated:
        return group.elements[int(rng.integers(len(group.elements)))]
    if group.kind == "permutation":
        perm = tuple(int(v) for v in rng.permutation(group.dim))
        return GroupElement(index=-1, matrix=_permutation_matrix(perm))
    if group.kind == "orthogonal_sampled":
        return sample_orthogonal_haar(group.dim, rng)
    raise CapabilityError(f"cannot sample from {group.kind} group")


def sample_orthogonal_haar(d: int, rng: np.random.Generator) -> GroupElement:
    """Haar-uniform orthogonal matrix via sign-corrected QR of a Gaussian."""
    if d < 1:
        raise DimensionError(f"action dimension must be positive, got {d}")
    z = rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    return GroupElement(index=-1, matrix=q)


def mean_matrix(group: FiniteGroup) -> np.ndarray:
    """Arithmetic mean of the element action matrices.

    Uses the documented closed form for sampler-backed groups. Raises for
    non-linear (subset / dataset) actions.
    """
    if group.mean_closed_form is not None:
        return group.mean_closed_form.copy()
    if not group.enumerated:
        raise CapabilityError(f"{group.kind} group has no mean matrix")
    mats = [g.matrix for g in group.elements]
    if any(m is None for m in mats):
        raise CapabilityError(f"{group.kind} action is not linear on R^d")
    return np.mean(mats, axis=0)


def composition_index(group: FiniteGroup, i: int, j: int) -> int:
    """Index of elements[i] composed with elements[j] (matrix actions only).

    Raises if the product matrix is not an element, which for a true group
    can only happen on misconstructed inputs; semigroups are rejected.
    """
    if group.semigroup:
        raise CapabilityError("composition table undefined for semigroups")
    if not group.enumerated:
        raise CapabilityError("composition requires an enumerated group")
    gi, gj = group.elements[i], group.elements[j]
    if gi.matrix is None or gj.matrix is None:
        if group.base is not None:
            if gi.row_action is not None:
                k = composition_index(group.base, gi.row_action.index, gj.row_action.index)
                return k
            parts = tuple(
                composition_index(group.base, a.index, b.index)
                for a, b in zip(gi.parts, gj.parts)
            )
            for cand in group.elements:
                if tuple(p.index for p in cand.parts) == parts:
                    return cand.index
            raise CapabilityError("composition left the element list")
        raise CapabilityError("composition requires matrix actions")
    prod = gi.matrix @ gj.matrix
    for cand in group.elements:
        if np.array_equal(cand.matrix, prod):
            return cand.index
    raise CapabilityError("composition left the element list")


def is_orthogonal_action(group: FiniteGroup, tol: float = 1e-12) -> bool:
    """True when every element matrix g satisfies g^T g = I."""
    if group.kind in ("permutation", "orthogonal_sampled") and not group.enumerated:
        return True
    if not group.enumerated:
        return False
    for g in group.elements:
        if g.matrix is None:
            return False
        d = g.matrix.shape[0]
        if np.max(np.abs(g.matrix.T @ g.matrix - np.eye(d))) > tol:
            return False
    return True


_GROUP_PARSERS: dict[str, Callable[..., FiniteGroup]] = {
    "shift": make_cyclic_shift_group,
    "flip": make_flip_group,
    "sign": make_sign_group,
    "perm": make_permutation_group,
    "trivial": make_trivial_group,
}


def group_from_spec(spec: str) -> FiniteGroup:
    """Build a group from a CLI spec like ``shift:8`` or ``subsample:5:2``."""
    parts = spec.split(":")
    name = parts[0]
    try:
        args = [int(v) for v in parts[1:]]
    except ValueError as exc:
        raise DimensionError(f"malformed group spec {spec!r}") from exc
    if name == "subsample":
        if len(args) != 2:
            raise DimensionError("subsample spec is subsample:<n>:<r>")
        return make_subsample_semigroup(*args)
    if name not in _GROUP_PARSERS:
        raise DimensionError(f"unknown group kind {name!r}")
    if len(args) != 1:
        raise DimensionError(f"group spec {spec!r} takes exactly one dimension")
    return _GROUP_PARSERS[name](args[0])
