"""Long-format datasets, model formulas, and sum-to-zero design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg as sla

INTERCEPT_LABEL = "(Intercept)"


class RankDeficientError(ValueError):
    """Fixed-effect design matrix is rank deficient after contrast coding."""

    def __init__(self, aliased: Sequence[str]):
        self.aliased = tuple(aliased)
        super().__init__(f"rank-deficient fixed design; aliased columns: {list(aliased)}")


def _first_appearance_levels(values: Sequence[str]) -> tuple[str, ...]:
    seen: list[str] = []
    for value in values:
        if value not in seen:
            seen.append(value)
    return tuple(seen)


@dataclass(frozen=True)
class Dataset:
    """Response values with categorical fixed-effect and grouping columns.

    Level registries fix the order used for contrast coding; by default they
    are taken in first-appearance order.
    """

    response: np.ndarray
    fixed: Mapping[str, tuple[str, ...]]
    groups: Mapping[str, tuple[str, ...]]
    fixed_levels: Mapping[str, tuple[str, ...]] = field(default=None)  # type: ignore[assignment]
    group_levels: Mapping[str, tuple[str, ...]] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        response = np.asarray(self.response, dtype=np.float64)
        object.__setattr__(self, "response", response)
        if response.ndim != 1:
            raise ValueError("response must be 1-D")
        if response.size < 2:
            raise ValueError("dataset needs at least 2 rows")
        if not np.all(np.isfinite(response)):
            raise ValueError("response contains non-finite values")
        object.__setattr__(self, "fixed", {k: tuple(v) for k, v in self.fixed.items()})
        object.__setattr__(self, "groups", {k: tuple(v) for k, v in self.groups.items()})
        for name, column in {**self.fixed, **self.groups}.items():
            if len(column) != response.size:
                raise ValueError(f"column {name!r} has {len(column)} rows, expected {response.size}")
        if self.fixed_levels is None:
            object.__setattr__(
                self, "fixed_levels",
                {k: _first_appearance_levels(v) for k, v in self.fixed.items()},
            )
        else:
            object.__setattr__(self, "fixed_levels", dict(self.fixed_levels))
        if self.group_levels is None:
            object.__setattr__(
                self, "group_levels",
                {k: _first_appearance_levels(v) for k, v in self.groups.items()},
            )
        else:
            object.__setattr__(self, "group_levels", dict(self.group_levels))
        for name, column in self.fixed.items():
            registry = set(self.fixed_levels[name])
            bad = [v for v in column if v not in registry]
            if bad:
                raise ValueError(f"fixed factor {name!r} has unregistered level(s) {sorted(set(bad))}")
        for name, column in self.groups.items():
            registry = set(self.group_levels[name])
            bad = [v for v in column if v not in registry]
            if bad:
                raise ValueError(f"grouping factor {name!r} has unregistered level(s) {sorted(set(bad))}")

    @property
    def n_obs(self) -> int:
        return self.response.size

    def scaled(self, factor: float) -> "Dataset":
        return Dataset(
            response=self.response * factor,
            fixed=self.fixed,
            groups=self.groups,
            fixed_levels=self.fixed_levels,
            group_levels=self.group_levels,
        )


@dataclass(frozen=True)
class ModelFormula:
    """Fixed-effect terms plus random intercepts.

    Each fixed term is a tuple of factor names: a 1-tuple is a main effect,
    longer tuples are interactions.  The overall intercept is always
    included.  Random terms contribute one random intercept per grouping
    factor.
    """

    fixed_terms: tuple[tuple[str, ...], ...] = ()
    random_intercepts: tuple[str, ...] = ()

    def __post_init__(self):
        terms = tuple(tuple(t) for t in self.fixed_terms)
        object.__setattr__(self, "fixed_terms", terms)
        object.__setattr__(self, "random_intercepts", tuple(self.random_intercepts))
        if len(set(terms)) != len(terms):
            raise ValueError("duplicate fixed terms")
        if len(set(self.random_intercepts)) != len(self.random_intercepts):
            raise ValueError("duplicate random intercepts")
        for term in terms:
            if not term:
                raise ValueError("empty fixed term (the intercept is implicit)")
            if len(set(term)) != len(term):
                raise ValueError(f"factor repeated within term {term}")

    def term_label(self, term: tuple[str, ...]) -> str:
        return ":".join(term)

    def labels(self) -> tuple[str, ...]:
        return tuple(self.term_label(t) for t in self.fixed_terms)

    def without(self, term: tuple[str, ...]) -> "ModelFormula":
        if tuple(term) not in self.fixed_terms:
            raise ValueError(f"term {term} not in formula")
        return ModelFormula(
            fixed_terms=tuple(t for t in self.fixed_terms if t != tuple(term)),
            random_intercepts=self.random_intercepts,
        )

    def with_term(self, term: tuple[str, ...]) -> "ModelFormula":
        if tuple(term) in self.fixed_terms:
            return self
        return ModelFormula(
            fixed_terms=self.fixed_terms + (tuple(term),),
            random_intercepts=self.random_intercepts,
        )

    def is_nested_in(self, other: "ModelFormula") -> bool:
        return (set(self.fixed_terms) <= set(other.fixed_terms)
                and self.random_intercepts == other.random_intercepts)

    def describe(self, response_name: str = "response") -> str:
        parts = ["1"] + [self.term_label(t) for t in self.fixed_terms]
        parts += [f"(1 | {g})" for g in self.random_intercepts]
        return f"{response_name} ~ {' + '.join(parts)}"


def sum_to_zero_codes(levels: Sequence[str]) -> dict[str, np.ndarray]:
    """Sum-to-zero contrast rows per level; the last level is the negated sum."""
    n = len(levels)
    if n < 2:
        raise ValueError(f"factor needs at least 2 levels, got {list(levels)}")
    codes = {}
    for i, level in enumerate(levels):
        row = np.zeros(n - 1)
        if i < n - 1:
            row[i] = 1.0
        else:
            row[:] = -1.0
        codes[level] = row
    return codes


def _factor_columns(dataset: Dataset, factor: str) -> tuple[np.ndarray, list[str]]:
    if factor not in dataset.fixed:
        raise ValueError(f"unknown fixed factor {factor!r}")
    levels = dataset.fixed_levels[factor]
    codes = sum_to_zero_codes(levels)
    matrix = np.stack([codes[v] for v in dataset.fixed[factor]])
    labels = [f"{factor}[{lvl}]" for lvl in levels[:-1]]
    return matrix, labels


def design_matrix(dataset: Dataset, formula: ModelFormula):
    """Sum-to-zero coded fixed-effects design matrix.

    Returns (X, labels, term_slices) where term_slices maps each fixed term
    (and "(Intercept)") to the slice of its columns.
    """
    columns = [np.ones((dataset.n_obs, 1))]
    labels = [INTERCEPT_LABEL]
    term_slices: dict[str, slice] = {INTERCEPT_LABEL: slice(0, 1)}
    offset = 1
    for term in formula.fixed_terms:
        mats, labs = zip(*(_factor_columns(dataset, f) for f in term))
        block = mats[0]
        block_labels = list(labs[0])
        for mat, lab in zip(mats[1:], labs[1:]):
            block = np.einsum("ij,ik->ijk", block, mat).reshape(dataset.n_obs, -1)
            block_labels = [f"{a}:{b}" for a in block_labels for b in lab]
        columns.append(block)
        labels.extend(block_labels)
        term_slices[formula.term_label(term)] = slice(offset, offset + block.shape[1])
        offset += block.shape[1]
    X = np.hstack(columns)
    return X, tuple(labels), term_slices


def check_full_rank(X: np.ndarray, labels: Sequence[str]) -> None:
    """Raise RankDeficientError naming aliased columns when X lacks full rank."""
    if X.shape[0] < X.shape[1]:
        raise RankDeficientError(labels[X.shape[0]:])
    _, r, pivots = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    threshold = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > threshold))
    if rank < X.shape[1]:
        aliased = [labels[j] for j in sorted(pivots[rank:])]
        raise RankDeficientError(aliased)


def grouping_matrix(dataset: Dataset, factor: str) -> np.ndarray:
    """0/1 indicator matrix (n_obs x n_levels) for a grouping factor."""
    if factor not in dataset.groups:
        raise ValueError(f"unknown grouping factor {factor!r}")
    levels = dataset.group_levels[factor]
    if len(levels) < 2:
        raise ValueError(f"grouping factor {factor!r} needs at least 2 levels")
    index = {lvl: i for i, lvl in enumerate(levels)}
    Z = np.zeros((dataset.n_obs, len(levels)))
    for row, value in enumerate(dataset.groups[factor]):
        Z[row, index[value]] = 1.0
    return Z
