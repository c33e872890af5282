"""Polynomial basis over a continuous action space.

A state is represented by a coefficient vector over the monomials of the
action; evaluating many actions is then one matrix product.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass(frozen=True)
class BasisSpec:
    """Order and action dimensionality of a polynomial basis."""

    order: int
    action_dim: int

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be an integer >= 1, got {self.order!r}")
        if int(self.action_dim) != self.action_dim or self.action_dim < 1:
            raise ValueError(f"action_dim must be an integer >= 1, got {self.action_dim!r}")

    @property
    def num_terms(self) -> int:
        return num_terms(self)


def num_terms(spec: BasisSpec) -> int:
    return comb(spec.order + spec.action_dim, spec.action_dim)


@lru_cache(maxsize=None)
def _exponents(order: int, action_dim: int) -> tuple[tuple[int, ...], ...]:
    candidates = (
        e for e in itertools.product(range(order + 1), repeat=action_dim) if sum(e) <= order
    )
    return tuple(sorted(candidates, key=lambda e: (sum(e), e)))


@lru_cache(maxsize=None)
def _exponent_array(order: int, action_dim: int) -> np.ndarray:
    arr = np.array(_exponents(order, action_dim), dtype=np.int64)
    arr.flags.writeable = False
    return arr


def monomial_exponents(spec: BasisSpec) -> list[tuple[int, ...]]:
    """Exponent tuples in graded-lexicographic order.

    Ascending total degree, ties broken by ascending exponent tuple, so the
    constant monomial is first.
    """
    return list(_exponents(spec.order, spec.action_dim))


def _as_actions(spec: BasisSpec, actions) -> np.ndarray:
    a = np.asarray(actions, dtype=np.float64)
    if a.shape[-1:] != (spec.action_dim,):
        raise ValueError(
            f"action dimension mismatch: expected trailing size {spec.action_dim}, "
            f"got shape {a.shape}"
        )
    return a


def features(spec: BasisSpec, action) -> np.ndarray:
    """Monomial features of one action, or of a stack of actions.

    ``action`` may have any leading batch shape; the trailing axis is the
    action dimension and is replaced by ``num_terms``.
    """
    a = _as_actions(spec, action)
    exps = _exponent_array(spec.order, spec.action_dim)
    # powers[..., j, p] = a[..., j] ** p by repeated multiplication
    powers = np.empty(a.shape + (spec.order + 1,))
    powers[..., 0] = 1.0
    powers[..., 1] = a
    for p in range(2, spec.order + 1):
        powers[..., p] = powers[..., p - 1] * a
    out = powers[..., 0, exps[:, 0]]
    for j in range(1, spec.action_dim):
        out = out * powers[..., j, exps[:, j]]
    return out


def feature_matrix(spec: BasisSpec, actions) -> np.ndarray:
    """Return V with one column per action, shape (num_terms, m)."""
    a = _as_actions(spec, actions)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty (m, {spec.action_dim}) array, got shape {a.shape}")
    return features(spec, a).T


class PolynomialActionBasis(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer mapping actions to graded-lex monomial features.

    Parameters
    ----------
    order : int, default=2
        Maximum total degree of the monomials.

    Attributes
    ----------
    spec_ : BasisSpec
        Basis fixed by ``fit`` from ``order`` and the number of input columns.
    n_features_in_ : int
        Action dimensionality seen during ``fit``.
    n_output_features_ : int
        Number of monomials, ``comb(order + d, d)``.

    Examples
    --------
    >>> import numpy as np
    >>> PolynomialActionBasis(order=2).fit_transform(np.array([[2.0, 3.0]]))
    array([[1., 3., 2., 9., 6., 4.]])
    """

    def __init__(self, order=2):
        self.order = order

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.spec_ = BasisSpec(self.order, X.shape[1])
        self.n_features_in_ = X.shape[1]
        self.n_output_features_ = self.spec_.num_terms
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input"
            )
        return features(self.spec_, X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        if input_features is None:
            input_features = [f"a{j}" for j in range(self.n_features_in_)]
        names = []
        for exps in monomial_exponents(self.spec_):
            parts = [
                name if p == 1 else f"{name}^{p}"
                for name, p in zip(input_features, exps)
                if p > 0
            ]
            names.append(" ".join(parts) if parts else "1")
        return np.asarray(names, dtype=object)
