"""Contextual and recursive network functions evaluated on a valued graph."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .graph import InfluenceMatrix, ValuedGraph, norm_check

DENSE_LIMIT = 500


class MissingValueError(ValueError):
    """A value needed for an evaluation has not been observed."""


class NormRestrictionError(ValueError):
    """``|lambda| * rho(M)`` is not below one."""


class IterationCapError(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(f"fixed point not reached after {iterations} steps (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class Theta:
    """Network function parameters.

    CNF mode carries ``gamma`` (contextual coefficients), RNF mode carries
    ``lam`` (recursion coefficient); exactly one of them is set.
    """

    beta: np.ndarray
    gamma: np.ndarray | None = None
    lam: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if (self.gamma is None) == (self.lam is None):
            raise ValueError("exactly one of gamma (CNF) or lam (RNF) must be given")
        if self.gamma is not None:
            object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        else:
            object.__setattr__(self, "lam", float(self.lam))

    @property
    def mode(self) -> str:
        return "cnf" if self.gamma is not None else "rnf"

    def vector(self) -> np.ndarray:
        """Stacked parameter vector: ``(beta, gamma)`` or ``(beta, lam)``."""
        tail = self.gamma if self.mode == "cnf" else [self.lam]
        return np.concatenate([self.beta, tail])

    @classmethod
    def from_vector(cls, vec, mode: str, n_beta: int) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        if mode == "cnf":
            return cls(vec[:n_beta], gamma=vec[n_beta:])
        if vec.size != n_beta + 1:
            raise ValueError("RNF vector must hold beta followed by lambda")
        return cls(vec[:n_beta], lam=vec[n_beta])

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "beta": self.beta.tolist()}
        if self.mode == "cnf":
            d["gamma"] = self.gamma.tolist()
        else:
            d["lambda"] = self.lam
        return d


@dataclass(frozen=True)
class CFunction:
    """Pluggable node term ``c(x; beta)`` with its gradient in ``beta``.

    Both callables act row-wise on a feature matrix.
    """

    name: str
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    linear: bool = False


LINEAR = CFunction("linear", lambda x, b: x @ b, lambda x, b: x, linear=True)
C_FUNCTIONS = {"linear": LINEAR}


def get_c_function(c) -> CFunction:
    if isinstance(c, CFunction):
        return c
    try:
        return C_FUNCTIONS[c]
    except KeyError:
        raise ValueError(f"unknown c function {c!r}") from None


@dataclass(frozen=True, eq=False)
class MuField:
    mu: np.ndarray
    mode: str
    iterations: int | None = None
    residual: float | None = None

    def to_csv(self, path, labels=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "mu"])
            for i, v in enumerate(self.mu):
                w.writerow([labels[i] if labels else i, repr(float(v))])


def contextual_features(g: ValuedGraph, i: int, m: InfluenceMatrix | None = None) -> np.ndarray:
    """Average feature of the in-neighbours of ``i`` (zero if there are none).

    With ``m`` given, the average is weighted by row ``i`` of M instead.
    """
    if m is None:
        nb = g.in_neighbors(i)
        coef = np.full(nb.size, 1.0 / nb.size) if nb.size else np.empty(0)
    else:
        nb, coef = m.row(g._check(i))
    if nb.size == 0:
        return np.zeros(g.p)
    xs = g.x[nb]
    if np.isnan(xs).any():
        raise MissingValueError(f"features of some in-neighbours of node {i} are unobserved")
    return coef @ xs


def contextual_matrix(g: ValuedGraph, m: InfluenceMatrix | None = None) -> np.ndarray:
    """Contextual features for every node, shape ``(N, p)``."""
    if m is not None:
        return m.matrix @ g.x
    d_in = g.in_degree
    z = g.adjacency.T @ g.x
    return np.divide(z, d_in[:, None], out=np.zeros_like(z), where=d_in[:, None] > 0)


def cnf_mu(g: ValuedGraph, theta: Theta, m: InfluenceMatrix | None = None) -> MuField:
    if theta.mode != "cnf":
        raise ValueError("cnf_mu needs a CNF theta")
    if theta.beta.size != g.p or theta.gamma.size != g.p:
        raise ValueError(f"beta and gamma must have dimension {g.p}")
    mu = g.x @ theta.beta + contextual_matrix(g, m) @ theta.gamma
    return MuField(mu, "cnf")


def c_values(g: ValuedGraph, beta, c="linear") -> np.ndarray:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size != g.p:
        raise ValueError(f"beta must have dimension {g.p}")
    return get_c_function(c).value(g.x, beta)


def _require_feasible(m: InfluenceMatrix, lam: float):
    chk = norm_check(m, lam)
    if not chk.ok:
        raise NormRestrictionError(
            f"|lambda| * rho(M) = {chk.spectral_radius:.6g} violates the restriction"
        )
    return chk


def rnf_mu_exact(g: ValuedGraph, m: InfluenceMatrix, theta: Theta, c="linear",
                 tol: float = 1e-10, max_iter: int | None = None) -> MuField:
    """Solve ``mu = lam * M mu + c`` by fixed-point iteration from ``mu = c``."""
    if theta.mode != "rnf":
        raise ValueError("rnf_mu_exact needs an RNF theta")
    chk = _require_feasible(m, theta.lam)
    cv = c_values(g, theta.beta, c)
    if max_iter is None:
        max_iter = _step_cap(chk, tol, g.n)
    lam, mat = theta.lam, m.matrix
    mu = cv.copy()
    for k in range(1, max_iter + 1):
        # same operation order as neumann_partial, so a nilpotent M gives
        # bit-identical results
        new = lam * (mat @ mu) + cv
        step = np.max(np.abs(new - mu)) if mu.size else 0.0
        mu = new
        if step < tol:
            return MuField(mu, "rnf-exact", k, float(step))
    raise IterationCapError(max_iter, float(step))


def _step_cap(chk, tol: float, n: int) -> int:
    # geometric rate from the tighter of the two bounds on ||lam M||
    rate = chk.row_sum_bound if chk.row_sum_bound < 1 else chk.spectral_radius
    if rate <= 0:
        return n + 2
    return max(10 * math.ceil(math.log(tol) / math.log(rate)), n + 2)


def rnf_mu_dense(m: InfluenceMatrix, lam: float, cv) -> np.ndarray:
    """Direct dense solve of ``(I - lam M) mu = c``; small graphs only."""
    n = m.n
    if n > DENSE_LIMIT:
        raise ValueError(f"dense solve limited to N <= {DENSE_LIMIT}")
    _require_feasible(m, lam)
    a = np.eye(n) - lam * m.matrix.toarray()
    return np.linalg.solve(a, np.asarray(cv, dtype=float))


def rnf_mu_tau(g: ValuedGraph, m: InfluenceMatrix, theta: Theta, tau: int, c="linear") -> MuField:
    """Truncated Neumann series ``sum_{t<=tau} lam^t M^t c`` via Horner steps."""
    if theta.mode != "rnf":
        raise ValueError("rnf_mu_tau needs an RNF theta")
    if int(tau) < 1:
        raise ValueError("tau must be a positive integer")
    cv = c_values(g, theta.beta, c)
    mu = neumann_partial(m.matrix, theta.lam, cv, int(tau))
    return MuField(mu, f"rnf-tau({int(tau)})")


def neumann_partial(mat: sp.spmatrix, lam: float, cv: np.ndarray, tau: int) -> np.ndarray:
    mu = cv.copy()
    for _ in range(tau):
        mu = lam * (mat @ mu) + cv
    return mu
