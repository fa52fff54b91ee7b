"""Target functions on [-1,1]^d with analytic derivative oracles.

Each library target declares its smoothness budget: ``sobolev_scale`` is a
certified bound on max_{|alpha| <= beta} sup |D^alpha f| (at least 1), so
``target.in_ball()`` is inside the unit Sobolev ball. Builders consume the
rescaled function and multiply the output layer back by the scale.
"""

from __future__ import annotations

import math
import re
from typing import Callable

import numpy as np


class TargetError(ValueError):
    """Unknown target name or invalid (dim, beta) combination."""


class TargetFunction:
    """A target f with evaluation and partial-derivative oracles.

    deriv(alpha, x) returns D^alpha f(x) for a multi-index alpha of length
    ``dim``; it is queried for |alpha| <= beta - 1 when building Taylor
    coefficients. ``lipschitz`` bounds |df/dx_k| per coordinate and is used
    by composite error budgets.
    """

    def __init__(self, name: str, dim: int, beta: int,
                 eval_batch: Callable[[np.ndarray], np.ndarray],
                 deriv: Callable[[tuple, np.ndarray], float],
                 sobolev_scale: float = 1.0,
                 lipschitz: float = 1.0):
        if dim < 1 or beta < 1:
            raise TargetError("dim and beta must be positive")
        self.name = name
        self.dim = dim
        self.beta = beta
        self._eval_batch = eval_batch
        self._deriv = deriv
        self.sobolev_scale = float(max(1.0, sobolev_scale))
        self.lipschitz = float(lipschitz)

    def evaluate_batch(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.dim:
            raise TargetError(f"target {self.name} expects dimension {self.dim}")
        return np.asarray(self._eval_batch(xs), dtype=float).reshape(-1)

    def evaluate(self, x) -> float:
        return float(self.evaluate_batch(np.asarray(x, dtype=float)[None, :])[0])

    def deriv(self, alpha, x) -> float:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim or any(a < 0 for a in alpha):
            raise TargetError(f"bad multi-index {alpha} for dim {self.dim}")
        return float(self._deriv(alpha, np.asarray(x, dtype=float)))

    def in_ball(self) -> "TargetFunction":
        """The rescaled copy f / sobolev_scale, inside the unit ball."""
        s = self.sobolev_scale
        if s == 1.0:
            return self
        return TargetFunction(
            name=f"{self.name}/scale",
            dim=self.dim,
            beta=self.beta,
            eval_batch=lambda xs, _f=self._eval_batch: np.asarray(_f(xs)) / s,
            deriv=lambda a, x, _g=self._deriv: _g(a, x) / s,
            sobolev_scale=1.0,
            lipschitz=self.lipschitz / s,
        )


def finite_difference_target(name: str, dim: int, beta: int,
                             func: Callable[[np.ndarray], float],
                             sobolev_scale: float = 1.0,
                             lipschitz: float = 1.0) -> TargetFunction:
    """Wrap a plain function with a central-difference derivative oracle.

    Uses a 4th-order stencil with step h = cbrt(machine epsilon) applied
    recursively per coordinate. Derivative error feeds the eps/2 Taylor
    budget, so analytic oracles are preferred for library targets.
    """
    h = float(np.finfo(float).eps) ** (1.0 / 3.0)

    def eval_batch(xs):
        return np.array([func(x) for x in xs], dtype=float)

    def deriv(alpha, x):
        def rec(a, pt):
            for k, order in enumerate(a):
                if order > 0:
                    lower = tuple(v - 1 if i == k else v for i, v in enumerate(a))
                    e = np.zeros(len(a))
                    e[k] = h
                    return (-rec(lower, pt + 2 * e) + 8.0 * rec(lower, pt + e)
                            - 8.0 * rec(lower, pt - e) + rec(lower, pt - 2 * e)) / (12.0 * h)
            return func(pt)

        return rec(tuple(alpha), np.asarray(x, dtype=float))

    return TargetFunction(name, dim, beta, eval_batch, deriv,
                          sobolev_scale=sobolev_scale, lipschitz=lipschitz)


# ---------------------------------------------------------------------------
# library
# ---------------------------------------------------------------------------


def _const(dim, beta):
    c = 0.3

    def deriv(alpha, x):
        return c if sum(alpha) == 0 else 0.0

    return TargetFunction("const", dim, beta,
                          lambda xs: np.full(xs.shape[0], c), deriv,
                          sobolev_scale=1.0, lipschitz=0.0)


def _coord(k):
    def factory(dim, beta):
        if k >= dim:
            raise TargetError(f"coord_{k} needs dim > {k}")

        def deriv(alpha, x):
            total = sum(alpha)
            if total == 0:
                return float(x[k])
            if total == 1 and alpha[k] == 1:
                return 1.0
            return 0.0

        return TargetFunction(f"coord_{k}", dim, beta,
                              lambda xs: xs[:, k].copy(), deriv)

    return factory


def _prod_pair(dim, beta):
    if dim < 2:
        raise TargetError("prod_pair needs dim >= 2")

    def deriv(alpha, x):
        if any(a > 1 for a in alpha[:2]) or any(a > 0 for a in alpha[2:]):
            return 0.0
        v = 0.25
        for k in range(2):
            if alpha[k] == 0:
                v *= x[k]
        return v

    return TargetFunction("prod_pair", dim, beta,
                          lambda xs: xs[:, 0] * xs[:, 1] / 4.0, deriv,
                          sobolev_scale=1.0, lipschitz=0.25)


def _sin_scaled(dim, beta):
    # D^k sin(2x)/5 = (2^k/5) sin(2x + k pi/2); bound 2^beta/5
    def deriv(alpha, x):
        if any(a > 0 for a in alpha[1:]):
            return 0.0
        k = alpha[0]
        return (2.0 ** k / 5.0) * math.sin(2.0 * x[0] + k * math.pi / 2.0)

    return TargetFunction("sin_scaled", dim, beta,
                          lambda xs: np.sin(2.0 * xs[:, 0]) / 5.0, deriv,
                          sobolev_scale=max(1.0, 2.0 ** beta / 5.0),
                          lipschitz=0.4)


_GAUSS_POLYS: list[np.polynomial.Polynomial] = []


def _gauss_poly(n):
    # exp(-t^2)^{(n)} = p_n(t) exp(-t^2) with p_{n+1} = p_n' - 2t p_n
    while len(_GAUSS_POLYS) <= n:
        if not _GAUSS_POLYS:
            _GAUSS_POLYS.append(np.polynomial.Polynomial([1.0]))
        else:
            p = _GAUSS_POLYS[-1]
            _GAUSS_POLYS.append(p.deriv() - np.polynomial.Polynomial([0.0, 2.0]) * p)
    return _GAUSS_POLYS[n]


def _gauss_univariate_max(n):
    t = np.linspace(-1.0, 1.0, 4001)
    return float(np.max(np.abs(_gauss_poly(n)(t) * np.exp(-t * t))))


def _gauss_bump(dim, beta):
    c = 0.2

    def eval_batch(xs):
        return c * np.exp(-np.sum(xs * xs, axis=1))

    def deriv(alpha, x):
        v = c
        for k, n in enumerate(alpha):
            v *= _gauss_poly(n)(x[k]) * math.exp(-x[k] * x[k])
        return v

    # Sampled bound on the factorized derivatives (documented, not certified
    # symbolically): max over |alpha|<=beta of prod_k max|g^(a_k)|.
    per_order = [_gauss_univariate_max(n) for n in range(beta + 1)]
    bound = c * max(
        float(np.prod([per_order[a] for a in alpha]))
        for alpha in _compositions_up_to(dim, beta)
    )
    return TargetFunction("gauss_bump", dim, beta, eval_batch, deriv,
                          sobolev_scale=max(1.0, bound),
                          lipschitz=c * per_order[1])


def _compositions_up_to(dim, total):
    # all multi-indices of length dim with |alpha| <= total
    if dim == 0:
        yield ()
        return
    for head in range(total + 1):
        for rest in _compositions_up_to(dim - 1, total - head):
            yield (head,) + rest


def _poly_mix(dim, beta):
    if dim == 1:
        def eval_batch(xs):
            return (xs[:, 0] ** 3 - xs[:, 0]) / 8.0

        def deriv(alpha, x):
            n = alpha[0]
            t = x[0]
            if n == 0:
                return (t ** 3 - t) / 8.0
            if n == 1:
                return (3.0 * t * t - 1.0) / 8.0
            if n == 2:
                return 6.0 * t / 8.0
            if n == 3:
                return 6.0 / 8.0
            return 0.0

        return TargetFunction("poly_mix", dim, beta, eval_batch, deriv,
                              sobolev_scale=1.0, lipschitz=0.25)

    def eval_batch(xs):
        return (xs[:, 0] ** 2 - xs[:, 1] ** 2) / 8.0 + xs[:, 0] * xs[:, 1] / 8.0

    def deriv(alpha, x):
        if any(a > 0 for a in alpha[2:]):
            return 0.0
        a0, a1 = alpha[0], alpha[1]
        if a0 + a1 == 0:
            return (x[0] ** 2 - x[1] ** 2) / 8.0 + x[0] * x[1] / 8.0
        if (a0, a1) == (1, 0):
            return (2.0 * x[0] + x[1]) / 8.0
        if (a0, a1) == (0, 1):
            return (-2.0 * x[1] + x[0]) / 8.0
        if (a0, a1) == (2, 0):
            return 0.25
        if (a0, a1) == (0, 2):
            return -0.25
        if (a0, a1) == (1, 1):
            return 0.125
        return 0.0

    return TargetFunction("poly_mix", dim, beta, eval_batch, deriv,
                          sobolev_scale=1.0, lipschitz=0.375)


def _half_sum(dim, beta):
    if dim != 2:
        raise TargetError("half_sum is a 2-input combiner")

    def deriv(alpha, x):
        total = sum(alpha)
        if total == 0:
            return (x[0] + x[1]) / 2.0
        if total == 1:
            return 0.5
        return 0.0

    return TargetFunction("half_sum", dim, beta,
                          lambda xs: (xs[:, 0] + xs[:, 1]) / 2.0, deriv,
                          sobolev_scale=1.0, lipschitz=0.5)


_LIBRARY = {
    "const": _const,
    "prod_pair": _prod_pair,
    "sin_scaled": _sin_scaled,
    "gauss_bump": _gauss_bump,
    "poly_mix": _poly_mix,
    "half_sum": _half_sum,
}

LIBRARY_NAMES = ("const", "coord_k", "prod_pair", "sin_scaled", "gauss_bump",
                 "poly_mix", "half_sum")


def make_target(name: str, dim: int, beta: int) -> TargetFunction:
    """Instantiate a library target by name (coord_k matches coord_0, ...)."""
    m = re.fullmatch(r"coord_(\d+)", name)
    if m:
        return _coord(int(m.group(1)))(dim, beta)
    try:
        factory = _LIBRARY[name]
    except KeyError:
        raise TargetError(
            f"unknown target {name!r}; library: {', '.join(LIBRARY_NAMES)}"
        ) from None
    return factory(dim, beta)
