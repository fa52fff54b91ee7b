"""Scalar scaffolding of the construction: grid size, tolerances, partition
functions, Taylor coefficients and the exact local-polynomial approximant.

Everything here is plain arithmetic, independent of the network path; these
functions are oracles for the builders.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gadgets import MultGadgetConfig, psi_ref
from .targets import TargetFunction

N_LIMIT = 10 ** 6

PARITY_EVEN = "even"
PARITY_ODD = "odd"
PARITY_ONE = "one"


class InfeasibleConstructionError(Exception):
    """The requested construction is out of reach at desk scale."""


class SobolevViolationError(Exception):
    """A Taylor coefficient exceeded the unit-ball bound."""

    def __init__(self, m, alpha, value):
        super().__init__(
            f"|a| = {abs(value):.6g} > 1 at grid cell m={m}, alpha={alpha}; "
            "target is outside the unit Sobolev ball"
        )
        self.m = tuple(m)
        self.alpha = tuple(alpha)
        self.value = value


def parity_case(d: int) -> str:
    if d == 1:
        return PARITY_ONE
    return PARITY_EVEN if d % 2 == 0 else PARITY_ODD


def choose_n(eps: float, beta: int, d: int) -> int:
    """Grid size N making the Taylor stage error at most eps/2.

    N = ceil(((beta!/(2^d d^beta)) * eps/2) ** (-1/beta)); the bound
    (2^d d^beta / beta!) N^-beta then sits below eps/2.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    lead = math.factorial(beta) / (2.0 ** d * float(d) ** beta)
    n = math.ceil((lead * eps / 2.0) ** (-1.0 / beta))
    if n > N_LIMIT:
        raise InfeasibleConstructionError(
            f"N = {n} exceeds the desk-scale limit {N_LIMIT}"
        )
    return max(1, n)


def choose_delta(eps: float, beta: int, d: int) -> float:
    """Gadget tolerance eps / (2^(d+1) d^beta (d+beta)), uniform over parity.

    The odd-d construction nests one extra gadget level, so the stricter
    (d+beta) denominator is used everywhere; it only tightens the error.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    return eps / (2.0 ** (d + 1) * float(d) ** beta * (d + beta))


@dataclass(frozen=True)
class ConstructionPlan:
    """All derived constants for one (f, beta, d, eps) build."""

    requested_eps: float   # caller's accuracy target for the original f
    eps: float             # effective target after Sobolev rescaling
    d: int
    beta: int
    n_formula: int         # the formula value of N
    n: int                 # N actually used (parity floor / cap / override)
    a: int                 # ceil(sqrt(2N+1))
    delta: float
    q: float               # gadget input bound, d + beta
    parity: str
    scale: float = 1.0     # sobolev_scale multiplied back at the output
    capped: bool = False

    def __post_init__(self):
        if self.parity != PARITY_EVEN and self.n < 4:
            raise InfeasibleConstructionError(
                f"odd/1-d construction needs N >= 4, got N = {self.n}"
            )

    @property
    def gadget_cfg(self) -> MultGadgetConfig:
        return MultGadgetConfig(q=self.q, eps=self.delta)

    @property
    def scaling(self) -> float:
        """Input normalization 2^(d/2) d^beta of the pairing stage."""
        if self.parity == PARITY_ONE:
            return 2.0 * float(self.d) ** self.beta
        return 2.0 ** (self.d / 2.0) * float(self.d) ** self.beta


def make_plan(eps: float, beta: int, d: int, *, scale: float = 1.0,
              n_override: int | None = None) -> ConstructionPlan:
    """Plan for approximating an in-ball target to eps (after rescaling).

    ``scale`` is the Sobolev rescale factor of the original target: the plan
    targets eps/scale on the rescaled function so the descaled output meets
    eps. ``n_override`` replaces the formula N (used by width capping and by
    fixed-N experiments); the parity floor N >= 4 still applies.
    """
    eps_eff = eps / scale
    if not 0.0 < eps_eff < 1.0:
        raise ValueError(f"effective eps must lie in (0,1), got {eps_eff}")
    parity = parity_case(d)
    n_formula = choose_n(eps_eff, beta, d)
    n = n_formula if n_override is None else int(n_override)
    capped = n_override is not None and n < n_formula
    if parity != PARITY_EVEN:
        n = max(n, 4)
    return ConstructionPlan(
        requested_eps=eps,
        eps=eps_eff,
        d=d,
        beta=beta,
        n_formula=n_formula,
        n=n,
        a=math.ceil(math.sqrt(2 * n + 1)),
        delta=choose_delta(eps_eff, beta, d),
        q=float(d + beta),
        parity=parity,
        scale=scale,
        capped=capped,
    )


# ---------------------------------------------------------------------------
# multi-indices and grid cells
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def enumerate_alphas(dims: int, beta: int) -> tuple:
    """All multi-indices of length ``dims`` with |alpha| <= beta - 1, sorted."""
    if dims == 0:
        return ((),)
    out = [
        alpha
        for alpha in itertools.product(range(beta), repeat=dims)
        if sum(alpha) <= beta - 1
    ]
    return tuple(sorted(out))


def grid_cells(n: int, dims: int) -> list:
    """All grid multi-indices in {-N..N}^dims, lexicographic."""
    return list(itertools.product(range(-n, n + 1), repeat=dims))


def alpha_factorial(alpha) -> int:
    v = 1
    for a in alpha:
        v *= math.factorial(a)
    return v


def taylor_coeffs(target: TargetFunction, m, n: int) -> dict:
    """Taylor coefficients a_{m,alpha} = D^alpha f(m/N) / alpha!, |alpha|<beta.

    Raises SobolevViolationError when a coefficient exceeds 1 beyond rounding
    slack; the caller is expected to pass an in-ball (rescaled) target.
    """
    m = tuple(int(v) for v in m)
    x0 = np.asarray(m, dtype=float) / n
    coeffs = {}
    for alpha in enumerate_alphas(target.dim, target.beta):
        a = target.deriv(alpha, x0) / alpha_factorial(alpha)
        if abs(a) > 1.0 + 1e-9:
            raise SobolevViolationError(m, alpha, a)
        coeffs[alpha] = a
    return coeffs


# ---------------------------------------------------------------------------
# partition of unity and the exact approximant f1
# ---------------------------------------------------------------------------


def eval_phi(m, n: int, x) -> float:
    """phi_m(x) = prod_k psi(3N(x_k - m_k/N)), the partition bump at cell m."""
    x = np.asarray(x, dtype=float)
    vals = psi_ref(3.0 * n * x - 3.0 * np.asarray(m, dtype=float))
    return float(np.prod(vals))


def phi_sum(n: int, xs) -> np.ndarray:
    """sum_m phi_m(x) for a batch of points (vectorized, all cells)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    js = np.arange(-n, n + 1, dtype=float)
    # per-coordinate sums factorize: sum_m prod_k psi_k = prod_k sum_j psi
    per_coord = psi_ref(3.0 * n * xs[:, :, None] - 3.0 * js[None, None, :]).sum(axis=2)
    return np.prod(per_coord, axis=1)


def active_indices(t: float, n: int) -> list:
    """Grid indices j in [-N, N] with psi(3N(t - j/N)) > 0 (at most two)."""
    nt = n * t
    lo = math.ceil(nt - 2.0 / 3.0)
    hi = math.floor(nt + 2.0 / 3.0)
    return [j for j in range(lo, hi + 1)
            if -n <= j <= n and abs(nt - j) < 2.0 / 3.0]


def active_cells(x, n: int) -> list:
    """Cells m with phi_m(x) != 0; the support property caps this at 2^d."""
    per_coord = [active_indices(float(t), n) for t in np.asarray(x, dtype=float)]
    cells = list(itertools.product(*per_coord))
    assert len(cells) <= 2 ** len(per_coord)
    return cells


class F1Evaluator:
    """Exact evaluation of f1 = sum_m phi_m P_m with cached coefficients."""

    def __init__(self, target: TargetFunction, plan: ConstructionPlan):
        if target.dim != plan.d or target.beta != plan.beta:
            raise ValueError("target does not match plan")
        self.target = target
        self.plan = plan
        self._cache: dict = {}

    def coeffs(self, m) -> dict:
        m = tuple(m)
        if m not in self._cache:
            self._cache[m] = taylor_coeffs(self.target, m, self.plan.n)
        return self._cache[m]

    def taylor_poly(self, m, x) -> float:
        x = np.asarray(x, dtype=float)
        shift = x - np.asarray(m, dtype=float) / self.plan.n
        total = 0.0
        for alpha, a in self.coeffs(m).items():
            if a == 0.0:
                continue
            term = a
            for k, p in enumerate(alpha):
                if p:
                    term *= shift[k] ** p
            total += term
        return total

    def __call__(self, x) -> float:
        n = self.plan.n
        total = 0.0
        for m in active_cells(x, n):
            total += eval_phi(m, n, x) * self.taylor_poly(m, x)
        return total


def eval_f1(target: TargetFunction, plan: ConstructionPlan, x) -> float:
    """One-shot exact f1(x); use F1Evaluator for sweeps (it caches)."""
    return F1Evaluator(target, plan)(x)
