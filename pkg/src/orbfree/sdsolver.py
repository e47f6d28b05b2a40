"""Truncated Schwinger-Dyson fixed-point solver.

The unknown is a tracial state tau on words in Haar unitaries u_i and
fixed self-adjoint generators z_ij, constrained by

    tau restricted to z-words  =  tau_0  (free across families),
    (tau (x) tau) ∘ d_i(p)     =  tau((D_i h) p)   for all p and i,

where d_i differentiates in the i-th unitary and D_i is the cyclic
gradient of h evaluated at x_ij = u_i z_ij u_i*.  For h = 0 the equation
is exactly the freeness recursion, whose solution (Haar unitaries free
from the z-families) seeds the iteration.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .matrices import SpectralMeasure
from .moments import MomentTable, canonical_word, x_letters, _enumerate_words
from .poly import (
    FamilyLayout,
    Letter,
    NCPoly,
    Word,
    cyclic_gradient,
    derive_liberation,
    letter_u,
    letter_ustar,
    letter_z,
    liberation_gradient,
    reduce_word,
    substitute_x,
)

__all__ = [
    "SDProblem",
    "SDReport",
    "sd_solve",
    "sd_residual",
    "pushforward_x",
    "liberation_check",
    "free_haar_state",
]

SMALLNESS_THRESHOLD = 0.05


@dataclass
class SDProblem:
    layout: FamilyLayout
    h: NCPoly  # over the x alphabet
    tau0: Sequence  # per family: SpectralMeasure or single-family z MomentTable
    D: int = 8
    damping: float = 0.5
    max_iter: int = 200
    tol: float = 1e-10
    picard: bool = False

    def __post_init__(self):
        if len(self.tau0) != self.layout.n:
            raise ValueError("need one z-marginal per family")
        hz = substitute_x(self.h)
        if not self.h.is_zero and self.D < hz.degree + 2:
            raise ValueError("truncation degree must exceed degree(h(uzu*)) + 1")
        tmax = max((abs(c) for c in self.h.terms.values()), default=0.0)
        if tmax > SMALLNESS_THRESHOLD:
            warnings.warn(
                f"coefficient magnitude {tmax:.3g} exceeds the small-coefficient "
                f"regime {SMALLNESS_THRESHOLD}; convergence is not expected",
                stacklevel=2,
            )

    def marginal(self, family: int, block: Word) -> complex:
        src = self.tau0[family - 1]
        if isinstance(src, SpectralMeasure):
            # single-variable family: block is a power of one z letter
            return complex(src.moment(len(block)))
        return src.get(block)


@dataclass
class SDReport:
    converged: bool
    iterations: int
    residual: float
    delta_history: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# the h = 0 solution: free product of Haar unitaries and the z-families


def _component(letter: Letter) -> tuple[str, int]:
    kind, i, _ = letter
    return ("u" if kind in ("u", "U") else "z", i)


class _FreeHaarState:
    """Moments of the free product of one Haar unitary per family and the
    z-families with marginals from the problem, via the centering
    recursion."""

    def __init__(self, problem: SDProblem):
        self.problem = problem
        self.cache: dict[Word, complex] = {(): 1.0 + 0.0j}

    def _block_marginal(self, block: Word) -> complex:
        kind, fam = _component(block[0])
        if kind == "u":
            # reduced runs are pure powers u^k or (u*)^k; Haar moments vanish
            return 0.0 + 0.0j
        return self.problem.marginal(fam, block)

    def value(self, w) -> complex:
        key, flag = canonical_word(w)
        v = self._value_linear(key)
        return v.conjugate() if flag else v

    def _value_linear(self, w: Word) -> complex:
        if w in self.cache:
            return self.cache[w]
        blocks = [tuple(g) for _, g in itertools.groupby(w, key=_component)]
        if len(blocks) == 1:
            v = self._block_marginal(w)
        else:
            k = len(blocks)
            betas = [self._block_marginal(b) for b in blocks]
            acc = 0.0 + 0.0j
            for mask in range(2**k - 1):
                coeff = 1.0 + 0.0j
                kept: list[Letter] = []
                dropped = 0
                for j in range(k):
                    if mask >> j & 1:
                        kept.extend(blocks[j])
                    else:
                        coeff *= betas[j]
                        dropped += 1
                if coeff == 0.0:
                    continue
                sign = -1.0 if dropped % 2 else 1.0
                acc += sign * coeff * self.value(reduce_word(kept))
            v = -acc
        self.cache[w] = v
        return v


def free_haar_state(problem: SDProblem, words: Sequence[Word]) -> MomentTable:
    """Free-product oracle values on the given uz-words."""
    st = _FreeHaarState(problem)
    out = MomentTable(problem.layout, "uz", problem.D, problem.layout.R)
    for w in words:
        key, _ = canonical_word(w)
        out.values[key] = st._value_linear(key)
    return out


# ---------------------------------------------------------------------------
# update rules


def _derive_terms(i: int, w: Word):
    """d_i applied to a single word: (left, right, sign) triples."""
    for k, l in enumerate(w):
        if l == ("u", i, 0):
            yield w[: k + 1], w[k + 1 :], 1.0
        elif l == ("U", i, 0):
            yield w[:k], w[k:], -1.0


def _pick_rotation(w: Word) -> tuple[int, Word, bool]:
    """Family, rotated word, and whether the isolated term sits at the end
    (word ends in u_i) or at the start (begins with u_i*)."""
    fams = sorted({l[1] for l in w if l[0] in ("u", "U")})
    if not fams:
        raise ValueError("word has no unitary letters")
    i = fams[0]
    ending = [w[k + 1 :] + w[: k + 1] for k in range(len(w)) if w[k] == ("u", i, 0)]
    if ending:
        return i, min(ending), True
    starting = [w[k:] + w[:k] for k in range(len(w)) if w[k] == ("U", i, 0)]
    return i, min(starting), False


def _is_pure_z(w: Word) -> bool:
    return all(l[0] == "z" for l in w)


class _Solver:
    def __init__(self, problem: SDProblem, demand: Sequence[Word]):
        self.problem = problem
        self.oracle = _FreeHaarState(problem)
        hz = substitute_x(problem.h)
        self.grads = {}
        for i in range(1, problem.layout.n + 1):
            g = cyclic_gradient(i, hz)
            if not g.is_zero:
                self.grads[i] = g
        # plans: canonical word -> (i, at_end, lhs terms, rhs words)
        self.plans: dict[Word, tuple] = {}
        self.values: dict[Word, complex] = {}
        queue = [canonical_word(w)[0] for w in demand]
        seen = set()
        while queue:
            w = queue.pop()
            if w in seen or not w or _is_pure_z(w):
                continue
            seen.add(w)
            plan = self._make_plan(w)
            self.plans[w] = plan
            _, _, lhs_terms, rhs_words = plan
            for a, b, _ in lhs_terms:
                for part in (a, b):
                    key, _ = canonical_word(part)
                    if key and not _is_pure_z(key) and key not in seen:
                        queue.append(key)
            for v, _ in rhs_words:
                key, _ = canonical_word(v)
                if (
                    key
                    and not _is_pure_z(key)
                    and len(key) <= self.problem.D
                    and key not in seen
                ):
                    queue.append(key)
        # deterministic update order: by length then lexicographic
        self.order = sorted(self.plans, key=lambda w: (len(w), w))
        for w in self.order:
            self.values[w] = self.oracle._value_linear(w)

    def _make_plan(self, w: Word):
        i, rot, at_end = _pick_rotation(w)
        lhs_terms = []
        for a, b, sign in _derive_terms(i, rot):
            if at_end and a == rot and not b:
                continue  # the isolated term tau(w) itself
            if not at_end and not a and b == rot:
                continue
            lhs_terms.append((a, b, sign))
        rhs_words = []
        if i in self.grads:
            for v, c in self.grads[i].terms.items():
                rhs_words.append((reduce_word(v + rot), complex(c)))
        return i, at_end, lhs_terms, rhs_words

    def lookup(self, w, table: dict[Word, complex]) -> complex:
        key, flag = canonical_word(w)
        if not key:
            return 1.0 + 0.0j
        if _is_pure_z(key):
            v = self.oracle._value_linear(key)
        elif key in table:
            v = table[key]
        else:
            v = self.oracle._value_linear(key)
        return v.conjugate() if flag else v

    def sweep(self) -> float:
        prev = dict(self.values)
        damp = 0.0 if self.problem.picard else self.problem.damping
        max_delta = 0.0
        for w in self.order:
            _, at_end, lhs_terms, rhs_words = self.plans[w]
            s = 0.0 + 0.0j
            for a, b, sign in lhs_terms:
                s += sign * self.lookup(a, self.values) * self.lookup(b, self.values)
            rhs = 0.0 + 0.0j
            for v, c in rhs_words:
                rhs += c * self.lookup(v, prev)
            cand = rhs - s if at_end else s - rhs
            new = damp * self.values[w] + (1.0 - damp) * cand
            max_delta = max(max_delta, abs(new - self.values[w]))
            self.values[w] = new
        return max_delta


def _default_demand(problem: SDProblem, pushforward_degree: int) -> list[Word]:
    layout = problem.layout
    deg = max((g.degree for g in
               (cyclic_gradient(i, substitute_x(problem.h))
                for i in range(1, layout.n + 1))), default=0)
    demand: list[Word] = []
    # residual test words and their right-hand sides
    letters = _uz_letters(layout)
    cap = max(0, problem.D - deg) if not problem.h.is_zero else 2
    for p in _enumerate_words(letters, min(cap, 3)):
        if p:
            demand.append(p)
    # pushforward-demanded words
    for w in _enumerate_words(x_letters(layout), pushforward_degree):
        if w:
            zw = substitute_x(NCPoly.monomial(layout, list(w), 1))
            demand.extend(zw.terms.keys())
    return demand


def _uz_letters(layout: FamilyLayout) -> list[Letter]:
    out = [letter_z(i, j) for i in range(1, layout.n + 1) for j in range(1, layout.r[i - 1] + 1)]
    for i in range(1, layout.n + 1):
        out.append(letter_u(i))
        out.append(letter_ustar(i))
    return out


def sd_solve(
    problem: SDProblem, pushforward_degree: int = 4, demand: Sequence[Word] | None = None
) -> tuple[MomentTable, SDReport]:
    """Damped Picard iteration on the demand-driven word set, seeded with
    the h=0 free-product solution."""
    words = list(demand) if demand is not None else []
    words.extend(_default_demand(problem, pushforward_degree))
    solver = _Solver(problem, words)
    history = []
    ratios = []
    converged = False
    iterations = 0
    for it in range(problem.max_iter):
        delta = solver.sweep()
        history.append(delta)
        if len(history) >= 2 and history[-2] > 0:
            ratios.append(delta / history[-2])
        iterations = it + 1
        if delta <= problem.tol / 10.0:
            converged = True
            break
    table = MomentTable(problem.layout, "uz", problem.D, problem.layout.R)
    for w, v in solver.values.items():
        table.values[w] = v
    # pure z words for completeness
    for w in _enumerate_words(_uz_letters(problem.layout), min(problem.D, 4)):
        if w and _is_pure_z(w):
            key, _ = canonical_word(w)
            if key not in table.values:
                table.values[key] = solver.oracle._value_linear(key)
    resid = sd_residual(table, problem)
    report = SDReport(converged and resid <= problem.tol, iterations, resid,
                      history, ratios)
    return table, report


# ---------------------------------------------------------------------------
# residual


def _table_lookup(table: MomentTable, problem: SDProblem, oracle: _FreeHaarState, w) -> complex:
    key, flag = canonical_word(w)
    if not key:
        return 1.0 + 0.0j
    if key in table.values:
        v = table.values[key]
    elif _is_pure_z(key):
        v = oracle._value_linear(key)
    else:
        v = oracle._value_linear(key)
    return v.conjugate() if flag else v


def sd_residual(table: MomentTable, problem: SDProblem, max_test_len: int | None = None) -> float:
    """Max violation of the Schwinger-Dyson equation over all test words p
    with degree(p) + degree(D_i h) <= D, plus the z-marginal deviation."""
    layout = problem.layout
    oracle = _FreeHaarState(problem)
    hz = substitute_x(problem.h)
    worst = 0.0

    def tau(w):
        return _table_lookup(table, problem, oracle, w)

    for i in range(1, layout.n + 1):
        g = cyclic_gradient(i, hz)
        cap = problem.D - (g.degree if not g.is_zero else 0)
        if max_test_len is not None:
            cap = min(cap, max_test_len)
        cap = min(cap, 3)  # keeps enumeration over the uz alphabet bounded
        for p in _enumerate_words(_uz_letters(layout), cap):
            lhs = 0.0 + 0.0j
            for a, b, sign in _derive_terms(i, p):
                lhs += sign * tau(a) * tau(b)
            rhs = 0.0 + 0.0j
            for v, c in g.terms.items():
                rhs += complex(c) * tau(reduce_word(v + p))
            worst = max(worst, abs(lhs - rhs))
    # z-marginal deviation
    for w, v in table.values.items():
        if w and _is_pure_z(w):
            worst = max(worst, abs(v - oracle._value_linear(w)))
    return worst


# ---------------------------------------------------------------------------
# pushforward and liberation identity


def pushforward_x(table: MomentTable, problem: SDProblem, m: int) -> MomentTable:
    """Moments of x_ij = u_i z_ij u_i* under the solved state."""
    layout = problem.layout
    oracle = _FreeHaarState(problem)
    out = MomentTable(layout, "x", m, layout.R)
    for w in _enumerate_words(x_letters(layout), m):
        key, _ = canonical_word(w)
        if key in out.values:
            continue
        zw = substitute_x(NCPoly.monomial(layout, list(key), 1))
        ((word, c),) = zw.terms.items()
        out.values[key] = complex(c) * _table_lookup(table, problem, oracle, word)
    return out


def liberation_check(table: MomentTable, problem: SDProblem, m: int) -> float:
    """Max deviation of tau(j_i w) from (tau (x) tau) applied to the
    liberation derivative of w, over x-words of length <= m."""
    layout = problem.layout
    oracle = _FreeHaarState(problem)

    def tau_uz(p: NCPoly) -> complex:
        acc = 0.0 + 0.0j
        for w, c in p.terms.items():
            acc += complex(c) * _table_lookup(table, problem, oracle, w)
        return acc

    def tau_x(p: NCPoly) -> complex:
        return tau_uz(substitute_x(p))

    worst = 0.0
    for i in range(1, layout.n + 1):
        j = liberation_gradient(i, problem.h)  # lives in the u,z letters
        for w in _enumerate_words(x_letters(layout), m):
            p = NCPoly.monomial(layout, list(w), 1)
            lhs = tau_uz(j * substitute_x(p))
            rhs = 0.0 + 0.0j
            for (a, b), c in derive_liberation(i, p).terms.items():
                rhs += complex(c) * tau_x(NCPoly.monomial(layout, list(a), 1)) * tau_x(
                    NCPoly.monomial(layout, list(b), 1)
                )
            worst = max(worst, abs(lhs - rhs))
    return worst
