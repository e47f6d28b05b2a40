"""Truncated tracial states as moment tables, empirical and orbital
empirical states, microstate membership tests, the free-product moment
oracle, mixtures, and single-variable free entropy."""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .matrices import MatrixTuple, SpectralMeasure, trace_word
from .poly import (
    FamilyLayout,
    Letter,
    Word,
    adjoint_word,
    letter_u,
    letter_ustar,
    letter_x,
    letter_z,
    reduce_word,
    word_sort_key,
    xz_letter_count,
)

__all__ = [
    "MomentTable",
    "canonical_word",
    "empirical_state",
    "empirical_orbital_state",
    "microstate_check",
    "orbital_microstate_check",
    "free_product",
    "free_cumulants",
    "moments_from_cumulants",
    "mixture",
    "moment_distance",
    "chi_single",
    "table_from_measure",
    "x_letters",
]


# ---------------------------------------------------------------------------
# canonical keys


def _cyclic_reduce(w: Word) -> Word:
    """Reduce, then cancel inverse unitary pairs that wrap around the cycle."""
    w = reduce_word(w)
    while len(w) >= 2:
        a, b = w[0], w[-1]
        if a[1] == b[1] and {a[0], b[0]} == {"u", "U"} and a[0] != b[0]:
            w = w[1:-1]
        else:
            break
    return w


def canonical_word(w: Iterable[Letter]) -> tuple[Word, bool]:
    """Canonical representative under cyclic rotation and adjoint.

    Returns (representative, conjugate_flag); the stored value for the
    representative must be conjugated when the flag is set.
    """
    w = _cyclic_reduce(tuple(w))
    best = None
    best_flag = False
    for cand, flag in ((w, False), (adjoint_word(w), True)):
        for k in range(max(1, len(cand))):
            rot = cand[k:] + cand[:k]
            key = word_sort_key(rot)
            if best is None or key < word_sort_key(best):
                best = rot
                best_flag = flag
    return best, best_flag


# ---------------------------------------------------------------------------
# moment tables


def x_letters(layout: FamilyLayout, family: int | None = None) -> list[Letter]:
    fams = [family] if family is not None else range(1, layout.n + 1)
    return [letter_x(i, j) for i in fams for j in range(1, layout.r[i - 1] + 1)]


def _alphabet_letters(layout: FamilyLayout, alphabet: str) -> list[Letter]:
    if alphabet == "x":
        return x_letters(layout)
    if alphabet == "uz":
        out = [letter_z(i, j) for i in range(1, layout.n + 1) for j in range(1, layout.r[i - 1] + 1)]
        for i in range(1, layout.n + 1):
            out.append(letter_u(i))
            out.append(letter_ustar(i))
        return out
    raise ValueError(f"unknown alphabet tag {alphabet!r}")


@dataclass
class MomentTable:
    """Truncated tracial state stored on canonical word representatives.

    Traciality and adjoint symmetry hold structurally: every lookup goes
    through the canonical (cyclic rotation, adjoint) key.
    """

    layout: FamilyLayout
    alphabet: str
    m: int
    R: float
    values: dict[Word, complex] = field(default_factory=dict)

    def __post_init__(self):
        self.values.setdefault((), 1.0 + 0.0j)

    def get(self, w: Iterable[Letter]) -> complex:
        key, flag = canonical_word(w)
        v = self.values[key]
        return v.conjugate() if flag else v

    def has(self, w: Iterable[Letter]) -> bool:
        key, _ = canonical_word(w)
        return key in self.values

    def set(self, w: Iterable[Letter], value: complex) -> None:
        key, flag = canonical_word(w)
        value = complex(value)
        self.values[key] = value.conjugate() if flag else value

    def words(self, max_len: int | None = None) -> list[Word]:
        cap = self.m if max_len is None else max_len
        return [w for w in self.values if len(w) <= cap]

    def check_invariants(self, tol: float = 1e-10) -> None:
        if abs(self.values[()] - 1.0) > tol:
            raise ValueError("trace of the unit must be 1")
        for w, v in self.values.items():
            bound = self.R ** xz_letter_count(w)
            if abs(v) > bound * (1.0 + 1e-9) + tol:
                raise ValueError(f"moment bound violated at {w}: |{v}| > {bound}")

    def restrict_family(self, i: int) -> "MomentTable":
        """Marginal table of family i (keeps only words in that family)."""
        out = MomentTable(self.layout, self.alphabet, self.m, self.R)
        for w, v in self.values.items():
            if all(l[1] == i for l in w):
                out.values[w] = v
        return out

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        from .poly import _format_word  # reuse the canonical printer

        data = {}
        for w, v in sorted(self.values.items(), key=lambda kv: word_sort_key(kv[0])):
            key = "1" if not w else _format_word(w)
            data[key] = [v.real, v.imag]
        data["metadata"] = {
            "layout": {"n": self.layout.n, "r": list(self.layout.r)},
            "m": self.m,
            "R": self.R,
            "alphabet": self.alphabet,
        }
        return data

    @staticmethod
    def from_json(data: dict) -> "MomentTable":
        from .poly import parse

        meta = data["metadata"]
        layout = FamilyLayout(n=meta["layout"]["n"], r=tuple(meta["layout"]["r"]), R=meta["R"])
        out = MomentTable(layout, meta["alphabet"], meta["m"], meta["R"])
        for key, (re, im) in ((k, v) for k, v in data.items() if k != "metadata"):
            if key == "1":
                continue
            p = parse(key, layout)
            ((w, _),) = p.terms.items()
            out.set(w, complex(re, im))
        return out


def _enumerate_words(letters: Sequence[Letter], m: int):
    for length in range(m + 1):
        yield from itertools.product(letters, repeat=length)


def empirical_state(tup: MatrixTuple, m: int, alphabet: str = "x") -> MomentTable:
    """Moment table of normalized traces over all words of length <= m."""
    if m < 1:
        raise ValueError("degree bound must be >= 1")
    table = MomentTable(tup.layout, alphabet, m, tup.layout.R)
    for w in _enumerate_words(_alphabet_letters(tup.layout, alphabet), m):
        key, flag = canonical_word(w)
        if key in table.values:
            continue
        v = trace_word(key, tup)
        table.values[key] = v
    return table


def empirical_orbital_state(
    unitaries: Sequence[np.ndarray], microstates: Sequence[np.ndarray] | MatrixTuple, m: int
) -> MomentTable:
    """Empirical state of the conjugated tuple (V_i Xi_i V_i*), over x."""
    if isinstance(microstates, MatrixTuple):
        tup = microstates
    else:
        raise TypeError("pass microstates as a MatrixTuple")
    return empirical_state(tup.conjugated(list(unitaries)), m, alphabet="x")


def microstate_check(tup: MatrixTuple, target: MomentTable, m: int, delta: float) -> bool:
    """Membership in the microstate set: every word of length <= m matches
    the target within delta in absolute value."""
    if target.m < m:
        raise ValueError("target degree insufficient")
    letters = _alphabet_letters(tup.layout, target.alphabet)
    cache: dict[Word, complex] = {}
    for w in _enumerate_words(letters, m):
        key, flag = canonical_word(w)
        if key not in cache:
            cache[key] = trace_word(key, tup)
        got = cache[key].conjugate() if flag else cache[key]
        if abs(got - target.get(w)) >= delta:
            return False
    return True


def orbital_microstate_check(
    unitaries: Sequence[np.ndarray],
    microstates: MatrixTuple,
    target: MomentTable,
    m: int,
    delta: float,
) -> bool:
    """Orbital membership: the conjugated tuple lies in the microstate set
    of the joint target (all mixed moments up to degree m within delta)."""
    return microstate_check(microstates.conjugated(list(unitaries)), target, m, delta)


# ---------------------------------------------------------------------------
# free product via the centering recursion


def _blocks(w: Word) -> list[Word]:
    out = []
    for _, grp in itertools.groupby(w, key=lambda l: l[1]):
        out.append(tuple(grp))
    return out


def free_product(marginals: Sequence[MomentTable], m: int) -> MomentTable:
    """Joint moments of freely independent families with the given
    single-family marginals.

    Uses the centering recursion: an alternating product of centered
    blocks has trace zero, which expands any mixed word into polynomially
    many shorter mixed words and marginal moments.
    """
    layout = marginals[0].layout
    if len(marginals) != layout.n:
        raise ValueError("need one marginal per family")
    for t in marginals:
        if t.m < m:
            raise ValueError("marginal degree insufficient")

    cache: dict[Word, complex] = {(): 1.0 + 0.0j}

    def tau(w: Word) -> complex:
        key, flag = canonical_word(w)
        if key in cache:
            v = cache[key]
            return v.conjugate() if flag else v
        blocks = _blocks(key)
        if len(blocks) == 1:
            fam = key[0][1]
            v = marginals[fam - 1].get(key)
        else:
            k = len(blocks)
            betas = [marginals[b[0][1] - 1].get(b) for b in blocks]
            # 0 = sum over subsets T of (-1)^(k-|T|) prod_{j not in T} beta_j
            #     * tau(concatenation of blocks in T); solve for T = full set
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
                sign = -1.0 if dropped % 2 else 1.0
                acc += sign * coeff * tau(tuple(kept))
            v = -acc
        cache[key] = v
        return v.conjugate() if flag else v

    out = MomentTable(layout, marginals[0].alphabet, m, layout.R)
    for w in _enumerate_words(_alphabet_letters(layout, out.alphabet), m):
        key, _ = canonical_word(w)
        if key not in out.values:
            out.values[key] = tau(key)
    return out


def table_from_measure(
    layout: FamilyLayout, family: int, index: int, mu: SpectralMeasure, m: int
) -> MomentTable:
    """Single-variable marginal table for slot (family, index) from a
    spectral measure's exact moments."""
    letter = letter_x(family, index)
    out = MomentTable(layout, "x", m, layout.R)
    for k in range(1, m + 1):
        out.values[(letter,) * k] = complex(mu.moment(k))
    return out


# ---------------------------------------------------------------------------
# free cumulants


def free_cumulants(moments: Sequence[float | complex], m: int | None = None) -> list[complex]:
    """Free cumulants (kappa_1, ..., kappa_m) from raw moments
    (m_1, ..., m_m) by inverting the moment-cumulant recursion

        m_n = sum_s kappa_s * sum_{i_1+...+i_s = n-s} m_{i_1} ... m_{i_s}.
    """
    if m is None:
        m = len(moments)
    mom = [1.0 + 0.0j] + [complex(v) for v in moments[:m]]
    kappa: list[complex] = []

    def comp_sum(s: int, total: int) -> complex:
        # sum over compositions (i_1,...,i_s) of `total` with parts >= 0
        # of products of moments
        if s == 0:
            return 1.0 + 0.0j if total == 0 else 0.0 + 0.0j
        acc = 0.0 + 0.0j
        for first in range(total + 1):
            acc += mom[first] * comp_sum(s - 1, total - first)
        return acc

    for n in range(1, m + 1):
        rest = sum(kappa[s - 1] * comp_sum(s, n - s) for s in range(1, n))
        kappa.append(mom[n] - rest)
    return kappa


def moments_from_cumulants(kappa: Sequence[float | complex], m: int | None = None) -> list[complex]:
    """Inverse of free_cumulants: rebuild raw moments from cumulants."""
    if m is None:
        m = len(kappa)
    kap = [complex(v) for v in kappa[:m]]
    mom = [1.0 + 0.0j]

    def comp_sum(s: int, total: int) -> complex:
        if s == 0:
            return 1.0 + 0.0j if total == 0 else 0.0 + 0.0j
        acc = 0.0 + 0.0j
        for first in range(total + 1):
            acc += mom[first] * comp_sum(s - 1, total - first)
        return acc

    for n in range(1, m + 1):
        mom.append(sum(kap[s - 1] * comp_sum(s, n - s) for s in range(1, n + 1)))
    return mom[1:]


# ---------------------------------------------------------------------------
# mixtures and distances


def mixture(tables: Sequence[MomentTable], weights: Sequence[float]) -> MomentTable:
    if len(tables) != len(weights):
        raise ValueError("one weight per table")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    first = tables[0]
    for t in tables[1:]:
        if t.layout != first.layout or t.alphabet != first.alphabet or t.m != first.m:
            raise ValueError("tables must share layout, alphabet, and degree")
    out = MomentTable(first.layout, first.alphabet, first.m, first.R)
    keys = set()
    for t in tables:
        keys.update(t.values)
    for key in keys:
        out.values[key] = sum(w * t.get(key) for t, w in zip(tables, weights))
    return out


def moment_distance(t1: MomentTable, t2: MomentTable, m: int) -> float:
    """Uniform deviation over all words of length <= m present in either
    table (missing entries count via the other table's lookup)."""
    keys = {w for w in t1.values if len(w) <= m} | {w for w in t2.values if len(w) <= m}
    return max((abs(t1.get(w) - t2.get(w)) for w in keys), default=0.0)


# ---------------------------------------------------------------------------
# single-variable free entropy


_CHI_CONST = 0.75 + 0.5 * math.log(2.0 * math.pi)


@functools.lru_cache(maxsize=64)
def _log_energy_quantile(mu: SpectralMeasure, grid_size: int = 4096) -> float:
    # double integral of log|s - t| in quantile coordinates; the quantile
    # is tabulated once and interpolated so the quadrature stays cheap
    pg = np.linspace(0.0, 1.0, grid_size + 1)
    qg = np.array([mu.quantile(p) for p in pg])

    def Q(p):
        return np.interp(p, pg, qg)

    def inner(p):
        qp = Q(p)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            val, _ = quad(
                lambda q: math.log(abs(Q(q) - qp)) if Q(q) != qp else -60.0,
                0.0,
                1.0,
                points=[p],
                limit=100,
                epsabs=1e-7,
                epsrel=1e-7,
            )
        return val

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(inner, 0.0, 1.0, limit=100, epsabs=1e-6, epsrel=1e-6)
    return val


def chi_single(mu: SpectralMeasure) -> float:
    """Single-variable free entropy

        chi(mu) = double integral of log|s - t| + 3/4 + (1/2) log(2 pi).

    Measures with atoms have divergent self-energy and return -inf.  For
    empirical samples the off-diagonal pairwise estimator is used, which
    targets the entropy of the underlying continuous law.
    """
    if mu.kind in ("bernoulli", "atomic"):
        return -math.inf
    if mu.kind == "empirical":
        lam = np.asarray(mu.params, dtype=float)
        M = len(lam)
        if M < 2:
            return -math.inf
        diff = np.abs(lam[:, None] - lam[None, :])
        off = diff[~np.eye(M, dtype=bool)]
        if np.any(off == 0.0):
            return -math.inf
        return float(np.mean(np.log(off))) + _CHI_CONST
    return _log_energy_quantile(mu) + _CHI_CONST
