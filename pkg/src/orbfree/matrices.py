"""Dense complex matrix numerics: Haar/GUE sampling, quantile microstates,
spectral clipping, and evaluation of polynomials on matrix tuples."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .poly import FamilyLayout, NCPoly, TensorNCPoly, Word

__all__ = [
    "MatrixTuple",
    "SpectralMeasure",
    "haar_unitary",
    "gue",
    "quantile_microstate",
    "spectral_clip",
    "spectral_reflect",
    "evaluate",
    "trace_evaluate",
    "double_trace_evaluate",
    "evaluate_word",
    "trace_word",
]

_HERMITICITY_TOL = 1e-12
_UNITARITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# matrix tuples


@dataclass
class MatrixTuple:
    """Family-indexed tuple of dense complex N x N matrices.

    ``sa`` maps (family, index) to a Hermitian matrix filling the x or z
    slots; ``unitaries`` maps family to a unitary filling the u slot.
    Matrices are validated on construction and must not be mutated.
    """

    layout: FamilyLayout
    N: int
    sa: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    unitaries: dict[int, np.ndarray] = field(default_factory=dict)
    check_norm: bool = True

    def __post_init__(self):
        for (i, j), a in self.sa.items():
            self.layout.check_xz(i, j)
            a = np.asarray(a, dtype=complex)
            if a.shape != (self.N, self.N):
                raise ValueError(f"matrix ({i},{j}) has shape {a.shape}, want {(self.N, self.N)}")
            if np.max(np.abs(a - a.conj().T)) > _HERMITICITY_TOL * max(1.0, np.max(np.abs(a))):
                raise ValueError(f"matrix ({i},{j}) is not Hermitian")
            if self.check_norm:
                nrm = np.linalg.norm(a, 2)
                if nrm > self.layout.R + 1e-9:
                    raise ValueError(
                        f"matrix ({i},{j}) has operator norm {nrm:.6g} > cutoff {self.layout.R}"
                    )
            self.sa[(i, j)] = a
        for i, v in self.unitaries.items():
            self.layout.check_family(i)
            v = np.asarray(v, dtype=complex)
            if v.shape != (self.N, self.N):
                raise ValueError(f"unitary {i} has shape {v.shape}, want {(self.N, self.N)}")
            if np.max(np.abs(v.conj().T @ v - np.eye(self.N))) > _UNITARITY_TOL:
                raise ValueError(f"matrix {i} is not unitary")
            self.unitaries[i] = v

    @staticmethod
    def from_families(
        layout: FamilyLayout, families: Sequence[Sequence[np.ndarray]], check_norm: bool = True
    ) -> "MatrixTuple":
        """Build from one list of Hermitian matrices per family."""
        sa = {}
        N = None
        for i, fam in enumerate(families, start=1):
            for j, a in enumerate(fam, start=1):
                a = np.asarray(a, dtype=complex)
                N = a.shape[0] if N is None else N
                sa[(i, j)] = a
        if N is None:
            raise ValueError("no matrices given")
        return MatrixTuple(layout, N, sa=sa, check_norm=check_norm)

    def conjugated(self, unitaries: Sequence[np.ndarray]) -> "MatrixTuple":
        """Replace each family's matrices A_ij by V_i A_ij V_i*."""
        if len(unitaries) != self.layout.n:
            raise ValueError("need one unitary per family")
        sa = {}
        for (i, j), a in self.sa.items():
            v = unitaries[i - 1]
            sa[(i, j)] = v @ a @ v.conj().T
        out = MatrixTuple.__new__(MatrixTuple)
        out.layout = self.layout
        out.N = self.N
        out.sa = sa
        out.unitaries = dict(self.unitaries)
        out.check_norm = self.check_norm
        return out

    def with_unitaries(self, unitaries: Sequence[np.ndarray]) -> "MatrixTuple":
        out = MatrixTuple.__new__(MatrixTuple)
        out.layout = self.layout
        out.N = self.N
        out.sa = dict(self.sa)
        out.unitaries = {i + 1: v for i, v in enumerate(unitaries)}
        out.check_norm = self.check_norm
        return out

    def lookup(self, letter) -> np.ndarray:
        kind, i, j = letter
        if kind in ("x", "z"):
            try:
                a = self.sa[(i, j)]
            except KeyError:
                raise ValueError(f"tuple has no self-adjoint slot ({i},{j})") from None
            if kind == "x" and i in self.unitaries:
                # respect the relation x = u z u' whenever the tuple
                # carries a unitary for the family
                v = self.unitaries[i]
                return v @ a @ v.conj().T
            return a
        if kind == "u":
            try:
                return self.unitaries[i]
            except KeyError:
                raise ValueError(f"tuple has no unitary slot {i}") from None
        return self.unitaries[i].conj().T

    # -- serialization (column-major complex pairs in a JSON envelope) -----

    def to_json(self) -> dict:
        families = []
        for i in range(1, self.layout.n + 1):
            fam = []
            for j in range(1, self.layout.r[i - 1] + 1):
                if (i, j) in self.sa:
                    a = self.sa[(i, j)]
                    flat = np.asarray(a, order="F").ravel(order="F")
                    fam.append([[float(v.real), float(v.imag)] for v in flat])
            families.append(fam)
        return {"n": self.layout.n, "N": self.N, "families": families}

    @staticmethod
    def from_json(data: dict, layout: FamilyLayout) -> "MatrixTuple":
        N = int(data["N"])
        sa = {}
        for i, fam in enumerate(data["families"], start=1):
            for j, flat in enumerate(fam, start=1):
                vals = np.array([complex(re, im) for re, im in flat])
                sa[(i, j)] = vals.reshape((N, N), order="F")
        return MatrixTuple(layout, N, sa=sa)


# ---------------------------------------------------------------------------
# spectral measures


@dataclass(frozen=True)
class SpectralMeasure:
    """Compactly supported probability measure on the line, given by a
    quantile function.  Kinds: semicircle(radius), bernoulli(a),
    arcsine(a, b), atomic(points/weights), empirical(sorted sample)."""

    kind: str
    params: tuple = ()

    # -- constructors ------------------------------------------------------

    @staticmethod
    def semicircle(radius: float) -> "SpectralMeasure":
        if radius <= 0:
            raise ValueError("radius must be positive")
        return SpectralMeasure("semicircle", (float(radius),))

    @staticmethod
    def bernoulli(a: float) -> "SpectralMeasure":
        return SpectralMeasure("bernoulli", (float(a),))

    @staticmethod
    def arcsine(a: float, b: float) -> "SpectralMeasure":
        if b <= a:
            raise ValueError("need a < b")
        return SpectralMeasure("arcsine", (float(a), float(b)))

    @staticmethod
    def atomic(atoms: Sequence[tuple[float, float]]) -> "SpectralMeasure":
        total = sum(w for _, w in atoms)
        if abs(total - 1.0) > 1e-12 or any(w < 0 for _, w in atoms):
            raise ValueError("atom weights must be nonnegative and sum to 1")
        return SpectralMeasure("atomic", tuple((float(p), float(w)) for p, w in atoms))

    @staticmethod
    def empirical(sample: Sequence[float]) -> "SpectralMeasure":
        return SpectralMeasure("empirical", tuple(sorted(float(s) for s in sample)))

    @staticmethod
    def from_string(spec: str) -> "SpectralMeasure":
        """Parse spec strings like "semicircle:2", "bernoulli:1",
        "atomic:0.5@-1,0.5@1", "arcsine:-1,1"."""
        kind, _, rest = spec.partition(":")
        kind = kind.strip()
        if kind == "semicircle":
            return SpectralMeasure.semicircle(float(rest))
        if kind == "bernoulli":
            return SpectralMeasure.bernoulli(float(rest))
        if kind == "arcsine":
            a, b = (float(v) for v in rest.split(","))
            return SpectralMeasure.arcsine(a, b)
        if kind == "atomic":
            atoms = []
            for part in rest.split(","):
                w, _, p = part.partition("@")
                atoms.append((float(p), float(w)))
            return SpectralMeasure.atomic(atoms)
        raise ValueError(f"unknown measure spec {spec!r}")

    # -- support and quantiles ---------------------------------------------

    @property
    def support_radius(self) -> float:
        if self.kind == "semicircle":
            return self.params[0]
        if self.kind == "bernoulli":
            return abs(self.params[0])
        if self.kind == "arcsine":
            return max(abs(self.params[0]), abs(self.params[1]))
        if self.kind == "atomic":
            return max(abs(p) for p, _ in self.params)
        return max((abs(v) for v in self.params), default=0.0)

    def quantile(self, q: float) -> float:
        if not 0.0 <= q <= 1.0:
            raise ValueError("quantile argument must lie in [0,1]")
        if self.kind == "semicircle":
            (rad,) = self.params
            # invert the semicircle CDF on [-rad, rad]
            def cdf(x):
                t = x / rad
                return 0.5 + (t * math.sqrt(max(0.0, 1 - t * t)) + math.asin(max(-1.0, min(1.0, t)))) / math.pi

            if q <= 0.0:
                return -rad
            if q >= 1.0:
                return rad
            return brentq(lambda x: cdf(x) - q, -rad, rad, xtol=1e-13)
        if self.kind == "bernoulli":
            (a,) = self.params
            return -abs(a) if q <= 0.5 else abs(a)
        if self.kind == "arcsine":
            a, b = self.params
            return a + (b - a) * math.sin(math.pi * q / 2) ** 2
        if self.kind == "atomic":
            acc = 0.0
            for p, w in sorted(self.params):
                acc += w
                if q <= acc + 1e-15:
                    return p
            return sorted(self.params)[-1][0]
        sample = self.params
        k = min(len(sample) - 1, int(q * len(sample)))
        return sample[k]

    def moment(self, k: int) -> float:
        """k-th raw moment, exact for the named families."""
        if k == 0:
            return 1.0
        if self.kind == "semicircle":
            (rad,) = self.params
            if k % 2:
                return 0.0
            m = k // 2
            catalan = math.comb(2 * m, m) // (m + 1)
            return catalan * (rad / 2.0) ** k
        if self.kind == "bernoulli":
            (a,) = self.params
            return 0.0 if k % 2 else abs(a) ** k
        if self.kind == "arcsine":
            a, b = self.params
            # moments of the arcsine law via quadrature of the quantile
            val, _ = quad(lambda q: self.quantile(q) ** k, 0, 1, limit=200)
            return val
        if self.kind == "atomic":
            return sum(w * p**k for p, w in self.params)
        return float(np.mean(np.asarray(self.params) ** k))

    @property
    def is_atomic(self) -> bool:
        return self.kind in ("bernoulli", "atomic", "empirical")


# ---------------------------------------------------------------------------
# sampling


def haar_unitary(N: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre matrix with
    the R-factor's diagonal phases divided out."""
    if N < 1:
        raise ValueError("dimension must be >= 1")
    z = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def gue(N: int, rng: np.random.Generator) -> np.ndarray:
    """GUE matrix normalized so the spectral law tends to the standard
    semicircle (second moment 1)."""
    if N < 1:
        raise ValueError("dimension must be >= 1")
    a = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return (a + a.conj().T) / (2.0 * math.sqrt(N))


def quantile_microstate(mu: SpectralMeasure, N: int) -> np.ndarray:
    """Deterministic diagonal microstate realizing mu asymptotically:
    diag of quantiles at (k - 1/2)/N."""
    diag = np.array([mu.quantile((k - 0.5) / N) for k in range(1, N + 1)])
    return np.diag(diag.astype(complex))


def spectral_clip(a: np.ndarray, S: float) -> np.ndarray:
    """Clip the spectrum of a Hermitian matrix into [-S, S]."""
    if S <= 0:
        raise ValueError("cutoff must be positive")
    vals, vecs = np.linalg.eigh(a)
    vals = np.clip(vals, -S, S)
    return (vecs * vals) @ vecs.conj().T


def _reflect_scalar(x: float, S: float) -> float:
    # fold the line into [-S, S] by repeated reflection at the endpoints
    period = 4.0 * S
    y = (x + S) % period
    if y < 0:
        y += period
    if y > 2.0 * S:
        y = period - y
    return y - S


def spectral_reflect(a: np.ndarray, S: float) -> np.ndarray:
    """Reflect the spectrum of a Hermitian matrix into [-S, S]; preserves
    Lebesgue measure on eigenvalues, unlike clipping."""
    if S <= 0:
        raise ValueError("cutoff must be positive")
    vals, vecs = np.linalg.eigh(a)
    vals = np.array([_reflect_scalar(v, S) for v in vals])
    return (vecs * vals) @ vecs.conj().T


# ---------------------------------------------------------------------------
# evaluation


def evaluate_word(w: Word, tup: MatrixTuple) -> np.ndarray:
    out = np.eye(tup.N, dtype=complex)
    for letter in w:
        out = out @ tup.lookup(letter)
    return out


def trace_word(w: Word, tup: MatrixTuple) -> complex:
    if not w:
        return 1.0 + 0.0j
    if len(w) == 1:
        return complex(np.trace(tup.lookup(w[0]))) / tup.N
    head = evaluate_word(w[:-1], tup)
    tail = tup.lookup(w[-1])
    return complex(np.sum(head.T * tail)) / tup.N


def evaluate(p: NCPoly, tup: MatrixTuple) -> np.ndarray:
    """Canonical *-homomorphism sending each generator to its slot."""
    out = np.zeros((tup.N, tup.N), dtype=complex)
    for w, c in p.terms.items():
        out += complex(c) * evaluate_word(w, tup)
    return out


def trace_evaluate(p: NCPoly, tup: MatrixTuple) -> complex:
    return sum((complex(c) * trace_word(w, tup) for w, c in p.terms.items()), 0.0 + 0.0j)


def double_trace_evaluate(t: TensorNCPoly, tup: MatrixTuple) -> complex:
    """(tr x tr) of a tensor polynomial: sum of coefficient times product
    of normalized traces of the two legs."""
    cache: dict[Word, complex] = {}

    def tr(w: Word) -> complex:
        if w not in cache:
            cache[w] = trace_word(w, tup)
        return cache[w]

    return sum((complex(c) * tr(a) * tr(b) for (a, b), c in t.terms.items()), 0.0 + 0.0j)
