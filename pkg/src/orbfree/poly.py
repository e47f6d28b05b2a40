"""Non-commutative *-polynomials over a mixed alphabet.

Generators come in four kinds: self-adjoint letters ``x[i,j]``, unitary
letters ``u[i]`` with adjoints ``u'[i]``, and self-adjoint letters
``z[i,j]``.  Words are stored in reduced normal form: the only rewriting
rules are the unit relations u[i]u'[i] = u'[i]u[i] = 1.  Coefficients are
exact rational complex numbers so that all symbolic identities can be
checked with tolerance zero; conversion to ``complex`` happens only at
numeric evaluation time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

__all__ = [
    "QC",
    "FamilyLayout",
    "Letter",
    "Word",
    "NCPoly",
    "TensorNCPoly",
    "ParseError",
    "parse",
    "format_poly",
    "derive_unitary",
    "derive_fdq",
    "derive_liberation",
    "contract_theta",
    "contract_theta_bar",
    "cyclic_gradient",
    "substitute_x",
    "unsubstitute_x",
    "liberation_gradient",
    "norm_bound",
]


# ---------------------------------------------------------------------------
# exact rational-complex coefficients


@dataclass(frozen=True)
class QC:
    """Complex number with exact rational real and imaginary parts."""

    re: Fraction
    im: Fraction

    @staticmethod
    def of(value) -> "QC":
        if isinstance(value, QC):
            return value
        if isinstance(value, complex):
            return QC(Fraction(value.real), Fraction(value.imag))
        return QC(Fraction(value), Fraction(0))

    def __add__(self, other: "QC") -> "QC":
        return QC(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "QC") -> "QC":
        return QC(self.re - other.re, self.im - other.im)

    def __mul__(self, other: "QC") -> "QC":
        return QC(
            self.re * other.re - self.im * other.im,
            self.re * other.im + self.im * other.re,
        )

    def __neg__(self) -> "QC":
        return QC(-self.re, -self.im)

    def conjugate(self) -> "QC":
        return QC(self.re, -self.im)

    @property
    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def __complex__(self) -> complex:
        return complex(self.re) + 1j * complex(self.im)

    def __abs__(self) -> float:
        return abs(complex(self))


QC_ZERO = QC(Fraction(0), Fraction(0))
QC_ONE = QC(Fraction(1), Fraction(0))


# ---------------------------------------------------------------------------
# layout, letters, words


@dataclass(frozen=True)
class FamilyLayout:
    """Family structure: ``n`` families, family ``i`` holds ``r[i-1]``
    self-adjoint letters; ``R`` is the operator-norm cutoff, ``S`` an
    optional secondary cutoff for derived variables."""

    n: int
    r: tuple[int, ...]
    R: float
    S: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one family")
        if len(self.r) != self.n or any(ri < 1 for ri in self.r):
            raise ValueError("per-family sizes must be >= 1, one per family")
        if self.R <= 0:
            raise ValueError("cutoff R must be positive")
        if self.S is not None and self.S <= 0:
            raise ValueError("cutoff S must be positive")

    def check_family(self, i: int) -> None:
        if not 1 <= i <= self.n:
            raise ValueError(f"family index {i} out of range 1..{self.n}")

    def check_xz(self, i: int, j: int) -> None:
        self.check_family(i)
        if not 1 <= j <= self.r[i - 1]:
            raise ValueError(
                f"letter index {j} out of range 1..{self.r[i - 1]} in family {i}"
            )


# A letter is (kind, i, j); kind in {"x", "z", "u", "U"} where "U" = u*.
Letter = tuple[str, int, int]
Word = tuple[Letter, ...]

_KIND_ORDER = {"x": 0, "z": 1, "u": 2, "U": 3}


def letter_x(i: int, j: int) -> Letter:
    return ("x", i, j)


def letter_z(i: int, j: int) -> Letter:
    return ("z", i, j)


def letter_u(i: int) -> Letter:
    return ("u", i, 0)


def letter_ustar(i: int) -> Letter:
    return ("U", i, 0)


def adjoint_letter(l: Letter) -> Letter:
    kind, i, j = l
    if kind == "u":
        return ("U", i, j)
    if kind == "U":
        return ("u", i, j)
    return l


def _cancels(a: Letter, b: Letter) -> bool:
    return (
        a[1] == b[1]
        and ((a[0] == "u" and b[0] == "U") or (a[0] == "U" and b[0] == "u"))
    )


def reduce_word(letters: Iterable[Letter]) -> Word:
    """Apply the unitary unit relations until no adjacent pair cancels."""
    out: list[Letter] = []
    for l in letters:
        if out and _cancels(out[-1], l):
            out.pop()
        else:
            out.append(l)
    return tuple(out)


def adjoint_word(w: Word) -> Word:
    return tuple(adjoint_letter(l) for l in reversed(w))


def word_sort_key(w: Word):
    return (len(w), tuple((_KIND_ORDER[k], i, j) for (k, i, j) in w))


def word_alphabet(w: Word) -> set[str]:
    return {l[0] for l in w}


def xz_letter_count(w: Word) -> int:
    return sum(1 for l in w if l[0] in ("x", "z"))


# ---------------------------------------------------------------------------
# polynomials


class NCPoly:
    """Finite linear combination of reduced words with exact coefficients."""

    __slots__ = ("layout", "terms")

    def __init__(self, layout: FamilyLayout, terms: dict[Word, QC] | None = None):
        self.layout = layout
        self.terms: dict[Word, QC] = {}
        if terms:
            for w, c in terms.items():
                if not c.is_zero:
                    self.terms[w] = c

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(layout: FamilyLayout) -> "NCPoly":
        return NCPoly(layout)

    @staticmethod
    def one(layout: FamilyLayout) -> "NCPoly":
        return NCPoly(layout, {(): QC_ONE})

    @staticmethod
    def monomial(layout: FamilyLayout, letters: Iterable[Letter], coeff=1) -> "NCPoly":
        w = reduce_word(letters)
        for kind, i, j in w:
            if kind in ("x", "z"):
                layout.check_xz(i, j)
            else:
                layout.check_family(i)
        return NCPoly(layout, {w: QC.of(coeff)})

    @staticmethod
    def x(layout: FamilyLayout, i: int, j: int) -> "NCPoly":
        return NCPoly.monomial(layout, [letter_x(i, j)])

    @staticmethod
    def z(layout: FamilyLayout, i: int, j: int) -> "NCPoly":
        return NCPoly.monomial(layout, [letter_z(i, j)])

    @staticmethod
    def u(layout: FamilyLayout, i: int) -> "NCPoly":
        return NCPoly.monomial(layout, [letter_u(i)])

    @staticmethod
    def ustar(layout: FamilyLayout, i: int) -> "NCPoly":
        return NCPoly.monomial(layout, [letter_ustar(i)])

    # -- ring structure ----------------------------------------------------

    def _check_layout(self, other: "NCPoly") -> None:
        if self.layout != other.layout:
            raise ValueError("operands come from different family layouts")

    def __add__(self, other: "NCPoly") -> "NCPoly":
        self._check_layout(other)
        terms = dict(self.terms)
        for w, c in other.terms.items():
            s = terms.get(w, QC_ZERO) + c
            if s.is_zero:
                terms.pop(w, None)
            else:
                terms[w] = s
        return NCPoly(self.layout, terms)

    def __sub__(self, other: "NCPoly") -> "NCPoly":
        return self + (-other)

    def __neg__(self) -> "NCPoly":
        return NCPoly(self.layout, {w: -c for w, c in self.terms.items()})

    def scale(self, scalar) -> "NCPoly":
        s = QC.of(scalar)
        if s.is_zero:
            return NCPoly(self.layout)
        return NCPoly(self.layout, {w: c * s for w, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, NCPoly):
            self._check_layout(other)
            terms: dict[Word, QC] = {}
            for w1, c1 in self.terms.items():
                for w2, c2 in other.terms.items():
                    w = reduce_word(w1 + w2)
                    c = c1 * c2
                    s = terms.get(w, QC_ZERO) + c
                    if s.is_zero:
                        terms.pop(w, None)
                    else:
                        terms[w] = s
            return NCPoly(self.layout, terms)
        return self.scale(other)

    def __rmul__(self, scalar) -> "NCPoly":
        return self.scale(scalar)

    def adjoint(self) -> "NCPoly":
        return NCPoly(
            self.layout,
            {adjoint_word(w): c.conjugate() for w, c in self.terms.items()},
        )

    # -- queries -----------------------------------------------------------

    @property
    def degree(self) -> int:
        return max((len(w) for w in self.terms), default=0)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def is_selfadjoint(self) -> bool:
        return self == self.adjoint()

    def coefficient(self, w: Word) -> QC:
        return self.terms.get(w, QC_ZERO)

    def alphabet(self) -> set[str]:
        out: set[str] = set()
        for w in self.terms:
            out |= word_alphabet(w)
        return out

    def words(self) -> Iterator[Word]:
        return iter(self.terms)

    def __eq__(self, other) -> bool:
        return isinstance(other, NCPoly) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __repr__(self) -> str:
        return f"NCPoly({format_poly(self)})"


def norm_bound(p: NCPoly, R: float | None = None) -> float:
    """Upper bound for the universal C*-norm: sum of |coefficient| times
    R to the number of self-adjoint letters (unitary letters count 1)."""
    if R is None:
        R = p.layout.R
    if R <= 0:
        raise ValueError("cutoff must be positive")
    return sum(abs(c) * R ** xz_letter_count(w) for w, c in p.terms.items())


# ---------------------------------------------------------------------------
# tensors


class TensorNCPoly:
    """Element of the algebraic tensor square, stored as a map from word
    pairs to coefficients (fully expanded canonical form)."""

    __slots__ = ("layout", "terms")

    def __init__(
        self,
        layout: FamilyLayout,
        terms: dict[tuple[Word, Word], QC] | None = None,
    ):
        self.layout = layout
        self.terms: dict[tuple[Word, Word], QC] = {}
        if terms:
            for k, c in terms.items():
                if not c.is_zero:
                    self.terms[k] = c

    @staticmethod
    def zero(layout: FamilyLayout) -> "TensorNCPoly":
        return TensorNCPoly(layout)

    @staticmethod
    def of_pair(a: NCPoly, b: NCPoly) -> "TensorNCPoly":
        if a.layout != b.layout:
            raise ValueError("tensor factors come from different layouts")
        terms: dict[tuple[Word, Word], QC] = {}
        for wa, ca in a.terms.items():
            for wb, cb in b.terms.items():
                key = (wa, wb)
                s = terms.get(key, QC_ZERO) + ca * cb
                if s.is_zero:
                    terms.pop(key, None)
                else:
                    terms[key] = s
        return TensorNCPoly(a.layout, terms)

    def _check_layout(self, other) -> None:
        if self.layout != other.layout:
            raise ValueError("operands come from different family layouts")

    def __add__(self, other: "TensorNCPoly") -> "TensorNCPoly":
        self._check_layout(other)
        terms = dict(self.terms)
        for k, c in other.terms.items():
            s = terms.get(k, QC_ZERO) + c
            if s.is_zero:
                terms.pop(k, None)
            else:
                terms[k] = s
        return TensorNCPoly(self.layout, terms)

    def __sub__(self, other: "TensorNCPoly") -> "TensorNCPoly":
        return self + (-other)

    def __neg__(self) -> "TensorNCPoly":
        return TensorNCPoly(self.layout, {k: -c for k, c in self.terms.items()})

    def scale(self, scalar) -> "TensorNCPoly":
        s = QC.of(scalar)
        return TensorNCPoly(self.layout, {k: c * s for k, c in self.terms.items()})

    def __mul__(self, other: "TensorNCPoly") -> "TensorNCPoly":
        """Factorwise product: (a x b)(c x d) = ac x bd."""
        self._check_layout(other)
        terms: dict[tuple[Word, Word], QC] = {}
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                key = (reduce_word(a1 + a2), reduce_word(b1 + b2))
                s = terms.get(key, QC_ZERO) + c1 * c2
                if s.is_zero:
                    terms.pop(key, None)
                else:
                    terms[key] = s
        return TensorNCPoly(self.layout, terms)

    def adjoint(self) -> "TensorNCPoly":
        return TensorNCPoly(
            self.layout,
            {
                (adjoint_word(a), adjoint_word(b)): c.conjugate()
                for (a, b), c in self.terms.items()
            },
        )

    def left(self) -> list[tuple[Word, Word, QC]]:
        return [(a, b, c) for (a, b), c in self.terms.items()]

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other) -> bool:
        return isinstance(other, TensorNCPoly) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __repr__(self) -> str:
        parts = []
        for (a, b), c in sorted(
            self.terms.items(), key=lambda kv: (word_sort_key(kv[0][0]), word_sort_key(kv[0][1]))
        ):
            parts.append(f"({_format_coeff(c)})*{_format_word(a)}(x){_format_word(b)}")
        return "TensorNCPoly(" + " + ".join(parts) + ")" if parts else "TensorNCPoly(0)"


def _tensor_from_terms(layout, items: Iterable[tuple[Word, Word, QC]]) -> TensorNCPoly:
    terms: dict[tuple[Word, Word], QC] = {}
    for a, b, c in items:
        key = (reduce_word(a), reduce_word(b))
        s = terms.get(key, QC_ZERO) + c
        if s.is_zero:
            terms.pop(key, None)
        else:
            terms[key] = s
    return TensorNCPoly(layout, terms)


# ---------------------------------------------------------------------------
# derivations


def derive_unitary(i: int, p: NCPoly) -> TensorNCPoly:
    """Derivation in the i-th unitary: u_i -> u_i (x) 1,
    u_i* -> -1 (x) u_i*, zero on the z-letters."""
    p.layout.check_family(i)
    if "x" in p.alphabet():
        raise ValueError("unitary derivation acts on the (u, z) alphabet")
    items: list[tuple[Word, Word, QC]] = []
    for w, c in p.terms.items():
        for k, l in enumerate(w):
            kind, fam, _ = l
            if fam != i:
                continue
            if kind == "u":
                items.append((w[: k + 1], w[k + 1 :], c))
            elif kind == "U":
                items.append((w[:k], w[k:], -c))
    return _tensor_from_terms(p.layout, items)


def derive_fdq(i: int, j: int, p: NCPoly) -> TensorNCPoly:
    """Free difference quotient in the letter x[i,j]: a word a x[i,j] b
    contributes a (x) b."""
    p.layout.check_xz(i, j)
    alpha = p.alphabet()
    if alpha - {"x"}:
        raise ValueError("free difference quotient acts on the x alphabet")
    target = letter_x(i, j)
    items = []
    for w, c in p.terms.items():
        for k, l in enumerate(w):
            if l == target:
                items.append((w[:k], w[k + 1 :], c))
    return _tensor_from_terms(p.layout, items)


def derive_liberation(i: int, p: NCPoly) -> TensorNCPoly:
    """Liberation derivation on x-polynomials, computed by substituting
    x -> u z u*, applying the unitary derivation, and sandwiching with
    -(1 (x) u_i)(-)(u_i* (x) 1).  The result is re-expressed in x-letters
    (this is always possible; asserted)."""
    p.layout.check_family(i)
    if p.alphabet() - {"x"}:
        raise ValueError("liberation derivation acts on the x alphabet")
    sub = substitute_x(p)
    d = derive_unitary(i, sub)
    ui = (letter_u(i),)
    ustar = (letter_ustar(i),)
    items = []
    for (a, b), c in d.terms.items():
        items.append((a + ustar, ui + b, -c))
    sandwiched = _tensor_from_terms(p.layout, items)
    # every tensor leg lies in the image of the substitution
    back: dict[tuple[Word, Word], QC] = {}
    for (a, b), c in sandwiched.terms.items():
        back[(unsubstitute_x_word(a, p.layout), unsubstitute_x_word(b, p.layout))] = c
    return TensorNCPoly(p.layout, back)


def contract_theta(t: TensorNCPoly) -> NCPoly:
    """Multiply tensor legs in reverse order: a (x) b -> ba."""
    out = NCPoly.zero(t.layout)
    terms: dict[Word, QC] = {}
    for (a, b), c in t.terms.items():
        w = reduce_word(b + a)
        s = terms.get(w, QC_ZERO) + c
        if s.is_zero:
            terms.pop(w, None)
        else:
            terms[w] = s
    out.terms = terms
    return out


# Kept as a separate name to mirror the two contraction symbols in use;
# the formula is identical.
contract_theta_bar = contract_theta


def cyclic_gradient(i: int, p: NCPoly) -> NCPoly:
    """Cyclic gradient in the i-th unitary: theta composed with the
    unitary derivation."""
    return contract_theta(derive_unitary(i, p))


def substitute_x(p: NCPoly) -> NCPoly:
    """*-homomorphism x[i,j] -> u[i] z[i,j] u'[i]."""
    if p.alphabet() - {"x"}:
        raise ValueError("substitution acts on the x alphabet")
    terms: dict[Word, QC] = {}
    for w, c in p.terms.items():
        letters: list[Letter] = []
        for kind, i, j in w:
            letters += [letter_u(i), letter_z(i, j), letter_ustar(i)]
        rw = reduce_word(letters)
        s = terms.get(rw, QC_ZERO) + c
        if s.is_zero:
            terms.pop(rw, None)
        else:
            terms[rw] = s
    return NCPoly(p.layout, terms)


def unsubstitute_x_word(w: Word, layout: FamilyLayout) -> Word:
    """Inverse of the substitution on reduced (u, z)-words of the form
    u_i z.. z u_i* u_k z.. z u_k* ...; raises if the word is not in the
    image."""
    out: list[Letter] = []
    pos = 0
    m = len(w)
    while pos < m:
        kind, i, _ = w[pos]
        if kind != "u":
            raise ValueError(f"word not in the substitution image: {w}")
        pos += 1
        nz = 0
        while pos < m and w[pos][0] == "z" and w[pos][1] == i:
            out.append(letter_x(i, w[pos][2]))
            nz += 1
            pos += 1
        if nz == 0 or pos >= m or w[pos] != letter_ustar(i):
            raise ValueError(f"word not in the substitution image: {w}")
        pos += 1
    return tuple(out)


def unsubstitute_x(p: NCPoly) -> NCPoly:
    terms = {unsubstitute_x_word(w, p.layout): c for w, c in p.terms.items()}
    return NCPoly(p.layout, terms)


def liberation_gradient(i: int, h: NCPoly) -> NCPoly:
    """Liberation gradient of a self-adjoint x-polynomial: the element
    -u_i (D_i h(u z u*)) u_i* implementing the contracted liberation
    derivation; the agreement of the two routes is asserted exactly."""
    if not h.is_selfadjoint():
        raise ValueError("liberation gradient requires a self-adjoint input")
    sub = substitute_x(h)
    grad = -(NCPoly.u(h.layout, i) * cyclic_gradient(i, sub) * NCPoly.ustar(h.layout, i))
    via_derivation = substitute_x(contract_theta_bar(derive_liberation(i, h)))
    assert grad == via_derivation, "liberation gradient routes disagree"
    return grad


# ---------------------------------------------------------------------------
# parsing and printing


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_TOKEN_RE = re.compile(
    r"""
    (?P<uprime>u'\[)
  | (?P<gen>[xzu]\[)
  | (?P<num>\d+(?:\.\d+)?(?:/\d+)?)
  | (?P<op>[-+*^(),\[\]i])
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _fraction(text: str) -> Fraction:
    if "/" in text:
        num, den = text.split("/")
        return Fraction(Fraction(num), Fraction(den))
    return Fraction(text)


class _Parser:
    def __init__(self, text: str, layout: FamilyLayout):
        self.tokens = _tokenize(text)
        self.layout = layout
        self.k = 0

    def peek(self):
        return self.tokens[self.k]

    def next(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.next()
        if text != value:
            raise ParseError(f"expected {value!r}, found {text!r}", pos)

    def parse_poly(self) -> NCPoly:
        sign = 1
        if self.peek()[1] in ("+", "-"):
            sign = -1 if self.next()[1] == "-" else 1
        acc = self.parse_term().scale(sign)
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            t = self.parse_term()
            acc = acc + (t if op == "+" else -t)
        return acc

    def parse_term(self) -> NCPoly:
        acc = self.parse_coeff_or_factor()
        while self.peek()[1] == "*":
            self.next()
            acc = acc * self.parse_factor()
        return acc

    def parse_coeff_or_factor(self) -> NCPoly:
        kind, text, pos = self.peek()
        if kind == "num":
            self.next()
            return NCPoly.one(self.layout).scale(QC(_fraction(text), Fraction(0)))
        if text == "(" and self._looks_like_complex():
            return NCPoly.one(self.layout).scale(self.parse_complex())
        return self.parse_factor()

    def _looks_like_complex(self) -> bool:
        # "(" num ("+"|"-") num "i" ")"
        save = self.k
        try:
            if self.tokens[save][1] != "(":
                return False
            j = save + 1
            if self.tokens[j][1] in ("+", "-"):
                j += 1
            if self.tokens[j][0] != "num":
                return False
            j += 1
            if self.tokens[j][1] not in ("+", "-"):
                return False
            j += 1
            if self.tokens[j][0] != "num":
                return False
            j += 1
            return self.tokens[j][1] == "i" and self.tokens[j + 1][1] == ")"
        except IndexError:
            return False

    def parse_complex(self) -> QC:
        self.expect("(")
        sign = 1
        if self.peek()[1] in ("+", "-"):
            sign = -1 if self.next()[1] == "-" else 1
        re_part = _fraction(self.next()[1]) * sign
        op = self.next()[1]
        im_sign = -1 if op == "-" else 1
        im_part = _fraction(self.next()[1]) * im_sign
        self.expect("i")
        self.expect(")")
        return QC(re_part, im_part)

    def parse_factor(self) -> NCPoly:
        base = self.parse_atom()
        if self.peek()[1] == "^":
            self.next()
            kind, text, pos = self.next()
            if kind != "num" or not text.isdigit():
                raise ParseError("exponent must be a nonnegative integer", pos)
            e = int(text)
            acc = NCPoly.one(self.layout)
            for _ in range(e):
                acc = acc * base
            return acc
        return base

    def parse_atom(self) -> NCPoly:
        kind, text, pos = self.next()
        if text == "(":
            inner = self.parse_poly()
            self.expect(")")
            return inner
        if kind == "gen":
            gen = text[0]
            i = self._index(pos)
            if gen == "u":
                self.layout.check_family(i)
                self.expect("]")
                return NCPoly.u(self.layout, i)
            self.expect(",")
            j = self._index(pos)
            self.expect("]")
            try:
                self.layout.check_xz(i, j)
            except ValueError as exc:
                raise ParseError(str(exc), pos) from None
            if gen == "x":
                return NCPoly.x(self.layout, i, j)
            return NCPoly.z(self.layout, i, j)
        if kind == "uprime":
            i = self._index(pos)
            self.expect("]")
            try:
                self.layout.check_family(i)
            except ValueError as exc:
                raise ParseError(str(exc), pos) from None
            return NCPoly.ustar(self.layout, i)
        raise ParseError(f"unexpected token {text!r}", pos)

    def _index(self, pos: int) -> int:
        kind, text, tpos = self.next()
        if kind != "num" or not text.isdigit():
            raise ParseError("expected an integer index", tpos)
        i = int(text)
        try:
            self.layout.check_family  # noqa: B018 - bounds checked by caller
        except ValueError as exc:
            raise ParseError(str(exc), tpos) from None
        return i


def parse(text: str, layout: FamilyLayout) -> NCPoly:
    """Parse a polynomial in the text grammar; raises ParseError with the
    offending position on malformed input."""
    p = _Parser(text, layout)
    poly = p.parse_poly()
    kind, text_, pos = p.peek()
    if kind != "end":
        raise ParseError(f"trailing input {text_!r}", pos)
    return poly


def _format_number(f: Fraction) -> str:
    if f.denominator == 1:
        return str(f.numerator)
    return f"{f.numerator}/{f.denominator}"


def _format_coeff(c: QC) -> str:
    if c.im == 0:
        return _format_number(c.re)
    sign = "+" if c.im >= 0 else "-"
    return f"({_format_number(c.re)}{sign}{_format_number(abs(c.im))}i)"


def _format_letter(l: Letter) -> str:
    kind, i, j = l
    if kind == "u":
        return f"u[{i}]"
    if kind == "U":
        return f"u'[{i}]"
    return f"{kind}[{i},{j}]"


def _format_word(w: Word) -> str:
    if not w:
        return "1"
    parts = []
    k = 0
    while k < len(w):
        run = 1
        while k + run < len(w) and w[k + run] == w[k]:
            run += 1
        s = _format_letter(w[k])
        parts.append(s if run == 1 else f"{s}^{run}")
        k += run
    return "*".join(parts)


def format_poly(p: NCPoly) -> str:
    """Deterministic text form; parse(format_poly(p)) == p."""
    if p.is_zero:
        return "0"
    parts = []
    for w in sorted(p.terms, key=word_sort_key):
        c = p.terms[w]
        body = _format_word(w)
        if not w:
            if c.im == 0 and c.re < 0:
                parts.append(("-", _format_coeff(-c)))
            else:
                parts.append(("+", _format_coeff(c)))
            continue
        if c == QC_ONE:
            text = body
        elif c.im == 0 and c.re < 0:
            parts.append(("-", f"{_format_coeff(-c)}*{body}"))
            continue
        else:
            text = f"{_format_coeff(c)}*{body}"
        parts.append(("+", text))
    first_sign, first = parts[0]
    out = (first if first_sign == "+" else "0 - " + first)
    for sign, text in parts[1:]:
        out += f" {sign} {text}"
    return out
