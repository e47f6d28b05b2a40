import json
import math

import numpy as np
import pytest

from orbfree.matrices import (
    MatrixTuple,
    SpectralMeasure,
    double_trace_evaluate,
    evaluate,
    gue,
    haar_unitary,
    quantile_microstate,
    spectral_clip,
    spectral_reflect,
    trace_evaluate,
)
from orbfree.poly import FamilyLayout, NCPoly, TensorNCPoly, parse

LAYOUT = FamilyLayout(n=2, r=(2, 1), R=2.0)


def make_tuple(rng, N, layout=LAYOUT, with_unitaries=True):
    sa = {}
    for i in range(1, layout.n + 1):
        for j in range(1, layout.r[i - 1] + 1):
            sa[(i, j)] = spectral_clip(gue(N, rng), layout.R)
    unitaries = {}
    if with_unitaries:
        for i in range(1, layout.n + 1):
            unitaries[i] = haar_unitary(N, rng)
    return MatrixTuple(layout, N, sa=sa, unitaries=unitaries)


class TestSampling:
    def test_haar_is_unitary(self):
        rng = np.random.default_rng(0)
        for N in (1, 2, 5, 16):
            v = haar_unitary(N, rng)
            assert np.max(np.abs(v.conj().T @ v - np.eye(N))) < 1e-12

    def test_haar_invariance_two_sample(self):
        # left translation by a fixed unitary should not change the law;
        # compare E|tr V|^2 which equals 1 for Haar measure at any N
        rng = np.random.default_rng(1)
        N, M = 4, 4000
        w = haar_unitary(N, rng)
        plain = np.array([abs(np.trace(haar_unitary(N, rng))) ** 2 for _ in range(M)])
        shifted = np.array([abs(np.trace(w @ haar_unitary(N, rng))) ** 2 for _ in range(M)])
        for sample in (plain, shifted):
            err = abs(sample.mean() - 1.0)
            sigma = sample.std(ddof=1) / math.sqrt(M)
            assert err < 3.5 * sigma + 1e-3

    def test_gue_hermitian_and_normalized(self):
        rng = np.random.default_rng(2)
        N, M = 24, 300
        vals = []
        for _ in range(M):
            h = gue(N, rng)
            assert np.max(np.abs(h - h.conj().T)) < 1e-14
            vals.append(np.trace(h @ h).real / N)
        mean = np.mean(vals)
        sigma = np.std(vals, ddof=1) / math.sqrt(M)
        assert abs(mean - 1.0) < 3.5 * sigma + 1e-3


class TestSpectralMeasure:
    def test_parse_specs(self):
        mu = SpectralMeasure.from_string("semicircle:2")
        assert mu.kind == "semicircle" and mu.params == (2.0,)
        nu = SpectralMeasure.from_string("bernoulli:1")
        assert nu.quantile(0.25) == -1.0 and nu.quantile(0.75) == 1.0
        at = SpectralMeasure.from_string("atomic:0.5@-1,0.5@1")
        assert at.moment(1) == pytest.approx(0.0)
        assert at.moment(2) == pytest.approx(1.0)

    def test_semicircle_moments(self):
        mu = SpectralMeasure.semicircle(2.0)
        # Catalan numbers for the standard semicircle
        assert mu.moment(2) == pytest.approx(1.0)
        assert mu.moment(4) == pytest.approx(2.0)
        assert mu.moment(6) == pytest.approx(5.0)
        assert mu.moment(3) == 0.0

    def test_semicircle_quantile_median(self):
        mu = SpectralMeasure.semicircle(2.0)
        assert mu.quantile(0.5) == pytest.approx(0.0, abs=1e-10)
        assert mu.quantile(0.0) == -2.0
        assert mu.quantile(1.0) == 2.0

    def test_quantile_microstate_moments(self):
        mu = SpectralMeasure.semicircle(2.0)
        xi = quantile_microstate(mu, 400)
        for k in (1, 2, 3, 4):
            got = np.trace(np.linalg.matrix_power(xi, k)).real / 400
            assert got == pytest.approx(mu.moment(k), abs=0.02)

    def test_arcsine_quantile_range(self):
        mu = SpectralMeasure.arcsine(-1.0, 1.0)
        assert mu.quantile(0.0) == -1.0
        assert mu.quantile(1.0) == 1.0
        assert mu.quantile(0.5) == pytest.approx(0.0)
        assert mu.moment(2) == pytest.approx(0.5, abs=1e-8)

    def test_empirical(self):
        mu = SpectralMeasure.empirical([3.0, -1.0, 1.0])
        assert mu.support_radius == 3.0
        assert mu.moment(1) == pytest.approx(1.0)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            SpectralMeasure.from_string("cauchy:1")


class TestClipReflect:
    def test_clip_examples(self):
        a = np.diag([3.0, -0.5, -4.0]).astype(complex)
        c = spectral_clip(a, 2.0)
        assert np.allclose(np.sort(np.linalg.eigvalsh(c)), [-2.0, -0.5, 2.0])

    def test_clip_preserves_inside(self):
        rng = np.random.default_rng(3)
        h = gue(6, rng)
        s = np.linalg.norm(h, 2) + 1.0
        assert np.allclose(spectral_clip(h, s), h)

    def test_reflect_folds(self):
        a = np.diag([2.5, -2.5, 0.3]).astype(complex)
        r = spectral_reflect(a, 2.0)
        assert np.allclose(np.sort(np.linalg.eigvalsh(r)), [-1.5, 0.3, 1.5])

    def test_reflect_keeps_hermitian(self):
        rng = np.random.default_rng(4)
        h = 3.0 * gue(5, rng)
        r = spectral_reflect(h, 1.0)
        assert np.max(np.abs(r - r.conj().T)) < 1e-12
        assert np.linalg.norm(r, 2) <= 1.0 + 1e-12


class TestMatrixTuple:
    def test_validation_rejects_non_hermitian(self):
        bad = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        with pytest.raises(ValueError):
            MatrixTuple(LAYOUT, 2, sa={(1, 1): bad})

    def test_validation_rejects_norm(self):
        big = np.diag([5.0, 0.0]).astype(complex)
        with pytest.raises(ValueError):
            MatrixTuple(LAYOUT, 2, sa={(1, 1): big})
        MatrixTuple(LAYOUT, 2, sa={(1, 1): big}, check_norm=False)

    def test_validation_rejects_non_unitary(self):
        with pytest.raises(ValueError):
            MatrixTuple(LAYOUT, 2, unitaries={1: np.diag([2.0, 1.0]).astype(complex)})

    def test_json_roundtrip(self):
        rng = np.random.default_rng(5)
        tup = make_tuple(rng, 3, with_unitaries=False)
        data = json.loads(json.dumps(tup.to_json()))
        back = MatrixTuple.from_json(data, LAYOUT)
        for key, a in tup.sa.items():
            assert np.allclose(back.sa[key], a)


class TestEvaluation:
    def test_identity_and_constants(self):
        rng = np.random.default_rng(6)
        tup = make_tuple(rng, 4)
        assert trace_evaluate(NCPoly.one(LAYOUT), tup) == pytest.approx(1.0)
        p = NCPoly.one(LAYOUT).scale(2.5)
        assert np.allclose(evaluate(p, tup), 2.5 * np.eye(4))

    def test_homomorphism(self):
        rng = np.random.default_rng(7)
        tup = make_tuple(rng, 5)
        p = parse("x[1,1]*x[2,1] + (0+1i)*u[1]*z[1,2]*u'[1]", LAYOUT)
        q = parse("2*x[2,1]^2 - x[1,2]", LAYOUT)
        assert np.allclose(evaluate(p * q, tup), evaluate(p, tup) @ evaluate(q, tup))
        assert np.allclose(evaluate(p.adjoint(), tup), evaluate(p, tup).conj().T)

    def test_trace_matches_direct(self):
        rng = np.random.default_rng(8)
        tup = make_tuple(rng, 4)
        p = parse("x[1,1]*x[2,1]*x[1,1] - 3*z[2,1]", LAYOUT)
        direct = np.trace(evaluate(p, tup)) / 4
        assert trace_evaluate(p, tup) == pytest.approx(direct)

    def test_trace_x_equals_conjugated_z(self):
        # x[i,j] evaluates as u z u', so traces of pure x words match the
        # explicitly conjugated z words
        rng = np.random.default_rng(9)
        tup = make_tuple(rng, 4)
        a = trace_evaluate(parse("x[1,1]*x[2,1]", LAYOUT), tup)
        b = trace_evaluate(parse("u[1]*z[1,1]*u'[1]*u[2]*z[2,1]*u'[2]", LAYOUT), tup)
        assert a == pytest.approx(b)

    def test_double_trace(self):
        rng = np.random.default_rng(10)
        tup = make_tuple(rng, 3)
        p = parse("x[1,1]", LAYOUT)
        q = parse("x[2,1]^2", LAYOUT)
        t = TensorNCPoly.of_pair(p, q).scale(2.0)
        want = 2.0 * trace_evaluate(p, tup) * trace_evaluate(q, tup)
        assert double_trace_evaluate(t, tup) == pytest.approx(want)

    def test_conjugated(self):
        rng = np.random.default_rng(11)
        tup = make_tuple(rng, 4, with_unitaries=False)
        vs = [haar_unitary(4, rng) for _ in range(LAYOUT.n)]
        conj = tup.conjugated(vs)
        # single-family traces are conjugation invariant
        p = parse("z[1,1]*z[1,2]", LAYOUT)
        assert trace_evaluate(p, conj) == pytest.approx(trace_evaluate(p, tup))
        # and the conjugation acts family by family
        assert np.allclose(conj.sa[(2, 1)], vs[1] @ tup.sa[(2, 1)] @ vs[1].conj().T)
