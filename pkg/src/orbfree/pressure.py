"""Finite-N estimators of the orbital free pressure, the exact
finite-sample property suite, the Legendre-transform entropy estimator,
equilibrium checks, the double (tensor) pressure, and the penalty
polynomial, plus the pressure relation between the matrix and orbital
ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import gibbs
from .matrices import (
    MatrixTuple,
    SpectralMeasure,
    double_trace_evaluate,
    haar_unitary,
    quantile_microstate,
    trace_evaluate,
)
from .moments import MomentTable, chi_single, free_product, table_from_measure
from .poly import (
    FamilyLayout,
    NCPoly,
    TensorNCPoly,
    Word,
    adjoint_word,
    letter_x,
    norm_bound,
)

__all__ = [
    "PressureEstimate",
    "EtaEstimate",
    "pressure_estimate",
    "finite_N_property_suite",
    "eta_estimate",
    "equilibrium_check",
    "double_pressure",
    "penalty_poly",
    "pressure_relation_check",
    "selfadjoint_word_basis",
    "sample_conjugations",
]


@dataclass
class PressureEstimate:
    h: object
    source: str
    per_N: list  # (N, logZ, stderr)
    normalized: list  # logZ / N^2
    extrapolated: float
    r_squared: float
    fit_residuals: list = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.h, NCPoly):
            bound = norm_bound(self.h) + 1e-9
            for v in self.normalized:
                if abs(v) > bound:
                    raise ValueError(
                        f"normalized pressure {v:.6g} exceeds the norm bound {bound:.6g}"
                    )


@dataclass
class EtaEstimate:
    target: MomentTable
    basis: list  # self-adjoint NCPoly basis elements
    value: float
    minimizer: np.ndarray
    trace: list  # (evaluation index, objective value)
    converged: bool
    diverged: bool = False
    witness: NCPoly | None = None


# ---------------------------------------------------------------------------
# shared-sample machinery


def sample_conjugations(
    microstates: MatrixTuple, M: int, rng: np.random.Generator
) -> list[MatrixTuple]:
    """M independent Haar conjugations of the microstate tuple (the
    reference measure of the orbital ensemble)."""
    n = microstates.layout.n
    out = []
    for _ in range(M):
        vs = [haar_unitary(microstates.N, rng) for _ in range(n)]
        out.append(microstates.with_unitaries(vs))
    return out


def _sample_energy(h: NCPoly, sample: MatrixTuple) -> float:
    # x letters evaluate as u z u' because the sample carries unitaries
    return trace_evaluate(h, sample).real


def _log_mean_exp(vals: np.ndarray) -> float:
    shift = vals.max()
    return float(shift + np.log(np.mean(np.exp(vals - shift))))


def _sample_pressure(h: NCPoly, samples: Sequence[MatrixTuple], N: int) -> tuple[float, float]:
    """(1/N^2) log of the sample average of exp(-N^2 tr h), with a
    delta-method standard error."""
    if h.is_zero:
        return 0.0, 0.0
    e = np.array([-(N**2) * _sample_energy(h, s) for s in samples])
    lme = _log_mean_exp(e)
    w = np.exp(e - lme)  # mean 1 by construction
    se = float(w.std(ddof=1) / math.sqrt(len(w))) if len(w) > 1 else float("inf")
    return lme / N**2, se / N**2


def _family_split(h: NCPoly) -> bool:
    """True when every word of h stays inside one family, so the orbital
    integrand is constant by trace conjugation invariance."""
    for w in h.terms:
        fams = {l[1] for l in w}
        if len(fams) > 1:
            return False
    return True


# ---------------------------------------------------------------------------
# pressure estimate


def pressure_estimate(
    h: NCPoly,
    microstates_per_N: Sequence[tuple[int, MatrixTuple]],
    gibbs_settings: dict | None = None,
    method: str = "sample",
) -> PressureEstimate:
    """Per-N normalized orbital log-partition values with an affine
    extrapolation in 1/N.

    methods: "sample" (log-mean-exp over Haar conjugations), or
    "thermodynamic" / "direct" (delegated to the Gibbs chain estimators).
    Family-split h is evaluated exactly in closed form at each N.
    """
    settings = dict(gibbs_settings or {})
    seed = settings.pop("seed", 0)
    M = settings.pop("samples", 200)
    rows = []
    for N, xi in microstates_per_N:
        if h.is_zero:
            rows.append((N, 0.0, 0.0))
            continue
        if _family_split(h):
            val = -trace_evaluate(h, xi).real
            rows.append((N, N**2 * val, 0.0))
            continue
        if method == "sample":
            rng = np.random.default_rng(seed + N)
            samples = sample_conjugations(xi, M, rng)
            v, se = _sample_pressure(h, samples, N)
            rows.append((N, N**2 * v, N**2 * se))
        else:
            cfg = gibbs.GibbsConfig("unitary-orbital", N, h, microstates=xi,
                                    seed=seed + N, **settings)
            logz, se = gibbs.log_partition(cfg, method=method)
            rows.append((N, logz, se))
    normalized = [logz / N**2 for N, logz, _ in rows]
    extrapolated, r2, resid = _affine_fit(
        [1.0 / N for N, _, _ in rows], normalized
    )
    return PressureEstimate(h, method, rows, normalized, extrapolated, r2, resid)


def _affine_fit(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) == 1:
        return float(ys[0]), 1.0, [0.0]
    A = np.vstack([np.ones_like(xs), xs]).T
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    fit = A @ coef
    resid = ys - fit
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), r2, resid.tolist()


# ---------------------------------------------------------------------------
# exact finite-sample property suite


def finite_N_property_suite(
    h1: NCPoly,
    h2: NCPoly,
    microstates: MatrixTuple,
    M: int = 64,
    seed: int = 0,
) -> dict:
    """Evaluates the four pressure relations on a shared empirical sample
    set, where each is exact: Lipschitz bound, monotonicity, midpoint
    convexity (Cauchy-Schwarz), and disjoint-family additivity as an
    equality on the product empirical measure."""
    N = microstates.N
    rng = np.random.default_rng(seed)
    samples = sample_conjugations(microstates, M, rng)

    def pi(h, subset=None):
        return _sample_pressure(h, subset if subset is not None else samples, N)[0]

    report = {}

    # (Lipschitz) |pi(h1) - pi(h2)| <= sup-norm surrogate of h1 - h2
    lip_bound = norm_bound(h1 - h2)
    lip_lhs = abs(pi(h1) - pi(h2))
    report["lipschitz"] = {"lhs": lip_lhs, "bound": lip_bound, "margin": lip_bound - lip_lhs}

    # (monotone) h1 <= h1 + q*q pointwise on every sample
    q = h2 - h1
    dominating = h1 + q.adjoint() * q
    report["monotone"] = {
        "pi_smaller": pi(h1),
        "pi_larger": pi(dominating),
        "margin": pi(h1) - pi(dominating),
    }

    # (convex) midpoint convexity via Cauchy-Schwarz on the sample set
    mid = (h1 + h2).scale(0.5)
    conv_rhs = 0.5 * pi(h1) + 0.5 * pi(h2)
    report["convex"] = {"pi_mid": pi(mid), "rhs": conv_rhs, "margin": conv_rhs - pi(mid)}

    # (additive) disjoint family groups factorize exactly on the product
    # empirical measure: project h1 to family 1, h2 to family 2
    g1 = _project_families(h1, {1})
    g2 = _project_families(h2, set(range(2, microstates.layout.n + 1)))
    e1 = np.array([-(N**2) * _sample_energy(g1, s) for s in samples])
    e2 = np.array([-(N**2) * _sample_energy(g2, s) for s in samples])
    # product measure over independent V-groups: all (s, t) pairs
    joint = _log_mean_exp((e1[:, None] + e2[None, :]).ravel()) / N**2
    split = _log_mean_exp(e1) / N**2 + _log_mean_exp(e2) / N**2
    report["additive"] = {"joint": joint, "split": split, "margin": abs(joint - split)}

    report["max_violation"] = max(
        max(0.0, -report["lipschitz"]["margin"]),
        max(0.0, -report["monotone"]["margin"]),
        max(0.0, -report["convex"]["margin"]),
        report["additive"]["margin"],
    )
    return report


def _project_families(h: NCPoly, families: set[int]) -> NCPoly:
    out = NCPoly.zero(h.layout)
    for w, c in h.terms.items():
        if w and {l[1] for l in w} <= families:
            out = out + NCPoly.monomial(h.layout, list(w), c)
    return out


# ---------------------------------------------------------------------------
# eta (Legendre transform) estimator


def selfadjoint_word_basis(layout: FamilyLayout, d: int) -> list[NCPoly]:
    """Self-adjoint symmetrizations (w + w*)/1 of x-words of degree 1..d,
    deduplicated; constants are excluded (flat direction of the
    objective)."""
    from .moments import _enumerate_words, canonical_word, x_letters

    seen = set()
    out = []
    for w in _enumerate_words(x_letters(layout), d):
        if not w:
            continue
        key = min(canonical_word(w)[0], canonical_word(adjoint_word(w))[0])
        if key in seen:
            continue
        seen.add(key)
        p = NCPoly.monomial(layout, list(w), 1)
        sym = p if p.is_selfadjoint() else (p + p.adjoint()).scale(0.5)
        out.append(sym)
    return out


def _target_pairing(target: MomentTable, h: NCPoly) -> float:
    val = sum(complex(c) * target.get(w) for w, c in h.terms.items())
    return val.real


def _marginal_mismatch(target: MomentTable, microstates: MatrixTuple, d: int, tol: float):
    """Single-family word where the target disagrees with the microstate
    marginal; returns a signed witness polynomial or None."""
    from .moments import empirical_state

    marg = empirical_state(microstates, d)
    for w in sorted(target.values, key=len):
        if not w or len(w) > d:
            continue
        fams = {l[1] for l in w}
        if len(fams) != 1:
            continue
        gap = (target.get(w) - marg.get(w)).real
        if abs(gap) > tol:
            p = NCPoly.monomial(target.layout, list(w), 1)
            if not p.is_selfadjoint():
                p = (p + p.adjoint()).scale(0.5)
                gap = _target_pairing(target, p) - _target_pairing(marg, p)
                if abs(gap) <= tol:
                    continue
            # moving along h = alpha * sign * p drives the objective to
            # -infinity: the pressure term is exactly -alpha*sign*marg(p)
            return p.scale(1.0 if gap < 0 else -1.0)
    return None


def eta_estimate(
    target: MomentTable,
    microstates: MatrixTuple,
    basis_degree: int = 2,
    samples: int = 200,
    budget: int = 200,
    seed: int = 0,
    mismatch_tol: float = 0.05,
) -> EtaEstimate:
    """Minimize c -> target(h_c) + pressure(h_c) over the self-adjoint
    word basis with common random numbers across candidates.

    The h=0 point gives objective 0 exactly, so the achieved value is
    never positive.  Marginal-inconsistent targets are detected first and
    reported as divergence along the witness ray.
    """
    layout = target.layout
    N = microstates.N
    basis = selfadjoint_word_basis(layout, basis_degree)

    witness = _marginal_mismatch(target, microstates, max(1, basis_degree), mismatch_tol)
    if witness is not None:
        # follow the ray and record the decrease
        trace = []
        for k, alpha in enumerate((1.0, 2.0, 4.0, 8.0)):
            h = witness.scale(alpha)
            obj = _target_pairing(target, h) - trace_evaluate(h, microstates).real
            trace.append((k, obj))
        return EtaEstimate(target, basis, -math.inf, np.zeros(len(basis)), trace,
                           converged=False, diverged=True, witness=witness)

    if not basis:
        return EtaEstimate(target, basis, 0.0, np.zeros(0), [(0, 0.0)], converged=True)

    rng = np.random.default_rng(seed)
    shared = sample_conjugations(microstates, samples, rng)

    evals = []
    best = [0.0, np.zeros(len(basis))]

    def objective(c):
        h = NCPoly.zero(layout)
        for ck, b in zip(c, basis):
            if ck != 0.0:
                h = h + b.scale(float(ck))
        val = _target_pairing(target, h) + _sample_pressure(h, shared, N)[0]
        evals.append((len(evals), val))
        if val < best[0]:
            best[0] = val
            best[1] = np.array(c, dtype=float)
        return val

    x0 = np.zeros(len(basis))
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"maxfev": budget, "xatol": 1e-4, "fatol": 1e-6})
    value = min(0.0, float(best[0]))
    return EtaEstimate(target, basis, value, best[1], evals,
                       converged=bool(res.success))


# ---------------------------------------------------------------------------
# equilibrium check


def equilibrium_check(
    target: MomentTable,
    h: NCPoly,
    microstates_per_N: Sequence[tuple[int, MatrixTuple]],
    m: int = 2,
    delta: float = 0.2,
    samples: int = 150,
    seed: int = 0,
    basis_degree: int = 2,
) -> dict:
    """Compare eta(target) against target(h) + pressure(h) and record the
    occupancy trajectory of the target's microstate set."""
    N_max, xi_max = microstates_per_N[-1]
    eta = eta_estimate(target, xi_max, basis_degree=basis_degree,
                       samples=samples, seed=seed)
    report = {"diverged": eta.diverged}
    if eta.diverged:
        report["witness"] = eta.witness
        return report
    press = pressure_estimate(h, microstates_per_N,
                              {"seed": seed, "samples": samples})
    rhs = _target_pairing(target, h) + press.normalized[-1]
    report["eta"] = eta.value
    report["rhs"] = rhs
    report["gap"] = eta.value - rhs
    occ = []
    for N, xi in microstates_per_N:
        rng = np.random.default_rng(seed + 7 * N)
        hits = 0
        M = samples
        from .moments import microstate_check

        for s in sample_conjugations(xi, M, rng):
            if microstate_check(s, target, m, delta):
                hits += 1
        frac = hits / M
        occ.append((N, frac, -math.inf if frac == 0 else math.log(frac) / N**2))
    report["occupancy"] = occ
    slopes = [row[2] for row in occ if row[2] > -math.inf]
    report["occupancy_slope"] = (slopes[-1] - slopes[0]) if len(slopes) > 1 else 0.0
    return report


# ---------------------------------------------------------------------------
# double pressure and the penalty polynomial


def double_pressure(
    h2: TensorNCPoly,
    microstates_per_N: Sequence[tuple[int, MatrixTuple]],
    gibbs_settings: dict | None = None,
) -> PressureEstimate:
    """Pressure of the tensor (double-trace) energy, by the same shared
    log-mean-exp pipeline as pressure_estimate's sample method."""
    settings = dict(gibbs_settings or {})
    seed = settings.pop("seed", 0)
    M = settings.pop("samples", 200)
    rows = []
    for N, xi in microstates_per_N:
        rng = np.random.default_rng(seed + N)
        samples = sample_conjugations(xi, M, rng)
        e = np.empty(M)
        for k, s in enumerate(samples):
            e[k] = -(N**2) * double_trace_evaluate(h2, s).real
        lme = _log_mean_exp(e)
        w = np.exp(e - lme)
        se = float(w.std(ddof=1) / math.sqrt(M)) if M > 1 else float("inf")
        rows.append((N, lme, N**2 * (se / N**2)))
    normalized = [logz / N**2 for N, logz, _ in rows]
    extrapolated, r2, resid = _affine_fit([1.0 / N for N, _, _ in rows], normalized)
    return PressureEstimate(h2, "sample", rows, normalized, extrapolated, r2, resid)


def penalty_poly(target: MomentTable, m: int, beta: float, delta: float) -> TensorNCPoly:
    """(beta/delta^2) sum over words w of length 1..m of
    (w - tau(w)) tensor (w - tau(w))*; pairs to zero with the target and
    is nonnegative under the double trace on every tuple."""
    from .moments import _enumerate_words, x_letters

    layout = target.layout
    total = None
    for w in _enumerate_words(x_letters(layout), m):
        if not w:
            continue
        p = NCPoly.monomial(layout, list(w), 1) - NCPoly.one(layout).scale(target.get(w))
        t = TensorNCPoly.of_pair(p, p.adjoint())
        total = t if total is None else total + t
    return total.scale(beta / delta**2)


# ---------------------------------------------------------------------------
# pressure relation between matrix and orbital ensembles


def pressure_relation_check(
    h: NCPoly,
    R: float,
    N: int,
    gibbs_settings: dict | None = None,
    seed: int = 0,
) -> dict:
    """Finite-N proxy of the relation

        pi_R(h) >= pi_orb(h : marginals) + sum_i chi(marginal_i)

    The matrix side is the log-ratio Z^h/Z^0 of the matrix ensemble (the
    Lebesgue volume normalization cancels); its chi terms use the h=0
    marginal spectra, which also feed the orbital side's microstates, so
    the reported margin is matrix_rel_logZ - orbital_pressure.
    """
    settings = dict(gibbs_settings or {})
    settings.setdefault("sweeps", 600)
    settings.setdefault("burn_in", 150)
    settings.setdefault("thinning", 5)
    samples = settings.pop("samples", 200)
    layout = h.layout
    if any(r != 1 for r in layout.r):
        raise ValueError("relation check requires single-variable families")

    # h=0 matrix reference chain supplies the marginal spectra
    cfg0 = gibbs.GibbsConfig("matrix", N, NCPoly.zero(layout), R=R, seed=seed, **settings)
    chain0 = gibbs.run(cfg0)
    marginals = []
    for i in range(1, layout.n + 1):
        eigs = np.concatenate(
            [np.linalg.eigvalsh(s.sa[(i, 1)]) for s in chain0.samples]
        )
        marginals.append(SpectralMeasure.empirical(eigs))

    # matrix-side relative log-partition
    cfg_h = gibbs.GibbsConfig("matrix", N, h, R=R, seed=seed + 1, **settings)
    rel_logz, se_m = gibbs.log_partition(cfg_h, method="thermodynamic")
    rel = rel_logz / N**2
    se_m /= N**2

    # orbital side with quantile microstates of the same marginals
    sa = {(i, 1): quantile_microstate(mu, N) for i, mu in enumerate(marginals, start=1)}
    xi = MatrixTuple(layout, N, sa=sa, check_norm=False)
    orb, se_o = _sample_pressure(
        h, sample_conjugations(xi, samples, np.random.default_rng(seed + 2)), N
    )

    chis = [chi_single(mu) for mu in marginals]
    margin = rel - orb
    stderr = math.hypot(se_m, se_o)
    return {
        "matrix_side": rel,
        "orbital_side": orb,
        "chi": chis,
        "margin": margin,
        "stderr": stderr,
        "significant_violation": margin < -3.0 * stderr,
    }
