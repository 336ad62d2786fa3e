"""Quantitative homogenization statistics.

Monte Carlo estimators for the concentration and decay properties of the
random-coefficient model: spectral-gap ratios at rho = 1 for i.i.d. fields,
corrector moment growth in |x| (logarithmic in d=2, plateau in d>=3),
heat-semigroup decay of averaged observables, quenched and annealed
Green's-function decay, a weighted-norm stability probe for the elliptic
operator, and spatial ergodic averaging rates.

All estimators draw their samples through the ensemble stream contract
(master seed + sample index), aggregate in fixed sample order, and report
standard errors next to every point estimate; slope windows in the tests
are calibrated to the default sample counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .ensembles import EnsembleSpec, SampleId, sample, site_variants
from .lattice import (
    BoxSpec,
    CoefficientField,
    ScalarField,
    grad,
    torus_radii,
)
from .elliptic import (
    SolverConfig,
    green,
    heat_kernel,
    solve_elliptic,
    laplacian_op,
)
from .correctors import solve_corrector

__all__ = [
    "MomentEstimate",
    "GrowthFit",
    "SGReport",
    "DecayFit",
    "vertical_derivative",
    "lipschitz_derivative",
    "sg_check",
    "default_functional_family",
    "SingleSiteEntry",
    "BoxAverageEntry",
    "CellAhomEntry",
    "corrector_growth",
    "semigroup_decay",
    "green_decay",
    "meyers_ratio",
    "meyers_probe",
    "birkhoff_rate",
]


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    p: int
    n: int

    def to_json(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "p": self.p, "n": self.n}


@dataclass(frozen=True)
class DecayFit:
    """Least-squares power-law fit log(values) ~ slope * log(abscissae) + c."""

    abscissae: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    r_squared: float

    def to_json(self) -> dict:
        return {
            "abscissae": self.abscissae.tolist(),
            "values": self.values.tolist(),
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
        }


def _loglog_fit(xs: np.ndarray, ys: np.ndarray) -> DecayFit:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if np.any(ys <= 0):  # nothing to rate-fit (e.g. deterministic ensembles)
        return DecayFit(xs, ys, float("nan"), float("nan"), float("nan"))
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(xs, ys, float(slope), float(intercept), r2)


def _linear_fit(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# vertical / Lipschitz derivatives
# ---------------------------------------------------------------------------


def vertical_derivative(func, a: CoefficientField, site: int, spec: EnsembleSpec,
                        resamples: int = 64, rng: np.random.Generator | None = None) -> float:
    """f(a) - E[f | everything except site]: sensitivity to resampling one site.

    Exact for two-point laws (equal-weight average over the site variants);
    continuous laws fall back to inner Monte Carlo with ``resamples`` draws.
    """
    fa = float(func(a))
    if spec.is_two_point:
        variants = site_variants(spec, a, site)
        return fa - float(np.mean([func(v) for v in variants]))
    if spec.kind == "iid-uniform":
        if rng is None:
            rng = np.random.default_rng(0)
        lo, hi = float(spec.params["low"]), float(spec.params["high"])
        vals = []
        for _ in range(resamples):
            diag = a.diag.copy()
            diag[site] = rng.uniform(lo, hi, size=a.box.d)
            vals.append(func(CoefficientField(a.box, diag, lam=a.lam)))
        return fa - float(np.mean(vals))
    raise ValueError(f"vertical derivative unsupported for kind {spec.kind!r}")


def lipschitz_derivative(func, a: CoefficientField, site: int, spec: EnsembleSpec) -> float:
    """sup |f(a') - f(a'')| over fields agreeing with ``a`` off the site.

    Exact for two-point laws (finite variant set); always dominates the
    absolute vertical derivative.
    """
    variants = site_variants(spec, a, site)
    vals = [float(func(v)) for v in variants]
    return max(vals) - min(vals)


# ---------------------------------------------------------------------------
# functional family for the spectral-gap check
# ---------------------------------------------------------------------------


class SingleSiteEntry:
    """f(a) = a_component(site): the equality case of the spectral gap."""

    name = "single-site"

    def __init__(self, site: int = 0, component: int = 0):
        self.site = site
        self.component = component

    def support(self, box: BoxSpec) -> list[int]:
        return [self.site]

    def __call__(self, a: CoefficientField) -> float:
        return float(a.diag[self.site, self.component])


class BoxAverageEntry:
    """f(a) = average of a_component over the centered R-sub-box."""

    name = "box-average"

    def __init__(self, R: int, component: int = 0):
        self.R = R
        self.component = component

    def _sites(self, box: BoxSpec) -> np.ndarray:
        lo = (box.L - self.R) // 2
        coords = box.coordinate_arrays()
        mask = np.all((coords >= lo) & (coords < lo + self.R), axis=1)
        return np.flatnonzero(mask)

    def support(self, box: BoxSpec) -> list[int]:
        return list(self._sites(box))

    def __call__(self, a: CoefficientField) -> float:
        return float(a.diag[self._sites(a.box), self.component].mean())


class CellAhomEntry:
    """f(a) = entry (row, col) of the periodic cell homogenized matrix.

    A genuinely nonlinear functional of the whole box.  Small boxes only:
    the cell problem is solved directly with a dense Cholesky factorization
    (site 0 pinned; the extracted entry is gauge independent).
    """

    name = "ahom-entry"

    def __init__(self, row: int = 0, col: int = 0):
        self.row = row
        self.col = col
        self._cache_box: BoxSpec | None = None

    def support(self, box: BoxSpec) -> list[int]:
        return list(range(box.n_sites))

    def _prepare(self, box: BoxSpec) -> None:
        if self._cache_box == box:
            return
        n, d = box.n_sites, box.d
        coords = box.coordinate_arrays()
        nbr = np.empty((n, d), dtype=np.intp)
        prv = np.empty((n, d), dtype=np.intp)
        for i in range(d):
            step = coords.copy()
            step[:, i] = (step[:, i] + 1) % box.L
            nbr[:, i] = [box.index_of(c) for c in step]
            step = coords.copy()
            step[:, i] = (step[:, i] - 1) % box.L
            prv[:, i] = [box.index_of(c) for c in step]
        self._cache_box = box
        self._nbr, self._prv = nbr, prv

    def __call__(self, a: CoefficientField) -> float:
        box = a.box
        self._prepare(box)
        n, d = box.n_sites, box.d
        nbr, prv = self._nbr, self._prv
        idx = np.arange(n)
        A = np.zeros((n, n))
        for i in range(d):
            ai = a.diag[:, i]
            np.add.at(A, (idx, idx), ai)
            np.add.at(A, (nbr[:, i], nbr[:, i]), ai)
            np.add.at(A, (idx, nbr[:, i]), -ai)
            np.add.at(A, (nbr[:, i], idx), -ai)
        col = self.col
        acol = a.diag[:, col]
        rhs = acol - acol[prv[:, col]]  # -div*(a e_col)
        phi = np.zeros(n)
        phi[1:] = scipy.linalg.solve(A[1:, 1:], rhs[1:], assume_a="pos")
        arow = a.diag[:, self.row]
        entry = float(np.mean(arow * (phi[nbr[:, self.row]] - phi)))
        if self.row == self.col:
            entry += float(np.mean(arow))
        return entry


def default_functional_family(box: BoxSpec) -> list:
    R = max(2, box.L // 2)
    return [SingleSiteEntry(), BoxAverageEntry(R), CellAhomEntry()]


@dataclass(frozen=True)
class SGReport:
    functional: str
    variance: MomentEstimate
    derivative_sum: MomentEstimate
    ratio: float
    ratio_stderr: float
    rho_assumed: float = 1.0

    @property
    def within_gap(self) -> bool:
        return self.ratio <= 1.0 + 3.0 * self.ratio_stderr

    def to_json(self) -> dict:
        return {
            "functional": self.functional,
            "variance": self.variance.to_json(),
            "derivative_sum": self.derivative_sum.to_json(),
            "ratio": self.ratio,
            "ratio_stderr": self.ratio_stderr,
            "rho_assumed": self.rho_assumed,
            "within_gap": self.within_gap,
        }


def sg_check(spec: EnsembleSpec, box: BoxSpec, n: int,
             functionals: Sequence | None = None,
             map_fn: Callable = map) -> list[SGReport]:
    """Monte Carlo spectral-gap ratios Var(f) / sum_x E[(d_x f)^2].

    Requires an i.i.d. two-point spec (the vertical derivative is then the
    exact conditional centering over the site variants).  Violations are
    report entries, never exceptions.
    """
    if not spec.is_two_point:
        raise ValueError("sg_check requires an iid two-point ensemble")
    if functionals is None:
        functionals = default_functional_family(box)
    alpha = float(spec.params["alpha"])
    beta = float(spec.params["beta"])
    d = box.d

    def one(i: int):
        a = sample(spec, box, SampleId(i))
        out = []
        for func in functionals:
            fa = float(func(a))
            dsum = 0.0
            for site in func.support(box):
                current = tuple(a.diag[site])
                vals = []
                for variant in site_variants(spec, a, site):
                    if tuple(variant.diag[site]) == current:
                        vals.append(fa)
                    else:
                        vals.append(float(func(variant)))
                dsum += (fa - float(np.mean(vals))) ** 2
            out.append((fa, dsum))
        return out

    per_sample = list(map_fn(one, range(n)))
    reports = []
    for j, func in enumerate(functionals):
        vals = np.array([s[j][0] for s in per_sample])
        dsums = np.array([s[j][1] for s in per_sample])
        centered_sq = (vals - vals.mean()) ** 2
        var = float(vals.var(ddof=1))
        var_se = float(centered_sq.std(ddof=1) / np.sqrt(n))
        den = float(dsums.mean())
        den_se = float(dsums.std(ddof=1) / np.sqrt(n))
        ratio = var / den if den > 0 else float("inf")
        ratio_se = ratio * float(np.hypot(var_se / var if var > 0 else 0.0,
                                          den_se / den if den > 0 else 0.0))
        reports.append(SGReport(
            functional=getattr(func, "name", type(func).__name__),
            variance=MomentEstimate(var, var_se, 1, n),
            derivative_sum=MomentEstimate(den, den_se, 1, n),
            ratio=ratio,
            ratio_stderr=ratio_se,
        ))
    return reports


# ---------------------------------------------------------------------------
# corrector growth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthFit:
    radii: np.ndarray
    moments: list[MomentEstimate]   # E[|phi(x) - phi(0)|^{2p}]^{1/(2p)} per radius
    model: str                      # "log-fit" (d=2) or "constant-fit" (d>=3)
    slope: float
    intercept: float
    residual: float                 # 1 - R^2 for log-fit; rms/mean for constant-fit

    @property
    def squared_moments(self) -> np.ndarray:
        return np.array([m.value**2 for m in self.moments])

    @property
    def r_squared(self) -> float:
        return 1.0 - self.residual

    @property
    def plateau_ratio(self) -> float:
        sq = self.squared_moments
        return float(sq.max() / sq.min())

    def to_json(self) -> dict:
        return {
            "radii": self.radii.tolist(),
            "moments": [m.to_json() for m in self.moments],
            "model": self.model,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
        }


def corrector_growth(spec: EnsembleSpec, box: BoxSpec, radii: Sequence[int],
                     p: int = 1, n: int = 100,
                     cfg: SolverConfig = SolverConfig(preconditioner="spectral"),
                     map_fn: Callable = map) -> GrowthFit:
    """Corrector increment moments E[|phi(x) - phi(0)|^{2p}]^{1/(2p)} vs |x|.

    Growth is measured on differences, which are invariant under the
    anchoring convention.  Each sample contributes the average of
    |phi(y + r e_j) - phi(y)|^{2p} over all base sites y and axes j
    (stationarity), which keeps the per-sample noise small.  The squared
    moments are then fitted against log(|x| + 2) in d = 2 and against a
    constant in d >= 3.
    """
    radii = np.asarray(sorted(radii), dtype=np.int64)
    if radii[0] < 1:
        raise ValueError("radii must be >= 1")
    if radii[-1] > box.L // 4:
        raise ValueError(
            f"max radius {radii[-1]} exceeds the periodization window L/4 = {box.L // 4}"
        )
    d = box.d
    xi = np.zeros(d)
    xi[0] = 1.0

    def one(i: int) -> np.ndarray:
        a = sample(spec, box, SampleId(i))
        phi, _ = solve_corrector(a, xi, cfg)
        g = phi.grid()
        out = np.empty(len(radii))
        for k, r in enumerate(radii):
            acc = 0.0
            for axis in range(d):
                diff = np.roll(g, -int(r), axis=axis) - g
                acc += float(np.mean(np.abs(diff) ** (2 * p)))
            out[k] = acc / d
        return out

    rows = np.stack(list(map_fn(one, range(n))))
    means = rows.mean(axis=0)
    ses = rows.std(axis=0, ddof=1) / np.sqrt(n)
    moments = []
    for k in range(len(radii)):
        raw, se = float(means[k]), float(ses[k])
        root = raw ** (1.0 / (2 * p))
        root_se = se / (2 * p) * raw ** (1.0 / (2 * p) - 1.0) if raw > 0 else 0.0
        moments.append(MomentEstimate(root, root_se, p, n))

    sq = means ** (1.0 / p)
    if d == 2:
        xs = np.log(radii + 2.0)
        slope, intercept, r2 = _linear_fit(xs, sq)
        return GrowthFit(radii, moments, "log-fit", slope, intercept, 1.0 - r2)
    level = float(sq.mean())
    resid = float(np.sqrt(np.mean((sq - level) ** 2)) / level) if level > 0 else 0.0
    return GrowthFit(radii, moments, "constant-fit", 0.0, level, resid)


# ---------------------------------------------------------------------------
# semigroup decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SemigroupDecayReport:
    t_grid: np.ndarray
    second_moments: np.ndarray
    stderrs: np.ndarray
    fit: DecayFit
    variance_zeta: float
    contraction_ok: bool  # Var(P(t) zeta) <= Var(zeta) on every t

    def to_json(self) -> dict:
        return {
            "t_grid": self.t_grid.tolist(),
            "second_moments": self.second_moments.tolist(),
            "stderrs": self.stderrs.tolist(),
            "fit": self.fit.to_json(),
            "variance_zeta": self.variance_zeta,
            "contraction_ok": self.contraction_ok,
        }


def semigroup_decay(spec: EnsembleSpec, box: BoxSpec, t_grid: Sequence[float],
                    n: int = 1000, component: int = 0,
                    map_fn: Callable = map) -> SemigroupDecayReport:
    """Decay of E|P(t) zeta - E zeta|^2 for the single-site observable.

    P(t) zeta(a) = sum_x p(t, x) zeta(shift_x a) with the exact torus heat
    kernel; for zeta(a) = a_component(0) the shifted values are just the
    coefficient column, so each sample contributes one dot product per t.
    Times outside the wrap-validity window t <= (L/8)^2 are rejected.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=np.float64)
    t_max_valid = (box.L / 8.0) ** 2
    if t_grid[-1] > t_max_valid:
        raise ValueError(
            f"t={t_grid[-1]} outside the torus validity window t <= (L/8)^2 = {t_max_valid}"
        )
    kernels = []
    for t in t_grid:
        p = heat_kernel(float(t), box)
        mass = float(p.values.sum())
        assert abs(mass - 1.0) <= 1e-12, f"heat kernel mass {mass} != 1"
        kernels.append(p.values)
    mean_zeta = spec.marginal_mean()

    def one(i: int) -> np.ndarray:
        col = sample(spec, box, SampleId(i)).diag[:, component]
        out = np.empty(len(t_grid) + 1)
        out[0] = col[0]  # zeta itself (t = 0 reference for the contraction check)
        for k, pk in enumerate(kernels):
            out[k + 1] = float(pk @ col)
        return out

    rows = np.stack(list(map_fn(one, range(n))))
    zeta_var = float(rows[:, 0].var(ddof=1))
    dev = (rows[:, 1:] - mean_zeta) ** 2
    m2 = dev.mean(axis=0)
    se = dev.std(axis=0, ddof=1) / np.sqrt(n)
    pt_var = rows[:, 1:].var(axis=0, ddof=1)
    # 3 stderr headroom on the Monte Carlo contraction comparison
    contraction = bool(np.all(pt_var <= zeta_var * (1.0 + 3.0 / np.sqrt(n))))
    fit = _loglog_fit(t_grid, m2)
    return SemigroupDecayReport(t_grid, m2, se, fit, zeta_var, contraction)


# ---------------------------------------------------------------------------
# Green's function decay
# ---------------------------------------------------------------------------


def _shell_masks(box: BoxSpec, radii: np.ndarray) -> list[np.ndarray]:
    r = torus_radii(box)
    return [np.flatnonzero(np.abs(r - rad) <= 0.5) for rad in radii]


def _far_field_mask(box: BoxSpec) -> np.ndarray:
    c = torus_radii(box)
    return np.flatnonzero(c >= 3.0 * box.L / 8.0)


@dataclass(frozen=True)
class GreenDecayReport:
    radii: np.ndarray
    quenched_profile: np.ndarray      # median over samples/shells of G - G_far
    quenched_fit: DecayFit | None     # power fit (d = 3)
    quenched_log_ratios: np.ndarray | None  # (G(0)-G(x)) / log(|x|+2) (d = 2)
    annealed_profile: np.ndarray      # E[|grad grad G|^2]^{1/2} per shell
    annealed_fit: DecayFit

    def to_json(self) -> dict:
        return {
            "radii": self.radii.tolist(),
            "quenched_profile": self.quenched_profile.tolist(),
            "quenched_fit": self.quenched_fit.to_json() if self.quenched_fit else None,
            "quenched_log_ratios": (
                self.quenched_log_ratios.tolist()
                if self.quenched_log_ratios is not None else None
            ),
            "annealed_profile": self.annealed_profile.tolist(),
            "annealed_fit": self.annealed_fit.to_json(),
        }


def green_decay(spec: EnsembleSpec, box: BoxSpec, n: int,
                radii: Sequence[int] | None = None,
                cfg: SolverConfig = SolverConfig(preconditioner="spectral"),
                map_fn: Callable = map) -> GreenDecayReport:
    """Quenched and annealed decay statistics of the periodic Green's function.

    Quenched: radial medians of G(a; ., 0) with the far-field level (mean of
    G over the antipodal region) subtracted to remove the torus offset; in
    d = 3 the profile is power-fitted (expected exponent 2 - d), in d = 2 it
    is reported as ratios against log(|x| + 2), taken in the anchored
    difference form G(0) - G(x).

    Annealed: E[|grad_x grad_y G(x, 0)|^2]^{1/2} per shell, from d + 1
    solves per sample (sources at 0 and at each e_j), power-fitted with
    expected exponent -d.
    """
    d = box.d
    if d not in (2, 3):
        raise ValueError("green_decay supports d in {2, 3}")
    if radii is None:
        radii = [r for r in (2, 3, 4, 5, 6, 8, 12, 16) if r <= box.L // 8]
    radii = np.asarray(sorted(radii), dtype=np.int64)
    if radii[-1] > box.L // 4:
        raise ValueError("radii must stay within the periodization window L/4")
    shells = _shell_masks(box, radii)
    far = _far_field_mask(box)
    source_sites = [0] + [box.index_of(tuple(int(k == j) for k in range(d)))
                          for j in range(d)]

    def one(i: int):
        a = sample(spec, box, SampleId(i))
        G0, _ = green(a, 0, cfg)
        g0 = G0.values
        far_level = float(g0[far].mean())
        quenched = np.array([np.median(g0[s]) - far_level for s in shells])
        center = float(g0[0]) - far_level
        # mixed second derivative via the extra sources
        hess_sq = np.zeros(box.n_sites)
        for j in range(d):
            Gj, _ = green(a, source_sites[1 + j], cfg)
            dj = (Gj.values - g0).reshape(box.shape, order="F")
            for axis in range(d):
                gij = np.roll(dj, -1, axis=axis) - dj
                hess_sq += gij.ravel(order="F") ** 2
        ann = np.array([float(hess_sq[s].mean()) for s in shells])
        return quenched, center, ann

    results = list(map_fn(one, range(n)))
    quenched = np.median(np.stack([r[0] for r in results]), axis=0)
    center = float(np.median([r[1] for r in results]))
    annealed = np.sqrt(np.stack([r[2] for r in results]).mean(axis=0))

    # power-law exponents are fitted against r itself; the +1 shift in the
    # bounds only regularizes the origin and would bias the slope at the
    # small radii a torus can afford
    annealed_fit = _loglog_fit(radii.astype(np.float64), annealed)
    if d == 3:
        if np.any(quenched <= 0):
            raise RuntimeError("quenched profile not positive; box too small for radii")
        quenched_fit = _loglog_fit(radii.astype(np.float64), quenched)
        log_ratios = None
    else:
        quenched_fit = None
        log_ratios = (center - quenched) / np.log(radii + 2.0)
    return GreenDecayReport(radii, quenched, quenched_fit, log_ratios, annealed, annealed_fit)


# ---------------------------------------------------------------------------
# weighted-norm stability probe
# ---------------------------------------------------------------------------


def meyers_ratio(a: CoefficientField, h: ScalarField, q: float = 1.1,
                 alpha_w: float = 0.1,
                 cfg: SolverConfig = SolverConfig()) -> float:
    """Weighted-norm ratio of grad v against grad h for div*(a grad v) = div* grad h.

    With weight (|x| + 1)^alpha_w on torus radii; q in [1, 1.25] is the
    half-exponent of the norm.  At q = 1, alpha_w = 0 the plain energy
    estimate bounds the ratio by 1/lam^2.
    """
    if not (1.0 <= q <= 1.25):
        raise ValueError("q must lie in [1, 1.25]")
    if alpha_w < 0:
        raise ValueError("alpha_w must be >= 0")
    box = a.box
    lap = laplacian_op(box)
    rhs = ScalarField.from_grid(box, lap(h.grid()))
    v, _ = solve_elliptic(a, rhs, cfg)
    w = (torus_radii(box) + 1.0) ** alpha_w
    gv = np.sum(grad(v).values**2, axis=1)
    gh = np.sum(grad(h).values**2, axis=1)
    num = float(np.sum(gv**q * w))
    den = float(np.sum(gh**q * w))
    if den == 0:
        raise ValueError("h must be non-constant")
    return num / den


@dataclass(frozen=True)
class MeyersProbeReport:
    q: float
    alpha_w: float
    ratios: np.ndarray
    median: float
    blowup_flag: bool   # any ratio exceeding 10x the median

    def to_json(self) -> dict:
        return {
            "q": self.q,
            "alpha_w": self.alpha_w,
            "ratios": self.ratios.tolist(),
            "median": self.median,
            "blowup_flag": self.blowup_flag,
        }


def smooth_random_field(box: BoxSpec, rng: np.random.Generator,
                        smoothing_time: float = 2.0) -> ScalarField:
    """Mean-zero heat-smoothed white noise; the stock right-hand side h."""
    noise = rng.normal(size=box.shape)
    ph = np.exp(-smoothing_time * _lap_symbol_cached(box))
    out = np.fft.ifftn(np.fft.fftn(noise) * ph).real
    out -= out.mean()
    return ScalarField.from_grid(box, out)


_lap_symbols: dict[BoxSpec, np.ndarray] = {}


def _lap_symbol_cached(box: BoxSpec) -> np.ndarray:
    sym = _lap_symbols.get(box)
    if sym is None:
        from .elliptic import laplacian_symbol

        sym = laplacian_symbol(box)
        _lap_symbols[box] = sym
    return sym


def meyers_probe(spec: EnsembleSpec, box: BoxSpec, n: int = 50, q: float = 1.1,
                 alpha_w: float = 0.1,
                 cfg: SolverConfig = SolverConfig(preconditioner="spectral"),
                 map_fn: Callable = map) -> MeyersProbeReport:
    """Ratio stability across random (a, h) pairs; flags a blow-up of the constant."""

    def one(i: int) -> float:
        a = sample(spec, box, SampleId(i))
        h_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=spec.master_seed, spawn_key=(i, 1))
        )
        h = smooth_random_field(box, h_rng)
        return meyers_ratio(a, h, q, alpha_w, cfg)

    ratios = np.array(list(map_fn(one, range(n))))
    med = float(np.median(ratios))
    return MeyersProbeReport(q, alpha_w, ratios, med, bool(np.any(ratios > 10.0 * med)))


# ---------------------------------------------------------------------------
# ergodic averaging rate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BirkhoffReport:
    R_values: np.ndarray
    rms: np.ndarray
    fit: DecayFit

    def to_json(self) -> dict:
        return {
            "R_values": self.R_values.tolist(),
            "rms": self.rms.tolist(),
            "fit": self.fit.to_json(),
        }


def birkhoff_rate(spec: EnsembleSpec, box: BoxSpec, R_list: Sequence[int],
                  n: int = 200, map_fn: Callable = map) -> BirkhoffReport:
    """RMS deviation of R-box spatial averages from the ensemble mean vs R.

    For i.i.d. entries the exact rate is sd * R^{-d/2}; the log-log slope of
    the fitted profile is the reported quantity.
    """
    from .ensembles import spatial_average_observable

    R_arr = np.asarray(sorted(R_list), dtype=np.int64)
    if R_arr[-1] > box.L:
        raise ValueError("R exceeds the box side")
    mean_val = spec.marginal_mean()

    def one(i: int) -> np.ndarray:
        a = sample(spec, box, SampleId(i))
        return np.array([spatial_average_observable(a, int(R)) - mean_val for R in R_arr])

    devs = np.stack(list(map_fn(one, range(n))))
    rms = np.sqrt((devs**2).mean(axis=0))
    fit = _loglog_fit(R_arr.astype(np.float64), rms)
    return BirkhoffReport(R_arr, rms, fit)
