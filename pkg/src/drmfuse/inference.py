"""Tests, tilt refinement, CDF estimators, threshold probabilities, GOF pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from . import asymptotics, likelihood
from .core import (
    ArityMismatch,
    Basis,
    DrmError,
    FittedModel,
    GLOBAL_TILT,
    Sample,
    StepCDF,
    TiltSpec,
    validate,
)


@dataclass(frozen=True)
class ComponentTest:
    basis: Basis
    z: float
    p: float


@dataclass(frozen=True)
class TestReport:
    """Joint chi-square test, optionally with per-component Z-tests attached."""

    statistic: float
    df: int
    p_value: float
    per_component: tuple[ComponentTest, ...] | None = None


@dataclass(frozen=True)
class ThresholdEstimate:
    """Estimated exceedance probability 1 - G(T) with a Wald interval."""

    T: float
    prob: float
    se: float
    ci: tuple[float, float]
    method: str                   # "drm" or "empirical"
    n_effective: int

    @property
    def ci_clamped(self) -> tuple[float, float]:
        """Interval truncated to [0, 1]; the raw ci is reported untouched."""
        lo, hi = self.ci
        return (max(lo, 0.0), min(hi, 1.0))


@dataclass(frozen=True, eq=False)
class GofResult:
    """Pairs (Ghat(t), Gtilde(t)) over the distinct reference values."""

    pairs: np.ndarray            # shape (k, 2), sorted by t
    max_abs_diff: float


def empirical_cdf(sample: Sample) -> StepCDF:
    """Model-free empirical CDF of one sample."""
    n = sample.n
    return StepCDF.from_weighted(sample.values, np.full(n, 1.0 / n))


def drm_cdf(fit: FittedModel) -> StepCDF:
    """Fused-data estimate of the reference CDF: mass p_i at each fused point."""
    return StepCDF.from_weighted(fit.data.t, fit.weights)


def _beta_block(fit: FittedModel):
    m = fit.data.m
    if m != 1:
        raise ArityMismatch(f"pairwise fit required (m = 1), got m = {m}")
    beta = fit.theta.beta[0]
    Sigma_beta = fit.Sigma[m:, m:]
    return beta, Sigma_beta


def chi_square_beta_test(fit2: FittedModel) -> TestReport:
    """Joint test of beta = 0 for a pairwise fit; chi-square with r_1 df."""
    beta, Sigma_beta = _beta_block(fit2)
    if beta.size == 0:
        return TestReport(statistic=0.0, df=0, p_value=1.0)
    Sinv = asymptotics._sym_inverse(Sigma_beta, "Sigma_beta")
    stat = float(fit2.data.n * beta @ Sinv @ beta)
    return TestReport(
        statistic=stat,
        df=beta.size,
        p_value=float(chi2.sf(stat, beta.size)),
    )


def z_tests(fit2: FittedModel) -> TestReport:
    """Per-component Z-tests for a pairwise fit (joint statistic attached)."""
    joint = chi_square_beta_test(fit2)
    beta, Sigma_beta = _beta_block(fit2)
    n = fit2.data.n
    comps = []
    for j, b in enumerate(fit2.data.neighbors[0][1].basis):
        var = Sigma_beta[j, j]
        z = float(beta[j] / np.sqrt(var / n)) if var > 0 else np.inf * np.sign(beta[j])
        comps.append(ComponentTest(basis=b, z=z, p=float(2.0 * norm.sf(abs(z)))))
    return TestReport(
        statistic=joint.statistic,
        df=joint.df,
        p_value=joint.p_value,
        per_component=tuple(comps),
    )


def refine_tilts(
    reference: Sample,
    neighbors: list[Sample],
    alpha_level: float = 0.05,
) -> list[TiltSpec]:
    """Pairwise tilt selection against the reference.

    For each neighbor: fit the pairwise model with the global tilt
    (x, log x, log^2 x); if the joint chi-square test does not reject at
    alpha_level the neighbor is declared equidistributed (empty tilt);
    otherwise every component whose Z-test p-value is >= alpha_level is
    dropped in a single pass.
    """
    if not 0.0 < alpha_level < 1.0:
        raise ArityMismatch(f"alpha_level must be in (0, 1), got {alpha_level!r}")
    out = []
    for nb in neighbors:
        try:
            data = validate([reference, nb], [GLOBAL_TILT])
            pair_fit = likelihood.fit(data)
            joint = chi_square_beta_test(pair_fit)
            if joint.p_value >= alpha_level:
                out.append(TiltSpec(()))
                continue
            report = z_tests(pair_fit)
            kept = tuple(c.basis for c in report.per_component if c.p < alpha_level)
            out.append(TiltSpec(kept))
        except DrmError as e:
            e.label = nb.label
            raise
    return out


def threshold_probability(
    cdf: StepCDF,
    source: FittedModel | Sample,
    T: float,
    level: float = 0.95,
) -> ThresholdEstimate:
    """Exceedance probability 1 - G(T) with a Wald confidence interval.

    A FittedModel source uses the fused-data variance sigma(T)/n; a Sample
    source uses the binomial Wald variance p(1-p)/n_0. Intervals are reported
    raw (they may cross 0 or 1); see ci_clamped for the truncated version.
    """
    if not 0.0 < level < 1.0:
        raise ArityMismatch(f"confidence level must be in (0, 1), got {level!r}")
    z = float(norm.ppf(0.5 + level / 2.0))
    # cumsum rounding can leave cdf(T) a few ulp outside [0, 1]
    prob = min(1.0, max(0.0, 1.0 - cdf(T)))
    if isinstance(source, FittedModel):
        bb = asymptotics.blocks(source)
        sig = asymptotics.sigma_t(source, bb, T)
        n = source.data.n
        se = float(np.sqrt(sig.value / n))
        method = "drm"
    elif isinstance(source, Sample):
        n = source.n
        se = float(np.sqrt(max(prob * (1.0 - prob), 0.0) / n))
        method = "empirical"
    else:
        raise ArityMismatch(f"source must be a FittedModel or Sample, got {type(source)!r}")
    return ThresholdEstimate(
        T=float(T),
        prob=float(prob),
        se=se,
        ci=(float(prob - z * se), float(prob + z * se)),
        method=method,
        n_effective=int(n),
    )


def gof_pairs(fit: FittedModel) -> GofResult:
    """Goodness-of-fit pairs (Ghat, Gtilde) at the distinct reference values.

    Points near the 45-degree line indicate the tilt structure fits; a large
    max_abs_diff is the misspecification alarm.
    """
    ghat = empirical_cdf(fit.data.reference)
    gtilde = drm_cdf(fit)
    ts = ghat.points
    pairs = np.column_stack([ghat(ts), gtilde(ts)])
    return GofResult(pairs=pairs, max_abs_diff=float(np.max(np.abs(pairs[:, 0] - pairs[:, 1]))))
