"""Return-value estimation combining the STM tail model with per-location
exposure distributions.

Per location j, SWH is H_j = E_j * S with S the regional space-time maximum
and E_j the location's exposure. With exposures modelled as empirical atoms
e_1..e_m, the SWH CDF is the exact finite mixture
F_H(h) = (1/m) * sum_i F_S(h / e_i), which is inverted by bisection to get
the quantile at the per-retained-event target probability
p* = 1 - (T0 / n) / T for the T-year return value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .catalog import (
    CatalogError,
    CycloneCatalog,
    ExposureMatrix,
    RegionSpec,
    extract_exposures,
    extract_stm,
    select_region,
    top_n_events,
)
from .evd import EvdError, GpdParams, fit_gpd, gpd_cdf

BISECTION_TOL = 1e-6  # metres
BISECTION_MAX_ITER = 200


@dataclass(frozen=True)
class ExposureEcdf:
    """Empirical exposure distribution at one location: equally weighted atoms."""

    location_id: int
    atoms: np.ndarray  # sorted, in [0, 1]

    def __post_init__(self):
        atoms = np.sort(np.asarray(self.atoms, dtype=float))
        object.__setattr__(self, "atoms", atoms)
        if atoms.size == 0:
            raise CatalogError(f"location {self.location_id}: empty exposure sample")
        if np.any((atoms < 0.0) | (atoms > 1.0)):
            raise CatalogError(f"location {self.location_id}: exposure outside [0, 1]")

    def cdf(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        p = np.searchsorted(self.atoms, x, side="right") / self.atoms.size
        return p if p.ndim else float(p)


@dataclass(frozen=True)
class ReturnValueEstimate:
    location_id: int
    T: float  # return period, years
    T0: float  # observation period, years
    n: int  # retained-event count used for the tail fit
    value: float  # metres
    method: str  # "MLE" | "PWM" | ""
    estimator: str  # "STME" | "SINGLE" | "EMPIRICAL"
    flag: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise CatalogError(f"invalid return value {self.value}")


def exposure_ecdf(
    matrix: ExposureMatrix, location_id: int, retained_event_ids=None
) -> ExposureEcdf:
    """Exposure atoms at a location from the retained events (absent entries
    skipped). retained_event_ids=None uses all events in the matrix."""
    col = matrix.column(location_id)
    if retained_event_ids is not None:
        retained = set(int(e) for e in retained_event_ids)
        mask = np.array([int(e) in retained for e in matrix.event_ids])
        col = col[mask]
    atoms = col[~np.isnan(col)]
    if atoms.size == 0:
        raise CatalogError(f"location {location_id}: no exposure data among retained events")
    return ExposureEcdf(location_id=int(location_id), atoms=atoms)


def swh_cdf(fit: GpdParams, ecdf: ExposureEcdf, h) -> np.ndarray | float:
    """CDF of SWH at the location: mean of the conditional-on-retention GPD
    CDF over exposure atoms; zero atoms contribute 1 (no wave reaches the
    location, so any h >= 0 is not exceeded)."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise CatalogError("SWH evaluation point must be >= 0")
    atoms = ecdf.atoms
    pos = atoms[atoms > 0.0]
    n_zero = atoms.size - pos.size
    scaled = h[..., None] / pos if h.ndim else h / pos
    p = (np.sum(np.asarray(gpd_cdf(fit, scaled)), axis=-1) + n_zero) / atoms.size
    return p if h.ndim else float(p)


def target_probability(T: float, T0: float, n: int) -> float:
    """Per-retained-event non-exceedance probability for the T-year value."""
    if not (T > T0 > 0) or n < 1:
        raise CatalogError(f"invalid (T={T}, T0={T0}, n={n})")
    p = 1.0 - (T0 / n) / T
    if not 0.0 < p < 1.0:
        raise CatalogError(f"target probability {p} outside (0, 1)")
    return p


def return_value(
    fit: GpdParams,
    ecdf: ExposureEcdf,
    T: float,
    T0: float,
    n: int,
    method: str = "",
    estimator: str = "STME",
) -> ReturnValueEstimate:
    """T-year return value at a location: the swh_cdf quantile at
    p* = 1 - (T0/n)/T, found by bracketing and bisection (1e-6 m)."""
    p_target = target_probability(T, T0, n)
    e_max = float(ecdf.atoms[-1])
    if e_max == 0.0:
        raise CatalogError(f"location {ecdf.location_id}: all exposures zero")
    flag = ""
    if fit.shape < 0:
        hi = e_max * fit.upper_endpoint
        if swh_cdf(fit, ecdf, max(hi - BISECTION_TOL, 0.0)) < p_target:
            flag = "at_upper_bound"
    else:
        hi = max(1.0, e_max * (fit.threshold + fit.scale))
        while swh_cdf(fit, ecdf, hi) < p_target:
            hi *= 2.0
            if hi > 1e12:
                raise EvdError("return-value bracket exceeded 1e12 m")
    lo = 0.0
    for _ in range(BISECTION_MAX_ITER):
        if hi - lo <= BISECTION_TOL:
            break
        mid = 0.5 * (lo + hi)
        if swh_cdf(fit, ecdf, mid) >= p_target:
            hi = mid
        else:
            lo = mid
    return ReturnValueEstimate(
        location_id=ecdf.location_id, T=float(T), T0=float(T0), n=int(n),
        value=hi, method=method, estimator=estimator, flag=flag,
    )


def run_stme(
    catalog: CycloneCatalog,
    region: RegionSpec,
    n: int,
    T: float,
    method: str = "MLE",
    location_ids=None,
    use_all_events: bool = False,
) -> list[ReturnValueEstimate]:
    """Full STM-E pipeline: region selection, STM extraction, top-n threshold,
    GPD fit, per-location exposure ECDF and return value.

    T0 is the catalog duration. Per-location failures (no exposure data) are
    reported as warnings without aborting the other locations; a tail-fit
    failure aborts with an EvdError since no estimate is possible.
    """
    sub = select_region(catalog, region)
    stm = extract_stm(sub)
    retained, psi = top_n_events(stm, n)
    report = fit_gpd(retained.values, psi, method)
    if not report.converged:
        raise EvdError(f"{method} tail fit failed: {report.message}")
    exposures = extract_exposures(sub, stm)
    retained_ids = None if use_all_events else retained.event_ids
    if location_ids is None:
        location_ids = sub.location_ids
    estimates = []
    for loc in location_ids:
        try:
            ecdf = exposure_ecdf(exposures, loc, retained_ids)
            estimates.append(
                return_value(
                    report.params, ecdf, T=T, T0=sub.duration_years, n=n,
                    method=method.upper(), estimator="STME",
                )
            )
        except CatalogError as err:
            warnings.warn(f"location {loc}: {err}", stacklevel=2)
    return estimates
