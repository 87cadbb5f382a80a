"""Cyclone footprint catalogs: loading, region selection, space-time maxima
and per-location exposures.

A catalog holds one footprint per cyclone event: the maximum significant
wave height (SWH, metres) reached at each location over the lifetime of the
event. The space-time maximum (STM) of an event is the largest footprint
value inside the analysis region; the exposure of a location to the event is
its footprint value expressed as a fraction of the STM.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


class CatalogError(ValueError):
    """Raised for malformed catalog inputs or invalid catalog operations."""


@dataclass(frozen=True)
class Location:
    id: int
    lon: float
    lat: float
    depth: float | None = None

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise CatalogError(f"location {self.id}: lon {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise CatalogError(f"location {self.id}: lat {self.lat} outside [-90, 90]")
        if self.depth is not None and self.depth < 0:
            raise CatalogError(f"location {self.id}: negative depth {self.depth}")


@dataclass(frozen=True)
class CycloneEvent:
    id: int
    footprint: dict[int, float]  # location id -> max SWH (m) over the event

    def __post_init__(self):
        for loc_id, swh in self.footprint.items():
            if not np.isfinite(swh) or swh < 0:
                raise CatalogError(
                    f"event {self.id}: invalid SWH {swh} at location {loc_id}"
                )


@dataclass(frozen=True)
class CycloneCatalog:
    locations: tuple[Location, ...]
    events: tuple[CycloneEvent, ...]
    duration_years: float

    def __post_init__(self):
        if self.duration_years <= 0:
            raise CatalogError(f"non-positive duration {self.duration_years}")
        ids = [loc.id for loc in self.locations]
        if len(set(ids)) != len(ids):
            raise CatalogError("duplicate location ids in catalog")
        known = set(ids)
        for ev in self.events:
            extra = set(ev.footprint) - known
            if extra:
                raise CatalogError(f"event {ev.id}: unknown location ids {sorted(extra)}")
            if not ev.footprint:
                raise CatalogError(f"event {ev.id}: empty footprint")

    @property
    def rate(self) -> float:
        """Implied event rate (events per year)."""
        return len(self.events) / self.duration_years

    @property
    def location_ids(self) -> tuple[int, ...]:
        return tuple(loc.id for loc in self.locations)

    def location(self, loc_id: int) -> Location:
        for loc in self.locations:
            if loc.id == loc_id:
                return loc
        raise CatalogError(f"unknown location id {loc_id}")


@dataclass(frozen=True)
class RegionSpec:
    """Analysis region: bounding box and/or explicit id list, optional depth filter.

    When both a bounding box and an id list are given, a location must satisfy
    both. A region must resolve to at least one catalog location.
    """

    lon_min: float | None = None
    lon_max: float | None = None
    lat_min: float | None = None
    lat_max: float | None = None
    location_ids: tuple[int, ...] | None = None
    min_depth: float | None = None

    def resolve(self, catalog: CycloneCatalog) -> list[int]:
        wanted = set(self.location_ids) if self.location_ids is not None else None
        out = []
        for loc in catalog.locations:
            if wanted is not None and loc.id not in wanted:
                continue
            if self.lon_min is not None and loc.lon < self.lon_min:
                continue
            if self.lon_max is not None and loc.lon > self.lon_max:
                continue
            if self.lat_min is not None and loc.lat < self.lat_min:
                continue
            if self.lat_max is not None and loc.lat > self.lat_max:
                continue
            if self.min_depth is not None and (loc.depth is None or loc.depth < self.min_depth):
                continue
            out.append(loc.id)
        if not out:
            raise CatalogError("region resolves to no catalog location")
        return out


@dataclass(frozen=True)
class StmSeries:
    """Per-event space-time maximum within a region."""

    event_ids: np.ndarray  # int
    values: np.ndarray  # metres
    argmax_location_ids: np.ndarray  # int

    def __post_init__(self):
        object.__setattr__(self, "event_ids", np.asarray(self.event_ids, dtype=int))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(
            self, "argmax_location_ids", np.asarray(self.argmax_location_ids, dtype=int)
        )
        if not (len(self.event_ids) == len(self.values) == len(self.argmax_location_ids)):
            raise CatalogError("StmSeries arrays must have equal length")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ExposureMatrix:
    """Events x locations exposure fractions; NaN marks absent footprint entries."""

    event_ids: np.ndarray  # int, rows
    location_ids: np.ndarray  # int, columns
    values: np.ndarray  # float in [0,1], NaN where no data

    def __post_init__(self):
        object.__setattr__(self, "event_ids", np.asarray(self.event_ids, dtype=int))
        object.__setattr__(self, "location_ids", np.asarray(self.location_ids, dtype=int))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != (len(self.event_ids), len(self.location_ids)):
            raise CatalogError("ExposureMatrix shape mismatch")

    def column(self, location_id: int) -> np.ndarray:
        idx = np.nonzero(self.location_ids == location_id)[0]
        if idx.size == 0:
            raise CatalogError(f"location {location_id} not in exposure matrix")
        return self.values[:, idx[0]]


def _parse_float(text: str, what: str, path, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise CatalogError(f"{path}:{line_no}: bad {what} value {text!r}") from None


def load_catalog(footprint_file, locations_file, duration_years: float) -> CycloneCatalog:
    """Load a catalog from footprint and location CSV files.

    Schemas: footprints `cyclone_id,location_id,max_swh_m`, one row per
    (event, location); locations `location_id,lon_deg,lat_deg,depth_m`
    (depth may be empty). Events whose footprint is entirely zero carry no
    exposure information and are dropped with a warning.
    """
    locations = []
    with open(locations_file, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"location_id", "lon_deg", "lat_deg", "depth_m"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise CatalogError(f"{locations_file}: expected header {sorted(expected)}")
        for line_no, row in enumerate(reader, start=2):
            depth_text = (row["depth_m"] or "").strip()
            locations.append(
                Location(
                    id=int(row["location_id"]),
                    lon=_parse_float(row["lon_deg"], "lon", locations_file, line_no),
                    lat=_parse_float(row["lat_deg"], "lat", locations_file, line_no),
                    depth=_parse_float(depth_text, "depth", locations_file, line_no)
                    if depth_text
                    else None,
                )
            )
    known_ids = {loc.id for loc in locations}

    footprints: dict[int, dict[int, float]] = {}
    with open(footprint_file, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"cyclone_id", "location_id", "max_swh_m"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise CatalogError(f"{footprint_file}: expected header {sorted(expected)}")
        for line_no, row in enumerate(reader, start=2):
            ev_id = int(row["cyclone_id"])
            loc_id = int(row["location_id"])
            swh = _parse_float(row["max_swh_m"], "max_swh_m", footprint_file, line_no)
            if not np.isfinite(swh) or swh < 0:
                raise CatalogError(f"{footprint_file}:{line_no}: invalid SWH {swh}")
            if loc_id not in known_ids:
                raise CatalogError(f"{footprint_file}:{line_no}: unknown location id {loc_id}")
            fp = footprints.setdefault(ev_id, {})
            if loc_id in fp:
                raise CatalogError(
                    f"{footprint_file}:{line_no}: duplicate (event {ev_id}, location {loc_id})"
                )
            fp[loc_id] = swh

    events = []
    for ev_id in sorted(footprints):
        fp = footprints[ev_id]
        if max(fp.values()) == 0.0:
            warnings.warn(
                f"event {ev_id}: all-zero footprint, dropped (no defined exposure)",
                stacklevel=2,
            )
            continue
        events.append(CycloneEvent(id=ev_id, footprint=fp))
    return CycloneCatalog(
        locations=tuple(locations), events=tuple(events), duration_years=float(duration_years)
    )


def select_region(catalog: CycloneCatalog, region: RegionSpec) -> CycloneCatalog:
    """Restrict a catalog to a region.

    Events with no footprint entry inside the region are dropped; events whose
    in-region footprint is entirely zero are dropped with a warning (the
    within-region STM would be zero, leaving exposures undefined). The
    duration is unchanged: later STM extraction is conditional on the region.
    """
    keep_ids = set(region.resolve(catalog))
    locations = tuple(loc for loc in catalog.locations if loc.id in keep_ids)
    events = []
    for ev in catalog.events:
        fp = {j: v for j, v in ev.footprint.items() if j in keep_ids}
        if not fp:
            continue
        if max(fp.values()) == 0.0:
            warnings.warn(
                f"event {ev.id}: zero footprint within region, dropped", stacklevel=2
            )
            continue
        events.append(CycloneEvent(id=ev.id, footprint=fp))
    if not events:
        raise CatalogError("region drops all events")
    return CycloneCatalog(
        locations=locations, events=tuple(events), duration_years=catalog.duration_years
    )


def extract_stm(catalog: CycloneCatalog) -> StmSeries:
    """Space-time maximum per event: the largest footprint value in the catalog's
    region. Argmax ties break to the lowest location id."""
    if not catalog.events:
        raise CatalogError("empty catalog")
    ev_ids, values, arg_ids = [], [], []
    for ev in catalog.events:
        best_loc = min(
            ev.footprint, key=lambda j: (-ev.footprint[j], j)
        )  # max value, lowest id on ties
        ev_ids.append(ev.id)
        values.append(ev.footprint[best_loc])
        arg_ids.append(best_loc)
    return StmSeries(np.array(ev_ids), np.array(values), np.array(arg_ids))


def extract_exposures(catalog: CycloneCatalog, stm: StmSeries) -> ExposureMatrix:
    """Exposure E_j = footprint(j) / STM per event; absent entries stay NaN."""
    stm_by_event = dict(zip(stm.event_ids.tolist(), stm.values.tolist()))
    loc_ids = np.array(catalog.location_ids, dtype=int)
    col = {j: k for k, j in enumerate(loc_ids.tolist())}
    ev_ids = np.array([ev.id for ev in catalog.events], dtype=int)
    values = np.full((len(ev_ids), len(loc_ids)), np.nan)
    for i, ev in enumerate(catalog.events):
        s = stm_by_event.get(ev.id)
        if s is None:
            raise CatalogError(f"event {ev.id} missing from STM series")
        if s <= 0:
            raise CatalogError(f"event {ev.id}: degenerate STM {s}")
        for j, v in ev.footprint.items():
            values[i, col[j]] = v / s
    return ExposureMatrix(ev_ids, loc_ids, values)


def threshold_for_top_n(values: np.ndarray, n: int) -> float:
    """Peaks-over-threshold level leaving the n largest values above it.

    For n < len(values) this is the (n+1)-th largest value; for n equal to the
    sample size it is the sample minimum less a machine-scale margin. When the
    n-th and (n+1)-th largest tie, the level is nudged below the tie so that
    the n retained values strictly exceed it.
    """
    values = np.asarray(values, dtype=float)
    n0 = values.size
    if not 1 <= n <= n0:
        raise CatalogError(f"n={n} outside [1, {n0}]")
    desc = np.sort(values)[::-1]
    if n == n0:
        m = desc[-1]
        return m - max(1e-12, abs(m) * 1e-12)
    psi = desc[n]
    if psi == desc[n - 1]:  # tie at the threshold
        psi = psi - max(1e-12, abs(psi) * 1e-12)
    return float(psi)


def top_n_events(stm: StmSeries, n: int) -> tuple[StmSeries, float]:
    """Retain the n largest STM values and return them with the threshold.

    Ties are resolved by retaining exactly n events, preferring lower event
    id, so the selection is deterministic.
    """
    n0 = len(stm)
    if not 1 <= n <= n0:
        raise CatalogError(f"n={n} outside [1, {n0}]")
    order = sorted(range(n0), key=lambda i: (-stm.values[i], stm.event_ids[i]))
    keep = sorted(order[:n])  # preserve original event order
    psi = threshold_for_top_n(stm.values, n)
    retained = StmSeries(
        stm.event_ids[keep], stm.values[keep], stm.argmax_location_ids[keep]
    )
    return retained, psi
