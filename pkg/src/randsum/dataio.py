"""Ingestion of raw tree-ring data and the canonical panel CSV format.

The pipeline goes: ring widths per tree -> basal-area increments ->
site-year aggregates (y, n) -> design matrix with seasonal climate and
lagged defoliation columns -> ``PanelSeries``.  The panel CSV written and
read here is the interchange format for every CLI command.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .model import PanelSeries

logger = logging.getLogger(__name__)

AGE_BREAKS = (75, 100, 125, 150)
SEASONS = ("spring", "summer")
DEFOLIATION_COLUMN = "defoliation"


@dataclass(frozen=True)
class RawTreeSeries:
    """One tree's ring-width record, widths in mm, years strictly increasing."""

    site_id: str
    tree_id: str
    years: np.ndarray
    widths_mm: np.ndarray

    def __post_init__(self) -> None:
        years = np.asarray(self.years, dtype=int)
        widths = np.asarray(self.widths_mm, dtype=float)
        if years.ndim != 1 or years.shape != widths.shape:
            raise ValueError(
                f"tree {self.tree_id}: years and widths must be matching 1-d arrays"
            )
        if years.size == 0:
            raise ValueError(f"tree {self.tree_id}: empty ring series")
        if np.any(np.diff(years) <= 0):
            raise ValueError(f"tree {self.tree_id}: years must be strictly increasing")
        years.flags.writeable = False
        widths.flags.writeable = False
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "widths_mm", widths)

    def age_at(self, year: int) -> int:
        """Ring count up to and including ``year``; 0 before the first ring."""
        return int(np.count_nonzero(self.years <= year))


def ring_width_to_bai(series: RawTreeSeries) -> np.ndarray:
    """Convert ring widths (mm) to basal-area increments (cm^2).

    The cumulative radius after each ring gives nested disks; the increment
    is the annulus area pi * (r_t^2 - r_{t-1}^2), with radius zero before
    the first ring.  Sums of consecutive increments telescope to the disk
    area at the outer radius.
    """
    bad = np.flatnonzero(~(series.widths_mm > 0))
    if bad.size:
        year = int(series.years[bad[0]])
        raise ValueError(
            f"tree {series.tree_id}: nonpositive ring width at year {year}"
        )
    radius_cm = np.cumsum(series.widths_mm) / 10.0
    previous = np.concatenate(([0.0], radius_cm[:-1]))
    return math.pi * (radius_cm**2 - previous**2)


def aggregate_panel(
    trees: list[RawTreeSeries], window: tuple[int, int]
) -> tuple[pd.DataFrame, list[tuple[str, int]]]:
    """Sum per-tree increments into site-year totals over ``window``.

    Returns the long table (site_id, year, y, n) holding only site-years
    with at least one contributing tree, plus the list of excluded
    site-years: window years where no tree of the site contributed a ring,
    which would give n = 0 and cannot enter the model.
    """
    if not trees:
        raise ValueError("no trees to aggregate")
    start, end = int(window[0]), int(window[1])
    if end < start:
        raise ValueError(f"empty window {window}")
    sums: dict[tuple[str, int], float] = {}
    counts: dict[tuple[str, int], int] = {}
    site_order: list[str] = []
    for tree in trees:
        if tree.site_id not in site_order:
            site_order.append(tree.site_id)
        bai = ring_width_to_bai(tree)
        inside = (tree.years >= start) & (tree.years <= end)
        for year, value in zip(tree.years[inside], bai[inside]):
            key = (tree.site_id, int(year))
            sums[key] = sums.get(key, 0.0) + float(value)
            counts[key] = counts.get(key, 0) + 1
    rows = []
    exclusions = []
    for site in site_order:
        for year in range(start, end + 1):
            key = (site, year)
            if key in counts:
                rows.append(
                    {"site_id": site, "year": year, "y": sums[key], "n": counts[key]}
                )
            else:
                exclusions.append(key)
    return pd.DataFrame(rows, columns=["site_id", "year", "y", "n"]), exclusions


def split_age_classes(
    trees: list[RawTreeSeries],
    breaks: tuple[int, ...] = AGE_BREAKS,
    reference_year: int | None = None,
) -> list[list[RawTreeSeries]]:
    """Partition trees into len(breaks) + 1 age classes at ``reference_year``.

    Classes use the convention [low, high): with the default breaks a
    75-ring tree lands in the second class.  Trees with no ring at or
    before the reference year have no determinable age there; they are
    excluded and logged.
    """
    if reference_year is None:
        raise ValueError("reference_year is required to place trees in age classes")
    edges = np.asarray(breaks, dtype=int)
    classes: list[list[RawTreeSeries]] = [[] for _ in range(edges.size + 1)]
    for tree in trees:
        age = tree.age_at(reference_year)
        if age <= 0:
            logger.warning(
                "tree %s (site %s) has no determinable age at %d; excluded",
                tree.tree_id,
                tree.site_id,
                reference_year,
            )
            continue
        classes[int(np.searchsorted(edges, age, side="right"))].append(tree)
    return classes


@dataclass(frozen=True)
class DesignSpec:
    """Which columns the design matrix carries, and the model order.

    ``climate`` lists base variable names; each expands to four columns:
    current spring, current summer, previous spring, previous summer.
    Defoliation enters as lags 1..defol_lags, and with ``interactions`` the
    lag-1 defoliation level multiplies every climate column.  At most one
    of the precipitation/moisture-index families may appear.
    """

    climate: tuple = ()
    defol_lags: int = 5
    interactions: bool = False
    p: int = 1
    window: tuple[int, int] | None = None
    seasons: tuple = SEASONS

    def __post_init__(self) -> None:
        object.__setattr__(self, "climate", tuple(str(c) for c in self.climate))
        object.__setattr__(self, "seasons", tuple(str(s) for s in self.seasons))
        if self.defol_lags < 0:
            raise ValueError("defol_lags must be nonnegative")
        if self.p < 0:
            raise ValueError("p must be nonnegative")
        families = {name.split("_")[0].lower() for name in self.climate}
        if {"precip", "precipitation"} & families and {"cmi"} & families:
            raise ValueError(
                "choose one of precipitation or the climate moisture index, not both"
            )

    def climate_columns(self) -> list[str]:
        cols = []
        for var in self.climate:
            cols += [f"{var}_{s}" for s in self.seasons]
            cols += [f"{var}_{s}_prev" for s in self.seasons]
        return cols

    def column_names(self) -> list[str]:
        cols = self.climate_columns()
        cols += [f"defol_lag{j}" for j in range(1, self.defol_lags + 1)]
        if self.interactions:
            cols += [f"defol_lag1_x_{c}" for c in self.climate_columns()]
        return cols


def _covariate_lookup(covariates: pd.DataFrame) -> dict:
    table = {}
    for row in covariates.itertuples(index=False):
        table[(str(row.site_id), int(row.year))] = row
    return table


def build_design(
    panel_raw: pd.DataFrame, covariates: pd.DataFrame, spec: DesignSpec
) -> tuple[PanelSeries, dict]:
    """Assemble the fitting panel and its manifest from aggregated data.

    The analysis window is ``spec.window`` or the full span of years seen
    in ``panel_raw``.  A site enters only if it has y and n for every year
    of the window (holes are reported, not imputed).  The first p window
    years become the presample; observed years additionally need climate
    values for the current and previous year, while missing defoliation
    reads as level 0.

    Returns the panel plus a manifest recording column order, window,
    presample years, and everything that was dropped.
    """
    if panel_raw.empty:
        raise ValueError("no aggregated site-years to build a design from")
    years_present = panel_raw["year"].astype(int)
    if spec.window is not None:
        start, end = int(spec.window[0]), int(spec.window[1])
    else:
        start, end = int(years_present.min()), int(years_present.max())
    window_years = np.arange(start, end + 1)
    if window_years.size <= spec.p:
        raise ValueError(f"window {start}..{end} too short for p={spec.p}")

    sites_all = list(dict.fromkeys(panel_raw["site_id"].astype(str)))
    by_site_year = {
        (str(r.site_id), int(r.year)): (float(r.y), int(r.n))
        for r in panel_raw.itertuples(index=False)
    }
    kept, dropped = [], []
    for site in sites_all:
        holes = [int(yr) for yr in window_years if (site, yr) not in by_site_year]
        if holes:
            dropped.append({"site_id": site, "missing_years": holes})
        else:
            kept.append(site)
    if not kept:
        raise ValueError(f"no site covers the window {start}..{end} completely")

    columns = spec.column_names()
    climate_cols = spec.climate_columns()
    for col in sorted({c.removesuffix("_prev") for c in climate_cols}):
        if col not in covariates.columns:
            raise ValueError(f"covariate table lacks required column {col!r}")
    has_defol = DEFOLIATION_COLUMN in covariates.columns
    if spec.defol_lags > 0 and not has_defol:
        raise ValueError(f"covariate table lacks required column {DEFOLIATION_COLUMN!r}")
    lookup = _covariate_lookup(covariates)

    def climate_value(site: str, year: int, column: str) -> float:
        base = column.removesuffix("_prev")
        source_year = year - 1 if column.endswith("_prev") else year
        row = lookup.get((site, source_year))
        if row is None or pd.isna(getattr(row, base)):
            raise ValueError(f"missing covariate value: site {site}, year {source_year}, {base}")
        return float(getattr(row, base))

    defol_defaults = 0

    def defol_level(site: str, year: int) -> int:
        nonlocal defol_defaults
        row = lookup.get((site, year))
        value = getattr(row, DEFOLIATION_COLUMN, None) if row is not None else None
        if value is None or pd.isna(value):
            defol_defaults += 1
            return 0
        level = int(value)
        if level != value or not 0 <= level <= 3:
            raise ValueError(
                f"defoliation must be an integer level 0..3; site {site}, year {year} has {value}"
            )
        return level

    K = len(kept)
    total = window_years.size
    T = total - spec.p
    y = np.empty((K, total))
    n = np.empty((K, total), dtype=int)
    x = np.empty((K, T, len(columns)))
    for ki, site in enumerate(kept):
        for ti, year in enumerate(window_years):
            y[ki, ti], n[ki, ti] = by_site_year[(site, int(year))]
        for ti, year in enumerate(window_years[spec.p :]):
            values = [climate_value(site, int(year), c) for c in climate_cols]
            defols = [defol_level(site, int(year) - j) for j in range(1, spec.defol_lags + 1)]
            row = values + defols
            if spec.interactions:
                lag1 = defols[0] if defols else defol_level(site, int(year) - 1)
                row += [lag1 * v for v in values]
            x[ki, ti] = row

    panel = PanelSeries(
        site_ids=tuple(kept),
        years=window_years,
        p=spec.p,
        y=y,
        n=n,
        x=x,
        covariate_names=tuple(columns),
    )
    manifest = {
        "columns": columns,
        "sites": kept,
        "dropped_sites": dropped,
        "window": [start, end],
        "p": spec.p,
        "presample_years": [int(v) for v in window_years[: spec.p]],
        "climate": list(spec.climate),
        "defol_lags": spec.defol_lags,
        "interactions": spec.interactions,
        "defoliation_defaults_to_zero": defol_defaults,
    }
    return panel, manifest


def _format_value(value: float) -> str:
    return repr(float(value))


def write_panel_csv(panel: PanelSeries, path) -> None:
    """Write the canonical long-format panel CSV.

    Columns: site_id, year, y, n, then one column per covariate.  Rows are
    grouped by site in panel order, years ascending; the first p rows of
    each site are presample and leave the covariate cells empty.  Floats
    are written with shortest round-trip precision.
    """
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["site_id", "year", "y", "n", *panel.covariate_names])
        for k, site in enumerate(panel.site_ids):
            for ti, year in enumerate(panel.years):
                row = [site, int(year), _format_value(panel.y[k, ti]), int(panel.n[k, ti])]
                if ti < panel.p:
                    row += [""] * panel.m
                else:
                    row += [_format_value(v) for v in panel.x[k, ti - panel.p]]
                writer.writerow(row)


def read_panel_csv(path, p: int) -> PanelSeries:
    """Read a canonical panel CSV back into a ``PanelSeries``.

    The first ``p`` rows of every site become the presample; their
    covariate cells are ignored.  All sites must share one year axis.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header[:4] != ["site_id", "year", "y", "n"]:
            raise ValueError(
                f"{path}: header must start with site_id,year,y,n; got {header[:4]}"
            )
        covariate_names = tuple(header[4:])
        per_site: dict[str, list] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 + len(covariate_names):
                raise ValueError(f"{path}:{lineno}: expected {4 + len(covariate_names)} cells")
            site = row[0]
            if site not in per_site:
                per_site[site] = []
                order.append(site)
            per_site[site].append((lineno, row))
    if not order:
        raise ValueError(f"{path}: no data rows")

    reference_years = None
    y_rows, n_rows, x_rows = [], [], []
    for site in order:
        rows = per_site[site]
        years = [int(r[1][1]) for r in rows]
        if reference_years is None:
            reference_years = years
        elif years != reference_years:
            raise ValueError(f"{path}: site {site} has a different year axis than the first site")
        y_rows.append([float(r[1][2]) for r in rows])
        n_rows.append([int(r[1][3]) for r in rows])
        site_x = []
        for idx, (lineno, row) in enumerate(rows):
            if idx < p:
                continue
            cells = row[4:]
            if any(cell == "" for cell in cells):
                raise ValueError(f"{path}:{lineno}: missing covariate value in observed row")
            site_x.append([float(cell) for cell in cells])
        x_rows.append(site_x)

    return PanelSeries(
        site_ids=tuple(order),
        years=np.asarray(reference_years, dtype=int),
        p=p,
        y=np.asarray(y_rows),
        n=np.asarray(n_rows),
        x=np.asarray(x_rows) if covariate_names else np.zeros((len(order), len(reference_years) - p, 0)),
        covariate_names=covariate_names,
    )


def read_rings_csv(path) -> list[RawTreeSeries]:
    """Read raw ring measurements (site_id, tree_id, year, ring_width_mm)."""
    frame = pd.read_csv(path)
    required = {"site_id", "tree_id", "year", "ring_width_mm"}
    missing = required - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    trees = []
    for (site, tree), group in frame.groupby(["site_id", "tree_id"], sort=False):
        group = group.sort_values("year")
        trees.append(
            RawTreeSeries(
                site_id=str(site),
                tree_id=str(tree),
                years=group["year"].to_numpy(dtype=int),
                widths_mm=group["ring_width_mm"].to_numpy(dtype=float),
            )
        )
    return trees


def read_covariates_csv(path) -> pd.DataFrame:
    """Read the site-year covariate table; site_id and year are mandatory."""
    frame = pd.read_csv(path)
    for col in ("site_id", "year"):
        if col not in frame.columns:
            raise ValueError(f"{path}: missing column {col!r}")
    frame["site_id"] = frame["site_id"].astype(str)
    frame["year"] = frame["year"].astype(int)
    if frame.duplicated(subset=["site_id", "year"]).any():
        raise ValueError(f"{path}: duplicate (site_id, year) rows")
    return frame
