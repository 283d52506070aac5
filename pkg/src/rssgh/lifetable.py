"""Population (background) mortality from life tables.

Rates are piecewise constant on integer age x calendar year (Lexis) cells.
Each stratum, identified by a tuple of key values such as
``(sex, deprivation, region)``, holds a full ``years x ages`` grid.  Queries
outside the grid are clamped to the nearest band; rate lookups at attained
ages beyond the last band are counted in ``LifeTable.clamp_count``.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .errors import DomainError, LifeTableLookupError

log = logging.getLogger(__name__)

DEFAULT_KEYS = ("sex", "deprivation", "region")


def norm_key_value(v) -> str:
    """Canonical string form of a stratum key value (``2.0`` and ``"2"`` agree)."""
    s = str(v).strip()
    try:
        f = float(s)
    except ValueError:
        return s
    if np.isfinite(f) and f == int(f):
        return str(int(f))
    return repr(f)


class LifeTable:
    """Stratified piecewise-constant hazard table.

    Parameters
    ----------
    key_columns : names of the stratum key fields.
    keys : sequence of key tuples, one per stratum.
    ages, years : consecutive integer lower bounds of the age and year bands.
    rates : array of shape ``(n_strata, n_years, n_ages)``, annual hazards.
    """

    def __init__(self, key_columns, keys, ages, years, rates):
        self.key_columns = tuple(key_columns)
        self.keys = [tuple(norm_key_value(v) for v in k) for k in keys]
        self.ages = np.asarray(ages, dtype=np.int64)
        self.years = np.asarray(years, dtype=np.int64)
        self.rates = np.asarray(rates, dtype=float)
        if self.rates.shape != (len(self.keys), self.years.size, self.ages.size):
            raise DomainError(
                f"rates shape {self.rates.shape} does not match "
                f"{len(self.keys)} strata x {self.years.size} years x {self.ages.size} ages"
            )
        for name, grid in (("age", self.ages), ("year", self.years)):
            if grid.size == 0 or np.any(np.diff(grid) != 1):
                raise DomainError(f"{name} bands must be consecutive integers")
        if np.any(~np.isfinite(self.rates)) or np.any(self.rates < 0):
            raise DomainError("life-table rates must be finite and >= 0")
        if len(set(self.keys)) != len(self.keys):
            raise DomainError("duplicate stratum keys in life table")
        self._index = {k: i for i, k in enumerate(self.keys)}
        with np.errstate(divide="ignore"):
            self._log_rates = np.log(self.rates)
        self.clamp_count = 0

    def __repr__(self):
        return (
            f"LifeTable(strata={len(self.keys)}, ages={self.ages[0]}..{self.ages[-1]}, "
            f"years={self.years[0]}..{self.years[-1]})"
        )

    # -- construction helpers -------------------------------------------------

    @classmethod
    def constant(cls, rate: float, key_columns=(), keys=((),), ages=(0,), years=(2000,)):
        """Table with the same rate in every cell."""
        ages = np.asarray(ages)
        years = np.asarray(years)
        rates = np.full((len(keys), years.size, ages.size), float(rate))
        return cls(key_columns, keys, ages, years, rates)

    @classmethod
    def from_rows(cls, rows, key_columns=None) -> "LifeTable":
        """Build from dict rows with ``age``, ``year``, ``rate`` and key fields."""
        rows = list(rows)
        if not rows:
            raise DomainError("empty life table")
        if key_columns is None:
            key_columns = tuple(c for c in rows[0] if c not in ("age", "year", "rate"))
        cells = {}
        for i, row in enumerate(rows):
            try:
                age = int(float(row["age"]))
                year = int(float(row["year"]))
                rate = float(row["rate"])
            except (KeyError, ValueError) as exc:
                raise DomainError(f"life-table row {i + 1}: {exc}") from None
            key = tuple(norm_key_value(row[c]) for c in key_columns)
            cell = (key, year, age)
            if cell in cells:
                raise DomainError(f"duplicate life-table row for stratum {key}, year {year}, age {age}")
            cells[cell] = rate
        keys = sorted({c[0] for c in cells})
        years = np.arange(min(c[1] for c in cells), max(c[1] for c in cells) + 1)
        ages = np.arange(min(c[2] for c in cells), max(c[2] for c in cells) + 1)
        rates = np.full((len(keys), years.size, ages.size), np.nan)
        kidx = {k: i for i, k in enumerate(keys)}
        for (key, year, age), rate in cells.items():
            rates[kidx[key], year - years[0], age - ages[0]] = rate
        missing = np.argwhere(np.isnan(rates))
        if missing.size:
            k, y, a = missing[0]
            raise DomainError(
                f"life table grid incomplete: stratum {keys[k]} lacks year {years[y]}, age {ages[a]}"
            )
        return cls(key_columns, keys, ages, years, rates)

    def to_rows(self):
        for k, key in enumerate(self.keys):
            for y, year in enumerate(self.years):
                for a, age in enumerate(self.ages):
                    row = dict(zip(self.key_columns, key))
                    row.update(age=int(age), year=int(year), rate=float(self.rates[k, y, a]))
                    yield row

    # -- lookups --------------------------------------------------------------

    def stratum_index(self, key_values) -> np.ndarray:
        """Map per-record key tuples (or a ``{column: array}`` dict) to strata."""
        if isinstance(key_values, dict):
            cols = [np.asarray(key_values[c]) for c in self.key_columns]
            n = len(cols[0]) if cols else len(next(iter(key_values.values()), []))
            tuples = list(zip(*cols)) if cols else [()] * n
        else:
            tuples = list(key_values)
        out = np.empty(len(tuples), dtype=np.int64)
        cache = {}
        for i, t in enumerate(tuples):
            t = tuple(t)
            j = cache.get(t)
            if j is None:
                norm = tuple(norm_key_value(v) for v in t)
                j = self._index.get(norm)
                if j is None:
                    desc = ", ".join(f"{c}={v}" for c, v in zip(self.key_columns, norm))
                    raise LifeTableLookupError(f"no life-table stratum for ({desc})")
                cache[t] = j
            out[i] = j
        return out

    def _cell(self, age, year, count: bool = True):
        # calendar years outside the grid reuse the edge year silently;
        # attained ages beyond the last band are counted
        ai = np.floor(age).astype(np.int64) - self.ages[0]
        yi = np.floor(year).astype(np.int64) - self.years[0]
        n_over = int(np.count_nonzero(ai >= self.ages.size)) if count else 0
        if n_over:
            if self.clamp_count == 0:
                log.warning("life-table query outside the age/year grid; clamping to edge bands")
            self.clamp_count += n_over
        return np.clip(ai, 0, self.ages.size - 1), np.clip(yi, 0, self.years.size - 1)

    def log_rate(self, strata, age, year) -> np.ndarray:
        """``log h_P`` at attained ``age`` and calendar ``year``."""
        strata = np.asarray(strata, dtype=np.int64)
        ai, yi = self._cell(np.asarray(age, dtype=float), np.asarray(year, dtype=float))
        return self._log_rates[strata, yi, ai]

    def rate(self, strata, age, year) -> np.ndarray:
        return np.exp(self.log_rate(strata, age, year))

    def _walk(self, strata, age0, year0, budget, use_hazard: bool):
        """Walk Lexis cells along the diagonal from ``(age0, year0)``.

        With ``use_hazard`` false, ``budget`` is a duration and the return is the
        cumulative hazard accrued over it.  Otherwise ``budget`` is a hazard
        amount and the return is the time at which it is exhausted.
        """
        strata = np.asarray(strata, dtype=np.int64)
        age0 = np.asarray(age0, dtype=float)
        year0 = np.asarray(year0, dtype=float)
        budget = np.asarray(budget, dtype=float)
        n = budget.size
        elapsed = np.zeros(n)
        acc = np.zeros(n)
        out = np.full(n, np.inf) if use_hazard else np.zeros(n)
        active = budget > 0
        a_last = self.ages[-1] + 1
        y_last = self.years[-1] + 1
        while active.any():
            idx = np.nonzero(active)[0]
            age = age0[idx] + elapsed[idx]
            year = year0[idx] + elapsed[idx]
            # land exactly on boundaries: nudge the lookup inside the cell
            ai, yi = self._cell(age + 1e-12, year + 1e-12, count=False)
            rate = self.rates[strata[idx], yi, ai]
            # next boundary; beyond the grid the edge band extends forever
            da = np.where(age + 1e-12 >= a_last, np.inf, np.floor(age + 1e-12) + 1.0 - age)
            dy = np.where(year + 1e-12 >= y_last, np.inf, np.floor(year + 1e-12) + 1.0 - year)
            width = np.minimum(da, dy)
            if use_hazard:
                need = budget[idx] - acc[idx]
                with np.errstate(divide="ignore", invalid="ignore"):
                    dt = np.where(rate > 0, need / rate, np.inf)
                hit = dt <= width
                out[idx[hit]] = elapsed[idx[hit]] + dt[hit]
                stuck = ~hit & ~np.isfinite(width)
                finished = hit | stuck
            else:
                remaining = budget[idx] - elapsed[idx]
                step = np.minimum(width, remaining)
                with np.errstate(invalid="ignore"):
                    acc[idx] += np.where((step > 0) & (rate > 0), rate * step, 0.0)
                hit = width >= remaining
                out[idx[hit]] = acc[idx[hit]]
                finished = hit
            go = idx[~finished]
            if use_hazard:
                acc[go] += rate[~finished] * width[~finished]
            elapsed[go] += width[~finished]
            active[idx[finished]] = False
        return out

    def cum_rate(self, strata, age0, year0, t) -> np.ndarray:
        """``H_P(age0 + t) - H_P(age0)`` along the Lexis diagonal."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("time must be >= 0")
        shape = t.shape
        age0, year0, strata = (np.broadcast_to(v, shape).ravel() for v in (age0, year0, strata))
        return self._walk(strata, age0, year0, t.ravel(), use_hazard=False).reshape(shape)

    def sample_time(self, strata, age0, year0, rng) -> np.ndarray:
        """Draw population death times by walking cells with exponential increments.

        Returns ``inf`` when the remaining rate is zero forever.
        """
        strata = np.asarray(strata, dtype=np.int64)
        e = rng.exponential(size=strata.size)
        return self._walk(strata, np.asarray(age0, float), np.asarray(year0, float), e, use_hazard=True)

    def inverse_cum_rate(self, strata, age0, year0, target) -> np.ndarray:
        target = np.asarray(target, dtype=float)
        return self._walk(np.asarray(strata), np.asarray(age0, float), np.asarray(year0, float),
                          target, use_hazard=True)


def population_hazard(table: LifeTable, strata, age, year, t) -> np.ndarray:
    """Rate at attained age ``age + t`` and calendar year ``year + t``."""
    t = np.asarray(t, dtype=float)
    return table.rate(strata, np.asarray(age) + t, np.asarray(year) + t)


def population_cum_hazard(table: LifeTable, strata, age, year, t) -> np.ndarray:
    return table.cum_rate(strata, age, year, t)


def load_lifetable(path) -> LifeTable:
    """Read a CSV with columns ``age, year, rate`` plus stratum key columns."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DomainError(f"{path}: missing header row")
        fields = [f.strip() for f in reader.fieldnames]
        for need in ("age", "year", "rate"):
            if need not in fields:
                raise DomainError(f"{path}: missing column {need!r}")
        rows = [{k.strip(): v for k, v in row.items()} for row in reader]
    key_columns = tuple(f for f in fields if f not in ("age", "year", "rate"))
    try:
        return LifeTable.from_rows(rows, key_columns)
    except DomainError as exc:
        raise DomainError(f"{path}: {exc}") from None


def save_lifetable(table: LifeTable, path) -> None:
    fields = list(table.key_columns) + ["age", "year", "rate"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in table.to_rows():
            row["rate"] = repr(row["rate"])
            w.writerow(row)


def synthetic_lifetable(n_regions: int = 9, years=(2010,), ages=range(0, 111), base_log_rate: float = -10.5,
                        age_slope: float = 0.095, sex_ratio: float = 0.7,
                        deprivation_step: float = 0.08, region_spread: float = 0.1) -> LifeTable:
    """Gompertz-shaped table stratified by sex (0, 1), deprivation (1-5) and region.

    ``log h = base + slope * age + log(sex factor) + dep_step * (dep - 1)
    + region offset``; the region offsets run linearly from ``+spread`` to
    ``-spread``.
    """
    ages = np.asarray(list(ages))
    years = np.asarray(list(years))
    reg_off = np.linspace(region_spread, -region_spread, n_regions)
    keys, blocks = [], []
    for sex in (0, 1):
        for dep in range(1, 6):
            for reg in range(1, n_regions + 1):
                lr = (
                    base_log_rate
                    + age_slope * (ages + 0.5)
                    + (np.log(sex_ratio) if sex == 1 else 0.0)
                    + deprivation_step * (dep - 1)
                    + reg_off[reg - 1]
                )
                keys.append((sex, dep, reg))
                blocks.append(np.broadcast_to(np.exp(lr), (years.size, ages.size)))
    return LifeTable(DEFAULT_KEYS, keys, ages, years, np.stack(blocks))
