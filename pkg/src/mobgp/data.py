"""Mobility-report and county death-count ingestion, region joining, synthetic data."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .epimodel import rollout
from .errors import FormatError, GapError, InputError, JoinError, ValidationError
from .mobility import CATEGORIES, beta_series, percent_to_level
from .params import ParamSet

MOBILITY_SUFFIX = "_percent_change_from_baseline"
MOBILITY_KEYS = (
    "country_region_code",
    "country_region",
    "sub_region_1",
    "sub_region_2",
    "metro_area",
    "iso_3166_2_code",
    "census_fips_code",
    "place_id",
    "date",
)
DEATHS_HEADER = ("date", "county", "state", "fips", "cases", "deaths")


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    raw: str


@dataclass(frozen=True)
class MobilityRow:
    keys: dict  # region key columns as written in the file (everything but date)
    date: str
    values: dict  # category -> percent change, None when missing

    @property
    def fips(self) -> str:
        return normalize_fips(self.keys.get("census_fips_code", ""))


@dataclass(frozen=True)
class DeathsRow:
    date: str
    county: str
    state: str
    fips: str
    cases: int
    deaths: int


@dataclass
class RegionDataset:
    region_id: str
    population: float
    days: tuple[str, ...]
    mobility: np.ndarray  # (days, K) levels, 1.0 = baseline
    deaths_raw: np.ndarray  # cumulative counts
    categories: tuple[str, ...] = ()
    smoothed: bool = False  # deaths are already a clean cumulative target

    def __post_init__(self):
        self.days = tuple(self.days)
        self.mobility = np.asarray(self.mobility, dtype=float)
        self.deaths_raw = np.asarray(self.deaths_raw, dtype=float)
        self.categories = tuple(self.categories)
        n = len(self.days)
        if self.mobility.ndim != 2 or self.mobility.shape[0] != n or self.deaths_raw.shape != (n,):
            raise ValidationError(f"region {self.region_id}: series are not aligned to {n} days")
        if self.categories and len(self.categories) != self.mobility.shape[1]:
            raise ValidationError("category names do not match mobility columns")
        if not self.population > 0:
            raise ValidationError(f"region {self.region_id}: population must be positive")
        if not np.all(self.mobility > 0):
            raise ValidationError(f"region {self.region_id}: mobility levels must be positive")
        if np.any(self.deaths_raw < 0):
            raise ValidationError(f"region {self.region_id}: negative death counts")

    @property
    def K(self) -> int:
        return self.mobility.shape[1]

    def __len__(self) -> int:
        return len(self.days)

    def to_json(self) -> dict:
        obj = {
            "region_id": self.region_id,
            "population": self.population,
            "dates": list(self.days),
            "mobility": self.mobility.tolist(),
            "deaths": self.deaths_raw.tolist(),
        }
        if self.smoothed:
            obj["smoothed"] = True
        return obj

    @classmethod
    def from_json(cls, obj: dict, categories: Sequence[str] = ()) -> "RegionDataset":
        return cls(
            region_id=str(obj["region_id"]),
            population=float(obj["population"]),
            days=obj["dates"],
            mobility=obj["mobility"],
            deaths_raw=obj["deaths"],
            categories=categories,
            smoothed=bool(obj.get("smoothed", False)),
        )


def save_datasets(datasets: Sequence[RegionDataset], path) -> None:
    categories = list(datasets[0].categories) if datasets else []
    obj = {"categories": categories, "regions": [d.to_json() for d in datasets]}
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_datasets(path) -> list[RegionDataset]:
    try:
        obj = json.loads(Path(path).read_text())
        cats = obj.get("categories", [])
        return [RegionDataset.from_json(r, cats) for r in obj["regions"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed dataset file {path}: {exc}") from exc


def normalize_fips(raw: str) -> str:
    raw = (raw or "").strip()
    if not raw:
        return ""
    if raw.endswith(".0"):
        raw = raw[:-2]
    return raw.zfill(5) if raw.isdigit() else raw


def _parse_date(s: str) -> str:
    return dt.date.fromisoformat(s.strip()).isoformat()


def _fmt_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# -- mobility reports --------------------------------------------------------
def parse_mobility_csv(fh: TextIO) -> tuple[list[MobilityRow], list[Reject]]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if not header:
        raise FormatError("mobility file has no header row")
    header = [h.strip() for h in header]
    unknown = [h for h in header if h not in MOBILITY_KEYS and not h.endswith(MOBILITY_SUFFIX)]
    if unknown:
        raise FormatError(f"unknown mobility columns: {unknown}")
    if "date" not in header:
        raise FormatError("mobility file lacks a date column")
    cat_cols = [h for h in header if h.endswith(MOBILITY_SUFFIX)]
    if not cat_cols:
        raise FormatError("mobility file has no *_percent_change_from_baseline columns")
    rows, rejects = [], []
    for lineno, rec in enumerate(reader, start=2):
        raw = ",".join(rec)
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            rejects.append(Reject(lineno, f"expected {len(header)} fields, got {len(rec)}", raw))
            continue
        fields_ = dict(zip(header, rec))
        try:
            date = _parse_date(fields_["date"])
        except ValueError:
            rejects.append(Reject(lineno, f"unparseable date {fields_['date']!r}", raw))
            continue
        values, bad = {}, None
        for col in cat_cols:
            cat = col[: -len(MOBILITY_SUFFIX)]
            txt = fields_[col].strip()
            if not txt:
                values[cat] = None
                continue
            try:
                v = float(txt)
            except ValueError:
                bad = f"non-numeric {col} {txt!r}"
                break
            if not -100.0 <= v <= 500.0:
                bad = f"{col} = {v} outside [-100, 500]"
                break
            values[cat] = v
        if bad:
            rejects.append(Reject(lineno, bad, raw))
            continue
        keys = {k: fields_[k] for k in header if k in MOBILITY_KEYS and k != "date"}
        rows.append(MobilityRow(keys=keys, date=date, values=values))
    return rows, rejects


def write_mobility_csv(rows: Sequence[MobilityRow], fh: TextIO, categories: Sequence[str] = CATEGORIES) -> None:
    key_cols = [k for k in MOBILITY_KEYS if k != "date" and any(k in r.keys for r in rows)] if rows else [
        "country_region_code",
        "sub_region_1",
        "sub_region_2",
        "census_fips_code",
    ]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([*key_cols, "date", *(c + MOBILITY_SUFFIX for c in categories)])
    for r in rows:
        vals = [r.values.get(c) for c in categories]
        w.writerow([*(r.keys.get(k, "") for k in key_cols), r.date, *("" if v is None else _fmt_number(v) for v in vals)])


# -- death counts --------------------------------------------------------------
def parse_deaths_csv(fh: TextIO) -> tuple[list[DeathsRow], list[Reject]]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if not header:
        raise FormatError("deaths file is empty")
    header = [h.strip() for h in header]
    if set(header) != set(DEATHS_HEADER) or len(header) != len(DEATHS_HEADER):
        raise FormatError(f"deaths header must be {','.join(DEATHS_HEADER)}, got {','.join(header)}")
    rows, rejects = [], []
    for lineno, rec in enumerate(reader, start=2):
        raw = ",".join(rec)
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            rejects.append(Reject(lineno, f"expected {len(header)} fields, got {len(rec)}", raw))
            continue
        f = dict(zip(header, rec))
        try:
            date = _parse_date(f["date"])
        except ValueError:
            rejects.append(Reject(lineno, f"unparseable date {f['date']!r}", raw))
            continue
        fips = normalize_fips(f["fips"])
        if not fips:
            rejects.append(Reject(lineno, "missing fips", raw))
            continue
        try:
            cases, deaths = int(float(f["cases"])), int(float(f["deaths"]))
        except ValueError:
            rejects.append(Reject(lineno, "non-numeric cases/deaths", raw))
            continue
        if cases < 0 or deaths < 0:
            rejects.append(Reject(lineno, "negative count", raw))
            continue
        rows.append(DeathsRow(date, f["county"], f["state"], fips, cases, deaths))
    return rows, rejects


def write_deaths_csv(rows: Sequence[DeathsRow], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DEATHS_HEADER)
    for r in rows:
        w.writerow([r.date, r.county, r.state, r.fips, r.cases, r.deaths])


def write_rejects(rejects: Iterable[tuple[str, Reject]], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["source", "line", "reason", "raw"])
    for source, r in rejects:
        w.writerow([source, r.line, r.reason, r.raw])


def parse_population_csv(fh: TextIO) -> dict[str, float]:
    reader = csv.DictReader(fh)
    if not reader.fieldnames:
        raise FormatError("population file has no header row")
    id_col = "region_id" if "region_id" in reader.fieldnames else "fips"
    if id_col not in reader.fieldnames or "population" not in reader.fieldnames:
        raise FormatError("population file needs region_id (or fips) and population columns")
    out = {}
    for row in reader:
        try:
            out[normalize_fips(row[id_col])] = float(row["population"])
        except ValueError as exc:
            raise FormatError(f"bad population row {row}") from exc
    return out


# -- joining -------------------------------------------------------------------
def _date_range(start: str, end: str) -> list[str]:
    d0, d1 = dt.date.fromisoformat(start), dt.date.fromisoformat(end)
    if d1 < d0:
        raise InputError(f"empty date range {start} .. {end}")
    return [(d0 + dt.timedelta(days=i)).isoformat() for i in range((d1 - d0).days + 1)]


def join(
    mobility_rows: Sequence[MobilityRow],
    deaths_rows: Sequence[DeathsRow],
    region_ids: Sequence[str],
    start: str,
    end: str,
    categories: Sequence[str] = CATEGORIES,
    populations: Optional[dict[str, float]] = None,
) -> list[RegionDataset]:
    """Align mobility levels and cumulative deaths per region over ``start..end``.

    Missing mobility values carry the last observation forward; leading gaps
    read as baseline. Deaths before a region's first report are zero; any other
    missing day is an error.
    """
    dates = _date_range(start, end)
    populations = populations or {}
    available = set(mobility_rows[0].values) if mobility_rows else set()
    missing_cats = [c for c in categories if c not in available]
    if mobility_rows and missing_cats:
        raise FormatError(f"mobility data has no column for categories {missing_cats}")
    mob_by_region: dict[str, dict[str, MobilityRow]] = {}
    for r in mobility_rows:
        if r.fips:
            mob_by_region.setdefault(r.fips, {})
            prev = mob_by_region[r.fips].get(r.date)
            if prev is not None and prev.values != r.values:
                raise JoinError(f"conflicting mobility rows for region {r.fips} on {r.date}")
            mob_by_region[r.fips][r.date] = r
    deaths_by_region: dict[str, dict[str, DeathsRow]] = {}
    for r in deaths_rows:
        deaths_by_region.setdefault(r.fips, {})[r.date] = r

    out = []
    for rid in region_ids:
        rid_n = normalize_fips(rid)
        if rid_n not in mob_by_region:
            raise JoinError(f"region {rid} not found in the mobility data")
        if rid_n not in deaths_by_region:
            raise JoinError(f"region {rid} not found in the death counts")
        if rid_n not in populations:
            raise JoinError(f"no population given for region {rid}")
        mob, dth = mob_by_region[rid_n], deaths_by_region[rid_n]

        levels = np.empty((len(dates), len(categories)))
        last = [None] * len(categories)
        for i, d in enumerate(dates):
            row = mob.get(d)
            for k, cat in enumerate(categories):
                v = row.values.get(cat) if row is not None else None
                if v is None:
                    v = last[k] if last[k] is not None else 0.0
                last[k] = v
                levels[i, k] = percent_to_level(v)

        first_report = min(dth)
        deaths = np.empty(len(dates))
        for i, d in enumerate(dates):
            if d in dth:
                deaths[i] = dth[d].deaths
            elif d < first_report:
                deaths[i] = 0.0
            else:
                raise GapError(f"region {rid}: no death count reported for {d}")
        out.append(
            RegionDataset(
                region_id=rid_n,
                population=populations[rid_n],
                days=dates,
                mobility=levels,
                deaths_raw=deaths,
                categories=tuple(categories),
            )
        )
    return out


# -- synthetic data ------------------------------------------------------------
@dataclass
class SynthSpec:
    regions: int
    days: int
    true_params: ParamSet
    populations: dict[str, float]
    level_bounds: tuple[float, float] = (0.4, 1.1)
    step_scale: float = 0.03
    noise: float = 0.0
    start_date: str = "2020-07-01"
    categories: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.days < 14:
            raise ValidationError("synthetic series need at least 14 days")
        if len(self.true_params.per_region) != self.regions:
            raise ValidationError("true_params must cover exactly `regions` regions")
        lo, hi = self.level_bounds
        if not 0 < lo < hi:
            raise ValidationError("level bounds must satisfy 0 < lo < hi")


def region_ids(n: int) -> list[str]:
    return [f"{42001 + 2 * i:05d}" for i in range(n)]


def bounded_walk(rng: np.random.Generator, n: int, K: int, lo: float, hi: float, step: float) -> np.ndarray:
    x = np.empty((n, K))
    x[0] = rng.uniform(lo + 0.3 * (hi - lo), hi - 0.2 * (hi - lo), size=K)
    for t in range(1, n):
        v = x[t - 1] + rng.normal(0.0, step, size=K)
        v = np.where(v > hi, 2 * hi - v, v)
        v = np.where(v < lo, 2 * lo - v, v)
        x[t] = np.clip(v, lo, hi)
    return x


def synth_gen(spec: SynthSpec, seed: int) -> tuple[list[RegionDataset], dict[str, np.ndarray]]:
    """Datasets generated by the model itself, plus the noiseless D(t) per region."""
    rng = np.random.default_rng(seed)
    g = spec.true_params.global_params
    start = dt.date.fromisoformat(spec.start_date)
    days = [(start + dt.timedelta(days=i)).isoformat() for i in range(spec.days)]
    datasets, truth = [], {}
    for rid in sorted(spec.true_params.per_region):
        rp = spec.true_params.per_region[rid]
        K = rp.mobility_map.K
        mob = bounded_walk(rng, spec.days, K, *spec.level_bounds, spec.step_scale)
        beta = beta_series(mob, rp.mobility_map)
        D = rollout(rp.init, g, rp.mobility_map.gamma_A, beta, spec.days - 1).column("D")
        observed = D
        if spec.noise > 0:
            observed = D * np.exp(spec.noise * rng.standard_normal(D.size))
        cats = spec.categories or rp.mobility_map.categories or CATEGORIES[:K]
        datasets.append(
            RegionDataset(
                region_id=rid,
                population=spec.populations[rid],
                days=days,
                mobility=mob,
                deaths_raw=observed,
                categories=cats,
                smoothed=spec.noise == 0,
            )
        )
        truth[rid] = D
    return datasets, truth


def default_synth_spec(regions: int = 3, days: int = 82, K: int = 4, seed: int = 7, noise: float = 0.0) -> SynthSpec:
    """A reproducible ground-truth setting with a slowly growing epidemic."""
    from .epimodel import GlobalParams, RegionInit
    from .mobility import MobilityMapParams
    from .params import RegionParams

    rng = np.random.default_rng(seed)
    g = GlobalParams(rho_EI=0.2, rho_EA=0.15, rho_IR=0.1, rho_IH=0.02, rho_AR=0.12, rho_HR=0.08, alpha_D=0.25)
    per_region, pops = {}, {}
    cats = CATEGORIES[:K] if K <= len(CATEGORIES) else tuple(f"cat{k}" for k in range(K))
    for rid in region_ids(regions):
        N = float(rng.choice([4e5, 8e5, 1.5e6]))
        S0 = 0.5 * N
        theta = rng.uniform(0.2, 0.4, size=K) / (K * S0)
        alpha = rng.uniform(0.8, 1.6, size=K)
        mm = MobilityMapParams(theta=theta, alpha=alpha, b=0.01 / S0, gamma_A=float(rng.uniform(0.3, 0.7)), categories=cats)
        scale = N / 1e6
        init = RegionInit(
            S0=S0,
            E0=500 * scale * rng.uniform(0.7, 1.3),
            I0=300 * scale * rng.uniform(0.7, 1.3),
            A0=200 * scale * rng.uniform(0.7, 1.3),
            H0=80 * scale * rng.uniform(0.7, 1.3),
            R0=1000 * scale,
            D0=50 * scale,
        )
        per_region[rid] = RegionParams(mm, init)
        pops[rid] = N
    return SynthSpec(
        regions=regions,
        days=days,
        true_params=ParamSet(g, per_region),
        populations=pops,
        noise=noise,
        categories=cats,
    )


def datasets_to_csv(datasets: Sequence[RegionDataset]) -> tuple[str, str, str]:
    """Render datasets as mobility-report, death-count and population CSV text."""
    cats = datasets[0].categories
    mob_rows, death_rows = [], []
    for ds in datasets:
        for i, d in enumerate(ds.days):
            vals = {c: round((ds.mobility[i, k] - 1.0) * 100.0, 3) for k, c in enumerate(cats)}
            keys = {
                "country_region_code": "US",
                "country_region": "United States",
                "sub_region_1": "Synthetic",
                "sub_region_2": f"County {ds.region_id}",
                "census_fips_code": ds.region_id,
            }
            mob_rows.append(MobilityRow(keys, d, vals))
            deaths = int(round(ds.deaths_raw[i]))
            death_rows.append(DeathsRow(d, f"County {ds.region_id}", "Synthetic", ds.region_id, 10 * deaths, deaths))
    mbuf, dbuf, pbuf = io.StringIO(), io.StringIO(), io.StringIO()
    write_mobility_csv(mob_rows, mbuf, cats)
    write_deaths_csv(death_rows, dbuf)
    pw = csv.writer(pbuf, lineterminator="\n")
    pw.writerow(["region_id", "population"])
    for ds in datasets:
        pw.writerow([ds.region_id, _fmt_number(ds.population)])
    return mbuf.getvalue(), dbuf.getvalue(), pbuf.getvalue()
