"""Tabular survival data: loading, discretization, splits, batching.

The CSV contract: a header row, one time column, one binary event column,
and feature columns declared in a JSON schema as ``real``, ``binary`` or
``categorical``. Categorical features are one-hot encoded. Missing feature
values are imputed from the training split (median for real, mode for
binary/categorical); missing time or event values reject the row. Feature
normalization is min-max fitted on the training split only and then frozen,
so evaluation splits may exceed [0, 1] but never leak statistics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

SPLIT_RATIOS = {"train": 0.64, "test": 0.20, "validation": 0.16}
FEATURE_KINDS = ("real", "binary", "categorical")


class DataError(ValueError):
    """Malformed input data or schema."""


@dataclass
class ColumnSpec:
    name: str
    kind: str  # real | binary | categorical
    role: str = "feature"  # feature | time | event


@dataclass
class Schema:
    columns: list[ColumnSpec]

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path) as fh:
            raw = json.load(fh)
        return cls([ColumnSpec(**col) for col in raw["columns"]])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"columns": [vars(c) for c in self.columns]}, fh, indent=2)

    def __post_init__(self):
        roles = [c.role for c in self.columns]
        if roles.count("time") != 1 or roles.count("event") != 1:
            raise DataError("schema needs exactly one time column and one event column")
        for c in self.columns:
            if c.role == "feature" and c.kind not in FEATURE_KINDS:
                raise DataError(f"unknown feature kind {c.kind!r} for column {c.name!r}")

    @property
    def time_column(self) -> str:
        return next(c.name for c in self.columns if c.role == "time")

    @property
    def event_column(self) -> str:
        return next(c.name for c in self.columns if c.role == "event")

    def feature_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.role == "feature"]


@dataclass
class RawDataset:
    """Parsed rows before imputation/normalization; NaN marks missing."""

    features: np.ndarray  # (n, p) float, one-hot already applied
    times: np.ndarray  # (n,) float raw times
    events: np.ndarray  # (n,) int {0, 1}
    feature_names: list[str]
    # maps one-hot/raw columns back to the schema feature they came from
    source_columns: list[str]
    source_kinds: list[str]

    def __len__(self) -> int:
        return self.times.size


def load_csv(path, schema: Schema) -> RawDataset:
    """Parse a survival CSV against its schema.

    Raises :class:`DataError` with the offending row number for unknown
    columns, non-binary event values, or negative times. Rows with missing
    time or event are rejected outright.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("no records: file is empty")
        header = set(reader.fieldnames)
        for col in schema.columns:
            if col.name not in header:
                raise DataError(f"unknown column: schema column {col.name!r} missing from header")
        rows = list(reader)
    if not rows:
        raise DataError("no records")

    feats = schema.feature_columns()
    categories: dict[str, list[str]] = {}
    for col in feats:
        if col.kind == "categorical":
            seen = sorted({r[col.name] for r in rows if r[col.name] not in ("", None)})
            categories[col.name] = seen

    names: list[str] = []
    src_cols: list[str] = []
    src_kinds: list[str] = []
    for col in feats:
        if col.kind == "categorical":
            for level in categories[col.name]:
                names.append(f"{col.name}={level}")
                src_cols.append(col.name)
                src_kinds.append("categorical")
        else:
            names.append(col.name)
            src_cols.append(col.name)
            src_kinds.append(col.kind)

    n = len(rows)
    x = np.full((n, len(names)), np.nan)
    times = np.empty(n)
    events = np.empty(n, dtype=int)
    for i, row in enumerate(rows):
        lineno = i + 2  # header is line 1
        t_raw = row[schema.time_column]
        e_raw = row[schema.event_column]
        if t_raw in ("", None) or e_raw in ("", None):
            raise DataError(f"row {lineno}: missing time or event value")
        try:
            t = float(t_raw)
        except ValueError:
            raise DataError(f"row {lineno}: time value {t_raw!r} is not numeric") from None
        if t < 0:
            raise DataError(f"row {lineno}: negative time {t}")
        if e_raw not in ("0", "1", "0.0", "1.0"):
            raise DataError(f"row {lineno}: event value {e_raw!r} is not binary")
        times[i] = t
        events[i] = int(float(e_raw))

        j = 0
        for col in feats:
            val = row[col.name]
            if col.kind == "categorical":
                levels = categories[col.name]
                if val not in ("", None):
                    x[i, j : j + len(levels)] = 0.0
                    x[i, j + levels.index(val)] = 1.0
                j += len(levels)
            else:
                if val not in ("", None):
                    try:
                        x[i, j] = float(val)
                    except ValueError:
                        raise DataError(f"row {lineno}: value {val!r} in {col.name!r} is not numeric") from None
                    if col.kind == "binary" and x[i, j] not in (0.0, 1.0):
                        raise DataError(f"row {lineno}: binary column {col.name!r} has value {val!r}")
                j += 1
    return RawDataset(x, times, events, names, src_cols, src_kinds)


def from_arrays(features, times, events, feature_names=None) -> RawDataset:
    features = np.asarray(features, dtype=np.float64)
    names = feature_names or [f"x{i}" for i in range(features.shape[1])]
    return RawDataset(
        features,
        np.asarray(times, dtype=np.float64),
        np.asarray(events, dtype=int),
        list(names),
        list(names),
        ["real"] * features.shape[1],
    )


# ---------------------------------------------------------------------------
# time discretization
# ---------------------------------------------------------------------------

@dataclass
class TimeGrid:
    """Equal-width bins over [0, max raw time]."""

    edges: np.ndarray  # n_bins + 1 strictly increasing edge values

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        if self.edges.size < 3 or np.any(np.diff(self.edges) <= 0):
            raise DataError("grid edges must be strictly increasing with at least 2 bins")

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def t_max(self) -> int:
        return self.n_bins - 1

    def to_bin(self, raw_times) -> np.ndarray:
        t = np.asarray(raw_times, dtype=np.float64)
        idx = np.searchsorted(self.edges, t, side="right") - 1
        return np.clip(idx, 0, self.t_max)

    def midpoint(self, taus) -> np.ndarray:
        taus = np.asarray(taus, dtype=int)
        return (self.edges[taus] + self.edges[taus + 1]) / 2.0


def discretize(raw_times, n_bins: int) -> tuple[TimeGrid, np.ndarray]:
    """Equal-width binning; the bin map is monotone in raw time."""
    t = np.asarray(raw_times, dtype=np.float64)
    if n_bins < 2:
        raise DataError("n_bins must be >= 2")
    if np.any(t < 0):
        raise DataError("raw times must be non-negative")
    if np.all(t == t.flat[0]):
        raise DataError("degenerate grid: all raw times identical")
    grid = TimeGrid(np.linspace(0.0, t.max(), n_bins + 1))
    return grid, grid.to_bin(t)


def default_n_bins(raw_times, cap: int = 100) -> int:
    return int(min(cap, max(2, np.unique(raw_times).size)))


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class Split:
    train: np.ndarray
    test: np.ndarray
    validation: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return self.train.size, self.test.size, self.validation.size


def _largest_remainder(total: int, ratios: list[float]) -> list[int]:
    exact = [total * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    order = np.argsort([c - e for c, e in zip(counts, exact)])  # biggest remainder first
    for k in range(total - sum(counts)):
        counts[order[k]] += 1
    return counts


def split_dataset(events, seed: int) -> Split:
    """Deterministic 0.64/0.20/0.16 split, stratified by the event flag.

    Heavily censored cohorts make unstratified small splits unstable, so
    every stratum is apportioned so it lands within one sample of the global
    ratio.
    """
    events = np.asarray(events)
    n = events.size
    if n == 0:
        raise DataError("cannot split an empty dataset")
    ratios = list(SPLIT_RATIOS.values())
    global_counts = _largest_remainder(n, ratios)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x5B71)))
    strata = [np.flatnonzero(events == v) for v in (0, 1) if np.any(events == v)]
    # per-stratum quota: floor of the proportional share, remainders greedily
    quotas = np.zeros((len(strata), 3), dtype=int)
    fracs = np.zeros((len(strata), 3))
    for gi, idx in enumerate(strata):
        for k in range(3):
            share = global_counts[k] * idx.size / n
            quotas[gi, k] = int(np.floor(share))
            fracs[gi, k] = share - quotas[gi, k]
    stratum_left = np.array([idx.size for idx in strata]) - quotas.sum(axis=1)
    split_left = np.array(global_counts) - quotas.sum(axis=0)
    for gi, k in sorted(np.ndindex(len(strata), 3), key=lambda p: -fracs[p]):
        if stratum_left[gi] > 0 and split_left[k] > 0:
            quotas[gi, k] += 1
            stratum_left[gi] -= 1
            split_left[k] -= 1
    # any residue (rare) goes wherever capacity remains
    for gi in range(len(strata)):
        for k in range(3):
            while stratum_left[gi] > 0 and split_left[k] > 0:
                quotas[gi, k] += 1
                stratum_left[gi] -= 1
                split_left[k] -= 1

    parts: list[list[np.ndarray]] = [[], [], []]
    for gi, idx in enumerate(strata):
        perm = rng.permutation(idx)
        a, b = quotas[gi, 0], quotas[gi, 0] + quotas[gi, 1]
        parts[0].append(perm[:a])
        parts[1].append(perm[a:b])
        parts[2].append(perm[b:])
    train, test, val = (np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts)
    return Split(train=train, test=test, validation=val)


# ---------------------------------------------------------------------------
# preprocessing: imputation + normalization fitted on the training split
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    x: np.ndarray  # (n, p) imputed + normalized features
    tau: np.ndarray  # (n,) discrete time bins
    delta: np.ndarray  # (n,) event indicators
    grid: TimeGrid
    split: Split
    feature_names: list[str]
    train_marginals: np.ndarray  # (n_train, p) pre-drawn pool for corruption
    raw_times: np.ndarray = field(repr=False, default=None)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_time_bins(self) -> int:
        return self.grid.n_bins

    def subset(self, indices):
        return self.x[indices], self.tau[indices], self.delta[indices]


def prepare(raw: RawDataset, seed: int, n_bins: int | None = None) -> PreparedData:
    """Split, impute from the train split, min-max normalize, discretize."""
    split = split_dataset(raw.events, seed)
    x = raw.features.copy()
    train_rows = x[split.train]

    for j, kind in enumerate(raw.source_kinds):
        col = train_rows[:, j]
        known = col[~np.isnan(col)]
        if known.size == 0:
            fill = 0.0
        elif kind == "real":
            fill = float(np.median(known))
        else:  # binary / one-hot categorical: mode
            vals, counts = np.unique(known, return_counts=True)
            fill = float(vals[np.argmax(counts)])
        nan_mask = np.isnan(x[:, j])
        x[nan_mask, j] = fill

    lo = x[split.train].min(axis=0)
    hi = x[split.train].max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = (x - lo) / span

    bins = n_bins if n_bins is not None else default_n_bins(raw.times)
    grid, tau = discretize(raw.times, bins)
    return PreparedData(
        x=x,
        tau=tau,
        delta=raw.events.copy(),
        grid=grid,
        split=split,
        feature_names=list(raw.feature_names),
        train_marginals=x[split.train],
        raw_times=raw.times.copy(),
    )


# ---------------------------------------------------------------------------
# corruption and batching
# ---------------------------------------------------------------------------

def corrupt(features: np.ndarray, marginals: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Replace a random fraction of each row's coordinates with draws from
    the training split's per-feature empirical marginals."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("corruption rate must be in [0, 1]")
    x = np.asarray(features, dtype=np.float64)
    out = x.copy()
    n, p = x.shape
    k = int(round(rate * p))
    if k == 0:
        return out
    # first k columns of a random per-row permutation = uniform size-k subset
    cols = np.argsort(rng.random((n, p)), axis=1)[:, :k]
    rows = rng.integers(0, marginals.shape[0], size=(n, k))
    out[np.arange(n)[:, None], cols] = marginals[rows, cols]
    return out


@dataclass
class Batch:
    indices: np.ndarray
    x: np.ndarray
    x_view: np.ndarray  # corrupted copies, same outcomes as the originals
    tau: np.ndarray
    delta: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.size


def iterate_batches(
    data: PreparedData,
    indices: np.ndarray,
    batch_size: int,
    shuffle_rng: np.random.Generator,
    corrupt_rng: np.random.Generator,
    corruption_rate: float,
):
    """One epoch of shuffled mini-batches with corrupted views attached.

    A trailing batch smaller than 2 samples is dropped (pairwise losses are
    undefined on it).
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    order = shuffle_rng.permutation(indices)
    for start in range(0, order.size, batch_size):
        chunk = order[start : start + batch_size]
        if chunk.size < 2:
            break
        x = data.x[chunk]
        yield Batch(
            indices=chunk,
            x=x,
            x_view=corrupt(x, data.train_marginals, corruption_rate, corrupt_rng),
            tau=data.tau[chunk],
            delta=data.delta[chunk],
        )
