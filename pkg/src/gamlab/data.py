"""Tabular dataset loading, splitting, quantile binning and encoding.

Everything downstream (trainers, metrics, the benchmark runner) consumes the
two products of this module: a :class:`RawDataset` holding typed columns and
binary labels, and a :class:`BinnedDataset` pairing it with a fitted
:class:`BinningSpec` and per-row bin indices.

Conventions:

* numeric columns are float64 with NaN marking missing values,
* categorical columns are object arrays of strings with ``None`` for missing,
* every numeric feature reserves one extra trailing bin slot for missing
  values, and every categorical feature reserves one trailing slot for
  categories unseen at fit time, so encoded indices are always valid.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_MISSING_MARKERS = ("", "NA", "?")

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised for malformed input data or inconsistent dataset operations."""


# ---------------------------------------------------------------------------
# Raw datasets
# ---------------------------------------------------------------------------


@dataclass
class RawDataset:
    """A named tabular dataset with typed feature columns and binary labels.

    ``labels`` is float64 so that semi-synthetic soft labels (probabilities
    in [0, 1]) can reuse the same container; CSV loading enforces {0, 1}.
    """

    name: str
    feature_names: list[str]
    kinds: dict[str, str]
    columns: dict[str, np.ndarray]
    labels: np.ndarray
    group_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.labels) < 1:
            raise DataError("dataset must contain at least one row")
        for name in self.feature_names:
            if name not in self.columns or name not in self.kinds:
                raise DataError(f"feature {name!r} missing column data or kind")
            if len(self.columns[name]) != len(self.labels):
                raise DataError(f"feature {name!r} has wrong length")
        for g in self.group_columns:
            if g not in self.feature_names:
                raise DataError(f"group column {g!r} is not a feature")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    def positive_rate(self) -> float:
        return float(np.mean(self.labels))

    def values(self, feature: str) -> np.ndarray:
        return self.columns[feature]

    def subset(self, rows: np.ndarray, name: str | None = None) -> "RawDataset":
        """A copy restricted to ``rows`` (row indices into this dataset)."""
        rows = np.asarray(rows)
        return RawDataset(
            name=name or self.name,
            feature_names=list(self.feature_names),
            kinds=dict(self.kinds),
            columns={f: self.columns[f][rows] for f in self.feature_names},
            labels=self.labels[rows],
            group_columns=self.group_columns,
        )

    def drop_feature(self, feature: str) -> "RawDataset":
        if feature not in self.feature_names:
            raise DataError(f"unknown feature {feature!r}")
        if self.p == 1:
            raise DataError("cannot drop the only feature")
        names = [f for f in self.feature_names if f != feature]
        return RawDataset(
            name=self.name,
            feature_names=names,
            kinds={f: self.kinds[f] for f in names},
            columns={f: self.columns[f] for f in names},
            labels=self.labels,
            group_columns=tuple(g for g in self.group_columns if g != feature),
        )

    def with_labels(self, labels: np.ndarray, name: str | None = None) -> "RawDataset":
        labels = np.asarray(labels, dtype=np.float64)
        if len(labels) != self.n:
            raise DataError("label vector length mismatch")
        return replace(self, labels=labels, name=name or self.name)


def _parse_float(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


def load_csv(
    path,
    label: str | None = None,
    schema: dict | None = None,
    name: str | None = None,
    missing_markers=DEFAULT_MISSING_MARKERS,
) -> RawDataset:
    """Load an RFC-4180 style CSV (header row required) into a RawDataset.

    Column kinds are inferred: a column is numeric if every non-missing cell
    parses as a number, else categorical.  ``schema`` optionally overrides
    per column: ``{"col": {"kind": "numeric"|"categorical",
    "role": "feature"|"label"|"group", "positive": "token"}}``.  The label
    column is picked from ``label`` or from a schema entry with role
    ``label``; its values must be binary (0/1, or two tokens once
    ``positive`` designates the positive class).

    Args:
        path: CSV file path.
        label: name of the label column (alternative to a schema role).
        schema: per-column overrides, as above.
        name: dataset name; defaults to the file stem.
        missing_markers: cell values recorded as missing.

    Returns:
        RawDataset with kinds inferred and missing cells marked.
    """
    schema = schema or {}
    missing = set(missing_markers)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")

    label_col = label
    group_cols = []
    for col, over in schema.items():
        role = over.get("role")
        if role == "label":
            if label_col is not None and label_col != col:
                raise DataError("conflicting label column designations")
            label_col = col
        elif role == "group":
            group_cols.append(col)
    if label_col is None:
        raise DataError("no label column designated (pass label= or a schema role)")
    if label_col not in header:
        raise DataError(f"label column {label_col!r} not in header {header}")

    cells = {}
    for j, col in enumerate(header):
        raw = [r[j].strip() if j < len(r) else "" for r in rows]
        cells[col] = raw

    positive = schema.get(label_col, {}).get("positive")
    labels = _parse_labels(cells[label_col], positive, missing)

    feature_names = [c for c in header if c != label_col]
    kinds = {}
    columns = {}
    for col in feature_names:
        raw = cells[col]
        forced = schema.get(col, {}).get("kind")
        parsed = [None if v in missing else _parse_float(v) for v in raw]
        is_numeric = all(p is not None for v, p in zip(raw, parsed) if v not in missing)
        kind = forced or (NUMERIC if is_numeric else CATEGORICAL)
        if kind == NUMERIC:
            if not is_numeric:
                raise DataError(f"column {col!r} forced numeric but has non-numeric cells")
            columns[col] = np.array(
                [np.nan if v in missing else p for v, p in zip(raw, parsed)], dtype=np.float64
            )
        else:
            columns[col] = np.array(
                [None if v in missing else v for v in raw], dtype=object
            )
        kinds[col] = kind

    ds_name = name or str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return RawDataset(
        name=ds_name,
        feature_names=feature_names,
        kinds=kinds,
        columns=columns,
        labels=labels,
        group_columns=tuple(g for g in group_cols if g in feature_names),
    )


def _parse_labels(raw: list[str], positive: str | None, missing) -> np.ndarray:
    if any(v in missing for v in raw):
        raise DataError("label column has missing values")
    if positive is not None:
        distinct = sorted(set(raw))
        if len(distinct) > 2:
            raise DataError(f"label not binary: {len(distinct)} distinct values")
        return np.array([1.0 if v == positive else 0.0 for v in raw])
    vals = [_parse_float(v) for v in raw]
    if any(v is None for v in vals) or not set(vals) <= {0.0, 1.0}:
        raise DataError(
            "label not binary 0/1; use a schema entry with 'positive' to map tokens"
        )
    return np.array(vals, dtype=np.float64)


def load_schema(path) -> dict:
    """Read a JSON schema-override file (column -> {kind, role, positive})."""
    with open(path, encoding="utf-8") as fh:
        schema = json.load(fh)
    if not isinstance(schema, dict):
        raise DataError("schema file must hold a JSON object")
    return schema


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/val/test row indices covering a dataset."""

    seed: int
    fractions: tuple[float, float, float]
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))


def _allocate(n: int, fractions) -> list[int]:
    # largest-remainder rounding so the sizes sum to n exactly
    exact = [f * n for f in fractions]
    base = [int(np.floor(e)) for e in exact]
    short = n - sum(base)
    order = np.argsort([-(e - b) for e, b in zip(exact, base)], kind="stable")
    for i in range(short):
        base[order[i]] += 1
    return base


def make_split(
    ds: RawDataset,
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
) -> SplitPlan:
    """Deterministic label-stratified train/val/test split.

    Rows of each label class are shuffled with a seed-derived generator and
    dealt to the three splits with largest-remainder rounding, so each
    split's positive rate tracks the full dataset's.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("fractions must sum to 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, ds.n]))
    hard = np.rint(ds.labels).astype(int)
    parts = ([], [], [])
    for cls in (0, 1):
        idx = np.flatnonzero(hard == cls)
        rng.shuffle(idx)
        counts = _allocate(len(idx), fractions)
        start = 0
        for part, c in zip(parts, counts):
            part.append(idx[start : start + c])
            start += c
    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    if min(len(train), len(val), len(test)) == 0:
        raise DataError("split would leave an empty partition; dataset too small")
    return SplitPlan(seed=seed, fractions=tuple(fractions), train=train, val=val, test=test)


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

LABEL_ENCODING = "label"
ONE_HOT_ENCODING = "one_hot"


@dataclass
class NumericBinning:
    """Quantile bin edges for one numeric feature.

    ``edges`` are strictly increasing interior cut points; values map to
    bins by ``low <= x < high`` with open-ended extreme bins.  Bin index
    ``len(edges) + 1`` (one past the last value bin) is reserved for
    missing values.  ``representatives`` holds one in-bin point per value
    bin (the median of the training values that landed there), used when a
    curve is discretized onto this grid.
    """

    edges: np.ndarray
    representatives: np.ndarray
    degenerate: bool = False

    @property
    def n_value_bins(self) -> int:
        return len(self.edges) + 1

    @property
    def n_slots(self) -> int:
        return self.n_value_bins + 1

    @property
    def missing_index(self) -> int:
        return self.n_value_bins

    def assign(self, values: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.edges, values, side="right")
        return np.where(np.isnan(values), self.missing_index, idx).astype(np.int32)


@dataclass
class CategoricalEncoding:
    """Category order and encoding scheme for one categorical feature.

    Categories are recorded in first-appearance order over the fitting rows;
    index ``len(categories)`` is reserved for values unseen at fit time.
    """

    categories: list
    scheme: str = LABEL_ENCODING

    @property
    def n_slots(self) -> int:
        return len(self.categories) + 1

    @property
    def unknown_index(self) -> int:
        return len(self.categories)

    def assign(self, values: np.ndarray) -> np.ndarray:
        table = {c: i for i, c in enumerate(self.categories)}
        unk = self.unknown_index
        return np.array([table.get(v, unk) for v in values], dtype=np.int32)


@dataclass
class BinningSpec:
    """Fitted per-feature binning/encoding, the shared grid for all models."""

    numeric: dict[str, NumericBinning] = field(default_factory=dict)
    categorical: dict[str, CategoricalEncoding] = field(default_factory=dict)
    max_bins: int = 255

    def features(self) -> list[str]:
        return list(self.numeric) + list(self.categorical)

    def n_slots(self, feature: str) -> int:
        if feature in self.numeric:
            return self.numeric[feature].n_slots
        return self.categorical[feature].n_slots

    def drop_feature(self, feature: str) -> "BinningSpec":
        return BinningSpec(
            numeric={k: v for k, v in self.numeric.items() if k != feature},
            categorical={k: v for k, v in self.categorical.items() if k != feature},
            max_bins=self.max_bins,
        )

    def digest(self) -> str:
        payload = {
            "max_bins": self.max_bins,
            "numeric": {
                k: [list(map(float, v.edges)), list(map(float, v.representatives))]
                for k, v in sorted(self.numeric.items())
            },
            "categorical": {
                k: [v.categories, v.scheme] for k, v in sorted(self.categorical.items())
            },
        }
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _quantile_edges(values: np.ndarray, max_bins: int) -> np.ndarray:
    distinct = np.unique(values)
    if len(distinct) <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2.0
    qs = np.arange(1, max_bins) / max_bins
    return np.unique(np.quantile(values, qs))


def fit_binning(
    ds: RawDataset,
    train_indices: np.ndarray,
    max_bins: int = 255,
    one_hot: tuple[str, ...] | None = None,
) -> BinningSpec:
    """Fit per-feature quantile bins / category maps on training rows only.

    Numeric features with ``k <= max_bins`` distinct training values get one
    bin per distinct value (edges at midpoints); otherwise edges are the
    deduplicated ``i/max_bins`` training quantiles.  Constant features
    collapse to a single bin and are flagged ``degenerate``.  Categorical
    features record first-appearance category order; ``one_hot`` lists the
    ones trainers should expand to indicators.

    Args:
        ds: source dataset.
        train_indices: rows the spec may look at.
        max_bins: cap on value bins per feature (>= 2).
        one_hot: categorical features to mark for one-hot expansion.

    Returns:
        BinningSpec covering every feature of ``ds``.
    """
    if max_bins < 2:
        raise DataError("max_bins must be >= 2")
    if max_bins > 255:
        raise DataError("max_bins must be <= 255")
    train_indices = np.asarray(train_indices)
    one_hot = set(one_hot or ())
    spec = BinningSpec(max_bins=max_bins)
    for f in ds.feature_names:
        col = ds.values(f)[train_indices]
        if ds.kinds[f] == NUMERIC:
            obs = col[~np.isnan(col)]
            if len(obs) == 0:
                edges = np.array([])
                reps = np.array([0.0])
                degenerate = True
            else:
                edges = _quantile_edges(obs, max_bins)
                degenerate = len(edges) == 0
                reps = _bin_representatives(obs, edges)
            spec.numeric[f] = NumericBinning(edges=edges, representatives=reps,
                                             degenerate=degenerate)
        else:
            seen: list = []
            lookup = set()
            for v in col:
                if v not in lookup:
                    lookup.add(v)
                    seen.append(v)
            scheme = ONE_HOT_ENCODING if f in one_hot else LABEL_ENCODING
            spec.categorical[f] = CategoricalEncoding(categories=seen, scheme=scheme)
    return spec


def _bin_representatives(obs: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(edges, obs, side="right")
    reps = np.empty(len(edges) + 1)
    for b in range(len(edges) + 1):
        members = obs[idx == b]
        if len(members):
            reps[b] = np.median(members)
        elif len(edges) == 0:
            reps[b] = 0.0
        elif b == 0:
            reps[b] = edges[0] - 1.0
        elif b == len(edges):
            reps[b] = edges[-1] + 1.0
        else:
            reps[b] = 0.5 * (edges[b - 1] + edges[b])
    return reps


# ---------------------------------------------------------------------------
# Encoded datasets
# ---------------------------------------------------------------------------


@dataclass
class BinnedDataset:
    """A RawDataset paired with its BinningSpec and per-row bin indices.

    ``bins[:, j]`` holds the slot index of feature ``j`` (column order =
    ``raw.feature_names``).  ``unique_values`` keeps the sorted distinct
    training values per numeric feature for trainers that model raw values.
    Immutable after construction; safe for concurrent reads.
    """

    raw: RawDataset
    spec: BinningSpec
    bins: np.ndarray
    unique_values: dict[str, np.ndarray]
    split: SplitPlan | None = None

    @property
    def feature_names(self) -> list[str]:
        return self.raw.feature_names

    @property
    def n(self) -> int:
        return self.raw.n

    def feature_bins(self, feature: str) -> np.ndarray:
        return self.bins[:, self.raw.feature_names.index(feature)]

    def n_slots(self, feature: str) -> int:
        return self.spec.n_slots(feature)

    def require_split(self) -> SplitPlan:
        if self.split is None:
            raise DataError("operation requires a dataset with a split plan")
        return self.split

    def one_hot(self, feature: str, rows: np.ndarray | None = None) -> np.ndarray:
        """Indicator matrix over the feature's slots (one column per slot
        that is actually populated on the fitting rows is up to the caller;
        columns cover every slot so unseen categories stay addressable)."""
        idx = self.feature_bins(feature)
        if rows is not None:
            idx = idx[rows]
        k = self.n_slots(feature)
        out = np.zeros((len(idx), k))
        out[np.arange(len(idx)), idx] = 1.0
        return out

    def with_labels(self, labels: np.ndarray, name: str | None = None) -> "BinnedDataset":
        """Same features/binning/split, new label vector."""
        return BinnedDataset(
            raw=self.raw.with_labels(labels, name=name),
            spec=self.spec,
            bins=self.bins,
            unique_values=self.unique_values,
            split=self.split,
        )

    def drop_feature(self, feature: str) -> "BinnedDataset":
        j = self.raw.feature_names.index(feature)
        return BinnedDataset(
            raw=self.raw.drop_feature(feature),
            spec=self.spec.drop_feature(feature),
            bins=np.delete(self.bins, j, axis=1),
            unique_values={k: v for k, v in self.unique_values.items() if k != feature},
            split=self.split,
        )


def encode(ds: RawDataset, spec: BinningSpec, split: SplitPlan | None = None) -> BinnedDataset:
    """Map every row of ``ds`` to bin indices under ``spec``.

    Missing numeric values land in the feature's dedicated missing slot and
    unseen categories in the reserved unknown slot, so encoding never fails
    on held-out data.  Sorted unique raw values are collected from the
    training rows when a split is given (the whole dataset otherwise).
    """
    n = ds.n
    cols = []
    uniq = {}
    fit_rows = split.train if split is not None else np.arange(n)
    for f in ds.feature_names:
        vals = ds.values(f)
        if ds.kinds[f] == NUMERIC:
            if f not in spec.numeric:
                raise DataError(f"spec does not cover numeric feature {f!r}")
            cols.append(spec.numeric[f].assign(vals))
            train_vals = vals[fit_rows]
            uniq[f] = np.unique(train_vals[~np.isnan(train_vals)])
        else:
            if f not in spec.categorical:
                raise DataError(f"spec does not cover categorical feature {f!r}")
            cols.append(spec.categorical[f].assign(vals))
    bins = np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=np.int32)
    return BinnedDataset(raw=ds, spec=spec, bins=bins, unique_values=uniq, split=split)


def impute_mean(ds: RawDataset, train_indices: np.ndarray) -> RawDataset:
    """Replace missing numeric values by the training-set mean.

    This reproduces a common preprocessing artifact (a spike in learned
    curves at the feature mean) and is deliberately *not* part of the
    default pipeline; the default keeps a dedicated missing bin.
    """
    columns = dict(ds.columns)
    for f in ds.feature_names:
        if ds.kinds[f] != NUMERIC:
            continue
        col = columns[f]
        if np.isnan(col).any():
            mean = np.nanmean(col[train_indices])
            columns[f] = np.where(np.isnan(col), mean, col)
    return replace(ds, columns=columns)
