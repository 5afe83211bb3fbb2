"""Loading, encoding, normalization and splitting of right-censored data."""

from __future__ import annotations

import configparser
import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CONTINUOUS = "continuous"
BINARY01 = "binary01"
ORDINAL = "ordinal"
ONEHOT = "onehot"
ENCODED_KINDS = (CONTINUOUS, BINARY01, ORDINAL, ONEHOT)

# raw (schema-level) kinds; twolevel/nominal are encoded into binary01/onehot
RAW_KINDS = (CONTINUOUS, BINARY01, "twolevel", ORDINAL, "nominal")

_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}


class DataError(ValueError):
    """Base class for dataset ingestion errors."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row={row}")
        if column is not None:
            where.append(f"column={column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class MissingColumn(DataError):
    pass


class NonPositiveTime(DataError):
    pass


class NonBinaryEvent(DataError):
    pass


class MissingValue(DataError):
    pass


class InvalidValue(DataError):
    pass


class UnknownCategory(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class DegenerateSplit(DataError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    kind: str
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in RAW_KINDS:
            raise ValueError(f"unknown column kind {self.kind!r}; expected one of {RAW_KINDS}")
        if self.kind == ORDINAL and not self.levels:
            raise ValueError("ordinal columns need a declared level order")

    @classmethod
    def parse(cls, text: str) -> "ColumnSpec":
        """Parse ``kind`` or ``kind:level1,level2,...``."""
        kind, _, rest = text.strip().partition(":")
        levels = tuple(s.strip() for s in rest.split(",")) if rest.strip() else None
        return cls(kind.strip().lower(), levels)

    def __str__(self):
        return self.kind if not self.levels else f"{self.kind}:{','.join(self.levels)}"


@dataclass(frozen=True)
class Schema:
    time_column: str
    event_column: str
    columns: dict[str, ColumnSpec]

    @classmethod
    def read(cls, path: str | Path) -> "Schema":
        """Read an INI-style schema file.

        Example::

            [target]
            time = t
            event = d

            [columns]
            age = continuous
            sex = twolevel:F,M
            stage = ordinal:I,II,III
            center = nominal
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"schema file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep column-name case
        parser.read(path, encoding="utf-8")
        if "target" not in parser or "columns" not in parser:
            raise ValueError(f"{path}: schema needs [target] and [columns] sections")
        target = parser["target"]
        cols = {name: ColumnSpec.parse(v) for name, v in parser["columns"].items()}
        return cls(target["time"].strip(), target["event"].strip(), cols)

    def write(self, path: str | Path) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser["target"] = {"time": self.time_column, "event": self.event_column}
        parser["columns"] = {k: str(v) for k, v in self.columns.items()}
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Feature matrix plus per-row (time, event) targets.

    ``encodings`` maps each categorical source column to ``(kind, levels)``
    and ``sources`` names the raw column every encoded column came from, so
    that category labels can be recovered with :func:`decode_categoricals`.
    """

    features: np.ndarray
    times: np.ndarray
    events: np.ndarray
    column_names: tuple[str, ...]
    column_kinds: tuple[str, ...]
    sources: tuple[str, ...] = ()
    encodings: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "events", np.asarray(self.events, dtype=bool))
        if not self.sources:
            object.__setattr__(self, "sources", tuple(self.column_names))
        n, d = X.shape
        if self.times.shape != (n,) or self.events.shape != (n,):
            raise ValueError("times/events must have one entry per row")
        if len(self.column_names) != d or len(self.column_kinds) != d:
            raise ValueError("column metadata must match the feature count")
        if not np.all(np.isfinite(X)):
            raise InvalidValue("features contain NaN or Inf")
        if n and np.any(~(self.times > 0)):
            raise NonPositiveTime("times must be positive", row=int(np.argmin(self.times > 0)) + 1)
        for j, kind in enumerate(self.column_kinds):
            if kind not in ENCODED_KINDS:
                raise ValueError(f"unknown column kind {kind!r}")
            if kind in (BINARY01, ONEHOT) and not np.all((X[:, j] == 0) | (X[:, j] == 1)):
                raise InvalidValue("binary column holds values other than 0/1", column=self.column_names[j])

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def binary_columns(self) -> tuple[int, ...]:
        return tuple(j for j, k in enumerate(self.column_kinds) if k in (BINARY01, ONEHOT))

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], times=self.times[idx], events=self.events[idx])

    def signature(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.times, self.events.astype(np.uint8)):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x1f".join(self.column_names).encode())
        return h.hexdigest()[:16]


def _parse_event(value: str, row: int, column: str) -> bool:
    v = value.strip().lower()
    if v == "":
        raise MissingValue("missing event indicator", row=row, column=column)
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    try:
        num = float(v)
    except ValueError:
        raise NonBinaryEvent(f"event value {value!r} is not 0/1", row=row, column=column) from None
    if num in (0.0, 1.0):
        return bool(num)
    raise NonBinaryEvent(f"event value {value!r} is not 0/1", row=row, column=column)


def _parse_float(value: str, row: int, column: str) -> float:
    if value.strip() == "":
        raise MissingValue("missing value", row=row, column=column)
    try:
        x = float(value)
    except ValueError:
        raise InvalidValue(f"cannot parse {value!r} as a number", row=row, column=column) from None
    if not np.isfinite(x):
        raise InvalidValue(f"non-finite value {value!r}", row=row, column=column)
    return x


def _schema_items(schema) -> list[tuple[str, ColumnSpec]]:
    cols = schema.columns if isinstance(schema, Schema) else schema
    return [(k, v if isinstance(v, ColumnSpec) else ColumnSpec.parse(v)) for k, v in cols.items()]


def encode_categoricals(
    raw: Mapping[str, Sequence[str]],
    schema: Schema | Mapping[str, ColumnSpec | str],
    time_column: str | None = None,
    event_column: str | None = None,
) -> SurvivalDataset:
    """Build a dataset from raw string columns.

    Two-level columns become one 0/1 column, ordinal columns become integers
    from 0 in declared order, nominal columns become one 0/1 column per
    category. Rows are numbered from 1 in error messages.
    """
    if isinstance(schema, Schema):
        time_column = time_column or schema.time_column
        event_column = event_column or schema.event_column
    if time_column is None or event_column is None:
        raise ValueError("time and event column names are required")
    for col in (time_column, event_column):
        if col not in raw:
            raise MissingColumn("column not found", column=col)
    n = len(raw[time_column])

    times = np.empty(n)
    events = np.empty(n, dtype=bool)
    for i, (t, e) in enumerate(zip(raw[time_column], raw[event_column])):
        t_val = _parse_float(t, i + 1, time_column)
        if t_val <= 0:
            raise NonPositiveTime(f"time {t!r} is not positive", row=i + 1, column=time_column)
        times[i] = t_val
        events[i] = _parse_event(e, i + 1, event_column)

    blocks, names, kinds, sources = [], [], [], []
    encodings = {}
    for name, spec in _schema_items(schema):
        if name in (time_column, event_column):
            continue
        if name not in raw:
            raise MissingColumn("declared column not found", column=name)
        values = [str(v).strip() for v in raw[name]]
        for i, v in enumerate(values):
            if v == "":
                raise MissingValue("missing value", row=i + 1, column=name)

        if spec.kind == CONTINUOUS:
            blocks.append(np.array([_parse_float(v, i + 1, name) for i, v in enumerate(values)]))
            names.append(name)
            kinds.append(CONTINUOUS)
            sources.append(name)
        elif spec.kind == BINARY01:
            col = np.array([float(_parse_event(v, i + 1, name)) for i, v in enumerate(values)])
            blocks.append(col)
            names.append(name)
            kinds.append(BINARY01)
            sources.append(name)
        elif spec.kind == "twolevel":
            levels = spec.levels or tuple(sorted(set(values)))
            if len(levels) > 2:
                raise InvalidValue(f"two-level column has {len(levels)} categories", column=name)
            code = {lvl: k for k, lvl in enumerate(levels)}
            col = np.empty(n)
            for i, v in enumerate(values):
                if v not in code:
                    raise UnknownCategory(f"category {v!r} not declared", row=i + 1, column=name)
                col[i] = code[v]
            blocks.append(col)
            names.append(name)
            kinds.append(BINARY01)
            sources.append(name)
            encodings[name] = ("twolevel", tuple(levels))
        elif spec.kind == ORDINAL:
            code = {lvl: k for k, lvl in enumerate(spec.levels)}
            col = np.empty(n)
            for i, v in enumerate(values):
                if v not in code:
                    raise UnknownCategory(f"category {v!r} absent from the ordinal order", row=i + 1, column=name)
                col[i] = code[v]
            blocks.append(col)
            names.append(name)
            kinds.append(ORDINAL)
            sources.append(name)
            encodings[name] = (ORDINAL, tuple(spec.levels))
        else:  # nominal
            levels = spec.levels or tuple(sorted(set(values)))
            unknown = set(values) - set(levels)
            if unknown:
                row = next(i + 1 for i, v in enumerate(values) if v in unknown)
                raise UnknownCategory(f"category {values[row - 1]!r} not declared", row=row, column=name)
            arr = np.array(values, dtype=object)
            for lvl in levels:
                blocks.append((arr == lvl).astype(float))
                names.append(f"{name}={lvl}")
                kinds.append(ONEHOT)
                sources.append(name)
            encodings[name] = ("nominal", tuple(levels))

    X = np.column_stack(blocks) if blocks else np.empty((n, 0))
    return SurvivalDataset(X, times, events, tuple(names), tuple(kinds), tuple(sources), encodings)


def decode_categoricals(ds: SurvivalDataset) -> dict[str, list[str]]:
    """Recover the original category labels of every categorical source column."""
    out = {}
    for source, (kind, levels) in ds.encodings.items():
        cols = [j for j, s in enumerate(ds.sources) if s == source]
        if kind == "nominal":
            codes = np.argmax(ds.features[:, cols], axis=1)
        else:
            codes = ds.features[:, cols[0]].astype(int)
        out[source] = [levels[c] for c in codes]
    return out


def read_csv_columns(path: str | Path) -> dict[str, list[str]]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty CSV, header row required") from None
        columns: dict[str, list[str]] = {h.strip(): [] for h in header}
        keys = list(columns)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(keys):
                raise DataError(f"expected {len(keys)} fields, got {len(row)}", row=lineno)
            for k, v in zip(keys, row):
                columns[k].append(v)
    return columns


def load_csv(
    path: str | Path,
    time_column: str | None = None,
    event_column: str | None = None,
    schema: Schema | Mapping[str, ColumnSpec | str] | str | Path | None = None,
) -> SurvivalDataset:
    """Load a survival CSV (header row required).

    ``schema`` may be a :class:`Schema`, a path to a schema file, or a plain
    mapping of column name to kind. When no schema is given every non-target
    column is read as continuous.
    """
    if isinstance(schema, (str, Path)):
        schema = Schema.read(schema)
    raw = read_csv_columns(path)
    if isinstance(schema, Schema):
        time_column = time_column or schema.time_column
        event_column = event_column or schema.event_column
    if schema is None:
        schema = {k: CONTINUOUS for k in raw if k not in (time_column, event_column)}
    return encode_categoricals(raw, schema, time_column, event_column)


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def zscore_normalize(
    ds: SurvivalDataset, stats: NormalizationStats | None = None
) -> tuple[SurvivalDataset, NormalizationStats]:
    """Z-score continuous and ordinal columns; 0/1 columns pass through.

    Uses the population standard deviation. Columns with zero spread map to
    all zeros. Pass the returned stats when normalizing the matching test split.
    """
    X = ds.features
    scaled = np.array([k in (CONTINUOUS, ORDINAL) for k in ds.column_kinds], dtype=bool)
    if stats is None:
        mean = np.where(scaled, X.mean(axis=0) if ds.n else 0.0, 0.0)
        std = np.where(scaled, X.std(axis=0) if ds.n else 1.0, 1.0)
        stats = NormalizationStats(mean, std)
    elif stats.mean.shape != (ds.d,) or stats.std.shape != (ds.d,):
        raise SchemaMismatch(f"stats describe {stats.mean.shape[0]} columns, dataset has {ds.d}")
    centered = X - stats.mean
    safe = np.where(stats.std > 0, stats.std, 1.0)
    Z = np.where(stats.std > 0, centered / safe, 0.0)
    Z = np.where(scaled, Z, X)
    return replace(ds, features=Z), stats


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_fraction: float = 0.7
    repetition_index: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def split_indices(n: int, events: np.ndarray, spec: SplitSpec, max_attempts: int = 1000):
    if n < 10:
        raise DegenerateSplit(f"need at least 10 rows to split, got {n}")
    n_train = int(np.floor(spec.train_fraction * n + 0.5))
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(spec.repetition_index,)))
    for _ in range(max_attempts):
        perm = rng.permutation(n)
        train, test = perm[:n_train], perm[n_train:]
        if events[train].any() and events[test].any():
            return np.sort(train), np.sort(test)
    raise DegenerateSplit(f"no split with events on both sides after {max_attempts} attempts")


def split(ds: SurvivalDataset, spec: SplitSpec) -> tuple[SurvivalDataset, SurvivalDataset]:
    train, test = split_indices(ds.n, ds.events, spec)
    return ds.subset(train), ds.subset(test)
