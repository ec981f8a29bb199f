"""Attribute schemas, CSV ingestion, discretization and one-hot encoding.

A survey column is declared as an :class:`AttributeSpec` with a role
(time / geography / external / socio / preference) and a kind (categorical
with a fixed number of categories, or numerical with sorted bin edges).
Records are encoded into a conditional block ``C`` (all non-preference
attributes) and a preference block ``V``; categorical attributes become
one-hot segments, numerical attributes become either a one-hot segment
over their bins (default) or a single raw column.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .seeding import derive_rng

ROLES = ("time", "geography", "external", "socio", "preference")
KINDS = ("categorical", "numerical")

#: numerical attributes are encoded as one-hot over their bins ("discretize")
#: or as a single raw real column ("raw")
NUMERIC_MODES = ("discretize", "raw")


class SchemaError(ValueError):
    """Invalid schema declaration or schema/data mismatch."""


class IngestError(ValueError):
    """Unusable data file (bad header, no surviving rows)."""


@dataclass(frozen=True)
class AttributeSpec:
    """Declaration of one survey column."""

    name: str
    role: str
    kind: str
    cardinality: int | None = None
    bin_edges: tuple[float, ...] | None = None
    unit: str = ""
    labels: tuple[str, ...] | None = None
    bucket_min_count: int | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("attribute name must be nonempty")
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if self.cardinality is None or self.cardinality < 1:
                raise SchemaError(f"{self.name}: categorical cardinality must be >= 1")
            if self.bin_edges is not None:
                raise SchemaError(f"{self.name}: categorical attribute cannot have bin_edges")
        else:
            if self.bin_edges is None or len(self.bin_edges) < 2:
                raise SchemaError(f"{self.name}: numerical bin_edges needs length >= 2")
            edges = tuple(float(e) for e in self.bin_edges)
            if any(a >= b for a, b in zip(edges, edges[1:])):
                raise SchemaError(f"{self.name}: bin_edges must be strictly increasing")
            object.__setattr__(self, "bin_edges", edges)
            if self.cardinality is not None:
                raise SchemaError(f"{self.name}: numerical attribute cannot have cardinality")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.n_categories:
                raise SchemaError(f"{self.name}: label list must match category count")

    @property
    def n_categories(self) -> int:
        """Category count: declared cardinality, or number of bins."""
        if self.kind == "categorical":
            return self.cardinality
        return len(self.bin_edges) - 1

    def bin_representative(self, index: int) -> float:
        """Midpoint of bin ``index`` for a numerical attribute."""
        lo, hi = self.bin_edges[index], self.bin_edges[index + 1]
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Schema:
    attributes: tuple[AttributeSpec, ...]
    version: str = "1"

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        if not self.preference_attributes:
            raise SchemaError("schema needs at least one preference attribute")
        if not self.conditional_attributes:
            raise SchemaError("no conditional attributes")
        if sum(1 for a in self.attributes if a.role == "time") > 1:
            raise SchemaError("at most one time attribute allowed")

    @property
    def preference_attributes(self) -> tuple[AttributeSpec, ...]:
        return tuple(a for a in self.attributes if a.role == "preference")

    @property
    def conditional_attributes(self) -> tuple[AttributeSpec, ...]:
        return tuple(a for a in self.attributes if a.role != "preference")

    @property
    def time_attribute(self) -> AttributeSpec | None:
        for a in self.attributes:
            if a.role == "time":
                return a
        return None

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {name!r}")

    def index_of(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise SchemaError(f"unknown attribute {name!r}")

    def to_dict(self) -> dict:
        attrs = []
        for a in self.attributes:
            d = {"name": a.name, "role": a.role, "kind": a.kind}
            if a.kind == "categorical":
                d["cardinality"] = a.cardinality
            else:
                d["bin_edges"] = list(a.bin_edges)
            if a.unit:
                d["unit"] = a.unit
            if a.labels is not None:
                d["labels"] = list(a.labels)
            if a.bucket_min_count is not None:
                d["bucket_min_count"] = a.bucket_min_count
            attrs.append(d)
        return {"version": self.version, "attributes": attrs}

    def content_hash(self) -> str:
        """Stable sha256 of the canonical JSON form, for provenance stamps."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def schema_from_dict(data: dict) -> Schema:
    if "attributes" not in data:
        raise SchemaError("schema file missing 'attributes'")
    attrs = []
    for entry in data["attributes"]:
        attrs.append(
            AttributeSpec(
                name=entry.get("name", ""),
                role=entry.get("role", ""),
                kind=entry.get("kind", ""),
                cardinality=entry.get("cardinality"),
                bin_edges=tuple(entry["bin_edges"]) if "bin_edges" in entry else None,
                unit=entry.get("unit", ""),
                labels=tuple(entry["labels"]) if "labels" in entry else None,
                bucket_min_count=entry.get("bucket_min_count"),
            )
        )
    return Schema(attributes=tuple(attrs), version=str(data.get("version", "1")))


def load_schema(path) -> Schema:
    """Load and validate a JSON schema file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"cannot parse schema file {path}: {exc}") from exc
    return schema_from_dict(data)


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class Record:
    """One survey row; values aligned with schema attribute order.

    Categorical values are int indices in [0, D_j); numerical values are
    raw reals.
    """

    values: tuple

    def value(self, schema: Schema, name: str):
        return self.values[schema.index_of(name)]


def validate_record(record: Record, schema: Schema) -> None:
    if len(record.values) != len(schema.attributes):
        raise SchemaError("record length does not match schema")
    for v, attr in zip(record.values, schema.attributes):
        if attr.kind == "categorical":
            if not (isinstance(v, (int, np.integer)) and 0 <= v < attr.cardinality):
                raise SchemaError(f"{attr.name}: category {v!r} out of range")
        else:
            if not np.isfinite(float(v)):
                raise SchemaError(f"{attr.name}: non-finite value")


# ---------------------------------------------------------------------------
# Ingestion


def _parse_cell(text: str, attr: AttributeSpec):
    """Parse one CSV cell; returns None when missing or unusable."""
    text = text.strip()
    if text == "":
        return None
    if attr.kind == "numerical":
        try:
            v = float(text)
        except ValueError:
            return None
        return v if np.isfinite(v) else None
    if attr.labels is not None and text in attr.labels:
        return attr.labels.index(text)
    try:
        idx = int(text)
    except ValueError:
        return None
    if 0 <= idx < attr.cardinality:
        return idx
    return None


def ingest_csv(path, schema: Schema) -> tuple[list[Record], int]:
    """Read a CSV with a header row into records.

    Rows containing any missing or unparsable cell are dropped; the drop
    count is returned alongside the surviving records. Extra columns not
    named in the schema are ignored.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [a.name for a in schema.attributes if a.name not in header]
        if missing:
            raise IngestError(f"{path}: header missing attributes {missing}")
        col_of = {a.name: header.index(a.name) for a in schema.attributes}
        records = []
        dropped = 0
        for row in reader:
            if not row:
                continue
            values = []
            ok = True
            for attr in schema.attributes:
                i = col_of[attr.name]
                cell = row[i] if i < len(row) else ""
                v = _parse_cell(cell, attr)
                if v is None:
                    ok = False
                    break
                values.append(v)
            if ok:
                records.append(Record(tuple(values)))
            else:
                dropped += 1
    if not records:
        raise IngestError(f"{path}: no surviving rows after filtering")
    return records, dropped


def write_records_csv(path, records, schema: Schema) -> None:
    """Write records in the ingestion CSV format (deterministic text)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([a.name for a in schema.attributes])
        for rec in records:
            row = []
            for v, attr in zip(rec.values, schema.attributes):
                if attr.kind == "categorical":
                    row.append(str(int(v)))
                else:
                    row.append(repr(float(v)))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Discretization


def discretize(value: float, edges) -> int:
    """Bin index i with edges[i] <= value < edges[i+1].

    Values below the first edge clamp to bin 0; values at or above the
    last edge clamp to the last bin. Interior edges are right-open.
    """
    edges = np.asarray(edges, dtype=float)
    i = int(np.searchsorted(edges, value, side="right")) - 1
    return min(max(i, 0), len(edges) - 2)


def discretize_array(values, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="right") - 1
    return np.clip(idx, 0, len(edges) - 2).astype(np.int64)


def quantile_edges(values, n_bins: int) -> list[float]:
    """Empirical quantile edges at i/n_bins; duplicates merged.

    Merging can yield fewer bins than requested (heavily tied data);
    callers see that through the returned length.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("values must be nonempty")
    qs = np.linspace(0.0, 1.0, n_bins + 1)
    edges = np.quantile(arr, qs)
    out = [float(edges[0])]
    for e in edges[1:]:
        if float(e) > out[-1]:
            out.append(float(e))
    if len(out) == 1:  # constant input: single degenerate bin
        out.append(out[0] + 1.0)
    return out


def one_hot(index: int, cardinality: int) -> np.ndarray:
    if not 0 <= index < cardinality:
        raise ValueError(f"index {index} out of range for cardinality {cardinality}")
    v = np.zeros(cardinality)
    v[index] = 1.0
    return v


# ---------------------------------------------------------------------------
# Encoding


@dataclass(frozen=True)
class BlockLayout:
    """Column span of one attribute inside an encoded block."""

    name: str
    start: int
    width: int
    onehot: bool


def build_layout(schema: Schema, preference: bool, numeric_mode: str = "discretize"):
    """Column layout for the preference (V) or conditional (C) block."""
    if numeric_mode not in NUMERIC_MODES:
        raise ValueError(f"unknown numeric_mode {numeric_mode!r}")
    attrs = schema.preference_attributes if preference else schema.conditional_attributes
    blocks = []
    offset = 0
    for a in attrs:
        if a.kind == "categorical" or numeric_mode == "discretize":
            width, onehot = a.n_categories, True
        else:
            width, onehot = 1, False
        blocks.append(BlockLayout(a.name, offset, width, onehot))
        offset += width
    return tuple(blocks), offset


@dataclass
class EncodedDataset:
    """Row-aligned encoded matrices plus the layouts used to build them."""

    conditional: np.ndarray
    preference: np.ndarray
    row_ids: tuple
    schema: Schema
    cond_layout: tuple[BlockLayout, ...]
    pref_layout: tuple[BlockLayout, ...]
    numeric_mode: str = "discretize"

    @property
    def n_rows(self) -> int:
        return self.conditional.shape[0]

    @property
    def dim_c(self) -> int:
        return self.conditional.shape[1]

    @property
    def dim_v(self) -> int:
        return self.preference.shape[1]

    def take(self, indices) -> "EncodedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(
            conditional=self.conditional[idx],
            preference=self.preference[idx],
            row_ids=tuple(self.row_ids[i] for i in idx),
            schema=self.schema,
            cond_layout=self.cond_layout,
            pref_layout=self.pref_layout,
            numeric_mode=self.numeric_mode,
        )


def _encode_value(v, attr: AttributeSpec, onehot: bool) -> np.ndarray:
    if attr.kind == "categorical":
        return one_hot(int(v), attr.cardinality)
    if onehot:
        return one_hot(discretize(float(v), attr.bin_edges), attr.n_categories)
    return np.array([float(v)])


def encode(records, schema: Schema, numeric_mode: str = "discretize") -> EncodedDataset:
    """Encode records into conditional and preference matrices."""
    cond_layout, dim_c = build_layout(schema, preference=False, numeric_mode=numeric_mode)
    pref_layout, dim_v = build_layout(schema, preference=True, numeric_mode=numeric_mode)
    n = len(records)
    C = np.zeros((n, dim_c))
    V = np.zeros((n, dim_v))
    cond_attrs = schema.conditional_attributes
    pref_attrs = schema.preference_attributes
    for r, rec in enumerate(records):
        for attr, block in zip(cond_attrs, cond_layout):
            v = rec.values[schema.index_of(attr.name)]
            C[r, block.start : block.start + block.width] = _encode_value(v, attr, block.onehot)
        for attr, block in zip(pref_attrs, pref_layout):
            v = rec.values[schema.index_of(attr.name)]
            V[r, block.start : block.start + block.width] = _encode_value(v, attr, block.onehot)
    return EncodedDataset(
        conditional=C,
        preference=V,
        row_ids=tuple(range(n)),
        schema=schema,
        cond_layout=cond_layout,
        pref_layout=pref_layout,
        numeric_mode=numeric_mode,
    )


def decode_block(vector, layout, schema: Schema, mode: str = "exact", rng=None) -> dict:
    """Decode one encoded block row back to attribute values.

    mode "exact" expects unit one-hot segments (argmax; exact round trip),
    "argmax" takes the most probable category of a probability segment,
    and "sample" draws a category from the segment distribution using rng.
    Numerical attributes come back as the bin midpoint (one-hot segments)
    or the raw column value.
    """
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    vector = np.asarray(vector, dtype=float)
    out = {}
    for block in layout:
        attr = schema.attribute(block.name)
        seg = vector[block.start : block.start + block.width]
        if not block.onehot:
            out[block.name] = float(seg[0])
            continue
        if mode == "sample":
            p = seg / seg.sum()
            idx = int(rng.choice(block.width, p=p))
        else:
            idx = int(np.argmax(seg))
        if attr.kind == "categorical":
            out[block.name] = idx
        else:
            out[block.name] = attr.bin_representative(idx)
    return out


def decode(cond_row, pref_row, dataset: EncodedDataset, mode: str = "exact", rng=None) -> Record:
    """Rebuild a full record from its two encoded rows."""
    values = {}
    values.update(decode_block(cond_row, dataset.cond_layout, dataset.schema, mode, rng))
    values.update(decode_block(pref_row, dataset.pref_layout, dataset.schema, mode, rng))
    return Record(tuple(values[a.name] for a in dataset.schema.attributes))


# ---------------------------------------------------------------------------
# Splitting and bucketing


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    if n < 1:
        raise ValueError("dataset must be nonempty")
    k = int(round(n * fraction))
    if k == 0 or k == n:
        raise ValueError(f"fraction {fraction} yields an empty side for n={n}")
    perm = derive_rng(seed, "split").permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_train_val(records, fraction: float, seed: int):
    """Deterministic shuffled split into (train, validation) record lists."""
    idx_train, idx_val = split_indices(len(records), fraction, seed)
    return [records[i] for i in idx_train], [records[i] for i in idx_val]


def bucket_rare_categories(records, schema: Schema):
    """Collapse rare categories of flagged attributes into one "other" bin.

    Attributes with ``bucket_min_count`` set have every category observed
    fewer times than the threshold remapped to a trailing "other" category.
    Returns (records, schema, mapping) where mapping gives old->new index
    per rewritten attribute.
    """
    mapping = {}
    new_attrs = list(schema.attributes)
    new_values = [list(r.values) for r in records]
    for pos, attr in enumerate(schema.attributes):
        if attr.bucket_min_count is None or attr.kind != "categorical":
            continue
        counts = np.zeros(attr.cardinality, dtype=np.int64)
        for r in records:
            counts[int(r.values[pos])] += 1
        keep = [i for i in range(attr.cardinality) if counts[i] >= attr.bucket_min_count]
        if len(keep) == attr.cardinality:
            continue
        remap = {}
        for new_idx, old_idx in enumerate(keep):
            remap[old_idx] = new_idx
        other = len(keep)
        for old_idx in range(attr.cardinality):
            remap.setdefault(old_idx, other)
        mapping[attr.name] = remap
        new_attrs[pos] = replace(
            attr, cardinality=other + 1, labels=None, bucket_min_count=None
        )
        for row in new_values:
            row[pos] = remap[int(row[pos])]
    if not mapping:
        return list(records), schema, mapping
    new_schema = Schema(attributes=tuple(new_attrs), version=schema.version)
    return [Record(tuple(v)) for v in new_values], new_schema, mapping
