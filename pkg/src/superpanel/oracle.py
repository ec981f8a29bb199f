"""Synthetic data-generating process with analytically known conditionals.

The generator is a small categorical Bayesian network: conditional
attributes are drawn from declared priors, preference attributes from
probability tables over their parents (earlier attributes in schema
order). Optional drift entries shift one category's probability linearly
in the year value for table rows matching a parent filter, with the
remaining categories rescaled proportionally; the shifted category's
probability is therefore exactly base + year * per_year.

Because every conditional is explicit, the exact joint preference
distribution for any profile and year is computable by enumeration, which
turns statistical claims about the trained model into checkable facts.
"""

import json
from dataclasses import dataclass
from itertools import product

import numpy as np

from .metrics import JointHistogram, cross_tabulate_columns, category_columns
from .schema import AttributeSpec, Record, Schema, schema_from_dict
from .seeding import derive_rng


class DgpError(ValueError):
    """Malformed generating-process declaration."""


@dataclass(frozen=True)
class TableSpec:
    """Probability table of one attribute given its parents.

    probs has shape (prod of parent cardinalities, D_j), row-major over
    parent value tuples in declared parent order; no parents means a
    single prior row.
    """

    attribute: str
    parents: tuple[str, ...]
    probs: tuple[tuple[float, ...], ...]

    def row_index(self, parent_values, parent_dims) -> int:
        idx = 0
        for v, d in zip(parent_values, parent_dims):
            idx = idx * d + int(v)
        return idx


@dataclass(frozen=True)
class DriftSpec:
    """Linear per-year shift of one category on matching table rows."""

    attribute: str
    category: int
    per_year: float
    when: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class DgpSpec:
    schema: Schema
    tables: tuple[TableSpec, ...]
    drifts: tuple[DriftSpec, ...] = ()
    years: tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "drifts", tuple(self.drifts))
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        declared = {t.attribute for t in self.tables}
        for a in self.schema.attributes:
            if a.role == "time":
                continue
            if a.kind != "categorical":
                raise DgpError("generator supports categorical attributes only")
            if a.name not in declared:
                raise DgpError(f"no table for attribute {a.name}")
        order = {a.name: i for i, a in enumerate(self.schema.attributes)}
        for t in self.tables:
            dims = [self.schema.attribute(p).cardinality for p in t.parents]
            expected_rows = int(np.prod(dims)) if dims else 1
            card = self.schema.attribute(t.attribute).cardinality
            if len(t.probs) != expected_rows or any(len(r) != card for r in t.probs):
                raise DgpError(f"table for {t.attribute} has wrong shape")
            for row in t.probs:
                if abs(sum(row) - 1.0) > 1e-9 or any(p < 0 for p in row):
                    raise DgpError(f"table row for {t.attribute} is not a distribution")
            for p in t.parents:
                if order[p] >= order[t.attribute]:
                    raise DgpError(f"{t.attribute}: parent {p} must come earlier in the schema")
        for d in self.drifts:
            self._drifted_row_check(d)

    def _drifted_row_check(self, drift: DriftSpec) -> None:
        table = self.table_for(drift.attribute)
        card = self.schema.attribute(drift.attribute).cardinality
        if not 0 <= drift.category < card:
            raise DgpError(f"drift category {drift.category} out of range")
        when = dict(drift.when)
        for name in when:
            if name not in table.parents:
                raise DgpError(f"drift filter {name} is not a parent of {drift.attribute}")
        for row_values, row in self._table_rows(table):
            if all(row_values.get(k) == v for k, v in when.items()):
                for year in self.years:
                    p = row[drift.category] + year * drift.per_year
                    if not 0.0 <= p <= 1.0:
                        raise DgpError(
                            f"drift on {drift.attribute} leaves [0,1] at year {year}"
                        )

    def _table_rows(self, table: TableSpec):
        dims = [self.schema.attribute(p).cardinality for p in table.parents]
        for i, combo in enumerate(product(*[range(d) for d in dims])):
            yield dict(zip(table.parents, combo)), table.probs[i]

    def table_for(self, attribute: str) -> TableSpec:
        for t in self.tables:
            if t.attribute == attribute:
                return t
        raise DgpError(f"no table for {attribute}")

    @property
    def drifting_filter(self) -> dict:
        """Union of the parent filters that receive drift (ground truth
        for which individuals move)."""
        out = {}
        for d in self.drifts:
            out.update(dict(d.when))
        return out

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "years": list(self.years),
            "tables": [
                {"attribute": t.attribute, "parents": list(t.parents),
                 "probs": [list(r) for r in t.probs]}
                for t in self.tables
            ],
            "drifts": [
                {"attribute": d.attribute, "category": d.category,
                 "per_year": d.per_year, "when": dict(d.when)}
                for d in self.drifts
            ],
        }


def dgp_from_dict(data: dict) -> DgpSpec:
    return DgpSpec(
        schema=schema_from_dict(data["schema"]),
        tables=tuple(
            TableSpec(
                attribute=t["attribute"],
                parents=tuple(t["parents"]),
                probs=tuple(tuple(float(p) for p in row) for row in t["probs"]),
            )
            for t in data["tables"]
        ),
        drifts=tuple(
            DriftSpec(
                attribute=d["attribute"],
                category=int(d["category"]),
                per_year=float(d["per_year"]),
                when=tuple(sorted(d.get("when", {}).items())),
            )
            for d in data.get("drifts", [])
        ),
        years=tuple(data.get("years", [0])),
    )


def load_dgp(path) -> DgpSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return dgp_from_dict(json.load(fh))


def save_dgp(spec: DgpSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


def effective_table(spec: DgpSpec, table: TableSpec, year: int) -> np.ndarray:
    """Full table at one year, matching drifts applied row by row."""
    dims = [spec.schema.attribute(p).cardinality for p in table.parents]
    rows = np.array(table.probs, dtype=float)
    my_drifts = [d for d in spec.drifts if d.attribute == table.attribute]
    if not my_drifts:
        return rows
    for i, combo in enumerate(product(*[range(d) for d in dims])):
        parent_values = dict(zip(table.parents, combo))
        row = rows[i]
        for drift in my_drifts:
            if not all(parent_values.get(k) == v for k, v in dict(drift.when).items()):
                continue
            base = row[drift.category]
            target = base + year * drift.per_year
            rest = 1.0 - base
            if rest > 0:
                row[:] *= (1.0 - target) / rest
            row[drift.category] = target
    return rows


def _effective_row(spec: DgpSpec, table: TableSpec, parent_values: dict, year: int) -> np.ndarray:
    dims = [spec.schema.attribute(p).cardinality for p in table.parents]
    row_idx = table.row_index([parent_values[p] for p in table.parents], dims) if dims else 0
    return effective_table(spec, table, year)[row_idx]


def generate_dataset(spec: DgpSpec, n_per_year: int, years=None, seed: int = 0) -> list[Record]:
    """Ancestral sampling: n_per_year records for each requested year.

    Sampling is vectorized per attribute within a year; each year owns its
    derived stream, so any subset of years reproduces exactly.
    """
    if n_per_year < 0:
        raise ValueError("n_per_year must be >= 0")
    years = tuple(years) if years is not None else spec.years
    schema = spec.schema
    time_attr = schema.time_attribute
    records: list[Record] = []
    for year in years:
        rng = derive_rng(seed, "dgp-year", int(year))
        cols: dict[str, np.ndarray] = {}
        if time_attr is not None:
            cols[time_attr.name] = np.full(n_per_year, int(year), dtype=np.int64)
        for attr in schema.attributes:
            if time_attr is not None and attr.name == time_attr.name:
                continue
            table = spec.table_for(attr.name)
            rows = effective_table(spec, table, int(year))
            if table.parents:
                dims = [schema.attribute(p).cardinality for p in table.parents]
                row_idx = np.ravel_multi_index([cols[p] for p in table.parents], dims)
            else:
                row_idx = np.zeros(n_per_year, dtype=np.int64)
            probs = rows[row_idx]
            cum = np.cumsum(probs, axis=1)
            u = rng.random(n_per_year) * cum[:, -1]
            cat = np.sum(u[:, None] >= cum, axis=1)
            cols[attr.name] = np.minimum(cat, rows.shape[1] - 1).astype(np.int64)
        mat = np.stack([cols[a.name] for a in schema.attributes], axis=1)
        records.extend(Record(tuple(int(v) for v in row)) for row in mat)
    return records


def exact_conditional(spec: DgpSpec, profile_values: dict, year: int) -> JointHistogram:
    """Exact joint preference distribution for one profile at one year.

    Enumerates every preference combination and multiplies the table
    conditionals along the ancestral order.
    """
    schema = spec.schema
    pref = schema.preference_attributes
    subset = tuple(a.name for a in pref)
    dims = tuple(a.cardinality for a in pref)
    freqs = np.zeros(int(np.prod(dims)))
    for flat, combo in enumerate(product(*[range(d) for d in dims])):
        values = dict(profile_values)
        if schema.time_attribute is not None:
            values[schema.time_attribute.name] = int(year)
        p = 1.0
        for attr, cat in zip(pref, combo):
            table = spec.table_for(attr.name)
            row = _effective_row(spec, table, values, int(year))
            p *= row[cat]
            values[attr.name] = cat
        freqs[flat] = p
    return JointHistogram(subset=subset, dims=dims, frequencies=freqs, n_source=0)


def exact_population_joint(spec: DgpSpec, profiles_values, year: int) -> JointHistogram:
    """Mixture of exact conditionals over a pool of profiles."""
    hists = [exact_conditional(spec, pv, year) for pv in profiles_values]
    freqs = np.mean([h.frequencies for h in hists], axis=0)
    first = hists[0]
    return JointHistogram(subset=first.subset, dims=first.dims, frequencies=freqs,
                          n_source=len(hists))


def baseline_independent(records, subset, schema: Schema) -> JointHistogram:
    """Correlation-blind reference: outer product of empirical marginals."""
    if not records:
        raise ValueError("no records")
    subset = tuple(subset)
    cols = category_columns(records, subset, schema)
    joint = cross_tabulate_columns(cols, subset, schema)
    freqs = np.ones(1)
    for name in subset:
        freqs = np.outer(freqs, joint.marginal(name)).ravel()
    return JointHistogram(subset=subset, dims=joint.dims, frequencies=freqs,
                          n_source=len(records))


# ---------------------------------------------------------------------------
# Canned generating processes

CANNED_SPECS = ("static-corr", "drift-split")


def canned_spec(name: str) -> DgpSpec:
    """Shipped ground-truth processes.

    "static-corr": stationary, strongly correlated preference block with a
    2 x 2 x 4 x 6 joint (96 combinations). "drift-split": half the
    population carries a linear preference drift, the other half is
    static; ground truth for trend slopes and mover separation.
    """
    if name == "static-corr":
        schema = Schema(
            attributes=(
                AttributeSpec("year", "time", "categorical", cardinality=5),
                AttributeSpec("segment", "socio", "categorical", cardinality=3),
                AttributeSpec("p_bike", "preference", "categorical", cardinality=2),
                AttributeSpec("p_ticket", "preference", "categorical", cardinality=2),
                AttributeSpec("p_cars", "preference", "categorical", cardinality=4),
                AttributeSpec("p_dist", "preference", "categorical", cardinality=6),
            ),
            version="static-corr-1",
        )
        tables = (
            TableSpec("segment", (), ((0.5, 0.3, 0.2),)),
            TableSpec("p_bike", ("segment",), ((0.75, 0.25), (0.45, 0.55), (0.2, 0.8))),
            # strong coupling to p_bike: the independent baseline misses it
            TableSpec("p_ticket", ("p_bike",), ((0.85, 0.15), (0.2, 0.8))),
            TableSpec(
                "p_cars",
                ("segment",),
                (
                    (0.55, 0.3, 0.1, 0.05),
                    (0.2, 0.45, 0.25, 0.1),
                    (0.05, 0.2, 0.45, 0.3),
                ),
            ),
            # near-deterministic ladder on p_cars keeps the joint concentrated
            TableSpec(
                "p_dist",
                ("p_cars",),
                (
                    (0.6, 0.25, 0.1, 0.03, 0.01, 0.01),
                    (0.15, 0.5, 0.25, 0.05, 0.03, 0.02),
                    (0.05, 0.15, 0.45, 0.25, 0.07, 0.03),
                    (0.02, 0.05, 0.15, 0.35, 0.28, 0.15),
                ),
            ),
        )
        return DgpSpec(schema=schema, tables=tables, drifts=(), years=(0, 1, 2, 3, 4))

    if name == "drift-split":
        schema = Schema(
            attributes=(
                AttributeSpec("year", "time", "categorical", cardinality=5),
                AttributeSpec("group", "socio", "categorical", cardinality=2),
                AttributeSpec("segment", "socio", "categorical", cardinality=3),
                AttributeSpec("p_mode", "preference", "categorical", cardinality=3),
                AttributeSpec("p_trips", "preference", "categorical", cardinality=3),
            ),
            version="drift-split-1",
        )
        tables = (
            TableSpec("group", (), ((0.5, 0.5),)),
            TableSpec("segment", (), ((0.4, 0.35, 0.25),)),
            TableSpec(
                "p_mode",
                ("group",),
                ((0.30, 0.45, 0.25), (0.30, 0.45, 0.25)),
            ),
            TableSpec(
                "p_trips",
                ("p_mode",),
                ((0.7, 0.2, 0.1), (0.15, 0.7, 0.15), (0.1, 0.2, 0.7)),
            ),
        )
        drifts = (
            DriftSpec(attribute="p_mode", category=0, per_year=0.05, when=(("group", 1),)),
        )
        return DgpSpec(schema=schema, tables=tables, drifts=drifts, years=(0, 1, 2, 3, 4))

    raise DgpError(f"unknown canned process {name!r}; have {CANNED_SPECS}")
