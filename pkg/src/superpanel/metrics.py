"""Distribution comparison over cross-tabulated joint histograms.

Histograms are dense over the full cross product of the subset's category
counts; zero cells are kept because the standardized error divides by the
total bin count. Two histograms are comparable only when they share the
same subset and dimensions.
"""

import math
from dataclasses import dataclass

import numpy as np

from .schema import Schema, discretize_array

#: guard against accidentally materializing astronomically large joints
DEFAULT_BIN_CAP = 1_000_000


class MetricError(ValueError):
    """Histogram mismatch or degenerate input."""


@dataclass(frozen=True)
class JointHistogram:
    subset: tuple[str, ...]
    dims: tuple[int, ...]
    frequencies: np.ndarray
    n_source: int

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.dims))

    def marginal(self, attribute: str) -> np.ndarray:
        """Axis sum onto one attribute of the subset."""
        if attribute not in self.subset:
            raise MetricError(f"{attribute!r} not in subset {self.subset}")
        axis = self.subset.index(attribute)
        grid = self.frequencies.reshape(self.dims)
        other = tuple(i for i in range(len(self.dims)) if i != axis)
        return grid.sum(axis=other)


@dataclass(frozen=True)
class ComparisonReport:
    subset: tuple[str, ...]
    n_bins: int
    srmse: float
    corr: float
    r2: float


def _check_pair(a: JointHistogram, b: JointHistogram) -> None:
    if a.subset != b.subset or a.dims != b.dims:
        raise MetricError(f"histogram mismatch: {a.subset}/{a.dims} vs {b.subset}/{b.dims}")


def subset_dims(schema: Schema, subset) -> tuple[int, ...]:
    return tuple(schema.attribute(name).n_categories for name in subset)


def category_columns(records, subset, schema: Schema) -> dict[str, np.ndarray]:
    """Column arrays of category indices; numericals go through their bins."""
    cols = {}
    for name in subset:
        attr = schema.attribute(name)
        pos = schema.index_of(name)
        raw = [rec.values[pos] for rec in records]
        if attr.kind == "categorical":
            cols[name] = np.asarray(raw, dtype=np.int64)
        else:
            cols[name] = discretize_array(raw, attr.bin_edges)
    return cols


def cross_tabulate_columns(
    columns: dict[str, np.ndarray], subset, schema: Schema, bin_cap: int = DEFAULT_BIN_CAP
) -> JointHistogram:
    """Dense normalized cross tabulation from pre-extracted index columns."""
    subset = tuple(subset)
    if not subset:
        raise MetricError("empty subset")
    dims = subset_dims(schema, subset)
    n_bins = int(np.prod(dims))
    if n_bins > bin_cap:
        raise MetricError(f"joint over {subset} has {n_bins} bins, above cap {bin_cap}")
    idx = [np.asarray(columns[name], dtype=np.int64) for name in subset]
    n = idx[0].shape[0]
    if n == 0:
        raise MetricError("no records to tabulate")
    flat = np.ravel_multi_index(idx, dims)
    counts = np.bincount(flat, minlength=n_bins).astype(float)
    return JointHistogram(subset=subset, dims=dims, frequencies=counts / n, n_source=n)


def cross_tabulate(records, subset, schema: Schema, bin_cap: int = DEFAULT_BIN_CAP) -> JointHistogram:
    """Dense normalized cross tabulation of records over a subset."""
    if not records:
        raise MetricError("no records to tabulate")
    cols = category_columns(records, subset, schema)
    return cross_tabulate_columns(cols, subset, schema, bin_cap)


def srmse(pi_hat: JointHistogram, pi: JointHistogram) -> float:
    """Root mean squared bin error divided by the mean reference frequency."""
    _check_pair(pi_hat, pi)
    n_b = pi.n_bins
    rmse = math.sqrt(float(np.sum((pi_hat.frequencies - pi.frequencies) ** 2)) / n_b)
    mean_ref = float(np.sum(pi.frequencies)) / n_b
    if mean_ref == 0.0:
        raise MetricError("reference histogram is empty")
    return rmse / mean_ref


def pearson(pi_hat: JointHistogram, pi: JointHistogram) -> float:
    _check_pair(pi_hat, pi)
    a = pi_hat.frequencies - pi_hat.frequencies.mean()
    b = pi.frequencies - pi.frequencies.mean()
    denom = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denom == 0.0:
        raise MetricError("zero-variance histogram in correlation")
    return float(np.sum(a * b)) / denom


def r2(pi_hat: JointHistogram, pi: JointHistogram) -> float:
    _check_pair(pi_hat, pi)
    resid = float(np.sum((pi.frequencies - pi_hat.frequencies) ** 2))
    total = float(np.sum((pi.frequencies - pi.frequencies.mean()) ** 2))
    if total == 0.0:
        raise MetricError("zero-variance reference histogram")
    return 1.0 - resid / total


def compare(pi_hat: JointHistogram, pi: JointHistogram) -> ComparisonReport:
    return ComparisonReport(
        subset=pi.subset,
        n_bins=pi.n_bins,
        srmse=srmse(pi_hat, pi),
        corr=pearson(pi_hat, pi),
        r2=r2(pi_hat, pi),
    )


def marginals(records, attribute: str, schema: Schema) -> np.ndarray:
    """Per-category frequency vector of one attribute."""
    if not records:
        raise MetricError("no records")
    cols = category_columns(records, (attribute,), schema)
    counts = np.bincount(cols[attribute], minlength=schema.attribute(attribute).n_categories)
    return counts.astype(float) / len(records)


def _tuple_set(records, schema: Schema):
    names = tuple(a.name for a in schema.attributes)
    cols = category_columns(records, names, schema)
    mat = np.stack([cols[n] for n in names], axis=1)
    return {tuple(row) for row in mat.tolist()}, mat


def overlap(sample_a, sample_b, schema: Schema) -> float:
    """Percentage of records in a whose full category tuple occurs in b.

    Numerical attributes are compared in bin space so that generated bin
    midpoints match the raw survey values that fall in the same bin.
    """
    if not sample_a or not sample_b:
        raise MetricError("overlap needs nonempty samples")
    b_set, _ = _tuple_set(sample_b, schema)
    _, a_mat = _tuple_set(sample_a, schema)
    hits = sum(1 for row in a_mat.tolist() if tuple(row) in b_set)
    return 100.0 * hits / len(sample_a)


def overlap_pair(sample_a, sample_b, schema: Schema) -> tuple[float, float]:
    """Overlap measured in both directions (a-in-b, b-in-a)."""
    return overlap(sample_a, sample_b, schema), overlap(sample_b, sample_a, schema)


def dispersion(values, kind: str = "entropy") -> float:
    """Spread statistic.

    kind "entropy": Shannon entropy in nats of a frequency vector;
    kind "sum_squares": sum of squared frequencies;
    kind "sem": standard deviation of the mean of raw numeric values.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise MetricError("empty input")
    if kind == "entropy":
        p = arr[arr > 0]
        return float(-np.sum(p * np.log(p)))
    if kind == "sum_squares":
        return float(np.sum(arr * arr))
    if kind == "sem":
        if arr.size == 1:
            return 0.0
        return float(np.std(arr, ddof=1) / math.sqrt(arr.size))
    raise ValueError(f"unknown dispersion kind {kind!r}")
