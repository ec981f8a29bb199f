"""Individual-level pseudo panel built by conditional resampling.

A fixed pool of individuals, described by their reference-year profiles,
is pushed through every requested year: socio and geography values stay
frozen, the time value is set to the target year, and external values may
vary per year through an explicit table. For each (individual, year) cell
the model is sampled R times and the draws are tabulated into preference
distribution estimates. Downstream consumers extract per-year trends,
rank individuals by how far their distributions travel between two years,
and quantify model uncertainty by refitting on bootstrap resamples.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cvae, metrics
from .metrics import JointHistogram
from .sampling import (
    ConditionProfile,
    encode_profile,
    profiles_from_records,
    sampled_category_columns,
    _decode_with_noise,
    _n_onehot_blocks,
)
from .schema import Schema, encode
from .seeding import derive_rng, derive_seed


class PanelError(ValueError):
    """Unusable panel request (missing years, externals, or draws)."""


MIN_DRAWS_PER_CELL = 10  # distribution estimates below this are meaningless


@dataclass
class PanelCube:
    """Per-(individual, year) preference distribution estimates.

    subset_freqs maps each declared subset to an (N, T, n_bins) array;
    attr_freqs holds single-attribute marginals for every preference
    attribute, used by trend extraction.
    """

    individuals: tuple[ConditionProfile, ...]
    years: tuple[int, ...]
    schema: Schema
    subsets: tuple[tuple[str, ...], ...]
    subset_freqs: dict
    attr_freqs: dict
    external_by_year: dict | None
    draws_per_cell: int
    seed: int

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    def cell_histogram(self, subset, i: int, t: int) -> JointHistogram:
        subset = tuple(subset)
        dims = metrics.subset_dims(self.schema, subset)
        return JointHistogram(
            subset=subset,
            dims=dims,
            frequencies=self.subset_freqs[subset][i, t],
            n_source=self.draws_per_cell,
        )


def default_distance_subset(schema: Schema, bin_cap: int = metrics.DEFAULT_BIN_CAP):
    """All preference attributes jointly when the dense joint fits the cap."""
    subset = tuple(a.name for a in schema.preference_attributes)
    n_bins = int(np.prod(metrics.subset_dims(schema, subset)))
    return subset if n_bins <= bin_cap else None


def _profile_for_year(profile: ConditionProfile, schema: Schema, year: int,
                      external_by_year) -> ConditionProfile:
    updates = {}
    t = schema.time_attribute
    if t is not None:
        updates[t.name] = int(year)
    externals = [a.name for a in schema.attributes if a.role == "external"]
    if externals:
        if external_by_year is None or year not in external_by_year:
            raise PanelError(f"missing external values for year {year}")
        per_id = external_by_year[year]
        if profile.id not in per_id:
            raise PanelError(f"missing external values for individual {profile.id} in year {year}")
        for name in externals:
            if name not in per_id[profile.id]:
                raise PanelError(f"missing external attribute {name} for {profile.id}/{year}")
            updates[name] = per_id[profile.id][name]
    return profile.with_values(**updates)


def _panel_year_block(args):
    """All cells of one year: per-individual subset and marginal frequencies."""
    (t_idx, year, model, base_population, external_by_year, subsets, draws_per_cell,
     seed, chunk_rows) = args
    schema = model.schema
    pref_names = tuple(a.name for a in schema.preference_attributes)
    n, r = len(base_population), draws_per_cell
    d_z = model.config.latent_dim
    n_blocks = _n_onehot_blocks(model)
    subset_out = {
        s: np.zeros((n, int(np.prod(metrics.subset_dims(schema, s))))) for s in subsets
    }
    attr_out = {
        name: np.zeros((n, schema.attribute(name).n_categories)) for name in pref_names
    }
    cond_rows = np.stack(
        [
            encode_profile(_profile_for_year(p, schema, year, external_by_year),
                           schema, model.cond_layout)
            for p in base_population
        ]
    )
    cells_per_chunk = max(1, chunk_rows // r)
    for chunk_start in range(0, n, cells_per_chunk):
        chunk = range(chunk_start, min(chunk_start + cells_per_chunk, n))
        eps = np.empty((len(chunk) * r, d_z))
        uniforms = np.empty((len(chunk) * r, n_blocks))
        for k, i in enumerate(chunk):
            cell_rng = derive_rng(seed, "panel-cell", base_population[i].id, int(year))
            eps[k * r : (k + 1) * r] = cell_rng.standard_normal((r, d_z))
            uniforms[k * r : (k + 1) * r] = cell_rng.random((r, n_blocks))
        expanded = np.repeat(cond_rows[list(chunk)], r, axis=0)
        cols = _decode_with_noise(model, expanded, eps, uniforms, "sample")
        cat_cols = sampled_category_columns(model, cols)
        for k, i in enumerate(chunk):
            sel = slice(k * r, (k + 1) * r)
            for name in pref_names:
                counts = np.bincount(
                    cat_cols[name][sel], minlength=schema.attribute(name).n_categories
                )
                attr_out[name][i] = counts / r
            for s in subsets:
                dims = metrics.subset_dims(schema, s)
                flat = np.ravel_multi_index([cat_cols[a][sel] for a in s], dims)
                subset_out[s][i] = np.bincount(flat, minlength=int(np.prod(dims))) / r
    return t_idx, subset_out, attr_out


def build_panel(model: cvae.TrainedModel, base_population, years, external_by_year,
                draws_per_cell: int, seed: int, subsets=None,
                chunk_rows: int = 65536, jobs: int = 1) -> PanelCube:
    """Sample every (individual, year) cell and tabulate the draws.

    Each cell owns an rng derived from (seed, individual id, year), so the
    cube is identical however the cells are scheduled; jobs > 1 spreads
    the per-year blocks over worker processes. Decoding runs in large
    stacked batches for speed.
    """
    if not base_population:
        raise PanelError("base population is empty")
    if draws_per_cell < MIN_DRAWS_PER_CELL:
        raise PanelError(f"draws_per_cell below floor {MIN_DRAWS_PER_CELL}")
    years = tuple(int(y) for y in years)
    if not years:
        raise PanelError("no years requested")
    schema = model.schema
    if subsets is None:
        joint = default_distance_subset(schema)
        subsets = (joint,) if joint is not None else ()
    subsets = tuple(tuple(s) for s in subsets)
    pref_names = tuple(a.name for a in schema.preference_attributes)
    base_population = tuple(base_population)

    # fail fast on missing externals before any sampling work
    for year in years:
        for p in base_population:
            _profile_for_year(p, schema, year, external_by_year)

    n, t_count, r = len(base_population), len(years), draws_per_cell
    subset_freqs = {
        s: np.zeros((n, t_count, int(np.prod(metrics.subset_dims(schema, s))))) for s in subsets
    }
    attr_freqs = {
        name: np.zeros((n, t_count, schema.attribute(name).n_categories)) for name in pref_names
    }
    args = [
        (t_idx, year, model, base_population, external_by_year, subsets, r, seed, chunk_rows)
        for t_idx, year in enumerate(years)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            blocks = list(pool.map(_panel_year_block, args))
    else:
        blocks = [_panel_year_block(a) for a in args]
    for t_idx, subset_out, attr_out in blocks:
        for s in subsets:
            subset_freqs[s][:, t_idx, :] = subset_out[s]
        for name in pref_names:
            attr_freqs[name][:, t_idx, :] = attr_out[name]

    return PanelCube(
        individuals=base_population,
        years=years,
        schema=schema,
        subsets=subsets,
        subset_freqs=subset_freqs,
        attr_freqs=attr_freqs,
        external_by_year=external_by_year,
        draws_per_cell=draws_per_cell,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Trends


@dataclass(frozen=True)
class TrendSeries:
    attribute: str
    years: tuple[int, ...]
    kind: str  # "numeric" or "categorical"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    category_probs: np.ndarray | None = None  # (T, D_j)
    n_individuals: int = 0


def _condition_mask(individuals, condition) -> np.ndarray:
    if condition is None:
        return np.ones(len(individuals), dtype=bool)
    if callable(condition):
        return np.array([bool(condition(p)) for p in individuals])
    return np.array(
        [all(p.values.get(k) == v for k, v in condition.items()) for p in individuals]
    )


def aggregate_trend(cube: PanelCube, attribute: str, condition=None) -> TrendSeries:
    """Per-year series over the individuals passing the condition.

    Numerical (binned) attributes yield the mean and standard deviation of
    the sampled values via bin midpoints; categorical attributes yield
    per-year category probabilities. Both are the draws-weighted mixture
    of the per-individual distribution estimates.
    """
    attr = cube.schema.attribute(attribute)
    if attr.role != "preference":
        raise PanelError(f"{attribute} is not a preference attribute")
    mask = _condition_mask(cube.individuals, condition)
    if not mask.any():
        raise PanelError("condition matches no individuals")
    freqs = cube.attr_freqs[attribute][mask]  # (n_sel, T, D)
    mix = freqs.mean(axis=0)  # (T, D)
    if attr.kind == "numerical":
        reps = np.array([attr.bin_representative(i) for i in range(attr.n_categories)])
        mean = mix @ reps
        second = mix @ (reps ** 2)
        var = np.maximum(second - mean ** 2, 0.0)
        return TrendSeries(
            attribute=attribute, years=cube.years, kind="numeric",
            mean=mean, std=np.sqrt(var), n_individuals=int(mask.sum()),
        )
    return TrendSeries(
        attribute=attribute, years=cube.years, kind="categorical",
        category_probs=mix, n_individuals=int(mask.sum()),
    )


def fit_slope(years, values) -> float:
    """Least-squares slope of values against years."""
    x = np.asarray(years, dtype=float)
    y = np.asarray(values, dtype=float)
    x = x - x.mean()
    denom = float(np.sum(x * x))
    if denom == 0.0:
        raise ValueError("need at least two distinct years")
    return float(np.sum(x * (y - y.mean())) / denom)


# ---------------------------------------------------------------------------
# Movers


@dataclass
class MoverReport:
    ids: tuple[str, ...]
    distances: np.ndarray
    fast_ids: tuple[str, ...]
    slow_ids: tuple[str, ...]
    decile_edges: np.ndarray
    t_start: int
    t_end: int
    subset: tuple[str, ...]


def classify_movers(cube: PanelCube, t_start: int, t_end: int, subset=None) -> MoverReport:
    """Rank individuals by the distance their preference distribution moved.

    Distance is the standardized histogram error between the two years'
    estimates over the declared subset. The slow group is the first
    decile of the ascending ranking, the fast group the last; ties break
    on the stable (distance, id) order and both groups have exactly
    floor(N/10) members.
    """
    if subset is None:
        if not cube.subsets:
            raise PanelError("cube has no stored subsets")
        subset = cube.subsets[0]
    subset = tuple(subset)
    if subset not in cube.subset_freqs:
        raise PanelError(f"subset {subset} not stored in cube")
    if t_start not in cube.years or t_end not in cube.years:
        raise PanelError("requested years not in cube")
    if cube.draws_per_cell < MIN_DRAWS_PER_CELL:
        raise PanelError("too few draws per cell for distance estimates")
    i_start = cube.years.index(t_start)
    i_end = cube.years.index(t_end)
    freqs = cube.subset_freqs[subset]
    n_bins = freqs.shape[2]
    diff = freqs[:, i_end, :] - freqs[:, i_start, :]
    # SRMSE with reference frequencies summing to 1: rmse / (1 / n_bins)
    distances = np.sqrt(np.sum(diff ** 2, axis=1) / n_bins) * n_bins

    ids = tuple(p.id for p in cube.individuals)
    order = sorted(range(len(ids)), key=lambda i: (distances[i], ids[i]))
    k = len(ids) // 10
    slow = tuple(ids[i] for i in order[:k])
    fast = tuple(ids[i] for i in order[len(ids) - k :])
    return MoverReport(
        ids=ids,
        distances=distances,
        fast_ids=fast,
        slow_ids=slow,
        decile_edges=np.quantile(distances, np.linspace(0, 1, 11)),
        t_start=t_start,
        t_end=t_end,
        subset=subset,
    )


def group_marginals(base_population, ids, schema: Schema) -> dict:
    """Socio-attribute frequency tables for a group of individuals.

    Returns {attribute: {"frequencies": array, "mode": index}} in the
    shape used by the mover profile tables.
    """
    ids = set(ids)
    members = [p for p in base_population if p.id in ids]
    if not members:
        raise PanelError("empty group")
    out = {}
    for attr in schema.attributes:
        if attr.role != "socio":
            continue
        counts = np.zeros(attr.n_categories)
        for p in members:
            v = p.values[attr.name]
            if attr.kind == "numerical":
                from .schema import discretize

                v = discretize(float(v), attr.bin_edges)
            counts[int(v)] += 1
        freqs = counts / counts.sum()
        out[attr.name] = {"frequencies": freqs, "mode": int(np.argmax(freqs))}
    return out


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class StatisticSpec:
    """One tracked statistic.

    Categorical attributes report the frequency of ``category``;
    numerical (binned) attributes report the mean via bin midpoints when
    category is None. An optional condition restricts to a cohort, and
    per_year splits the statistic by the time attribute.
    """

    attribute: str
    category: int | None = None
    condition: tuple[tuple[str, int], ...] = ()
    per_year: bool = True

    @property
    def name(self) -> str:
        parts = [self.attribute]
        if self.category is not None:
            parts.append(f"cat{self.category}")
        for k, v in self.condition:
            parts.append(f"{k}={v}")
        return ":".join(parts)


@dataclass
class BootstrapSummary:
    n_replicates: int
    survivors: int
    diverged: tuple[int, ...]
    rows: list  # (statistic, source, year, mean, std)


def _statistic_values(records, schema: Schema, stat: StatisticSpec) -> dict:
    """Statistic per year (or {None: value} when not split by year)."""
    cond = dict(stat.condition)
    time_attr = schema.time_attribute
    selected = []
    for rec in records:
        if all(rec.values[schema.index_of(k)] == v for k, v in cond.items()):
            selected.append(rec)
    groups: dict = {}
    if stat.per_year and time_attr is not None:
        for rec in selected:
            groups.setdefault(int(rec.values[schema.index_of(time_attr.name)]), []).append(rec)
    else:
        groups[None] = selected
    attr = schema.attribute(stat.attribute)
    pos = schema.index_of(stat.attribute)
    out = {}
    for year, recs in groups.items():
        if not recs:
            out[year] = math.nan
            continue
        vals = [rec.values[pos] for rec in recs]
        if stat.category is not None:
            if attr.kind == "numerical":
                from .schema import discretize_array

                cats = discretize_array(vals, attr.bin_edges)
            else:
                cats = np.asarray(vals)
            out[year] = float(np.mean(cats == stat.category))
        else:
            if attr.kind != "numerical":
                raise PanelError(f"{stat.attribute}: mean statistic needs a numerical attribute")
            out[year] = float(np.mean([float(v) for v in vals]))
    return out


def _bootstrap_replicate(args):
    (rep_idx, records, schema, config, stats, samples_per_replicate, seed, numeric_mode) = args
    rng = derive_rng(seed, "bootstrap-resample", rep_idx)
    n = len(records)
    resample_idx = rng.integers(0, n, size=n)
    resample = [records[i] for i in resample_idx]

    data_stats = {s.name: _statistic_values(resample, schema, s) for s in stats}

    encoded = encode(resample, schema, numeric_mode=numeric_mode)
    rep_cfg = cvae.CvaeConfig(
        hidden_layers=config.hidden_layers,
        latent_dim=config.latent_dim,
        beta=config.beta,
        learning_rate=config.learning_rate,
        rho=config.rho,
        epsilon=config.epsilon,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=derive_seed(seed, "bootstrap-train", rep_idx),
    )
    split_at = max(1, int(round(n * 0.9)))
    if split_at >= n:
        split_at = n - 1
    train_idx = np.arange(split_at)
    val_idx = np.arange(split_at, n)
    try:
        model = cvae.train(encoded.take(train_idx), rep_cfg, encoded.take(val_idx))
    except cvae.TrainingDiverged:
        return rep_idx, None, data_stats

    m = min(samples_per_replicate, n)
    gen_profiles = profiles_from_records(resample[:m], schema)
    from .sampling import generate_population

    synth = generate_population(
        model, gen_profiles, draws_per_profile=1,
        seed=derive_seed(seed, "bootstrap-generate", rep_idx), decode_mode="sample",
    )
    model_stats = {s.name: _statistic_values(synth.records, schema, s) for s in stats}
    return rep_idx, model_stats, data_stats


def bootstrap(records, schema: Schema, config: cvae.CvaeConfig, n_replicates: int,
              statistics, seed: int, samples_per_replicate: int = 100,
              numeric_mode: str = "discretize", jobs: int = 1) -> BootstrapSummary:
    """Refit-and-resample uncertainty estimates.

    Each replicate resamples the records with replacement at full size,
    refits the model, generates preferences for a pool of resampled
    profiles, and evaluates the declared statistics; the same statistics
    are also computed directly on the resample (the data-only reference).
    The summary reports the mean and standard deviation of each statistic
    across surviving replicates for both sources.
    """
    if n_replicates < 2:
        raise PanelError("need at least 2 replicates")
    stats = tuple(statistics)
    if not stats:
        raise PanelError("no statistics declared")
    args = [
        (b, records, schema, config, stats, samples_per_replicate, seed, numeric_mode)
        for b in range(n_replicates)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bootstrap_replicate, args))
    else:
        results = [_bootstrap_replicate(a) for a in args]
    results.sort(key=lambda r: r[0])

    diverged = tuple(r[0] for r in results if r[1] is None)
    survivors = [r for r in results if r[1] is not None]
    if len(survivors) < 2:
        raise PanelError(f"only {len(survivors)} surviving replicates; need >= 2")

    rows = []
    for stat in stats:
        for source in ("model", "data"):
            per_rep = []
            for _, model_stats, data_stats in survivors:
                per_rep.append((model_stats if source == "model" else data_stats)[stat.name])
            years = sorted({y for d in per_rep for y in d}, key=lambda y: (y is None, y))
            for year in years:
                vals = np.array([d.get(year, math.nan) for d in per_rep])
                vals = vals[~np.isnan(vals)]
                if vals.size < 2:
                    continue
                rows.append(
                    (stat.name, source, year, float(vals.mean()), float(vals.std(ddof=1)))
                )
    return BootstrapSummary(
        n_replicates=n_replicates,
        survivors=len(survivors),
        diverged=diverged,
        rows=rows,
    )
