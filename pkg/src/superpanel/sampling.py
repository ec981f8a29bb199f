"""Conditional sampling from a trained model.

New preference draws come from pushing unit-Gaussian latent vectors
through the decoder under a fixed conditional row. Categorical segments
are resolved either by a seeded draw from the softmax distribution
("sample", the default, which preserves the full conditional spread) or
by taking the mode ("argmax"). Per-profile randomness is derived from
(master seed, profile id), so sampling many profiles in parallel or
serially yields identical output.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .cvae import TrainedModel
from .metrics import JointHistogram, cross_tabulate_columns
from .schema import Record, Schema, discretize_array
from .seeding import derive_rng

DECODE_MODES = ("sample", "argmax")


@dataclass(frozen=True)
class ConditionProfile:
    """Conditional attribute values for one individual."""

    id: str
    values: dict

    def with_values(self, **updates) -> "ConditionProfile":
        merged = dict(self.values)
        merged.update(updates)
        return ConditionProfile(id=self.id, values=merged)


@dataclass
class PreferenceDraws:
    profile: ConditionProfile
    draws: list[dict]
    seed: int
    decode_mode: str
    extrapolated: bool = False


def profiles_from_records(records, schema: Schema, ids=None) -> list[ConditionProfile]:
    names = [a.name for a in schema.conditional_attributes]
    out = []
    for i, rec in enumerate(records):
        pid = str(ids[i]) if ids is not None else str(i)
        out.append(
            ConditionProfile(id=pid, values={n: rec.values[schema.index_of(n)] for n in names})
        )
    return out


def encode_profile(profile: ConditionProfile, schema: Schema, cond_layout) -> np.ndarray:
    """One conditional row vector in the model's encoding."""
    dim_c = sum(b.width for b in cond_layout)
    row = np.zeros(dim_c)
    for block in cond_layout:
        attr = schema.attribute(block.name)
        if block.name not in profile.values:
            raise ValueError(f"profile {profile.id}: missing value for {block.name}")
        v = profile.values[block.name]
        if not block.onehot:
            row[block.start] = float(v)
            continue
        if attr.kind == "categorical":
            idx = int(v)
            if not 0 <= idx < attr.cardinality:
                raise ValueError(f"profile {profile.id}: {block.name}={v} out of range")
        else:
            from .schema import discretize

            idx = discretize(float(v), attr.bin_edges)
        row[block.start + idx] = 1.0
    return row


def _is_extrapolated(profile: ConditionProfile, schema: Schema) -> bool:
    """Flag time values outside the declared numeric range (raw time only)."""
    t = schema.time_attribute
    if t is None or t.kind != "numerical" or t.name not in profile.values:
        return False
    v = float(profile.values[t.name])
    return v < t.bin_edges[0] or v >= t.bin_edges[-1]


def _resolve_samples(model: TrainedModel, dec_out: np.ndarray, uniforms, decode_mode: str):
    """Turn decoder rows into per-attribute value columns.

    One-hot segments yield category indices; raw numeric segments pass
    the linear output through unchanged (no added observation noise).
    """
    cols = {}
    block_i = 0
    for block in model.pref_layout:
        seg = dec_out[:, block.start : block.start + block.width]
        if not block.onehot:
            cols[block.name] = seg[:, 0].copy()
            continue
        if decode_mode == "argmax":
            cols[block.name] = np.argmax(seg, axis=1).astype(np.int64)
        else:
            cum = np.cumsum(seg, axis=1)
            u = uniforms[:, block_i] * cum[:, -1]  # renormalize against fp drift
            idx = np.sum(u[:, None] >= cum, axis=1)
            cols[block.name] = np.minimum(idx, block.width - 1).astype(np.int64)
        block_i += 1
    return cols


def _n_onehot_blocks(model: TrainedModel) -> int:
    return sum(1 for b in model.pref_layout if b.onehot)


def _decode_with_noise(model: TrainedModel, c_rows: np.ndarray, eps: np.ndarray,
                       uniforms, decode_mode: str):
    z_and_c = np.concatenate([eps_to_z_prior(eps), c_rows], axis=1)
    dec_out, _ = nn.forward(model.decoder, z_and_c)
    return _resolve_samples(model, dec_out, uniforms, decode_mode)


def eps_to_z_prior(eps: np.ndarray) -> np.ndarray:
    """Latent draws from the prior are the unit-Gaussian eps themselves."""
    return np.asarray(eps, dtype=float)


def sample(model: TrainedModel, profile: ConditionProfile, n_draws: int, seed: int,
           decode_mode: str = "sample") -> PreferenceDraws:
    """Draw preference realizations for one conditional profile."""
    if decode_mode not in DECODE_MODES:
        raise ValueError(f"unknown decode_mode {decode_mode!r}")
    if n_draws < 0:
        raise ValueError("n_draws must be >= 0")
    c_row = encode_profile(profile, model.schema, model.cond_layout)
    if n_draws == 0:
        return PreferenceDraws(profile, [], seed, decode_mode, _is_extrapolated(profile, model.schema))
    rng = derive_rng(seed, "profile", profile.id)
    eps = rng.standard_normal((n_draws, model.config.latent_dim))
    uniforms = rng.random((n_draws, _n_onehot_blocks(model))) if decode_mode == "sample" else None
    cols = _decode_with_noise(model, np.tile(c_row, (n_draws, 1)), eps, uniforms, decode_mode)
    draws = []
    for r in range(n_draws):
        d = {}
        for block in model.pref_layout:
            attr = model.schema.attribute(block.name)
            v = cols[block.name][r]
            if block.onehot and attr.kind == "numerical":
                d[block.name] = attr.bin_representative(int(v))
            elif block.onehot:
                d[block.name] = int(v)
            else:
                d[block.name] = float(v)
        draws.append(d)
    return PreferenceDraws(profile, draws, seed, decode_mode, _is_extrapolated(profile, model.schema))


def sample_preference_columns(model: TrainedModel, cond_matrix: np.ndarray, draws_per_row: int,
                              seed: int, decode_mode: str = "sample",
                              chunk_rows: int = 65536) -> dict[str, np.ndarray]:
    """Vectorized draws for many conditional rows at once.

    Returns one column per preference attribute with draws_per_row
    consecutive entries per conditional row (row-major). One-hot segments
    come back as category indices, raw numeric segments as reals.
    """
    if decode_mode not in DECODE_MODES:
        raise ValueError(f"unknown decode_mode {decode_mode!r}")
    cond_matrix = np.atleast_2d(np.asarray(cond_matrix, dtype=float))
    n = cond_matrix.shape[0] * draws_per_row
    rng = derive_rng(seed, "bulk-sample")
    eps = rng.standard_normal((n, model.config.latent_dim))
    uniforms = rng.random((n, _n_onehot_blocks(model))) if decode_mode == "sample" else None
    expanded = np.repeat(cond_matrix, draws_per_row, axis=0)
    pieces = []
    for start in range(0, n, chunk_rows):
        stop = min(start + chunk_rows, n)
        pieces.append(
            _decode_with_noise(
                model,
                expanded[start:stop],
                eps[start:stop],
                uniforms[start:stop] if uniforms is not None else None,
                decode_mode,
            )
        )
    return {
        block.name: np.concatenate([p[block.name] for p in pieces])
        for block in model.pref_layout
    }


def sampled_category_columns(model: TrainedModel, cols: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Normalize sampled columns into category-index space for tabulation."""
    out = {}
    for block in model.pref_layout:
        col = cols[block.name]
        if block.onehot:
            out[block.name] = np.asarray(col, dtype=np.int64)
        else:
            attr = model.schema.attribute(block.name)
            out[block.name] = discretize_array(col, attr.bin_edges)
    return out


def estimate_distribution(model: TrainedModel, profile: ConditionProfile, subset, n_draws: int,
                          seed: int) -> JointHistogram:
    """Cross tabulation of n_draws sampled preferences over a subset."""
    subset = tuple(subset)
    if not subset:
        raise ValueError("empty subset")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    pref_names = {a.name for a in model.schema.preference_attributes}
    bad = [s for s in subset if s not in pref_names]
    if bad:
        raise ValueError(f"subset contains non-preference attributes {bad}")
    c_row = encode_profile(profile, model.schema, model.cond_layout)
    rng = derive_rng(seed, "profile", profile.id)
    eps = rng.standard_normal((n_draws, model.config.latent_dim))
    uniforms = rng.random((n_draws, _n_onehot_blocks(model)))
    cols = _decode_with_noise(model, np.tile(c_row, (n_draws, 1)), eps, uniforms, "sample")
    cat_cols = sampled_category_columns(model, cols)
    return cross_tabulate_columns({k: cat_cols[k] for k in subset}, subset, model.schema)


@dataclass
class SyntheticPopulation:
    """Generated records tagged with the profile each row came from."""

    profile_ids: list[str]
    records: list[Record]
    seed: int
    decode_mode: str
    extrapolated_ids: list[str]


def generate_population(model: TrainedModel, profiles, draws_per_profile: int, seed: int,
                        decode_mode: str = "sample") -> SyntheticPopulation:
    """Concatenated draws over many profiles, reproducible per profile."""
    if not profiles:
        raise ValueError("profiles must be nonempty")
    schema = model.schema
    ids: list[str] = []
    records: list[Record] = []
    flagged: list[str] = []
    for profile in profiles:
        draws = sample(model, profile, draws_per_profile, seed, decode_mode)
        if draws.extrapolated:
            flagged.append(profile.id)
        for d in draws.draws:
            values = []
            for attr in schema.attributes:
                if attr.role == "preference":
                    values.append(d[attr.name])
                else:
                    values.append(profile.values[attr.name])
            ids.append(profile.id)
            records.append(Record(tuple(values)))
    return SyntheticPopulation(
        profile_ids=ids, records=records, seed=seed, decode_mode=decode_mode,
        extrapolated_ids=flagged,
    )
