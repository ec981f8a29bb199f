"""Conditional variational autoencoder on encoded survey rows.

The encoder maps the concatenation of a preference row v and its
conditional row c to the mean and log-variance of a diagonal Gaussian over
the latent space. A latent draw z = mu + exp(log_var / 2) * eps is
concatenated with c and decoded back into per-block reconstructions:
softmax probabilities for every one-hot segment and raw reals for numeric
positions.

The training objective summed over a batch is

    total = mse_num + xent_cat + beta * kl

with the squared-error term over numeric positions, the cross-entropy
term over one-hot segments, and the analytic Gaussian divergence from the
unit prior

    kl = -1/2 * sum_i (1 + log_var_i - mu_i^2 - exp(log_var_i)).

The encoder is parameterized by log-variance, so exp(log_var) is the
latent variance and the divergence above is the exact closed form.
"""

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics, nn
from .schema import EncodedDataset, Schema, schema_from_dict, build_layout
from .seeding import derive_rng, derive_seed

LOG_FLOOR = 1e-12  # clamp inside log() so saturated softmax cannot emit -inf


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}{': ' + detail if detail else ''}")
        self.epoch = epoch


@dataclass(frozen=True)
class CvaeConfig:
    hidden_layers: tuple[int, ...] = (64, 32)
    latent_dim: int = 5
    beta: float = 0.5
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @staticmethod
    def from_grid_cell(n_layers: int, n_neurons: int, latent_dim: int, beta: float, **kw) -> "CvaeConfig":
        """Hidden widths n_neurons // 2**l for layer l (integer division)."""
        hidden = tuple(n_neurons // (2 ** l) for l in range(n_layers))
        if any(h < 1 for h in hidden):
            raise ValueError(f"layer width collapsed to zero for ({n_layers}, {n_neurons})")
        return CvaeConfig(hidden_layers=hidden, latent_dim=latent_dim, beta=beta, **kw)


@dataclass(frozen=True)
class LatentParams:
    mu: np.ndarray
    log_var: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


@dataclass(frozen=True)
class LossBreakdown:
    mse_num: float
    xent_cat: float
    kl: float
    beta: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.mse_num + self.xent_cat + self.beta * self.kl)


@dataclass
class TrainedModel:
    encoder: nn.Network
    decoder: nn.Network
    config: CvaeConfig
    schema: Schema
    cond_layout: tuple
    pref_layout: tuple
    numeric_mode: str
    training_history: list[tuple[float, float]]
    best_epoch: int

    @property
    def dim_v(self) -> int:
        return self.decoder.out_dim

    @property
    def dim_c(self) -> int:
        return self.encoder.in_dim - self.decoder.out_dim


def output_blocks(pref_layout) -> tuple[tuple[str, int], ...]:
    """Mixed decoder head: softmax per one-hot segment, linear elsewhere."""
    return tuple(("softmax" if b.onehot else "linear", b.width) for b in pref_layout)


def build_networks(dim_v: int, dim_c: int, config: CvaeConfig, pref_layout) -> tuple[nn.Network, nn.Network]:
    """Encoder (v+c -> 2*Dz) and decoder (z+c -> v) with shared hidden widths."""
    hidden = list(config.hidden_layers)
    enc_dims = [dim_v + dim_c] + hidden + [2 * config.latent_dim]
    dec_dims = [config.latent_dim + dim_c] + hidden + [dim_v]
    encoder = nn.init_weights(enc_dims, derive_seed(config.seed, "encoder-init"))
    decoder = nn.init_weights(
        dec_dims,
        derive_seed(config.seed, "decoder-init"),
        output_blocks=output_blocks(pref_layout),
    )
    return encoder, decoder


# ---------------------------------------------------------------------------
# Forward pieces


def encode(model: TrainedModel, v: np.ndarray, c: np.ndarray) -> LatentParams:
    """Posterior parameters for one row or a batch of rows."""
    x = np.concatenate([np.asarray(v, dtype=float), np.asarray(c, dtype=float)], axis=-1)
    out, _ = nn.forward(model.encoder, x)
    d = model.config.latent_dim
    return LatentParams(mu=out[..., :d], log_var=out[..., d:])


def reparameterize(params: LatentParams, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_var / 2) * eps."""
    return params.mu + np.exp(0.5 * params.log_var) * np.asarray(eps, dtype=float)


def decode(model: TrainedModel, z: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Reconstruction: probabilities per one-hot segment, reals elsewhere."""
    x = np.concatenate([np.asarray(z, dtype=float), np.asarray(c, dtype=float)], axis=-1)
    out, _ = nn.forward(model.decoder, x)
    return out


def kl_divergence(mu: np.ndarray, log_var: np.ndarray) -> float:
    """Closed-form divergence of N(mu, exp(log_var)) from the unit Gaussian."""
    return float(-0.5 * np.sum(1.0 + log_var - mu ** 2 - np.exp(log_var)))


def _numeric_mask(pref_layout, dim_v: int) -> np.ndarray:
    mask = np.zeros(dim_v, dtype=bool)
    for b in pref_layout:
        if not b.onehot:
            mask[b.start : b.start + b.width] = True
    return mask


def loss_and_grads(
    encoder: nn.Network,
    decoder: nn.Network,
    V: np.ndarray,
    C: np.ndarray,
    eps: np.ndarray,
    beta: float,
    numeric_mask: np.ndarray,
    want_grads: bool = True,
):
    """Batch loss and, optionally, exact gradients for every parameter.

    One eps draw per record. Returns (LossBreakdown, encoder_grads,
    decoder_grads) where the gradient lists align with
    Network.parameters(); both are None when want_grads is false.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if V.shape[0] == 0:
        raise ValueError("empty batch")
    d_z = eps.shape[1]

    # overflow during a diverging run surfaces as a non-finite loss that the
    # training loop reports; no need for numpy to warn on the way there
    with np.errstate(over="ignore", invalid="ignore"):
        enc_out, enc_tape = nn.forward(encoder, np.concatenate([V, C], axis=1))
        mu, log_var = enc_out[:, :d_z], enc_out[:, d_z:]
        std = np.exp(0.5 * log_var)
        z = mu + std * eps
        dec_out, dec_tape = nn.forward(decoder, np.concatenate([z, C], axis=1))

        num = numeric_mask
        cat = ~numeric_mask
        diff_num = (V[:, num] - dec_out[:, num]) if num.any() else np.zeros((V.shape[0], 0))
        mse_num = 0.5 * float(np.sum(diff_num ** 2))
        probs = dec_out[:, cat]
        clamped = np.maximum(probs, LOG_FLOOR)
        xent_cat = -float(np.sum(V[:, cat] * np.log(clamped)))
        kl = kl_divergence(mu, log_var)
        breakdown = LossBreakdown(mse_num=mse_num, xent_cat=xent_cat, kl=kl, beta=beta)
        if not want_grads:
            return breakdown, None, None

        grad_dec_out = np.zeros_like(dec_out)
        if num.any():
            grad_dec_out[:, num] = -diff_num
        grad_probs = np.zeros_like(probs)
        active = probs >= LOG_FLOOR  # clamped entries sit on a flat segment of log
        grad_probs[active] = -(V[:, cat][active]) / clamped[active]
        grad_dec_out[:, cat] = grad_probs

        dec_grads = nn.backward(decoder, dec_tape, grad_dec_out)
        grad_z = dec_grads.input_grad[:, :d_z]

        grad_mu = grad_z + beta * mu
        grad_log_var = grad_z * (0.5 * std * eps) + beta * (-0.5) * (1.0 - np.exp(log_var))
        enc_grads = nn.backward(encoder, enc_tape, np.concatenate([grad_mu, grad_log_var], axis=1))
    return breakdown, enc_grads.flat(), dec_grads.flat()


def loss(model: TrainedModel, V: np.ndarray, C: np.ndarray, eps: np.ndarray) -> LossBreakdown:
    """Batch loss of a trained model with supplied eps draws."""
    mask = _numeric_mask(model.pref_layout, model.dim_v)
    breakdown, _, _ = loss_and_grads(
        model.encoder, model.decoder, V, C, eps, model.config.beta, mask, want_grads=False
    )
    return breakdown


# ---------------------------------------------------------------------------
# Training


def train(dataset: EncodedDataset, config: CvaeConfig, val_set: EncodedDataset) -> TrainedModel:
    """Mini-batch RMSprop training with best-validation checkpoint restore.

    Batches are reshuffled every epoch from the config seed. The recorded
    history holds per-record train and validation losses; the returned
    parameters are the snapshot from the epoch with the lowest validation
    loss. Validation eps draws are fixed once per run so the checkpoint
    comparison is apples to apples across epochs.
    """
    if dataset.n_rows == 0:
        raise ValueError("empty training set")
    dim_v, dim_c = dataset.dim_v, dataset.dim_c
    encoder, decoder = build_networks(dim_v, dim_c, config, dataset.pref_layout)
    mask = _numeric_mask(dataset.pref_layout, dim_v)
    params = encoder.parameters() + decoder.parameters()
    state = nn.rmsprop_init(params, config.learning_rate, config.rho, config.epsilon)

    rng = derive_rng(config.seed, "train-loop")
    val_eps = derive_rng(config.seed, "val-eps").standard_normal(
        (val_set.n_rows, config.latent_dim)
    )

    n = dataset.n_rows
    history: list[tuple[float, float]] = []
    best_val = np.inf
    best_epoch = -1
    best_params = None
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            eps = rng.standard_normal((len(idx), config.latent_dim))
            breakdown, enc_g, dec_g = loss_and_grads(
                encoder,
                decoder,
                dataset.preference[idx],
                dataset.conditional[idx],
                eps,
                config.beta,
                mask,
            )
            if not np.isfinite(breakdown.total):
                raise TrainingDiverged(epoch)
            epoch_total += breakdown.total
            nn.rmsprop_step(params, enc_g + dec_g, state)
        train_loss = epoch_total / n
        val_break, _, _ = loss_and_grads(
            encoder, decoder, val_set.preference, val_set.conditional, val_eps,
            config.beta, mask, want_grads=False,
        )
        if not np.isfinite(val_break.total):
            raise TrainingDiverged(epoch, "validation loss")
        val_loss = val_break.total / val_set.n_rows
        history.append((train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = [p.copy() for p in params]

    for dst, src in zip(params, best_params):
        dst[...] = src
    return TrainedModel(
        encoder=encoder,
        decoder=decoder,
        config=config,
        schema=dataset.schema,
        cond_layout=dataset.cond_layout,
        pref_layout=dataset.pref_layout,
        numeric_mode=dataset.numeric_mode,
        training_history=history,
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class GridSpec:
    n_layers: tuple[int, ...] = (1, 2, 3)
    n_neurons: tuple[int, ...] = (25, 50, 100, 200, 400)
    latent_dims: tuple[int, ...] = (5, 10, 25)
    betas: tuple[float, ...] = (0.1, 0.5, 1.0, 10.0)

    def cells(self) -> list[tuple[int, int, int, float]]:
        return list(itertools.product(self.n_layers, self.n_neurons, self.latent_dims, self.betas))


@dataclass
class GridResult:
    cell: int
    n_layers: int
    n_neurons: int
    latent_dim: int
    beta: float
    srmse_by_subset: dict
    mean_srmse: float
    val_loss: float
    best_epoch: int
    diverged: bool


def _pref_histogram(ds: EncodedDataset, subset) -> metrics.JointHistogram:
    """Exact cross tabulation of an encoded set over a preference subset."""
    cols = {}
    for block in ds.pref_layout:
        if block.name in subset:
            seg = ds.preference[:, block.start : block.start + block.width]
            if block.onehot:
                cols[block.name] = np.argmax(seg, axis=1).astype(np.int64)
            else:
                edges = ds.schema.attribute(block.name).bin_edges
                cols[block.name] = metrics.discretize_array(seg[:, 0], edges)
    return metrics.cross_tabulate_columns(cols, subset, ds.schema)


def evaluate_srmse(model: TrainedModel, val_set: EncodedDataset, eval_subsets, seed: int,
                   draws_per_row: int = 1) -> dict:
    """Validation SRMSE per subset: model draws conditioned on the held-out
    conditionals versus the held-out preference tabulation."""
    from .sampling import sample_preference_columns, sampled_category_columns

    cols = sample_preference_columns(
        model, val_set.conditional, draws_per_row=draws_per_row, seed=seed, decode_mode="sample"
    )
    cat_cols = sampled_category_columns(model, cols)
    out = {}
    for subset in eval_subsets:
        subset = tuple(subset)
        model_hist = metrics.cross_tabulate_columns(
            {k: cat_cols[k] for k in subset}, subset, model.schema
        )
        val_hist = _pref_histogram(val_set, subset)
        out[subset] = metrics.srmse(model_hist, val_hist)
    return out


def _run_grid_cell(args):
    (cell_idx, nl, nnrn, dz, beta, train_set, val_set, eval_subsets, base, master_seed) = args
    cfg = CvaeConfig.from_grid_cell(
        nl, nnrn, dz, beta,
        learning_rate=base.get("learning_rate", 0.001),
        rho=base.get("rho", 0.9),
        epsilon=base.get("epsilon", 1e-8),
        batch_size=base.get("batch_size", 64),
        epochs=base.get("epochs", 50),
        seed=derive_seed(master_seed, "grid-cell", cell_idx),
    )
    try:
        model = train(train_set, cfg, val_set)
    except TrainingDiverged:
        return GridResult(cell_idx, nl, nnrn, dz, beta, {}, np.inf, np.inf, -1, diverged=True)
    by_subset = evaluate_srmse(
        model, val_set, eval_subsets, seed=derive_seed(master_seed, "grid-eval", cell_idx)
    )
    mean_srmse = float(np.mean(list(by_subset.values())))
    return GridResult(
        cell_idx, nl, nnrn, dz, beta,
        {"/".join(k): v for k, v in by_subset.items()},
        mean_srmse,
        min(v for _, v in model.training_history),
        model.best_epoch,
        diverged=False,
    )


def grid_search(
    train_set: EncodedDataset,
    val_set: EncodedDataset,
    grid: GridSpec,
    eval_subsets,
    seed: int,
    base: dict | None = None,
    jobs: int = 1,
    selection_metric: str = "srmse",
) -> tuple[CvaeConfig, list[GridResult]]:
    """Train one model per grid cell and rank by mean validation SRMSE.

    The per-run validation loss decides only each cell's checkpoint epoch;
    ranking across cells uses the distribution distance. Cells run
    independently with seeds derived from (seed, cell index), so the
    leaderboard is identical for any jobs count. Diverged cells stay on
    the leaderboard, flagged, and are excluded from ranking.
    """
    if selection_metric != "srmse":
        raise ValueError(f"unsupported selection metric {selection_metric!r}")
    cells = grid.cells()
    if not cells:
        raise ValueError("empty grid")
    args = [
        (i, nl, nnrn, dz, beta, train_set, val_set, [tuple(s) for s in eval_subsets],
         dict(base or {}), seed)
        for i, (nl, nnrn, dz, beta) in enumerate(cells)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_grid_cell, args))
    else:
        results = [_run_grid_cell(a) for a in args]
    survivors = [r for r in results if not r.diverged]
    if not survivors:
        raise TrainingDiverged(-1, "every grid cell diverged")
    best = min(survivors, key=lambda r: (r.mean_srmse, r.cell))
    best_cfg = CvaeConfig.from_grid_cell(
        best.n_layers, best.n_neurons, best.latent_dim, best.beta,
        learning_rate=(base or {}).get("learning_rate", 0.001),
        rho=(base or {}).get("rho", 0.9),
        epsilon=(base or {}).get("epsilon", 1e-8),
        batch_size=(base or {}).get("batch_size", 64),
        epochs=(base or {}).get("epochs", 50),
        seed=derive_seed(seed, "grid-winner"),
    )
    return best_cfg, results


# ---------------------------------------------------------------------------
# Serialization


def _network_to_dict(net: nn.Network) -> dict:
    return {
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "biases": layer.biases.tolist(),
                "activation": layer.activation,
                "blocks": [list(b) for b in layer.blocks] if layer.blocks else None,
            }
            for layer in net.layers
        ]
    }


def _network_from_dict(data: dict) -> nn.Network:
    layers = []
    for entry in data["layers"]:
        layers.append(
            nn.DenseLayer(
                weights=np.array(entry["weights"], dtype=float),
                biases=np.array(entry["biases"], dtype=float),
                activation=entry["activation"],
                blocks=tuple((k, int(w)) for k, w in entry["blocks"]) if entry["blocks"] else None,
            )
        )
    return nn.Network(layers=layers)


def save_model(model: TrainedModel, path) -> None:
    payload = {
        "format": "superpanel-model",
        "format_version": 1,
        "config": asdict(model.config),
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.content_hash(),
        "numeric_mode": model.numeric_mode,
        "encoder": _network_to_dict(model.encoder),
        "decoder": _network_to_dict(model.decoder),
        "training_history": [[t, v] for t, v in model.training_history],
        "best_epoch": model.best_epoch,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "superpanel-model":
        raise ValueError(f"{path}: not a model file")
    schema = schema_from_dict(payload["schema"])
    numeric_mode = payload["numeric_mode"]
    cond_layout, _ = build_layout(schema, preference=False, numeric_mode=numeric_mode)
    pref_layout, _ = build_layout(schema, preference=True, numeric_mode=numeric_mode)
    cfg = payload["config"]
    cfg["hidden_layers"] = tuple(cfg["hidden_layers"])
    return TrainedModel(
        encoder=_network_from_dict(payload["encoder"]),
        decoder=_network_from_dict(payload["decoder"]),
        config=CvaeConfig(**cfg),
        schema=schema,
        cond_layout=cond_layout,
        pref_layout=pref_layout,
        numeric_mode=numeric_mode,
        training_history=[(t, v) for t, v in payload["training_history"]],
        best_epoch=payload["best_epoch"],
    )
