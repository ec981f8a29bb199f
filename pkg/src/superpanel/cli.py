"""Command-line pipeline driver.

Every command is a pure function of (config file, --set overrides, seed):
outputs land under the --out directory as CSV files plus a JSON manifest
holding the resolved config, the seed, and wall time. Randomness always
flows from the single master seed, so reruns and different --jobs values
produce byte-identical CSVs.
"""

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import cvae, metrics, oracle, panel, sampling, schema as schema_mod
from .seeding import derive_seed

DEFAULT_CONFIG = {
    "seed": None,
    "schema": None,
    "data": None,
    "numeric_mode": "discretize",
    "split_fraction": 0.8,
    "dgp": {"name": "static-corr", "spec_path": None, "n_per_year": 1000, "years": None},
    "model": {
        "hidden_layers": [64, 32],
        "latent_dim": 5,
        "beta": 0.5,
        "learning_rate": 0.001,
        "rho": 0.9,
        "epsilon": 1e-8,
        "batch_size": 64,
        "epochs": 50,
    },
    "grid": {
        "n_layers": [1, 2, 3],
        "n_neurons": [25, 50, 100, 200, 400],
        "latent_dims": [5, 10, 25],
        "betas": [0.1, 0.5, 1.0, 10.0],
        "plan_only": False,
    },
    "eval_subsets": None,
    "generate": {"model": "model_full.json", "draws_per_profile": 1, "decode_mode": "sample"},
    "evaluate": {"draws_per_profile": 1},
    "panel": {
        "model": "model_full.json",
        "reference_year": 0,
        "years": None,
        "draws_per_cell": 200,
        "external_table": None,
        "subsets": None,
        "max_individuals": None,
        "trend_attributes": None,
        "trend_conditions": None,
    },
    "movers": {"t_start": None, "t_end": None, "subset": None},
    "bootstrap": {
        "replicates": 20,
        "samples_per_replicate": 100,
        "statistics": None,
        "model": None,
    },
}


class CliError(RuntimeError):
    pass


def _deep_update(base: dict, override: dict) -> dict:
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CliError(f"--set needs key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(args) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            _deep_update(config, json.load(fh))
    for assignment in args.set or []:
        _apply_set(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if config.get("seed") is None:
        raise CliError("a seed is required (config 'seed' or --seed); wall-clock seeding is not supported")
    config["seed"] = int(config["seed"])
    return config


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_manifest(out_dir: Path, command: str, config: dict, outputs, started: float,
                   extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": config["seed"],
        "outputs": sorted(str(o) for o in outputs),
        "wall_time_s": round(time.time() - started, 3),
        "versions": {
            "superpanel": "0.1.0",
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / f"{command}_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _out_dir(args, config) -> Path:
    out = args.out or config.get("out_dir")
    if not out:
        raise CliError("an output directory is required (--out or config 'out_dir')")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_inputs(config):
    if not config.get("schema") or not config.get("data"):
        raise CliError("config must point at 'schema' and 'data' files")
    sch = schema_mod.load_schema(config["schema"])
    records, dropped = schema_mod.ingest_csv(config["data"], sch)
    return sch, records, dropped


def _eval_subsets(config, sch) -> list[tuple[str, ...]]:
    subsets = config.get("eval_subsets")
    if subsets:
        return [tuple(s) for s in subsets]
    joint = panel.default_distance_subset(sch)
    if joint is None:
        raise CliError("eval_subsets required: the full preference joint exceeds the bin cap")
    return [joint]


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    dgp_cfg = config["dgp"]
    if dgp_cfg.get("spec_path"):
        spec = oracle.load_dgp(dgp_cfg["spec_path"])
    else:
        spec = oracle.canned_spec(dgp_cfg.get("name", "static-corr"))
    years = dgp_cfg.get("years") or list(spec.years)
    records = oracle.generate_dataset(
        spec, int(dgp_cfg.get("n_per_year", 1000)), years,
        seed=derive_seed(config["seed"], "synth"),
    )
    schema_path = out / "schema.json"
    data_path = out / "data.csv"
    spec_path = out / "dgp.json"
    schema_mod.save_schema(spec.schema, schema_path)
    schema_mod.write_records_csv(data_path, records, spec.schema)
    oracle.save_dgp(spec, spec_path)
    write_manifest(out, "synth", config, [schema_path, data_path, spec_path], started,
                   {"n_records": len(records)})
    print(f"synth: wrote {len(records)} records to {data_path}")
    return 0


def _train_split(config, sch, records):
    fraction = float(config.get("split_fraction", 0.8))
    idx_train, idx_val = schema_mod.split_indices(len(records), fraction, config["seed"])
    encoded = schema_mod.encode(records, sch, numeric_mode=config["numeric_mode"])
    return encoded, encoded.take(idx_train), encoded.take(idx_val), idx_train, idx_val


def _model_config(config, seed_key: str, overrides: dict | None = None) -> cvae.CvaeConfig:
    m = dict(config["model"])
    if overrides:
        m.update({k: v for k, v in overrides.items() if v is not None})
    return cvae.CvaeConfig(
        hidden_layers=tuple(m["hidden_layers"]),
        latent_dim=int(m["latent_dim"]),
        beta=float(m["beta"]),
        learning_rate=float(m["learning_rate"]),
        rho=float(m["rho"]),
        epsilon=float(m["epsilon"]),
        batch_size=int(m["batch_size"]),
        epochs=int(m["epochs"]),
        seed=derive_seed(config["seed"], seed_key),
    )


def cmd_train(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    sch, records, dropped = _load_inputs(config)
    encoded, train_set, val_set, _, _ = _train_split(config, sch, records)
    outputs = []
    extra = {"dropped_rows": dropped}

    if args.grid:
        grid_cfg = config["grid"]
        grid = cvae.GridSpec(
            n_layers=tuple(grid_cfg["n_layers"]),
            n_neurons=tuple(grid_cfg["n_neurons"]),
            latent_dims=tuple(grid_cfg["latent_dims"]),
            betas=tuple(grid_cfg["betas"]),
        )
        cells = grid.cells()
        print(f"grid plan: {len(cells)} cells")
        plan_rows = []
        for i, (nl, nn_, dz, beta) in enumerate(cells):
            hidden = [nn_ // (2 ** l) for l in range(nl)]
            print(f"  cell {i:3d}: layers={nl} neurons={nn_} hidden={hidden} "
                  f"latent={dz} beta={beta}")
            plan_rows.append((i, nl, nn_, "x".join(map(str, hidden)), dz, beta))
        plan_path = out / "grid_plan.csv"
        write_csv(plan_path, ["cell", "n_layers", "n_neurons", "hidden", "latent_dim", "beta"],
                  plan_rows)
        outputs.append(plan_path)
        if grid_cfg.get("plan_only"):
            write_manifest(out, "train", config, outputs, started, {"plan_only": True})
            return 0
        base = {k: config["model"][k] for k in
                ("learning_rate", "rho", "epsilon", "batch_size", "epochs")}
        best_cfg, leaderboard = cvae.grid_search(
            train_set, val_set, grid, _eval_subsets(config, sch),
            seed=config["seed"], base=base, jobs=args.jobs,
        )
        lb_path = out / "leaderboard.csv"
        write_csv(
            lb_path,
            ["cell", "n_layers", "n_neurons", "latent_dim", "beta", "mean_srmse",
             "val_loss", "best_epoch", "diverged"],
            [(r.cell, r.n_layers, r.n_neurons, r.latent_dim, r.beta, r.mean_srmse,
              r.val_loss, r.best_epoch, r.diverged) for r in leaderboard],
        )
        outputs.append(lb_path)
        split_cfg = best_cfg
        extra["winner"] = {"hidden_layers": list(best_cfg.hidden_layers),
                           "latent_dim": best_cfg.latent_dim, "beta": best_cfg.beta}
    else:
        split_cfg = _model_config(config, "train-split")

    try:
        model_split = cvae.train(train_set, split_cfg, val_set)
    except cvae.TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}") from exc
    split_path = out / "model_split.json"
    cvae.save_model(model_split, split_path)
    outputs.append(split_path)

    # winner refit on the whole data set; the held-out loss still guides
    # the checkpoint epoch
    full_cfg = cvae.CvaeConfig(
        hidden_layers=split_cfg.hidden_layers,
        latent_dim=split_cfg.latent_dim,
        beta=split_cfg.beta,
        learning_rate=split_cfg.learning_rate,
        rho=split_cfg.rho,
        epsilon=split_cfg.epsilon,
        batch_size=split_cfg.batch_size,
        epochs=split_cfg.epochs,
        seed=derive_seed(config["seed"], "train-full"),
    )
    try:
        model_full = cvae.train(encoded, full_cfg, val_set)
    except cvae.TrainingDiverged as exc:
        raise CliError(f"full-data training diverged: {exc}") from exc
    full_path = out / "model_full.json"
    cvae.save_model(model_full, full_path)
    outputs.append(full_path)

    hist_path = out / "training_history.csv"
    rows = []
    for name, model in (("split", model_split), ("full", model_full)):
        for epoch, (tr, va) in enumerate(model.training_history):
            rows.append((name, epoch, tr, va))
    write_csv(hist_path, ["model", "epoch", "train_loss", "val_loss"], rows)
    outputs.append(hist_path)
    extra["final"] = {
        name: {"best_epoch": model.best_epoch,
               "train_loss": model.training_history[-1][0],
               "val_loss": min(v for _, v in model.training_history)}
        for name, model in (("split", model_split), ("full", model_full))
    }
    write_manifest(out, "train", config, outputs, started, extra)
    print(f"train: wrote {split_path} and {full_path}")
    return 0


def cmd_generate(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    sch, records, _ = _load_inputs(config)
    gen_cfg = config["generate"]
    model_path = Path(gen_cfg["model"])
    if not model_path.is_absolute() and not model_path.exists():
        model_path = out / model_path
    model = cvae.load_model(model_path)
    profiles = sampling.profiles_from_records(records, sch)
    population = sampling.generate_population(
        model,
        profiles,
        draws_per_profile=int(gen_cfg.get("draws_per_profile", 1)),
        seed=derive_seed(config["seed"], "generate"),
        decode_mode=gen_cfg.get("decode_mode", "sample"),
    )
    synth_path = out / "synthetic.csv"
    schema_mod.write_records_csv(synth_path, population.records, sch)
    write_manifest(out, "generate", config, [synth_path], started, {
        "model_hash": hashlib.sha256(model_path.read_bytes()).hexdigest(),
        "schema_hash": model.schema.content_hash(),
        "decode_mode": population.decode_mode,
        "n_records": len(population.records),
        "extrapolated_profiles": population.extrapolated_ids,
    })
    print(f"generate: wrote {len(population.records)} records to {synth_path}")
    return 0


def _histogram_rows(comparison, report, hat, ref):
    scatter = [
        (comparison, "/".join(report.subset), i, float(ref.frequencies[i]), float(hat.frequencies[i]))
        for i in range(report.n_bins)
    ]
    summary = (comparison, "/".join(report.subset), report.n_bins, report.srmse,
               report.corr, report.r2)
    return summary, scatter


def cmd_evaluate(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    sch, records, _ = _load_inputs(config)
    fraction = float(config.get("split_fraction", 0.8))
    idx_train, idx_val = schema_mod.split_indices(len(records), fraction, config["seed"])
    train_records = [records[i] for i in idx_train]
    val_records = [records[i] for i in idx_val]
    subsets = _eval_subsets(config, sch)
    draws = int(config["evaluate"].get("draws_per_profile", 1))

    split_model = cvae.load_model(out / "model_split.json")
    full_model = cvae.load_model(out / "model_full.json")

    def synth_records(model, source_records, key):
        profiles = sampling.profiles_from_records(source_records, sch)
        pop = sampling.generate_population(
            model, profiles, draws_per_profile=draws,
            seed=derive_seed(config["seed"], "evaluate", key), decode_mode="sample",
        )
        return pop.records

    synth_train = synth_records(split_model, train_records, "train")
    synth_val = synth_records(split_model, val_records, "val")
    synth_whole = synth_records(full_model, records, "whole")

    summary_rows = []
    scatter_rows = []
    pairs = [
        ("train-vs-val", train_records, val_records),
        ("model-vs-val", synth_val, val_records),
        ("model-vs-whole", synth_whole, records),
    ]
    for comparison, hat_records, ref_records in pairs:
        for subset in subsets:
            hat = metrics.cross_tabulate(hat_records, subset, sch)
            ref = metrics.cross_tabulate(ref_records, subset, sch)
            report = metrics.compare(hat, ref)
            summary, scatter = _histogram_rows(comparison, report, hat, ref)
            summary_rows.append(summary)
            scatter_rows.extend(scatter)

    overlap_rows = []
    for name, a, b in [
        ("train-vs-val", train_records, val_records),
        ("model-split-vs-train", synth_train, train_records),
        ("model-split-vs-val", synth_val, val_records),
        ("model-full-vs-whole", synth_whole, records),
    ]:
        fwd, rev = metrics.overlap_pair(a, b, sch)
        overlap_rows.append((name, fwd, rev))

    comp_path = out / "comparisons.csv"
    write_csv(comp_path, ["comparison", "subset", "n_bins", "srmse", "corr", "r2"], summary_rows)
    scatter_path = out / "scatter.csv"
    write_csv(scatter_path, ["comparison", "subset", "bin", "freq_reference", "freq_model"],
              scatter_rows)
    overlap_path = out / "overlap.csv"
    write_csv(overlap_path, ["pair", "a_in_b_pct", "b_in_a_pct"], overlap_rows)
    write_manifest(out, "evaluate", config, [comp_path, scatter_path, overlap_path], started)
    for row in summary_rows:
        print(f"evaluate: {row[0]} subset={row[1]} n_bins={row[2]} srmse={row[3]:.4f} "
              f"corr={row[4]:.4f} r2={row[5]:.4f}")
    return 0


def _load_external_table(path, sch, profiles):
    """Per-year external values, keyed by individual_id or by zone.

    A zone-keyed table (column "zone") is resolved through each profile's
    geography value, which is how per-zone accessibility scores attach to
    individuals. The result always maps year -> individual id -> values.
    """
    externals = [a.name for a in sch.attributes if a.role == "external"]
    if not externals:
        return None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        by_zone = "zone" in fields and "individual_id" not in fields
        key_col = "zone" if by_zone else "individual_id"
        raw: dict = {}
        for row in reader:
            year = int(row["year"])
            values = {}
            for name in externals:
                attr = sch.attribute(name)
                values[name] = (
                    float(row[name]) if attr.kind == "numerical" else int(row[name])
                )
            raw.setdefault(year, {})[str(row[key_col])] = values
    if not by_zone:
        return raw
    geo = [a.name for a in sch.attributes if a.role == "geography"]
    if not geo:
        raise CliError("zone-keyed external table needs a geography attribute")
    table: dict = {}
    for year, per_zone in raw.items():
        table[year] = {}
        for p in profiles:
            zone = str(int(p.values[geo[0]]))
            if zone in per_zone:
                table[year][p.id] = per_zone[zone]
    return table


def _build_cube(config, args, sch, records):
    panel_cfg = config["panel"]
    model_path = Path(panel_cfg["model"])
    if not model_path.is_absolute() and not model_path.exists():
        model_path = _out_dir(args, config) / model_path
    model = cvae.load_model(model_path)
    time_attr = sch.time_attribute
    if time_attr is None:
        raise CliError("panel construction needs a time attribute")
    ref_year = int(panel_cfg["reference_year"])
    pos = sch.index_of(time_attr.name)
    base_records = [r for r in records if int(r.values[pos]) == ref_year]
    if not base_records:
        raise CliError(f"no records in reference year {ref_year}")
    limit = panel_cfg.get("max_individuals")
    if limit:
        base_records = base_records[: int(limit)]
    profiles = sampling.profiles_from_records(base_records, sch)
    years = panel_cfg.get("years")
    if years is None:
        years = sorted({int(r.values[pos]) for r in records})
    external = None
    if panel_cfg.get("external_table"):
        external = _load_external_table(panel_cfg["external_table"], sch, profiles)
    subsets = panel_cfg.get("subsets")
    cube = panel.build_panel(
        model, profiles, years, external,
        draws_per_cell=int(panel_cfg.get("draws_per_cell", 200)),
        seed=derive_seed(config["seed"], "panel"),
        subsets=[tuple(s) for s in subsets] if subsets else None,
        jobs=args.jobs,
    )
    return cube, profiles


def cmd_build_panel(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    sch, records, _ = _load_inputs(config)
    cube, _ = _build_cube(config, args, sch, records)

    panel_path = out / "panel.csv"
    rows = []
    for i, profile in enumerate(cube.individuals):
        for t_idx, year in enumerate(cube.years):
            for name in (a.name for a in sch.preference_attributes):
                freqs = cube.attr_freqs[name][i, t_idx]
                for cat, f in enumerate(freqs):
                    rows.append((profile.id, year, name, cat, float(f)))
    write_csv(panel_path, ["individual_id", "year", "attribute", "category", "frequency"], rows)

    panel_cfg = config["panel"]
    trend_attrs = panel_cfg.get("trend_attributes") or [
        a.name for a in sch.preference_attributes
    ]
    conditions = panel_cfg.get("trend_conditions") or [{}]
    trend_rows = []
    for cond in conditions:
        cond_label = ",".join(f"{k}={v}" for k, v in sorted(cond.items())) or "all"
        for name in trend_attrs:
            series = panel.aggregate_trend(cube, name, cond or None)
            for t_idx, year in enumerate(series.years):
                if series.kind == "numeric":
                    trend_rows.append((cond_label, name, "numeric", year, "mean",
                                       float(series.mean[t_idx])))
                    trend_rows.append((cond_label, name, "numeric", year, "std",
                                       float(series.std[t_idx])))
                else:
                    for cat in range(series.category_probs.shape[1]):
                        trend_rows.append((cond_label, name, "categorical", year, cat,
                                           float(series.category_probs[t_idx, cat])))
    trends_path = out / "trends.csv"
    write_csv(trends_path, ["condition", "attribute", "kind", "year", "category", "value"],
              trend_rows)
    write_manifest(out, "build_panel", config, [panel_path, trends_path], started, {
        "individuals": cube.n_individuals,
        "years": list(cube.years),
        "draws_per_cell": cube.draws_per_cell,
    })
    print(f"build-panel: {cube.n_individuals} individuals x {len(cube.years)} years "
          f"x R={cube.draws_per_cell} -> {panel_path}")
    return 0


def cmd_classify_movers(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    sch, records, _ = _load_inputs(config)
    cube, profiles = _build_cube(config, args, sch, records)
    movers_cfg = config["movers"]
    t_start = movers_cfg.get("t_start")
    t_end = movers_cfg.get("t_end")
    if t_start is None or t_end is None:
        t_start, t_end = cube.years[0], cube.years[-1]
    subset = movers_cfg.get("subset")
    report = panel.classify_movers(
        cube, int(t_start), int(t_end), tuple(subset) if subset else None
    )

    movers_path = out / "movers.csv"
    fast, slow = set(report.fast_ids), set(report.slow_ids)
    rows = [
        (pid, float(report.distances[i]),
         "fast" if pid in fast else ("slow" if pid in slow else "mid"))
        for i, pid in enumerate(report.ids)
    ]
    write_csv(movers_path, ["individual_id", "distance", "group"], rows)

    marg_rows = []
    fast_marg = panel.group_marginals(profiles, report.fast_ids, sch)
    slow_marg = panel.group_marginals(profiles, report.slow_ids, sch)
    for name in fast_marg:
        f, s = fast_marg[name], slow_marg[name]
        for cat in range(len(f["frequencies"])):
            marg_rows.append(
                (name, cat, float(f["frequencies"][cat]), float(s["frequencies"][cat]),
                 cat == f["mode"], cat == s["mode"])
            )
    marg_path = out / "group_marginals.csv"
    write_csv(marg_path,
              ["attribute", "category", "freq_fast", "freq_slow", "mode_fast", "mode_slow"],
              marg_rows)
    write_manifest(out, "classify_movers", config, [movers_path, marg_path], started, {
        "t_start": int(t_start), "t_end": int(t_end),
        "subset": list(report.subset),
        "n_fast": len(report.fast_ids), "n_slow": len(report.slow_ids),
    })
    print(f"classify-movers: {len(report.fast_ids)} fast / {len(report.slow_ids)} slow "
          f"of {len(report.ids)} -> {movers_path}")
    return 0


def cmd_bootstrap(args) -> int:
    started = time.time()
    config = load_config(args)
    out = _out_dir(args, config)
    sch, records, _ = _load_inputs(config)
    bs_cfg = config["bootstrap"]
    stats_cfg = bs_cfg.get("statistics")
    if not stats_cfg:
        raise CliError("bootstrap.statistics must declare at least one statistic")
    stats = [
        panel.StatisticSpec(
            attribute=s["attribute"],
            category=s.get("category"),
            condition=tuple(sorted((s.get("condition") or {}).items())),
            per_year=bool(s.get("per_year", True)),
        )
        for s in stats_cfg
    ]
    model_cfg = _model_config(config, "bootstrap-base", bs_cfg.get("model") or {})
    summary = panel.bootstrap(
        records, sch, model_cfg,
        n_replicates=int(bs_cfg.get("replicates", 20)),
        statistics=stats,
        seed=derive_seed(config["seed"], "bootstrap"),
        samples_per_replicate=int(bs_cfg.get("samples_per_replicate", 100)),
        numeric_mode=config["numeric_mode"],
        jobs=args.jobs,
    )
    bs_path = out / "bootstrap.csv"
    write_csv(
        bs_path,
        ["statistic", "source", "year", "mean", "std"],
        [(name, source, "" if year is None else year, m, s)
         for name, source, year, m, s in summary.rows],
    )
    write_manifest(out, "bootstrap", config, [bs_path], started, {
        "replicates": summary.n_replicates,
        "survivors": summary.survivors,
        "diverged": list(summary.diverged),
    })
    print(f"bootstrap: {summary.survivors}/{summary.n_replicates} replicates -> {bs_path}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superpanel",
        description="Train a conditional generative model on repeated cross sections "
                    "and resample fixed populations through time.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": cmd_synth,
        "train": cmd_train,
        "generate": cmd_generate,
        "evaluate": cmd_evaluate,
        "build-panel": cmd_build_panel,
        "classify-movers": cmd_classify_movers,
        "bootstrap": cmd_bootstrap,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker limit")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
        if name == "train":
            p.add_argument("--grid", action="store_true", help="run the grid search first")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, schema_mod.SchemaError, schema_mod.IngestError,
            metrics.MetricError, panel.PanelError, oracle.DgpError,
            cvae.TrainingDiverged, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
