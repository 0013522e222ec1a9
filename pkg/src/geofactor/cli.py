"""``geofactor`` command-line interface."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .inference import dic, empirical_variogram, predict_factors, trace_summary
from .io import (
    GridSpec, RunManifest, _check_keys, _read_toml, concat_chains, dataset_hash, ensure_dir,
    export_prediction, load_chain, load_dataset, lonlat_to_meters, parse_config, read_scores,
    spec_from_tables, write_chain, write_dataset, write_table,
)
from .sampler import rescale_samples, run_chains, spec_hash
from .simulate import TrueParams, simulate_dataset

log = logging.getLogger("geofactor")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _project(ds, center=None):
    xy, center = lonlat_to_meters(ds.coords, center)
    return dataclasses.replace(ds, coords=xy), center


def _load_run(run_dir):
    run = Path(run_dir)
    man = RunManifest.read(run)
    chains = [load_chain(run, k) for k in range(man.n_chains)]
    for k, (ch, h) in enumerate(zip(chains, man.chain_hashes)):
        if ch.hash() != h:
            raise ValidationError(f"{run}: chain {k} hash differs from the run manifest")
    ds = load_dataset(run / "dataset.csv", standardize=False)
    if dataset_hash(ds) != man.dataset_hash:
        raise ValidationError(f"{run / 'dataset.csv'}: dataset hash differs from the run manifest")
    return man, chains, ds


# ----------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    if args.from_run:
        src = Path(args.from_run)
        old = RunManifest.read(src)
        ds = load_dataset(src / "dataset.csv", standardize=False)
        config_path = src / "config.toml"
        seed = old.seed if args.seed is None else args.seed
        n_chains = old.n_chains if args.chains is None else args.chains
        center = old.extra.get("lonlat_center")
        x_means, x_sds = old.extra.get("x_means"), old.extra.get("x_sds")
    else:
        if not args.data or not args.config:
            raise ValidationError("fit needs --data and --config (or --from-run)")
        ds = load_dataset(args.data)
        config_path = Path(args.config)
        center = None
        if args.lonlat:
            ds, center = _project(ds)
            center = center.tolist()
        n_chains = args.chains or 1
        x_means = None if ds.x_means is None else ds.x_means.tolist()
        x_sds = None if ds.x_sds is None else ds.x_sds.tolist()
        seed = args.seed
    spec, config = parse_config(config_path, n_covariates=ds.p)
    if seed is not None:
        config = dataclasses.replace(config, seed=int(seed))
    if n_chains < 1:
        raise ValidationError("--chains must be at least 1")
    out = ensure_dir(args.out)
    t0 = time.perf_counter()
    chains = run_chains(ds, spec, config, n_chains, parallel=not args.serial)
    elapsed = time.perf_counter() - t0
    manifests = [write_chain(ch, out, k) for k, ch in enumerate(chains)]
    write_dataset(ds, out / "dataset.csv")
    if Path(config_path).resolve() != (out / "config.toml").resolve():
        shutil.copyfile(config_path, out / "config.toml")
    acc = {}
    for k, ch in enumerate(chains):
        post = ch.accept[config.burn_in:]
        acc[f"chain{k}"] = {"burn_in": float(ch.accept[:config.burn_in].mean()) if config.burn_in else None,
                            "post_burn_in": float(post.mean()) if post.size else None}
    man = RunManifest(
        spec_hash=spec_hash(spec), dataset_hash=dataset_hash(ds), seed=int(config.seed),
        n_chains=n_chains, config={"model": spec.to_dict(), "sampler": config.to_dict()},
        chain_hashes=[m["chain_hash"] for m in manifests],
        timing={"elapsed_sec": elapsed, "per_chain_sec": [ch.metadata["elapsed_sec"] for ch in chains]},
        acceptance=acc,
        extra={"lonlat_center": center, "x_means": x_means, "x_sds": x_sds,
               "item_names": list(ds.item_names), "covariate_names": list(ds.covariate_names)},
    )
    man.write(out)
    for k, h in enumerate(man.chain_hashes):
        print(f"chain {k}: {h}")
    return EXIT_OK


def _grid_covariates(grid_path, table, centers_out, ds, man):
    """Standardized covariates at the prediction cells (matched by coordinates)."""
    if ds.p == 0:
        return None
    rel = table.get("covariates")
    if rel is None:
        raise ValidationError(f"{grid_path}: [grid]: the model has covariates; set 'covariates' to a CSV "
                              "with x, y and the cov_* columns at every cell centre")
    path = (Path(grid_path).parent / rel)
    xy, names, vals = read_scores(path)
    names = list(names)
    missing = [c for c in ds.covariate_names if c not in names]
    if missing:
        raise ValidationError(f"{path}: row 1: missing covariate columns {missing}")
    from scipy.spatial import cKDTree
    dist, idx = cKDTree(xy).query(centers_out)
    far = dist > 1e-6 * max(1.0, float(np.abs(centers_out).max()))
    if np.any(far):
        bad = int(np.argmax(far))
        raise ValidationError(f"{path}: no covariate row for cell centre {centers_out[bad].tolist()}")
    raw = vals[idx][:, [names.index(c) for c in ds.covariate_names]]
    means = np.asarray(man.extra["x_means"], dtype=float)
    sds = np.asarray(man.extra["x_sds"], dtype=float)
    return (raw - means) / sds


def cmd_predict(args) -> int:
    man, chains, ds = _load_run(args.run)
    grid = GridSpec.from_file(args.grid)
    doc = _read_toml(args.grid)
    table = doc.get("grid", doc)
    centers = grid.cell_centers()
    center = man.extra.get("lonlat_center")
    model_xy = lonlat_to_meters(centers, center)[0] if center is not None else centers
    new_X = _grid_covariates(args.grid, table, centers, ds, man)
    pooled = concat_chains([rescale_samples(ch) for ch in chains])
    if args.max_samples and pooled.n_samples > args.max_samples:
        keep = np.unique(np.linspace(0, pooled.n_samples - 1, args.max_samples).round().astype(int))
        pooled = dataclasses.replace(pooled, samples={k: v[keep] for k, v in pooled.samples.items()},
                                     iterations=pooled.iterations[keep])
    result = predict_factors(pooled, ds, model_xy, new_X, seed=args.seed,
                             allow_coincident=args.allow_coincident)
    prefix = Path(args.out) if args.out else Path(args.run) / "prediction"
    fmts = ("csv", "geojson") if args.format == "both" else (args.format,)
    for fmt in fmts:
        path = export_prediction(result, prefix.with_suffix("." + fmt), fmt, args.threshold, coords=centers)
        print(path)
    return EXIT_OK


def cmd_dic(args) -> int:
    man, chains, _ = _load_run(args.run)
    ds = load_dataset(args.data)
    if list(ds.item_names) != man.extra.get("item_names"):
        raise ValidationError(f"{args.data}: row 1: item columns differ from the fitted model")
    rep = dic(concat_chains(chains), ds)
    print(json.dumps(dataclasses.asdict(rep), indent=2))
    return EXIT_OK


def cmd_variogram(args) -> int:
    coords, names, vals = read_scores(args.scores)
    cols, out = None, []
    for k, name in enumerate(names):
        vg = empirical_variogram(vals[:, k], coords, args.bins, args.max_dist)
        if cols is None:
            cols = ["bin_lo", "bin_hi", "center", "count"]
            out = [vg.edges[:-1], vg.edges[1:], vg.centers, vg.counts.astype(float)]
        cols.append(f"gamma_{name}")
        out.append(vg.gamma)
    table = np.column_stack(out)
    if args.out:
        write_table(args.out, cols, table)
    else:
        print(",".join(cols))
        for row in table:
            print(",".join("%.17g" % v for v in row))
    return EXIT_OK


_TRUTH_KEYS = {"c", "A", "T", "phi", "B", "R", "D"}
_DESIGN_KEYS = {"n", "bbox", "seed", "missing_items", "missing_fraction"}


def cmd_simulate(args) -> int:
    doc = _read_toml(args.config)
    _check_keys(args.config, "top level", doc, {"model", "priors", "truth", "design"})
    for sec in ("model", "truth", "design"):
        if sec not in doc:
            raise ValidationError(f"{args.config}: missing [{sec}] section")
    truth = _check_keys(args.config, "truth", doc["truth"], _TRUTH_KEYS)
    design = _check_keys(args.config, "design", doc["design"], _DESIGN_KEYS)
    try:
        params = TrueParams(**{k: np.asarray(v, dtype=float) for k, v in truth.items()})
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{args.config}: [truth]: {exc}") from None
    spec = spec_from_tables(args.config, doc["model"], doc.get("priors", {}), params.B.shape[0])
    n = int(design.get("n", 100))
    bbox = design.get("bbox", [0.0, 0.0, 1.0, 1.0])
    seed = int(design.get("seed", 0) if args.seed is None else args.seed)
    # coordinates come from their own generator so the response stream stays
    # identical to simulate_dataset with the same seed
    crng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(99,)))
    coords = np.column_stack([crng.uniform(bbox[0], bbox[2], n), crng.uniform(bbox[1], bbox[3], n)])
    policy = None
    if design.get("missing_items"):
        policy = {"items": [i - 1 for i in design["missing_items"]],
                  "fraction": float(design.get("missing_fraction", 0.0))}
    ds = simulate_dataset(spec, params, coords, seed, policy)
    write_dataset(ds, args.out)
    side = Path(args.out).with_suffix(".truth.json")
    with open(side, "w") as fh:
        json.dump({"params": params.to_dict(), "seed": seed, "coords": coords.tolist(),
                   "spec_hash": spec_hash(spec)}, fh, indent=2)
    print(args.out)
    return EXIT_OK


def cmd_summary(args) -> int:
    man, chains, ds = _load_run(args.run)
    pooled = concat_chains([rescale_samples(ch) for ch in chains])
    stats = trace_summary(pooled, include_theta=args.theta)
    print(f"chains: {man.n_chains}  stored draws: {pooled.n_samples}")
    for k, acc in sorted(man.acceptance.items()):
        print(f"{k}: MH acceptance post burn-in {acc['post_burn_in']}")
    print(f"{'parameter':<16}{'mean':>11}{'sd':>10}{'q05':>10}{'q50':>10}{'q95':>10}"
          f"{'acf1':>8}{'ess':>9}")
    for s in stats:
        flag = "  (constant)" if s.degenerate else ""
        print(f"{s.name:<16}{s.mean:>11.4f}{s.sd:>10.4f}{s.quantiles[0]:>10.4f}{s.quantiles[1]:>10.4f}"
              f"{s.quantiles[2]:>10.4f}{s.acf[0]:>8.3f}{s.ess:>9.1f}{flag}")
    if args.scores_out:
        theta = pooled.samples["theta"].mean(axis=0)
        coords = ds.coords
        center = man.extra.get("lonlat_center")
        cols = ["x", "y"] + [f"factor_{k + 1}" for k in range(theta.shape[0])]
        write_table(args.scores_out, cols, np.column_stack([coords, theta.T]))
        if center is not None:
            log.info("scores are written in projected metres about %s", center)
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geofactor", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the MCMC sampler and store chains")
    f.add_argument("--data")
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--chains", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--lonlat", action="store_true", help="project lon/lat to metres first")
    f.add_argument("--from-run", help="refit using the dataset, config and seed stored in a run")
    f.add_argument("--serial", action="store_true", help="run chains in this process")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict factors on a grid")
    pr.add_argument("--run", required=True)
    pr.add_argument("--grid", required=True)
    pr.add_argument("--threshold", type=float, default=0.0)
    pr.add_argument("--out", help="output path prefix (default RUN/prediction)")
    pr.add_argument("--format", choices=("csv", "geojson", "both"), default="both")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--max-samples", type=int, default=None)
    pr.add_argument("--allow-coincident", action="store_true")
    pr.set_defaults(func=cmd_predict)

    d = sub.add_parser("dic", help="deviance information criterion")
    d.add_argument("--run", required=True)
    d.add_argument("--data", required=True)
    d.set_defaults(func=cmd_dic)

    v = sub.add_parser("variogram", help="empirical variogram of score columns")
    v.add_argument("--scores", required=True)
    v.add_argument("--bins", type=int, default=10)
    v.add_argument("--max-dist", type=float, default=None)
    v.add_argument("--out")
    v.set_defaults(func=cmd_variogram)

    s = sub.add_parser("simulate", help="simulate a dataset from known parameters")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    sm = sub.add_parser("summary", help="posterior summaries of a run")
    sm.add_argument("--run", required=True)
    sm.add_argument("--theta", action="store_true", help="include every factor score")
    sm.add_argument("--scores-out", help="write posterior mean factor scores to CSV")
    sm.set_defaults(func=cmd_summary)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"geofactor {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"geofactor {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
