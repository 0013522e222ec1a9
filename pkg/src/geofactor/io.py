"""Reading and writing datasets, model configs, chains and prediction surfaces."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import IntegrityError, ValidationError
from .model import (
    Dataset, ItemConstraint, LoadingStructure, ModelSpec, PriorSpec, SIGN_FREE,
    SIGN_NEGATIVE, SIGN_POSITIVE, standardize_covariates, validate_identifiability,
)
from .sampler import BLOCKS, ChainOutput, SamplerConfig

MISSING_TOKENS = ("", "na")
ITEM_PREFIX = "item_"
COV_PREFIX = "cov_"
EARTH_RADIUS_M = 6371008.8


def _fmt(x: float) -> str:
    return "%.17g" % x


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_hash(ds: Dataset) -> str:
    """Content hash of the modelling arrays (missing cells hashed as NaN)."""
    h = hashlib.sha256()
    for arr in (ds.y, ds.obs_mask.astype(np.uint8), ds.coords, ds.X):
        a = np.ascontiguousarray(arr, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------------------
# datasets


def _parse_float(text: str, where: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(val):
        raise ValidationError(f"{where}: value {text!r} is not finite")
    return val


def load_dataset(path, *, standardize: bool = True, delimiter: str = ",") -> Dataset:
    """Read a delimited file with columns ``id, x, y, item_*, cov_*``.

    Item cells hold 0, 1, or a missing marker (``NA`` in any case, or an
    empty cell). Covariates are standardized and the transform is kept on
    the dataset; pass ``standardize=False`` for files whose covariates are
    already on the model scale (as written by :func:`write_dataset`).
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        for col, name in enumerate(header):
            if name in ("id", "x", "y") or name.startswith(ITEM_PREFIX) or name.startswith(COV_PREFIX):
                continue
            raise ValidationError(f"{path}: row 1, column {col + 1}: unknown column {name!r}")
        if len(set(header)) != len(header):
            raise ValidationError(f"{path}: row 1: duplicate column names")
        for req in ("x", "y"):
            if req not in header:
                raise ValidationError(f"{path}: row 1: missing required column {req!r}")
        item_cols = [k for k, h in enumerate(header) if h.startswith(ITEM_PREFIX)]
        cov_cols = [k for k, h in enumerate(header) if h.startswith(COV_PREFIX)]
        if not item_cols:
            raise ValidationError(f"{path}: row 1: no item_* columns")
        ix, iy = header.index("x"), header.index("y")
        iid = header.index("id") if "id" in header else None
        ids, coords, Y, Xr = [], [], [], []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: row {r}: expected {len(header)} fields, found {len(row)}")
            row = [c.strip() for c in row]
            ids.append(row[iid] if iid is not None else str(len(ids) + 1))
            coords.append([_parse_float(row[ix], f"{path}: row {r}, column 'x'"),
                           _parse_float(row[iy], f"{path}: row {r}, column 'y'")])
            yrow = []
            for k in item_cols:
                cell = row[k]
                if cell.lower() in MISSING_TOKENS:
                    yrow.append(np.nan)
                elif cell in ("0", "1", "0.0", "1.0"):
                    yrow.append(float(cell))
                else:
                    raise ValidationError(
                        f"{path}: row {r}, column {header[k]!r}: item value {cell!r} is not 0, 1 or NA")
            Y.append(yrow)
            Xr.append([_parse_float(row[k], f"{path}: row {r}, column {header[k]!r}")
                       for k in cov_cols])
    if not Y:
        raise ValidationError(f"{path}: no data rows")
    y = np.array(Y, dtype=float)
    X_raw = np.array(Xr, dtype=float).reshape(len(Y), len(cov_cols))
    cov_names = tuple(header[k] for k in cov_cols)
    means = sds = None
    if cov_cols and standardize:
        try:
            X, means, sds = standardize_covariates(X_raw, cov_names)
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    else:
        X = X_raw
    try:
        return Dataset(y=y, obs_mask=~np.isnan(y), coords=np.array(coords), X=X,
                       item_names=tuple(header[k] for k in item_cols), covariate_names=cov_names,
                       ids=tuple(ids), x_means=means, x_sds=sds)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_dataset(ds: Dataset, path, *, delimiter: str = ",") -> None:
    """Write ``ds`` with full-precision numbers; covariates are written as stored."""
    items = [n if n.startswith(ITEM_PREFIX) else ITEM_PREFIX + n for n in ds.item_names]
    covs = [n if n.startswith(COV_PREFIX) else COV_PREFIX + n for n in ds.covariate_names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["id", "x", "y"] + items + covs)
        for i in range(ds.n):
            cells = ["NA" if not ds.obs_mask[i, j] else str(int(ds.y[i, j])) for j in range(ds.q)]
            w.writerow([ds.ids[i], _fmt(ds.coords[i, 0]), _fmt(ds.coords[i, 1])] + cells
                       + [_fmt(v) for v in ds.X[i]])


def lonlat_to_meters(lonlat, center=None):
    """Equirectangular projection to metres about ``center`` (default: centroid).

    Returns ``(xy, center)``.
    """
    ll = np.asarray(lonlat, dtype=float)
    if center is None:
        center = ll.mean(axis=0)
    lon0, lat0 = np.radians(center)
    lon, lat = np.radians(ll[:, 0]), np.radians(ll[:, 1])
    x = EARTH_RADIUS_M * (lon - lon0) * math.cos(lat0)
    yy = EARTH_RADIUS_M * (lat - lat0)
    return np.column_stack([x, yy]), np.asarray(center, dtype=float)


def meters_to_lonlat(xy, center):
    xy = np.asarray(xy, dtype=float)
    lon0, lat0 = np.radians(center)
    lon = xy[:, 0] / (EARTH_RADIUS_M * math.cos(lat0)) + lon0
    lat = xy[:, 1] / EARTH_RADIUS_M + lat0
    return np.degrees(np.column_stack([lon, lat]))


# ----------------------------------------------------------------------------
# model configuration

_MODEL_KEYS = {"m", "discrimination", "loading_pattern", "n_covariates", "D", "sign_mode", "corr_fn"}
_PRIOR_KEYS = {"c_var", "a_mean", "a_var", "beta_var", "sign_mean", "sign_sd", "logT_mean",
               "logT_var", "logphi_mean", "logphi_var", "eta"}
_SAMPLER_KEYS = {"iterations", "burn_in", "thin", "C", "alpha", "target_accept", "seed", "init", "fixed"}
_SIGN_WORDS = {"free": SIGN_FREE, "+": SIGN_POSITIVE, "positive": SIGN_POSITIVE,
               "-": SIGN_NEGATIVE, "negative": SIGN_NEGATIVE}


def _read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _check_keys(path, section: str, table, allowed: set) -> dict:
    if not isinstance(table, dict):
        raise ValidationError(f"{path}: [{section}] must be a table")
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ValidationError(f"{path}: [{section}]: unknown key(s) {', '.join(unknown)}")
    return table


def _constraints_from_rows(path, rows, m: int) -> tuple:
    """Each row lists, per factor, ``"free"``, ``"+"``/``"positive"``,
    ``"-"``/``"negative"`` or a number (a fixed loading)."""
    out = []
    for j, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != m:
            raise ValidationError(f"{path}: [model] discrimination row {j + 1}: expected {m} entries")
        fixed, active, signs = np.zeros(m), np.ones(m, dtype=int), []
        for k, entry in enumerate(row):
            if isinstance(entry, str):
                word = entry.strip().lower()
                if word not in _SIGN_WORDS:
                    raise ValidationError(
                        f"{path}: [model] discrimination row {j + 1}, entry {k + 1}: unknown value {entry!r}")
                signs.append(_SIGN_WORDS[word])
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                fixed[k], active[k] = float(entry), 0
                signs.append(SIGN_FREE)
            else:
                raise ValidationError(
                    f"{path}: [model] discrimination row {j + 1}, entry {k + 1}: unsupported value {entry!r}")
        out.append(ItemConstraint(fixed, active, tuple(signs)))
    return tuple(out)


def spec_from_tables(path, model: dict, priors: dict, n_covariates: int = 0) -> ModelSpec:
    _check_keys(path, "model", model, _MODEL_KEYS)
    _check_keys(path, "priors", priors, _PRIOR_KEYS)
    try:
        m = int(model["m"])
        rows = model["discrimination"]
    except KeyError as exc:
        raise ValidationError(f"{path}: [model]: missing required key {exc.args[0]!r}") from None
    if m < 1:
        raise ValidationError(f"{path}: [model] m must be at least 1")
    try:
        constraints = _constraints_from_rows(path, rows, m)
        pattern = np.asarray(model.get("loading_pattern", np.eye(m).tolist()))
        loading = LoadingStructure(pattern.reshape(m, -1))
        pr = PriorSpec.default(constraints, loading, int(model.get("n_covariates", n_covariates)), **priors)
        spec = ModelSpec(m=m, constraints=constraints, loading=loading, priors=pr,
                         D=model.get("D"), corr_fn=model.get("corr_fn", "exponential"),
                         sign_mode=model.get("sign_mode", "soft"))
    except ValidationError as exc:
        raise ValidationError(f"{path}: [model]/[priors]: {exc}") from None
    report = validate_identifiability(spec)
    if not report:
        raise ValidationError(f"{path}: [model]: model is not identified: " + "; ".join(report.messages))
    return spec


def sampler_from_table(path, table: dict) -> SamplerConfig:
    _check_keys(path, "sampler", table, _SAMPLER_KEYS)
    kw = dict(table)
    for key in ("iterations", "burn_in", "thin", "seed"):
        if key in kw:
            val = kw[key]
            if not isinstance(val, int) or isinstance(val, bool):
                raise ValidationError(f"{path}: [sampler] {key} must be an integer")
    if kw.get("thin", 1) < 1:
        raise ValidationError(f"{path}: [sampler] thin must be a positive integer, got {kw['thin']}")
    try:
        return SamplerConfig(**kw)
    except ValidationError as exc:
        raise ValidationError(f"{path}: [sampler]: {exc}") from None


def parse_config(path, n_covariates: int = 0):
    """Read a TOML model config into ``(ModelSpec, SamplerConfig)``.

    Sections are ``[model]``, ``[priors]`` and ``[sampler]``; unknown
    sections or keys are errors. ``n_covariates`` is used when ``[model]``
    does not set it. See the README for the key reference.
    """
    doc = _read_toml(path)
    _check_keys(path, "top level", doc, {"model", "priors", "sampler"})
    if "model" not in doc:
        raise ValidationError(f"{path}: missing [model] section")
    spec = spec_from_tables(path, doc["model"], doc.get("priors", {}), n_covariates)
    config = sampler_from_table(path, doc.get("sampler", {}))
    return spec, config


# ----------------------------------------------------------------------------
# chains


def _block_header(key: str, shape: tuple) -> list[str]:
    if not shape:
        return [key]
    idx = np.indices(shape).reshape(len(shape), -1).T + 1
    return [f"{key}[{','.join(map(str, i))}]" for i in idx]


def _chain_prefix(chain_id: int) -> str:
    return f"chain{chain_id}"


def write_chain(chain: ChainOutput, directory, chain_id: int = 0) -> dict:
    """Write one delimited file per block plus ``chain{k}.json``.

    Returns the chain manifest, which records every file's SHA-256.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pre = _chain_prefix(chain_id)
    files, shapes = {}, {}
    its = chain.iterations.astype(np.int64)
    for key in BLOCKS:
        arr = np.asarray(chain.samples[key], dtype=float)
        shape = arr.shape[1:]
        flat = arr.reshape(arr.shape[0], -1)
        name = f"{pre}_{key}.csv"
        with open(d / name, "w", newline="") as fh:
            fh.write(",".join(["iteration"] + [f'"{h}"' for h in _block_header(key, shape)]) + "\n")
            for it, row in zip(its, flat):
                fh.write(",".join([str(int(it))] + [_fmt(v) for v in row]) + "\n")
        files[name] = sha256_file(d / name)
        shapes[key] = list(shape)
    name = f"{pre}_accept.csv"
    with open(d / name, "w") as fh:
        fh.write("iteration,accepted\n")
        for i, a in enumerate(chain.accept, start=1):
            fh.write(f"{i},{int(a)}\n")
    files[name] = sha256_file(d / name)
    name = f"{pre}_adaptation.csv"
    with open(d / name, "w") as fh:
        fh.write("iteration,log_scale,recent_accept\n")
        for it, ls, ra in chain.adaptation:
            fh.write(f"{int(it)},{_fmt(ls)},{_fmt(ra)}\n")
    files[name] = sha256_file(d / name)
    manifest = {
        "chain_id": chain_id, "n_samples": chain.n_samples, "n_iterations": int(chain.accept.size),
        "shapes": shapes, "files": files, "chain_hash": chain.hash(),
        "metadata": _jsonable(chain.metadata),
    }
    with open(d / f"{pre}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _read_numeric(path, n_rows: int, n_cols: int) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    body = lines[1:]
    if len(body) != n_rows:
        raise IntegrityError(f"{path}: expected {n_rows} rows, found {len(body)} (truncated file?)")
    out = np.empty((n_rows, n_cols))
    for r, line in enumerate(body, start=2):
        parts = line.split(",")
        if len(parts) != n_cols:
            raise IntegrityError(f"{path}: row {r}: expected {n_cols} fields, found {len(parts)}")
        try:
            out[r - 2] = [float(p) for p in parts]
        except ValueError:
            raise IntegrityError(f"{path}: row {r}: unparseable number") from None
    return out


def load_chain(directory, chain_id: int = 0) -> ChainOutput:
    """Read a chain written by :func:`write_chain`, verifying every hash."""
    d = Path(directory)
    pre = _chain_prefix(chain_id)
    mpath = d / f"{pre}.json"
    try:
        with open(mpath) as fh:
            man = json.load(fh)
    except OSError:
        raise ValidationError(f"{mpath}: chain manifest not found") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{mpath}: corrupt manifest ({exc})") from None
    for name, digest in man["files"].items():
        fpath = d / name
        if not fpath.exists():
            raise IntegrityError(f"{fpath}: missing chain file")
        got = sha256_file(fpath)
        if got != digest:
            raise IntegrityError(f"{fpath}: hash mismatch (expected {digest[:12]}, got {got[:12]})")
    S = man["n_samples"]
    samples, its = {}, None
    for key in BLOCKS:
        shape = tuple(man["shapes"][key])
        width = int(np.prod(shape)) if shape else 1
        arr = _read_numeric(d / f"{pre}_{key}.csv", S, width + 1)
        its = arr[:, 0].astype(np.int64)
        samples[key] = arr[:, 1:].reshape((S,) + shape)
    acc = _read_numeric(d / f"{pre}_accept.csv", man["n_iterations"], 2)[:, 1].astype(bool)
    with open(d / f"{pre}_adaptation.csv") as fh:
        n_ad = max(sum(1 for _ in fh) - 1, 0)
    adapt = _read_numeric(d / f"{pre}_adaptation.csv", n_ad, 3) if n_ad else np.zeros((0, 3))
    chain = ChainOutput(samples=samples, iterations=its, accept=acc, adaptation=adapt,
                        metadata=man.get("metadata", {}))
    if chain.hash() != man["chain_hash"]:
        raise IntegrityError(f"{mpath}: chain content hash mismatch")
    return chain


def concat_chains(chains) -> ChainOutput:
    """Pool draws from several chains (sample axis concatenated in chain order)."""
    chains = list(chains)
    if not chains:
        raise ValidationError("no chains to combine")
    samples = {k: np.concatenate([c.samples[k] for c in chains]) for k in BLOCKS}
    return ChainOutput(samples=samples, iterations=np.concatenate([c.iterations for c in chains]),
                       accept=np.concatenate([c.accept for c in chains]),
                       adaptation=np.concatenate([c.adaptation for c in chains]),
                       metadata={"pooled_chains": len(chains)})


@dataclass
class RunManifest:
    """Provenance of a fit; stored as ``manifest.json`` in the run directory."""

    spec_hash: str
    dataset_hash: str
    seed: int
    n_chains: int
    config: dict
    chain_hashes: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    tool_version: str = __version__

    def write(self, directory) -> None:
        with open(Path(directory) / "manifest.json", "w") as fh:
            json.dump(_jsonable(self.__dict__), fh, indent=2, sort_keys=True)

    @classmethod
    def read(cls, directory) -> "RunManifest":
        path = Path(directory) / "manifest.json"
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError:
            raise ValidationError(f"{path}: run manifest not found") from None
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"{path}: corrupt manifest ({exc})") from None
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"{path}: unknown manifest fields {sorted(unknown)}")
        return cls(**data)


# ----------------------------------------------------------------------------
# prediction grids and export


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of cell centres over ``bbox = (xmin, ymin, xmax, ymax)``,
    optionally restricted to the interior of a mask polygon."""

    bbox: tuple
    cell_size: float
    mask: tuple | None = None

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4 or bbox[2] <= bbox[0] or bbox[3] <= bbox[1]:
            raise ValidationError(f"bbox must be (xmin, ymin, xmax, ymax) with positive extent, got {bbox}")
        if not self.cell_size > 0:
            raise ValidationError("cell_size must be positive")
        object.__setattr__(self, "bbox", bbox)
        if self.mask is not None:
            pts = tuple(tuple(float(c) for c in p) for p in self.mask)
            if len(pts) < 3:
                raise ValidationError("mask polygon needs at least 3 vertices")
            object.__setattr__(self, "mask", pts)
        if self.cell_centers().shape[0] < 1:
            raise ValidationError("grid has no cells")

    @property
    def shape(self) -> tuple[int, int]:
        xmin, ymin, xmax, ymax = self.bbox
        nx = max(1, int(math.ceil((xmax - xmin) / self.cell_size - 1e-9)))
        ny = max(1, int(math.ceil((ymax - ymin) / self.cell_size - 1e-9)))
        return nx, ny

    def cell_centers(self) -> np.ndarray:
        """Centres in row-major order (y outer, x inner)."""
        nx, ny = self.shape
        xs = self.bbox[0] + (np.arange(nx) + 0.5) * self.cell_size
        ys = self.bbox[1] + (np.arange(ny) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        if self.mask is not None:
            import shapely
            poly = shapely.Polygon(self.mask)
            pts = pts[shapely.contains_xy(poly, pts[:, 0], pts[:, 1])]
        return pts

    @classmethod
    def from_file(cls, path) -> "GridSpec":
        doc = _read_toml(path)
        table = _check_keys(path, "grid", doc.get("grid", doc), {"bbox", "cell_size", "mask", "covariates"})
        try:
            return cls(bbox=tuple(table["bbox"]), cell_size=float(table["cell_size"]),
                       mask=table.get("mask"))
        except KeyError as exc:
            raise ValidationError(f"{path}: [grid]: missing key {exc.args[0]!r}") from None
        except ValidationError as exc:
            raise ValidationError(f"{path}: [grid]: {exc}") from None


EXPORT_FORMATS = ("csv", "geojson")


def prediction_table(result, threshold: float = 0.0) -> tuple[list[str], np.ndarray]:
    """Columns ``x, y`` then per factor mean, median, 5%/95% quantiles and
    the exceedance probability."""
    from .inference import exceedance_prob
    draws = result.draws
    m = draws.shape[1]
    exc = exceedance_prob(result, threshold)
    q05, q50, q95 = np.quantile(draws, [0.05, 0.5, 0.95], axis=0)
    mean = draws.mean(axis=0)
    tag = f"exceed{threshold:g}"
    cols, vals = ["x", "y"], [result.new_coords[:, 0], result.new_coords[:, 1]]
    for k in range(m):
        f = f"factor_{k + 1}_"
        cols += [f + "mean", f + "median", f + "q05", f + "q95", f + tag]
        vals += [mean[k], q50[k], q05[k], q95[k], exc[k]]
    return cols, np.column_stack(vals)


def export_prediction(result, path, fmt: str = "csv", threshold: float = 0.0, coords=None) -> Path:
    """Write prediction summaries per grid cell as CSV or GeoJSON points.

    ``coords`` overrides the output coordinates (e.g. back-projected lon/lat).
    """
    if fmt not in EXPORT_FORMATS:
        raise ValidationError(f"unknown export format {fmt!r}; choose from {EXPORT_FORMATS}")
    cols, table = prediction_table(result, threshold)
    if coords is not None:
        table[:, :2] = np.asarray(coords, dtype=float)
    path = Path(path)
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    else:
        feats = []
        for row in table:
            props = {c: float(v) for c, v in zip(cols[2:], row[2:])}
            feats.append({"type": "Feature",
                          "geometry": {"type": "Point", "coordinates": [float(row[0]), float(row[1])]},
                          "properties": props})
        with open(path, "w") as fh:
            json.dump({"type": "FeatureCollection", "features": feats}, fh)
    return path


def read_scores(path) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Read ``x, y`` plus value columns; returns ``(coords, names, values)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if header[:2] != ["x", "y"] or len(header) < 3:
            raise ValidationError(f"{path}: row 1: expected columns x, y and at least one value column")
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {r}: expected {len(header)} fields, found {len(row)}")
            rows.append([_parse_float(c, f"{path}: row {r}, column {header[k]!r}") for k, c in enumerate(row)])
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return arr[:, :2], header[2:], arr[:, 2:]


def write_table(path, cols, table) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in np.atleast_2d(table):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
