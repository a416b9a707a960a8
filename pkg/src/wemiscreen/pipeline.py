"""Configuration handling and the stages behind the command-line interface.

A run is described by one JSON document with a section per stage.  Every
stage reads its inputs from, and writes its outputs to, a single output
directory, so stages can be run one at a time or chained with ``run_all``::

    out/
      config.resolved.json
      site.json                     collections, lanes, extents, swept area
      sweeps/<id>.csv               complex sweeps (blanks included)
      truth/<id>.csv                ground truth per sweep
      preprocessed/<id>.csv         per-position detector features
      preprocessed/<id>.svd.csv     windowed SVD features (soil mode only)
      models/<kind>_fold<k>.json    MI signatures, plus <kind>_summary.json
      maps/<kind>/<id>.csv          confidence maps with .meta.json sidecars
      alarms/<kind>/<id>.csv
      roc/<kind>_<subset>.csv
      summary.json

Files are written without timestamps and floats are printed with ``repr``,
so a fixed configuration reproduces the tree byte for byte.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import alarms as alarms_mod
from .detect import STATISTIC_KINDS, ConfidenceMap, PrescreenerConfig, fit_background, score_features
from .dsrf import build_dsrf, dsrf_atom, stack_columns
from .filters import (
    Preprocessing,
    WindowSpec,
    feature_map_from_csv,
    feature_map_to_csv,
    make_soil_projector,
    preprocess,
    window_features,
)
from .measurement import load_sweep, save_sweep, stack_real
from .miltrain import MilModel, lane_folds, make_bags, train_mi
from .score import SUBSETS, match_alarms, pd_at_far, roc
from .synthgen import GroundTruthTable, SiteSpec, make_site, simulate

log = logging.getLogger(__name__)

MI_KINDS = ("mi_smf", "mi_ace")

DEFAULT_CONFIG = {
    "seed": 0,
    "site": {f.name: f.default for f in dataclasses.fields(SiteSpec)},
    "preprocessing": {
        "mode": "dct",
        "band_fraction": 0.5,
        "kept_band": None,
        "mean_rows": "real",
        "lambda_rel": 1e-6,
        "window_width": 11,
        "n_singular_vectors": 3,
        "ratio_power": 0.5,
    },
    "dictionary": {"n_atoms": 100, "zeta_min": None, "zeta_max": None},
    "detect": {
        "kinds": list(STATISTIC_KINDS),
        "ell": 2,
        "p": 3,
        "orthogonal": False,
        "normalize_taps": True,
        "epsilon": None,
    },
    "train": {
        "folds": 2,
        "halo_m": None,
        "far_factor": 3.0,
        "max_iters": 100,
        "restarts": 0,
        "blank_bag_size": None,
        "positive_classes": ["MT", "LMT", "NMT"],
    },
    "alarms": {f.name: f.default for f in dataclasses.fields(alarms_mod.MeanShiftParams)},
    "score": {"subsets": ["MT", "LMT", "all"], "far_budgets": [0.2]},
}
DEFAULT_CONFIG["site"]["classes"] = list(DEFAULT_CONFIG["site"]["classes"])


class ConfigError(ValueError):
    """Invalid configuration or missing stage input (exit code 1)."""


# ---------------------------------------------------------------------------
# Configuration


def _merge(base: dict, user: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown configuration key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{path}' must be an object")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def resolve_config(user: dict | None = None, seed: int | None = None) -> dict:
    """Merge ``user`` over the defaults, apply a seed override and validate.

    Unknown keys anywhere in the document are rejected.
    """
    if user is not None and not isinstance(user, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user or {}, "")
    if seed is not None:
        cfg["seed"] = seed
    validate_config(cfg)
    return cfg


def load_config(path: str | Path | None, seed: int | None = None) -> dict:
    if path is None:
        return resolve_config(None, seed)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    return resolve_config(user, seed)


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _build_or_fail(section: str, fn):
    try:
        return fn()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def validate_config(cfg: dict) -> None:
    seed = cfg["seed"]
    _check(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
           "seed: must be an integer in [0, 2^64)")
    site_spec(cfg)
    pp = cfg["preprocessing"]
    _check(pp["mode"] in ("dct", "dct+soil_projection"),
           "preprocessing.mode: must be 'dct' or 'dct+soil_projection'")
    _check(0 < pp["band_fraction"] <= 1, "preprocessing.band_fraction: must be in (0, 1]")
    _check(pp["mean_rows"] in ("real", "all", "none"), "preprocessing.mean_rows: must be real, all or none")
    _check(pp["lambda_rel"] > 0, "preprocessing.lambda_rel: must be > 0")
    _check(pp["kept_band"] is None or (isinstance(pp["kept_band"], list) and pp["kept_band"]),
           "preprocessing.kept_band: must be null or a non-empty list of indices")
    _build_or_fail("preprocessing", lambda: WindowSpec(pp["window_width"], 1, pp["n_singular_vectors"],
                                                       pp["ratio_power"]))
    d = cfg["dictionary"]
    _check(isinstance(d["n_atoms"], int) and d["n_atoms"] >= 1, "dictionary.n_atoms: must be >= 1")
    det = cfg["detect"]
    _check(isinstance(det["kinds"], list) and det["kinds"], "detect.kinds: must be a non-empty list")
    for k in det["kinds"]:
        _check(k in STATISTIC_KINDS, f"detect.kinds: unknown detector {k!r}")
    _check(isinstance(det["ell"], int) and det["ell"] >= 1, "detect.ell: must be an integer >= 1")
    _check(isinstance(det["p"], int) and det["p"] >= 1, "detect.p: must be an integer >= 1")
    _check(det["epsilon"] is None or det["epsilon"] > 0, "detect.epsilon: must be null or > 0")
    tr = cfg["train"]
    _check(isinstance(tr["folds"], int) and tr["folds"] >= 1, "train.folds: must be an integer >= 1")
    _check(tr["halo_m"] is None or tr["halo_m"] > 0, "train.halo_m: must be null or > 0")
    _check(tr["far_factor"] >= 1, "train.far_factor: must be >= 1")
    _check(isinstance(tr["max_iters"], int) and tr["max_iters"] >= 1, "train.max_iters: must be >= 1")
    _check(isinstance(tr["restarts"], int) and tr["restarts"] >= 0, "train.restarts: must be >= 0")
    _check(isinstance(tr["positive_classes"], list) and tr["positive_classes"]
           and all(c in ("MT", "LMT", "NMT") for c in tr["positive_classes"]),
           "train.positive_classes: must be a non-empty list drawn from MT, LMT, NMT")
    alarm_params(cfg)
    sc = cfg["score"]
    for s in sc["subsets"]:
        _check(s in SUBSETS, f"score.subsets: unknown subset {s!r} (choose from {sorted(SUBSETS)})")
    _check(all(b >= 0 for b in sc["far_budgets"]), "score.far_budgets: budgets must be >= 0")


def site_spec(cfg: dict) -> SiteSpec:
    s = dict(cfg["site"])
    s["classes"] = tuple(s["classes"])
    return _build_or_fail("site", lambda: SiteSpec(**s))


def alarm_params(cfg: dict) -> alarms_mod.MeanShiftParams:
    return _build_or_fail("alarms", lambda: alarms_mod.MeanShiftParams(**cfg["alarms"]))


def config_text(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def selected_kinds(cfg: dict, detector: str | None = None) -> list[str]:
    if detector is None:
        return list(cfg["detect"]["kinds"])
    if detector not in STATISTIC_KINDS:
        raise ConfigError(f"--detector: unknown detector {detector!r}")
    return [detector]


# ---------------------------------------------------------------------------
# Output directory helpers


def _write(path: Path, data: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def _write_json(path: Path, obj) -> Path:
    return _write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {path}; run the '{stage}' stage first")
    return path


def read_manifest(out: Path) -> dict:
    return json.loads(_need(out / "site.json", "simulate").read_text())


def _records(manifest: dict, blank: bool | None = None) -> list[dict]:
    recs = manifest["collections"]
    return [r for r in recs if blank is None or r["blank"] == blank]


def load_truth(out: Path, manifest: dict) -> GroundTruthTable:
    table = GroundTruthTable()
    for r in _records(manifest, blank=False):
        table = table + GroundTruthTable.from_csv(_need(out / "truth" / f"{r['sweep_id']}.csv", "simulate").read_bytes())
    return table


def _load_real(out: Path, sweep_id: str):
    raw = load_sweep(_need(out / "sweeps" / f"{sweep_id}.csv", "simulate").read_bytes())
    return stack_real(dataclasses.replace(raw, sweep_id=sweep_id))


class _Context:
    """Dictionary, soil projector and preprocessing shared by the stages."""

    def __init__(self, cfg: dict, out: Path, manifest: dict):
        first = _records(manifest)[0]["sweep_id"]
        grid = self.grid = _load_real(out, first).grid
        d = cfg["dictionary"]
        self.dictionary = build_dsrf(grid, d["n_atoms"], d["zeta_min"], d["zeta_max"])
        pp = cfg["preprocessing"]
        soil = None
        if pp["mode"] == "dct+soil_projection":
            soil = make_soil_projector(self.dictionary, lambda_rel=pp["lambda_rel"])
        band = tuple(pp["kept_band"]) if pp["kept_band"] is not None else None
        self.prep = Preprocessing(
            mode=pp["mode"], kept_band=band, band_fraction=pp["band_fraction"],
            mean_rows=pp["mean_rows"], soil=soil,
            window=WindowSpec(pp["window_width"], 1, pp["n_singular_vectors"], pp["ratio_power"]),
        )

    def uses_windows(self, kind: str) -> bool:
        return kind in MI_KINDS and self.prep.mode == "dct+soil_projection"


def _feature_path(out: Path, sweep_id: str, windowed: bool) -> Path:
    return out / "preprocessed" / (f"{sweep_id}.svd.csv" if windowed else f"{sweep_id}.csv")


def _features(out: Path, sweep_id: str, windowed: bool):
    return feature_map_from_csv(_need(_feature_path(out, sweep_id, windowed), "preprocess").read_bytes(),
                                sweep_id)


def _background(cfg: dict, out: Path, manifest: dict, windowed: bool):
    blanks = _records(manifest, blank=True)
    if not blanks:
        raise ConfigError("background estimation needs blank collections (site.n_blanks >= 1)")
    x = np.hstack([_features(out, r["sweep_id"], windowed).data for r in blanks])
    return fit_background(x, cfg["detect"]["epsilon"])


# ---------------------------------------------------------------------------
# Stages


def cmd_simulate(cfg: dict, out: Path) -> list[str]:
    """Write one sweep and one truth file per collection plus the site manifest."""
    site = make_site(site_spec(cfg), cfg["seed"])
    lines = []
    records = []
    for c in site.collections + site.blanks:
        sweep, truth = simulate(c.scene, c.path, c.sweep_id)
        _write(out / "sweeps" / f"{c.sweep_id}.csv", save_sweep(sweep))
        _write(out / "truth" / f"{c.sweep_id}.csv", truth.to_csv())
        records.append({
            "sweep_id": c.sweep_id, "lane": c.lane, "blank": c.blank,
            "extent": list(c.extent), "area": c.area, "n_positions": c.path.n,
        })
        lines.append(f"{c.sweep_id}: {c.path.n} positions, {len(truth)} truth entries"
                     + (" (blank)" if c.blank else ""))
    _write_json(out / "site.json", {"collections": records, "swept_area_m2": site.swept_area,
                                    "n_lanes": site.spec.n_lanes})
    return lines


def cmd_preprocess(cfg: dict, out: Path) -> list[str]:
    manifest = read_manifest(out)
    ctx = _Context(cfg, out, manifest)
    lines = []
    for r in _records(manifest):
        sweep = _load_real(out, r["sweep_id"])
        fm = preprocess(sweep, ctx.prep)
        _write(_feature_path(out, r["sweep_id"], False), feature_map_to_csv(fm))
        msg = f"{r['sweep_id']}: {fm.dim} features x {len(fm)} positions"
        if ctx.prep.mode == "dct+soil_projection":
            wf = window_features(sweep, ctx.prep)
            _write(_feature_path(out, r["sweep_id"], True), feature_map_to_csv(wf))
            msg += f"; {wf.dim} window features"
        lines.append(msg)
    return lines


def _folds(lanes, k: int):
    try:
        return lane_folds(lanes, k)
    except ValueError as exc:
        raise ConfigError(f"train.folds: {exc}") from None


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def cmd_train(cfg: dict, out: Path, kinds=None) -> list[str]:
    """Lane-fold MI training; one model per fold and a per-kind summary."""
    manifest = read_manifest(out)
    ctx = _Context(cfg, out, manifest)
    kinds = [k for k in (kinds or cfg["detect"]["kinds"]) if k in MI_KINDS]
    tr = cfg["train"]
    halo = tr["halo_m"] if tr["halo_m"] is not None else cfg["site"]["halo_m"]
    sweeps = _records(manifest, blank=False)
    lanes = [r["lane"] for r in sweeps]
    lines = []
    for kind in kinds:
        windowed = ctx.uses_windows(kind)
        bg = _background(cfg, out, manifest, windowed)
        blanks = [_features(out, r["sweep_id"], windowed) for r in _records(manifest, blank=True)]
        summary = {"kind": kind, "folds": []}
        # with a shared planted spectrum, report how well each fold recovered it
        planted = None
        if cfg["site"]["shared_zeta"] is not None and not windowed:
            planted = stack_columns(dsrf_atom(ctx.grid, cfg["site"]["shared_zeta"]))
        for k, (train_lanes, test_lanes) in enumerate(_folds(lanes, tr["folds"])):
            fms, truth = [], GroundTruthTable()
            for r in sweeps:
                if r["lane"] in train_lanes:
                    fms.append(_features(out, r["sweep_id"], windowed))
                    truth = truth + GroundTruthTable.from_csv((out / "truth" / f"{r['sweep_id']}.csv").read_bytes())
            bags = make_bags(fms, truth, halo, blanks, tr["blank_bag_size"], tr["far_factor"],
                             tuple(tr["positive_classes"]))
            if not any(b.positive for b in bags) or not any(not b.positive for b in bags):
                raise ConfigError(f"{kind} fold {k}: training needs positive and negative bags")
            model = train_mi(bags, bg, kind[3:], tr["max_iters"], tr["restarts"],
                             seed=cfg["seed"])
            _write(out / "models" / f"{kind}_fold{k}.json", model.to_json())
            summary["folds"].append({
                "fold": k, "train_lanes": list(train_lanes), "test_lanes": list(test_lanes),
                "objective_trace": list(model.objective_trace), "converged": model.converged,
                "n_positive_bags": sum(b.positive for b in bags),
                "n_negative_bags": sum(not b.positive for b in bags),
                "planted_cosine": None if planted is None else _cosine(model.unwhitened_signature, planted),
            })
            lines.append(f"{kind} fold {k}: objective {model.objective_trace[-1]!r} after "
                         f"{len(model.objective_trace) - 1} updates")
        _write_json(out / "models" / f"{kind}_summary.json", summary)
    return lines


def cmd_detect(cfg: dict, out: Path, kinds=None) -> list[str]:
    manifest = read_manifest(out)
    ctx = _Context(cfg, out, manifest)
    det = cfg["detect"]
    chash = config_hash(cfg)
    sweeps = _records(manifest, blank=False)
    lines = []
    for kind in (kinds or det["kinds"]):
        windowed = ctx.uses_windows(kind)
        base = PrescreenerConfig(kind, ctx.prep, ctx.dictionary, None, None,
                                 det["ell"], det["p"], det["orthogonal"], det["normalize_taps"])
        per_sweep = {}
        if kind in ("smf", "ace") or kind in MI_KINDS:
            bg = _background(cfg, out, manifest, windowed)
        if kind in ("smf", "ace"):
            base = dataclasses.replace(base, background=bg)
        if kind in MI_KINDS:
            folds = _folds([r["lane"] for r in sweeps], cfg["train"]["folds"])
            for k, (_, test_lanes) in enumerate(folds):
                src = _need(out / "models" / f"{kind}_fold{k}.json", "train").read_bytes()
                model = MilModel.from_json(src, bg)
                for r in sweeps:
                    if r["lane"] in test_lanes:
                        per_sweep[r["sweep_id"]] = dataclasses.replace(base, model=model)
        for r in sweeps:
            sid = r["sweep_id"]
            conf = score_features(_features(out, sid, windowed), per_sweep.get(sid, base))
            _write(out / "maps" / kind / f"{sid}.csv", conf.to_csv())
            _write(out / "maps" / kind / f"{sid}.meta.json", conf.metadata(chash))
        lines.append(f"{kind}: {len(sweeps)} confidence maps")
    return lines


def cmd_alarms(cfg: dict, out: Path, kinds=None) -> list[str]:
    manifest = read_manifest(out)
    params = alarm_params(cfg)
    lines = []
    for kind in (kinds or cfg["detect"]["kinds"]):
        total = 0
        for r in _records(manifest, blank=False):
            sid = r["sweep_id"]
            cm = ConfidenceMap.from_csv(_need(out / "maps" / kind / f"{sid}.csv", "detect").read_bytes(),
                                        kind, sid)
            found = alarms_mod.generate_alarms(cm, params)
            total += len(found)
            _write(out / "alarms" / kind / f"{sid}.csv", alarms_mod.alarms_to_csv(found))
        lines.append(f"{kind}: {total} alarms")
    return lines


def cmd_score(cfg: dict, out: Path, kinds=None) -> list[str]:
    """ROC per (detector, subset) and a summary of PD at each FAR budget."""
    manifest = read_manifest(out)
    truth = load_truth(out, manifest)
    if len(truth) == 0:
        raise ConfigError("scoring needs at least one ground-truth entry")
    area = float(manifest["swept_area_m2"])
    budgets = cfg["score"]["far_budgets"]
    summary = {"swept_area_m2": area, "far_budgets": budgets, "detectors": {}}
    lines = []
    for kind in (kinds or cfg["detect"]["kinds"]):
        found = []
        for r in _records(manifest, blank=False):
            path = _need(out / "alarms" / kind / f"{r['sweep_id']}.csv", "alarms")
            found += alarms_mod.alarms_from_csv(path.read_bytes())
        entry = {}
        for subset in cfg["score"]["subsets"]:
            scored = match_alarms(found, truth, area, SUBSETS[subset])
            if scored.n_targets == 0:
                entry[subset] = None
                continue
            curve = roc(scored)
            _write(out / "roc" / f"{kind}_{subset}.csv", curve.to_csv())
            pds = {repr(float(b)): pd_at_far(curve, b) for b in budgets}
            entry[subset] = {"n_targets": scored.n_targets, "hits": len(scored.hits),
                             "false_alarms": len(scored.false_alarms), "pd_at_far": pds}
            lines.append(f"{kind:9s} {subset:4s} " + " ".join(f"PD@{k}={v:.3f}" for k, v in pds.items()))
        summary["detectors"][kind] = entry
    _write_json(out / "summary.json", summary)
    return lines


def run_all(cfg: dict, out: Path, kinds=None) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.resolved.json", config_text(cfg).encode("utf-8"))
    kinds = kinds or cfg["detect"]["kinds"]
    lines = cmd_simulate(cfg, out)
    lines += cmd_preprocess(cfg, out)
    if any(k in MI_KINDS for k in kinds):
        lines += cmd_train(cfg, out, kinds)
    lines += cmd_detect(cfg, out, kinds)
    lines += cmd_alarms(cfg, out, kinds)
    lines += cmd_score(cfg, out, kinds)
    return lines
