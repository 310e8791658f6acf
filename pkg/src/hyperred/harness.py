"""Batch pipeline: offline FOM runs, basis merge, online ROM runs, reports.

Every phase reads and writes files under ``config["workdir"]`` so phases
can run in separate processes::

    workdir/
      manifest.json
      offline/mu_<mu>/{states,forces,times}.csv
      merge/er_<E_r>_w<nwin>/window_<w>/...
      online/<tag>.json, <tag>_final.csv, <tag>_w<w>_{samples,rule}.json
      report/report.csv, pareto_<method>.csv, pareto_overall.csv
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .eqp import SparseQuadratureRule, build_rule, sample_mesh_from_rule
from .fom import make_problem, sample_mesh_from_indices, solve_fom
from .interpolation import METHODS, ForceBasis, SampleIndexSet, sample
from .pod import (SnapshotMatrix, ReducedBasis, augment_basis, block_basis,
                  compute_basis, energy_residual, truncate_for_energy)
from .rom import TimeWindowSchedule, project_operators, relative_l2_error, solve_windowed

log = logging.getLogger("hyperred")

ALL_METHODS = ("none",) + METHODS + ("eqp",)
FIELD_OFFSETS = {
    "diffusion": {"p": "zero"},
    "bar": {"v": "zero", "x": "first_snapshot"},
}
DEFAULTS = {
    "workdir": "hyperred_run",
    "train_mu": None,
    "test_mu": None,
    "er": [2, 4, 6],
    "methods": list(ALL_METHODS),
    "nsr_factors": [1, 2, 4],
    "n_f": None,
    "eqp_tol": 1e-4,
    "maxnnls": None,
    "nwin": 1,
    "norm": "euclidean",
    "augment_constant": True,
    "timing_repeats": 3,
    "seed": 0,
}
TIMING_FIELDS = ("relative_online_time", "online_time", "fom_time", "timing_samples", "fom_timing_samples")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# configuration ---------------------------------------------------------------

def load_config(source, overrides=None):
    """Read a JSON config (path or mapping), apply overrides and defaults."""
    if isinstance(source, dict):
        cfg = dict(source)
    else:
        path = Path(source)
        try:
            cfg = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if "workdir" in cfg and not Path(cfg["workdir"]).is_absolute():
            cfg["workdir"] = str(path.parent / cfg["workdir"])
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    for k, v in DEFAULTS.items():
        cfg.setdefault(k, v)
    return validate_config(cfg)


def validate_config(cfg):
    if cfg.get("problem") not in FIELD_OFFSETS:
        raise ConfigError(f"problem must be one of {sorted(FIELD_OFFSETS)}, got {cfg.get('problem')!r}")
    default_mu = 0.3 if cfg["problem"] == "diffusion" else 1.0
    if cfg["test_mu"] is None:
        cfg["test_mu"] = default_mu
    if cfg["train_mu"] is None:
        cfg["train_mu"] = [cfg["test_mu"]]
    if isinstance(cfg["train_mu"], (int, float)):
        cfg["train_mu"] = [cfg["train_mu"]]
    if not cfg["train_mu"]:
        raise ConfigError("train_mu must list at least one parameter")
    if isinstance(cfg["er"], (int, float)):
        cfg["er"] = [cfg["er"]]
    if isinstance(cfg["methods"], str):
        cfg["methods"] = [cfg["methods"]]
    bad = [m for m in cfg["methods"] if m not in ALL_METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; expected a subset of {list(ALL_METHODS)}")
    if cfg["norm"] not in ("euclidean", "mass"):
        raise ConfigError("norm must be 'euclidean' or 'mass'")
    if int(cfg["nwin"]) < 1:
        raise ConfigError("nwin must be at least 1")
    if float(cfg["eqp_tol"]) <= 0:
        raise ConfigError("eqp_tol must be positive")
    if any(float(f) < 1 for f in cfg["nsr_factors"]):
        raise ConfigError("nsr_factors must be at least 1 (n_f >= r_f)")
    try:
        fom = make_problem({**cfg, "mu": cfg["test_mu"]})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if fom.n_steps < 1:
        raise ConfigError("zero-length run requested (n_steps must be >= 1)")
    if int(cfg["nwin"]) > fom.n_steps:
        raise ConfigError("more time windows than time steps")
    return cfg


def config_hash(cfg):
    keep = {k: v for k, v in cfg.items() if k != "workdir"}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


def _mu_tag(mu):
    return f"mu_{float(mu):.6g}"


def _problem(cfg, mu):
    return make_problem({**cfg, "mu": mu})


# records and Pareto fronts ----------------------------------------------------

@dataclass
class RunRecord:
    problem: str
    method: str
    target_E_r: float
    r_y: int
    n_points: int
    sample_mesh_elements: int
    relative_error: dict
    combined_error: float
    relative_online_time: float
    mode: str
    solver: str
    config_hash: str
    mu: float = 0.0
    norm: str = "euclidean"
    n_windows: int = 1
    tag: str = ""
    online_time: float = 0.0
    fom_time: float = 0.0
    timing_samples: list = field(default_factory=list)
    fom_timing_samples: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_points < 0:
            raise ValueError("n_points must be nonnegative")
        if not self.combined_error >= 0:
            raise ValueError("relative error must be a nonnegative number")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def without_timing(self):
        d = asdict(self)
        for k in TIMING_FIELDS:
            d.pop(k)
        return d


@dataclass
class ParetoSet:
    records: list
    front: list

    def front_records(self):
        return [self.records[i] for i in self.front]


def _objectives(rec):
    if isinstance(rec, RunRecord):
        return float(rec.relative_online_time), float(rec.combined_error)
    a, b = rec
    return float(a), float(b)


def pareto_extract(records):
    """Non-dominated subset under (time, error) minimization.

    A point is removed only if another point is no worse in both objectives
    and strictly better in at least one, so exact duplicates both survive.
    The front is returned in increasing-time order.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to rank")
    obj = [_objectives(r) for r in records]
    order = sorted(range(len(obj)), key=lambda i: (obj[i][0], obj[i][1], i))
    front, best = [], np.inf
    k = 0
    while k < len(order):
        a = obj[order[k]][0]
        group = []
        while k < len(order) and obj[order[k]][0] == a:
            group.append(order[k])
            k += 1
        b_min = obj[group[0]][1]
        if b_min < best:
            front.extend(i for i in group if obj[i][1] == b_min)
            best = b_min
    return ParetoSet(records, front)


# phase: offline ----------------------------------------------------------------

def _offline_dir(cfg, mu):
    return Path(cfg["workdir"]) / "offline" / _mu_tag(mu)


def _write_matrix(path, A):
    np.savetxt(path, np.atleast_2d(A), delimiter=",", fmt="%.17g")


def _read_matrix(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_offline(cfg):
    """Run the FOM for every training parameter and the test parameter."""
    work = Path(cfg["workdir"])
    mus = list(dict.fromkeys([float(m) for m in cfg["train_mu"]] + [float(cfg["test_mu"])]))
    runs = []
    for mu in mus:
        fom = _problem(cfg, mu)
        traj = solve_fom(fom)
        out = _offline_dir(cfg, mu)
        out.mkdir(parents=True, exist_ok=True)
        _write_matrix(out / "states.csv", traj.states)
        _write_matrix(out / "forces.csv", traj.forces)
        _write_matrix(out / "times.csv", traj.times[None, :])
        runs.append({"mu": mu, "dir": str(out.relative_to(work)), "state_dim": fom.state_dim,
                     "snapshots": int(traj.states.shape[1]), "fom_wall_time": traj.wall_time,
                     "solver": fom.solver})
        log.info("offline %s mu=%g: %d snapshots", fom.name, mu, traj.states.shape[1])
    manifest = {"problem": cfg["problem"], "config_hash": config_hash(cfg), "runs": runs}
    (work / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def _load_manifest(cfg):
    path = Path(cfg["workdir"]) / "manifest.json"
    if not path.exists():
        return cmd_offline(cfg)
    manifest = json.loads(path.read_text())
    if manifest.get("problem") != cfg["problem"]:
        raise ConfigError("manifest belongs to a different problem")
    return manifest


def _load_run(cfg, manifest, mu):
    for run in manifest["runs"]:
        if np.isclose(run["mu"], float(mu)):
            d = Path(cfg["workdir"]) / run["dir"]
            return {"states": _read_matrix(d / "states.csv"), "forces": _read_matrix(d / "forces.csv"),
                    "times": _read_matrix(d / "times.csv")[0]}
    raise ConfigError(f"no offline run for mu={mu}; rerun the offline phase")


# phase: merge ------------------------------------------------------------------

def window_edges(n_steps, nwin):
    """Step indices bounding each window (adjacent windows share the boundary snapshot)."""
    return np.round(np.linspace(0, n_steps, int(nwin) + 1)).astype(int)


def _field_snapshots(runs, layout_entry, mode, cols):
    _, off, length = layout_entry
    blocks = [r["states"][off:off + length, cols] for r in runs]
    S = np.hstack(blocks)
    if mode == "zero":
        offset = np.zeros(length)
    elif mode == "first_snapshot":
        offset = blocks[0][:, 0].copy()
    elif mode == "mean":
        offset = S.mean(axis=1)
    else:
        raise ConfigError(f"unknown offset mode {mode!r}")
    return S - offset[:, None], offset


def build_window_bases(cfg, fom, runs, er, cols):
    """State basis, force basis and energy reports for one window."""
    offsets = FIELD_OFFSETS[cfg["problem"]]
    named, energy = {}, {}
    for entry in fom.field_layout:
        name = entry[0]
        data, offset = _field_snapshots(runs, entry, offsets[name], cols)
        U, sigma = compute_basis(data)
        r = truncate_for_energy(sigma, er)
        named[name] = ReducedBasis(U[:, :r], sigma[:r], offset)
        rep = energy_residual(sigma, r)
        energy[name] = {"E_tot": rep.E_tot, "E_c": rep.E_c, "E_r": rep.E_r, "r": rep.r}
    if len(named) == 1:
        basis = next(iter(named.values()))
        if cfg["problem"] == "diffusion" and cfg["augment_constant"]:
            basis = augment_basis(basis, np.ones(fom.state_dim))
    else:
        basis = block_basis(named, fom.field_layout)
    F = np.hstack([r["forces"][:, cols] for r in runs])
    U, sigma = compute_basis(F)
    r_f = truncate_for_energy(sigma, er)
    xi = ForceBasis(U[:, :r_f], sigma[:r_f])
    rep = energy_residual(sigma, r_f)
    energy["force"] = {"E_tot": rep.E_tot, "E_c": rep.E_c, "E_r": rep.E_r, "r": rep.r}
    return basis, xi, energy


def _merge_dir(cfg, er, nwin):
    return Path(cfg["workdir"]) / "merge" / f"er_{float(er):g}_w{int(nwin)}"


def cmd_merge(cfg):
    """POD of the training snapshots for every E_r target and window."""
    manifest = _load_manifest(cfg)
    runs = [_load_run(cfg, manifest, mu) for mu in cfg["train_mu"]]
    dims = {r["states"].shape for r in runs}
    if len(dims) != 1:
        raise ConfigError(f"training runs disagree in shape: {sorted(dims)}")
    fom = _problem(cfg, cfg["test_mu"])
    if runs[0]["states"].shape[0] != fom.state_dim:
        raise ConfigError("stored snapshots do not match the configured problem size")
    nwin = int(cfg["nwin"])
    edges = window_edges(runs[0]["states"].shape[1] - 1, nwin)
    written = []
    for er in cfg["er"]:
        for w in range(nwin):
            cols = slice(edges[w], edges[w + 1] + 1)
            basis, xi, energy = build_window_bases(cfg, fom, runs, float(er), cols)
            out = _merge_dir(cfg, er, nwin) / f"window_{w}"
            out.mkdir(parents=True, exist_ok=True)
            _write_matrix(out / "state_basis.csv", basis.basis)
            _write_matrix(out / "state_sigma.csv", basis.singular_values[None, :])
            _write_matrix(out / "state_offset.csv", basis.offset[None, :])
            _write_matrix(out / "force_basis.csv", xi.basis)
            _write_matrix(out / "force_sigma.csv", xi.singular_values[None, :])
            meta = {"energy": energy, "r_y": basis.retained, "r_f": xi.r_f,
                    "blocks": [list(b) for b in basis.blocks],
                    "columns": [int(edges[w]), int(edges[w + 1])]}
            (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
            written.append(out)
    return written


def _load_window(cfg, er, nwin, w):
    d = _merge_dir(cfg, er, nwin) / f"window_{w}"
    if not (d / "meta.json").exists():
        cmd_merge({**cfg, "er": [er]})
    meta = json.loads((d / "meta.json").read_text())
    basis = ReducedBasis(_read_matrix(d / "state_basis.csv"), _read_matrix(d / "state_sigma.csv")[0],
                         _read_matrix(d / "state_offset.csv")[0], tuple(tuple(b) for b in meta["blocks"]))
    xi = ForceBasis(_read_matrix(d / "force_basis.csv"), _read_matrix(d / "force_sigma.csv")[0])
    return basis, xi, meta


# phase: online -----------------------------------------------------------------

_FOM_TIMING_CACHE = {}


def _fom_loop_time(cfg, fom, repeats):
    key = (cfg["problem"], config_hash({**cfg, "mu": cfg["test_mu"]}))
    if key not in _FOM_TIMING_CACHE:
        _FOM_TIMING_CACHE[key] = [solve_fom(fom).wall_time for _ in range(repeats)]
    return _FOM_TIMING_CACHE[key]


def _run_tag(method, er, n_f, cfg):
    if method == "eqp":
        budget = f"tol{float(cfg['eqp_tol']):g}" + (f"_max{cfg['maxnnls']}" if cfg["maxnnls"] else "")
    elif method == "none":
        budget = "full"
    else:
        budget = f"nf{n_f}"
    return f"{method}_er{float(er):g}_{budget}_w{int(cfg['nwin'])}"


def build_window_model(cfg, fom, method, basis, xi, n_f, runs, cols, art_prefix):
    """Reduced model for one window plus its (n_points, sample mesh) summary."""
    model = project_operators(fom, basis)
    n_el = fom.element_dofs.shape[0]
    if method == "none":
        return model, fom.n_points, n_el
    if method in METHODS:
        n_f = xi.r_f if n_f is None else int(n_f)
        if n_f < xi.r_f:
            raise ConfigError(f"{method}: n_f={n_f} is below r_f={xi.r_f}")
        if n_f > fom.state_dim:
            raise ConfigError(f"{method}: n_f={n_f} exceeds the state dimension {fom.state_dim}")
        z = sample(method, xi, n_f)
        Path(f"{art_prefix}_samples.json").write_text(z.to_json())
        mesh = sample_mesh_from_indices(fom, z)
        return model.with_interpolation(xi, z), z.n_f, int(mesh.size)
    data = np.hstack([r["states"][:, cols] for r in runs])
    times = np.concatenate([r["times"][cols] for r in runs])
    snaps = SnapshotMatrix(data - basis.offset[:, None], basis.offset, times)
    rule, _, cond = build_rule(fom, basis, snaps, tol=float(cfg["eqp_tol"]), max_points=cfg["maxnnls"])
    Path(f"{art_prefix}_rule.json").write_text(rule.to_json())
    mesh = sample_mesh_from_rule(rule, fom.quadrature)
    return model.with_eqp(rule), rule.k_star, int(mesh.size)


def run_online(cfg, method, er, n_f=None):
    """One online run: build the hyper-reduced model, integrate, compare, record."""
    if method not in ALL_METHODS:
        raise ConfigError(f"unknown method {method!r}")
    manifest = _load_manifest(cfg)
    train = [_load_run(cfg, manifest, mu) for mu in cfg["train_mu"]]
    ref = _load_run(cfg, manifest, cfg["test_mu"])
    fom = _problem(cfg, cfg["test_mu"])
    nwin = int(cfg["nwin"])
    edges = window_edges(fom.n_steps, nwin)
    out = Path(cfg["workdir"]) / "online"
    out.mkdir(parents=True, exist_ok=True)
    tag = _run_tag(method, er, n_f, cfg)
    models, points, meshes, r_ys, r_fs = [], [], [], [], []
    for w in range(nwin):
        basis, xi, meta = _load_window(cfg, er, nwin, w)
        cols = slice(edges[w], edges[w + 1] + 1)
        m, npts, mesh = build_window_model(cfg, fom, method, basis, xi, n_f, train, cols,
                                           out / f"{tag}_w{w}")
        models.append(m)
        points.append(int(npts))
        meshes.append(mesh)
        r_ys.append(basis.retained)
        r_fs.append(xi.r_f)
    schedule = TimeWindowSchedule(edges * fom.dt, models)
    repeats = max(1, int(cfg["timing_repeats"]))
    recs = [solve_windowed(schedule, fom.solver, fom.dt) for _ in range(repeats)]
    rec = recs[0]
    samples = [r.wall_time for r in recs]
    fom_samples = _fom_loop_time(cfg, fom, repeats)
    online, fom_time = statistics.median(samples), statistics.median(fom_samples)
    err = relative_l2_error(rec.lifted_final, ref["states"][:, -1], cfg["norm"],
                            fom.field_layout, fom.mass)
    _write_matrix(out / f"{tag}_final.csv", rec.lifted_final[None, :])
    reproductive = any(np.isclose(float(cfg["test_mu"]), float(m)) for m in cfg["train_mu"])
    record = RunRecord(
        problem=cfg["problem"], method=method, target_E_r=float(er), r_y=max(r_ys),
        n_points=max(points), sample_mesh_elements=max(meshes),
        relative_error=err["fields"], combined_error=err["combined"],
        relative_online_time=online / fom_time, mode="reproductive" if reproductive else "predictive",
        solver=fom.solver, config_hash=config_hash(cfg), mu=float(cfg["test_mu"]), norm=cfg["norm"],
        n_windows=nwin, tag=tag, online_time=online, fom_time=fom_time,
        timing_samples=samples, fom_timing_samples=list(fom_samples),
        extras={"r_y_per_window": r_ys, "r_f_per_window": r_fs, "n_points_per_window": points,
                "sample_mesh_per_window": meshes, "window_transfer": "lift-then-project",
                "newton_iters_total": rec.newton_iters_total},
    )
    (out / f"{tag}.json").write_text(record.to_json())
    return record


def online_plan(cfg, xi_r_f):
    """(method, n_f) pairs to run for one E_r given the force-basis size."""
    plan = []
    for method in cfg["methods"]:
        if method in METHODS:
            if cfg["n_f"] is not None:
                plan.append((method, int(cfg["n_f"])))
            else:
                budgets = sorted({int(np.ceil(f * xi_r_f)) for f in cfg["nsr_factors"]})
                plan.extend((method, n) for n in budgets)
        else:
            plan.append((method, None))
    return plan


def cmd_online(cfg):
    """Run every configured (E_r, method, budget) combination."""
    records = []
    for er in cfg["er"]:
        _, xi, _ = _load_window(cfg, er, int(cfg["nwin"]), 0)
        for method, n_f in online_plan(cfg, xi.r_f):
            records.append(run_online(cfg, method, er, n_f))
    return records


# phase: report -----------------------------------------------------------------

REPORT_COLUMNS = ("tag", "problem", "method", "mode", "solver", "norm", "target_E_r", "r_y", "n_points",
                  "sample_mesh_elements", "combined_error", "relative_online_time", "online_time",
                  "fom_time", "n_windows", "mu", "config_hash")


def load_records(cfg):
    d = Path(cfg["workdir"]) / "online"
    paths = sorted(d.glob("*.json")) if d.exists() else []
    return [RunRecord.from_json(p.read_text()) for p in paths
            if not p.name.endswith(("_samples.json", "_rule.json"))]


def _write_front(path, pset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["relative_online_time", "combined_error", "tag"])
        for r in pset.front_records():
            w.writerow([repr(r.relative_online_time), repr(r.combined_error), r.tag])


def cmd_report(cfg, records=None):
    """Tidy CSV of all records plus per-method and overall Pareto polylines."""
    records = load_records(cfg) if records is None else list(records)
    if not records:
        raise ConfigError("no run records found; run the online phase first")
    out = Path(cfg["workdir"]) / "report"
    out.mkdir(parents=True, exist_ok=True)
    fields = sorted({f for r in records for f in r.relative_error})
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(REPORT_COLUMNS) + [f"error_{f}" for f in fields])
        for r in records:
            d = asdict(r)
            w.writerow([d[c] for c in REPORT_COLUMNS] + [r.relative_error.get(f, "") for f in fields])
    written = {"report": out / "report.csv"}
    for method in cfg["methods"]:
        subset = [r for r in records if r.method == method]
        if not subset:
            log.warning("no records for method %s; front file omitted", method)
            continue
        written[method] = out / f"pareto_{method}.csv"
        _write_front(written[method], pareto_extract(subset))
    written["overall"] = out / "pareto_overall.csv"
    _write_front(written["overall"], pareto_extract(records))
    return written


def cmd_pareto(cfg):
    records = load_records(cfg)
    if not records:
        raise ConfigError("no run records found; run the online phase first")
    return pareto_extract(records)


def load_samples(path):
    return SampleIndexSet.from_json(Path(path).read_text())


def load_rule(path):
    return SparseQuadratureRule.from_json(Path(path).read_text())
