"""Config-driven scenario execution: TOML in, snapshots + CSV + manifest out.

Every run directory is reproducible from its manifest: the config hash and
seed determine the outputs byte for byte (timestamps live only in the
manifest).
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from . import fock as fk
from . import scalar as sc
from . import spinor as sp
from .errors import ConfigInvalid, EmreduceError, Mismatch, MissingQuantity
from .grid import GridField, Lattice, read_fld, write_fld

ENGINES = ("scalar", "spinor", "fock")


def _require(cond, msg, **payload):
    if not cond:
        raise ConfigInvalid(msg, **payload)


def load_config(path) -> dict:
    path = Path(path)
    _require(path.is_file(), f"config file not found: {path}")
    try:
        cfg = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as err:
        raise ConfigInvalid(f"TOML parse error: {err}")
    cfg["_raw_bytes"] = path.read_bytes()
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    scn = cfg.get("scenario")
    _require(isinstance(scn, dict), "missing [scenario] section")
    engine = scn.get("engine")
    _require(engine in ENGINES, f"scenario.engine must be one of {ENGINES}, got {engine!r}")
    _require(isinstance(scn.get("seed", 0), int), "scenario.seed must be an integer")
    present = [e for e in ENGINES if e in cfg]
    _require(present == [engine],
             f"exactly the [{engine}] engine section must be present, found {present}")

    if engine in ("scalar", "spinor"):
        lat = cfg.get("lattice")
        _require(isinstance(lat, dict), "missing [lattice] section")
        n = lat.get("n")
        _require(isinstance(n, list) and len(n) == 3 and all(isinstance(v, int) for v in n),
                 "lattice.n must be a list of 3 integers")
        _require(all(v >= 4 for v in n), "lattice.n entries must be >= 4")
        length = lat.get("length", [2 * np.pi] * 3)
        _require(isinstance(length, list) and len(length) == 3
                 and all(float(v) > 0 for v in length),
                 "lattice.length must be 3 positive reals")
        it = cfg.get("integration")
        _require(isinstance(it, dict), "missing [integration] section")
        _require(float(it.get("dt", 0)) > 0, "integration.dt must be positive")
        _require(int(it.get("steps", -1)) >= 0, "integration.steps must be >= 0")
        _require(int(it.get("cadence", 1)) >= 1, "integration.cadence must be >= 1")

    sec = cfg.get(engine, {})
    for guard in ("eps_b0", "eps_phi", "eps_psi", "eps_f", "tail_tol"):
        if guard in sec:
            _require(float(sec[guard]) > 0, f"{engine}.{guard} must be positive")
    if engine == "scalar":
        _require(float(sec.get("e", 1.0)) != 0.0, "scalar.e must be nonzero")
        _require(float(sec.get("m", 1.0)) >= 0.0, "scalar.m must be >= 0")
        _require(sec.get("variant", "coupled") in ("coupled", "field_only"),
                 "scalar.variant must be 'coupled' or 'field_only'")
    if engine == "spinor":
        _require(sec.get("variant", "coupled") in ("coupled", "field_only"),
                 "spinor.variant must be 'coupled' or 'field_only'")
    if engine == "fock":
        _require(isinstance(sec.get("modes"), int) and sec["modes"] >= 1,
                 "fock.modes must be a positive integer")
        _require(isinstance(sec.get("cutoff"), int) and sec["cutoff"] >= 1,
                 "fock.cutoff must be a positive integer")
        f = sec.get("f")
        _require(isinstance(f, list) and len(f) == sec["modes"],
                 "fock.f must list the polynomial terms for every mode")
        xi0 = sec.get("xi0")
        _require(isinstance(xi0, list) and len(xi0) == sec["modes"],
                 "fock.xi0 must give one [re, im] pair per mode")
        _require(float(sec.get("dt", 0)) > 0, "fock.dt must be positive")
        _require(int(sec.get("steps", -1)) >= 0, "fock.steps must be >= 0")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(cfg["_raw_bytes"]).hexdigest()


def _lattice_from(cfg) -> Lattice:
    n = cfg["lattice"]["n"]
    length = cfg["lattice"].get("length", [2 * np.pi] * 3)
    return Lattice(n[0], n[1], n[2],
                   length[0] / n[0], length[1] / n[1], length[2] / n[2])


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_observer_csv(path, rows):
    """Observer table: columns t, name, value."""
    with open(path, "w") as fh:
        fh.write("t,name,value\n")
        for t, name, value in rows:
            fh.write(f"{_fmt(t)},{name},{_fmt(value)}\n")


# ---------------------------------------------------------------------------
# engine runners
# ---------------------------------------------------------------------------

def _b_bundle_fields(lat, b, b_dot, prefix="B"):
    labels = [f"{prefix}{mu}" for mu in range(4)] + [f"{prefix}dot{mu}" for mu in range(4)]
    arrays = list(b) + list(b_dot)
    return [GridField(lat, a, label) for a, label in zip(arrays, labels)]


def _run_scalar(cfg, outdir: Path):
    lat = _lattice_from(cfg)
    sec = cfg["scalar"]
    it = cfg["integration"]
    spec = sc.ScalarDataSpec(
        lattice=lat,
        e=float(sec.get("e", 1.0)),
        m=float(sec.get("m", 1.0)),
        seed=int(cfg["scenario"].get("seed", 0)),
        phi_offset=float(sec.get("phi_offset", 1.0)),
        b0_offset=float(sec.get("b0_offset", 1.0)),
        amp_phi=float(sec.get("amp_phi", 0.01)),
        amp_phi_dot=float(sec.get("amp_phi_dot", 0.01)),
        amp_b=float(sec.get("amp_b", 0.01)),
        amp_b_dot=float(sec.get("amp_b_dot", 0.01)),
        max_mode=int(sec.get("max_mode", 1)),
        eps_b0=float(sec.get("eps_b0", 1e-6)),
        eps_phi=float(sec.get("eps_phi", 1e-6)),
    )
    coupled, field_only, params = sc.make_scalar_initial_data(spec)
    dt, steps, cadence = float(it["dt"]), int(it["steps"]), int(it.get("cadence", 1))
    variant = sec.get("variant", "coupled")
    if variant == "coupled":
        rec, samples = sc.run_coupled(coupled, params, dt, steps, cadence)
    else:
        rec, samples = sc.run_field_only(field_only, params, dt, steps, cadence)

    files, rows = [], []
    for s in samples:
        name = f"snap_{s['step']:06d}.fld"
        write_fld(outdir / name, _b_bundle_fields(lat, s["b"], s["b_dot"]))
        files.append(name)
        for key in s:
            if key in ("step", "t", "b", "b_dot", "phi", "phi_dot"):
                continue
            rows.append((s["t"], key, s[key]))
    summary = {"variant": variant, "rho_bg": params.rho_bg,
               "samples": len(samples), "aborted": rec.aborted}
    return files, rows, summary, rec


def _run_spinor(cfg, outdir: Path):
    lat = _lattice_from(cfg)
    sec = cfg["spinor"]
    it = cfg["integration"]
    spec = sp.SpinorDataSpec(
        lattice=lat,
        e=float(sec.get("e", 1.0)),
        seed=int(cfg["scenario"].get("seed", 0)),
        psi1_offset=float(sec.get("psi1_offset", 1.0)),
        amp_psi=float(sec.get("amp_psi", 0.05)),
        amp_a=float(sec.get("amp_a", 0.02)),
        e_bg=float(sec.get("e_bg", 0.5)),
        max_mode=int(sec.get("max_mode", 1)),
        a0_offset=float(sec.get("a0_offset", 0.0)),
        eps_psi=float(sec.get("eps_psi", 1e-6)),
        eps_f=float(sec.get("eps_f", 1e-6)),
    )
    coupled, field_only, params = sp.make_spinor_initial_data(spec)
    dt, steps, cadence = float(it["dt"]), int(it["steps"]), int(it.get("cadence", 1))
    variant = sec.get("variant", "coupled")
    if variant == "coupled":
        rec, samples = sp.run_spinor_coupled(coupled, params, dt, steps, cadence)
    else:
        rec, samples = sp.run_spinor_field_only(field_only, params, dt, steps, cadence)

    files, rows = [], []
    for s in samples:
        name = f"snap_{s['step']:06d}.fld"
        write_fld(outdir / name, _b_bundle_fields(lat, s["b"], s["b_dot"]))
        files.append(name)
        for key in s:
            if key in ("step", "t") or isinstance(s[key], np.ndarray):
                continue
            rows.append((s["t"], key, s[key]))
    summary = {"variant": variant, "rho_bg": params.rho_bg,
               "samples": len(samples), "aborted": rec.aborted}
    return files, rows, summary, rec


def _run_fock(cfg, outdir: Path):
    sec = cfg["fock"]
    k = sec["modes"]
    terms = tuple(
        tuple((complex(c[0][0], c[0][1]), tuple(int(e) for e in c[1])) for c in comp)
        for comp in sec["f"]
    )
    ms = fk.ModeSystem(k=k, terms=terms)
    fs = fk.FockSpace(k=k, cutoff=sec["cutoff"])
    xi0 = np.array([complex(v[0], v[1]) for v in sec["xi0"]])
    tail_tol = float(sec.get("tail_tol", 1e-12))
    M = fk.carleman_hamiltonian(ms, fs)
    st = fk.coherent_state(xi0, fs, tail_tol)
    traj = fk.evolve_fock(
        st, M, float(sec["dt"]), int(sec["steps"]), cadence=int(sec.get("cadence", 1))
    )
    # wide readout table plus t,name,value diagnostics
    rpath = outdir / "readout.csv"
    with open(rpath, "w") as fh:
        head = ["t"] + [f"xi{j+1}_{part}" for j in range(k) for part in ("re", "im")]
        fh.write(",".join(head + ["norm", "leak", "eigen_error"]) + "\n")
        for i, t in enumerate(traj.times):
            ro = traj.readouts[i]
            vals = [_fmt(t)]
            for j in range(k):
                if ro is None:
                    vals += ["nan", "nan"]
                else:
                    vals += [_fmt(ro[j].real), _fmt(ro[j].imag)]
            vals += [_fmt(traj.norms[i]), _fmt(traj.leaks[i]),
                     _fmt(traj.eigen_errors[i])]
            fh.write(",".join(vals) + "\n")
    rows = []
    for i, t in enumerate(traj.times):
        rows.append((t, "norm", traj.norms[i]))
        rows.append((t, "leak", traj.leaks[i]))
        rows.append((t, "eigen_error", traj.eigen_errors[i]))
    summary = {
        "dim": fs.dim, "dropped_weight": M.dropped_weight,
        "final_norm": traj.norms[-1], "samples": len(traj.times), "aborted": None,
    }
    return ["readout.csv"], rows, summary, None


def run_scenario(config_path, outdir) -> dict:
    """Execute a scenario; returns the manifest dict (also written to disk).

    Raises ConfigInvalid for bad configs; engine guard violations are caught
    and recorded in the manifest with a nonzero suggested exit code.
    """
    cfg = load_config(config_path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    engine = cfg["scenario"]["engine"]
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.time()
    error = None
    files, rows, summary = [], [], {}
    try:
        runner = {"scalar": _run_scalar, "spinor": _run_spinor, "fock": _run_fock}[engine]
        files, rows, summary, rec = runner(cfg, outdir)
        if summary.get("aborted"):
            error = summary["aborted"]
    except EmreduceError as err:
        error = err.to_dict()
    if rows:
        write_observer_csv(outdir / "diagnostics.csv", rows)
        files = files + ["diagnostics.csv"]
    manifest = {
        "engine": engine,
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "seed": cfg["scenario"].get("seed", 0),
        "started": started,
        "wall_seconds": round(time.time() - t0, 3),
        "files": files,
        "summary": summary,
        "error": error,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if error is not None:
        (outdir / "error.json").write_text(json.dumps(error, indent=2, sort_keys=True))
    return manifest


# ---------------------------------------------------------------------------
# run comparison
# ---------------------------------------------------------------------------

def compare_runs(dir_a, dir_b, quantity: str, threshold: float) -> dict:
    """Per-snapshot rel_diff of a named quantity between two run directories."""
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    man_a = json.loads((dir_a / "manifest.json").read_text())
    man_b = json.loads((dir_b / "manifest.json").read_text())
    snaps_a = sorted(f for f in man_a["files"] if f.endswith(".fld"))
    snaps_b = sorted(f for f in man_b["files"] if f.endswith(".fld"))
    if snaps_a != snaps_b:
        raise Mismatch(
            "run directories emit different snapshot series",
            a=snaps_a[:3], b=snaps_b[:3],
        )
    if not snaps_a:
        raise MissingQuantity("no snapshots to compare")
    table = []
    for name in snaps_a:
        fa = read_fld(dir_a / name)
        fb = read_fld(dir_b / name)
        if fa[0].lattice != fb[0].lattice:
            raise Mismatch("snapshot lattices differ", snapshot=name)
        la = {f.label: f for f in fa}
        lb = {f.label: f for f in fb}
        keys = [k for k in la if k == quantity or k.startswith(quantity)]
        if not keys:
            raise MissingQuantity(
                f"quantity {quantity!r} not present", available=sorted(la),
            )
        num = 0.0
        den = 0.0
        vol = fa[0].lattice.cell_volume
        for k in keys:
            if k not in lb:
                raise MissingQuantity(f"quantity {k!r} missing from second run")
            num += vol * float(np.sum(np.abs(la[k].values - lb[k].values) ** 2))
            den += vol * float(np.sum(np.abs(lb[k].values) ** 2))
        table.append({"snapshot": name, "rel_diff": float(np.sqrt(num / max(den, 1e-300)))})
    worst = max(row["rel_diff"] for row in table)
    return {
        "quantity": quantity,
        "threshold": threshold,
        "max_rel_diff": worst,
        "below_threshold": bool(worst <= threshold),
        "table": table,
    }
