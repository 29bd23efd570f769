"""Configuration-driven pipelines behind the command line."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .bounds import RateFunction, bound_curve
from .conditions import verify_conditions
from .errors import ConfigurationError, MissingArtifactError, RandOpenError
from .limits import (
    dist_kolmogorov,
    dist_wasserstein,
    fcb_gap_estimate,
    loglog_slope,
    path_cuts,
    path_values_from_prefix,
    simulate_sums,
    variance_profile,
)
from .measures import ConditionalMeasure, RandomDensity
from .observables import parse_observable
from .spectral import conformal_measures, q_decay, spectral_triple
from .system import OpenSystem, preset, surviving_cylinders
from .transfer import GridFunction, OperatorCache

DEFAULTS = {
    "preset": "quadrupling-random-hole",
    "system": None,
    "observable": "indicator:1/2:1",
    "zeta": "eta",
    "N": [16, 64, 256],
    "M": 200_000,
    "grid_k": 1024,
    "seed": 0,
    "fibre": 0,
    "threads": 1,
    "mode": "exact",
    "out": "randopen-out",
    "n_max": 8,
    "gaps": [1, 2, 3, 4, 5, 6, 7, 8],
    "fcb_N": 12,
    "path_t": [0.25, 0.5, 0.75],
    "timings": False,
    "bounds": {"theta": 0.5, "C": 1.0, "C_star": 1.0, "C0": 1.0, "C_theta": 1.0, "L": 1.0, "Sigma": None,
               "N": [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536]},
    "conditions": {"n_max": 4, "k": 1024, "n_fibres": 1000},
}

CLT_COLUMNS = ["N", "M", "sigma", "d_K", "d_K_se_floor", "d_W"]
FCB_COLUMNS = ["gap", "lhs", "fit_r", "residual"]
BOUND_COLUMNS = ["N", "wasserstein_bound", "kolmogorov_bound", "functional_bound", "K_used"]


@dataclass
class ExperimentConfig:
    values: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def hash(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def resolve(cls, path: str | None = None, overrides: dict | None = None) -> "ExperimentConfig":
        vals = json.loads(json.dumps(DEFAULTS))
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigurationError(f"config file {path} does not exist")
            try:
                user = json.loads(p.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
            if not isinstance(user, dict):
                raise ConfigurationError("config must be a JSON object")
            unknown = set(user) - set(DEFAULTS)
            if unknown:
                raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
            for k, v in user.items():
                if isinstance(vals.get(k), dict) and isinstance(v, dict):
                    vals[k].update(v)
                else:
                    vals[k] = v
        for k, v in (overrides or {}).items():
            if v is not None:
                vals[k] = v
        cfg = cls(vals, path)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        Ns = v["N"]
        if not isinstance(Ns, list) or not Ns or not all(isinstance(n, int) and n >= 1 for n in Ns):
            raise ConfigurationError("N must be a nonempty list of positive integers")
        if Ns != sorted(Ns) or len(set(Ns)) != len(Ns):
            raise ConfigurationError(f"N list must be strictly increasing, got {Ns}")
        if not isinstance(v["seed"], int):
            raise ConfigurationError("seed must be an explicit integer")
        if not isinstance(v["M"], int) or v["M"] < 2:
            raise ConfigurationError("M must be an integer >= 2")
        if v["mode"] not in ("exact", "mc"):
            raise ConfigurationError("mode must be 'exact' or 'mc'")
        if not isinstance(v["threads"], int) or v["threads"] < 1:
            raise ConfigurationError("threads must be a positive integer")
        if not isinstance(v["grid_k"], int) or v["grid_k"] < 1:
            raise ConfigurationError("grid_k must be a positive integer")
        if v["system"] is not None and not Path(v["system"]).is_file():
            raise ConfigurationError(f"system file {v['system']} does not exist")

    def system(self) -> OpenSystem:
        if self.values["system"] is not None:
            sysm = OpenSystem.from_json(self.values["system"])
            return sysm.with_seed(self.values["seed"])
        return preset(self.values["preset"], self.values["seed"])

    def measure(self, system: OpenSystem, N: int) -> ConditionalMeasure:
        omega = system.environment.realize(self.values["fibre"])
        z = self.values["zeta"]
        if z == "eta":
            return ConditionalMeasure(system, omega, N)
        if isinstance(z, dict) and "psi" in z:
            g = GridFunction(np.asarray(z["psi"], dtype=float))
            return ConditionalMeasure(system, omega, N, RandomDensity.constant_grid(g, system.n_symbols))
        raise ConfigurationError("zeta must be 'eta' or {'psi': [cell values]}")


class Run:
    """Tracks outputs of one command so partial results can be removed on failure."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["out"])
        self.files: list[Path] = []
        self.stage = "setup"
        self.runtimes: dict = {}
        self._created_dir = False

    def path(self, name: str) -> Path:
        if not self.out.exists():
            self.out.mkdir(parents=True)
            self._created_dir = True
        p = self.out / name
        self.files.append(p)
        return p

    def write_csv(self, name: str, header: list, rows: list) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
        return p

    def manifest(self) -> Path:
        m = {
            "command": self.command,
            "config_hash": self.cfg.hash,
            "config": self.cfg.values,
            "config_source": self.cfg.source,
            "seeds": {"seed": self.cfg["seed"], "fibre": self.cfg["fibre"]},
            "versions": {"randopen": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version(), "kernels": kernels.BACKEND},
            "runtimes_ms": self.runtimes,
            "outputs": [f.name for f in self.files],
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        p = self.out / f"manifest_{self.command}.json"
        p.write_text(json.dumps(m, indent=2, sort_keys=True, default=_json_default) + "\n")
        self.files.append(p)
        return p

    def cleanup(self) -> None:
        for f in self.files:
            try:
                f.unlink()
            except FileNotFoundError:
                pass
        if self._created_dir:
            try:
                self.out.rmdir()
            except OSError:
                pass


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    system = cfg.system()
    rows = []
    for N in cfg["N"]:
        run.stage = f"simulate N={N}"
        t0 = time.perf_counter()
        m = cfg.measure(system, N)
        s = m.sample(cfg["M"], cfg["seed"], stream=N)
        p = run.path(f"samples_N{N}.csv")
        s.to_csv(p)
        rows.append([N, cfg["M"], s.mode, float(m.conditional_mass()), int(s.draws)])
        run.runtimes[f"N={N}"] = 1000 * (time.perf_counter() - t0)
    run.write_csv("simulate.csv", ["N", "M", "mode", "conditional_mass", "draws"], rows)


def cmd_spectral(run: Run) -> None:
    cfg = run.cfg
    system = cfg.system()
    k = cfg["grid_k"]
    omega = system.environment.realize(cfg["fibre"])
    n = cfg["n_max"]
    run.stage = "spectral triple"
    cache = OperatorCache(system, k)
    tr = spectral_triple(system, omega, n, k, cache=cache)
    run.stage = "q-decay"
    if system.exact_path:
        depth = max(2, int(round(math.log(k) / math.log(max(system.max_branches, 2)))))
        cyl = surviving_cylinders(system, omega, depth)
        u = GridFunction.indicator(k, cyl.intervals[0][0], cyl.intervals[0][1])
        # the grid resolves the cylinder's images for depth - 2 steps only
        n_q = max(2, min(n, depth - 2))
    else:
        u = GridFunction.indicator(k, 0, "1/2")
        n_q = n
    fit = q_decay(system, omega, u, n_q, k, triple=tr)
    run.stage = "conditions"
    cc = cfg["conditions"]
    rep = verify_conditions(system, cc["n_max"], cc["k"], n_fibres=cc["n_fibres"])
    report = {
        "lambda": tr.lambdas.tolist(),
        "phi_minmax": [float(tr.phi.values.min()), float(tr.phi.values.max())],
        "nu_checksums": [float(nu.sum()) for nu in tr.nus],
        "nu_phi": tr.normalisation,
        "D": fit.D,
        "kappa": fit.kappa,
        "q_table": fit.values.tolist(),
        "q_depth_steps": int(n_q),
        "q_annihilated": fit.annihilated,
        "conditions": rep.to_dict()["clauses"],
        "k": k,
    }
    run.write_json("spectral.json", report)


def cmd_verify(run: Run) -> None:
    cfg = run.cfg
    run.stage = "verify-conditions"
    cc = cfg["conditions"]
    rep = verify_conditions(cfg.system(), cc["n_max"], cc["k"], n_fibres=cc["n_fibres"])
    run.write_json("conditions.json", rep.to_dict())


def _profile_for(cfg: ExperimentConfig, f, measure, sim):
    if cfg["mode"] == "mc":
        return sim.profile
    if measure.exact_available:
        return variance_profile(f, measure, "exact")
    if all(p.is_grid_constant(cfg["grid_k"]) for p in f.pieces):
        return variance_profile(f, measure, "transfer")
    return sim.profile


def cmd_clt(run: Run) -> None:
    cfg = run.cfg
    system = cfg.system()
    f = parse_observable(cfg["observable"], system.n_symbols)
    omega = system.environment.realize(cfg["fibre"])
    rows, path_rows = [], []
    for N in cfg["N"]:
        run.stage = f"clt N={N}"
        t0 = time.perf_counter()
        m = cfg.measure(system, N)
        prof_guess = None
        if cfg["mode"] == "exact":
            prof_guess = _profile_for(cfg, f, m, None) if (m.exact_available or all(
                p.is_grid_constant(cfg["grid_k"]) for p in f.pieces)) else None
        cuts = path_cuts(prof_guess, cfg["path_t"]) if prof_guess is not None and prof_guess.sigma2 > 0 else []
        sim = simulate_sums(system, omega, f, N, cfg["M"], cfg["seed"], threads=cfg["threads"], cuts=cuts,
                            measure=m, centering=prof_guess.centering if prof_guess is not None else None)
        prof = prof_guess or sim.profile
        if prof.sigma2 <= 0:
            raise ConfigurationError(f"sigma_N = 0 at N = {N}; the observable looks like a coboundary")
        if not cuts:
            cuts = path_cuts(prof, cfg["path_t"])
            sim = simulate_sums(system, omega, f, N, cfg["M"], cfg["seed"], threads=cfg["threads"], cuts=cuts,
                                measure=m, centering=sim.centering)
        W = sim.totals / prof.sigma
        dk, dw = dist_kolmogorov(W), dist_wasserstein(W)
        row = [N, cfg["M"], prof.sigma, dk, 1.22 / math.sqrt(cfg["M"]), dw]
        elapsed = 1000 * (time.perf_counter() - t0)
        run.runtimes[f"N={N}"] = elapsed
        if cfg["timings"]:
            row.append(round(elapsed, 3))
        rows.append(row)
        P = path_values_from_prefix(sim, prof, cfg["path_t"])
        for j, t in enumerate(cfg["path_t"]):
            v = P[:, j]
            var = float(v.var(ddof=1))
            se = float(np.std((v - v.mean()) ** 2, ddof=1) / math.sqrt(len(v)))
            path_rows.append([N, t, var, se])
    header = CLT_COLUMNS + (["runtime_ms"] if cfg["timings"] else [])
    run.write_csv("clt.csv", header, rows)
    run.write_csv("clt_path.csv", ["N", "t", "var_W_t", "se"], path_rows)


def cmd_fcb(run: Run) -> None:
    cfg = run.cfg
    system = cfg.system()
    f = parse_observable(cfg["observable"], system.n_symbols)
    N = cfg["fcb_N"]
    run.stage = f"fcb N={N}"
    m = cfg.measure(system, N)
    mode = "exact" if cfg["mode"] == "exact" and m.exact_available else "mc"
    est = fcb_gap_estimate(f, m, cfg["gaps"], mode=mode, M=cfg["M"], seed=cfg["seed"])
    rows = [[r.gap, r.lhs, est.r, est.residual] for r in est.rows]
    run.write_csv("fcb.csv", FCB_COLUMNS, rows)


def cmd_bounds(run: Run) -> None:
    cfg = run.cfg
    b = cfg["bounds"]
    run.stage = "bounds"
    Sigma = b["Sigma"]
    if Sigma is None:
        Sigma = 1.0
    rows = bound_curve(b["N"], b["L"], Sigma, b["C_star"], RateFunction.geometric(b["theta"]), b["C"], b["C0"],
                       b["C_theta"])
    run.write_csv("bounds.csv", BOUND_COLUMNS,
                  [[r.N, r.wasserstein_bound, r.kolmogorov_bound, r.functional_bound, r.K_used] for r in rows])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_compare(run: Run) -> None:
    cfg = run.cfg
    run.stage = "compare"
    clt_path = run.out / "clt.csv"
    if not clt_path.is_file():
        raise MissingArtifactError(f"compare needs {clt_path} from a prior 'clt' run")
    clt = _read_csv(clt_path)
    if not clt:
        raise MissingArtifactError(f"{clt_path} has no rows")
    b = cfg["bounds"]
    Ns = [int(r["N"]) for r in clt]
    sig = {int(r["N"]): float(r["sigma"]) for r in clt}
    curves = bound_curve(Ns, b["L"], 1.0, b["C_star"], RateFunction.geometric(b["theta"]), b["C"], b["C0"],
                         b["C_theta"], sigma_of_N=lambda N: sig[N])
    rows = []
    for r, c in zip(clt, curves):
        rows.append([int(r["N"]), float(r["d_K"]), float(r["d_W"]), c.kolmogorov_bound, c.wasserstein_bound])
    run.write_csv("compare.csv", ["N", "d_K", "d_W", "kolmogorov_bound", "wasserstein_bound"], rows)
    slopes = []
    if len(rows) >= 2:
        arr = np.array(rows, dtype=float)
        corr = np.log(arr[:, 0] + 1) ** 2
        for j, name in [(1, "d_K"), (2, "d_W"), (3, "kolmogorov_bound"), (4, "wasserstein_bound")]:
            ok = np.isfinite(arr[:, j]) & (arr[:, j] > 0)
            if ok.sum() >= 2:
                slopes.append([name, loglog_slope(arr[ok, 0], arr[ok, j]),
                               loglog_slope(arr[ok, 0], arr[ok, j] / corr[ok])])
    run.write_csv("compare_slopes.csv", ["column", "loglog_slope", "loglog_slope_log2_corrected"], slopes)


COMMANDS = {
    "simulate": cmd_simulate,
    "spectral": cmd_spectral,
    "verify-conditions": cmd_verify,
    "clt": cmd_clt,
    "fcb": cmd_fcb,
    "bounds": cmd_bounds,
    "compare": cmd_compare,
}


def run_experiment(command: str, cfg: ExperimentConfig, stderr=None) -> int:
    """Run one command; returns the process exit status."""
    stderr = stderr or sys.stderr
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}")
    run = Run(cfg, command)
    t0 = time.perf_counter()
    try:
        COMMANDS[command](run)
        run.runtimes["total"] = 1000 * (time.perf_counter() - t0)
        run.manifest()
    except RandOpenError as exc:
        run.cleanup()
        print(f"randopen {command}: failed in stage '{run.stage}': {type(exc).__name__}: {exc}", file=stderr)
        return exc.exit_code
    except BaseException:
        run.cleanup()
        raise
    return 0
