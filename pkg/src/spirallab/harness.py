"""Experiment orchestration: configs, sweeps, asymptotic pipeline runs,
simulation/asymptotics comparison and the bundled reference self-test.

Configs are JSON.  Every report embeds the fully resolved config, so a
report can be fed back as a config and reproduces its numbers exactly.
"""

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .asymptotics import (compose_spiral, compute_g, compute_R0, default_d_cut,
                          predict_kappa, residual_polar, solve_eikonal, solve_rho0)
from .errors import BreakdownError, ConfigError, JoinError, SpiralLabError
from .kernels import KernelParams
from .radial import RadialGrid
from .simulator import FORMAT_VERSION, SimConfig, run

__all__ = ["KINDS", "AsymptoticsParams", "ExperimentConfig", "ComparisonRow",
           "load_config", "run_asymptotics", "run_experiment", "compare_asymptotics",
           "selftest", "resolve_threads"]

KINDS = ("eta_sweep", "dtilde_sweep", "asymptotics_pipeline", "residual_scaling",
         "eikonal_study", "unit_reference")
SWEEP_KINDS = ("eta_sweep", "dtilde_sweep", "residual_scaling", "eikonal_study")
SIM_KINDS = ("eta_sweep", "dtilde_sweep")
CSV_SCHEMA = 1


def resolve_threads(threads=None):
    """``threads`` if given, else ``$SPIRALLAB_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("SPIRALLAB_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"SPIRALLAB_THREADS must be an integer, got {env!r}") from None
        else:
            threads = 1
    if threads < 1:
        raise ConfigError("thread count must be >= 1")
    return threads


@dataclass(frozen=True)
class AsymptoticsParams:
    """Inputs of the asymptotic pipeline."""

    beta: float = -1.0
    delta: float = 0.1
    eta: float = 1.0
    dtilde: float = 0.1
    r_max: float = 100.0
    n: int = 8000
    x_match: float = 30.0
    n_ansatz: int = 8000
    c_n: float = 0.0
    d_cut: float = None

    def __post_init__(self):
        if not self.beta < 0:
            raise ConfigError("beta must be negative")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not (self.eta > 0 and self.dtilde >= 0):
            raise ConfigError("need eta > 0 and dtilde >= 0")

    @property
    def kernel(self):
        return KernelParams.from_dtilde(self.eta, self.dtilde)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown asymptotics fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    base: dict = field(default_factory=dict)
    sweep_values: list = field(default_factory=list)
    out_dir: str = "out"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in SWEEP_KINDS:
            v = list(self.sweep_values)
            if not v:
                raise ConfigError("sweep_values: must be nonempty for sweep experiments")
            d = np.diff(np.asarray(v, dtype=float))
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigError("sweep_values: must be strictly monotone")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ComparisonRow:
    value: float
    kappa_measured: float
    kappa_predicted: float
    ratio: float
    omega_measured: float
    lambda_predicted: float
    incoherence_score: float

    @classmethod
    def build(cls, value, km, kp, om, lp, inc):
        ratio = km / kp if (np.isfinite(km) and np.isfinite(kp) and kp != 0) else float("nan")
        return cls(float(value), float(km), float(kp), float(ratio), float(om), float(lp), float(inc))


def load_config(path):
    """Parse a JSON experiment config (or a report embedding one)."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "resolved_config" in d:
        d = d["resolved_config"]
    extra = set(d) - {"kind", "base", "sweep_values", "out_dir"}
    if extra:
        raise ConfigError(f"unknown experiment fields: {sorted(extra)}")
    if "kind" not in d:
        raise ConfigError("kind: missing")
    return ExperimentConfig(**d)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


# --------------------------------------------------------------- asymptotics

_RHO0_CACHE = {}


def _rho0(r_max, n):
    key = (float(r_max), int(n))
    if key not in _RHO0_CACHE:
        _RHO0_CACHE[key] = solve_rho0(RadialGrid.uniform(r_max, n))
    return _RHO0_CACHE[key]


def _eikonal(ap, rho0):
    g = compute_g(rho0, ap.delta)
    d_cut = ap.d_cut if ap.d_cut is not None else default_d_cut(rho0, ap.delta)
    return solve_eikonal(g, ap.beta, d_cut, x_match=ap.x_match), g


def run_asymptotics(ap, out_dir=None):
    """Run the full pipeline for ``ap``; optionally write CSVs and JSON.

    The wavenumber prediction is omitted (``None``) with a
    ``breakdown`` note when ``eta - dtilde <= 0``.
    """
    rho0 = _rho0(ap.r_max, ap.n)
    eik, g = _eikonal(ap, rho0)
    summ = {"format_version": FORMAT_VERSION, "kind": "asymptotics",
            "params": {"beta": ap.beta, "eta": ap.eta, "dtilde": ap.dtilde, "delta": ap.delta},
            "resolved_config": asdict(ap),
            "omega": eik.omega, "lam": eik.lam, "kappa": eik.kappa, "a_core": eik.a_core,
            "d_cut": eik.d_cut, "rho0_residual": rho0.residual_norm,
            "rho0_slope": rho0.slope_at_origin,
            "lambda_predicted": ap.beta + ap.delta ** 2 * eik.omega, "notes": []}
    ans = None
    try:
        ans = compose_spiral(rho0, eik, ap.delta, ap.beta, ap.kernel, n=ap.n_ansatz, c_n=ap.c_n)
        summ["kappa_pred"] = ans.kappa_pred
        summ["residual_norms"] = list(residual_polar(ans).norms)
    except BreakdownError as exc:
        summ["kappa_pred"] = None
        summ["notes"].append(f"breakdown: {exc}")
    summ["notes"].append("d_cut split of g is not canonical; a_core depends on it")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        files = {"rho0": "rho0.csv", "g": "g.csv", "R0": "R0.csv"}
        rho0.profile.to_csv(os.path.join(out_dir, files["rho0"]))
        g.to_csv(os.path.join(out_dir, files["g"]))
        compute_R0(rho0, eik, ap.delta).to_csv(os.path.join(out_dir, files["R0"]))
        summ["eikonal"] = eik.to_summary(out_dir)
        if ans is not None:
            summ["spiral"] = ans.to_summary(out_dir)
        summ["files"] = files
        _write_json(os.path.join(out_dir, "summary.json"), summ)
    return summ


# -------------------------------------------------------------- experiments

def _sim_point(args):
    cfg_dict, out_dir, snapshot_every, workers = args
    cfg = SimConfig.from_dict(cfg_dict)
    return run(cfg, snapshot_every, out_dir, workers=workers)


def _sim_base(base, seed):
    d = dict(base)
    if seed is not None:
        d["rng_seed"] = int(seed)
    p = d.get("params", {"eta": 1.0, "dtilde": 0.1})
    return d, p


def _prediction(beta, eta, dtilde, delta, asym_base):
    ap = AsymptoticsParams(beta=beta, delta=delta, eta=eta, dtilde=dtilde,
                           **{k: v for k, v in asym_base.items()
                              if k in ("r_max", "n", "x_match", "n_ansatz", "d_cut")})
    rho0 = _rho0(ap.r_max, ap.n)
    eik, _ = _eikonal(ap, rho0)
    lam_pred = beta + delta ** 2 * eik.omega
    try:
        kp = predict_kappa(eik, beta, delta, ap.kernel)
    except BreakdownError:
        kp = float("nan")
    return kp, lam_pred


def _run_sim_sweep(cfg, out_dir, threads, seed, snapshot_every, log):
    base, p = _sim_base(cfg.base, seed)
    asym_base = base.pop("asymptotics", {})
    delta = asym_base.get("delta", 0.1)
    jobs = []
    for v in cfg.sweep_values:
        pp = dict(p)
        if cfg.kind == "eta_sweep":
            pp["eta"] = float(v)
        else:
            pp["dtilde"] = float(v)
        d = dict(base)
        d["params"] = pp
        jobs.append((SimConfig.from_dict(d).to_dict(), os.path.join(out_dir, f"point_{v:g}"),
                     snapshot_every or 0, 1 if threads > 1 else None))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            sums = list(pool.map(_sim_point, jobs))
    else:
        sums = []
        for j in jobs:
            log(f"running point {j[1]}")
            sums.append(_sim_point(j))
    rows = []
    records = []
    for v, s in zip(cfg.sweep_values, sums):
        c = SimConfig.from_dict(s["config"])
        m = s["measurement"]
        beta = c.coeffs.get("beta", -1.0)
        if c.model == "nonlocal_cgl":
            kp, lp = _prediction(beta, c.params.eta, c.params.dtilde, delta, asym_base)
            if not c.params.d_real > 0:
                kp = float("nan")
        else:
            kp, lp = float("nan"), float("nan")
        row = ComparisonRow.build(v, m.get("kappa_measured", np.nan), kp,
                                  m.get("omega_measured", np.nan), lp,
                                  m.get("incoherence_score", np.nan))
        rows.append(row)
        records.append({"params": {"beta": beta, "eta": c.params.eta, "dtilde": c.params.dtilde},
                        "kappa_measured": row.kappa_measured,
                        "omega_measured": row.omega_measured,
                        "incoherence_score": row.incoherence_score,
                        "winding_number": m.get("winding_number")})
    return rows, records


def _rows_csv(path, rows):
    _write_csv(path, ["value", "kappa_measured", "kappa_predicted", "ratio", "omega_measured",
                      "lambda_predicted", "incoherence_score"],
               [[r.value, r.kappa_measured, r.kappa_predicted, r.ratio, r.omega_measured,
                 r.lambda_predicted, r.incoherence_score] for r in rows])


def _loglog_fit(x, y):
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, icpt = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + icpt)
    ss = np.sum((ly - ly.mean()) ** 2)
    return float(slope), float(1 - np.sum(res ** 2) / ss) if ss > 0 else 1.0


def run_experiment(config, out_dir=None, threads=None, seed=None, snapshot_every=None,
                   quiet=True):
    """Execute an experiment and write its reports.

    Parameters
    ----------
    config : str or ExperimentConfig
        Path to a JSON config or a parsed config.
    out_dir : str, optional
        Overrides ``config.out_dir``.

    Returns
    -------
    dict
        Paths of the written reports (``summary``, ``table``, ...).
    """
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else config
    if out_dir is not None:
        cfg = replace(cfg, out_dir=str(out_dir))
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    threads = resolve_threads(threads)

    def log(msg):
        if not quiet:
            print(msg, flush=True)

    t0 = time.perf_counter()
    report = {"format_version": FORMAT_VERSION, "csv_schema": CSV_SCHEMA, "kind": cfg.kind,
              "resolved_config": cfg.to_dict()}
    paths = {"summary": os.path.join(out, "summary.json")}
    try:
        if cfg.kind in SIM_KINDS:
            rows, records = _run_sim_sweep(cfg, out, threads, seed, snapshot_every, log)
            paths["table"] = os.path.join(out, "comparison.csv")
            _rows_csv(paths["table"], rows)
            report["rows"] = [asdict(r) for r in rows]
            report["records"] = records
            km = np.array([r.kappa_measured for r in rows])
            report["kappa_strictly_decreasing"] = bool(np.all(np.diff(km) < 0))
        elif cfg.kind == "asymptotics_pipeline":
            ap = AsymptoticsParams.from_dict(cfg.base)
            summ = run_asymptotics(ap, out)
            report.update({k: v for k, v in summ.items() if k not in ("resolved_config", "kind")})
            report["records"] = [{"params": summ["params"], "kappa_predicted": summ["kappa_pred"],
                                  "lambda_predicted": summ["lambda_predicted"]}]
        elif cfg.kind == "residual_scaling":
            norms = []
            for dl in cfg.sweep_values:
                ap = AsymptoticsParams.from_dict({**cfg.base, "delta": float(dl)})
                s = run_asymptotics(ap)
                norms.append(s["residual_norms"])
                log(f"delta={dl:g} norms={s['residual_norms']}")
            norms = np.array(norms)
            total = np.hypot(norms[:, 0], norms[:, 1])
            slope, r2 = _loglog_fit(cfg.sweep_values, total)
            paths["table"] = os.path.join(out, "residual_scaling.csv")
            _write_csv(paths["table"], ["delta", "norm_real", "norm_imag", "norm_total"],
                       [[float(d), *n, t] for d, n, t in zip(cfg.sweep_values, norms, total)])
            report.update(slope=slope, r2=r2, norms=norms.tolist())
        elif cfg.kind == "eikonal_study":
            recs = []
            rho0 = None
            for b in cfg.sweep_values:
                ap = AsymptoticsParams.from_dict({**cfg.base, "beta": float(b)})
                rho0 = _rho0(ap.r_max, ap.n)
                eik, _ = _eikonal(ap, rho0)
                recs.append((float(b), eik.omega, eik.lam, eik.a_core))
                log(f"beta={b:g} omega={eik.omega:.6g} a={eik.a_core:.6g}")
            x = np.array([2.0 / r[3] for r in recs])
            y = np.log([r[1] for r in recs])
            slope, icpt = np.polyfit(x, y, 1)
            ss = np.sum((y - y.mean()) ** 2)
            r2 = 1 - np.sum((y - slope * x - icpt) ** 2) / ss if ss > 0 else 1.0
            paths["table"] = os.path.join(out, "eikonal_study.csv")
            _write_csv(paths["table"], ["beta", "omega", "lam", "a_core"], recs)
            report.update(slope=float(slope), intercept=float(icpt), r2=float(r2))
        else:
            res = selftest(quiet=quiet)
            report.update(selftest=res)
    except SpiralLabError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "kind": cfg.kind}
        report["wall_time"] = time.perf_counter() - t0
        _write_json(paths["summary"], report)
        raise
    report["wall_time"] = time.perf_counter() - t0
    _write_json(paths["summary"], report)
    return paths


# --------------------------------------------------------------- comparison

_JOIN_KEYS = ("beta", "eta", "dtilde", "delta")


def _records(summary):
    if summary.get("format_version") != FORMAT_VERSION:
        raise JoinError(f"format_version {summary.get('format_version')!r} != {FORMAT_VERSION}")
    if "records" in summary:
        return summary["records"]
    if "params" in summary and "omega" in summary:      # bare asymptotics summary
        return [{"params": summary["params"], "kappa_predicted": summary.get("kappa_pred"),
                 "lambda_predicted": summary.get("lambda_predicted")}]
    if "config" in summary:                              # single simulation run
        c = SimConfig.from_dict(summary["config"])
        m = summary.get("measurement", {})
        return [{"params": {"beta": c.coeffs.get("beta"), "eta": c.params.eta,
                            "dtilde": c.params.dtilde},
                 "kappa_measured": m.get("kappa_measured"),
                 "omega_measured": m.get("omega_measured"),
                 "incoherence_score": m.get("incoherence_score")}]
    raise JoinError("summary holds no comparable records")


def _num(x):
    return float("nan") if x is None else float(x)


def _load(s):
    if isinstance(s, dict):
        return s
    with open(s) as fh:
        return json.load(fh)


def compare_asymptotics(sim_summary, asym_summary, out_csv=None):
    """Join measured and predicted quantities.

    Records are matched on the parameters present in both summaries; a
    record without a partner raises :class:`JoinError` naming the
    differing fields.  The measured side falls back to predicted values
    when it carries no measurement (self-join).

    Returns
    -------
    (list of ComparisonRow, dict)
        Rows and trend statistics (Spearman correlation of measured versus
        predicted wavenumbers when at least two rows exist).
    """
    sim = _records(_load(sim_summary))
    asym = _records(_load(asym_summary))
    rows = []
    for rec in sim:
        sp = rec["params"]
        match = None
        diffs = None
        for cand in asym:
            ap = cand["params"]
            keys = [k for k in _JOIN_KEYS if k in sp and k in ap]
            bad = {k: (sp[k], ap[k]) for k in keys if not np.isclose(sp[k], ap[k], rtol=1e-12, atol=0)}
            if not bad:
                match = cand
                break
            diffs = bad
        if match is None:
            raise JoinError(f"no matching asymptotics record; differing fields: {diffs}")
        km = rec.get("kappa_measured", rec.get("kappa_predicted"))
        om = rec.get("omega_measured")
        if om is None and rec.get("lambda_predicted") is not None:
            om = -rec["lambda_predicted"]
        value = sp.get("eta") if len(sim) > 1 else sp.get("beta")
        rows.append(ComparisonRow.build(_num(value), _num(km), _num(match.get("kappa_predicted")),
                                        _num(om), _num(match.get("lambda_predicted")),
                                        _num(rec.get("incoherence_score"))))
    st = {}
    km = np.array([r.kappa_measured for r in rows])
    kp = np.array([r.kappa_predicted for r in rows])
    ok = np.isfinite(km) & np.isfinite(kp)
    if ok.sum() >= 2:
        st["spearman"] = float(stats.spearmanr(km[ok], kp[ok]).statistic)
    if out_csv:
        _rows_csv(out_csv, rows)
    return rows, st


# ----------------------------------------------------------------- selftest

def selftest(quiet=True):
    """Reference suite: Bessel values against :mod:`scipy.special`, the
    amplitude profile decay law and the trivial eikonal case.

    Returns a dict of named checks with ``passed`` flags; raises nothing.
    """
    from scipy import special

    from .asymptotics import EikonalResult
    from .radial import RadialProfile
    from .specfun import bessel_i1, bessel_k0, bessel_k1

    checks = {}
    z = np.geomspace(1e-3, 30, 41)
    err = max(float(np.max(np.abs(fn(z) / ref(z) - 1)))
              for fn, ref in ((bessel_k0, special.k0), (bessel_k1, special.k1),
                              (bessel_i1, special.i1)))
    checks["bessel_vs_reference"] = {"value": err, "passed": err <= 1e-10}
    t = time.perf_counter()
    rho0 = _rho0(100.0, 8000)
    r = rho0.profile.r
    i = int(np.argmin(np.abs(r - 50.0)))
    law = float(r[i] ** 2 * (1 - rho0.profile.values[i] ** 2))
    # 1 - rho0^2 = 1/r^2 + 2/r^4 + ...
    expect = 1.0 + 2.0 / r[i] ** 2
    checks["rho0_residual"] = {"value": rho0.residual_norm, "passed": rho0.residual_norm <= 1e-8}
    checks["rho0_decay_law"] = {"value": law, "expected": expect,
                                "passed": abs(law - expect) <= 1e-3 and rho0.slope_at_origin > 0}
    g0 = RadialProfile(RadialGrid.uniform(10.0, 1000), np.zeros(1000))
    eik = solve_eikonal(g0, -1.0, 1.0)
    flat = isinstance(eik, EikonalResult) and eik.omega == 0.0 and not np.any(eik.dphi0.values)
    checks["eikonal_trivial"] = {"value": eik.omega, "passed": bool(flat)}
    checks["wall_time"] = time.perf_counter() - t
    checks["passed"] = all(v["passed"] for k, v in checks.items() if isinstance(v, dict))
    if not quiet:
        for k, v in checks.items():
            if isinstance(v, dict):
                print(f"{'PASS' if v['passed'] else 'FAIL'} {k}: {v['value']:.6g}")
    return checks
