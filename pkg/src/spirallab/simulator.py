"""Pseudo-spectral simulation of nonlocally coupled oscillatory media.

Two models share one semi-implicit Euler integrator:

``nonlocal_cgl``
    :math:`w_t = K\\ast w + w - (1+i\\beta)|w|^2 w` for a complex field.
``two_component``
    :math:`u_t = K\\ast u + u - u^3 - v`,
    :math:`v_t = \\varepsilon_r(u - \\alpha v) + d_v K\\ast v`.

The linear part (kernel symbol plus linear reaction) is inverted per mode,
the cubic terms are evaluated explicitly on the grid.
"""

import hashlib
import json
import os
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import (AliasingError, ConfigError, MeasurementError, SnapshotError,
                     StabilityError)
from .field import Field2D, forward, inverse, wavenumber_magnitude
from .kernels import KernelParams, symbol_K

__all__ = [
    "FORMAT_VERSION", "MODELS", "SEEDS", "SimConfig", "PatternMeasurement", "init_field",
    "step_imex", "run", "write_snapshot", "read_snapshot", "locate_core",
    "measure_wavenumber", "measure_frequency", "detect_chimera", "winding_number",
]

FORMAT_VERSION = 1
MODELS = ("nonlocal_cgl", "two_component")
SEEDS = ("archimedean_phase", "random", "from_file")
DEFAULT_COEFFS = {
    "nonlocal_cgl": {"beta": -1.0},
    "two_component": {"eps_r": 0.5, "alpha": 0.5, "dv": 0.0, "amplitude": 1.0},
}


def _small_primes_only(n):
    for p in (2, 3, 5, 7):
        while n % p == 0 and n > 1:
            n //= p
    return n == 1


@dataclass(frozen=True)
class SimConfig:
    """Complete description of a simulation run."""

    n: int = 256
    length: float = 100.0
    dt: float = 0.05
    steps: int = 1000
    basis: str = "cosine"
    params: KernelParams = field(default_factory=lambda: KernelParams(1.0, 1.0, 0.1))
    model: str = "nonlocal_cgl"
    model_coeffs: dict = field(default_factory=dict)
    seed: str = "archimedean_phase"
    rng_seed: int = 0
    kappa0: float = 0.0
    seed_file: str = None

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 8 and _small_primes_only(int(self.n))):
            raise ConfigError(f"n must be >= 8 with prime factors in {{2,3,5,7}}, got {self.n!r}")
        if not self.length > 0:
            raise ConfigError("length must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError("steps must be a nonnegative integer")
        if self.basis not in ("cosine", "periodic"):
            raise ConfigError(f"unknown basis {self.basis!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.seed not in SEEDS:
            raise ConfigError(f"unknown seed {self.seed!r}")
        if self.seed == "from_file" and not self.seed_file:
            raise ConfigError("seed 'from_file' needs seed_file")
        unknown = set(self.model_coeffs) - set(DEFAULT_COEFFS[self.model])
        if unknown:
            raise ConfigError(f"unknown coefficients for {self.model}: {sorted(unknown)}")

    @property
    def coeffs(self):
        out = dict(DEFAULT_COEFFS[self.model])
        out.update(self.model_coeffs)
        return out

    def to_dict(self):
        d = asdict(self)
        d["params"] = {"eta": self.params.eta, "epsilon": self.params.epsilon,
                       "dcoef": self.params.dcoef}
        d["model_coeffs"] = dict(self.model_coeffs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        p = d.pop("params", None)
        if isinstance(p, dict):
            if "dtilde" in p:
                p = KernelParams.from_dtilde(p["eta"], p["dtilde"], p.get("epsilon", 1.0))
            else:
                p = KernelParams(**p)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown SimConfig fields: {sorted(extra)}")
        if p is not None:
            d["params"] = p
        return cls(**d)


@dataclass(frozen=True)
class PatternMeasurement:
    kappa_measured: float
    omega_measured: float = float("nan")
    incoherence_score: float = float("nan")
    fit_window: tuple = (0.0, 0.0)
    fit_r2: float = 0.0
    reliable: bool = True


# ------------------------------------------------------------------ seeding

def _centre_index(n):
    return n // 2


def init_field(cfg):
    """Initial field for ``cfg``; deterministic given the config.

    ``archimedean_phase`` places ``tanh(r) exp(i(theta + kappa0 r))`` on the
    cell nearest the domain centre.  For the two-component model the real
    and imaginary parts, times ``amplitude``, seed ``u`` and ``v``.
    """
    n, L = cfg.n, cfg.length
    proto = Field2D(n, L, np.zeros((n, n), complex), cfg.basis)
    x = proto.coordinates()
    c = x[_centre_index(n)]
    if cfg.seed == "from_file":
        f = read_snapshot(cfg.seed_file)
        expect = (n, n) if cfg.model == "nonlocal_cgl" else (2, n, n)
        if f.values.shape != expect or f.length != L:
            raise SnapshotError(f"seed file holds {f.values.shape} on L={f.length}, need {expect} on L={L}")
        return Field2D(n, L, f.values, cfg.basis)
    if cfg.seed == "archimedean_phase":
        X, Y = np.meshgrid(x - c, x - c, indexing="ij")
        r = np.hypot(X, Y)
        w = np.tanh(r) * np.exp(1j * (np.arctan2(Y, X) + cfg.kappa0 * r))
    else:
        rng = np.random.default_rng(cfg.rng_seed)
        w = 0.01 * (rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))) / np.sqrt(2.0)
    if cfg.model == "nonlocal_cgl":
        return Field2D(n, L, w, cfg.basis)
    amp = cfg.coeffs["amplitude"] if cfg.seed == "archimedean_phase" else 1.0
    return Field2D(n, L, amp * np.stack([w.real, w.imag]), cfg.basis)


# ---------------------------------------------------------------- stepping

class _Stepper:
    """Per-config constants of the semi-implicit update."""

    def __init__(self, cfg, workers=None):
        self.cfg = cfg
        self.workers = workers
        k_hat = symbol_K(wavenumber_magnitude(cfg.n, cfg.length, cfg.basis), cfg.params)
        dt = cfg.dt
        co = cfg.coeffs
        if cfg.model == "nonlocal_cgl":
            self.beta = co["beta"]
            self.denom = 1.0 - dt * (k_hat + 1.0)
        else:
            er, al, dv = co["eps_r"], co["alpha"], co["dv"]
            # (I - dt L) with L = [[K + 1, -1], [eps_r, -eps_r alpha + dv K]]
            a = 1.0 - dt * (k_hat + 1.0)
            b = np.full_like(k_hat, dt)
            c = np.full_like(k_hat, -dt * er)
            d = 1.0 + dt * (er * al - dv * k_hat)
            det = a * d - b * c
            self.inv = (d / det, -b / det, -c / det, a / det)

    def __call__(self, f):
        cfg = self.cfg
        dt = cfg.dt
        # always from values: a resumed run then retraces the original bit for bit
        spec = forward(f.values, cfg.basis, self.workers)
        if cfg.model == "nonlocal_cgl":
            w = f.values
            nl = -(1.0 + 1j * self.beta) * (w.real ** 2 + w.imag ** 2) * w
            new_spec = (spec + dt * forward(nl, cfg.basis, self.workers)) / self.denom
            vals = inverse(new_spec, cfg.basis, workers=self.workers)
        else:
            u = f.values[0]
            nl_u = forward(-u ** 3, cfg.basis, self.workers)
            ru = spec[0] + dt * nl_u
            rv = spec[1]
            i11, i12, i21, i22 = self.inv
            new_spec = np.stack([i11 * ru + i12 * rv, i21 * ru + i22 * rv])
            vals = inverse(new_spec, cfg.basis, real=True, workers=self.workers)
            if cfg.basis == "periodic":
                vals = vals.real
        if not np.all(np.isfinite(vals)):
            raise StabilityError(f"non-finite values at step {f.step + 1}", step=f.step + 1)
        out = Field2D(f.n, f.length, vals, f.basis, f.t + dt, f.step + 1)
        out._spec = new_spec
        return out


def step_imex(f, cfg, workers=None):
    """One semi-implicit Euler step.

    cGL: ``w_hat <- (w_hat + dt N_hat) / (1 - dt (K_hat + 1))`` with
    ``N = -(1 + i beta)|w|^2 w``; two-component: a 2x2 solve per mode.

    Raises
    ------
    StabilityError
        Non-finite values; carries the step index.
    """
    return _Stepper(cfg, workers)(f)


# --------------------------------------------------------------- snapshots

def _layout(values):
    return "complex_interleaved" if np.iscomplexobj(values) else "planes"


def write_snapshot(path, f, model):
    """Write ``path + '.bin'`` (raw little-endian float64, row-major) and
    ``path + '.json'``.  Returns the sidecar dict."""
    layout = _layout(f.values)
    if layout == "complex_interleaved":
        raw = np.ascontiguousarray(np.stack([f.values.real, f.values.imag], axis=-1), dtype="<f8")
    else:
        raw = np.ascontiguousarray(f.values, dtype="<f8")
    data = raw.tobytes()
    meta = {"format_version": FORMAT_VERSION, "n": int(f.n), "length": float(f.length),
            "t": float(f.t), "step": int(f.step), "model": model, "layout": layout,
            "basis": f.basis, "checksum": hashlib.sha256(data).hexdigest()}
    with open(path + ".bin", "wb") as fh:
        fh.write(data)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=1)
    return meta


def read_snapshot(path):
    """Read a snapshot written by :func:`write_snapshot` (``path`` with or
    without extension)."""
    base = path[:-5] if path.endswith(".json") else path[:-4] if path.endswith(".bin") else path
    try:
        with open(base + ".json") as fh:
            meta = json.load(fh)
        with open(base + ".bin", "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {base}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise SnapshotError(f"unsupported format_version {meta.get('format_version')!r}")
    if hashlib.sha256(data).hexdigest() != meta["checksum"]:
        raise SnapshotError("snapshot checksum mismatch")
    n = meta["n"]
    raw = np.frombuffer(data, dtype="<f8")
    if meta["layout"] == "complex_interleaved":
        if raw.size != 2 * n * n:
            raise SnapshotError("snapshot size does not match n")
        arr = raw.reshape(n, n, 2)
        vals = arr[..., 0] + 1j * arr[..., 1]
    elif meta["layout"] == "planes":
        if raw.size % (n * n):
            raise SnapshotError("snapshot size does not match n")
        vals = raw.reshape(-1, n, n).astype(float)
    else:
        raise SnapshotError(f"unknown layout {meta['layout']!r}")
    return Field2D(n, meta["length"], vals, meta.get("basis", "cosine"), meta["t"], meta["step"])


# ------------------------------------------------------------ measurement

def _interp(z, pts):
    """Complex values of ``z`` at fractional index coordinates ``pts``."""
    return (map_coordinates(z.real, pts, order=3, mode="nearest")
            + 1j * map_coordinates(z.imag, pts, order=3, mode="nearest"))


def locate_core(f):
    """Spiral core as fractional cell indices: argmin of ``|w|`` refined by
    a quadratic fit on the 3x3 neighborhood; ties go to the cell nearest
    the centre."""
    z = f.complex_phase_field()
    a = np.abs(z)
    n = f.n
    lo = a.min()
    cand = np.argwhere(a <= lo + 1e-12 * max(1.0, a.max()))
    mid = (n - 1) / 2.0
    i, j = cand[np.argmin(np.hypot(cand[:, 0] - mid, cand[:, 1] - mid))]
    pos = [float(i), float(j)]
    for ax, k in ((0, i), (1, j)):
        if 0 < k < n - 1:
            sl = [i, j]
            sl[ax] = k - 1
            am = a[tuple(sl)]
            sl[ax] = k + 1
            ap = a[tuple(sl)]
            curv = am - 2 * a[i, j] + ap
            if curv > 0:
                pos[ax] += float(np.clip(0.5 * (am - ap) / curv, -0.5, 0.5))
    return tuple(pos)


def _index_to_coord(f, idx):
    off = 0.5 if f.basis == "cosine" else 0.0
    return (np.asarray(idx) + off) * f.spacing


def measure_wavenumber(f, window=(0.25, 0.45), n_rays=8, core=None):
    """Far-field wavenumber from the unwrapped phase along radial rays.

    The phase is sampled along ``n_rays`` rays from the core on
    ``[window[0], window[1]] * L/2``; one slope is fitted to all rays with
    a separate offset per ray.  ``fit_r2 < 0.5`` marks the value as
    unreliable (a warning is issued, the value is still returned).
    """
    z = f.complex_phase_field()
    if not np.any(z):
        raise MeasurementError("field has no phase")
    ci = locate_core(f) if core is None else core
    h = f.spacing
    r_lo, r_hi = window[0] * f.length / 2, window[1] * f.length / 2
    radii = np.arange(r_lo, r_hi + 1e-12, 0.5 * h)
    xs, ys = [], []
    for k in range(n_rays):
        th = 2 * np.pi * k / n_rays
        pi = ci[0] + radii * np.cos(th) / h
        pj = ci[1] + radii * np.sin(th) / h
        inside = (pi >= 0) & (pi <= f.n - 1) & (pj >= 0) & (pj <= f.n - 1)
        if inside.sum() < 8:
            continue
        ph = np.unwrap(np.angle(_interp(z, np.vstack([pi[inside], pj[inside]]))))
        rr = radii[inside]
        xs.append(rr - rr.mean())
        ys.append(ph - ph.mean())
    if not xs:
        raise MeasurementError("no ray stays inside the domain over the fit window")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    slope = float(x @ y / (x @ x))
    ss = float(y @ y)
    r2 = 1.0 - float(np.sum((y - slope * x) ** 2)) / ss if ss > 0 else 0.0
    r2 = float(np.clip(r2, 0.0, 1.0))
    reliable = r2 >= 0.5
    if not reliable:
        warnings.warn(f"incoherent phase: wavenumber fit R^2 = {r2:.3f}", stacklevel=2)
    return PatternMeasurement(abs(slope), fit_window=(r_lo, r_hi), fit_r2=r2, reliable=reliable)


def measure_frequency(snapshots, n_probes=8, radius=0.35):
    """Rotation frequency from the phase at fixed probe points.

    Probes sit on a circle of ``radius * L/2`` about the domain centre.
    Returns the fitted ``d(phase)/dt``, an estimate of ``-lambda``.

    Raises
    ------
    AliasingError
        A phase increment between consecutive snapshots exceeds ``0.9 pi``,
        i.e. the snapshot spacing cannot resolve the rotation.
    MeasurementError
        Fewer than 3 snapshots, unequal spacing or a vanishing field.
    """
    if len(snapshots) < 3:
        raise MeasurementError("need at least 3 snapshots")
    t = np.array([s.t for s in snapshots], dtype=float)
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(1.0, dt.max()):
        raise MeasurementError("snapshots must be equally spaced in time")
    f0 = snapshots[0]
    h = f0.spacing
    mid = (f0.n - 1) / 2.0
    th = 2 * np.pi * np.arange(n_probes) / n_probes
    rad = radius * f0.length / 2 / h
    pts = np.vstack([mid + rad * np.cos(th), mid + rad * np.sin(th)])
    vals = np.array([_interp(s.complex_phase_field(), pts) for s in snapshots])
    if np.any(np.abs(vals) < 1e-14):
        raise MeasurementError("phase undefined: field vanishes at a probe")
    inc = np.angle(vals[1:] * np.conj(vals[:-1]))
    if np.any(np.abs(inc) > 0.9 * np.pi):
        raise AliasingError(
            f"phase increment {np.abs(inc).max():.3f} rad per snapshot: |omega| dt near or above pi")
    phase = np.angle(vals[0]) + np.concatenate([np.zeros((1, n_probes)), np.cumsum(inc, axis=0)])
    tc = t - t.mean()
    slopes = tc @ (phase - phase.mean(axis=0)) / (tc @ tc)
    return float(np.mean(slopes))


def _neighbor_phase_steps(z):
    ph = np.angle(z)
    dx = np.abs(np.angle(np.exp(1j * np.diff(ph, axis=0))))
    dy = np.abs(np.angle(np.exp(1j * np.diff(ph, axis=1))))
    out = np.zeros(z.shape)
    cnt = np.zeros(z.shape)
    out[:-1] += dx
    out[1:] += dx
    cnt[:-1] += 1
    cnt[1:] += 1
    out[:, :-1] += dy
    out[:, 1:] += dy
    cnt[:, :-1] += 1
    cnt[:, 1:] += 1
    return out / cnt


def detect_chimera(f, core=None, core_radius=0.1, far=(0.25, 0.45)):
    """Incoherence score: median nearest-neighbor phase jump inside the
    core disk divided by the same statistic in the far annulus."""
    z = f.complex_phase_field()
    ci = locate_core(f) if core is None else core
    steps = _neighbor_phase_steps(z)
    idx = np.arange(f.n)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    dist = np.hypot(I - ci[0], J - ci[1]) * f.spacing
    half = f.length / 2
    core_vals = steps[dist <= core_radius * half]
    far_vals = steps[(dist >= far[0] * half) & (dist <= far[1] * half)]
    if core_vals.size == 0 or far_vals.size == 0:
        raise MeasurementError("core disk or far annulus holds no cells")
    c, d = float(np.median(core_vals)), float(np.median(far_vals))
    if d == 0.0:
        return 1.0 if c == 0.0 else float("inf")
    return c / d


def winding_number(f, radius=0.35, core=None, samples=720):
    """Phase winding around a circle of ``radius * L/2`` about the core."""
    z = f.complex_phase_field()
    ci = locate_core(f) if core is None else core
    rad = radius * f.length / 2 / f.spacing
    th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    pts = np.vstack([ci[0] + rad * np.cos(th), ci[1] + rad * np.sin(th)])
    if pts.min() < 0 or pts.max() > f.n - 1:
        raise MeasurementError("winding circle leaves the domain")
    v = _interp(z, pts)
    inc = np.angle(np.roll(v, -1) * np.conj(v))
    return int(round(float(inc.sum()) / (2 * np.pi)))


# --------------------------------------------------------------------- run

def run(cfg, snapshot_every, out_dir, resume_from=None, workers=None, probe_count=8,
        probe_spacing=0.5, progress=None):
    """Integrate ``cfg.steps`` steps, writing snapshots and ``summary.json``.

    Snapshots are written at step 0 (unless resuming), every
    ``snapshot_every`` steps and at the last step.  The final
    ``probe_count`` fields spaced by about ``probe_spacing`` time units are
    kept in memory for the frequency estimate.

    Parameters
    ----------
    resume_from : str, optional
        Snapshot path; integration continues from its step up to
        ``cfg.steps``.

    Returns
    -------
    dict
        Run summary (also written to ``out_dir/summary.json``).
    """
    os.makedirs(out_dir, exist_ok=True)
    if snapshot_every is not None and snapshot_every < 0:
        raise ConfigError("snapshot_every must be nonnegative")
    t_start = time.perf_counter()
    stepper = _Stepper(cfg, workers)
    if resume_from is not None:
        f = read_snapshot(resume_from)
        f = Field2D(f.n, f.length, f.values, cfg.basis, f.t, f.step)
    else:
        f = init_field(cfg)
    written = []
    events = []

    def snap(field_):
        base = os.path.join(out_dir, f"snap_{field_.step:08d}")
        write_snapshot(base, field_, cfg.model)
        written.append(os.path.basename(base))

    if resume_from is None:
        snap(f)
    stride = max(1, int(round(probe_spacing / cfg.dt)))
    first_probe = cfg.steps - stride * (probe_count - 1)
    probes = []
    try:
        while f.step < cfg.steps:
            f = stepper(f)
            if snapshot_every and f.step % snapshot_every == 0 and f.step != cfg.steps:
                snap(f)
            if f.step >= first_probe and (cfg.steps - f.step) % stride == 0:
                probes.append(f)
            if progress is not None:
                progress(f.step)
    except StabilityError as exc:
        events.append({"event": "blow_up", "step": exc.step, "message": str(exc)})
        summary = _summary(cfg, f, written, events, None, time.perf_counter() - t_start)
        _write_summary(out_dir, summary)
        raise
    if not written or written[-1] != f"snap_{f.step:08d}":
        snap(f)
    meas = _measure_final(cfg, f, probes, events)
    summary = _summary(cfg, f, written, events, meas, time.perf_counter() - t_start)
    _write_summary(out_dir, summary)
    return summary


def _measure_final(cfg, f, probes, events):
    out = {}
    if not np.any(f.complex_phase_field()):
        events.append({"event": "measurement_skipped", "message": "zero field"})
        return out
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            m = measure_wavenumber(f)
            out.update(kappa_measured=m.kappa_measured, fit_r2=m.fit_r2,
                       fit_window=list(m.fit_window), reliable=m.reliable)
        except MeasurementError as exc:
            events.append({"event": "measurement_failed", "message": str(exc)})
    for w in caught:
        events.append({"event": "warning", "message": str(w.message)})
    try:
        out["incoherence_score"] = detect_chimera(f)
    except MeasurementError as exc:
        events.append({"event": "measurement_failed", "message": str(exc)})
    try:
        out["winding_number"] = winding_number(f)
    except MeasurementError as exc:
        events.append({"event": "measurement_failed", "message": str(exc)})
    if len(probes) >= 3:
        try:
            out["omega_measured"] = measure_frequency(probes)
        except MeasurementError as exc:
            events.append({"event": "measurement_failed", "message": str(exc)})
    return out


def _summary(cfg, f, written, events, meas, wall):
    return {"format_version": FORMAT_VERSION, "config": cfg.to_dict(), "final_step": int(f.step),
            "final_t": float(f.t), "snapshots": written, "events": events,
            "measurement": meas or {}, "wall_time": wall}


def _write_summary(out_dir, summary):
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, default=float)


def with_steps(cfg, steps):
    """Copy of ``cfg`` with a different step count."""
    return replace(cfg, steps=steps)
