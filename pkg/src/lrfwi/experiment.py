"""Experiment harness: configs, synthetic models, metrics, pipelines.

A run generates a synthetic truth model, simulates frequency-domain data
over a colocated survey, subsamples it with a random mask, executes the
selected inversion pipelines (full data, stage-wise, joint) under
matched probe-seed schedules and iteration budgets, and writes models,
slices, and per-iteration metrics to the output directory.

Config files are flat ``key=value`` text (UTF-8, ``#`` comments,
case-sensitive keys); command-line flags win over file values.  The same
seed and config give byte-identical outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .acquisition import (
    RickerSource,
    apply_mask,
    colocated_line,
    forward_data,
    make_mask,
    ricker_amplitude,
)
from .core import ModelGrid
from .errors import (
    BadSpecError,
    ConfigError,
    LrfwiError,
    ShapeMismatchError,
    ZeroReferenceError,
)
from .io import write_mask, write_matrix, write_survey_csv, read_matrix
from .joint import (
    InversionSettings,
    Observation,
    complete_slices,
    frequency_continuation,
    invert_with_targets,
    joint_invert,
    midoff_map,
)

V_MIN, V_MAX = 1500.0, 4500.0
SNR_CAP_DB = 300.0
PIPELINES = ("full", "disjoint", "joint")


@dataclass
class ExperimentConfig:
    nz: int = 60
    nx: int = 120
    h: float = 20.0
    model: str = "lens:400"
    sources: int = 40
    f_peak: float = 15.0
    freqs: tuple = (3.0, 5.0, 7.0, 10.0)
    bands: tuple = ((3.0, 5.0), (7.0, 10.0))
    keep: float = 0.5
    mask_pattern: str = "entry"
    probes: int = 4
    probe_dist: str = "gaussian"
    rank: int = 0  # 0 = auto: ceil(min(Ns, Nr) / 10), at least 5
    lam: float = 1.0
    eps_rel: float = 1e-3
    outer_iters: int = 10
    lbfgs_cap: int = 5
    lbfgs_mem: int = 5
    lasso_iters: int = 150
    root_tol: float = 1e-2
    seed: int = 1234
    pipeline: str = "joint"
    out: str = "out"


_LIST_KEYS = {"freqs", "bands"}


def _parse_value(key: str, raw: str):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    if key not in kinds:
        raise ConfigError(f"unknown config key {key!r}")
    if key == "freqs":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key == "bands":
        return tuple(
            tuple(float(v) for v in part.split(",") if v.strip())
            for part in raw.split(";")
            if part.strip()
        )
    current = getattr(ExperimentConfig(), key)
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def parse_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw.strip())
    return values


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Build a config from an optional file plus overrides (flags win)."""
    values = parse_config_file(path) if path else {}
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _parse_value(key, str(raw)) if isinstance(raw, str) else raw
    cfg = replace(ExperimentConfig(), **values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if not 0 < cfg.keep <= 1:
        raise ConfigError(f"keep ratio must be in (0, 1], got {cfg.keep}")
    if cfg.pipeline not in PIPELINES + ("both",):
        raise ConfigError(f"pipeline must be one of {PIPELINES + ('both',)}")
    if not cfg.freqs:
        raise ConfigError("at least one frequency is required")
    band_freqs = [f for band in cfg.bands for f in band]
    if sorted(band_freqs) != sorted(cfg.freqs):
        raise ConfigError("bands must partition the frequency list")
    if cfg.model.startswith("file:"):
        path = cfg.model.split(":", 1)[1]
        if not Path(path).is_file():
            raise ConfigError(f"model file not found: {path}")


def make_truth(nz: int, nx: int, h: float, spec: str) -> ModelGrid:
    """Deterministic synthetic truth model from a spec string.

    * ``layered:<n>``  n horizontal layers, velocity nondecreasing with
      depth between 1500 and 2600 m/s;
    * ``lens:<dv>``    three layers plus an elliptical lens whose velocity
      differs from the background by exactly ``dv`` m/s;
    * ``file:<path>``  velocity image (m/s) from a JFM1 file.

    Velocities must stay within [1500, 4500] m/s.
    """
    kind, _, arg = spec.partition(":")
    if kind == "layered":
        try:
            n_layers = int(arg)
        except ValueError as exc:
            raise BadSpecError(f"layered spec needs a layer count: {spec!r}") from exc
        if n_layers < 1:
            raise BadSpecError(f"layer count must be positive, got {n_layers}")
        v_layers = np.linspace(V_MIN, 2600.0, n_layers)
        edges = np.linspace(0, nz, n_layers + 1).astype(int)
        v = np.empty((nz, nx))
        for i in range(n_layers):
            v[edges[i]:edges[i + 1], :] = v_layers[i]
    elif kind == "lens":
        try:
            dv = float(arg) if arg else 400.0
        except ValueError as exc:
            raise BadSpecError(f"lens spec needs a velocity contrast: {spec!r}") from exc
        v = make_truth(nz, nx, h, "layered:3").image()
        v = 1.0 / np.sqrt(v)  # back to velocity
        zz, xx = np.mgrid[0:nz, 0:nx]
        inside = (
            ((zz - 0.45 * nz) / (0.18 * nz)) ** 2
            + ((xx - 0.5 * nx) / (0.2 * nx)) ** 2
        ) <= 1.0
        v = v + dv * inside
    elif kind == "file":
        v = read_matrix(arg)
        if np.iscomplexobj(v):
            raise BadSpecError(f"model file must be real-valued: {arg}")
        if v.shape != (nz, nx):
            raise BadSpecError(
                f"model file shape {v.shape} does not match grid {(nz, nx)}"
            )
    else:
        raise BadSpecError(f"unknown model spec {spec!r}")
    if v.min() < V_MIN - 1e-9 or v.max() > V_MAX + 1e-9:
        raise BadSpecError(
            f"velocities [{v.min():.1f}, {v.max():.1f}] outside [{V_MIN}, {V_MAX}] m/s"
        )
    return ModelGrid.from_image(h, 1.0 / v**2)


def make_initial(truth: ModelGrid) -> ModelGrid:
    """Depth-linear velocity between the truth's top and bottom row means."""
    v = 1.0 / np.sqrt(truth.image())
    v_top = float(v[0].mean())
    v_bot = float(v[-1].mean())
    depth = np.linspace(0.0, 1.0, truth.nz)
    profile = v_top + (v_bot - v_top) * depth
    image = np.repeat(profile[:, None], truth.nx, axis=1)
    return ModelGrid.from_image(truth.h, 1.0 / image**2)


def snr_db(truth, estimate) -> float:
    """-20 log10(||e - t||_F / ||t||_F), capped at 300 dB."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ShapeMismatchError(f"shapes differ: {truth.shape} vs {estimate.shape}")
    ref = float(np.linalg.norm(truth))
    if ref == 0.0:
        raise ZeroReferenceError("SNR reference has zero norm")
    err = float(np.linalg.norm(estimate - truth))
    if err == 0.0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, -20.0 * np.log10(err / ref))


def model_error(truth, estimate) -> float:
    """Relative model error ||e - t||_F / ||t||_F on squared slowness."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ShapeMismatchError(f"shapes differ: {truth.shape} vs {estimate.shape}")
    return float(np.linalg.norm(estimate - truth) / np.linalg.norm(truth))


def write_pgm(path, image) -> None:
    """Plain-text PGM (P2), min/max normalized to 0..255."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = image.min(), image.max()
    scaled = np.zeros_like(image) if hi == lo else (image - lo) / (hi - lo) * 255.0
    pixels = np.round(scaled).astype(int)
    lines = [f"P2\n{image.shape[1]} {image.shape[0]}\n255\n"]
    for row in pixels:
        lines.append(" ".join(str(p) for p in row) + "\n")
    Path(path).write_text("".join(lines), encoding="ascii")


@dataclass
class PipelineSummary:
    pipeline: str
    model_error: float
    snr: dict
    pde_forward: int
    pde_adjoint: int

    @property
    def pde_total(self) -> int:
        return self.pde_forward + self.pde_adjoint


@dataclass
class ExperimentResult:
    code: int
    out_dir: Path
    summaries: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    message: str = ""


def _split_iterations(total: int, n_bands: int):
    base, extra = divmod(total, n_bands)
    return [base + (1 if i < extra else 0) for i in range(n_bands)]


def _settings_from(cfg: ExperimentConfig, rank: int) -> InversionSettings:
    return InversionSettings(
        n_probes=cfg.probes,
        probe_distribution=cfg.probe_dist,
        rank_cap=rank,
        lam=cfg.lam,
        eps_rel=cfg.eps_rel,
        outer_iters=cfg.outer_iters,
        lbfgs_cap=cfg.lbfgs_cap,
        lbfgs_mem=cfg.lbfgs_mem,
        lasso_iters=cfg.lasso_iters,
        root_tol=cfg.root_tol,
        master_seed=cfg.seed,
    )


def run_pipeline(
    name: str,
    cfg: ExperimentConfig,
    truth: ModelGrid,
    initial: ModelGrid,
    survey,
    observations,
    true_slices,
    amps,
):
    """Run one pipeline over the continuation schedule; returns its state."""
    from .lowrank import default_rank_cap

    rank = cfg.rank if cfg.rank > 0 else default_rank_cap(survey.ns, survey.nr)
    settings = _settings_from(cfg, rank)
    iters = _split_iterations(cfg.outer_iters, len(cfg.bands))
    by_freq = {f: obs for f, obs in zip(cfg.freqs, observations)}
    state_box = {"state": None}

    recovered = {}
    if name == "disjoint":
        factors, recovered, flags = complete_slices(observations, settings)

    def runner(band, m, band_index):
        band_obs = [by_freq[f] for f in band]
        settings_b = replace(settings, outer_iters=iters[band_index])
        if name == "joint":
            state_box["state"] = joint_invert(
                m, survey, band_obs, settings_b,
                truth=truth, true_slices=true_slices,
                state=state_box["state"], band=band_index,
            )
        elif name == "full":
            data = {obs.omega: true_slices[obs.omega] for obs in band_obs}
            state_box["state"] = invert_with_targets(
                m, survey, data, amps, settings_b,
                truth=truth, true_slices=true_slices,
                state=state_box["state"], band=band_index,
            )
        elif name == "disjoint":
            data = {obs.omega: recovered[obs.omega] for obs in band_obs}
            state_box["state"] = invert_with_targets(
                m, survey, data, amps, settings_b,
                truth=truth, true_slices=true_slices,
                state=state_box["state"], band=band_index,
            )
            for record in state_box["state"].history[-settings_b.outer_iters:]:
                for obs in band_obs:
                    record.snr[obs.omega] = snr_db(
                        true_slices[obs.omega].data, recovered[obs.omega].data
                    )
        else:
            raise ConfigError(f"unknown pipeline {name!r}")
        return state_box["state"].m

    frequency_continuation(cfg.bands, runner, initial)
    state = state_box["state"]
    if name == "disjoint":
        state.factors.update(factors)
        for omega, reason in flags:
            state.flags.append((0, omega, reason))
    return state


def _recovered_slices(name, state, observations, true_slices):
    out = {}
    for obs in observations:
        if name == "full":
            out[obs.omega] = true_slices[obs.omega].data
        else:
            fact = state.factors.get(obs.omega)
            if fact is not None:
                mapping = midoff_map(*obs.acquisition.mask.shape)
                out[obs.omega] = mapping.adjoint(fact.product())
    return out


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute the configured pipelines and write all artifacts.

    Returns an ExperimentResult whose ``code`` is 0 on success; failures
    carry a one-line diagnostic in ``message``.
    """
    out_dir = Path(cfg.out)
    try:
        validate_config(cfg)
        out_dir.mkdir(parents=True, exist_ok=True)

        truth = make_truth(cfg.nz, cfg.nx, cfg.h, cfg.model)
        initial = make_initial(truth)
        survey = colocated_line(truth, cfg.sources)
        wavelet = RickerSource(cfg.f_peak)
        omegas = [2 * np.pi * f for f in cfg.freqs]
        amps = {w: ricker_amplitude(wavelet, w / (2 * np.pi)) for w in omegas}

        true_slices = {
            w: forward_data(truth, survey, w, amps[w]) for w in omegas
        }
        mask = make_mask(
            survey.ns, survey.nr, cfg.keep, seed=(cfg.seed, 911), pattern=cfg.mask_pattern
        )
        observations = [
            Observation(omega=w, amp=amps[w], acquisition=apply_mask(mask, true_slices[w]))
            for w in omegas
        ]

        write_matrix(out_dir / "truth.jfm", truth.image())
        write_matrix(out_dir / "initial.jfm", initial.image())
        write_pgm(out_dir / "truth.pgm", 1.0 / np.sqrt(truth.image()))
        write_pgm(out_dir / "initial.pgm", 1.0 / np.sqrt(initial.image()))
        write_mask(out_dir / "mask.jfm", mask)
        write_survey_csv(out_dir / "survey.csv", survey.src_idx, survey.rcv_idx)
        for f_hz, w, obs in zip(cfg.freqs, omegas, observations):
            write_matrix(out_dir / f"slice_{f_hz:g}_true.jfm", true_slices[w].data)
            write_matrix(
                out_dir / f"slice_{f_hz:g}_observed.jfm", obs.acquisition.observed.data
            )

        selected = ["disjoint", "joint"] if cfg.pipeline == "both" else [cfg.pipeline]

        result = ExperimentResult(code=0, out_dir=out_dir)
        history_rows = []
        for name in selected:
            state = run_pipeline(
                name, cfg, truth, initial, survey, observations, true_slices, amps
            )
            result.states[name] = state
            final_err = model_error(truth.m, state.m.m)
            recovered = _recovered_slices(name, state, observations, true_slices)
            snr = {
                w: snr_db(true_slices[w].data, recovered[w])
                for w in omegas
                if w in recovered
            }
            result.summaries[name] = PipelineSummary(
                pipeline=name,
                model_error=final_err,
                snr=snr,
                pde_forward=state.counter.forward,
                pde_adjoint=state.counter.adjoint,
            )
            write_matrix(out_dir / f"final_{name}.jfm", state.m.image())
            write_pgm(out_dir / f"final_{name}.pgm", 1.0 / np.sqrt(state.m.image()))
            for f_hz, w in zip(cfg.freqs, omegas):
                if w in recovered:
                    write_matrix(
                        out_dir / f"slice_{f_hz:g}_recovered_{name}.jfm", recovered[w]
                    )
            primary = selected[-1]
            if name == primary:
                for f_hz, w in zip(cfg.freqs, omegas):
                    if w in recovered:
                        write_matrix(
                            out_dir / f"slice_{f_hz:g}_recovered.jfm", recovered[w]
                        )
            pde_running = 0
            for record in state.history:
                pde_running += record.pde_forward + record.pde_adjoint
                row = [
                    str(record.iteration), name, str(record.band), _fmt(record.phi),
                    _fmt(record.model_error),
                ]
                for w in omegas:
                    row.append(_fmt(record.snr.get(w, float("nan"))))
                row.append(str(pde_running))
                history_rows.append(row)

        snr_cols = ",".join(f"snr_{f:g}Hz" for f in cfg.freqs)
        with open(out_dir / "history.csv", "w", newline="") as fh:
            fh.write(f"iter,pipeline,band,phi,model_error,{snr_cols},pde_count\n")
            for row in history_rows:
                fh.write(",".join(row) + "\n")

        with open(out_dir / "comparison.csv", "w", newline="") as fh:
            fh.write(f"pipeline,seed,keep,model_error,{snr_cols},pde_count\n")
            for name in selected:
                s = result.summaries[name]
                row = [name, str(cfg.seed), _fmt(float(cfg.keep)), _fmt(s.model_error)]
                for w in omegas:
                    row.append(_fmt(s.snr.get(w, float("nan"))))
                row.append(str(s.pde_total))
                fh.write(",".join(row) + "\n")
        return result
    except ConfigError as exc:
        return ExperimentResult(code=2, out_dir=out_dir, message=f"config error: {exc}")
    except LrfwiError as exc:
        return ExperimentResult(code=3, out_dir=out_dir, message=f"run failed: {exc}")


def hash_outputs(out_dir) -> str:
    """SHA-256 over every output file, for reproducibility checks."""
    digest = hashlib.sha256()
    for path in sorted(Path(out_dir).iterdir()):
        if path.is_file():
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()
