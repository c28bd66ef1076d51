"""Seed sweeps, run directories and comparison reports.

A run directory holds ``manifest.json`` (resolved config, seed, versions),
``curve.csv``, an optional ``bonuses.csv`` and ``checkpoints/epoch_XXXX/``
snapshots written every ten epochs. An experiment directory holds one
``seed_<k>`` run directory per seed plus ``aggregate.csv`` and ``auc.csv``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .agent import Run
from .envs import optimal_return, write_pgm
from .errors import ConfigError
from .metrics import LearningCurve, aggregate_trials, auc100

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "mean_test_score", "mean_residual", "residual_cv", "sigma_version")
BONUS_COLUMNS = ("t", "e", "e_bar", "max_e", "r", "r_bonus")
AUC_COLUMNS = ("strategy", "seed", "auc100", "final_score")
CHECKPOINT_EVERY = 10


class RunFailure(RuntimeError):
    """A run raised; carries the seed so the CLI can report it."""

    def __init__(self, seed, cause):
        super().__init__(f"run with seed {seed} failed: {type(cause).__name__}: {cause}")
        self.seed = seed
        self.cause = cause


@dataclass
class RunResult:
    seed: int
    run_dir: Path
    curve: LearningCurve
    residuals: list


def _fmt(v):
    # repr round-trips floats exactly, which keeps reruns byte-identical
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows):
    Path(path).write_text(format_csv(header, rows))


def write_manifest(run_dir, cfg, seed, extra=None):
    manifest = {
        "config": config_mod.to_json(cfg.flat),
        "seed": int(seed),
        "strategy": cfg.agent.strategy.kind,
        "env": cfg.env_name,
        "versions": {"mpbonus": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest.update(extra or {})
    (Path(run_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(run_dir):
    path = Path(run_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError:
        raise ConfigError(f"{run_dir} has no manifest.json") from None


def save_checkpoint(run, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    run.qnet.save(directory / "qnet.bin")
    if run.encoder is not None:
        run.encoder.save(directory / "encoder.bin")
    if run.dynamics is not None:
        run.dynamics.net_.save(directory / "dynamics.bin")


def execute_run(cfg, seed, run_dir, log_bonuses=False):
    """One full seeded run written to ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir, cfg, seed)

    def checkpoint(run, record):
        if record.epoch % CHECKPOINT_EVERY == 0:
            save_checkpoint(run, run_dir / "checkpoints" / f"epoch_{record.epoch:04d}")

    try:
        run = Run(cfg.make_env(), cfg.agent, seed, log_bonuses).run(checkpoint)
    except Exception as exc:
        raise RunFailure(seed, exc) from exc
    _write_csv(run_dir / "curve.csv", CURVE_COLUMNS,
               [(r.epoch, r.mean_test_score, r.mean_residual, r.residual_cv, r.sigma_version)
                for r in run.records])
    if log_bonuses:
        _write_csv(run_dir / "bonuses.csv", BONUS_COLUMNS, run.bonus_log)
    return RunResult(int(seed), run_dir, run.curve, run.residuals)


def _execute(args):
    flat, seed, run_dir, log_bonuses = args
    return execute_run(config_mod.from_flat(flat), seed, run_dir, log_bonuses)


def worker_count(jobs=None):
    n = os.cpu_count() or 1
    return max(1, min(n, jobs) if jobs else n)


def run_seeds(cfg, output_dir, jobs=None, log_bonuses=False):
    """Run every seed of ``cfg`` into ``output_dir/seed_<k>``, in order of seeds."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg.flat, s, output_dir / f"seed_{s}", log_bonuses) for s in cfg.seeds]
    workers = min(worker_count(jobs), len(tasks))
    if workers <= 1:
        return [_execute(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute, tasks))


def write_aggregate(output_dir, cfg, results):
    """``aggregate.csv`` (mean curve) and ``auc.csv`` (per seed plus the mean)."""
    output_dir = Path(output_dir)
    ref = optimal_return(cfg.make_env())
    mean = aggregate_trials([r.curve for r in results])
    _write_csv(output_dir / "aggregate.csv", ("epoch", "mean_test_score"),
               zip(mean.epochs, mean.scores))
    kind = cfg.agent.strategy.kind
    rows = [(kind, r.seed, _auc_or_nan(r.curve, ref), r.curve.scores[-1]) for r in results]
    rows.append((kind, "mean", _auc_or_nan(mean, ref), mean.scores[-1]))
    _write_csv(output_dir / "auc.csv", AUC_COLUMNS, rows)
    return mean


def run_experiment(cfg, output_dir=None, jobs=None, log_bonuses=False):
    """Run all seeds and write the aggregate curve and AUC table."""
    output_dir = Path(output_dir or cfg.output_dir)
    results = run_seeds(cfg, output_dir, jobs, log_bonuses)
    write_aggregate(output_dir, cfg, results)
    return results


def _auc_or_nan(curve, ref):
    return auc100(curve, ref).value if len(curve) >= 2 else float("nan")


def read_curve(path):
    """Rows of a ``curve.csv`` as a dict of numpy columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} holds no epochs")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def curve_from_csv(path):
    cols = read_curve(path)
    return LearningCurve(tuple(cols["epoch"].astype(int)), tuple(cols["mean_test_score"]))


def auc_table(curve_paths):
    """``(strategy, seed, auc100, final_score)`` for each ``curve.csv``.

    Strategy, seed and the reference score come from the manifest stored
    next to each curve.
    """
    rows = []
    for path in curve_paths:
        path = Path(path)
        manifest = read_manifest(path.parent)
        ref = optimal_return(config_mod.env_from_flat(config_mod.resolve(manifest["config"])))
        curve = curve_from_csv(path)
        rows.append((manifest["strategy"], manifest["seed"], _auc_or_nan(curve, ref),
                     curve.scores[-1]))
    return rows


def format_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[_fmt(v) for v in row] for row in rows])
    return buf.getvalue()


# ---------------------------------------------------------------- plotting

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def svg_plot(series, title="", width=640, height=400):
    """Line chart with one polyline per ``{label: LearningCurve}`` entry."""
    left, right, top, bottom = 60, 150, 30, 45
    pw, ph = width - left - right, height - top - bottom
    xs = [e for c in series.values() for e in c.epochs] or [1]
    ys = [s for c in series.values() for s in c.scores] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left}" y="18" font-size="14" font-family="sans-serif">{_esc(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 6}" y="{py(v) + 4:.1f}" font-size="10" text-anchor="end" '
                   f'font-family="sans-serif">{v:.2g}</text>')
    for v in np.linspace(x0, x1, 6):
        out.append(f'<text x="{px(v):.1f}" y="{top + ph + 15}" font-size="10" '
                   f'text-anchor="middle" font-family="sans-serif">{v:.0f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 8}" font-size="11" text-anchor="middle" '
               'font-family="sans-serif">epoch</text>')
    for k, (label, curve) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(e):.2f},{py(s):.2f}" for e, s in zip(curve.epochs, curve.scores))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 * k + 10
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}" font-size="11" '
                   f'font-family="sans-serif">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------- reports

def _load_runs(directory):
    """Manifests and curves of a run directory or of an experiment directory."""
    directory = Path(directory)
    if (directory / "curve.csv").exists():
        dirs = [directory]
    else:
        dirs = sorted(p.parent for p in directory.glob("*/curve.csv"))
    if not dirs:
        raise ConfigError(f"{directory} contains no curve.csv")
    return [(read_manifest(d), curve_from_csv(d / "curve.csv")) for d in dirs]


def _env_key(manifest):
    return {k: v for k, v in manifest["config"].items() if k.startswith("env.")}


@dataclass
class Comparison:
    rows: list
    winner: str
    svg: str


def compare(directories, output_dir=None, title="test score"):
    """Overlay aggregate curves and pick the AUC-100 winner (or ``"tie"``)."""
    directories = [Path(d) for d in directories]
    if len(directories) < 2:
        raise ConfigError("compare needs at least two run directories")
    groups = [_load_runs(d) for d in directories]
    env_keys = [_env_key(m) for g in groups for m, _ in g]
    if any(k != env_keys[0] for k in env_keys):
        raise ConfigError("runs were made on different environments; refusing to compare "
                          f"{env_keys[0]} with {next(k for k in env_keys if k != env_keys[0])}")
    ref = optimal_return(config_mod.env_from_flat(config_mod.resolve(groups[0][0][0]["config"])))
    series, rows = {}, []
    for d, group in zip(directories, groups):
        label = group[0][0]["strategy"]
        if label in series:
            label = f"{label} ({d.name})"
        mean = aggregate_trials([c for _, c in group])
        series[label] = mean
        rows.append((label, str(d), len(group), _auc_or_nan(mean, ref), mean.scores[-1]))
    aucs = sorted((r[3] for r in rows), reverse=True)
    winner = "tie" if abs(aucs[0] - aucs[1]) <= 1e-12 else max(rows, key=lambda r: r[3])[0]
    svg = svg_plot(series, title)
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(output_dir / "compare.csv",
                   ("label", "directory", "n_runs", "auc100", "final_score"), rows)
        (output_dir / "compare.svg").write_text(svg)
        (output_dir / "winner.txt").write_text(winner + "\n")
    return Comparison(rows, winner, svg)


def mean_residual_cv(result):
    """Mean over epochs of the per-epoch coefficient of variation of the normalised error."""
    cvs = np.array([cv for _, cv in result.residuals], dtype=np.float64)
    return float(np.nanmean(cvs)) if np.any(np.isfinite(cvs)) else float("nan")


def ablation_raw_pixels(cfg, output_dir=None, jobs=None):
    """Bonus dispersion with raw-pixel codes next to learned codes, same seeds.

    Writes ``ablation.csv`` with columns ``seed, cv_raw, cv_encoded`` and
    returns its rows. The encoded run uses the configured regime, or the
    dynamic one if the config already asks for raw pixels.
    """
    output_dir = Path(output_dir or cfg.output_dir)
    encoded_regime = cfg.flat["encoder.regime"]
    if encoded_regime == "raw_pixels":
        encoded_regime = "dynamic"
    raw = cfg.with_overrides(**{"strategy.kind": "model_bonus", "encoder.regime": "raw_pixels"})
    enc = cfg.with_overrides(**{"strategy.kind": "model_bonus", "encoder.regime": encoded_regime})
    raw_results = run_experiment(raw, output_dir / "raw_pixels", jobs)
    enc_results = run_experiment(enc, output_dir / encoded_regime, jobs)
    rows = [(r.seed, mean_residual_cv(r), mean_residual_cv(e))
            for r, e in zip(raw_results, enc_results)]
    _write_csv(output_dir / "ablation.csv", ("seed", "cv_raw", "cv_encoded"), rows)
    lower = sum(1 for _, a, b in rows if a < b)
    (output_dir / "ablation_summary.txt").write_text(
        f"cv_raw < cv_encoded in {lower} of {len(rows)} seeds\n")
    return rows


def tap_sweep(cfg, taps=(4, 6), output_dir=None, jobs=None):
    """One experiment per encoder tap layer; AUC table and overlay plot."""
    if cfg.agent.strategy.kind != "model_bonus":
        raise ConfigError("tap-sweep needs strategy.kind = model_bonus")
    output_dir = Path(output_dir or cfg.output_dir)
    env = cfg.make_env()
    ref = optimal_return(env)
    series, rows = {}, []
    for tap in taps:
        tap_cfg = cfg.with_overrides(**{"encoder.tap_index": int(tap)})
        if tap_cfg.agent.encoder.regime == "raw_pixels":
            raise ConfigError("tap-sweep needs an autoencoder regime, not raw_pixels")
        width = tap_cfg.agent.encoder.spec(env.frame_width).tap_width
        results = run_experiment(tap_cfg, output_dir / f"tap_{tap}", jobs)
        mean = aggregate_trials([r.curve for r in results])
        series[f"tap {tap}"] = mean
        rows.append((tap, width, _auc_or_nan(mean, ref), mean.scores[-1]))
    _write_csv(output_dir / "tap_sweep.csv", ("tap_index", "encode_dim", "auc100", "final_score"),
               rows)
    (output_dir / "tap_sweep.svg").write_text(svg_plot(series, "test score by encoder tap"))
    return rows


def dump_frames(env, n_frames, output_dir, seed=0):
    """Write ``n_frames`` frames of uniformly random play as PGM files."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    frame = env.reset(seed=seed)
    paths = []
    for k in range(n_frames):
        path = output_dir / f"frame_{k:05d}.pgm"
        write_pgm(path, frame)
        paths.append(path)
        if env.episode_over:
            frame = env.reset(seed=seed)
        else:
            frame, _, _ = env.step(int(rng.integers(env.n_actions)))
    return paths
