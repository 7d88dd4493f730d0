"""Dataset generation, multi-seed training, evaluation and reporting.

These functions back the ``bongard`` command line tool; they take plain
paths and configs so tests and scripts can call them directly.
"""
from __future__ import annotations

import json
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .agents import Policy
from .bp_model import BongardProblem, load_bp, save_bp
from .errors import ConfigError, InconsistentRuns, MissingFile
from .nn import FORMAT_VERSION, OptimizerState
from .synth import SINGLE_FACTOR_SUITE, Concept, SceneDescription, SynthConfig, generate_bp, parse_concept
from .training import RunConfig, SeedResult, evaluate_greedy, read_metrics, train_seed

DATA_ENV = "BONGARD_DATA"
MANIFEST = "manifest.json"
BASELINE = 72.0


def default_data_root() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def software_version() -> str:
    """``git describe``-style string when run from a checkout, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# datasets

def problem_seed(seed: int, index: int) -> int:
    return seed * 1000 + index


def generate_dataset(out_dir, concepts: Sequence[str] = SINGLE_FACTOR_SUITE, count: int = 20,
                     seed: int = 0, canvas: int = 64, leading_pairs: bool = False) -> dict:
    """Write ``count`` problems cycling through ``concepts``; returns the manifest."""
    if count < 0:
        raise ConfigError("count must be nonnegative")
    if not concepts:
        raise ConfigError("at least one concept is required")
    parsed = [parse_concept(c) for c in concepts]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(count):
        spec, concept = concepts[k % len(concepts)], parsed[k % len(parsed)]
        cfg = SynthConfig(canvas_w=canvas, canvas_h=canvas, seed=problem_seed(seed, k),
                          leading_pairs=leading_pairs)
        bp = generate_bp(concept, cfg, bp_id=k)
        name = f"{k:04d}"
        save_bp(bp, out_dir / name)
        sidecar = dict(concept.to_dict(), scenes=[s.to_dict() for s in bp.scenes])
        (out_dir / name / "concept.json").write_text(_dump(sidecar), encoding="utf-8")
        entries.append({"id": k, "dir": name, "concept": spec, "seed": cfg.seed})
    manifest = {"count": count, "seed": seed, "canvas": canvas, "leading_pairs": leading_pairs,
                "problems": entries}
    (out_dir / MANIFEST).write_text(_dump(manifest), encoding="utf-8")
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise MissingFile(f"no {MANIFEST} under {root}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_dataset(root, ids: Optional[Sequence[int]] = None) -> list[BongardProblem]:
    """Problems listed in the manifest (optionally a subset), with ground truth when present."""
    root = Path(root)
    entries = read_manifest(root)["problems"]
    if ids is not None:
        by_id = {e["id"]: e for e in entries}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise MissingFile(f"problem ids not in manifest: {missing}")
        entries = [by_id[i] for i in ids]
    out = []
    for e in entries:
        bp = load_bp(root / e["dir"], e["id"])
        sidecar = root / e["dir"] / "concept.json"
        if sidecar.is_file():
            d = json.loads(sidecar.read_text(encoding="utf-8"))
            scenes = tuple(SceneDescription.from_dict(s) for s in d.get("scenes", []))
            bp = BongardProblem(bp.id, bp.left, bp.right, Concept.from_dict(d), scenes or None)
        out.append(bp)
    return out


def default_split(manifest: dict) -> tuple[list[int], list[int]]:
    """Hold out every fourth distinct concept parameterization for evaluation.

    With fewer than two distinct concepts there is nothing to hold out and
    both lists cover the whole dataset.
    """
    entries = manifest["problems"]
    specs = sorted({e["concept"] for e in entries})
    if len(specs) < 2:
        ids = [e["id"] for e in entries]
        return ids, ids
    held = {s for n, s in enumerate(specs) if n % 4 == 3}
    train = [e["id"] for e in entries if e["concept"] not in held]
    evals = [e["id"] for e in entries if e["concept"] in held]
    return train, evals


# ---------------------------------------------------------------------------
# training

def checkpoint_dict(policy: Policy, optimizer: OptimizerState) -> dict:
    return {"format_version": FORMAT_VERSION, "policy": policy.to_dict(),
            "optimizer": optimizer.to_dict()}


def load_checkpoint(path) -> tuple[Policy, dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint {path} not found")
    d = json.loads(path.read_text(encoding="utf-8"))
    policy = Policy.from_dict(d.get("policy", d))
    return policy, d


def _train_one(args):
    data_root, config_dict, seed, out_dir = args
    config = RunConfig.from_dict(config_dict)
    bps = load_dataset(data_root, config.train_ids)
    out_dir = Path(out_dir)
    start = time.perf_counter()
    result: SeedResult = train_seed(bps, config, seed, csv_path=out_dir / f"seed{seed}.csv")
    elapsed = time.perf_counter() - start
    (out_dir / f"seed{seed}.ckpt.json").write_text(
        json.dumps(checkpoint_dict(result.policy, result.optimizer)), encoding="utf-8")
    return seed, result.final_mean(), len(result.rows), elapsed


def train_run(data_root, config: RunConfig, workers: int = 1) -> dict:
    """Train every seed of ``config``; writes CSVs, checkpoints and ``run.json``."""
    data_root = Path(data_root)
    manifest = read_manifest(data_root)
    if config.train_ids is None:
        train_ids, eval_ids = default_split(manifest)
        config = RunConfig.from_dict(dict(config.to_dict(), train_ids=train_ids,
                                          eval_ids=config.eval_ids or eval_ids))
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(str(data_root), config.to_dict(), s, str(out_dir)) for s in config.seeds]
    start = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    meta = {
        "config": config.to_dict(),
        "data_root": str(data_root),
        "version": software_version(),
        "wall_time_s": time.perf_counter() - start,
        "seeds": {str(s): {"final_mean_return": m, "episodes": n, "wall_time_s": t}
                  for s, m, n, t in results},
    }
    (out_dir / "run.json").write_text(_dump(meta), encoding="utf-8")
    return meta


# ---------------------------------------------------------------------------
# evaluation

def evaluate(checkpoint, data_root, ids: Optional[Sequence[int]] = None, oracle: bool = False) -> dict:
    policy, _ = load_checkpoint(checkpoint)
    bps = load_dataset(data_root, ids)
    return evaluate_greedy(policy, bps, oracle=oracle)


# ---------------------------------------------------------------------------
# reporting

def smooth(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; early points average what is available."""
    x = np.asarray(x, dtype=np.float64)
    if window <= 1 or x.size == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def run_curves(run_dir) -> np.ndarray:
    """Returns matrix (seeds, episodes) of raw episode returns."""
    run_dir = Path(run_dir)
    paths = sorted(run_dir.glob("seed*.csv"), key=lambda p: int(p.stem[4:]))
    if not paths:
        raise MissingFile(f"no seed CSVs in {run_dir}")
    curves = [[r["return"] for r in read_metrics(p)] for p in paths]
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise InconsistentRuns(f"{run_dir}: seeds disagree on episode counts {sorted(lengths)}")
    return np.array(curves, dtype=np.float64)


def summarize(run_dirs: Sequence, window: int = 50) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out = {}
    lengths = {}
    for d in run_dirs:
        curves = run_curves(d)
        lengths[str(d)] = curves.shape[1]
        sm = np.array([smooth(c, window) for c in curves])
        out[Path(d).name or str(d)] = (sm.mean(axis=0), sm.std(axis=0))
    if len(set(lengths.values())) > 1:
        raise InconsistentRuns(f"runs disagree on episode counts: {lengths}")
    return out


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(summary: dict, width: int = 640, height: int = 360, y_max: float = 144.0) -> str:
    pad = 40
    n = max((len(m) for m, _ in summary.values()), default=1)
    sx = lambda i: pad + (width - 2 * pad) * (i / max(n - 1, 1))
    sy = lambda v: height - pad - (height - 2 * pad) * (v / y_max)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<path d="M{pad},{pad} V{height - pad} H{width - pad}" stroke="black" fill="none"/>',
             f'<text x="{pad}" y="{pad - 8}" font-size="12">mean return (y max {y_max:g})</text>',
             f'<text x="{width - pad}" y="{height - 10}" font-size="12" text-anchor="end">episode ({n})</text>',
             f'<line class="baseline" x1="{pad}" y1="{sy(BASELINE):.2f}" x2="{width - pad}" '
             f'y2="{sy(BASELINE):.2f}" stroke="gray" stroke-dasharray="4 3"/>']
    for k, (name, (mean, _)) in enumerate(summary.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(mean))
        parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"><title>{name}</title></polyline>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(run_dirs: Sequence, out_dir, window: int = 50) -> dict:
    if window < 1:
        raise ConfigError("smoothing window must be at least 1")
    summary = summarize(run_dirs, window)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["run,episode,mean_return,std_return"]
    for name, (mean, std) in summary.items():
        lines += [f"{name},{i},{m:.6f},{s:.6f}" for i, (m, s) in enumerate(zip(mean, std))]
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "report.svg").write_text(render_svg(summary), encoding="utf-8")
    return summary
