"""Command-line experiment runner.

``iohpg run`` executes one algorithm on a preset or plant file and writes a
trace CSV plus a JSON summary into an output directory; ``iohpg validate``
lists configuration problems without running anything.

Settings are resolved in order: built-in defaults, preset parameters,
command-line flags, then the ``--config`` file (last wins). The default
output root is ``$IOHPG_OUTPUT_ROOT`` or ``./runs``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import click
import numpy as np

from . import kernels
from .baseline import optimal_reference
from .errors import ConfigError, IOHPGError
from .ioh import build_ioh, reachable_projection
from .numerics import RandomStream
from .pgm_exact import (CostModel, diagnostics, format_number, resolve_sublevel, run_model_based,
                        smoothness_constant)
from .pgm_modelfree import (SimulatedPlant, complexity_diagnostics, delta_st, estimate_v_max, exact_evaluator,
                            run_multi_episodic, run_single_episodic)
from .plant import check_L, load_plant, observability
from .presets import PRESETS, get_preset
from .realization import (realize, save_controller, simulate_dynamic_closed_loop,
                          simulate_state_feedback)

ALGORITHMS = ("model-based", "multi-episodic", "single-episodic", "baseline", "realize", "diagnostics")
OUTPUT_ENV = "IOHPG_OUTPUT_ROOT"
EXIT_CONFIG, EXIT_NUMERIC = 2, 3


@dataclass
class ExperimentConfig:
    algorithm: str = "model-based"
    preset: str | None = None
    plant: str | None = None
    L: int | None = None
    Q: list | None = None
    R: list | None = None
    alpha: float | None = None
    iters: int | None = None
    delta: float | None = None
    s: int | None = None
    N: int | None = None
    threshold: float = 0.01
    sigma: float = 0.1
    alpha_excite: float | None = None
    excite_after: int | None = None
    excite_steps: int | None = None
    max_steps: int | None = None
    tol: float | None = None
    c: float | None = None
    o: float = 1.0
    seed: int = 0
    n_seeds: int = 1
    workers: int = 1
    log_stride: int = 1000
    steps: int = 200
    gain: str | None = None
    out: str | None = None
    explicit: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("explicit")
        return d


_PRESET_KEYS = {
    "model-based": {"alpha": "alpha", "iters": "iters"},
    "multi-episodic": {"alpha": "mf_alpha", "delta": "delta", "s": "s", "N": "N"},
    "single-episodic": {"alpha": "se_alpha", "alpha_excite": "se_alpha_excite", "delta": "delta", "N": "se_N",
                        "excite_after": "excite_after", "threshold": "stationary_threshold",
                        "sigma": "excite_sigma", "excite_steps": "excite_steps"},
    "diagnostics": {"alpha": "alpha", "delta": "delta", "s": "s", "N": "N"},
}


def resolve_config(flags: dict, config_file=None) -> ExperimentConfig:
    """Merge defaults, preset parameters, flags and the config file (in that order)."""
    names = {f.name for f in fields(ExperimentConfig)} - {"explicit"}
    overrides = {k: v for k, v in flags.items() if v is not None and k in names}
    if config_file is not None:
        try:
            doc = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        overrides.update({k: v for k, v in doc.items() if v is not None})
    cfg = ExperimentConfig()
    alg = overrides.get("algorithm", cfg.algorithm)
    if alg not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}")
    preset = overrides.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        pr = get_preset(preset)
        cfg.L, cfg.Q, cfg.R = pr.L, pr.Q.tolist(), pr.R.tolist()
        for key, pkey in _PRESET_KEYS.get(alg, {}).items():
            if pkey in pr.params:
                setattr(cfg, key, pr.params[pkey])
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.explicit = sorted(overrides)
    _check(cfg)
    return cfg


def _check(cfg: ExperimentConfig) -> None:
    if (cfg.preset is None) == (cfg.plant is None):
        raise ConfigError("give exactly one of --preset or --plant")
    positive = {"alpha": cfg.alpha, "delta": cfg.delta, "s": cfg.s, "N": cfg.N, "iters": cfg.iters,
                "max_steps": cfg.max_steps, "L": cfg.L, "log_stride": cfg.log_stride, "steps": cfg.steps,
                "n_seeds": cfg.n_seeds, "workers": cfg.workers, "sigma": cfg.sigma, "o": cfg.o}
    for name, val in positive.items():
        if val is not None and not val > 0:
            raise ConfigError(f"{name} must be positive, got {val}")
    required = {
        "model-based": ("alpha", "iters"),
        "multi-episodic": ("alpha", "iters", "delta", "s", "N"),
        "single-episodic": ("alpha", "max_steps", "delta", "N"),
    }.get(cfg.algorithm, ())
    missing = [k for k in required if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"algorithm {cfg.algorithm} needs: {', '.join(missing)}")


@dataclass
class Setup:
    plant: object
    ioh: object
    proj: object
    cost: CostModel
    ref: object


def build_setup(cfg: ExperimentConfig) -> Setup:
    if cfg.preset is not None:
        plant = get_preset(cfg.preset).plant
    else:
        try:
            plant = load_plant(cfg.plant)
        except OSError as exc:
            raise ConfigError(f"cannot read plant file: {exc}") from None
    if cfg.L is None:
        raise ConfigError("history length L is required for plant files")
    L = int(cfg.L)
    Q = np.eye(plant.r) if cfg.Q is None else np.atleast_2d(np.array(cfg.Q, dtype=float))
    R = np.eye(plant.m) if cfg.R is None else np.atleast_2d(np.array(cfg.R, dtype=float))
    try:
        cost = CostModel(Q, R, cfg.c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ioh = build_ioh(plant, L)
    proj = reachable_projection(ioh)
    resolve_sublevel(ioh, proj, cost)
    ref = optimal_reference(plant, ioh, proj, Q, R)
    return Setup(plant, ioh, proj, cost, ref)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Configuration findings; never raises for numerical reasons.

    The step-size and exploration checks only apply to values the user set
    explicitly: preset values are documented empirical choices.
    """
    findings = []
    try:
        plant = get_preset(cfg.preset).plant if cfg.preset else load_plant(cfg.plant)
    except (IOHPGError, OSError, KeyError) as exc:
        return [f"plant: {exc}"]
    L = int(cfg.L or 1)
    if not check_L(plant, L):
        rank = np.linalg.matrix_rank(observability(plant, L))
        findings.append(f"rank O_{L} < n ({rank} < {plant.n}); increase L")
        return findings
    try:
        st = build_setup(cfg)
    except (IOHPGError, ValueError) as exc:
        return findings + [f"setup: {exc}"]
    if cfg.alpha is not None and "alpha" in cfg.explicit:
        q = smoothness_constant(st.ioh, st.proj, st.cost)
        if cfg.alpha >= 2.0 / q:
            findings.append(f"alpha >= 2/q ({cfg.alpha:g} >= {2.0 / q:.3g}); no monotone-descent guarantee")
    if cfg.delta is not None and "delta" in cfg.explicit:
        K = _load_gain(cfg, st)
        dst = delta_st(st.ioh, st.proj, st.cost, K)
        if cfg.delta > dst:
            findings.append(f"delta > delta_st ({cfg.delta:g} > {dst:.3g}); exploration may destabilize")
    return findings


def _load_gain(cfg, st) -> np.ndarray:
    if cfg.gain is None:
        return np.zeros((st.ioh.m, st.ioh.d))
    try:
        doc = json.loads(Path(cfg.gain).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read gain file: {exc}") from None
    K = np.atleast_2d(np.array(doc["K"] if isinstance(doc, dict) else doc, dtype=float))
    if K.shape != (st.ioh.m, st.ioh.d):
        raise ConfigError(f"gain must be {st.ioh.m}x{st.ioh.d}, got {K.shape}")
    return K


def _out_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out is not None:
        out = Path(cfg.out)
    else:
        name = cfg.preset or Path(cfg.plant).stem
        out = Path(os.environ.get(OUTPUT_ENV, "runs")) / f"{cfg.algorithm}-{name}-L{cfg.L}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(x) if not isinstance(x, str) else x for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _summary_base(cfg, st, K) -> dict:
    J = _safe_cost(st, K)
    ctrl = realize(K, st.ioh.L, st.ioh.m, st.ioh.r)
    return {
        "config": cfg.to_dict(), "seed": cfg.seed, "backend": kernels.BACKEND,
        "J_star": st.ref.J_star, "J_final": J, "gap": (J - st.ref.J_star) / st.ref.J_star,
        "K_final": K, "controller": ctrl.to_dict(),
    }


def _safe_cost(st, K) -> float:
    return exact_evaluator(st.ioh, st.proj, st.cost)(K)


def _run_model_based(cfg, st, out) -> dict:
    ck_path = out / "checkpoint.json"

    def checkpoint(i, K):
        ck_path.write_text(json.dumps({"iteration": int(i), "K": K.tolist()}))

    rep = run_model_based(st.ioh, st.proj, st.cost, cfg.alpha, int(cfg.iters), cfg.tol,
                          K0=_load_gain(cfg, st), log_stride=cfg.log_stride, checkpoint=checkpoint)
    checkpoint(rep.iterations, rep.K)
    _write_csv(out / "trace.csv", ("iter", "J", "grad_norm"), zip(rep.iters, rep.J, rep.grad_norm))
    summary = _summary_base(cfg, st, rep.K)
    diag = diagnostics(st.ioh, st.proj, st.cost, rep.K, st.ref.K_star, J_star=st.ref.J_star)
    summary.update(rep.summary())
    summary["diagnostics"] = {k: v for k, v in diag.to_dict().items() if k != "QHat"}
    return summary


def _multi_worker(args):
    cfg, seed = args
    st = build_setup(cfg)
    return seed, run_multi_episodic(
        SimulatedPlant(st.plant), st.cost, L=st.ioh.L, s=int(cfg.s), N=int(cfg.N), delta=cfg.delta,
        alpha=cfg.alpha, max_iters=int(cfg.iters), seed=seed, evaluator=exact_evaluator(st.ioh, st.proj, st.cost),
        log_stride=cfg.log_stride, K0=_load_gain(cfg, st), tol=cfg.tol)


def _run_multi(cfg, st, out) -> dict:
    jobs = [(cfg, cfg.seed + k) for k in range(cfg.n_seeds)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_multi_worker, jobs))
    else:
        results = [_multi_worker(j) for j in jobs]
    rows = []
    for seed, rep in results:
        ec = rep.extra["columns"]["episode_cost"]
        rows.extend(zip(rep.iters, rep.J, [seed] * len(rep.J), rep.grad_norm, ec))
    _write_csv(out / "trace.csv", ("iter", "J", "seed", "grad_norm", "episode_cost"), rows)
    seed0, rep0 = results[0]
    summary = _summary_base(cfg, st, rep0.K)
    summary.update(rep0.summary())
    summary["runs"] = [{"seed": s, "J_final": r.J_final, "iterations": r.iterations,
                        "failed_episodes": r.extra["failed_episodes"]} for s, r in results]
    return summary


def _run_single(cfg, st, out) -> dict:
    rep = run_single_episodic(
        SimulatedPlant(st.plant), st.cost, L=st.ioh.L, N=int(cfg.N), delta=cfg.delta, alpha=cfg.alpha,
        max_steps=int(cfg.max_steps), seed=cfg.seed, stationary_threshold=cfg.threshold, excite_sigma=cfg.sigma,
        excite_after=cfg.excite_after, alpha_excite=cfg.alpha_excite, excite_steps=cfg.excite_steps,
        evaluator=exact_evaluator(st.ioh, st.proj, st.cost), K0=_load_gain(cfg, st), tol=cfg.tol)
    cols = rep.extra["columns"]
    _write_csv(out / "trace.csv", ("t", "J", "y1", "grad_norm", "rank", "excited"),
               zip(cols["t"], rep.J, cols["y1"], rep.grad_norm, cols["rank"], cols["excited"]))
    summary = _summary_base(cfg, st, rep.K)
    summary.update(rep.summary())
    summary["excitations"] = rep.extra["excitations"]
    return summary


def _run_baseline(cfg, st, out) -> dict:
    ref = st.ref
    return {"config": cfg.to_dict(), "seed": cfg.seed, "J_star": ref.J_star, "K_SF": ref.K_SF,
            "K_star": ref.K_star, "X": ref.X, "J_zero": _safe_cost(st, np.zeros((st.ioh.m, st.ioh.d))),
            "c": st.cost.c}


def _run_realize(cfg, st, out) -> dict:
    K = st.ref.K_star if cfg.gain is None else _load_gain(cfg, st)
    L, m, r = st.ioh.L, st.ioh.m, st.ioh.r
    ctrl = realize(K, L, m, r)
    stream = RandomStream(cfg.seed)
    x0 = stream.normal(st.plant.n)
    u_init = stream.normal(L * m)
    dyn = simulate_dynamic_closed_loop(st.plant, ctrl, x0, u_init, T=cfg.steps)
    sf = simulate_state_feedback(st.plant, st.ref.K_SF, L, x0, u_init, T=cfg.steps)
    save_controller(ctrl, out / "controller.json", {"config": cfg.to_dict(), "seed": cfg.seed})
    rows = []
    for variant, tr in (("dynamic", dyn), ("state-feedback", sf)):
        for t in range(cfg.steps):
            y = tr.y_seq[t]
            rows.append((t, y[0], y[1] if r > 1 else 0.0, variant))
    _write_csv(out / "trace.csv", ("t", "y1", "y2", "variant"), rows)
    return {"config": cfg.to_dict(), "seed": cfg.seed, "controller": ctrl.to_dict(), "J": _safe_cost(st, K),
            "J_star": st.ref.J_star, "max_output_gap": float(np.abs(dyn.y_seq - sf.y_seq).max())}


def _run_diagnostics(cfg, st, out) -> dict:
    K = _load_gain(cfg, st)
    d = diagnostics(st.ioh, st.proj, st.cost, K, st.ref.K_star, alpha=cfg.alpha, J_star=st.ref.J_star)
    summary = {"config": cfg.to_dict(), "seed": cfg.seed,
               "diagnostics": {k: v for k, v in d.to_dict().items() if k != "QHat"}}
    if cfg.delta is not None and cfg.s is not None and cfg.N is not None:
        v_max = estimate_v_max(st.proj, RandomStream(cfg.seed))
        cd = complexity_diagnostics(st.ioh, st.proj, st.cost, K, delta=cfg.delta, N=int(cfg.N), s=int(cfg.s),
                                    o=cfg.o, v_max=v_max, alpha=cfg.alpha, K_star=st.ref.K_star)
        summary["complexity"] = cd.to_dict()
    return summary


_RUNNERS = {
    "model-based": _run_model_based, "multi-episodic": _run_multi, "single-episodic": _run_single,
    "baseline": _run_baseline, "realize": _run_realize, "diagnostics": _run_diagnostics,
}


def run(cfg: ExperimentConfig) -> Path:
    """Run the configured algorithm and write its artifacts; returns the output directory."""
    st = build_setup(cfg)
    out = _out_dir(cfg)
    summary = _RUNNERS[cfg.algorithm](cfg, st, out)
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return out


# -- click front end ---------------------------------------------------------

def _common(f):
    opts = [
        click.option("--preset", type=str, default=None, help="Built-in plant and hyperparameters."),
        click.option("--plant", type=str, default=None, help="Plant definition JSON file."),
        click.option("--config", "config_file", type=click.Path(), default=None,
                     help="JSON config; its values override flags."),
        click.option("--algorithm", type=click.Choice(ALGORITHMS), default=None),
        click.option("--L", "L", type=int, default=None, help="History length."),
        click.option("--alpha", type=float, default=None),
        click.option("--iters", type=float, default=None, help="Gradient iterations (accepts 5e6)."),
        click.option("--delta", type=float, default=None),
        click.option("--s", "s", type=int, default=None, help="Episodes per iteration."),
        click.option("--N", "N", type=int, default=None, help="Episode / window length."),
        click.option("--threshold", type=float, default=None, help="Stationarity threshold on ||v||."),
        click.option("--sigma", type=float, default=None, help="Excitation variance."),
        click.option("--alpha-excite", type=float, default=None),
        click.option("--excite-after", type=int, default=None),
        click.option("--excite-steps", type=int, default=None),
        click.option("--max-steps", type=float, default=None),
        click.option("--tol", type=float, default=None),
        click.option("--c", "c", type=float, default=None, help="Sublevel bound (default 2 J(0))."),
        click.option("--o", "o", type=float, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--n-seeds", type=int, default=None),
        click.option("--workers", type=int, default=None),
        click.option("--log-stride", type=int, default=None),
        click.option("--steps", type=int, default=None),
        click.option("--gain", type=str, default=None, help="JSON file with an initial/evaluated gain K."),
        click.option("--out", type=str, default=None, help="Output directory."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _flags(kw) -> tuple[dict, str | None]:
    config_file = kw.pop("config_file")
    for k in ("iters", "max_steps"):
        if kw.get(k) is not None:
            kw[k] = int(kw[k])
    return kw, config_file


@click.group()
def main():
    """Policy-gradient design of IOH output-feedback controllers."""


@main.command("run")
@_common
def run_cmd(**kw):
    """Run one experiment and write trace.csv and summary.json."""
    flags, config_file = _flags(kw)
    try:
        cfg = resolve_config(flags, config_file)
        out = run(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (IOHPGError, np.linalg.LinAlgError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    click.echo(str(out))


@main.command("validate")
@_common
def validate_cmd(**kw):
    """Print configuration findings (one per line)."""
    flags, config_file = _flags(kw)
    try:
        cfg = resolve_config(flags, config_file)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for finding in validate(cfg):
        click.echo(finding)


if __name__ == "__main__":
    main()
