"""Command line entry point: ``corrbasis <command> [options]``.

Commands
--------
synth     generate a synthetic cohort to disk
fit       train on a cohort; writes checkpoint.json and trace.csv
predict   checkpoint + matrices -> predictions.csv
cv        cross-validated evaluation of the joint model -> report.json
baseline  cross-validated (k)PCA + random forest -> report.json
sweep     recovery sweep over noise x sparsity -> sweep_grid.csv / sweep_summary.json
grid      hyperparameter search inside training folds -> best_config.json

Every command writes the fully resolved configuration to
``<out>/config.json``; passing that file back via ``--config`` reproduces
the run.  Failures print one line ``error code=<n> kind=<type> msg=<text>``
to stderr and exit with 2 (configuration), 3 (data) or 4 (numerical).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .baselines import ForestConfig, run_baseline
from .model import PRESETS, DataError, HyperParams
from .optimizer import DivergenceError, TrainerConfig, fit, initialize
from .predictor import FoldSplit, predict_subject, rmse, run_cross_validation
from .qp import QpError
from .synthetic import GeneratorConfig, generate_cohort, robustness_sweep

logger = logging.getLogger("corrbasis")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# -- configuration -----------------------------------------------------------

SECTIONS = {
    "hyperparams": HyperParams,
    "trainer": None,
    "generator": GeneratorConfig,
    "forest": ForestConfig,
    "split": None,
    "grid": None,
    "sweep": None,
    "baseline": None,
    "paths": None,
}
TRAINER_KEYS = {"prox_inner_iters", "line_search", "trace_every", "standard_prox"}
SPLIT_KEYS = {"fold_count", "rng_seed"}
GRID_KEYS = {"gamma", "lambda1", "lambda2", "lambda3", "K", "inner_folds", "outer_fold"}
SWEEP_KEYS = {"noise_levels", "sparsity_levels", "trials"}
BASELINE_KEYS = {"which", "pca_components", "kpca_components", "rbf_coeff"}
PATH_KEYS = {"matrices", "scores", "checkpoint", "out"}


def _allowed(section):
    cls = SECTIONS[section]
    if cls is not None:
        return {f.name for f in fields(cls)}
    return {"trainer": TRAINER_KEYS, "split": SPLIT_KEYS, "grid": GRID_KEYS,
            "sweep": SWEEP_KEYS, "baseline": BASELINE_KEYS, "paths": PATH_KEYS}[section]


def load_config(path) -> dict:
    """Read a JSON run configuration, rejecting unknown sections and keys."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for section, values in cfg.items():
        if section == "command":
            continue
        if section == "deflate":
            if not isinstance(values, bool):
                raise ConfigError("deflate must be true or false")
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        unknown = set(values) - _allowed(section)
        if unknown:
            raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    for key in ("matrices", "scores", "checkpoint"):
        p = cfg.get("paths", {}).get(key)
        if p is not None and not Path(p).exists():
            raise ConfigError(f"path in config does not exist: {p}")
    return cfg


def _hyperparams(args, cfg) -> HyperParams:
    base = PRESETS[args.preset] if getattr(args, "preset", None) else HyperParams()
    hp = replace(base, **cfg.get("hyperparams", {}))
    overrides = {k: getattr(args, k) for k in
                 ("gamma", "lambda1", "lambda2", "lambda3", "t", "K", "max_outer_iters")
                 if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    try:
        return replace(hp, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _trainer(args, cfg, hp) -> TrainerConfig:
    t = dict(cfg.get("trainer", {}))
    if getattr(args, "line_search", None) is not None:
        t["line_search"] = args.line_search
    return TrainerConfig(hp=hp, **t)


def _generator(args, cfg) -> GeneratorConfig:
    g = dict(cfg.get("generator", {}))
    for name, key in (("M", "M"), ("N", "N"), ("K", "K_true"), ("noise", "sigma_gamma"),
                      ("sparsity", "sparsity_level"), ("overlap", "overlap_level"),
                      ("sigma_y", "sigma_y"), ("seed", "rng_seed")):
        v = getattr(args, name, None)
        if v is not None:
            g[key] = v
    try:
        return GeneratorConfig(**g)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _split_cfg(args, cfg):
    s = dict(cfg.get("split", {}))
    if getattr(args, "folds", None) is not None:
        s["fold_count"] = args.folds
    if getattr(args, "split_seed", None) is not None:
        s["rng_seed"] = args.split_seed
    return {"fold_count": s.get("fold_count", 10), "rng_seed": s.get("rng_seed", 0)}


def _paths(args, cfg):
    p = dict(cfg.get("paths", {}))
    for key in PATH_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            p[key] = str(v)
    return p


def _need(paths, *keys):
    for k in keys:
        if not paths.get(k):
            raise ConfigError(f"missing required path --{k}")
        if k != "out" and not Path(paths[k]).exists():
            raise ConfigError(f"path does not exist: {paths[k]}")


def _deflate(args, cfg) -> bool:
    return bool(args.deflate or cfg.get("deflate", False))


def _load(paths, args, cfg):
    return io.load_cohort(paths["matrices"], paths["scores"], deflate=_deflate(args, cfg))


def _log_config(out, resolved):
    io.dump_json(Path(out) / "config.json", resolved)


# -- commands ----------------------------------------------------------------

def cmd_synth(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "out")
    gen = _generator(args, cfg)
    data, truth = generate_cohort(gen)
    out = Path(paths["out"])
    io.write_cohort(data, out / "matrices", out / "scores.csv")
    io.dump_json(out / "ground_truth.json", {
        "B_true": truth.B_true.tolist(), "C_true": truth.C_true.tolist(),
        "w_true": truth.w_true.tolist()})
    _log_config(out, {"command": "synth", "generator": asdict(gen), "paths": paths})


def cmd_fit(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "matrices", "scores", "out")
    hp = _hyperparams(args, cfg)
    tcfg = _trainer(args, cfg, hp)
    data = _load(paths, args, cfg)
    model, trace = fit(data, tcfg)
    out = Path(paths["out"])
    io.write_checkpoint(out / "checkpoint.json", model, hp, len(trace))
    io.write_trace_csv(out / "trace.csv", trace)
    _log_config(out, {"command": "fit", "hyperparams": asdict(hp),
                      "trainer": _trainer_dict(tcfg), "paths": paths,
                      "deflate": _deflate(args, cfg)})


def _trainer_dict(tcfg):
    return {k: getattr(tcfg, k) for k in sorted(TRAINER_KEYS)}


def cmd_predict(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "checkpoint", "matrices", "out")
    model, hp, _ = io.read_checkpoint(paths["checkpoint"])
    scores = paths.get("scores")
    data = io.load_cohort(paths["matrices"], scores, deflate=_deflate(args, cfg),
                          require_scores=scores is not None)
    rows = []
    for sid, g in zip(data.subject_ids, data.gammas):
        rows.append([sid, io.fmt(predict_subject(model.basis, model.weights, g, hp))])
    out = Path(paths["out"])
    io.atomic_write(out / "predictions.csv",
                    io._csv_text(rows, header=["subject_id", "predicted"]))
    _log_config(out, {"command": "predict", "paths": paths, "deflate": _deflate(args, cfg)})


def cmd_cv(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "matrices", "scores", "out")
    hp = _hyperparams(args, cfg)
    tcfg = _trainer(args, cfg, hp)
    s = _split_cfg(args, cfg)
    data = _load(paths, args, cfg)
    split = FoldSplit.make(data.subject_count, s["fold_count"], s["rng_seed"])
    report = run_cross_validation(data, tcfg, split, n_jobs=args.threads)
    out = Path(paths["out"])
    io.emit_report(report, out / "report.json")
    _log_config(out, {"command": "cv", "hyperparams": asdict(hp),
                      "trainer": _trainer_dict(tcfg), "split": s, "paths": paths,
                      "deflate": _deflate(args, cfg)})


def cmd_baseline(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "matrices", "scores", "out")
    b = dict(cfg.get("baseline", {}))
    if args.which is not None:
        b["which"] = args.which
    b.setdefault("which", "pca")
    if args.rbf_coeff is not None:
        b["rbf_coeff"] = args.rbf_coeff
    fcfg = dict(cfg.get("forest", {}))
    if args.seed is not None:
        fcfg["rng_seed"] = args.seed
    forest = ForestConfig(**fcfg)
    s = _split_cfg(args, cfg)
    data = _load(paths, args, cfg)
    split = FoldSplit.make(data.subject_count, s["fold_count"], s["rng_seed"])
    kw = {k: v for k, v in b.items() if k != "which"}
    report = run_baseline(data, b["which"], split, forest, **kw)
    out = Path(paths["out"])
    io.emit_report(report, out / "report.json")
    _log_config(out, {"command": "baseline", "baseline": b, "forest": asdict(forest),
                      "split": s, "paths": paths, "deflate": _deflate(args, cfg)})


def cmd_sweep(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "out")
    sw = dict(cfg.get("sweep", {}))
    if args.noise_levels:
        sw["noise_levels"] = args.noise_levels
    if args.sparsity_levels:
        sw["sparsity_levels"] = args.sparsity_levels
    if args.trials is not None:
        sw["trials"] = args.trials
    sw.setdefault("noise_levels", [0.01, 0.05, 0.1, 0.2])
    sw.setdefault("sparsity_levels", [0.1, 0.2, 0.3, 0.4])
    sw.setdefault("trials", 5)
    gen = _generator(args, cfg)
    hp = _hyperparams(args, cfg) if cfg.get("hyperparams") or args.preset else None
    if hp is None:
        from .synthetic import synthetic_hyperparams
        hp = synthetic_hyperparams(gen.K_true)
        over = {k: getattr(args, k) for k in ("gamma", "lambda1", "lambda2", "lambda3",
                                              "t", "max_outer_iters")
                if getattr(args, k, None) is not None}
        hp = replace(hp, **over)
    hp = replace(hp, K=gen.K_true)
    from .synthetic import synthetic_trainer_config
    tcfg = replace(synthetic_trainer_config(hp), **cfg.get("trainer", {}))
    result = robustness_sweep(sw["noise_levels"], sw["sparsity_levels"], sw["trials"],
                              gen, tcfg, n_jobs=args.threads)
    out = Path(paths["out"])
    io.write_sweep(out, result)
    _log_config(out, {"command": "sweep", "sweep": sw, "generator": asdict(gen),
                      "hyperparams": asdict(hp), "trainer": _trainer_dict(tcfg),
                      "paths": paths})


def grid_candidates(grid: dict, base: HyperParams):
    keys = [k for k in ("gamma", "lambda1", "lambda2", "lambda3", "K") if k in grid]
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield replace(base, **dict(zip(keys, combo)))


def grid_search(data, tcfg: TrainerConfig, grid: dict, inner_folds: int = 3,
                seed: int = 0, n_jobs: int = 1):
    """Rank candidate hyperparameters by pooled validation rMSE.

    ``data`` must already be restricted to training subjects; validation
    folds are carved out of it.  Returns a list of ``(rmse, hp)`` sorted
    best first.
    """
    split = FoldSplit.make(data.subject_count, inner_folds, seed)
    results = []
    for hp in grid_candidates(grid, tcfg.hp):
        report = run_cross_validation(data, replace(tcfg, hp=hp), split, n_jobs=n_jobs)
        t = report.test_rows()
        score = rmse([r.true for r in t], [r.pred for r in t])
        results.append((score, hp))
    results.sort(key=lambda r: r[0])
    return results


def cmd_grid(args, cfg):
    paths = _paths(args, cfg)
    _need(paths, "matrices", "scores", "out")
    g = dict(cfg.get("grid", {}))
    for key in ("gamma", "lambda1", "lambda2", "lambda3", "K"):
        v = getattr(args, f"grid_{key}", None)
        if v:
            g[key] = v
    if args.inner_folds is not None:
        g["inner_folds"] = args.inner_folds
    if args.outer_fold is not None:
        g["outer_fold"] = args.outer_fold
    hp = _hyperparams(args, cfg)
    tcfg = _trainer(args, cfg, hp)
    s = _split_cfg(args, cfg)
    data = _load(paths, args, cfg)
    if g.get("outer_fold") is not None:
        split = FoldSplit.make(data.subject_count, s["fold_count"], s["rng_seed"])
        train = np.flatnonzero(split.assignments != g["outer_fold"])
        data = data.subset(train)
    ranked = grid_search(data, tcfg, g, g.get("inner_folds", 3), s["rng_seed"], args.threads)
    out = Path(paths["out"])
    best_rmse, best = ranked[0]
    io.dump_json(out / "best_config.json", {
        "format_version": io.FORMAT_VERSION,
        "hyperparams": asdict(best),
        "validation_rmse": best_rmse,
        "ranking": [{"validation_rmse": r, "hyperparams": asdict(h)} for r, h in ranked],
    })
    _log_config(out, {"command": "grid", "grid": g, "hyperparams": asdict(hp),
                      "trainer": _trainer_dict(tcfg), "split": s, "paths": paths,
                      "deflate": _deflate(args, cfg)})


# -- parser ------------------------------------------------------------------

def _add_hp(p):
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--max-outer-iters", dest="max_outer_iters", type=int)
    p.add_argument("--line-search", dest="line_search", action="store_true", default=None)


def _add_data(p, scores=True):
    p.add_argument("--matrices", type=Path)
    if scores:
        p.add_argument("--scores", type=Path)
    p.add_argument("--deflate", action="store_true")


def _add_split(p):
    p.add_argument("--folds", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)


def build_parser():
    parser = _Parser(prog="corrbasis", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common("synth", "generate a synthetic cohort")
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--overlap", type=float)
    p.add_argument("--sigma-y", dest="sigma_y", type=float)

    p = common("fit", "train the joint model")
    _add_data(p)
    _add_hp(p)

    p = common("predict", "predict scores for new matrices")
    _add_data(p)
    p.add_argument("--checkpoint", type=Path)

    p = common("cv", "cross-validate the joint model")
    _add_data(p)
    _add_hp(p)
    _add_split(p)

    p = common("baseline", "cross-validate a (k)PCA + random forest baseline")
    _add_data(p)
    _add_split(p)
    p.add_argument("--which", choices=["pca", "kpca"])
    p.add_argument("--rbf-coeff", dest="rbf_coeff", type=float)

    p = common("sweep", "basis-recovery sweep on synthetic data")
    _add_hp(p)
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--noise-levels", dest="noise_levels", type=float, nargs="+")
    p.add_argument("--sparsity-levels", dest="sparsity_levels", type=float, nargs="+")
    p.add_argument("--trials", type=int)

    p = common("grid", "hyperparameter search within training folds")
    _add_data(p)
    _add_hp(p)
    _add_split(p)
    for key, typ in (("gamma", float), ("lambda1", float), ("lambda2", float),
                     ("lambda3", float), ("K", int)):
        p.add_argument(f"--grid-{key}", dest=f"grid_{key}", type=typ, nargs="+")
    p.add_argument("--inner-folds", dest="inner_folds", type=int)
    p.add_argument("--outer-fold", dest="outer_fold", type=int)
    return parser


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv,
            "baseline": cmd_baseline, "sweep": cmd_sweep, "grid": cmd_grid}


def _fail(code, exc):
    msg = " ".join(str(exc).split())
    print(f"error code={code} kind={type(exc).__name__} msg={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("missing subcommand")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config) if args.config else {}
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DataError, OSError) as exc:
        return _fail(EXIT_DATA, exc)
    except (DivergenceError, QpError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (TypeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
