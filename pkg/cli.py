"""Experiment runner: simulate | game | verify | bounds.

Exit codes: 0 success, 1 invalid input, 2 a hard bound or check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

from tools.config import (BoundsConfig, EnvConfig, GameConfig, LearnerConfig, ModelShorthand,
                          SimulateConfig, VerifyConfig, build_model, load_config, with_overrides)
from tools.errors import (BoundViolationError, CheckFailure, DegenerateModelError, DomainError,
                          MismatchError, SpecError)
from tools.exporters import (bounds_to_markdown, report_to_dict, trace_to_csv,
                             verify_report_to_markdown, write_report)
from tools.gev_models import GevModel, mnl
from tools.settings import LOG_LEVEL, resolve_seed
from agent.environments import (bound_report, bounds_table, hannan_slope, make_environment,
                                oftrl_report, run_odp)
from agent.game_lab import (BUILTIN_GAMES, GameDoc, GameSpec, cce_gap, game_from_doc,
                            random_game, run_repeated_game)
from agent.learners import bound_at_eta, oftrl_eta, oftrl_init, optimal_eta, ssa_init
from agent.verify import run_verify

logger = logging.getLogger("gevregret")

CCE_SLACK = 1e-9
VALIDATION_ERRORS = (SpecError, DomainError, DegenerateModelError, MismatchError, ValidationError,
                     FileNotFoundError, json.JSONDecodeError)
ASSERTION_ERRORS = (BoundViolationError, CheckFailure)


@dataclass
class RunResult:
    report: dict
    files: list[Path] = field(default_factory=list)


# ================================================================
# 🧠 LEARNER FACTORY
# ================================================================
def make_learner(model: GevModel, cfg: LearnerConfig, T: int, u_max: float):
    if cfg.algorithm == "oftrl":
        if cfg.eta == "optimal":
            eta, _ = oftrl_eta(model, T, cfg.recency_S, cfg.variation_B, cfg.bound_variant)
        else:
            eta = cfg.eta
        return oftrl_init(model, eta, cfg.recency_S, u_max)
    eta = optimal_eta(model, T, u_max, cfg.bound_variant)[0] if cfg.eta == "optimal" else cfg.eta
    return ssa_init(model, eta, u_max)


# ================================================================
# 🚀 COMMANDS
# ================================================================
def _simulate_once(config: SimulateConfig, model: GevModel, T: int, seed: int, out: Path):
    learner = make_learner(model, config.learner, T, config.u_max)
    env = make_environment(config.env.kind, model.n_alternatives, config.u_max, seed,
                           **config.env.params)
    logger.info("simulate: %s N=%d, %s, T=%d, seed=%d, eta=%.6g", model.kind.value,
                model.n_alternatives, env.kind, T, seed, learner.eta)
    trace = run_odp(learner, env, T, seed)

    report = bound_report(model, T, config.u_max, trace).model_dump()
    report.update(algorithm=config.learner.algorithm, environment=env.kind, seed=seed)
    ratio = report["ratio"]
    if config.learner.algorithm == "oftrl":
        optimistic = oftrl_report(learner, trace)
        report["oftrl"] = optimistic.model_dump()
        ratio = optimistic.ratio

    files = [trace_to_csv(trace, out / "trace.csv"), write_report(report, out / "report.json")]
    logger.info("wrote %s", ", ".join(str(f) for f in files))
    if ratio > 0.9:
        logger.warning("regret is within 10%% of its bound (ratio %.4f)", ratio)
    return report, files, ratio


def _check_ratio(ratio: float, report: dict) -> None:
    if ratio > 1.0:
        raise CheckFailure(f"realized regret {report['realized_regret']:.6g} exceeds its bound "
                           f"(ratio {ratio:.6g}, seed {report['seed']}, T {report['T']})")


def cmd_simulate(config: SimulateConfig) -> RunResult:
    model = build_model(config.model)
    out = Path(config.out)
    if config.seeds is None and config.horizons is None:
        seed = resolve_seed(config.seed)
        report, files, ratio = _simulate_once(config, model, config.T, seed, out)
        _check_ratio(ratio, report)
        return RunResult(report, files)

    seeds = config.seeds or [resolve_seed(config.seed)]
    horizons = sorted(set(config.horizons or [config.T]))
    runs, files, worst = [], [], None
    for seed in seeds:
        for horizon in horizons:
            report, written, ratio = _simulate_once(config, model, horizon, seed,
                                                    out / f"seed_{seed}" / f"T_{horizon}")
            files.extend(written)
            runs.append({"seed": seed, "T": horizon, "eta": report["eta"],
                         "realized_regret": report["realized_regret"],
                         "avg_regret": report["realized_regret"] / horizon, "ratio": ratio})
            if worst is None or ratio > worst[0]:
                worst = (ratio, report)

    slopes = {}
    for seed in seeds:
        averages = [r["avg_regret"] for r in runs if r["seed"] == seed]
        if len(horizons) >= 2 and min(averages) > 0.0:
            slopes[str(seed)] = hannan_slope(horizons, averages)
    summary = {
        "model": model.kind.value,
        "environment": config.env.kind,
        "algorithm": config.learner.algorithm,
        "seeds": seeds,
        "horizons": horizons,
        "runs": runs,
        "max_ratio": worst[0],
        "hannan_slope": slopes,
        "mean_hannan_slope": sum(slopes.values()) / len(slopes) if slopes else None,
    }
    files.append(write_report(summary, out / "summary.json"))
    logger.info("sweep of %d runs written to %s", len(runs), out)
    _check_ratio(*worst)
    return RunResult(summary, files)


def resolve_game(config: GameConfig, seed: int) -> GameSpec:
    if config.game is not None:
        return game_from_doc(GameDoc.model_validate(config.game))
    if config.builtin == "random" or config.builtin is None:
        return random_game(seed, config.random.players, config.random.strategies)
    return BUILTIN_GAMES[config.builtin]()


def _play(game: GameSpec, models: list[GevModel], config: GameConfig, T: int, seed: int):
    learners = []
    for model in models:
        eta = (optimal_eta(model, T, 1.0, config.bound_variant)[0] if config.eta == "optimal"
               else config.eta)
        learners.append(ssa_init(model, eta, 1.0))
    run = run_repeated_game(game, learners, T, seed)
    bounds = [bound_at_eta(l.model, l.eta, T, 1.0, config.bound_variant) for l in learners]
    return run, bounds


def _game_once(config: GameConfig, seed: int, out: Path) -> tuple[dict, list[Path]]:
    game = resolve_game(config, seed)
    if config.models is None:
        models = [mnl(game.n_strategies) for _ in range(game.n_players)]
    else:
        models = [build_model(spec) for spec in config.models]
        if len(models) != game.n_players:
            raise SpecError(f"models lists {len(models)} players, game has {game.n_players}")

    run, bounds = _play(game, models, config, config.T, seed)
    cce = cce_gap(game, run.history, delta_theory=max(bounds) / config.T)
    decay = []
    for horizon in sorted(set(config.horizons) | {config.T}):
        if horizon == config.T:
            h_run, h_cce = run, cce
        else:
            h_run, _ = _play(game, models, config, horizon, seed)
            h_cce = cce_gap(game, h_run.history)
        decay.append({"T": horizon, "delta_emp": h_cce.delta_emp,
                      "max_avg_regret": h_cce.max_avg_regret})

    report = {
        "players": game.n_players,
        "strategies": game.n_strategies,
        "T": config.T,
        "seed": seed,
        "bound_variant": config.bound_variant,
        **cce.to_dict(),
        "regret": run.regrets,
        "bound_at_eta": bounds,
        "decay": decay,
    }
    files = [trace_to_csv(trace, out / f"player_{p + 1}_trace.csv")
             for p, trace in enumerate(run.traces)]
    files.append(write_report(report, out / "cce_report.json"))
    logger.info("wrote %d files to %s", len(files), out)
    return report, files


def _check_game(report: dict) -> None:
    for p, (value, bound) in enumerate(zip(report["regret"], report["bound_at_eta"])):
        if value > bound:
            raise CheckFailure(f"player {p + 1} regret {value:.6g} exceeds its bound {bound:.6g} "
                               f"(seed {report['seed']})")
    if report["delta_emp"] > max(report["max_avg_regret"], 0.0) + CCE_SLACK:
        raise CheckFailure(f"CCE gap {report['delta_emp']:.6g} exceeds max average regret "
                           f"{report['max_avg_regret']:.6g} (seed {report['seed']})")


def cmd_game(config: GameConfig) -> RunResult:
    out = Path(config.out)
    if config.seeds is None:
        report, files = _game_once(config, resolve_seed(config.seed), out)
        _check_game(report)
        return RunResult(report, files)

    reports, files = [], []
    for seed in config.seeds:
        report, written = _game_once(config, seed, out / f"seed_{seed}")
        reports.append(report)
        files.extend(written)
    summary = {
        "T": config.T,
        "seeds": config.seeds,
        "bound_variant": config.bound_variant,
        "runs": [{k: r[k] for k in ("seed", "delta_emp", "max_avg_regret", "delta_theory")}
                 for r in reports],
        "max_delta_emp": max(r["delta_emp"] for r in reports),
    }
    files.append(write_report(summary, out / "cce_summary.json"))
    for report in reports:
        _check_game(report)
    return RunResult(summary, files)


def cmd_verify(config: VerifyConfig) -> RunResult:
    seed = resolve_seed(config.seed)
    report = run_verify(config.suites, config.models, config.n, config.lam, config.points,
                        config.samples, config.rounds, seed)
    out = Path(config.out)
    json_path = write_report(report, out / "verify_report.json")
    md_path = out / "verify_report.md"
    text = verify_report_to_markdown(report)
    md_path.write_text(text, encoding="utf-8")
    print(text)
    report.raise_for_failures()
    return RunResult(report_to_dict(report), [json_path, md_path])


def cmd_bounds(config: BoundsConfig) -> str:
    table = bounds_table(config.n, config.T, config.u_max, config.lam)
    return bounds_to_markdown(table, config.n, config.T, config.u_max)


# ================================================================
# 🧰 ARGUMENTS
# ================================================================
class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors and exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _eta(text: str):
    return text if text == "optimal" else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description="Regret experiments for GEV surplus learners.")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run one learner against one environment.")
    sim.add_argument("--config", help="JSON SimulateConfig document.")
    sim.add_argument("--model", help="Model kind (mnl, nl, cnl, pcl, ogev, pdgev, gnl).")
    sim.add_argument("--n", type=int, help="Number of alternatives.")
    sim.add_argument("--lam", type=float, help="Smallest nest scale lambda.")
    sim.add_argument("--overlap", type=int, help="OGEV overlap.")
    sim.add_argument("--env", help="Environment kind, e.g. adversarial, iid, drift.")
    sim.add_argument("--env-param", dest="env_params", action="append", metavar="KEY=VALUE",
                     help="Environment parameter, e.g. path=stream.csv or period=50. Repeatable.")
    sim.add_argument("--T", type=int, dest="T", help="Horizon.")
    sim.add_argument("--u-max", type=float, dest="u_max")
    sim.add_argument("--eta", type=_eta, help="Step size or 'optimal'.")
    sim.add_argument("--variant", choices=["thm1", "thm2", "table"], help="Bound used to tune eta.")
    sim.add_argument("--algorithm", choices=["ssa", "oftrl"])
    sim.add_argument("--S", type=int, dest="S", help="Recency horizon for oftrl.")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--seeds", type=int, nargs="+", help="Sweep these seeds.")
    sim.add_argument("--horizons", type=int, nargs="+", help="Sweep these horizons.")
    sim.add_argument("--out")

    game = sub.add_parser("game", help="Repeated normal-form game with one learner per player.")
    game.add_argument("--config", help="JSON GameConfig document.")
    game.add_argument("--builtin", help="matching_pennies, rock_paper_scissors (rps) or random.")
    game.add_argument("--game-file", dest="game_file", help="JSON game document.")
    game.add_argument("--T", type=int, dest="T")
    game.add_argument("--horizons", type=int, nargs="+")
    game.add_argument("--eta", type=_eta)
    game.add_argument("--variant", choices=["thm1", "thm2", "table"], help="Bound used to tune eta.")
    game.add_argument("--seed", type=int)
    game.add_argument("--seeds", type=int, nargs="+", help="Run once per seed.")
    game.add_argument("--out")

    ver = sub.add_parser("verify", help="Run the numerical property suites.")
    ver.add_argument("--config", help="JSON VerifyConfig document.")
    ver.add_argument("--suite", dest="suites", nargs="+")
    ver.add_argument("--models", nargs="+")
    ver.add_argument("--n", type=int)
    ver.add_argument("--lam", type=float)
    ver.add_argument("--points", type=int)
    ver.add_argument("--samples", type=int)
    ver.add_argument("--rounds", type=int)
    ver.add_argument("--seed", type=int)
    ver.add_argument("--out")

    bnd = sub.add_parser("bounds", help="Print the optimized bound of every model kind.")
    bnd.add_argument("--config", help="JSON BoundsConfig document.")
    bnd.add_argument("--n", type=int)
    bnd.add_argument("--T", type=int, dest="T")
    bnd.add_argument("--u-max", type=float, dest="u_max")
    bnd.add_argument("--lam", type=float)
    return parser


def _simulate_config(args) -> SimulateConfig:
    config = load_config(args.config, SimulateConfig)
    model = None
    if args.model is not None:
        shorthand = ModelShorthand(kind=args.model,
                                   n=10 if args.n is None else args.n,
                                   lam=0.5 if args.lam is None else args.lam,
                                   overlap=1 if args.overlap is None else args.overlap)
        config = config.model_copy(update={"model": shorthand})
    elif any(v is not None for v in (args.n, args.lam, args.overlap)):
        if "nests" in config.model.model_dump():
            raise SpecError("--n/--lam/--overlap only apply to model shorthands, not full model documents")
        model = {"n": args.n, "lam": args.lam, "overlap": args.overlap}
    learner = {"eta": args.eta, "bound_variant": args.variant, "algorithm": args.algorithm,
               "recency_S": args.S}
    if args.env is not None:
        env = EnvConfig(kind=args.env)
        if env.kind != config.env.kind:
            # a different environment does not inherit the document's params
            config = config.model_copy(update={"env": env})
    env_params = dict(_env_param(item) for item in args.env_params or [])
    return with_overrides(config, model=model, learner=learner, env={"params": env_params},
                          T=args.T, u_max=args.u_max, seed=args.seed, seeds=args.seeds,
                          horizons=args.horizons, out=args.out)


def _env_param(item: str) -> tuple[str, object]:
    key, sep, text = item.partition("=")
    if not sep or not key:
        raise SpecError(f"--env-param expects KEY=VALUE, got {item!r}")
    try:
        return key, json.loads(text)
    except json.JSONDecodeError:
        return key, text


def _game_config(args) -> GameConfig:
    config = load_config(args.config, GameConfig)
    game = None
    if args.game_file is not None:
        game = json.loads(Path(args.game_file).read_text(encoding="utf-8"))
    return with_overrides(config, builtin=args.builtin, game=game, T=args.T,
                          horizons=args.horizons, eta=args.eta, bound_variant=args.variant,
                          seed=args.seed, seeds=args.seeds, out=args.out)


def _verify_config(args) -> VerifyConfig:
    config = load_config(args.config, VerifyConfig)
    return with_overrides(config, suites=args.suites, models=args.models, n=args.n, lam=args.lam,
                          points=args.points, samples=args.samples, rounds=args.rounds,
                          seed=args.seed, out=args.out)


def _bounds_config(args) -> BoundsConfig:
    config = load_config(args.config, BoundsConfig)
    return with_overrides(config, n=args.n, T=args.T, u_max=args.u_max, lam=args.lam)


def _describe(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
                         for err in exc.errors())
    return str(exc)


def configure_logging(quiet: bool = False) -> None:
    level = logging.WARNING if quiet else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        force=True)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    try:
        if args.command == "simulate":
            result = cmd_simulate(_simulate_config(args))
            print(json.dumps(result.report, indent=2))
        elif args.command == "game":
            result = cmd_game(_game_config(args))
            keys = ("runs", "max_delta_emp") if "runs" in result.report else (
                "delta_emp", "max_avg_regret", "decay")
            print(json.dumps({k: result.report[k] for k in keys}, indent=2))
        elif args.command == "verify":
            result = cmd_verify(_verify_config(args))
            print(f"verify passed: {len(result.report['checks'])} checks")
        else:
            print(cmd_bounds(_bounds_config(args)))
    except VALIDATION_ERRORS as exc:
        print(f"error: {_describe(exc)}", file=sys.stderr)
        return 1
    except ASSERTION_ERRORS as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
