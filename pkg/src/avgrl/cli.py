"""Command-line entry point: ``avgrl {train,sweep,eval,lintest,export-defaults,env-serve}``.

Configs are JSON objects::

    {
      "agent": {"kind": "avg", "actor_lr": 0.0063, ...},
      "env": {"kind": "dot_reacher", "variant": "easy", ...},
      "total_steps": 100000, "seed": 0, ...,
      "sweep": {...}, "lintest": {...}
    }

``--set a.b=value`` overrides are applied after the file is read; values
are parsed as JSON when possible and kept as strings otherwise.

Exit codes: 0 complete, 2 diverged, 3 environment fault, 4 config error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import difflib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, lintest, nn, norm
from .presets import PRESETS, preset
from .agents import AGENTS, make_agent
from .envs import ENV_CONFIGS, EnvFault, make_env, serve
from .sweep import SearchSpace, rank_configs, run_sweep

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_ENV_FAULT = 3
EXIT_CONFIG = 4

log = logging.getLogger("avgrl")

RUN_KEYS = ("total_steps", "seed", "diag_every", "eval_every", "eval_episodes",
            "checkpoint_every", "log_wall_time")
SWEEP_DEFAULTS = {"n_configs": 30, "seeds": 5, "sweep_seed": 0, "workers": 1,
                  "space": SearchSpace().to_json()}
LINTEST_DEFAULTS = {"alpha_w": 0.1, "alpha_theta": 0.05, "batch_sizes": [1, 8, 64],
                    "T": 2000, "seeds": 10, "mode": "sampled"}


class ConfigError(ValueError):
    pass


# ---- defaults ---------------------------------------------------------------
def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def agent_defaults(kind):
    params = make_agent(kind).get_params()
    params.pop("seed")  # the run seed decides
    return {"kind": kind, **{k: _plain(v) for k, v in params.items()}}


def env_defaults(kind):
    cfg_cls = ENV_CONFIGS[kind]
    return {"kind": kind, **{f.name: _plain(f.default) for f in dataclasses.fields(cfg_cls)}}


def fixed_constants():
    """Built-in numerical constants (read-only; echoed for reference)."""
    return {
        "leaky_relu_slope": nn.LEAKY_SLOPE,
        "pnorm_min_norm": nn.PNORM_MIN_NORM,
        "norm_variance_eps": nn.NORM_EPS,
        "log_std_bounds": [nn.LOG_STD_MIN, nn.LOG_STD_MAX],
        "hidden_init_gain": nn.MlpSpec(1, 1).hidden_gain,
        "welford_std_eps": norm.STD_EPS,
        "sigma_delta_floor": norm.TdScaleState().floor,
        "diag_window_steps": harness.RunConfig().diag_every,
        "final_return_window": harness.FINAL_WINDOW,
        "checkpoint_version": harness.CHECKPOINT_VERSION,
        "metrics_schema_version": harness.SCHEMA_VERSION,
        "quadrature_order": lintest.QUAD_ORDER,
        "stationary_tolerance": lintest.STATIONARY_TOL,
    }


def default_config(agent="avg", env="dot_reacher"):
    run = harness.RunConfig()
    return {
        "agent": agent_defaults(agent),
        "env": env_defaults(env),
        **{k: getattr(run, k) for k in RUN_KEYS},
        "sweep": copy.deepcopy(SWEEP_DEFAULTS),
        "lintest": copy.deepcopy(LINTEST_DEFAULTS),
        "constants": fixed_constants(),
    }


# ---- parsing and validation -------------------------------------------------
def _suggest(key, valid):
    close = difflib.get_close_matches(key, list(valid), n=3, cutoff=0.5)
    if close:
        return f"; did you mean {', '.join(repr(c) for c in close)}?"
    return f"; valid keys: {', '.join(sorted(valid))}"


def apply_override(config, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    node = config
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {path!r}: {k!r} is not a section")
    node[keys[-1]] = value
    return config


def _check_keys(section, valid, where):
    for key in section:
        if key not in valid:
            raise ConfigError(f"unknown key {where}{key!r}{_suggest(key, valid)}")


def validate_config(config, need_run=True):
    """Check every key and return ``config``.

    With ``need_run=False`` (subcommands that never build an agent) the
    ``agent`` and ``env`` sections may be absent.
    """
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    top = set(RUN_KEYS) | {"agent", "env", "sweep", "lintest", "constants"}
    _check_keys(config, top, "")
    if need_run or "agent" in config or "env" in config:
        _validate_run_sections(config)
    _validate_extras(config)
    return config


def _validate_run_sections(config):
    agent = config.get("agent")
    if not isinstance(agent, dict) or "kind" not in agent:
        raise ConfigError("missing required field 'agent.kind'")
    if agent["kind"] not in AGENTS:
        raise ConfigError(f"unknown agent kind {agent['kind']!r}{_suggest(agent['kind'], AGENTS)}")
    env = config.get("env")
    if not isinstance(env, dict) or "kind" not in env:
        raise ConfigError("missing required field 'env.kind'")
    if env["kind"] not in ENV_CONFIGS and env["kind"] != "subprocess":
        raise ConfigError(f"unknown env kind {env['kind']!r}"
                          f"{_suggest(env['kind'], [*ENV_CONFIGS, 'subprocess'])}")
    _check_keys(agent, agent_defaults(agent["kind"]), "agent.")
    if env["kind"] == "subprocess":
        _check_keys(env, {"kind", "command", "timeout"}, "env.")
        if "command" not in env:
            raise ConfigError("missing required field 'env.command' for a subprocess env")
    else:
        _check_keys(env, env_defaults(env["kind"]), "env.")


def _validate_extras(config):
    _check_keys(config.get("sweep", {}), SWEEP_DEFAULTS, "sweep.")
    _check_keys(config.get("sweep", {}).get("space", {}), SWEEP_DEFAULTS["space"],
                "sweep.space.")
    _check_keys(config.get("lintest", {}), LINTEST_DEFAULTS, "lintest.")
    constants = config.get("constants", {})
    builtin = fixed_constants()
    _check_keys(constants, builtin, "constants.")
    for key, value in constants.items():
        if value != builtin[key]:
            raise ConfigError(
                f"constants.{key} is fixed at {builtin[key]!r} in this build (got {value!r})"
            )


def load_config(path, overrides=(), need_run=True):
    config = {}
    if path is not None:
        try:
            config = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for item in overrides:
        apply_override(config, item)
    return validate_config(config, need_run)


def run_config_from(config):
    agent = dict(config["agent"])
    env = dict(config["env"])
    kind, env_kind = agent.pop("kind"), env.pop("kind")
    if "hidden_dims" in agent:
        agent["hidden_dims"] = tuple(agent["hidden_dims"])
    if "target" in env:
        env["target"] = tuple(env["target"])
    run_kwargs = {k: config[k] for k in RUN_KEYS if k in config}
    try:
        return harness.RunConfig(agent=kind, agent_params=agent, env=env_kind, env_params=env,
                                 **run_kwargs).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def preset_overrides(name):
    """``--set`` style assignments for a named preset (applied before user overrides)."""
    if name is None:
        return []
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}{_suggest(name, PRESETS)}")
    kind, params = preset(name)
    return [f"agent.kind={kind}"] + [f"agent.{k}={json.dumps(_plain(v))}"
                                     for k, v in params.items()]


# ---- subcommands ------------------------------------------------------------
def _echo(config, out):
    text = json.dumps(config, indent=2, sort_keys=True)
    log.info("effective config:\n%s", text)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "config.json").write_text(text + "\n", encoding="utf-8")


def cmd_train(args):
    config = load_config(args.config, preset_overrides(args.preset) + args.set)
    run = run_config_from(config)
    _echo(config, args.out)
    try:
        summary = harness.run_training(run, out_dir=args.out, resume_from=args.resume)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps(dataclasses.asdict(summary)))
    return EXIT_DIVERGED if summary.diverged else EXIT_OK


def cmd_sweep(args):
    config = load_config(args.config, preset_overrides(args.preset) + args.set)
    run = run_config_from(config)
    sw = {**SWEEP_DEFAULTS, **config.get("sweep", {})}
    space = SearchSpace.from_json({**SWEEP_DEFAULTS["space"], **sw.get("space", {})})
    seeds = sw["seeds"]
    seeds = range(seeds) if isinstance(seeds, int) else seeds
    _echo(config, args.out)
    results, _ = run_sweep(run, space, n_configs=sw["n_configs"], seeds=seeds,
                           sweep_seed=sw["sweep_seed"], workers=args.workers or sw["workers"],
                           out_dir=args.out)
    for rank, res in enumerate(rank_configs(results, top_k=args.top_k), start=1):
        print(json.dumps({"rank": rank, "config_id": res.config_id, "mean_auc": res.mean_auc,
                          "stderr": res.stderr}))
    return EXIT_OK


def cmd_eval(args):
    config = load_config(args.config, args.set) if (args.config or args.set) else None
    loaded = harness.checkpoint_load(args.checkpoint)
    agent = loaded["agent"]
    if config is not None:
        env = make_env(config["env"]["kind"],
                       **{k: v for k, v in config["env"].items() if k != "kind"})
    else:
        env = make_env("dot_reacher")
    returns = harness.evaluate(agent, env, args.episodes, seed=args.seed)
    print(json.dumps({"returns": returns, "mean": float(np.mean(returns))}))
    return EXIT_OK


def cmd_lintest(args):
    config = load_config(args.config, args.set, need_run=False)
    opts = {**LINTEST_DEFAULTS, **config.get("lintest", {})}
    seeds = opts["seeds"]
    seeds = range(seeds) if isinstance(seeds, int) else seeds
    mdp = lintest.default_mdp()
    rows = []
    for M in opts["batch_sizes"]:
        mins = []
        for seed in seeds:
            cfg = lintest.RpgTdConfig(alpha_w=opts["alpha_w"], alpha_theta=opts["alpha_theta"],
                                      M=int(M), T=int(opts["T"]), seed=int(seed),
                                      mode=opts["mode"])
            run_rows, _ = lintest.run_testbed(mdp, cfg)
            rows.extend(run_rows)
            mins.append(lintest.min_grad_norm_sq(run_rows))
        print(json.dumps({"M": int(M), "mean_min_grad_norm_sq": float(np.mean(mins))}))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        lintest.write_csv(rows, Path(args.out) / "lintest.csv")
    return EXIT_OK


def cmd_export_defaults(args):
    if args.agent not in AGENTS:
        raise ConfigError(f"unknown agent kind {args.agent!r}{_suggest(args.agent, AGENTS)}")
    if args.env not in ENV_CONFIGS:
        raise ConfigError(f"unknown env kind {args.env!r}{_suggest(args.env, ENV_CONFIGS)}")
    print(json.dumps(default_config(args.agent, args.env), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_env_serve(args):
    params = {}
    for item in args.set:
        apply_override(params, item)
    kind = args.env
    if kind not in ENV_CONFIGS:
        raise ConfigError(f"unknown env kind {kind!r}{_suggest(kind, ENV_CONFIGS)}")
    _check_keys(params, env_defaults(kind), "env.")
    serve(make_env(kind, seed=args.seed, **params))
    return EXIT_OK


# ---- argument parsing -------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="avgrl", description="Incremental actor-critic toolkit")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, e.g. agent.tau=1.0 (repeatable)")

    p = sub.add_parser("train", help="train one agent")
    with_config(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="named agent hyperparameters")
    p.add_argument("--out", help="output directory for metrics and checkpoints")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="random hyperparameter search")
    with_config(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="base agent hyperparameters")
    p.add_argument("--out", help="output directory for manifest and results")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="replay a checkpoint with zero policy noise")
    with_config(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lintest", help="linear actor-critic testbed on the small MDP")
    with_config(p)
    p.add_argument("--out", help="directory for lintest.csv")
    p.set_defaults(func=cmd_lintest)

    p = sub.add_parser("export-defaults", help="print the full default config")
    p.add_argument("--agent", default="avg")
    p.add_argument("--env", default="dot_reacher")
    p.set_defaults(func=cmd_export_defaults)

    p = sub.add_parser("env-serve", help="serve a built-in env over stdin/stdout")
    p.add_argument("--env", default="dot_reacher")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_env_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnvFault as exc:
        print(f"environment fault: {exc}", file=sys.stderr)
        return EXIT_ENV_FAULT
    except harness.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
