"""Command-line entry points: ``train``, ``analyze simplicity``, ``analyze plasticity``.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, envs, nets, obsnorm
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .rl import METRIC_COLUMNS, ArchConfig, ConfigError, TrainConfig, Trainer
from .seeding import stream_seed

log = logging.getLogger("simbalab")

SIMPLICITY_COLUMNS = ("arch", "n_inits", "mean_c", "mean_s", "s_ci_low", "s_ci_high", "params")
EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
DONE = "DONE"

# Simplicity-analysis defaults: width 128, 1 block.
ANALYSIS_HIDDEN = 128
ANALYSIS_BLOCKS = 1


@dataclasses.dataclass
class RunConfig:
    command: str = "train"
    env: str = "pendulum"
    distractors: int = 0
    seed: int = 0
    steps: int = 0
    out: str = "runs/train"
    checkpoint_every: int = 10_000
    record_wall_time: bool = False
    match_params: bool = False
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def prepare_out(out: Path, force: bool) -> None:
    if out.exists() and (out / DONE).exists() and not force:
        raise ConfigError("out", f"{out} holds a completed run; pass --force to overwrite")
    if out.exists() and force:
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


# train

def _merge(dc, updates: dict, prefix=""):
    for key, value in updates.items():
        if not hasattr(dc, key):
            raise ConfigError(prefix + key, "unknown configuration field")
        current = getattr(dc, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _merge(current, value, f"{prefix}{key}.")
        else:
            setattr(dc, key, value)


def resolve_train_config(args) -> RunConfig:
    rc = RunConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        data.pop("resolved", None)
        _merge(rc, data)
    cfg = rc.train
    direct = {"env": args.env, "distractors": args.distractors, "seed": args.seed,
              "steps": args.steps, "out": args.out, "checkpoint_every": args.checkpoint_every}
    for k, v in direct.items():
        if v is not None:
            setattr(rc, k, v)
    if args.record_wall_time:
        rc.record_wall_time = True
    if args.match_params:
        rc.match_params = True
    train_flags = {"algo": args.algo, "normalizer": args.normalizer,
                   "replay_ratio": args.replay_ratio, "reset_interval": args.reset_every,
                   "warmup_steps": args.warmup, "batch_size": args.batch_size,
                   "gamma": args.gamma, "dtype": args.dtype,
                   "oracle_stats_path": args.oracle_stats}
    for k, v in train_flags.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.clipped_double_q:
        cfg.clipped_double_q = True
    if args.arch is not None:
        cfg.critic.variant = args.arch
        cfg.actor.variant = args.arch
    for name, value in (("critic.hidden_dim", args.critic_hidden),
                        ("critic.num_blocks", args.critic_blocks),
                        ("actor.hidden_dim", args.actor_hidden),
                        ("actor.num_blocks", args.actor_blocks)):
        if value is not None:
            setattr(getattr(cfg, name.split(".")[0]), name.split(".")[1], value)
    rc.command = "train"
    validate_run(rc)
    return rc


def validate_run(rc: RunConfig) -> None:
    if rc.env != "pendulum":
        raise ConfigError("env", f"unknown environment {rc.env!r}")
    if rc.distractors < 0:
        raise ConfigError("distractors", "must be non-negative")
    if rc.steps < 0:
        raise ConfigError("steps", "must be non-negative")
    if rc.checkpoint_every is not None and rc.checkpoint_every < 0:
        raise ConfigError("checkpoint_every", "must be non-negative")
    rc.train.validate()


def matched_arch(arch: ArchConfig, input_dim: int, output_dim: int, head: str,
                 reference: ArchConfig) -> ArchConfig:
    """Width of ``arch`` adjusted so its parameter count matches ``reference``."""
    ref = nets.NetworkSpec(reference.variant, input_dim, reference.hidden_dim,
                           reference.num_blocks, output_dim, head)
    spec = nets.NetworkSpec(arch.variant, input_dim, arch.hidden_dim, arch.num_blocks,
                            output_dim, head)
    got = nets.match_hidden_dim(spec, nets.count_params(ref))
    return ArchConfig(arch.variant, arch.num_blocks, got.hidden_dim)


def apply_param_matching(rc: RunConfig, obs_dim: int, action_dim: int) -> None:
    """Give non-SimBa networks the SimBa parameter count of the default table sizes."""
    cfg = rc.train
    policy_head = "gaussian-policy" if cfg.algo == "sac" else "deterministic-policy"
    cfg.critic = matched_arch(cfg.critic, obs_dim + action_dim, 1, "q-value",
                              ArchConfig("simba", 2, 512))
    cfg.actor = matched_arch(cfg.actor, obs_dim, action_dim, policy_head,
                             ArchConfig("simba", 1, 128))


def build_env(rc: RunConfig):
    return envs.make_env(rc.env, rc.distractors, seed=stream_seed(rc.seed, "env"),
                         wrapper_seed=stream_seed(rc.seed, "wrapper"))


def resolved_dict(rc: RunConfig, env) -> dict:
    d = dataclasses.asdict(rc)
    d["resolved"] = {
        "obs_dim": env.spec.obs_dim,
        "action_dim": env.spec.action_dim,
        "target_entropy": -rc.train.target_entropy_scale * env.spec.action_dim,
        "target_entropy_sign": "negative: H* = -|A|/2",
        "seed_scheme": "SeedSequence([root, crc32(stream), index]) first word",
        "seeds": {name: stream_seed(rc.seed, name) for name in
                  ("env", "wrapper", "init/actor", "init/critic0", "sampling",
                   "exploration", "update", "probe")},
    }
    return d


class MetricsWriter:
    def __init__(self, path: Path):
        self.fh = path.open("w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRIC_COLUMNS)
        self.fh.flush()

    def __call__(self, row) -> None:
        self.writer.writerow([fmt(v) for v in row.values()])
        self.fh.flush()

    def close(self):
        self.fh.close()


def cmd_train(args) -> int:
    rc = resolve_train_config(args)
    out = Path(rc.out)
    prepare_out(out, args.force)
    env = build_env(rc)
    if rc.match_params:
        apply_param_matching(rc, env.spec.obs_dim, env.spec.action_dim)
        rc.train.validate()
    write_json(out / "config.json", resolved_dict(rc, env))

    trainer = Trainer(env, rc.train, rc.seed, record_wall_time=rc.record_wall_time)
    writer = MetricsWriter(out / "metrics.csv")
    t0 = time.perf_counter()
    try:
        trainer.run(rc.steps, on_row=writer, checkpoint_every=rc.checkpoint_every or None,
                    on_checkpoint=lambda tr: checkpoint_save(
                        out / f"checkpoint_{tr.env_steps}.bin", tr.state_arrays()))
    finally:
        writer.close()
    checkpoint_save(out / "checkpoint_final.bin", trainer.state_arrays())
    (out / DONE).write_text(f"env_steps {trainer.env_steps}\n"
                            f"grad_steps {trainer.grad_steps}\n"
                            f"wall_time_s {time.perf_counter() - t0:.3f}\n")
    log.info("train finished: %d env steps, %d gradient steps", trainer.env_steps,
             trainer.grad_steps)
    return EXIT_OK


# analyze simplicity

def constant_factory(value: float = 1.0) -> analysis.NetFactory:
    """Test architecture whose every initialization is the constant ``value``."""
    return lambda seed: (lambda pts: np.full(len(pts), value))


def analysis_spec(arch: str, hidden: int, blocks: int) -> nets.NetworkSpec:
    """SimBa variants get ``blocks`` blocks; MLP variants ``2 * blocks + 1`` hidden layers,
    i.e. the same number of linear layers before the head."""
    variant = nets._ALIASES.get(arch, arch)
    depth = blocks if variant in nets.SIMBA_FAMILY else 2 * blocks + 1
    return nets.NetworkSpec(variant, 2, hidden, depth, 1, "raw")


def cmd_analyze_simplicity(args) -> int:
    archs = [a.strip() for a in args.archs.split(",") if a.strip()]
    if not archs:
        raise ConfigError("archs", "empty architecture list")
    if args.inits < 2:
        raise ConfigError("inits", "need at least 2 initializations")
    if args.grid < 2 or args.domain <= 0:
        raise ConfigError("grid", "grid needs >= 2 divisions and a positive domain")
    grid = analysis.GridSpec(float(args.domain), int(args.grid))
    specs = {}
    for a in archs:
        if a == "constant":
            specs[a] = None
            continue
        try:
            specs[a] = analysis_spec(a, args.hidden_dim, args.blocks)
        except ValueError as exc:
            raise ConfigError("archs", str(exc)) from None
    if args.match_params_to:
        ref_name = args.match_params_to
        ref = specs.get(ref_name) or analysis_spec(ref_name, args.hidden_dim, args.blocks)
        target = nets.count_params(ref)
        for a, s in specs.items():
            if s is not None and a != ref_name:
                try:
                    specs[a] = nets.match_hidden_dim(s, target)
                except ValueError as exc:
                    raise ConfigError("match_params_to", str(exc)) from None

    out = Path(args.out)
    prepare_out(out, args.force)
    config = {"command": "analyze simplicity", "archs": archs, "inits": args.inits,
              "grid": args.grid, "domain": args.domain, "seed": args.seed,
              "hidden_dim": args.hidden_dim, "blocks": args.blocks,
              "match_params_to": args.match_params_to,
              "specs": {a: (dataclasses.asdict(s) if s else None) for a, s in specs.items()},
              "c_floor": analysis.C_FLOOR, "rsnorm_bypassed": True,
              "image_standardized": False}
    write_json(out / "config.json", config)
    with (out / "simplicity.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIMPLICITY_COLUMNS)
        for a in archs:
            s = specs[a]
            factory = constant_factory() if s is None else analysis.spec_factory(s)
            params = 0 if s is None else nets.count_params(s)
            rep = analysis.simplicity_score(factory, args.inits, grid, seed=args.seed, arch=a,
                                            params=params, workers=args.workers)
            w.writerow([a, rep.n_inits, fmt(rep.mean_c), fmt(rep.score), fmt(rep.ci_low),
                        fmt(rep.ci_high), params])
            fh.flush()
            log.info("%s: s=%.5g [%.5g, %.5g]", a, rep.score, rep.ci_low, rep.ci_high)
    (out / DONE).write_text("ok\n")
    return EXIT_OK


# analyze plasticity

def cmd_analyze_plasticity(args) -> int:
    arrays = checkpoint_load(args.input)
    feats = arrays.get("probe/features", arrays.get("features"))
    acts = arrays.get("probe/activations", arrays.get("activations"))
    if feats is None:
        raise ConfigError("input", "no features/probe/features entry in file")
    if acts is None:
        acts = feats
    rep = analysis.plasticity_report(feats, acts, args.tau, args.eps)
    result = dataclasses.asdict(rep)
    if "probe/env_step" in arrays:
        result["env_step"] = int(arrays["probe/env_step"][0])
    text = json.dumps(result, indent=2)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "plasticity.json").write_text(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simbalab")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train SAC/DDPG on pendulum")
    t.add_argument("--algo", choices=("sac", "ddpg"))
    t.add_argument("--env")
    t.add_argument("--distractors", type=int)
    t.add_argument("--arch", help="variant for actor and critic, e.g. simba, mlp")
    t.add_argument("--critic-hidden", type=int)
    t.add_argument("--critic-blocks", type=int)
    t.add_argument("--actor-hidden", type=int)
    t.add_argument("--actor-blocks", type=int)
    t.add_argument("--match-params", action="store_true",
                   help="resize non-simba networks to the default simba parameter counts")
    t.add_argument("--normalizer", help=f"one of {', '.join(obsnorm.KINDS)}")
    t.add_argument("--oracle-stats", help="dim,mean,var CSV for --normalizer oracle")
    t.add_argument("--replay-ratio", type=int)
    t.add_argument("--reset-every", type=int, help="gradient steps between resets")
    t.add_argument("--clipped-double-q", action="store_true")
    t.add_argument("--warmup", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--dtype", choices=("float64", "float32"))
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--checkpoint-every", type=int, help="env steps; 0 disables")
    t.add_argument("--record-wall-time", action="store_true")
    t.add_argument("--out")
    t.add_argument("--config", help="JSON file with RunConfig fields")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="simplicity and plasticity analysis")
    asub = a.add_subparsers(dest="analysis", required=True)
    s = asub.add_parser("simplicity")
    s.add_argument("--archs", default="simba,mlp")
    s.add_argument("--inits", type=int, default=100)
    s.add_argument("--grid", type=int, default=300)
    s.add_argument("--domain", type=float, default=100.0)
    s.add_argument("--hidden-dim", type=int, default=ANALYSIS_HIDDEN)
    s.add_argument("--blocks", type=int, default=ANALYSIS_BLOCKS)
    s.add_argument("--match-params-to")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="runs/simplicity")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_analyze_simplicity)

    pl = asub.add_parser("plasticity")
    pl.add_argument("--input", required=True, help="checkpoint or feature dump")
    pl.add_argument("--tau", type=float, default=analysis.DEFAULT_TAU)
    pl.add_argument("--eps", type=float, default=analysis.DEFAULT_DORMANT_EPS)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_analyze_plasticity)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, obsnorm.OracleStatsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
