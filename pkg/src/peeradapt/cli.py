"""Command-line entry points binding pools, training, and evaluation.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import traceback

import numpy as np

from .adapt import (
    adaptation_runs,
    export_embeddings,
    windowed_metrics,
    write_results_csv,
    write_summary_csv,
)
from .config import (
    ConfigError,
    PRESETS,
    apply_preset,
    default_out_root,
    freeze_config,
    load_config,
)
from .kuhn import KuhnPeerParams, best_response
from .nn import CheckpointError
from .pools import (
    ENV_KUHN,
    ENV_PP,
    PoolEnvMismatchError,
    PoolFormatError,
    PoolVersionError,
    check_pool_env,
    gen_kuhn_pool,
    gen_pp_pool,
    load_pool,
    save_pool,
)
from .predprey import PhysicsConfig
from .trainer import Trainer, TrainerAbort, models_from_checkpoint


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as e:
        raise UsageError(f"bad seed list {text!r}") from e


def build_parser() -> _Parser:
    p = _Parser(prog="peeradapt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    gp = sub.add_parser("gen-pool", help="generate a peer pool file")
    gp.add_argument("--env", required=True, choices=[ENV_KUHN, ENV_PP, "kuhn", "pp"])
    gp.add_argument("--train", type=int, default=None)
    gp.add_argument("--test", type=int, default=None)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--out", required=True)
    gp.set_defaults(func=cmd_gen_pool)

    tr = sub.add_parser("train", help="train a policy per the config file")
    tr.add_argument("--config", required=True)
    tr.add_argument("--preset", choices=PRESETS, default=None)
    tr.add_argument("--steps", type=int, default=None, help="override ppo.total_steps")
    tr.add_argument("--seed", type=int, default=None, help="override run.seed")
    tr.add_argument("--out", default=None)
    tr.add_argument("--workers", type=int, default=1,
                    help="accepted for interface symmetry; training is single-process")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="adaptation evaluation over a pool")
    ad = sub.add_parser("adapt", help="adaptation runs with sudden-change options")
    for q in (ev, ad):
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--pool", required=True)
        q.add_argument("--side", choices=["train", "test"], default="test")
        q.add_argument("--episodes", type=int, default=None)
        q.add_argument("--seeds", type=_parse_seeds, default=[0, 1, 2])
        q.add_argument("--out", default=None)
        q.add_argument("--workers", type=int, default=1)
    ev.add_argument("--window", type=int, default=10)
    ad.add_argument("--window", type=int, default=1)
    ad.add_argument("--switch-at", type=int, default=None)
    ad.add_argument("--cth", type=float, default=None)
    ev.set_defaults(func=cmd_eval)
    ad.set_defaults(func=cmd_adapt)

    orc = sub.add_parser("oracle", help="exact best-response values for Kuhn peers")
    orc.add_argument("--pool", default=None)
    orc.add_argument("--grid", type=int, default=None,
                     help="evaluate an NxN (xi, eta) lattice instead of a pool")
    orc.add_argument("--out", default=None)
    orc.set_defaults(func=cmd_oracle)

    ex = sub.add_parser("export-embeddings", help="per-step context embeddings CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--pool", required=True)
    ex.add_argument("--side", choices=["train", "test"], default="test")
    ex.add_argument("--episodes", type=int, default=None)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_embeddings)
    return p


def cmd_gen_pool(args) -> int:
    env = ENV_PP if args.env == "pp" else (ENV_KUHN if args.env == "kuhn" else args.env)
    if env == ENV_KUHN:
        pool = gen_kuhn_pool(
            args.train if args.train is not None else 40,
            args.test if args.test is not None else 10,
            args.seed,
        )
    else:
        pool = gen_pp_pool(
            args.seed,
            args.train if args.train is not None else 16,
            args.test if args.test is not None else 24,
        )
    save_pool(pool, args.out)
    print(
        f"wrote {args.out}: env={pool.env} train={len(pool.train)} "
        f"test={len(pool.test)} slot_cardinalities={pool.slot_cardinalities}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.preset:
        apply_preset(cfg, args.preset)
    if args.steps is not None:
        cfg.ppo.total_steps = args.steps
    if args.seed is not None:
        cfg.run.seed = args.seed
    out_dir = args.out or os.path.join(
        default_out_root(), f"{cfg.run.env}-seed{cfg.run.seed}"
    )
    os.makedirs(out_dir, exist_ok=True)
    pool = cfg.resolve_pool(save_dir=out_dir)
    freeze_config(cfg, out_dir)

    extra_meta = {}
    phys = cfg.physics_config()
    paths = cfg.path_table()
    if cfg.run.env == ENV_PP:
        extra_meta = {
            "physics": _physics_to_doc(phys),
            "paths": paths,
        }
    trainer = Trainer(
        pool,
        cfg.ppo_config(),
        cfg.model_spec(pool),
        seed=cfg.run.seed,
        phys=phys,
        path_table=paths,
        diag_path=os.path.join(out_dir, "diagnostics.csv"),
        checkpoint_dir=out_dir,
        extra_meta=extra_meta,
    )

    def progress(row):
        print(
            f"step {row['global_step']}: return {row['mean_task_return']:.4f} "
            f"aux {row['aux_loss']:.4f} acc {row['aux_accuracy']:.3f}",
            flush=True,
        )

    trainer.train(progress=progress)
    print(f"done; outputs in {out_dir}")
    return 0


def _physics_to_doc(phys: PhysicsConfig) -> dict:
    return {
        "dt": phys.dt,
        "damping": phys.damping,
        "accel": phys.accel,
        "max_speed": phys.max_speed,
        "body_radius": phys.body_radius,
        "tower_contact_radius": phys.tower_contact_radius,
        "obs_radius": phys.obs_radius,
        "reward_coef": phys.reward_coef,
        "max_steps": phys.max_steps,
        "prey_speed": phys.prey_speed,
        "towers": [list(t) for t in phys.towers],
        "landmarks": [list(t) for t in phys.landmarks],
    }


def _physics_from_doc(doc: dict) -> PhysicsConfig:
    kw = dict(doc)
    kw["towers"] = tuple(tuple(t) for t in kw["towers"])
    kw["landmarks"] = tuple(tuple(t) for t in kw["landmarks"])
    return PhysicsConfig(**kw)


def _load_models_and_pool(args):
    models, manifest = models_from_checkpoint(args.checkpoint)
    pool = load_pool(args.pool)
    check_pool_env(pool, models.spec.env)
    meta = manifest.get("meta", {})
    phys = _physics_from_doc(meta["physics"]) if "physics" in meta else None
    paths = meta.get("paths")
    if models.spec.env == ENV_PP and paths is None:
        raise ConfigError("checkpoint lacks the prey path table")
    return models, pool, phys, paths


def _run_eval(args, switch_at=None, cth=None) -> int:
    models, pool, phys, paths = _load_models_and_pool(args)
    episodes = args.episodes if args.episodes is not None else models.spec.n_eps
    reports = adaptation_runs(
        models, pool, args.side, episodes, args.seeds,
        phys=phys, path_table=paths,
        c_th=cth, switch_at=switch_at, workers=args.workers,
    )
    out_dir = args.out or os.path.join(default_out_root(), "eval")
    os.makedirs(out_dir, exist_ok=True)
    res_path = os.path.join(out_dir, "results.csv")
    write_results_csv(res_path, models.spec.env, os.path.basename(args.checkpoint), reports)
    metrics = windowed_metrics(reports, min(args.window, episodes))
    write_summary_csv(os.path.join(out_dir, "summary.csv"), metrics)
    print(
        f"{len(reports)} runs x {episodes} episodes: mean return "
        f"{metrics.overall_mean:.4f} +/- {metrics.overall_std:.4f}; "
        f"results in {out_dir}"
    )
    return 0


def cmd_eval(args) -> int:
    return _run_eval(args)


def cmd_adapt(args) -> int:
    return _run_eval(args, switch_at=args.switch_at, cth=args.cth)


def cmd_oracle(args) -> int:
    if (args.pool is None) == (args.grid is None):
        raise UsageError("oracle needs exactly one of --pool or --grid")
    rows = []
    if args.pool is not None:
        pool = load_pool(args.pool)
        check_pool_env(pool, ENV_KUHN)
        for side in ("train", "test"):
            for i, t in enumerate(getattr(pool, side)):
                payload = t.specs[0].payload
                value, strat = best_response(KuhnPeerParams(payload["xi"], payload["eta"]))
                rows.append((side, i, payload["xi"], payload["eta"], value, strat.index))
        test_values = [r[4] for r in rows if r[0] == "test"]
        print(f"test-pool oracle mean: {np.mean(test_values):.6f}")
    else:
        for xi in np.linspace(0.0, 1.0, args.grid):
            for eta in np.linspace(0.0, 1.0, args.grid):
                value, strat = best_response(KuhnPeerParams(float(xi), float(eta)))
                rows.append(("grid", -1, float(xi), float(eta), value, strat.index))
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["side", "peer_id", "xi", "eta", "best_response_value",
                        "strategy_index"])
            for side, i, xi, eta, value, idx in rows:
                w.writerow([side, i, format(xi, ".17g"), format(eta, ".17g"),
                            format(value, ".17g"), idx])
        print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def cmd_export_embeddings(args) -> int:
    models, pool, phys, paths = _load_models_and_pool(args)
    episodes = args.episodes if args.episodes is not None else models.spec.n_eps
    export_embeddings(
        args.out, models, pool, args.side, episodes, args.seed,
        phys=phys, path_table=paths,
    )
    print(f"wrote {args.out}")
    return 0


USAGE_ERRORS = (
    UsageError,
    ConfigError,
    PoolFormatError,
    PoolVersionError,
    PoolEnvMismatchError,
    CheckpointError,
    FileNotFoundError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainerAbort as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
