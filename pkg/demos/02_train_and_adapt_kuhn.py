"""A miniature end-to-end training and adaptation loop in Kuhn Poker.

Trains a small context-aware agent against 8 opponents for a few minutes
of CPU time, then plays 100-episode adaptation matches against 4 held-out
opponents and prints how the average return evolves as the context fills.
Numbers here are a toy-scale illustration; use configs/kuhn_desk.toml or
configs/kuhn.toml for real runs.

Run: python demos/02_train_and_adapt_kuhn.py
"""

import numpy as np

from peeradapt.adapt import adaptation_runs, windowed_metrics
from peeradapt.kuhn import KuhnPeerParams, best_response
from peeradapt.pools import gen_kuhn_pool
from peeradapt.trainer import ModelSpec, PPOConfig, Trainer

pool = gen_kuhn_pool(n_train=8, n_test=4, seed=11)
spec = ModelSpec(
    env="kuhn", obs_dim=13, n_actions=2, d_z=32,
    f_hidden=(32, 32), g_hidden=(32,), actor_hidden=(64, 64),
    critic_hidden=(64, 64), slot_cardinalities=(8,), n_eps=20,
)
cfg = PPOConfig(
    lr=5e-4, entropy_coef=5e-4, batch_size=8000, update_epochs=8,
    n_minibatches=8, grad_clip=2.0, total_steps=160_000, n_eps=20,
    warmup_steps=16_000, c_init=0.01, c_decay_steps=140_000,
)

trainer = Trainer(pool, cfg, spec, seed=0)
print("training (warmup + PPO)...")
trainer.train(progress=lambda row: print(
    f"  step {row['global_step']:>7}: episode return {row['mean_task_return']:+.4f}, "
    f"identification accuracy {row['aux_accuracy']:.2f}"
))

print("\nadapting to 4 held-out opponents, 20 episodes each, 3 seeds:")
reports = adaptation_runs(trainer.models, pool, "test", n_eps=20, seeds=[0, 1, 2])
metrics = windowed_metrics(reports, window=5)
for i, (mu, sd) in enumerate(zip(metrics.per_window_mean, metrics.per_window_std)):
    print(f"  episodes {i*5+1:>2}-{i*5+5:<2}: mean return {mu:+.4f} +/- {sd:.4f}")
print(f"  overall: {metrics.overall_mean:+.4f}")

oracle = np.mean([
    best_response(KuhnPeerParams(**t.specs[0].payload))[0] for t in pool.test
])
print(f"\noracle (exact best response per test opponent): {oracle:+.4f}")
