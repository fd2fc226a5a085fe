"""Exact Kuhn Poker solving: expected values and best responses.

The opponent family has two free probabilities: xi (bluff a Jack after a
check) and eta (call a bet with a Queen). Everything else is forced by
dominance. This script walks through the solver: exact EVs for simple
strategies, the best-response landscape over the (xi, eta) square, and
the equalizing point where the best response earns the game value.

Run: python demos/01_kuhn_best_response.py
"""

import numpy as np

from peeradapt.kuhn import KuhnPeerParams, best_response, exact_ev

# A deliberately passive P1: always check, fold to any bet. Against the
# parameterized opponent this loses exactly 2*xi/3 in expectation: the
# only leak is folding to Jack bluffs.
print("passive P1 (always check, fold to bets):")
for xi in (0.0, 0.3, 1.0):
    params = KuhnPeerParams(xi=xi, eta=0.5)
    ev = exact_ev(np.zeros(3), np.zeros(3), params)
    print(f"  xi={xi:.1f}: EV = {ev:+.6f}   (closed form -2*xi/3 = {-2*xi/3:+.6f})")

# Best responses: sweep the opponent square. The policy space splits into
# six regions, each with one optimal pure strategy.
print("\nbest-response landscape on an 11x11 grid:")
strategies = {}
for eta in np.linspace(1, 0, 11):
    row = []
    for xi in np.linspace(0, 1, 11):
        value, strat = best_response(KuhnPeerParams(xi, eta))
        strategies.setdefault(strat.index, len(strategies))
        row.append(strategies[strat.index])
    print("  eta=%.1f  " % eta + " ".join(str(c) for c in row))
print(f"  distinct optimal pure strategies: {len(strategies)} (expected <= 6)")

# The worst case for P1 is the equalizing opponent at (1/3, 1/3), where
# even the best response only earns the game value -1/18.
value, strat = best_response(KuhnPeerParams(1 / 3, 1 / 3))
print(f"\nvalue against the equalizing opponent: {value:+.6f} (= -1/18 = {-1/18:+.6f})")
print(f"one best response there: root bets {strat.root_bet}, calls {strat.call_after_check_bet}")

# Mean best-response value over random opponents, the ceiling any
# adaptive agent could reach with perfect identification.
rng = np.random.default_rng(0)
values = [best_response(KuhnPeerParams(*rng.random(2)))[0] for _ in range(200)]
print(f"\nmean oracle value over 200 random opponents: {np.mean(values):+.4f}")
