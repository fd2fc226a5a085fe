"""Exact Kuhn Poker with the ego agent as P1.

Three cards (J < Q < K), one dealt to each player, actions bet/pass.
The opponent (P2) follows the two-parameter simplified policy family:
after dominated P2 lines are removed, a P2 policy is fully described by
``eta`` (probability of calling a P1 bet with Queen) and ``xi``
(probability of betting Jack after P1 checks). All remaining P2 choices
are forced: K always calls and always bets, J always folds to a bet,
Q never bets after a check.

The module also provides an exact expected-value evaluator over the full
game tree and a best-response solver over the 64 P1 pure strategies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Env, StepOutcome

JACK, QUEEN, KING = 0, 1, 2
CARD_NAMES = ("J", "Q", "K")

PASS, BET = 0, 1

N_ACTIONS = 2
OBS_DIM = 13

# Stage indices for the 7-way one-hot in the observation.
STAGE_P1_ROOT = 0
STAGE_P2_AFTER_BET = 1
STAGE_P2_AFTER_CHECK = 2
STAGE_P1_FACING_BET = 3
STAGE_FOLD = 4
STAGE_SHOWDOWN_BET = 5       # bet-call or check-bet-call
STAGE_SHOWDOWN_CHECK = 6     # check-check

# All legal action histories, terminal ones marked.
_STAGES = {
    (): STAGE_P1_ROOT,
    (BET,): STAGE_P2_AFTER_BET,
    (PASS,): STAGE_P2_AFTER_CHECK,
    (PASS, BET): STAGE_P1_FACING_BET,
    (BET, PASS): STAGE_FOLD,            # P2 folds, P1 wins
    (PASS, BET, PASS): STAGE_FOLD,      # P1 folds, P2 wins
    (BET, BET): STAGE_SHOWDOWN_BET,
    (PASS, BET, BET): STAGE_SHOWDOWN_BET,
    (PASS, PASS): STAGE_SHOWDOWN_CHECK,
}

TERMINAL_STAGES = (STAGE_FOLD, STAGE_SHOWDOWN_BET, STAGE_SHOWDOWN_CHECK)

# The six ordered deals (p1_card, p2_card), each with probability 1/6.
DEALS = tuple(
    (a, b) for a in (JACK, QUEEN, KING) for b in (JACK, QUEEN, KING) if a != b
)


@dataclass(frozen=True)
class KuhnState:
    p1_card: int
    p2_card: int
    history: tuple[int, ...] = ()

    @property
    def stage(self) -> int:
        return _STAGES[self.history]

    @property
    def terminal(self) -> bool:
        return self.stage in TERMINAL_STAGES


@dataclass(frozen=True)
class KuhnPeerParams:
    """Southey-style P2 parameterization, both probabilities in [0, 1]."""

    xi: float
    eta: float

    def __post_init__(self):
        if not (0.0 <= self.xi <= 1.0 and 0.0 <= self.eta <= 1.0):
            raise ValueError("xi and eta must lie in [0, 1]")


def encode_obs(state: KuhnState) -> np.ndarray:
    """13-d P1 observation: stage one-hot (7) | own card (3) | opp card (3).

    The opponent slot stays all-zero except at showdown terminals, where
    P2's card is revealed.
    """
    obs = np.zeros(OBS_DIM)
    obs[state.stage] = 1.0
    obs[7 + state.p1_card] = 1.0
    if state.stage in (STAGE_SHOWDOWN_BET, STAGE_SHOWDOWN_CHECK):
        obs[10 + state.p2_card] = 1.0
    return obs


def p2_bet_prob(params: KuhnPeerParams, card: int, history: tuple[int, ...]) -> float:
    """Probability that P2 bets (i.e. calls or raises the line) here."""
    if history == (BET,):
        # Facing a P1 bet: J folds, Q calls with prob eta, K calls.
        return (0.0, params.eta, 1.0)[card]
    if history == (PASS,):
        # After a P1 check: J bluffs with prob xi, Q checks, K bets.
        return (params.xi, 0.0, 1.0)[card]
    raise ValueError(f"not a P2 decision point: {history}")


def p2_action(
    params: KuhnPeerParams,
    card: int,
    history: tuple[int, ...],
    rng: np.random.Generator,
) -> int:
    p = p2_bet_prob(params, card, history)
    return BET if rng.random() < p else PASS


def terminal_payoff(state: KuhnState) -> float:
    """P1's reward at a terminal state (P2's reward is the negative)."""
    h = state.history
    if h == (BET, PASS):
        return 1.0
    if h == (PASS, BET, PASS):
        return -1.0
    sign = 1.0 if state.p1_card > state.p2_card else -1.0
    if h == (PASS, PASS):
        return sign
    if h in ((BET, BET), (PASS, BET, BET)):
        return 2.0 * sign
    raise RuntimeError(f"terminal_payoff called on non-terminal history {h}")


class KuhnEnv(Env):
    """Kuhn Poker from P1's seat; P2 moves are resolved inside ``step``.

    The ego agent decides at the root and (on the check-bet line) once
    more, so episodes last one or two steps. The terminal observation
    carries the showdown reveal when the episode ends in a showdown.
    """

    obs_dim = OBS_DIM
    n_actions = N_ACTIONS

    def __init__(self, peer: KuhnPeerParams, rng: np.random.Generator):
        self.peer = peer
        self.rng = rng
        self.state: KuhnState | None = None

    def set_peer(self, peer: KuhnPeerParams) -> None:
        self.peer = peer

    def reset(self) -> np.ndarray:
        p1, p2 = DEALS[self.rng.integers(len(DEALS))]
        self.state = KuhnState(p1, p2)
        return encode_obs(self.state)

    def step(self, action: int) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("step called before reset")
        if self.state.terminal:
            raise RuntimeError("step called on a terminal episode")
        self._check_action(action)

        state = KuhnState(
            self.state.p1_card, self.state.p2_card,
            self.state.history + (int(action),),
        )
        if not state.terminal and state.stage in (
            STAGE_P2_AFTER_BET, STAGE_P2_AFTER_CHECK,
        ):
            a2 = p2_action(self.peer, state.p2_card, state.history, self.rng)
            state = KuhnState(state.p1_card, state.p2_card, state.history + (a2,))

        self.state = state
        if state.terminal:
            return StepOutcome(encode_obs(state), terminal_payoff(state), True)
        return StepOutcome(encode_obs(state), 0.0, False)


@dataclass(frozen=True)
class P1PureStrategy:
    """One of the 64 deterministic P1 strategies.

    ``root_bet[c]`` is the bet decision holding card ``c`` at the root;
    ``call_after_check_bet[c]`` is the call decision on the check-bet line.
    """

    root_bet: tuple[bool, bool, bool]
    call_after_check_bet: tuple[bool, bool, bool]

    @property
    def index(self) -> int:
        i = 0
        for c in range(3):
            i |= int(self.root_bet[c]) << c
            i |= int(self.call_after_check_bet[c]) << (3 + c)
        return i

    @classmethod
    def from_index(cls, i: int) -> "P1PureStrategy":
        return cls(
            tuple(bool((i >> c) & 1) for c in range(3)),
            tuple(bool((i >> (3 + c)) & 1) for c in range(3)),
        )

    def behavioral(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array([float(b) for b in self.root_bet]),
            np.array([float(b) for b in self.call_after_check_bet]),
        )


def exact_ev(
    bet_prob: np.ndarray, call_prob: np.ndarray, params: KuhnPeerParams
) -> float:
    """Exact P1 expected value of a behavioral strategy against ``params``.

    ``bet_prob[c]`` / ``call_prob[c]`` give P1's bet and call probabilities
    per own card. The expectation runs over the 6 equally likely deals and
    both players' randomization by full tree enumeration.
    """
    total = 0.0
    for c1, c2 in DEALS:
        b = float(bet_prob[c1])
        q = float(call_prob[c1])
        sign = 1.0 if c1 > c2 else -1.0
        # P1 bets: P2 calls with its table probability, else folds.
        p_call = p2_bet_prob(params, c2, (BET,))
        ev_bet = p_call * 2.0 * sign + (1.0 - p_call) * 1.0
        # P1 checks: P2 bets or checks behind.
        p_bet = p2_bet_prob(params, c2, (PASS,))
        ev_check = p_bet * (q * 2.0 * sign + (1.0 - q) * -1.0) + (1.0 - p_bet) * sign
        total += b * ev_bet + (1.0 - b) * ev_check
    return total / len(DEALS)


_MID = None  # lazily built KuhnPeerParams(0.5, 0.5)


def best_response(params: KuhnPeerParams) -> tuple[float, P1PureStrategy]:
    """Maximize ``exact_ev`` over all 64 pure strategies.

    A pure best response always exists. Ties on the boundary between
    best-response regions are broken by the higher expected value against
    the whole peer family (EV is multilinear, so its mean over uniform
    (xi, eta) equals the EV at (0.5, 0.5)); remaining ties break toward
    the lowest strategy index. Without the robustness tie-break, corner
    parameters such as (0, 0) would select responses that are optimal
    nowhere in the interior, splitting the parameter square into more
    than its six natural best-response regions.
    """
    global _MID
    if _MID is None:
        _MID = KuhnPeerParams(0.5, 0.5)
    best_val, best_mid, best_strat = -np.inf, -np.inf, None
    for i in range(64):
        strat = P1PureStrategy.from_index(i)
        val = exact_ev(*strat.behavioral(), params)
        if val > best_val:
            best_val, best_strat = val, strat
            best_mid = exact_ev(*strat.behavioral(), _MID)
        elif val == best_val:
            mid = exact_ev(*strat.behavioral(), _MID)
            if mid > best_mid:
                best_mid, best_strat = mid, strat
    return best_val, best_strat
