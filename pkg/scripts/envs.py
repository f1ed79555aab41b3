"""ベンチマーク環境（グリッドワールド、SuttonのMDP、WengのMDP）"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from core import ActionId, RngStream, StateId, TransitionOutcome

logger = logging.getLogger(__name__)

# グリッドワールドの行動
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
GRID_MOVES = {
    UP: (0, 1),
    DOWN: (0, -1),
    LEFT: (-1, 0),
    RIGHT: (1, 0),
}

# Sutton / Weng の行動
MDP_LEFT, MDP_RIGHT = 0, 1

# SuttonのMDPの状態
STATE_A, STATE_B = 0, 1


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """
    期待報酬MDP

    P: (|S|, |A|, |S|+1) の遷移確率（最後の列は終端への吸収）
    R: (|S|, |A|) の期待即時報酬
    valid: (|S|, |A|) の有効行動フラグ（無効行動は終端へ確率1、報酬0）
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float
    valid: np.ndarray

    def __post_init__(self):
        n_states, n_actions, width = self.P.shape
        if width != n_states + 1:
            raise ValueError(f"P の最後の次元は |S|+1 が必要です: {self.P.shape}")
        if self.R.shape != (n_states, n_actions):
            raise ValueError(f"R の形状が不正です: {self.R.shape}")
        if not np.allclose(self.P.sum(axis=2), 1.0, rtol=0.0, atol=1e-12):
            raise ValueError("P の各行の和が1になっていません")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("R に有限でない値が含まれています")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"割引率は [0, 1] が必要です: {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def terminal_index(self) -> int:
        return self.n_states


def _empty_mdp(action_counts: tuple[int, ...], n_actions: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_states = len(action_counts)
    P = np.zeros((n_states, n_actions, n_states + 1))
    R = np.zeros((n_states, n_actions))
    valid = np.zeros((n_states, n_actions), dtype=bool)
    for s, k in enumerate(action_counts):
        valid[s, :k] = True
    # 無効行動は終端へ吸収させておく
    P[~valid, n_states] = 1.0
    return P, R, valid


class Environment:
    """環境の共通インターフェース"""

    name: str = ""
    gamma: float = 1.0
    start: StateId = 0

    @property
    def action_counts(self) -> tuple[int, ...]:
        raise NotImplementedError

    @property
    def n_states(self) -> int:
        return len(self.action_counts)

    @property
    def n_actions(self) -> int:
        return max(self.action_counts)

    def reset(self) -> StateId:
        return self.start

    def step(self, s: StateId, a: ActionId, rng: RngStream) -> TransitionOutcome:
        raise NotImplementedError

    def expected_mdp(self) -> TabularMDP:
        raise NotImplementedError

    def _check(self, s: StateId | None, a: ActionId) -> None:
        if s is None or not 0 <= s < self.n_states:
            raise ValueError(f"{self.name}: 非終端状態ではありません: s={s}")
        if not 0 <= a < self.action_counts[s]:
            raise ValueError(f"{self.name}: 状態{s}で無効な行動です: a={a}")


@dataclass(frozen=True)
class GridWorld(Environment):
    """
    グリッドワールド（左下スタート、右上ゴール）

    ゴールのマスで取った行動はエピソードを終了させる。
    報酬:
        H: 終了時 +5、それ以外 -12 または +10（等確率）
        W: 終了時 -35 または +45（等確率）、それ以外 -1
    盤外への移動はその場に留まり、通常の報酬を受け取る。
    """

    reward_variant: str = "H"
    width: int = 3
    height: int = 3
    gamma: float = 0.95

    def __post_init__(self):
        if self.reward_variant not in ("H", "W"):
            raise ValueError(f"報酬の種類は H または W です: {self.reward_variant}")
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise ValueError(f"グリッドが小さすぎます: {self.width}x{self.height}")

    @property
    def name(self) -> str:
        return f"grid-{self.reward_variant}"

    @property
    def start(self) -> StateId:
        return self.cell(0, 0)

    @property
    def goal(self) -> StateId:
        return self.cell(self.width - 1, self.height - 1)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return (len(GRID_MOVES),) * (self.width * self.height)

    def cell(self, x: int, y: int) -> StateId:
        return y * self.width + x

    def move(self, s: StateId, a: ActionId) -> StateId:
        x, y = s % self.width, s // self.width
        dx, dy = GRID_MOVES[a]
        nx, ny = x + dx, y + dy
        if not (0 <= nx < self.width and 0 <= ny < self.height):
            return s
        return self.cell(nx, ny)

    def step(self, s: StateId, a: ActionId, rng: RngStream) -> TransitionOutcome:
        self._check(s, a)
        if s == self.goal:
            if self.reward_variant == "H":
                return TransitionOutcome(None, 5.0)
            return TransitionOutcome(None, -35.0 if rng.integers(2) == 0 else 45.0)
        next_state = self.move(s, a)
        if self.reward_variant == "H":
            return TransitionOutcome(next_state, -12.0 if rng.integers(2) == 0 else 10.0)
        return TransitionOutcome(next_state, -1.0)

    def expected_mdp(self) -> TabularMDP:
        P, R, valid = _empty_mdp(self.action_counts, self.n_actions)
        terminal = self.n_states
        for s in range(self.n_states):
            for a in GRID_MOVES:
                if s == self.goal:
                    P[s, a, terminal] = 1.0
                    R[s, a] = 5.0
                else:
                    P[s, a, self.move(s, a)] = 1.0
                    R[s, a] = -1.0
        return TabularMDP(P, R, self.gamma, valid)


@dataclass(frozen=True)
class SuttonMDP(Environment):
    """
    SuttonのMDP

    A: right で報酬0で終了、left で報酬0でBへ
    B: K個の行動すべてが N(μ, 1) の報酬で終了
    """

    k: int = 8
    mu: float = -0.1
    gamma: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"Bの行動数は1以上が必要です: {self.k}")

    @property
    def name(self) -> str:
        return f"sutton-k{self.k}"

    @property
    def start(self) -> StateId:
        return STATE_A

    @property
    def action_counts(self) -> tuple[int, ...]:
        return (2, self.k)

    def step(self, s: StateId, a: ActionId, rng: RngStream) -> TransitionOutcome:
        self._check(s, a)
        if s == STATE_A:
            if a == MDP_RIGHT:
                return TransitionOutcome(None, 0.0)
            return TransitionOutcome(STATE_B, 0.0)
        return TransitionOutcome(None, rng.normal(self.mu, 1.0))

    def expected_mdp(self) -> TabularMDP:
        P, R, valid = _empty_mdp(self.action_counts, self.n_actions)
        terminal = self.n_states
        P[STATE_A, MDP_RIGHT, terminal] = 1.0
        P[STATE_A, MDP_LEFT, STATE_B] = 1.0
        P[STATE_B, : self.k, terminal] = 1.0
        R[STATE_B, : self.k] = self.mu
        return TabularMDP(P, R, self.gamma, valid)


@dataclass(frozen=True)
class WengMDP(Environment):
    """
    WengのMDP

    0: right で報酬0で終了、left で報酬0で {1..M} のいずれかへ一様に遷移
    1..M: right で0へ、left で終了。どちらも報酬は N(-0.1, 1)
    """

    m: int = 8
    gamma: float = 1.0
    mean: float = -0.1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"内部状態数は1以上が必要です: {self.m}")

    @property
    def name(self) -> str:
        return f"weng-m{self.m}"

    @property
    def action_counts(self) -> tuple[int, ...]:
        return (2,) * (self.m + 1)

    def step(self, s: StateId, a: ActionId, rng: RngStream) -> TransitionOutcome:
        self._check(s, a)
        if s == 0:
            if a == MDP_RIGHT:
                return TransitionOutcome(None, 0.0)
            return TransitionOutcome(1 + rng.integers(self.m), 0.0)
        next_state = 0 if a == MDP_RIGHT else None
        return TransitionOutcome(next_state, rng.normal(self.mean, 1.0))

    def expected_mdp(self) -> TabularMDP:
        P, R, valid = _empty_mdp(self.action_counts, self.n_actions)
        terminal = self.n_states
        P[0, MDP_RIGHT, terminal] = 1.0
        P[0, MDP_LEFT, 1:terminal] = 1.0 / self.m
        P[1:, MDP_RIGHT, 0] = 1.0
        P[1:, MDP_LEFT, terminal] = 1.0
        R[1:, :] = self.mean
        return TabularMDP(P, R, self.gamma, valid)


def reset(env: Environment) -> StateId:
    """開始状態を返す（乱数は消費しない）"""
    return env.reset()


def env_step(env: Environment, s: StateId, a: ActionId, rng: RngStream) -> TransitionOutcome:
    """1ステップ進める（乱数は 遷移 → 報酬 の順に消費）"""
    return env.step(s, a, rng)


def expected_mdp(env: Environment) -> TabularMDP:
    """報酬を期待値に置き換えた表形式MDPを返す"""
    return env.expected_mdp()


def make_env(
    name: str,
    variant: str = "H",
    k: int = 8,
    mu: float = -0.1,
    m: int = 8,
    gamma: float | None = None,
) -> Environment:
    """名前とパラメータから環境を生成"""
    if name == "grid":
        env = GridWorld(reward_variant=variant.upper())
    elif name == "sutton":
        env = SuttonMDP(k=k, mu=mu)
    elif name == "weng":
        env = WengMDP(m=m)
    else:
        raise ValueError(f"未知の環境です: {name}（grid / sutton / weng）")
    if gamma is not None:
        env = replace(env, gamma=gamma)
    logger.debug(f"環境生成: {env.name} (γ={env.gamma})")
    return env
