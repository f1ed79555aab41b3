"""表形式の学習器（Q学習、ダブルQ学習、maxmin/minmax Q学習、DAQ）"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from core import (
    ActionId,
    Constant,
    ConstantEps,
    EstimatorIndex,
    ExplorationSchedule,
    MultiQ,
    RngStream,
    StateId,
    StepSizeSchedule,
    TransitionOutcome,
    VisitCounters,
    epsilon,
    select_action,
    step_size,
)
from envs import Environment

logger = logging.getLogger(__name__)


class AgentKind(str, Enum):
    Q_LEARNING = "q_learning"
    DOUBLE_Q = "double_q"
    MAXMIN = "maxmin"
    MINMAX = "minmax"
    DAQ_MAXMIN = "daq_maxmin"
    DAQ_MINMAX = "daq_minmax"


class UpdateMode(str, Enum):
    SYNC = "sync"
    ASYNC = "async"


# ブートストラップが max_a min_j になる種類
MAXMIN_KINDS = {AgentKind.Q_LEARNING, AgentKind.MAXMIN, AgentKind.DAQ_MAXMIN}
MINMAX_KINDS = {AgentKind.MINMAX, AgentKind.DAQ_MINMAX}
DAQ_KINDS = {AgentKind.DAQ_MAXMIN, AgentKind.DAQ_MINMAX}


@dataclass(frozen=True)
class ZerosInit:
    pass


@dataclass(frozen=True)
class UniformInit:
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"一様初期化は low < high が必要です: ({self.low}, {self.high})")


InitRule = ZerosInit | UniformInit


@dataclass(frozen=True)
class AgentConfig:
    """
    学習器の設定

    不変条件:
        QLearning は N=1、DoubleQ は N=2（どちらも非同期）
        DAQ 以外は shifts がすべて0
        同期モードで shifts がすべて0かつ N>=2 なら一様初期化が必要
        （推定器が永遠に同一になるため）
    """

    kind: AgentKind
    n: int = 1
    shifts: tuple[float, ...] = ()
    mode: UpdateMode = UpdateMode.ASYNC
    step_size: StepSizeSchedule = field(default_factory=lambda: Constant(0.1))
    exploration: ExplorationSchedule = field(default_factory=lambda: ConstantEps(0.1))
    gamma: float = 1.0
    init: InitRule = field(default_factory=ZerosInit)

    def __post_init__(self):
        kind = AgentKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "mode", UpdateMode(self.mode))
        shifts = tuple(float(b) for b in self.shifts) if self.shifts else (0.0,) * self.n
        object.__setattr__(self, "shifts", shifts)

        if self.n < 1:
            raise ValueError(f"推定器数Nは1以上が必要です: {self.n}")
        if len(shifts) != self.n:
            raise ValueError(f"shifts の長さ {len(shifts)} がN={self.n} と一致しません")
        if not np.all(np.isfinite(shifts)):
            raise ValueError(f"shifts に有限でない値があります: {shifts}")
        if kind is AgentKind.Q_LEARNING and self.n != 1:
            raise ValueError(f"Q学習は N=1 です: N={self.n}")
        if kind is AgentKind.DOUBLE_Q and self.n != 2:
            raise ValueError(f"ダブルQ学習は N=2 です: N={self.n}")
        if kind in (AgentKind.Q_LEARNING, AgentKind.DOUBLE_Q) and self.mode is not UpdateMode.ASYNC:
            raise ValueError(f"{kind.value} は非同期モードのみです")
        if kind not in DAQ_KINDS and any(b != 0.0 for b in shifts):
            raise ValueError(f"{kind.value} の shifts はすべて0である必要があります: {shifts}")
        if (
            self.mode is UpdateMode.SYNC
            and self.n >= 2
            and all(b == 0.0 for b in shifts)
            and isinstance(self.init, ZerosInit)
        ):
            raise ValueError("同期モードで shifts がすべて0の場合は一様初期化が必要です")
        if (
            self.mode is UpdateMode.SYNC
            and self.n >= 2
            and len(set(shifts)) == 1
            and isinstance(self.init, ZerosInit)
        ):
            logger.warning(f"同期モードで shifts がすべて等しいため推定器は同一のままです: {shifts}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"割引率は [0, 1] が必要です: {self.gamma}")


@dataclass(eq=False)
class AgentState:
    """学習器の状態（Qテーブル群、訪問カウンタ、エピソード番号）"""

    mq: MultiQ
    counters: VisitCounters
    action_counts: tuple[int, ...]
    episode: int = 0

    def copy(self) -> "AgentState":
        return AgentState(self.mq.copy(), self.counters.copy(), self.action_counts, self.episode)


def initial_tables(cfg: AgentConfig, n_states: int, n_actions: int, rng: RngStream | None) -> np.ndarray:
    """
    (N, |S|, |A|) の初期テーブル

    一様初期化は推定器・状態・行動の順（C順）に rng から一様乱数を引く。
    """
    shape = (cfg.n, n_states, n_actions)
    if isinstance(cfg.init, ZerosInit):
        return np.zeros(shape)
    if isinstance(cfg.init, UniformInit):
        if rng is None:
            raise ValueError("一様初期化には乱数ストリームが必要です")
        values = [rng.uniform(cfg.init.low, cfg.init.high) for _ in range(int(np.prod(shape)))]
        return np.array(values).reshape(shape)
    raise ValueError(f"未知の初期化: {cfg.init!r}")


def new_agent_state(cfg: AgentConfig, env: Environment, rng: RngStream | None = None) -> AgentState:
    """環境の大きさに合わせて学習器の状態を作る"""
    tables = initial_tables(cfg, env.n_states, env.n_actions, rng)
    mq = MultiQ(tables, np.array(cfg.shifts, dtype=float))
    counters = VisitCounters.zeros(cfg.n, env.n_states, env.n_actions)
    return AgentState(mq, counters, env.action_counts)


def bootstrap(
    kind: AgentKind,
    mq: MultiQ,
    next_state: StateId | None,
    n_actions: int | None = None,
) -> float:
    """
    次状態のブートストラップ値

        終端         : 0
        QLearning    : max_a Q_1(s', a)
        Maxmin系     : max_a min_j Q_j(s', a)
        Minmax系     : min_j max_a Q_j(s', a)
    """
    if next_state is None:
        return 0.0
    k = mq.tables.shape[2] if n_actions is None else n_actions
    values = mq.tables[:, next_state, :k]
    if kind in MAXMIN_KINDS:
        return float(values.min(axis=0).max())
    if kind in MINMAX_KINDS:
        return float(values.max(axis=1).min())
    raise ValueError(f"{AgentKind(kind).value} は bootstrap を使いません（update_double_q を参照）")


def _update_estimator(
    cfg: AgentConfig,
    state: AgentState,
    i: EstimatorIndex,
    s: StateId,
    a: ActionId,
    reward: float,
    boot: float,
) -> None:
    state.counters.n_sa[i, s, a] += 1
    alpha = step_size(cfg.step_size, state.counters, s, a, i, state.episode)
    q = float(state.mq.tables[i, s, a])
    target = reward + float(state.mq.shifts[i]) + cfg.gamma * boot
    state.mq.tables[i, s, a] = q + alpha * (target - q)


def update_in_place(
    cfg: AgentConfig,
    state: AgentState,
    s: StateId,
    a: ActionId,
    outcome: TransitionOutcome,
    rng: RngStream,
) -> None:
    """update と同じ更新を state に直接適用する（実験ループ用）"""
    if cfg.kind is AgentKind.DOUBLE_Q:
        _double_q_in_place(cfg, state, s, a, outcome, rng)
        return

    n_next = None if outcome.next is None else state.action_counts[outcome.next]
    if cfg.mode is UpdateMode.ASYNC:
        i = rng.integers(cfg.n)
        boot = bootstrap(cfg.kind, state.mq, outcome.next, n_next)
        _update_estimator(cfg, state, i, s, a, outcome.reward, boot)
        return

    # 同期: 全推定器が更新前の同じターゲットを使う
    boot = bootstrap(cfg.kind, state.mq, outcome.next, n_next)
    for i in range(cfg.n):
        _update_estimator(cfg, state, i, s, a, outcome.reward, boot)


def update(
    cfg: AgentConfig,
    state: AgentState,
    s: StateId,
    a: ActionId,
    outcome: TransitionOutcome,
    rng: RngStream,
) -> AgentState:
    """
    1遷移分の更新を行い、新しい状態を返す（元の state は変更しない）

    非同期: 推定器iを一様に1つ引き（整数乱数1個）、
        Q_i(s,a) += α (r + b_i + γ·bootstrap − Q_i(s,a))
    同期: i = 0..N-1 の順に、更新前テーブルから計算した同じ bootstrap で更新
    """
    new_state = state.copy()
    update_in_place(cfg, new_state, s, a, outcome, rng)
    return new_state


def _double_q_in_place(
    cfg: AgentConfig,
    state: AgentState,
    s: StateId,
    a: ActionId,
    outcome: TransitionOutcome,
    rng: RngStream,
) -> None:
    i = rng.integers(2)
    j = 1 - i
    tables = state.mq.tables
    state.counters.n_sa[i, s, a] += 1
    alpha = step_size(cfg.step_size, state.counters, s, a, i, state.episode)

    if outcome.next is None:
        target = outcome.reward
    else:
        k = state.action_counts[outcome.next]
        selector = tables[i, outcome.next, :k]
        ties = np.flatnonzero(selector == selector.max())
        best = int(ties[rng.integers(len(ties))])
        target = outcome.reward + cfg.gamma * float(tables[j, outcome.next, best])

    q = float(tables[i, s, a])
    tables[i, s, a] = q + alpha * (target - q)


def update_double_q(
    cfg: AgentConfig,
    state: AgentState,
    s: StateId,
    a: ActionId,
    outcome: TransitionOutcome,
    rng: RngStream,
) -> AgentState:
    """
    ダブルQ学習の更新

    i ∈ {1, 2} を一様に引き（整数乱数1個）、j をもう一方として
        Q_i(s,a) += α (r + γ Q_j(s', a*) − Q_i(s,a)),  a* ∈ argmax Q_i(s', ·)
    a* の同点は同点集合から整数乱数1個で決める。終端ではブートストラップ項なし。
    カウンタは引いた i の n_i(s, a) のみ加算する。
    """
    if cfg.kind is not AgentKind.DOUBLE_Q or state.mq.n != 2:
        raise ValueError("update_double_q は N=2 のダブルQ学習専用です")
    new_state = state.copy()
    _double_q_in_place(cfg, new_state, s, a, outcome, rng)
    return new_state


def act(cfg: AgentConfig, state: AgentState, s: StateId, rng: RngStream) -> ActionId:
    """n_state[s] を加算し、Σ Q_i に基づく ε-greedy で行動を選ぶ"""
    state.counters.n_state[s] += 1
    eps = epsilon(cfg.exploration, state.counters, s)
    return select_action(state.mq, s, eps, rng, state.action_counts[s])


class Agent:
    """1回の run で使う学習器（状態をその場で更新する）"""

    def __init__(self, cfg: AgentConfig, env: Environment, rng: RngStream):
        self.cfg = cfg
        self.state = new_agent_state(cfg, env, rng)

    @property
    def tables(self) -> np.ndarray:
        return self.state.mq.tables

    def act(self, s: StateId, rng: RngStream) -> ActionId:
        return act(self.cfg, self.state, s, rng)

    def observe(self, s: StateId, a: ActionId, outcome: TransitionOutcome, rng: RngStream) -> None:
        update_in_place(self.cfg, self.state, s, a, outcome, rng)

    def end_episode(self) -> None:
        self.state.episode += 1
