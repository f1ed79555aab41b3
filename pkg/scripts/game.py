"""ダミー敵対者を加えた二人零和ゲームとミニマックスQ学習"""

import logging
from dataclasses import dataclass

import numpy as np

from agents import (
    DAQ_KINDS,
    Agent,
    AgentConfig,
    AgentKind,
    UpdateMode,
    initial_tables,
)
from analysis import ConvergenceError, ResidualWatch, check_episodic, greedy_policy
from config import MAX_STEPS_PER_EPISODE, VALUE_ITERATION_MAX_ITER, VALUE_ITERATION_TOL
from core import (
    ActionId,
    EstimatorIndex,
    RngStream,
    StateId,
    TransitionOutcome,
    VisitCounters,
    choose,
    epsilon,
    step_size,
    summed_values,
)
from envs import Environment, TabularMDP

logger = logging.getLogger(__name__)

# 手番の順序
MAXMIN = "maxmin"
MINMAX = "minmax"
ORDERS = (MAXMIN, MINMAX)

# |S|×|A|×N のテンソル Q(s, a, i)
GameQ = np.ndarray


@dataclass(frozen=True)
class AugmentedGame:
    """
    元の環境にダミーの敵対者を加えたゲーム

    敵対者の行動 i ∈ {0..N-1} は報酬に b_i を加えるだけで、遷移には影響しない。
    """

    env: Environment
    shifts: tuple[float, ...]

    @property
    def n_adversary(self) -> int:
        return len(self.shifts)

    def reset(self) -> StateId:
        return self.env.reset()

    def reward(self, base_reward: float, i: EstimatorIndex) -> float:
        """r(s, a, i) = r_env + b_i"""
        return base_reward + self.shifts[i]

    def augment(self, outcome: TransitionOutcome, i: EstimatorIndex) -> TransitionOutcome:
        return TransitionOutcome(outcome.next, self.reward(outcome.reward, i))

    def step(self, s: StateId, a: ActionId, i: EstimatorIndex, rng: RngStream) -> TransitionOutcome:
        """両者の行動 (a, i) で1ステップ進める（遷移は元の環境のまま）"""
        return self.augment(self.env.step(s, a, rng), i)

    def kernel(self, i: EstimatorIndex) -> np.ndarray:
        """敵対者の行動 i の下での遷移確率（元の環境と同一）"""
        if not 0 <= i < self.n_adversary:
            raise ValueError(f"敵対者の行動が範囲外です: {i}")
        return self.env.expected_mdp().P

    def expected_rewards(self) -> np.ndarray:
        """(|S|, |A|, N) の期待報酬 R(s, a) + b_i"""
        mdp = self.env.expected_mdp()
        shifts = np.array(self.shifts, dtype=float)
        return mdp.R[:, :, None] + shifts[None, None, :]


def build_augmented_game(env: Environment, shifts) -> AugmentedGame:
    """環境と報酬シフトからダミー敵対者付きのゲームを作る"""
    shifts = tuple(float(b) for b in shifts)
    if len(shifts) < 1:
        raise ValueError("shifts は1個以上必要です")
    return AugmentedGame(env, shifts)


def target_value(values: np.ndarray, order: str) -> float:
    """values は (k, N)。maxmin: max_a min_j、minmax: min_j max_a"""
    if order == MAXMIN:
        return float(values.min(axis=1).max())
    if order == MINMAX:
        return float(values.max(axis=0).min())
    raise ValueError(f"未知の手番順序です: {order}")


def minimax_q_update_in_place(
    gq: GameQ,
    s: StateId,
    a: ActionId,
    i: EstimatorIndex,
    outcome: TransitionOutcome,
    alpha: float,
    gamma: float,
    order: str,
    n_actions: int | None = None,
) -> None:
    if outcome.next is None:
        t = 0.0
    else:
        k = gq.shape[1] if n_actions is None else n_actions
        t = target_value(gq[outcome.next, :k, :], order)
    q = float(gq[s, a, i])
    target = outcome.reward + gamma * t
    gq[s, a, i] = q + alpha * (target - q)


def minimax_q_update(
    gq: GameQ,
    s: StateId,
    a: ActionId,
    i: EstimatorIndex,
    outcome: TransitionOutcome,
    alpha: float,
    gamma: float,
    order: str,
    n_actions: int | None = None,
) -> GameQ:
    """
    ミニマックスQ学習の1回の更新

        Q(s,a,i) += α (r(s,a,i) + γ·T − Q(s,a,i))
    outcome.reward はゲームの報酬 r_env + b_i（AugmentedGame.step の戻り値）。
    T は maxmin なら max_a min_j Q(s',a,j)、minmax なら min_j max_a Q(s',a,j)、終端では0。
    """
    new = gq.copy()
    minimax_q_update_in_place(new, s, a, i, outcome, alpha, gamma, order, n_actions)
    return new


class MinimaxLearner:
    """ゲーム上でミニマックスQ学習を行う学習器（行動方策は DAQ と同じ）"""

    def __init__(self, game: AugmentedGame, cfg: AgentConfig, order: str, rng: RngStream):
        env = game.env
        self.game = game
        self.cfg = cfg
        self.order = order
        self.action_counts = env.action_counts
        tables = initial_tables(cfg, env.n_states, env.n_actions, rng)
        self.gq: GameQ = np.ascontiguousarray(np.moveaxis(tables, 0, 2))
        self.counters = VisitCounters.zeros(game.n_adversary, env.n_states, env.n_actions)
        self.episode = 0

    def act(self, s: StateId, rng: RngStream) -> ActionId:
        """ユーザーの ε-greedy 行動（Σ_i Q(s, a, i) に基づく）"""
        self.counters.n_state[s] += 1
        eps = epsilon(self.cfg.exploration, self.counters, s)
        k = self.action_counts[s]
        return choose(summed_values(self.gq[s, :k, :].T), eps, rng)

    def play(self, s: StateId, a: ActionId, rng: RngStream) -> tuple[EstimatorIndex, TransitionOutcome]:
        """
        環境を進め、敵対者の行動 i を一様方策 μ で引いて更新する

        乱数の消費位置は DAQ の更新で推定器を引く位置と同じ（遷移・報酬の後）。
        ダミー敵対者は遷移に影響しないため、この位置でもゲームの意味は変わらない。
        """
        base = self.game.env.step(s, a, rng)
        i = rng.integers(self.game.n_adversary)
        outcome = self.game.augment(base, i)
        self.counters.n_sa[i, s, a] += 1
        alpha = step_size(self.cfg.step_size, self.counters, s, a, i, self.episode)
        n_next = None if outcome.next is None else self.action_counts[outcome.next]
        minimax_q_update_in_place(self.gq, s, a, i, outcome, alpha, self.cfg.gamma, self.order, n_next)
        return i, outcome


@dataclass
class EquivalenceReport:
    """DAQ とミニマックスQ学習の比較結果"""

    steps: int
    episodes: int
    max_deviation: float
    first_divergence: dict | None = None
    diverged_steps: int = 0

    @property
    def identical(self) -> bool:
        return self.max_deviation == 0.0 and self.first_divergence is None


def _order_of(kind: AgentKind) -> str:
    return MAXMIN if kind is AgentKind.DAQ_MAXMIN else MINMAX


def verify_equivalence(
    env: Environment,
    cfg: AgentConfig,
    steps: int,
    seed: int,
    max_steps_per_episode: int = MAX_STEPS_PER_EPISODE,
) -> EquivalenceReport:
    """
    非同期 DAQ とゲーム上のミニマックスQ学習を同じシードで並走させ、
    各ステップ後の max_{s,a,i} |Q_i(s,a) − Q(s,a,i)| の最大値を報告する

    乱数の消費順は両者で共通: ε判定、行動、遷移、報酬、推定器（敵対者の行動）。
    """
    if cfg.kind not in DAQ_KINDS or cfg.mode is not UpdateMode.ASYNC:
        raise ValueError("verify_equivalence は非同期 DAQ の設定のみ受け付けます")
    if steps < 0:
        raise ValueError(f"steps は0以上が必要です: {steps}")

    order = _order_of(cfg.kind)
    game = build_augmented_game(env, cfg.shifts)
    daq_rng, game_rng = RngStream(seed), RngStream(seed)
    daq = Agent(cfg, env, daq_rng)
    learner = MinimaxLearner(game, cfg, order, game_rng)

    report = EquivalenceReport(steps=0, episodes=0, max_deviation=0.0)
    s: StateId | None = None
    episode_steps = 0

    for t in range(1, steps + 1):
        if s is None:
            s = env.reset()
            episode_steps = 0
            report.episodes += 1

        a = daq.act(s, daq_rng)
        a_game = learner.act(s, game_rng)
        outcome = env.step(s, a, daq_rng)
        daq.observe(s, a, outcome, daq_rng)
        i_game, game_outcome = learner.play(s, a_game, game_rng)

        diff = np.abs(daq.tables - np.moveaxis(learner.gq, 2, 0))
        deviation = float(diff.max())
        report.max_deviation = max(report.max_deviation, deviation)
        report.steps = t

        diverged = deviation != 0.0 or a != a_game or outcome.next != game_outcome.next
        report.diverged_steps += int(diverged)
        if report.first_divergence is None and diverged:
            i, cell_s, cell_a = np.unravel_index(int(diff.argmax()), diff.shape)
            report.first_divergence = {
                "step": t,
                "state": int(cell_s),
                "action": int(cell_a),
                "estimator": int(i),
                "daq_action": a,
                "game_action": a_game,
                "adversary": i_game,
            }
            logger.warning(f"乖離を検出: step={t} cell=(s={cell_s}, a={cell_a}, i={i}) deviation={deviation}")

        episode_steps += 1
        if outcome.next is None or episode_steps >= max_steps_per_episode:
            daq.end_episode()
            learner.episode += 1
            s = None
        else:
            s = outcome.next

    logger.info(f"同値性検証: {report.steps} steps, {report.episodes} episodes, 最大乖離 {report.max_deviation}")
    return report


def game_value_iteration(
    game: AugmentedGame,
    order: str,
    tol: float = VALUE_ITERATION_TOL,
    max_iter: int = VALUE_ITERATION_MAX_ITER,
) -> GameQ:
    """
    期待報酬ゲームの Q(s, a, i) を価値反復で求める

        Q(s,a,i) = R(s,a) + b_i + γ Σ_s' P(s,a,s') T(s')
    T は order に応じて max_a min_j / min_j max_a（有効行動のみ）。
    """
    mdp: TabularMDP = game.env.expected_mdp()
    if mdp.gamma >= 1.0:
        check_episodic(mdp)
    n_states = mdp.n_states
    rewards = game.expected_rewards()
    valid = mdp.valid[:, :, None]
    transitions = mdp.P[:, :, :n_states]
    gq = np.zeros_like(rewards)
    residual = np.inf
    watch = ResidualWatch(mdp.gamma >= 1.0)

    for iteration in range(1, max_iter + 1):
        if order == MAXMIN:
            values = np.where(mdp.valid, gq.min(axis=2), -np.inf).max(axis=1)
        elif order == MINMAX:
            values = np.where(valid, gq, -np.inf).max(axis=1).min(axis=1)
        else:
            raise ValueError(f"未知の手番順序です: {order}")
        new = rewards + mdp.gamma * (transitions @ values)[:, :, None]
        new = np.where(valid, new, 0.0)
        residual = float(np.max(np.abs(new - gq)))
        gq = new
        if residual <= tol:
            logger.debug(f"ゲーム価値反復: {iteration} 回で収束 (residual={residual:.3e})")
            return gq
        if watch.stalled(iteration, residual):
            logger.warning(f"ゲーム価値反復: 残差が減少しないため打ち切ります (residual={residual:.3e}, {iteration} 回)")
            raise ConvergenceError(residual, iteration)

    raise ConvergenceError(residual, max_iter)


def greedy_user_policy(
    gq: GameQ,
    valid: np.ndarray | None = None,
    order: str = MAXMIN,
    atol: float = 1e-9,
) -> list[tuple[int, ...]]:
    """
    ユーザーの貪欲方策（状態ごとの argmax 集合）

    maxmin: argmax_a min_j Q(s,a,j)、minmax: argmax_a Q(s,a,j*)（j* = argmin_j max_a Q(s,a,j)）
    """
    if order == MAXMIN:
        scores = gq.min(axis=2)
    elif order == MINMAX:
        masked = gq if valid is None else np.where(valid[:, :, None], gq, -np.inf)
        worst = masked.max(axis=1).argmin(axis=1)
        scores = np.take_along_axis(gq, worst[:, None, None], axis=2)[:, :, 0]
    else:
        raise ValueError(f"未知の手番順序です: {order}")
    return greedy_policy(scores, valid, atol)
