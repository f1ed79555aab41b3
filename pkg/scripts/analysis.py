"""真値の計算（価値反復）と有限時間誤差上界の計算"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from config import (
    VALUE_ITERATION_MAX_ITER,
    VALUE_ITERATION_STALL_ITER,
    VALUE_ITERATION_STALL_RATIO,
    VALUE_ITERATION_TOL,
)
from core import QTable
from envs import TabularMDP

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """価値反復が max_iter 以内に収束しなかった"""

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"価値反復が収束しませんでした: residual={residual:.3e} ({iterations} 回)")
        self.residual = residual
        self.iterations = iterations


class ResidualWatch:
    """
    γ = 1 の価値反復で残差が減らなくなったことを検出する

    終端に到達できても、正のシフトなどで価値が際限なく増える場合は
    残差が一定のまま max_iter まで回り続けるため、早めに打ち切る。
    """

    def __init__(self, enabled: bool, patience: int = VALUE_ITERATION_STALL_ITER):
        self.enabled = enabled
        self.patience = patience
        self.best = math.inf
        self.last_progress = 0

    def stalled(self, iteration: int, residual: float) -> bool:
        if not self.enabled:
            return False
        if residual < self.best * (1.0 - VALUE_ITERATION_STALL_RATIO):
            self.best = residual
            self.last_progress = iteration
            return False
        return iteration - self.last_progress >= self.patience


@dataclass(frozen=True, eq=False)
class OracleResult:
    qstar: QTable
    policy: list[tuple[int, ...]]
    iterations: int
    residual: float
    residuals: tuple[float, ...] = ()


def check_episodic(mdp: TabularMDP) -> None:
    """
    γ = 1 の価値反復の前提チェック

    すべての状態から（何らかの行動列で）終端に到達できることを確認する。
    到達できない状態があれば ValueError。
    """
    n_states = mdp.n_states
    terminal = mdp.terminal_index
    reaches = np.zeros(n_states + 1, dtype=bool)
    reaches[terminal] = True
    changed = True
    while changed:
        changed = False
        for s in range(n_states):
            if reaches[s]:
                continue
            successors = mdp.P[s][mdp.valid[s]] > 0
            if np.any(successors & reaches[None, :]):
                reaches[s] = True
                changed = True
    if not reaches[:n_states].all():
        stuck = np.flatnonzero(~reaches[:n_states]).tolist()
        raise ValueError(f"γ=1 ですが終端に到達できない状態があります: {stuck}")


def greedy_policy(q: QTable, valid: np.ndarray | None = None, atol: float = 1e-9) -> list[tuple[int, ...]]:
    """状態ごとの argmax 集合（同点はすべて含める）"""
    q = np.asarray(q, dtype=float)
    if valid is not None:
        q = np.where(valid, q, -np.inf)
    best = q.max(axis=1, keepdims=True)
    return [tuple(np.flatnonzero(row >= b - atol).tolist()) for row, b in zip(q, best[:, 0])]


def value_iteration(
    mdp: TabularMDP,
    shift: float = 0.0,
    tol: float = VALUE_ITERATION_TOL,
    max_iter: int = VALUE_ITERATION_MAX_ITER,
) -> OracleResult:
    """
    シフト付き報酬で Q* を価値反復により求める

        Q(s,a) = R(s,a) + shift + γ Σ_s' P(s,a,s') max_a' Q(s',a')

    終端の寄与は0。sup ノルムの残差が tol 以下になるまで反復する。

    Raises:
        ValueError: γ = 1 で終端に到達できない状態がある
        ConvergenceError: max_iter 以内に収束しない
    """
    if mdp.gamma >= 1.0:
        check_episodic(mdp)

    n_states = mdp.n_states
    transitions = mdp.P[:, :, :n_states]
    rewards = mdp.R + shift
    q = np.zeros_like(mdp.R)
    residuals: list[float] = []
    watch = ResidualWatch(mdp.gamma >= 1.0)

    for iteration in range(1, max_iter + 1):
        values = np.where(mdp.valid, q, -np.inf).max(axis=1)
        new = np.where(mdp.valid, rewards + mdp.gamma * (transitions @ values), 0.0)
        residual = float(np.max(np.abs(new - q)))
        residuals.append(residual)
        q = new
        if residual <= tol:
            logger.debug(f"価値反復: {iteration} 回で収束 (residual={residual:.3e})")
            return OracleResult(
                qstar=q,
                policy=greedy_policy(q, mdp.valid),
                iterations=iteration,
                residual=residual,
                residuals=tuple(residuals),
            )
        if watch.stalled(iteration, residual):
            logger.warning(f"価値反復: 残差が減少しないため打ち切ります (residual={residual:.3e}, {iteration} 回)")
            raise ConvergenceError(residual, iteration)

    raise ConvergenceError(residuals[-1] if residuals else math.inf, max_iter)


@dataclass(frozen=True)
class ShiftBiasReport:
    shift: float
    expected_offset: float
    max_error: float
    same_policy: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol and self.same_policy


def shift_bias_check(mdp: TabularMDP, b: float, tol: float = 1e-8) -> ShiftBiasReport:
    """
    報酬シフトによる定数バイアスの確認

    Q*_b(s,a) − Q*(s,a) が一様に b/(1−γ) になること、
    および状態ごとの argmax 集合が変わらないことを調べる。
    """
    if mdp.gamma >= 1.0:
        raise ValueError(f"shift_bias_check は γ < 1 が必要です: γ={mdp.gamma}")
    vi_tol = min(tol, VALUE_ITERATION_TOL) * (1.0 - mdp.gamma) / 10.0
    base = value_iteration(mdp, 0.0, vi_tol)
    shifted = value_iteration(mdp, b, vi_tol)
    offset = b / (1.0 - mdp.gamma)
    error = np.where(mdp.valid, shifted.qstar - base.qstar - offset, 0.0)
    max_error = float(np.max(np.abs(error)))
    same_policy = base.policy == shifted.policy
    report = ShiftBiasReport(b, offset, max_error, same_policy, tol)
    if not report.passed:
        logger.warning(f"シフトバイアスの不一致: b={b} max_error={max_error:.3e} same_policy={same_policy}")
    return report


@dataclass(frozen=True)
class BoundParams:
    """
    有限時間誤差上界の入力

    d_min / d_max は非同期版では S×A×{1..N} 上、同期版では S×A 上の
    サンプリング分布の最小値・最大値。
    """

    alpha: float
    gamma: float
    n: int
    size_sa: int
    d_min: float
    d_max: float
    t: float = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha は (0, 1) が必要です: {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma は [0, 1) が必要です: {self.gamma}")
        if self.n < 1:
            raise ValueError(f"N は1以上が必要です: {self.n}")
        if self.size_sa < 1:
            raise ValueError(f"|S×A| は1以上が必要です: {self.size_sa}")
        if not 0.0 < self.d_min < 1.0 or not 0.0 < self.d_max < 1.0:
            raise ValueError(f"d_min, d_max は (0, 1) が必要です: ({self.d_min}, {self.d_max})")
        if self.d_min > self.d_max:
            raise ValueError(f"d_min <= d_max が必要です: ({self.d_min}, {self.d_max})")
        if self.t < 0:
            raise ValueError(f"t は0以上が必要です: {self.t}")


@dataclass(frozen=True)
class BoundTerms:
    term1: float
    term2: float
    term3: float

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3


def rho(p: BoundParams) -> float:
    """ρ = 1 − α d_min (1 − γ)（(0, 1) の外なら ValueError）"""
    value = 1.0 - p.alpha * p.d_min * (1.0 - p.gamma)
    if not 0.0 < value < 1.0:
        raise ValueError(f"ρ が (0, 1) にありません: {value}")
    return value


def error_bound(p: BoundParams) -> BoundTerms:
    """
    非同期 DAQ の E||Q_i − Q_i*||∞ の上界を3項に分けて返す

        term1 = 27 d_max |S×A| N α^{1/2} / (d_min^{3/2} (1−γ)^{5/2})
        term2 = 6 |S×A|^{3/2} N^{3/2} / (1−γ) · ρ^t
        term3 = 24 γ d_max |S×A|^{2/3} N^{2/3} / (1−γ) · 3 / (d_min (1−γ)) · ρ^{t/2 − 1}
    """
    r = rho(p)
    one_minus_gamma = 1.0 - p.gamma
    term1 = (
        27.0 * p.d_max * p.size_sa * p.n * math.sqrt(p.alpha)
        / (p.d_min**1.5 * one_minus_gamma**2.5)
    )
    term2 = 6.0 * p.size_sa**1.5 * p.n**1.5 / one_minus_gamma * r**p.t
    term3 = (
        24.0 * p.gamma * p.d_max * p.size_sa ** (2.0 / 3.0) * p.n ** (2.0 / 3.0) / one_minus_gamma
        * 3.0 / (p.d_min * one_minus_gamma)
        * r ** (p.t / 2.0 - 1.0)
    )
    return BoundTerms(term1, term2, term3)


def sync_bound(p: BoundParams) -> BoundTerms:
    """同期版の上界（式は同じ。p.d_min / p.d_max は S×A 上の値を渡す）"""
    return error_bound(p)


def async_params_from_state_action(
    alpha: float,
    gamma: float,
    n: int,
    size_sa: int,
    d_min_sa: float,
    d_max_sa: float,
    t: float = 0,
) -> BoundParams:
    """S×A 上の分布の極値と一様な μ(i) = 1/N から非同期版の BoundParams を作る"""
    return BoundParams(alpha, gamma, n, size_sa, d_min_sa / n, d_max_sa / n, t)


def bound_sweep(p: BoundParams, t_max: int, every: int = 1) -> list[tuple[int, BoundTerms]]:
    """t = 0, every, 2·every, ..., t_max での上界"""
    if every < 1:
        raise ValueError(f"every は1以上が必要です: {every}")
    return [
        (t, error_bound(BoundParams(p.alpha, p.gamma, p.n, p.size_sa, p.d_min, p.d_max, t)))
        for t in range(0, t_max + 1, every)
    ]
