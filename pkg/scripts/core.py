"""共通の型・スケジュール・行動選択・乱数ストリーム"""

import copy
import math
from dataclasses import dataclass

import numpy as np

from config import RNG_BLOCK_SIZE

# 状態・行動・推定器のインデックスは0始まりの整数
StateId = int
ActionId = int
EstimatorIndex = int

# |S|×|A| の行列
QTable = np.ndarray


@dataclass(frozen=True)
class TransitionOutcome:
    """1ステップの遷移結果（next=None は終端）"""

    next: StateId | None
    reward: float

    @property
    def terminal(self) -> bool:
        return self.next is None


@dataclass(eq=False)
class MultiQ:
    """N個のQテーブルと報酬シフト (b_1..b_N)

    tables は (N, |S|, |A|) の配列、shifts は長さNの配列。
    """

    tables: np.ndarray
    shifts: np.ndarray

    def __post_init__(self):
        if self.tables.ndim != 3 or self.tables.shape[0] < 1:
            raise ValueError(f"tables は (N, |S|, |A|) が必要です: shape={self.tables.shape}")
        if self.shifts.shape != (self.tables.shape[0],):
            raise ValueError(
                f"shifts の長さがNと一致しません: {self.shifts.shape} != ({self.tables.shape[0]},)"
            )
        if not np.all(np.isfinite(self.tables)) or not np.all(np.isfinite(self.shifts)):
            raise ValueError("MultiQ に有限でない値が含まれています")

    @property
    def n(self) -> int:
        return self.tables.shape[0]

    @classmethod
    def zeros(cls, n: int, n_states: int, n_actions: int, shifts=None) -> "MultiQ":
        shifts = np.zeros(n) if shifts is None else np.asarray(shifts, dtype=float)
        return cls(np.zeros((n, n_states, n_actions)), shifts)

    def copy(self) -> "MultiQ":
        return MultiQ(self.tables.copy(), self.shifts.copy())


@dataclass(eq=False)
class VisitCounters:
    """訪問回数カウンタ

    n_state[s]: 状態sの訪問回数
    n_sa[i, s, a]: 推定器iが(s, a)を更新した回数
    """

    n_state: np.ndarray
    n_sa: np.ndarray

    @classmethod
    def zeros(cls, n: int, n_states: int, n_actions: int) -> "VisitCounters":
        return cls(
            np.zeros(n_states, dtype=np.int64),
            np.zeros((n, n_states, n_actions), dtype=np.int64),
        )

    def copy(self) -> "VisitCounters":
        return VisitCounters(self.n_state.copy(), self.n_sa.copy())


# ステップサイズのスケジュール


@dataclass(frozen=True)
class Constant:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"一定ステップサイズは (0, 1] が必要です: {self.alpha}")


@dataclass(frozen=True)
class VisitPolynomial:
    """1/n(s,a)^p"""

    exponent: float

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError(f"指数は正である必要があります: {self.exponent}")


@dataclass(frozen=True)
class EpisodeHarmonic:
    """c/(episode + d)"""

    c: float
    d: float

    def __post_init__(self):
        if self.c <= 0 or self.d <= 0 or self.c > self.d:
            raise ValueError(f"0 < c <= d が必要です: c={self.c}, d={self.d}")


StepSizeSchedule = Constant | VisitPolynomial | EpisodeHarmonic


# 探索率のスケジュール


@dataclass(frozen=True)
class ConstantEps:
    eps: float

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"ε は [0, 1] が必要です: {self.eps}")


@dataclass(frozen=True)
class CountBasedEps:
    """1/n(s)^p（p >= 0 なので n(s) >= 1 で ε は [0, 1]）"""

    exponent: float = 0.5

    def __post_init__(self):
        if not math.isfinite(self.exponent) or self.exponent < 0:
            raise ValueError(f"探索率の指数は0以上の有限値が必要です: {self.exponent}")


ExplorationSchedule = ConstantEps | CountBasedEps


def step_size(
    schedule: StepSizeSchedule,
    counters: VisitCounters,
    s: StateId,
    a: ActionId,
    i: EstimatorIndex,
    episode: int,
) -> float:
    """
    今回の更新に使うステップサイズを返す

    VisitPolynomial の場合、n_sa[i, s, a] は今回の更新分を加算済みであること
    （最初の更新で n = 1）。
    """
    if isinstance(schedule, Constant):
        return schedule.alpha
    if isinstance(schedule, VisitPolynomial):
        return 1.0 / float(counters.n_sa[i, s, a]) ** schedule.exponent
    if isinstance(schedule, EpisodeHarmonic):
        return schedule.c / (episode + schedule.d)
    raise ValueError(f"未知のステップサイズ: {schedule!r}")


def epsilon(schedule: ExplorationSchedule, counters: VisitCounters, s: StateId) -> float:
    """今回の訪問の探索率（CountBasedEps は n_state[s] 加算済みが前提）"""
    if isinstance(schedule, ConstantEps):
        return schedule.eps
    if isinstance(schedule, CountBasedEps):
        return 1.0 / float(counters.n_state[s]) ** schedule.exponent
    raise ValueError(f"未知の探索スケジュール: {schedule!r}")


class RngStream:
    """
    シード付きの決定的乱数ストリーム

    numpy の PCG64 から一様乱数 u ∈ [0, 1) をブロック単位で取り出し、
    全ての乱数をそこから導出する:
        random()      : u を1個
        integers(n)   : floor(u * n) を1個分（u を1個消費）
        normal()      : Box-Muller の cos 側 sqrt(-2 ln(1 - u1)) cos(2π u2)（u を2個消費）
    消費数が種類ごとに固定なので、アルゴリズム間の厳密一致テストが成立する。
    """

    def __init__(self, seed: int, block_size: int = RNG_BLOCK_SIZE):
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))
        self._block_size = block_size
        self._buffer: list[float] = []
        self._pos = 0

    def _next(self) -> float:
        if self._pos >= len(self._buffer):
            self._buffer = self._generator.random(self._block_size).tolist()
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        return u

    def random(self) -> float:
        return self._next()

    def integers(self, n: int) -> int:
        """{0..n-1} から一様に1つ"""
        if n < 1:
            raise ValueError(f"n は1以上が必要です: {n}")
        return min(int(self._next() * n), n - 1)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self._next()

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self._next()
        u2 = self._next()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + std * z

    def clone(self) -> "RngStream":
        return copy.deepcopy(self)


def mix_seed(base_seed: int, label_index: int, run_index: int) -> int:
    """
    (base_seed, label_index, run_index) から64bitシードを導出

    numpy の SeedSequence によるハッシュを用いるので、
    ラベルを追加しても他のラベルのストリームは変わらない。
    """
    seq = np.random.SeedSequence([int(base_seed), int(label_index), int(run_index)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def summed_values(rows: np.ndarray) -> np.ndarray:
    """推定器ごとの行 (N, k) を推定器0から順に足し合わせる"""
    total = np.array(rows[0], dtype=float)
    for row in rows[1:]:
        total += row
    return total


def choose(values: np.ndarray, eps: float, rng: RngStream) -> ActionId:
    """
    行動価値 values に対する ε-greedy 選択

    乱数の消費順: (1) ε判定の一様乱数を1個 (2) 探索なら全行動、
    貪欲なら argmax の同点集合から一様整数を1個。
    """
    explore = rng.random() < eps
    if explore:
        return rng.integers(len(values))
    ties = np.flatnonzero(values == values.max())
    return int(ties[rng.integers(len(ties))])


def select_action(
    mq: MultiQ,
    s: StateId,
    eps: float,
    rng: RngStream,
    n_actions: int | None = None,
) -> ActionId:
    """Σ_i Q_i(s, ·) に基づく ε-greedy 行動選択（n_actions は状態sで有効な行動数）"""
    k = mq.tables.shape[2] if n_actions is None else n_actions
    return choose(summed_values(mq.tables[:, s, :k]), eps, rng)

