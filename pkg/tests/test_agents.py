"""agents モジュールの単体テスト"""

import sys
from pathlib import Path

# scriptsディレクトリをパスに追加
sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))

import logging

import numpy as np
import pytest

from agents import (
    Agent,
    AgentConfig,
    AgentKind,
    UniformInit,
    UpdateMode,
    act,
    bootstrap,
    new_agent_state,
    update,
    update_double_q,
)
from core import (
    Constant,
    ConstantEps,
    CountBasedEps,
    MultiQ,
    RngStream,
    TransitionOutcome,
)
from envs import GridWorld, SuttonMDP, WengMDP
from harness import default_schedules


def default_config(env, kind, n=1, shifts=(), mode=UpdateMode.ASYNC, init=None):
    """各環境の既定スケジュールで AgentConfig を作る"""
    step_schedule, exploration = default_schedules(env)
    extra = {} if init is None else {"init": init}
    return AgentConfig(
        kind=kind,
        n=n,
        shifts=shifts,
        mode=mode,
        gamma=env.gamma,
        step_size=step_schedule,
        exploration=exploration,
        **extra,
    )


def simulate(cfg, env, seed, steps):
    """steps ステップ学習させ、各ステップ後のテーブルを返す"""
    rng = RngStream(seed)
    agent = Agent(cfg, env, rng)
    history = []
    s = None
    for _ in range(steps):
        if s is None:
            s = env.reset()
        a = agent.act(s, rng)
        outcome = env.step(s, a, rng)
        agent.observe(s, a, outcome, rng)
        history.append(agent.tables.copy())
        if outcome.next is None:
            agent.end_episode()
            s = None
        else:
            s = outcome.next
    return history


ENVS = [GridWorld("H"), GridWorld("W"), SuttonMDP(k=8, mu=-0.1), WengMDP(m=8)]
SEEDS = [1, 2, 3]


def two_table_mq(row1, row2):
    """状態0は0、状態1の行が row1 / row2 の MultiQ"""
    tables = np.zeros((2, 2, len(row1)))
    tables[0, 1] = row1
    tables[1, 1] = row2
    return MultiQ(tables, np.zeros(2))


class TestAgentConfig:
    """AgentConfig の不変条件"""

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind=AgentKind.Q_LEARNING, n=2),
            dict(kind=AgentKind.DOUBLE_Q, n=1),
            dict(kind=AgentKind.DOUBLE_Q, n=2, mode=UpdateMode.SYNC),
            dict(kind=AgentKind.MAXMIN, n=2, shifts=(0.0, -1.0)),
            dict(kind=AgentKind.DAQ_MAXMIN, n=2, shifts=(-1.0,)),
            dict(kind=AgentKind.MAXMIN, n=2, mode=UpdateMode.SYNC),
            dict(kind=AgentKind.DAQ_MINMAX, n=2, shifts=(0.0, 0.0), mode=UpdateMode.SYNC),
            dict(kind=AgentKind.Q_LEARNING, gamma=1.5),
            dict(kind=AgentKind.MAXMIN, n=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AgentConfig(**kwargs)

    def test_sync_with_uniform_init_allowed(self):
        cfg = AgentConfig(kind=AgentKind.MAXMIN, n=2, mode=UpdateMode.SYNC, init=UniformInit(-1, 1))
        assert cfg.shifts == (0.0, 0.0)

    def test_string_kind_coerced(self):
        cfg = AgentConfig(kind="daq_minmax", n=2, shifts=(-1, -2), mode="sync")
        assert cfg.kind is AgentKind.DAQ_MINMAX
        assert cfg.mode is UpdateMode.SYNC
        assert cfg.shifts == (-1.0, -2.0)

    def test_equal_shifts_in_sync_warn(self, caplog):
        with caplog.at_level(logging.WARNING):
            AgentConfig(kind=AgentKind.DAQ_MAXMIN, n=2, shifts=(-1.0, -1.0), mode=UpdateMode.SYNC)
        assert "同一" in caplog.text


class TestBootstrap:
    """bootstrap のテスト"""

    def test_terminal(self):
        mq = two_table_mq([1.0, 0.0], [0.0, 2.0])
        assert bootstrap(AgentKind.DAQ_MAXMIN, mq, None) == 0.0
        assert bootstrap(AgentKind.DAQ_MINMAX, mq, None) == 0.0

    @pytest.mark.parametrize(
        "kind,expected",
        [
            (AgentKind.MAXMIN, 0.0),
            (AgentKind.DAQ_MAXMIN, 0.0),
            (AgentKind.MINMAX, 1.0),
            (AgentKind.DAQ_MINMAX, 1.0),
        ],
    )
    def test_two_estimators(self, kind, expected):
        """Q_1=[1,0], Q_2=[0,2]: maxmin は0、minmax は1"""
        assert bootstrap(kind, two_table_mq([1.0, 0.0], [0.0, 2.0]), 1) == expected

    @pytest.mark.parametrize("kind", [AgentKind.Q_LEARNING, AgentKind.MAXMIN, AgentKind.MINMAX])
    def test_single_estimator_is_max(self, kind):
        tables = np.array([[[0.0, 0.0, 0.0], [0.5, -1.0, 3.0]]])
        assert bootstrap(kind, MultiQ(tables, np.zeros(1)), 1) == 3.0

    def test_n_actions_mask(self):
        tables = np.array([[[0.0, 0.0], [0.5, 9.0]]])
        assert bootstrap(AgentKind.Q_LEARNING, MultiQ(tables, np.zeros(1)), 1, n_actions=1) == 0.5

    def test_double_q_rejected(self):
        with pytest.raises(ValueError):
            bootstrap(AgentKind.DOUBLE_Q, two_table_mq([0.0], [0.0]), 1)

    def test_minmax_at_least_maxmin(self):
        """10^4 個のランダムな MultiQ で minmax >= maxmin"""
        generator = np.random.default_rng(0)
        for _ in range(10_000):
            n = int(generator.integers(1, 5))
            k = int(generator.integers(1, 6))
            mq = MultiQ(generator.normal(size=(n, 1, k)), np.zeros(n))
            assert bootstrap(AgentKind.MINMAX, mq, 0) >= bootstrap(AgentKind.MAXMIN, mq, 0)


class TestUpdate:
    """update のテスト"""

    def test_q_learning_arithmetic(self):
        """γ=0.95, α=0.1, Q=0, r=-1, 終端 → -0.1"""
        env = GridWorld()
        cfg = AgentConfig(kind=AgentKind.Q_LEARNING, gamma=0.95, step_size=Constant(0.1))
        state = new_agent_state(cfg, env)
        new = update(cfg, state, 0, 0, TransitionOutcome(None, -1.0), RngStream(0))
        assert new.mq.tables[0, 0, 0] == pytest.approx(-0.1)
        assert new.counters.n_sa[0, 0, 0] == 1

    def test_original_state_unchanged(self):
        env = GridWorld()
        cfg = AgentConfig(kind=AgentKind.Q_LEARNING, gamma=0.95)
        state = new_agent_state(cfg, env)
        update(cfg, state, 0, 0, TransitionOutcome(1, 10.0), RngStream(0))
        assert np.all(state.mq.tables == 0.0)
        assert np.all(state.counters.n_sa == 0)

    def test_async_daq_uses_drawn_shift(self):
        """非同期 DAQ は引いた推定器のシフトをターゲットに加える"""
        env = GridWorld()
        cfg = AgentConfig(
            kind=AgentKind.DAQ_MAXMIN, n=2, shifts=(-5.0, -10.0), gamma=0.95, step_size=Constant(1.0)
        )
        rng = RngStream(7)
        i = rng.clone().integers(2)
        new = update(cfg, new_agent_state(cfg, env), 0, 0, TransitionOutcome(None, 0.0), rng)
        assert new.mq.tables[i, 0, 0] == cfg.shifts[i]
        assert new.mq.tables[1 - i, 0, 0] == 0.0
        assert new.counters.n_sa[i, 0, 0] == 1
        assert new.counters.n_sa[1 - i, 0, 0] == 0

    def test_sync_updates_all_from_same_snapshot(self):
        """同期版は全推定器を更新前の同じ bootstrap で更新する"""
        env = SuttonMDP(k=2)
        cfg = AgentConfig(
            kind=AgentKind.DAQ_MINMAX,
            n=2,
            shifts=(-1.0, -2.0),
            mode=UpdateMode.SYNC,
            gamma=1.0,
            step_size=Constant(0.5),
        )
        state = new_agent_state(cfg, env)
        state.mq.tables[0, 1] = [1.0, 0.0]
        state.mq.tables[1, 1] = [0.0, 2.0]
        new = update(cfg, state, 0, 0, TransitionOutcome(1, 0.0), RngStream(0))
        # bootstrap = min(1, 2) = 1
        assert new.mq.tables[0, 0, 0] == pytest.approx(0.5 * (0.0 - 1.0 + 1.0))
        assert new.mq.tables[1, 0, 0] == pytest.approx(0.5 * (0.0 - 2.0 + 1.0))
        assert new.counters.n_sa[:, 0, 0].tolist() == [1, 1]

    def test_sync_consumes_no_randomness(self):
        env = SuttonMDP(k=2)
        cfg = AgentConfig(kind=AgentKind.DAQ_MAXMIN, n=2, shifts=(-1.0, -2.0), mode=UpdateMode.SYNC)
        rng, reference = RngStream(3), RngStream(3)
        update(cfg, new_agent_state(cfg, env), 0, 0, TransitionOutcome(1, 0.0), rng)
        assert rng.random() == reference.random()

    def test_constant_shift_equivariance(self):
        """全テーブルに k、報酬に k(1-γ) を足すと更新後も k だけずれる"""
        env = GridWorld()
        cfg = AgentConfig(kind=AgentKind.DAQ_MAXMIN, n=2, shifts=(-1.0, -2.0), gamma=0.95, step_size=Constant(0.3))
        generator = np.random.default_rng(1)
        base = new_agent_state(cfg, env)
        base.mq.tables[:] = generator.normal(size=base.mq.tables.shape)
        shifted = base.copy()
        k = 3.5
        shifted.mq.tables += k

        a = update(cfg, base, 2, 1, TransitionOutcome(5, 0.7), RngStream(4))
        b = update(cfg, shifted, 2, 1, TransitionOutcome(5, 0.7 + k * (1 - cfg.gamma)), RngStream(4))
        assert np.allclose(b.mq.tables - a.mq.tables, k, atol=1e-12)


class TestUpdateDoubleQ:
    """update_double_q のテスト"""

    def _config(self, alpha=0.1, gamma=1.0):
        return AgentConfig(kind=AgentKind.DOUBLE_Q, n=2, gamma=gamma, step_size=Constant(alpha))

    def test_terminal(self):
        """終端 r=+5, α=0.1 → 0.5"""
        cfg = self._config()
        rng = RngStream(0)
        i = rng.clone().integers(2)
        new = update_double_q(cfg, new_agent_state(cfg, SuttonMDP(k=2)), 0, 1, TransitionOutcome(None, 5.0), rng)
        assert new.mq.tables[i, 0, 1] == pytest.approx(0.5)
        assert new.mq.tables[1 - i, 0, 1] == 0.0
        assert new.counters.n_sa[i, 0, 1] == 1
        assert new.counters.n_sa[1 - i, 0, 1] == 0

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_selection_and_evaluation(self, seed):
        """Q_1(s')=[2,0], Q_2(s')=[0,3]: どちらを引いても評価値は0"""
        cfg = self._config(alpha=0.5)
        state = new_agent_state(cfg, SuttonMDP(k=2))
        state.mq.tables[0, 1] = [2.0, 0.0]
        state.mq.tables[1, 1] = [0.0, 3.0]
        rng = RngStream(seed)
        i = rng.clone().integers(2)
        new = update_double_q(cfg, state, 0, 0, TransitionOutcome(1, 1.0), rng)
        assert new.mq.tables[i, 0, 0] == pytest.approx(0.5)

    def test_identical_tables_match_q_learning(self):
        """Q_1 = Q_2 なら Q学習と同じ更新"""
        cfg = self._config(alpha=0.2, gamma=0.9)
        state = new_agent_state(cfg, SuttonMDP(k=3))
        state.mq.tables[:, 1] = [0.4, 1.2, -0.3]
        rng = RngStream(5)
        i = rng.clone().integers(2)
        new = update_double_q(cfg, state, 0, 0, TransitionOutcome(1, -1.0), rng)
        assert new.mq.tables[i, 0, 0] == pytest.approx(0.2 * (-1.0 + 0.9 * 1.2))

    def test_requires_double_q(self):
        cfg = AgentConfig(kind=AgentKind.MAXMIN, n=2)
        with pytest.raises(ValueError):
            update_double_q(cfg, new_agent_state(cfg, SuttonMDP()), 0, 0, TransitionOutcome(None, 0.0), RngStream(0))


class TestAct:
    """act のテスト"""

    def test_increments_state_counter(self):
        cfg = AgentConfig(kind=AgentKind.Q_LEARNING)
        state = new_agent_state(cfg, GridWorld())
        act(cfg, state, 4, RngStream(0))
        act(cfg, state, 4, RngStream(1))
        assert state.counters.n_state[4] == 2

    def test_first_visit_is_uniform(self):
        """訪問回数ベースの ε では最初の訪問は一様"""
        cfg = AgentConfig(kind=AgentKind.Q_LEARNING, exploration=CountBasedEps())
        rng = RngStream(2)
        picks = []
        for _ in range(4000):
            state = new_agent_state(cfg, GridWorld())
            state.mq.tables[0, 0] = [10.0, 0.0, 0.0, 0.0]
            picks.append(act(cfg, state, 0, rng))
        freq = np.bincount(picks, minlength=4) / len(picks)
        assert np.all(np.abs(freq - 0.25) < 0.03)

    def test_double_q_acts_on_sum(self):
        """ダブルQ学習の行動は Q_1 + Q_2 に基づく"""
        cfg = AgentConfig(kind=AgentKind.DOUBLE_Q, n=2, exploration=ConstantEps(0.0))
        state = new_agent_state(cfg, SuttonMDP(k=2))
        state.mq.tables[0, 0] = [1.0, 0.0]
        state.mq.tables[1, 0] = [0.0, 2.0]
        assert act(cfg, state, 0, RngStream(3)) == 1

    def test_restricted_to_valid_actions(self):
        """Sutton の A では行動 0, 1 のみ"""
        cfg = AgentConfig(kind=AgentKind.Q_LEARNING, exploration=ConstantEps(1.0))
        state = new_agent_state(cfg, SuttonMDP(k=8))
        rng = RngStream(4)
        assert {act(cfg, state, 0, rng) for _ in range(500)} == {0, 1}


class TestReductions:
    """特別な場合の厳密一致"""

    @pytest.mark.parametrize("env", ENVS, ids=lambda e: e.name)
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kind", [AgentKind.MAXMIN, AgentKind.MINMAX, AgentKind.DAQ_MAXMIN, AgentKind.DAQ_MINMAX])
    def test_single_estimator_is_q_learning(self, env, seed, kind):
        """N=1, b=0 はQ学習とビット単位で一致"""
        reference = simulate(default_config(env, AgentKind.Q_LEARNING), env, seed, 1000)
        history = simulate(default_config(env, kind, n=1), env, seed, 1000)
        assert all(np.array_equal(x, y) for x, y in zip(reference, history))

    @pytest.mark.parametrize("env", ENVS, ids=lambda e: e.name)
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize(
        "daq,plain",
        [(AgentKind.DAQ_MAXMIN, AgentKind.MAXMIN), (AgentKind.DAQ_MINMAX, AgentKind.MINMAX)],
    )
    def test_zero_shift_daq_is_plain(self, env, seed, daq, plain):
        """非同期 DAQ で b=0 なら maxmin / minmax Q学習と一致"""
        reference = simulate(default_config(env, plain, n=2), env, seed, 1000)
        history = simulate(default_config(env, daq, n=2, shifts=(0.0, 0.0)), env, seed, 1000)
        assert all(np.array_equal(x, y) for x, y in zip(reference, history))

    @pytest.mark.parametrize("env", ENVS, ids=lambda e: e.name)
    def test_sync_equal_shifts_keep_estimators_identical(self, env):
        """同期・0初期化・全シフト等しい → 全推定器が常に一致"""
        cfg = default_config(env, AgentKind.DAQ_MAXMIN, n=3, shifts=(-1.0, -1.0, -1.0), mode=UpdateMode.SYNC)
        for tables in simulate(cfg, env, 11, 1000):
            assert np.array_equal(tables[0], tables[1])
            assert np.array_equal(tables[0], tables[2])

    def test_sync_uniform_init_differs(self):
        """一様初期化なら推定器は異なる"""
        env = GridWorld()
        cfg = default_config(env, AgentKind.MAXMIN, n=2, mode=UpdateMode.SYNC, init=UniformInit(-1.0, 1.0))
        tables = simulate(cfg, env, 12, 10)[-1]
        assert not np.array_equal(tables[0], tables[1])


class TestBoundedness:
    @pytest.mark.parametrize("kind", list(AgentKind))
    def test_tables_stay_bounded(self, kind):
        """γ<1、0初期化なら |Q| <= R_max / (1-γ)"""
        env = GridWorld("H")
        n = {AgentKind.Q_LEARNING: 1, AgentKind.DOUBLE_Q: 2}.get(kind, 2)
        shifts = (-5.0, -10.0) if kind.value.startswith("daq") else ()
        cfg = default_config(env, kind, n=n, shifts=shifts)
        r_max = 12.0 + 10.0
        limit = r_max / (1 - env.gamma)
        for tables in simulate(cfg, env, 5, 3000):
            assert np.all(np.abs(tables) <= limit)
