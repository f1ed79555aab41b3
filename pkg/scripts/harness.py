"""実験の実行（設定ファイル、複数 run の並列実行、集計、移動平均）"""

import logging
import os
import re
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import NamedTuple

import numpy as np
from tqdm import tqdm

from agents import Agent, AgentConfig, AgentKind, UniformInit, UpdateMode, ZerosInit
from config import (
    DATA_DIR,
    DEFAULT_SEED,
    MAX_STEPS_PER_EPISODE,
    MOVING_AVERAGE_WINDOW,
    WORKERS_ENV,
)
from core import (
    ActionId,
    Constant,
    ConstantEps,
    CountBasedEps,
    EpisodeHarmonic,
    ExplorationSchedule,
    RngStream,
    StepSizeSchedule,
    VisitPolynomial,
    mix_seed,
)
from envs import (
    DOWN,
    LEFT,
    MDP_LEFT,
    MDP_RIGHT,
    RIGHT,
    UP,
    Environment,
    GridWorld,
    SuttonMDP,
    WengMDP,
    make_env,
)

logger = logging.getLogger(__name__)

GRID_ACTION_NAMES = {"up": UP, "down": DOWN, "left": LEFT, "right": RIGHT}
MDP_ACTION_NAMES = {"left": MDP_LEFT, "right": MDP_RIGHT}

TOP_LEVEL_KEYS = {
    "env.name",
    "env.variant",
    "env.k",
    "env.mu",
    "env.m",
    "env.gamma",
    "episodes",
    "runs",
    "seed",
    "window",
    "max_steps",
    "workers",
    "output",
    "metric",
    "plot",
    "plot.optimal",
    "band.low",
    "band.high",
}
AGENT_KEY = re.compile(r"^agent\.(\d+)\.(label|kind|n|shifts|mode|step_size|exploration|init|gamma)$")


# 評価指標


@dataclass(frozen=True)
class AvgRewardPerStep:
    """エピソードの報酬和 / エピソード長"""


@dataclass(frozen=True)
class StartActionRatio:
    """エピソード最初の行動（開始状態での行動）が action なら1、そうでなければ0"""

    action: ActionId


MetricKind = AvgRewardPerStep | StartActionRatio


@dataclass(frozen=True)
class EnvSpec:
    name: str
    variant: str = "H"
    k: int = 8
    mu: float = -0.1
    m: int = 8
    gamma: float | None = None

    def build(self) -> Environment:
        return make_env(self.name, self.variant, self.k, self.mu, self.m, self.gamma)


@dataclass(frozen=True)
class LabeledAgent:
    label: str
    config: AgentConfig


@dataclass(frozen=True)
class ExperimentConfig:
    """1つの図に対応する実験の設定"""

    env: EnvSpec
    agents: tuple[LabeledAgent, ...]
    episodes: int
    runs: int = 1
    base_seed: int = DEFAULT_SEED
    metric: MetricKind = field(default_factory=AvgRewardPerStep)
    window: int = MOVING_AVERAGE_WINDOW
    max_steps: int = MAX_STEPS_PER_EPISODE
    output: str = f"{DATA_DIR}/experiment"
    workers: int | None = None
    plot: bool = False
    optimal: float | None = None
    band: tuple[float, float] | None = None

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError(f"episodes は1以上が必要です: {self.episodes}")
        if self.runs < 1:
            raise ValueError(f"runs は1以上が必要です: {self.runs}")
        if self.window < 1:
            raise ValueError(f"window は1以上が必要です: {self.window}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps は1以上が必要です: {self.max_steps}")
        if self.workers is not None and self.workers < 1:
            raise ValueError(f"workers は1以上が必要です: {self.workers}")
        labels = [agent.label for agent in self.agents]
        if len(set(labels)) != len(labels):
            raise ValueError(f"ラベルが重複しています: {labels}")
        if self.band is not None and self.band[0] > self.band[1]:
            raise ValueError(f"band.low <= band.high が必要です: {self.band}")
        env = self.env.build()
        if isinstance(self.metric, StartActionRatio):
            if not 0 <= self.metric.action < env.action_counts[env.reset()]:
                raise ValueError(f"開始状態で無効な行動です: {self.metric.action}")


class EpisodeResult(NamedTuple):
    total_reward: float
    length: int
    first_action: ActionId
    truncated: bool


@dataclass(eq=False)
class LabelCurve:
    """1ラベル分の集計結果（長さはすべてエピソード数）"""

    label: str
    mean: np.ndarray
    stderr: np.ndarray
    moving_avg: np.ndarray
    truncations: int = 0


@dataclass(eq=False)
class AggregatedCurves:
    runs: int
    episodes: int
    curves: list[LabelCurve] = field(default_factory=list)

    def __getitem__(self, label: str) -> LabelCurve:
        for curve in self.curves:
            if curve.label == label:
                return curve
        raise KeyError(label)

    @property
    def labels(self) -> list[str]:
        return [curve.label for curve in self.curves]


# 設定ファイルの値の解釈


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"{key}: 整数ではありません: {value!r}") from None


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"{key}: 数値ではありません: {value!r}") from None


def _parse_floats(key: str, value: str) -> list[float]:
    return [_parse_float(key, part.strip()) for part in value.split(",") if part.strip()]


def parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{key}: 真偽値ではありません: {value!r}")


def parse_step_size(value: str, key: str = "step_size") -> StepSizeSchedule:
    """constant:α / visit:p / harmonic:c,d"""
    name, _, arg = value.partition(":")
    name = name.strip()
    if name == "constant":
        return Constant(_parse_float(key, arg))
    if name == "visit":
        return VisitPolynomial(_parse_float(key, arg))
    if name == "harmonic":
        params = _parse_floats(key, arg)
        if len(params) != 2:
            raise ValueError(f"{key}: harmonic:c,d の形式が必要です: {value!r}")
        return EpisodeHarmonic(*params)
    raise ValueError(f"{key}: 未知のステップサイズです: {value!r}")


def parse_exploration(value: str, key: str = "exploration") -> ExplorationSchedule:
    """constant:ε / count / count:p"""
    name, _, arg = value.partition(":")
    name = name.strip()
    if name == "constant":
        return ConstantEps(_parse_float(key, arg))
    if name == "count":
        return CountBasedEps(_parse_float(key, arg)) if arg else CountBasedEps()
    raise ValueError(f"{key}: 未知の探索スケジュールです: {value!r}")


def parse_init(value: str, key: str = "init") -> ZerosInit | UniformInit:
    name, _, arg = value.partition(":")
    name = name.strip()
    if name == "zeros":
        return ZerosInit()
    if name == "uniform":
        params = _parse_floats(key, arg) if arg else [-1.0, 1.0]
        if len(params) != 2:
            raise ValueError(f"{key}: uniform:lo,hi の形式が必要です: {value!r}")
        return UniformInit(*params)
    raise ValueError(f"{key}: 未知の初期化です: {value!r}")


def parse_metric(value: str, env_name: str) -> MetricKind:
    """avg_reward_per_step / start_action_ratio:<行動名または番号>"""
    name, _, arg = value.partition(":")
    if name == "avg_reward_per_step":
        return AvgRewardPerStep()
    if name == "start_action_ratio":
        names = GRID_ACTION_NAMES if env_name == "grid" else MDP_ACTION_NAMES
        arg = arg.strip().lower()
        if arg in names:
            return StartActionRatio(names[arg])
        return StartActionRatio(_parse_int("metric", arg))
    raise ValueError(f"metric: 未知の指標です: {value!r}")


def _read_pairs(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: key = value の形式ではありません: {raw.strip()!r}")
            key, value = key.strip(), value.strip()
            if key in pairs:
                raise ValueError(f"{path}:{lineno}: キーが重複しています: {key}")
            pairs[key] = value
    return pairs


def _build_agent(index: str, fields: dict[str, str], env: Environment) -> LabeledAgent:
    prefix = f"agent.{index}"
    if "kind" not in fields:
        raise ValueError(f"{prefix}.kind がありません")
    try:
        kind = AgentKind(fields["kind"])
    except ValueError:
        choices = ", ".join(k.value for k in AgentKind)
        raise ValueError(f"{prefix}.kind: 未知の種類です: {fields['kind']!r}（{choices}）") from None

    shifts = tuple(_parse_floats(f"{prefix}.shifts", fields["shifts"])) if "shifts" in fields else ()
    if "n" in fields:
        n = _parse_int(f"{prefix}.n", fields["n"])
    elif shifts:
        n = len(shifts)
    else:
        n = 2 if kind is AgentKind.DOUBLE_Q else 1

    kwargs = {
        "kind": kind,
        "n": n,
        "shifts": shifts,
        "gamma": _parse_float(f"{prefix}.gamma", fields["gamma"]) if "gamma" in fields else env.gamma,
    }
    if "mode" in fields:
        try:
            kwargs["mode"] = UpdateMode(fields["mode"])
        except ValueError:
            raise ValueError(f"{prefix}.mode: sync または async です: {fields['mode']!r}") from None
    step_schedule, exploration = default_schedules(env)
    if "step_size" in fields:
        step_schedule = parse_step_size(fields["step_size"], f"{prefix}.step_size")
    if "exploration" in fields:
        exploration = parse_exploration(fields["exploration"], f"{prefix}.exploration")
    kwargs["step_size"] = step_schedule
    kwargs["exploration"] = exploration
    if "init" in fields:
        kwargs["init"] = parse_init(fields["init"], f"{prefix}.init")

    try:
        cfg = AgentConfig(**kwargs)
    except ValueError as e:
        raise ValueError(f"{prefix}: {e}") from None
    return LabeledAgent(fields.get("label", kind.value), cfg)


def load_config(path: str | Path) -> ExperimentConfig:
    """
    key = value 形式の実験設定ファイルを読み込む

    Raises:
        FileNotFoundError: ファイルが存在しない
        ValueError: 未知のキー、不正な値、必須キーの欠落
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"設定ファイルが見つかりません: {path}")
    pairs = _read_pairs(path)

    agent_fields: dict[int, dict[str, str]] = {}
    for key, value in pairs.items():
        if key in TOP_LEVEL_KEYS:
            continue
        found = AGENT_KEY.match(key)
        if found is None:
            raise ValueError(f"{path}: 未知のキーです: {key}")
        agent_fields.setdefault(int(found.group(1)), {})[found.group(2)] = value

    if "env.name" not in pairs:
        raise ValueError(f"{path}: env.name がありません")
    if "episodes" not in pairs:
        raise ValueError(f"{path}: episodes がありません")
    if not agent_fields:
        raise ValueError(f"{path}: agent.<n>.kind が1つもありません")

    env_spec = EnvSpec(
        name=pairs["env.name"],
        variant=pairs.get("env.variant", "H"),
        k=_parse_int("env.k", pairs["env.k"]) if "env.k" in pairs else 8,
        mu=_parse_float("env.mu", pairs["env.mu"]) if "env.mu" in pairs else -0.1,
        m=_parse_int("env.m", pairs["env.m"]) if "env.m" in pairs else 8,
        gamma=_parse_float("env.gamma", pairs["env.gamma"]) if "env.gamma" in pairs else None,
    )
    env = env_spec.build()
    agents = tuple(
        _build_agent(str(index), agent_fields[index], env) for index in sorted(agent_fields)
    )

    band = None
    if "band.low" in pairs or "band.high" in pairs:
        if "band.low" not in pairs or "band.high" not in pairs:
            raise ValueError(f"{path}: band.low と band.high は両方必要です")
        band = (_parse_float("band.low", pairs["band.low"]), _parse_float("band.high", pairs["band.high"]))

    cfg = ExperimentConfig(
        env=env_spec,
        agents=agents,
        episodes=_parse_int("episodes", pairs["episodes"]),
        runs=_parse_int("runs", pairs["runs"]) if "runs" in pairs else 1,
        base_seed=_parse_int("seed", pairs["seed"]) if "seed" in pairs else DEFAULT_SEED,
        metric=parse_metric(pairs.get("metric", "avg_reward_per_step"), env_spec.name),
        window=_parse_int("window", pairs["window"]) if "window" in pairs else MOVING_AVERAGE_WINDOW,
        max_steps=_parse_int("max_steps", pairs["max_steps"]) if "max_steps" in pairs else MAX_STEPS_PER_EPISODE,
        output=pairs.get("output", f"{DATA_DIR}/{path.stem}"),
        workers=_parse_int("workers", pairs["workers"]) if "workers" in pairs else None,
        plot=parse_bool("plot", pairs["plot"]) if "plot" in pairs else False,
        optimal=_parse_float("plot.optimal", pairs["plot.optimal"]) if "plot.optimal" in pairs else None,
        band=band,
    )
    logger.debug(f"設定読み込み: {path} ({len(agents)} agents, {cfg.episodes} episodes, {cfg.runs} runs)")
    return cfg


def default_schedules(env: Environment) -> tuple[StepSizeSchedule, ExplorationSchedule]:
    """各ベンチマークの既定のステップサイズと探索率"""
    if isinstance(env, GridWorld):
        return VisitPolynomial(0.8), CountBasedEps(0.5)
    if isinstance(env, SuttonMDP):
        return Constant(0.1), ConstantEps(0.1)
    if isinstance(env, WengMDP):
        return EpisodeHarmonic(10.0, 100.0), ConstantEps(0.1)
    raise ValueError(f"既定のスケジュールがない環境です: {env!r}")


def resolve_workers(requested: int | None = None) -> int:
    """ワーカー数（引数 > 環境変数 DAQ_LAB_WORKERS > CPU数）"""
    if requested is not None:
        return max(1, requested)
    value = os.environ.get(WORKERS_ENV)
    if value:
        return max(1, _parse_int(WORKERS_ENV, value))
    return os.cpu_count() or 1


# 実行


def run_episode(agent: Agent, env: Environment, rng: RngStream, max_steps: int) -> EpisodeResult:
    """
    1エピソード実行する

    報酬和は環境の（シフトなしの）報酬。終了後にエピソード番号を進める。
    max_steps に達したら打ち切り、truncated を立てる。
    """
    s = env.reset()
    total = 0.0
    length = 0
    first_action = -1
    truncated = False

    while True:
        a = agent.act(s, rng)
        if length == 0:
            first_action = a
        outcome = env.step(s, a, rng)
        agent.observe(s, a, outcome, rng)
        total += outcome.reward
        length += 1
        if outcome.next is None:
            break
        if length >= max_steps:
            truncated = True
            break
        s = outcome.next

    agent.end_episode()
    return EpisodeResult(total, length, first_action, truncated)


def metric_value(metric: MetricKind, result: EpisodeResult) -> float:
    if isinstance(metric, AvgRewardPerStep):
        return result.total_reward / result.length
    if isinstance(metric, StartActionRatio):
        return 1.0 if result.first_action == metric.action else 0.0
    raise ValueError(f"未知の指標です: {metric!r}")


def run_single(task: tuple[ExperimentConfig, int, int]) -> tuple[int, int, np.ndarray, int]:
    """
    1ラベル・1 run 分を実行する（ワーカープロセスで呼ばれる）

    Returns:
        (label_index, run_index, エピソードごとの指標, 打ち切り回数)
    """
    cfg, label_index, run_index = task
    env = cfg.env.build()
    rng = RngStream(mix_seed(cfg.base_seed, label_index, run_index))
    agent = Agent(cfg.agents[label_index].config, env, rng)

    series = np.empty(cfg.episodes)
    truncations = 0
    for episode in range(cfg.episodes):
        result = run_episode(agent, env, rng, cfg.max_steps)
        series[episode] = metric_value(cfg.metric, result)
        truncations += result.truncated
    return label_index, run_index, series, truncations


def moving_average(series, window: int = MOVING_AVERAGE_WINDOW) -> np.ndarray:
    """
    移動平均（先頭は利用可能な分だけの平均）

    out[k] = mean(series[max(0, k-window+1) .. k])
    """
    if window < 1:
        raise ValueError(f"window は1以上が必要です: {window}")
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        return series.copy()
    head_len = min(window - 1, series.size)
    head = np.cumsum(series[:head_len]) / np.arange(1, head_len + 1)
    if series.size < window:
        return head
    body = np.lib.stride_tricks.sliding_window_view(series, window).mean(axis=1)
    return np.concatenate([head, body])


def episodes_to_reach(series, low: float, high: float, sustained: bool = False) -> int | None:
    """
    series が初めて [low, high] に入るエピソード番号（1始まり）

    sustained=True の場合は、それ以降ずっと範囲内に留まる最初のエピソード番号。
    到達しなければ None。
    """
    inside = (np.asarray(series) >= low) & (np.asarray(series) <= high)
    if not inside.any():
        return None
    if not sustained:
        return int(np.argmax(inside)) + 1
    if not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    return 1 if outside.size == 0 else int(outside[-1]) + 2


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, progress: bool = True) -> AggregatedCurves:
    """
    全ラベル × 全 run を実行し、エピソードごとの平均・標準誤差・移動平均を求める

    結果は実行順や並列度によらず (cfg, base_seed) だけで決まる。
    """
    n_workers = resolve_workers(workers if workers is not None else cfg.workers)
    tasks = [(cfg, li, r) for li in range(len(cfg.agents)) for r in range(cfg.runs)]
    logger.info(
        f"実験開始: {cfg.env.name} / {len(cfg.agents)} labels × {cfg.runs} runs × {cfg.episodes} episodes "
        f"(workers={n_workers})"
    )

    results = np.empty((len(cfg.agents), cfg.runs, cfg.episodes))
    truncations = [0] * len(cfg.agents)
    bar = dict(total=len(tasks), desc="runs", unit="run", disable=not progress)

    if n_workers > 1 and len(tasks) > 1:
        with Pool(processes=min(n_workers, len(tasks))) as pool:
            outputs = list(tqdm(pool.imap(run_single, tasks), **bar))
    else:
        outputs = [run_single(task) for task in tqdm(tasks, **bar)]

    for label_index, run_index, series, truncated in outputs:
        results[label_index, run_index] = series
        truncations[label_index] += truncated

    curves = AggregatedCurves(runs=cfg.runs, episodes=cfg.episodes)
    for label_index, agent in enumerate(cfg.agents):
        values = results[label_index]
        mean = values.mean(axis=0)
        if cfg.runs > 1:
            stderr = values.std(axis=0, ddof=1) / np.sqrt(cfg.runs)
        else:
            stderr = np.zeros(cfg.episodes)
        curves.curves.append(
            LabelCurve(agent.label, mean, stderr, moving_average(mean, cfg.window), truncations[label_index])
        )
        if truncations[label_index] > 0:
            total = cfg.runs * cfg.episodes
            logger.warning(f"{agent.label}: {truncations[label_index]}/{total} エピソードが打ち切られました")

    logger.info("実験完了")
    return curves
