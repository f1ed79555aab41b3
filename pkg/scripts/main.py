"""エントリーポイント"""

import argparse
import dataclasses
import logging
import sys

from agents import AgentConfig, AgentKind, UpdateMode
from analysis import (
    BoundParams,
    async_params_from_state_action,
    bound_sweep,
    shift_bias_check,
    sync_bound,
    error_bound,
    value_iteration,
)
from config import DEFAULT_SEED
from envs import make_env
from game import MAXMIN, MINMAX, build_augmented_game, game_value_iteration, greedy_user_policy, verify_equivalence
from harness import episodes_to_reach, load_config, default_schedules, parse_init, run_experiment
from output import emit_csv, plot_curves

# ロギング設定
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(levelname)-5s %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)


def parse_shifts(value: str) -> tuple[float, ...]:
    """カンマ区切りのシフト列（例: -1,-2）"""
    try:
        shifts = tuple(float(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"シフトはカンマ区切りの数値です: {value!r}") from None
    if not shifts:
        raise argparse.ArgumentTypeError("シフトが空です")
    return shifts


def add_env_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--env", required=True, choices=["grid", "sutton", "weng"], help="環境名")
    parser.add_argument("--variant", default="H", help="グリッドワールドの報酬（H / W）")
    parser.add_argument("--k", type=int, default=8, help="SuttonのMDPの状態Bの行動数")
    parser.add_argument("--mu", type=float, default=-0.1, help="SuttonのMDPの報酬平均")
    parser.add_argument("--m", type=int, default=8, help="WengのMDPの内部状態数")
    parser.add_argument("--gamma", type=float, default=None, help="割引率（既定は環境ごとの値）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="報酬シフト付き複数推定器Q学習の実験ツール")
    parser.add_argument("--verbose", action="store_true", help="詳細ログ出力")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="設定ファイルの実験を実行してCSVを書き出す")
    run.add_argument("--config", required=True, help="実験設定ファイル")
    run.add_argument("--runs", type=int, help="run 数（設定ファイルより優先）")
    run.add_argument("--seed", type=int, help="基準シード（設定ファイルより優先）")
    run.add_argument("--out", help="出力パスのプレフィックス（設定ファイルより優先）")
    run.add_argument("--episodes", type=int, help="エピソード数（設定ファイルより優先）")
    run.add_argument("--workers", type=int, help="並列ワーカー数")
    run.add_argument("--no-progress", action="store_true", help="進捗バーを表示しない")

    bound = sub.add_parser("bound", help="有限時間誤差上界を計算する")
    bound.add_argument("--alpha", type=float, required=True)
    bound.add_argument("--gamma", type=float, required=True)
    bound.add_argument("--n", type=int, required=True)
    bound.add_argument("--size-sa", type=int, required=True)
    bound.add_argument("--d-min", type=float, required=True)
    bound.add_argument("--d-max", type=float, required=True)
    bound.add_argument("--t", type=float, default=0.0)
    bound.add_argument("--sync", action="store_true", help="同期版（d は S×A 上の値）")
    bound.add_argument(
        "--state-action",
        action="store_true",
        help="d を S×A 上の値として受け取り、一様な μ で非同期版の値に換算する",
    )
    bound.add_argument("--sweep", type=int, metavar="T", help="t = 0..T の上界をCSVで出力")
    bound.add_argument("--every", type=int, default=1, metavar="K", help="--sweep の刻み")

    oracle = sub.add_parser("oracle", help="価値反復で Q* と貪欲方策を求める")
    add_env_arguments(oracle)
    oracle.add_argument("--shift", type=float, default=0.0, help="報酬シフト b（γ=1 で値が発散する場合は残差の停滞で打ち切る）")
    oracle.add_argument("--check-bias", action="store_true", help="シフトによる定数バイアスを確認する")
    oracle.add_argument("--game-order", choices=[MAXMIN, MINMAX], help="ダミー敵対者付きゲームを解く")
    oracle.add_argument("--shifts", type=parse_shifts, default=(-1.0, -2.0), help="ゲームのシフト列")

    equiv = sub.add_parser("equiv-check", help="DAQ とミニマックスQ学習の一致を確認する")
    add_env_arguments(equiv)
    equiv.add_argument("--shifts", type=parse_shifts, default=(-1.0, -2.0), help="シフト列（例: -1,-2）")
    equiv.add_argument("--order", choices=[MAXMIN, MINMAX], default=MAXMIN)
    equiv.add_argument("--steps", type=int, default=1000)
    equiv.add_argument("--seed", type=int, default=DEFAULT_SEED)
    equiv.add_argument("--init", default="zeros", help="初期化（zeros / uniform:lo,hi）")

    return parser


def command_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    overrides = {
        "runs": args.runs,
        "base_seed": args.seed,
        "output": args.out,
        "episodes": args.episodes,
        "workers": args.workers,
    }
    overrides = {key: value for key, value in overrides.items() if value is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    curves = run_experiment(cfg, progress=not args.no_progress)
    emit_csv(curves, cfg.output)
    if cfg.plot:
        plot_curves(curves, f"{cfg.output}.png", optimal=cfg.optimal, title=cfg.env.name)

    if cfg.band is not None:
        low, high = cfg.band
        for curve in curves.curves:
            reached = episodes_to_reach(curve.moving_avg, low, high)
            print(f"{curve.label}: band [{low}, {high}] reached at episode {reached}")
    return 0


def command_bound(args: argparse.Namespace) -> int:
    if args.state_action and not args.sync:
        params = async_params_from_state_action(
            args.alpha, args.gamma, args.n, args.size_sa, args.d_min, args.d_max, args.t
        )
    else:
        params = BoundParams(args.alpha, args.gamma, args.n, args.size_sa, args.d_min, args.d_max, args.t)

    if args.sweep is not None:
        print("t,term1,term2,term3,total")
        for t, terms in bound_sweep(params, args.sweep, args.every):
            print(f"{t},{terms.term1!r},{terms.term2!r},{terms.term3!r},{terms.total!r}")
        return 0

    terms = sync_bound(params) if args.sync else error_bound(params)
    print(f"term1: {terms.term1!r}")
    print(f"term2: {terms.term2!r}")
    print(f"term3: {terms.term3!r}")
    print(f"total: {terms.total!r}")
    return 0


def _format_policy(policy: list[tuple[int, ...]]) -> str:
    return " ".join(f"{s}:{{{','.join(map(str, actions))}}}" for s, actions in enumerate(policy))


def command_oracle(args: argparse.Namespace) -> int:
    env = make_env(args.env, args.variant, args.k, args.mu, args.m, args.gamma)
    mdp = env.expected_mdp()

    if args.game_order is not None:
        game = build_augmented_game(env, args.shifts)
        gq = game_value_iteration(game, args.game_order)
        for s in range(env.n_states):
            k = env.action_counts[s]
            rows = "  ".join(f"a{a}=[{' '.join(f'{v:.6f}' for v in gq[s, a])}]" for a in range(k))
            print(f"s{s}: {rows}")
        print(f"policy: {_format_policy(greedy_user_policy(gq, mdp.valid, args.game_order))}")
        return 0

    result = value_iteration(mdp, args.shift)
    for s in range(env.n_states):
        k = env.action_counts[s]
        print(f"s{s}: " + " ".join(f"{v:.6f}" for v in result.qstar[s, :k]))
    print(f"policy: {_format_policy(result.policy)}")
    print(f"iterations: {result.iterations} residual: {result.residual:.3e}")

    if args.check_bias:
        report = shift_bias_check(mdp, args.shift)
        print(f"offset: {report.expected_offset!r} max error: {report.max_error:.3e} same policy: {report.same_policy}")
        return 0 if report.passed else 1
    return 0


def command_equiv_check(args: argparse.Namespace) -> int:
    env = make_env(args.env, args.variant, args.k, args.mu, args.m, args.gamma)
    step_schedule, exploration = default_schedules(env)
    kind = AgentKind.DAQ_MAXMIN if args.order == MAXMIN else AgentKind.DAQ_MINMAX
    cfg = AgentConfig(
        kind=kind,
        n=len(args.shifts),
        shifts=args.shifts,
        mode=UpdateMode.ASYNC,
        step_size=step_schedule,
        exploration=exploration,
        gamma=env.gamma,
        init=parse_init(args.init),
    )
    report = verify_equivalence(env, cfg, args.steps, args.seed)
    print(f"max deviation: {report.max_deviation:g}")
    if not report.identical:
        print(f"first divergence: {report.first_divergence}")
        print(f"diverged steps: {report.diverged_steps}")
        return 1
    return 0


COMMANDS = {
    "run": command_run,
    "bound": command_bound,
    "oracle": command_oracle,
    "equiv-check": command_equiv_check,
}


def cli_main(argv: list[str] | None = None) -> int:
    """
    サブコマンド:
        run --config <file> [--runs R --seed S --out PREFIX --episodes E --workers W]
        bound --alpha --gamma --n --size-sa --d-min --d-max [--t] [--sync] [--sweep T --every K]
        oracle --env <name> [params] [--shift b] [--game-order maxmin|minmax --shifts b1,b2]
        equiv-check --env <name> [params] --shifts b1,b2 --order maxmin|minmax --steps T --seed S
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        logger.error(f"エラー: {e}")
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
