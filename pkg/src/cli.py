"""
命令行入口

子命令：
    solve-iid           单字母最优化，输出 θ*、ξ*、b*、J*
    solve-dp            有限时长 / 相对值迭代，输出值函数
    eval                评估策略的泄漏率（精确展开或 Monte Carlo）
    simulate            仿真一条 (x, s, y) 轨迹
    verify-convergence  b* 下的子矩形证书与经验收敛
    certify             完整认证流程（LangGraph）
    bounds              连续字母表的上下界表
    sweep               电池容量扫描（最优值 vs 等概率策略）

退出码：0 成功，2 输入校验失败，3 数值未收敛，4 计算预算超限。
"""

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, TypeVar

from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from src import __version__
from src.bounds import bound_table, capacity_range, monte_carlo_continuous_check
from src.convergence import empirical_convergence, extreme_initial_distributions, subrectangular_certificate
from src.dp import solve_finite_horizon, solve_infinite_horizon
from src.errors import BatteryPrivacyError, ModelValidationError
from src.graph import run_certification
from src.iidopt import DEFAULT_TOL, solve_iid
from src.leakage import exact_leakage, monte_carlo_leakage
from src.model import Pmf, SystemSpec
from src.nodes import to_certificate
from src.policy import load_policy, structured_policy
from src.progress_tracker import get_progress_tracker, reset_progress_tracker
from src.schemas import CertificateDocument, RunConfig, SolutionDocument
from src.settings import get_log_level
from src.simulation import simulate
from src.sweep import sweep_battery_sizes, write_sweep_csv

logger = logging.getLogger(__name__)

console = Console()

T = TypeVar("T")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3


def setup_logging(level: Optional[str] = None) -> None:
    """只在 CLI 中配置日志处理器"""
    logging.basicConfig(
        level=(level or get_log_level()).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=False, show_path=False)],
        force=True,
    )


# ===== 输入输出 =====
def write_json(path: Path, document: BaseModel) -> None:
    """indent=2、键排序，相同输入得到逐字节相同的文件"""
    payload = document.model_dump(mode="json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_error(payload: dict[str, Any]) -> None:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def parse_int_range(text: str) -> list[int]:
    """"0..10" 或 "1,3,5" """
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part.strip()]


def parse_float_range(text: str, step: float) -> list[float]:
    """"2..50" 按 step 展开，或单个数值"""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return capacity_range(float(lo), float(hi), step)
    return [float(part) for part in text.split(",") if part.strip()]


def run_with_status(label: str, fn: Callable[[], T]) -> T:
    """在工作线程中运行 fn，主线程用 rich 状态行显示进度"""
    reset_progress_tracker()
    tracker = get_progress_tracker()
    with ThreadPoolExecutor(max_workers=1) as executor:
        future = executor.submit(fn)
        with console.status(f"[bold cyan]{label}...[/bold cyan]") as status:
            while not future.done():
                state = tracker.get_state()
                progress = f" {state.progress_percent:.0f}%" if state.total_units else ""
                remaining = (
                    f"，剩余约 {state.get_formatted_remaining_time()}"
                    if state.estimated_remaining_seconds > 0
                    else ""
                )
                status.update(
                    f"[bold cyan]{label}: {state.current_stage_display}{progress}{remaining}[/bold cyan]"
                )
                time.sleep(0.2)
        return future.result()


def _require(config: RunConfig, *names: str) -> None:
    missing = [name for name in names if getattr(config, name) is None]
    if missing:
        raise ModelValidationError(f"{config.command}: missing required option(s) {missing}")


def _output(config: RunConfig, default: str) -> Path:
    return config.output_path if config.output_path is not None else Path(default)


# ===== 子命令 =====
def cmd_solve_iid(config: RunConfig, args: argparse.Namespace) -> int:
    _require(config, "spec_path")
    spec = SystemSpec.load(config.spec_path)
    solution = run_with_status("求解单字母问题", lambda: solve_iid(spec, tol=config.tol))
    out = _output(config, "solution.json")
    write_json(out, solution.to_document(config.units))
    console.print(
        f"[green]J* = {solution.to_document(config.units).J_star:.6f} {config.units}[/green] "
        f"（{solution.iterations} 次迭代，梯度范数 {solution.gradient_norm:.2e}）"
    )
    console.print(f"[blue]结果已保存至: {out}[/blue]")
    if not solution.converged:
        console.print("[yellow]警告: 未达到收敛容差[/yellow]")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_solve_dp(config: RunConfig, args: argparse.Namespace) -> int:
    _require(config, "spec_path")
    spec = SystemSpec.load(config.spec_path)
    out = _output(config, "value.json")
    if args.infinite:
        solution = run_with_status(
            "相对值迭代",
            lambda: solve_infinite_horizon(
                spec, space=args.space, resolution=config.resolution, tol=config.tol, seed=config.seed
            ),
        )
        solution.value_function.save(out)
        converged = solution.converged
    else:
        _require(config, "horizon")
        solution = run_with_status(
            "有限时长值迭代",
            lambda: solve_finite_horizon(
                spec,
                config.horizon,
                resolution=config.resolution,
                space=args.space,
                seed=config.seed,
                tol=config.tol,
            ),
        )
        solution.value_functions[0].save(out)
        converged = True
    document = solution.to_document(config.units)
    if args.summary is not None:
        write_json(args.summary, document)
    console.print(
        f"[green]rate = {document.rate:.6f} {config.units}[/green] "
        f"（{document.space}，网格 {document.grid_size} 点）"
    )
    console.print(f"[blue]值函数已保存至: {out}[/blue]")
    if not converged:
        console.print(f"[yellow]警告: 相对值迭代未收敛（span={document.span:.2e}）[/yellow]")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_eval(config: RunConfig, args: argparse.Namespace) -> int:
    _require(config, "spec_path", "policy_path", "horizon")
    spec = SystemSpec.load(config.spec_path)
    policy = load_policy(config.policy_path, spec)
    method = args.method or ("mc" if config.samples is not None else "exact")
    if method == "exact":
        report = run_with_status(
            "精确评估", lambda: exact_leakage(spec, policy, config.horizon, units=config.units)
        )
    else:
        _require(config, "samples")
        report = run_with_status(
            "Monte Carlo 评估",
            lambda: monte_carlo_leakage(
                spec, policy, config.horizon, config.samples, config.seed, units=config.units
            ),
        )
    out = _output(config, "leakage.json")
    write_json(out, report)
    if args.csv is not None:
        report.to_csv(args.csv)
    ci = f" ± {report.ci_halfwidth:.4f}" if report.ci_halfwidth is not None else ""
    console.print(f"[green]L_T = {report.total_rate:.6f}{ci} {config.units}[/green]（T={report.horizon}）")
    for warning in report.warnings:
        console.print(f"[yellow]警告: {warning}[/yellow]")
    console.print(f"[blue]报告已保存至: {out}[/blue]")
    return EXIT_OK


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> int:
    _require(config, "spec_path", "policy_path", "horizon")
    spec = SystemSpec.load(config.spec_path)
    policy = load_policy(config.policy_path, spec)
    trace = simulate(spec, policy, config.horizon, config.seed)
    out = _output(config, "trace.csv")
    trace.to_csv(out)
    console.print(f"[blue]轨迹（T={trace.horizon}）已保存至: {out}[/blue]")
    return EXIT_OK


def _solution_policy(config: RunConfig, spec: SystemSpec):
    if config.solution_path is None:
        return solve_iid(spec).b_star
    document = SolutionDocument.model_validate_json(config.solution_path.read_text(encoding="utf-8"))
    if (document.mx, document.my, document.ms) != (spec.mx, spec.my, spec.ms):
        raise ModelValidationError("solution alphabets do not match the spec")
    theta = Pmf(spec.battery_alphabet, document.theta_star)
    return structured_policy(theta, spec.demand_pmf, spec)


def cmd_verify_convergence(config: RunConfig, args: argparse.Namespace) -> int:
    _require(config, "spec_path")
    spec = SystemSpec.load(config.spec_path)
    b_star = _solution_policy(config, spec)
    horizon = config.horizon or 300

    def verify() -> CertificateDocument:
        _, _, subrectangularity = subrectangular_certificate(spec, b_star)
        convergence = empirical_convergence(
            spec,
            b_star,
            extreme_initial_distributions(spec, seed=config.seed),
            horizon=horizon,
            samples=config.samples or 2000,
            seed=config.seed,
            units=config.units,
        )
        return CertificateDocument(
            subrectangularity=subrectangularity,
            convergence=convergence,
            passed=subrectangularity.ok and convergence.passed,
        )

    document = run_with_status("验证收敛性", verify)
    out = _output(config, "convergence.json")
    write_json(out, document)
    table = Table(title=f"经验收敛（T={horizon}）")
    table.add_column("初始 θ")
    table.add_column("TV 距离", justify="right")
    table.add_column("Cesàro 泄漏", justify="right")
    table.add_column("I(b; ξ°)", justify="right")
    for run in document.convergence.runs:
        table.add_row(
            "[" + ", ".join(f"{p:.3f}" for p in run.initial_theta) + "]",
            f"{run.tv_distance:.2e}",
            f"{run.cesaro_leakage:.4f} ± {run.cesaro_ci:.4f}",
            f"{run.target_leakage:.4f}",
        )
    console.print(table)
    console.print(f"[blue]报告已保存至: {out}[/blue]")
    return EXIT_OK if document.passed else EXIT_NOT_CONVERGED


def cmd_certify(config: RunConfig, args: argparse.Namespace) -> int:
    _require(config, "spec_path")
    spec = SystemSpec.load(config.spec_path)
    tol = config.tol if args.tol is not None else DEFAULT_TOL
    state = run_with_status(
        "认证",
        lambda: run_certification(
            spec,
            horizon=config.horizon or 300,
            samples=config.samples or 2000,
            seed=config.seed,
            tol=tol,
        ),
    )
    document = to_certificate(state, config.units)
    out = _output(config, "certificate.json")
    write_json(out, document)
    if document.passed:
        console.print("[bold green]认证通过[/bold green]")
    else:
        console.print("[bold red]认证未通过[/bold red]")
        for error in document.errors:
            console.print(f"  - {error}")
    console.print(f"[blue]证书已保存至: {out}[/blue]")
    if document.passed:
        return EXIT_OK
    solution = state.get("solution")
    if solution is not None and not solution.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_FAILED


def cmd_bounds(config: RunConfig, args: argparse.Namespace) -> int:
    capacities = parse_float_range(args.B, args.step)
    rows = bound_table(capacities)
    out = _output(config, "bounds.csv")
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["B", "lower", "achievable", "gap"])
        for row in rows:
            writer.writerow([repr(row.B), repr(row.lower), repr(row.achievable), repr(row.gap)])
    if args.check:
        table = Table(title="数值积分核对")
        for column in ("B", "闭式解", "数值积分", "Monte Carlo"):
            table.add_column(column, justify="right")
        for B in capacities:
            check = monte_carlo_continuous_check(B, samples=config.samples or 100_000, seed=config.seed)
            table.add_row(
                f"{B:g}",
                f"{check.closed_form:.8f}",
                f"{check.quadrature:.8f}",
                f"{check.mc_estimate:.5f} ± {1.96 * check.mc_stderr:.5f}",
            )
        console.print(table)
    console.print(f"[blue]{len(rows)} 行已保存至: {out}[/blue]")
    return EXIT_OK


def cmd_sweep(config: RunConfig, args: argparse.Namespace) -> int:
    if config.spec_path is not None:
        spec = SystemSpec.load(config.spec_path)
        if not spec.is_iid:
            raise ModelValidationError("sweep needs i.i.d. demand")
        demand = spec.demand_pmf
    else:
        demand = Pmf.binomial(args.mx, 0.5)
    sizes = parse_int_range(args.ms)
    rows = run_with_status(
        "电池容量扫描",
        lambda: sweep_battery_sizes(
            demand,
            sizes,
            horizon=config.horizon or 200,
            samples=config.samples or 10_000,
            seed=config.seed,
            units=config.units,
        ),
    )
    out = _output(config, "sweep.csv")
    write_sweep_csv(rows, out)
    table = Table(title=f"m_x = {demand.support.hi}")
    for column in ("m_s", "J*", "J_eq", "ci"):
        table.add_column(column, justify="right")
    for row in rows:
        if row.error is not None:
            table.add_row(str(row.m_s), "[red]失败[/red]", row.error, "")
        else:
            table.add_row(str(row.m_s), f"{row.J_star:.4f}", f"{row.J_eq_estimate:.4f}", f"{row.ci:.4f}")
    console.print(table)
    console.print(f"[blue]结果已保存至: {out}[/blue]")
    return EXIT_OK if all(row.error is None for row in rows) else EXIT_FAILED


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "solve-iid": cmd_solve_iid,
    "solve-dp": cmd_solve_dp,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "verify-convergence": cmd_verify_convergence,
    "certify": cmd_certify,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
}


# ===== 参数解析 =====
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", type=Path, help="系统描述 JSON")
    common.add_argument("--out", type=Path, help="输出文件")
    common.add_argument("--units", choices=["bits", "nats"], default="bits")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--horizon", "--T", dest="horizon", type=int, default=None)
    common.add_argument("--samples", type=int, default=None)
    common.add_argument("--log-level", default=None, help="默认 BP_LOG_LEVEL 或 INFO")

    parser = argparse.ArgumentParser(
        prog="battery-privacy", description="智能电表电池充放电策略的隐私泄漏分析"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("solve-iid", parents=[common], help="单字母最优化")

    dp = sub.add_parser("solve-dp", parents=[common], help="置信状态动态规划")
    dp.add_argument("--infinite", action="store_true", help="相对值迭代（平均代价）")
    dp.add_argument("--resolution", type=int, default=None)
    dp.add_argument("--space", choices=["joint", "difference"], default=None)
    dp.add_argument("--summary", type=Path, default=None, help="求解摘要 JSON")

    ev = sub.add_parser("eval", parents=[common], help="评估策略泄漏率")
    ev.add_argument("--policy", type=Path)
    ev.add_argument("--method", choices=["exact", "mc"], default=None)
    ev.add_argument("--csv", type=Path, default=None, help="逐步代价 CSV")

    sim = sub.add_parser("simulate", parents=[common], help="仿真一条轨迹")
    sim.add_argument("--policy", type=Path)

    conv = sub.add_parser("verify-convergence", parents=[common], help="强可达性验证")
    conv.add_argument("--solution", type=Path, default=None, help="solve-iid 输出；省略时重新求解")

    sub.add_parser("certify", parents=[common], help="完整认证流程")

    bounds = sub.add_parser("bounds", parents=[common], help="连续字母表上下界")
    bounds.add_argument("--B", dest="B", default="2..50", help='"2..50" 或 "2,4,10"')
    bounds.add_argument("--step", type=float, default=0.5)
    bounds.add_argument("--check", action="store_true", help="数值积分与 Monte Carlo 核对")

    sweep = sub.add_parser("sweep", parents=[common], help="电池容量扫描")
    sweep.add_argument("--mx", type=int, default=5, help="Binomial(m_x, 0.5) 需求（未给出 --spec 时）")
    sweep.add_argument("--ms", default="0..10", help='"0..10" 或 "1,2,5"')
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    """把 argparse 结果交给 RunConfig 校验"""
    return RunConfig(
        command=args.command,
        spec_path=args.spec,
        policy_path=getattr(args, "policy", None),
        solution_path=getattr(args, "solution", None),
        horizon=args.horizon,
        samples=args.samples,
        seed=args.seed,
        resolution=getattr(args, "resolution", None),
        tol=args.tol if args.tol is not None else (DEFAULT_TOL if args.command == "solve-iid" else 1e-6),
        output_path=args.out,
        units=args.units,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI 主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        config = build_config(args)
        return COMMANDS[config.command](config, args)
    except ValidationError as e:
        locations = [".".join(str(part) for part in error["loc"]) for error in e.errors()]
        emit_error(
            {
                "error": "ValidationError",
                "message": str(e),
                "locations": locations,
                "exit_code": EXIT_VALIDATION,
            }
        )
        return EXIT_VALIDATION
    except BatteryPrivacyError as e:
        logger.error(str(e))
        emit_error(e.to_payload())
        return e.exit_code
    except (FileNotFoundError, ValueError) as e:
        emit_error({"error": type(e).__name__, "message": str(e), "exit_code": EXIT_VALIDATION})
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
