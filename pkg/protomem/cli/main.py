import argparse
import sys
from pathlib import Path
from typing import List, Optional
from loguru import logger
from pydantic import ValidationError
from protomem.core.config import settings
from protomem.core.exceptions import ProtoMemError
from protomem.cli import commands

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3


class CliArgumentParser(argparse.ArgumentParser):
    """Ошибка разбора аргументов завершает работу с кодом 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(value: str) -> List[float]:
    try:
        return [float(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'")


def _int_list(value: str) -> List[int]:
    try:
        return [int(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'")


def build_parser() -> argparse.ArgumentParser:
    common = CliArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.SEED, help="Seed генератора случайных чисел")
    common.add_argument("--threads", type=int, default=settings.THREADS, help="Число рабочих потоков")
    common.add_argument("--model", type=Path, default=None, help="JSON модели тела (по умолчанию игрушечная)")
    common.add_argument("--out", type=Path, required=True, help="Выходной файл")
    common.add_argument("--log-level", default=settings.LOG_LEVEL, help="Уровень логирования loguru")

    cluster_opts = CliArgumentParser(add_help=False)
    cluster_opts.add_argument("--variant", choices=sorted(commands.VARIANTS), default="p3dh")
    cluster_opts.add_argument("--k", type=int, default=settings.CLUSTER_K)
    cluster_opts.add_argument("--gamma-hat", type=float, default=settings.CLUSTER_GAMMA_HAT)
    cluster_opts.add_argument("--lambda-hat", type=int, default=settings.CLUSTER_LAMBDA_HAT)
    cluster_opts.add_argument("--n-init", type=int, default=settings.CLUSTER_N_INIT)
    cluster_opts.add_argument("--stop-when-stable", action="store_true")
    for part in ("limb", "head", "hand", "foot", "torso"):
        cluster_opts.add_argument(f"--{part}-weight", type=float, default=None)

    parser = CliArgumentParser(prog="protomem", description=f"{settings.PROJECT_NAME} {settings.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", parents=[common], help="Сгенерировать игрушечную модель тела")
    p.add_argument("--verts-per-joint", type=int, default=settings.TOY_VERTS_PER_JOINT)
    p.set_defaults(handler=commands.cmd_gen_toy)

    p = sub.add_parser("gen-samples", parents=[common], help="Сгенерировать синтетический набор")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(handler=commands.cmd_gen_samples)

    p = sub.add_parser("cluster", parents=[common, cluster_opts], help="Кластеризовать набор")
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(handler=commands.cmd_cluster)

    p = sub.add_parser("build-memory", parents=[common], help="Построить память прототипов")
    p.add_argument("--result", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None, help="Набор для отпечатка в метаданных")
    p.set_defaults(handler=commands.cmd_build_memory)

    p = sub.add_parser("label", parents=[common], help="One-hot метки ближайших прототипов")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--memory", type=Path, required=True)
    p.set_defaults(handler=commands.cmd_label)

    p = sub.add_parser("select", parents=[common], help="Выбрать прототипы по оценкам")
    p.add_argument("--memory", type=Path, required=True)
    p.add_argument("--scores", type=Path, required=True)
    p.set_defaults(handler=commands.cmd_select)

    p = sub.add_parser("fit", parents=[common, cluster_opts], help="Подгонка и эксперименты")
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--memory", type=Path, default=None)
    p.add_argument("--scores", type=Path, default=None)
    p.add_argument("--problems", type=Path, default=None)
    p.add_argument("--iters", type=int, default=settings.FIT_ITERS)
    p.add_argument("--step", type=float, default=settings.FIT_STEP)
    p.add_argument("--paired", action="store_true", help="Старт из прототипа против старта из среднего")
    p.add_argument("--sweep-k", type=_int_list, default=None, help="Например: 1,3,10")
    p.add_argument("--sweep-limb-weight", type=_float_list, default=None, help="Например: 1,5,10")
    p.set_defaults(handler=commands.cmd_fit)

    p = sub.add_parser("eval", parents=[common], help="MPVPE, MPJPE, PA-MPJPE")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.set_defaults(handler=commands.cmd_eval)

    p = sub.add_parser("buckets", parents=[common], help="Разбиение по расстоянию до глобального прототипа")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--memory", type=Path, default=None, help="Память с K = 1")
    p.add_argument("--pred", type=Path, default=None)
    p.add_argument("--edges", type=_float_list, required=True)
    p.add_argument("--tails", type=_float_list, default=None)
    p.set_defaults(handler=commands.cmd_buckets)

    return parser


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper())


def main(argv: Optional[List[str]] = None) -> int:
    """
    Точка входа CLI. Возвращает код завершения:
    0 - успех, 1 - ошибка аргументов, 2 - ввод/вывод, 3 - валидация, 4 - численный сбой.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        configure_logging(args.log_level)
    except ValueError:
        configure_logging(settings.LOG_LEVEL)
        logger.error(f"Неизвестный уровень логирования: {args.log_level}")
        return EXIT_USAGE
    if args.threads < 1:
        logger.error("--threads must be >= 1")
        return EXIT_USAGE

    logger.debug(f"Команда {args.command}: {vars(args)}")
    try:
        return args.handler(args)
    except ProtoMemError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Ошибка валидации: {e}")
        return EXIT_VALIDATION
    except ValueError as e:
        logger.error(f"Некорректные данные: {e}")
        return EXIT_VALIDATION
    except OSError as e:
        logger.error(f"Ошибка ввода/вывода: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
