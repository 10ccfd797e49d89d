#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Скрипт запуска симулятора условного хэндовера: обучение агента, серии
экспериментов, тепловая карта RSRP, одиночный прогон и повтор метрик.
"""

import argparse
import logging
import sys
from dataclasses import replace

from rich.logging import RichHandler

from config import Mode, load_config
from errors import CheckpointError, ConfigError, MissingArtifactError
from experiment_harness import (DEFAULT_SEEDS, DEFAULT_SWEEP_VALUES, HEATMAP_FILE, SweepSpec,
                                cmd_heatmap, cmd_replay, cmd_run, cmd_sweep, cmd_train)

logger = logging.getLogger("run_simulator")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3


def _float_list(raw: str):
    try:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"ожидался список чисел через запятую: {raw!r}")


def _mode_list(raw: str):
    try:
        return tuple(Mode(v.strip()) for v in raw.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"неизвестный режим в {raw!r}; допустимые: {', '.join(m.value for m in Mode)}"
        )


def build_parser() -> argparse.ArgumentParser:
    """
    Создает парсер аргументов командной строки.
    """
    parser = argparse.ArgumentParser(
        description="Симулятор условного хэндовера 5G с агентом Double-DQN управления мощностью"
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Подробный вывод (уровень DEBUG)"
    )
    parser.add_argument(
        "--quiet",
        action="store_true",
        help="Только предупреждения, без индикаторов прогресса"
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c", "--config",
        type=str,
        default=None,
        help="INI-файл конфигурации (по умолчанию: встроенные значения)"
    )
    common.add_argument(
        "-s", "--seed",
        type=int,
        default=None,
        help="Зерно генератора случайных чисел (переопределяет конфигурацию)"
    )
    common.add_argument(
        "-o", "--out",
        type=str,
        default="results",
        help="Директория (или файл) для результатов (по умолчанию: results)"
    )

    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="Обучение агента")
    p_train.add_argument(
        "-e", "--episodes",
        type=int,
        default=None,
        help="Количество эпизодов (по умолчанию: из конфигурации, 2000)"
    )

    p_sweep = sub.add_parser("sweep", parents=[common], help="Перебор значений одного параметра")
    p_sweep.add_argument(
        "-p", "--param",
        required=True,
        choices=sorted(DEFAULT_SWEEP_VALUES),
        help="Перебираемый параметр"
    )
    p_sweep.add_argument(
        "--values",
        type=_float_list,
        default=None,
        help="Значения через запятую (по умолчанию: стандартная сетка параметра)"
    )
    p_sweep.add_argument(
        "--modes",
        type=_mode_list,
        default=(Mode.CHO, Mode.CHO_DRL),
        help="Режимы через запятую: cho, cho_drl, greedy (по умолчанию: cho,cho_drl)"
    )
    p_sweep.add_argument(
        "--seeds",
        type=int,
        default=DEFAULT_SEEDS,
        help=f"Количество зерен на точку (по умолчанию: {DEFAULT_SEEDS})"
    )
    p_sweep.add_argument(
        "--checkpoint",
        type=str,
        default=None,
        help="Файл контрольной точки агента для режима cho_drl"
    )
    p_sweep.add_argument(
        "-j", "--workers",
        type=int,
        default=None,
        help="Количество процессов (по умолчанию: по числу ядер)"
    )

    p_heatmap = sub.add_parser("heatmap", parents=[common], help="Тепловая карта RSRP")
    p_heatmap.add_argument(
        "-r", "--resolution",
        type=float,
        default=10.0,
        help="Шаг сетки в метрах (по умолчанию: 10)"
    )

    p_run = sub.add_parser("run", parents=[common], help="Одиночный прогон с журналом событий")
    p_run.add_argument(
        "-m", "--mode",
        type=Mode,
        default=None,
        help="Режим: cho, cho_drl, greedy (по умолчанию: из конфигурации)"
    )
    p_run.add_argument(
        "--checkpoint",
        type=str,
        default=None,
        help="Файл контрольной точки агента для режима cho_drl"
    )

    p_replay = sub.add_parser("replay", help="Пересчет метрик по журналу событий")
    p_replay.add_argument("log", type=str, help="Файл журнала событий (JSON lines)")
    p_replay.add_argument(
        "-o", "--out",
        type=str,
        default=None,
        help="CSV-файл для строки метрик"
    )
    return parser


def setup_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=verbose)],
    )


def run(args: argparse.Namespace) -> int:
    progress = not args.quiet and sys.stderr.isatty()

    if args.command == "replay":
        metrics = cmd_replay(args.log, args.out)
        print(", ".join(f"{k}={v}" for k, v in metrics.as_row().items()))
        return EXIT_OK

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    if args.command == "train":
        cmd_train(cfg, args.out, episodes=args.episodes, progress=progress)
    elif args.command == "sweep":
        values = args.values if args.values is not None else DEFAULT_SWEEP_VALUES[args.param]
        spec = SweepSpec(
            parameter=args.param,
            values=values,
            modes=args.modes,
            seeds=tuple(cfg.seed + i for i in range(args.seeds)),
            checkpoint=args.checkpoint,
        )
        cmd_sweep(cfg, spec, args.out, workers=args.workers, progress=progress)
    elif args.command == "heatmap":
        out = args.out if args.out.endswith(".csv") else f"{args.out}/{HEATMAP_FILE}"
        cmd_heatmap(cfg, out, args.resolution)
    elif args.command == "run":
        if args.mode is not None:
            cfg = replace(cfg, mode=args.mode)
        cmd_run(cfg, args.out, checkpoint=args.checkpoint)
    return EXIT_OK


def main(argv=None) -> int:
    """
    Основная функция: разбор аргументов, настройка журнала и запуск команды.
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        return run(args)
    except ConfigError as e:
        logger.error("ошибка конфигурации: %s", e)
        return EXIT_CONFIG
    except (MissingArtifactError, CheckpointError) as e:
        logger.error("артефакт недоступен: %s", e)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
