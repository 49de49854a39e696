"""Command-line entry points: batch runs, the operator service, and program
validation.

    pneurig run --program preset:fig7_validation --duration 400 --out run.csv
    pneurig serve --port 8765 --clock realtime
    pneurig validate --program drill.seq
"""

from __future__ import annotations

import argparse
import sys
import time

from . import control, gateway
from .configio import load_config_file
from .control import ProgramLimits
from .daq import AcquisitionConfig
from .gateway import EXIT_IO_ERROR, EXIT_PROGRAM_ERROR, RigConfig
from .plant import PlantConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pneurig",
        description="Digital twin of a five-channel pneumatic soft-actuator rig",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="headless batch run writing a CSV log")
    run.add_argument("--program", required=True,
                     help="path to a .seq file, or preset:NAME")
    run.add_argument("--duration", type=float, required=True,
                     help="simulated seconds to run")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--seed", type=int, default=0, help="sensor noise seed")
    run.add_argument("--rate", type=int, default=1000, help="sample rate, Hz")
    run.add_argument("--config", help="flat key=value config file")

    srv = sub.add_parser("serve", help="serve the operator protocol on a TCP port")
    srv.add_argument("--port", type=int, default=8765)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--config", help="flat key=value config file")
    srv.add_argument("--clock", choices=["realtime", "fast"], default=None,
                     help="default: config file value or realtime")

    val = sub.add_parser("validate", help="parse and validate a program file")
    val.add_argument("--program", required=True, help="path to a .seq file")
    val.add_argument("--config", help="flat key=value config file")
    return parser


def _load_configs(config_path: str | None) -> tuple[PlantConfig, AcquisitionConfig, str | None]:
    if config_path is None:
        return PlantConfig(), AcquisitionConfig(), None
    return load_config_file(config_path)


def _cmd_run(args) -> int:
    return gateway.run_headless(
        program_source=args.program,
        duration=args.duration,
        out_csv=args.out,
        seed=args.seed,
        rate=args.rate,
        config_path=args.config,
    )


def _cmd_serve(args) -> int:
    try:
        plant_cfg, acq_cfg, clock = _load_configs(args.config)
    except (OSError, ValueError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_PROGRAM_ERROR
    rig_config = RigConfig(plant=plant_cfg, acquisition=acq_cfg,
                           clock_mode=args.clock or clock or "realtime")
    try:
        server = gateway.serve(args.port, rig_config, host=args.host)
    except OSError as exc:
        print(f"cannot listen on {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_IO_ERROR
    print(f"pneurig gateway on {server.host}:{server.port} "
          f"({rig_config.clock_mode} clock); Ctrl-C to stop", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _cmd_validate(args) -> int:
    try:
        plant_cfg, _, _ = _load_configs(args.config)
    except (OSError, ValueError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_PROGRAM_ERROR
    try:
        with open(args.program, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"cannot read program: {exc}", file=sys.stderr)
        return EXIT_IO_ERROR
    program, diags = control.parse_program(text)
    if program is not None:
        limits = ProgramLimits(n_channels=plant_cfg.n_channels,
                               regulator_max=plant_cfg.regulator_max)
        diags = diags + control.validate_program(program, limits)
    if diags:
        for d in diags:
            print(f"{args.program}:{d}", file=sys.stderr)
        return EXIT_PROGRAM_ERROR
    print(f"{args.program}: ok")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "serve": _cmd_serve, "validate": _cmd_validate}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
