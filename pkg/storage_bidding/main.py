import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

if __package__ in (None, ""):
    # Allow running as `python storage_bidding/main.py` without -m
    sys.path.append(str(Path(__file__).resolve().parent.parent))
    from storage_bidding.case_io import (DC, JABR, StorageSpec, build_instance, load_case, read_profile,
                                         serialize_case, write_report, write_study, write_sweep, write_table)
    from storage_bidding.config import DATA_DIR, PACKAGE_DIR, load_config, reload_settings, settings
    from storage_bidding.driver import (centralized_baseline, compare_techniques, fixed_price_baseline,
                                        reactive_benefit_study, run_sequential, sweep_buses)
    from storage_bidding.exceptions import BilevelError, CaseFormatError, TechniqueError, UnknownBusError
    from storage_bidding.schemas import SolveOptions, SolveReport, SolveStatus, TechniqueSpec
else:
    from .case_io import (DC, JABR, StorageSpec, build_instance, load_case, read_profile, serialize_case,
                          write_report, write_study, write_sweep, write_table)
    from .config import DATA_DIR, PACKAGE_DIR, load_config, reload_settings, settings
    from .driver import (centralized_baseline, compare_techniques, fixed_price_baseline, reactive_benefit_study,
                         run_sequential, sweep_buses)
    from .exceptions import BilevelError, CaseFormatError, TechniqueError, UnknownBusError
    from .schemas import SolveOptions, SolveReport, SolveStatus, TechniqueSpec

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2
ACCEPTED = {SolveStatus.OPTIMAL.describe(), SolveStatus.FEASIBLE.describe()}


def setup_logging(level: str = None) -> None:
    level = getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO)
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.LOG_FILE:
        handlers.append(logging.FileHandler(settings.LOG_FILE, encoding="utf-8"))
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def ensure_env_loaded() -> None:
    env_path = PACKAGE_DIR.parent / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        load_dotenv()
    # settings were built when the config module was first imported
    reload_settings()


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", default="case3_lmbd.m", help="MATPOWER case file (bundled names resolve)")
    p.add_argument("--profile", default="rts96_winter_weekday.txt", help="24-line hourly load profile")
    p.add_argument("--storage-bus", type=int, help="bus id of the storage unit (default: first bus)")
    p.add_argument("--storage", help="capacity,rating,eta or capacity,rating,eta_ch,eta_dis in per unit")
    p.add_argument("--model", choices=["dc", "jabr"], default="jabr")
    p.add_argument("--no-reactive", action="store_true", help="bid active power only")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--outer-iters", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--multistart", type=int, default=None)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--out", help="output path without extension")


def _add_technique_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--technique", default="SM2", help="technique name, optionally with parameters")
    p.add_argument("--eps", type=float)
    p.add_argument("--pi", type=float)
    p.add_argument("--D", dest="steps", type=int)
    p.add_argument("--binaries", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storage_bidding", description="Strategic storage bidding toolkit")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="one instance, one technique")
    _add_instance_args(solve)
    _add_technique_args(solve)
    _add_solver_args(solve)
    solve.add_argument("--baseline", choices=["fixed-price", "central"], help="run a single-level baseline instead")

    compare = sub.add_parser("compare", help="technique comparison table")
    _add_instance_args(compare)
    _add_solver_args(compare)
    compare.add_argument("--specs", help="file with one technique spec per line (default: config.json list)")

    study = sub.add_parser("study-reactive", help="profit increase from reactive bids at every bus")
    _add_instance_args(study)
    _add_technique_args(study)
    _add_solver_args(study)

    sweep = sub.add_parser("sweep", help="one technique with the storage at every bus")
    _add_instance_args(sweep)
    _add_technique_args(sweep)
    _add_solver_args(sweep)

    check = sub.add_parser("parse-check", help="parse a case file and print a summary")
    check.add_argument("--case", default="case3_lmbd.m")
    check.add_argument("--dump", action="store_true", help="print the case back in MATPOWER form")
    return parser


def _storage(args, cfg: dict, bus: int) -> StorageSpec:
    values = dict(cfg.get("storage", {}))
    if args.storage:
        try:
            numbers = [float(v) for v in args.storage.split(",")]
        except ValueError:
            numbers = []
        if len(numbers) not in (3, 4):
            raise ValueError("--storage expects capacity,rating,eta or capacity,rating,eta_ch,eta_dis")
        capacity, rating, eta_ch = numbers[:3]
        eta_dis = numbers[3] if len(numbers) == 4 else eta_ch
        values.update(capacity=capacity, rating=rating, eta_ch=eta_ch, eta_dis=eta_dis)
    return StorageSpec(bus=bus, **values)


def _instance(args, cfg: dict):
    net = load_case(args.case)
    profile = read_profile(args.profile)
    bus = args.storage_bus if args.storage_bus is not None else net.bus_ids[0]
    if bus not in net.bus_index:
        raise UnknownBusError(f"Storage bus {bus} is not in case '{net.name}'")
    instance = build_instance(net, profile, _storage(args, cfg, bus), model=JABR if args.model == "jabr" else DC)
    if args.no_reactive:
        instance = instance.with_reactive_bids(False)
    return instance


def _technique(args) -> TechniqueSpec:
    spec = TechniqueSpec.parse(args.technique)
    # flags override values written inline, e.g. "--technique SM1 --eps 1e-3"
    return TechniqueSpec.build(
        spec.kind,
        eps=args.eps if args.eps is not None else spec.eps,
        pi=args.pi if args.pi is not None else spec.pi,
        steps=args.steps if args.steps is not None else spec.steps,
        binaries=args.binaries or spec.binaries,
    )


def _options(args) -> SolveOptions:
    values = {}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.multistart is not None:
        values["multistart"] = args.multistart
    if args.time_limit is not None:
        values["time_limit"] = args.time_limit
    return SolveOptions(**values)


def _read_specs(path: Optional[str], cfg: dict) -> List[TechniqueSpec]:
    if path:
        source = Path(path)
        if not source.exists() and (DATA_DIR / source.name).exists():
            source = DATA_DIR / source.name
        lines = source.read_text(encoding="utf-8").splitlines()
    else:
        lines = cfg.get("techniques", [])
    specs = []
    for line in lines:
        line = line.split("#")[0].strip()
        if line:
            specs.append(TechniqueSpec.parse(line))
    if not specs:
        raise TechniqueError("No technique specs given")
    return specs


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(settings.REPORT_DIR) / default


def _accepted(report: SolveReport) -> bool:
    return report.status in ACCEPTED and not report.violations


def _summary(report: SolveReport) -> str:
    label = f"{report.technique} {report.params}".strip()
    return (f"{label}: {report.status}; computed profit {report.computed_profit}, "
            f"actual profit {report.actual_profit}, diff {report.diff_pct} %, gap {report.duality_gap_pct} %")


def _run(args, cfg: dict) -> int:
    if args.command == "parse-check":
        net = load_case(args.case)
        print(f"{net.name}: {len(net.buses)} buses, {len(net.generators)} generators, "
              f"{len(net.branches)} branches, base {net.base_power} MVA")
        if args.dump:
            print(serialize_case(net))
        return EXIT_OK

    instance = _instance(args, cfg)
    opts = _options(args)

    if args.command == "solve":
        if args.baseline == "fixed-price":
            report = fixed_price_baseline(instance, opts)
        elif args.baseline == "central":
            report = centralized_baseline(instance, opts)
        else:
            spec = _technique(args)
            report = run_sequential(instance, spec, opts, args.outer_iters)
        write_report(report, _out(args, f"solve-{report.technique}"))
        print(_summary(report))
        return EXIT_OK if _accepted(report) else EXIT_SOLVER

    if args.command == "compare":
        specs = _read_specs(args.specs, cfg)
        reports = compare_techniques(instance, specs, opts, args.outer_iters)
        write_table(reports, _out(args, "compare"))
        for report in reports:
            print(_summary(report))
        return EXIT_OK

    if args.command == "study-reactive":
        spec = _technique(args)
        instances = [instance.with_storage_bus(bus) for bus in instance.network.bus_ids]
        result = reactive_benefit_study(instances, spec, opts)
        write_study(result, _out(args, "study-reactive"))
        for row in sorted(result.rows, key=lambda r: r.increase_pct, reverse=True):
            print(f"bus {row.bus}: +{row.increase_pct:.3f} % profit, {row.savings:.6g} savings ({row.status})")
        print(f"savings / profit increase ratio: {result.ratio}")
        return EXIT_OK

    if args.command == "sweep":
        spec = _technique(args)
        result = sweep_buses(instance, spec, opts)
        write_sweep(result, _out(args, f"sweep-{spec.kind.value}"))
        print(f"{spec.label()}: median |diff| {result.median_abs_diff_pct} %, "
              f"mean {result.mean_abs_diff_pct} %, max {result.max_abs_diff_pct} %")
        return EXIT_OK
    return EXIT_USAGE


def cli_main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    ensure_env_loaded()
    setup_logging(args.log_level)
    cfg = load_config()
    try:
        settings.validate_settings()
        return _run(args, cfg)
    except (TechniqueError, CaseFormatError, UnknownBusError, ValueError, FileNotFoundError) as e:
        logging.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BilevelError as e:
        logging.error(f"Solve failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
