"""Command-line entry point.

Exit codes: 0 on success, 1 when a model, plan or instance is semantically
wrong, 2 when input cannot be read or an endpoint cannot be reached.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .analytics import coverage, diversity
from .bridge import Dispatcher, EndpointUnavailable, TwinStub, TwinStubServer, open_endpoint
from .dsl import ModelSyntaxError, load_model
from .engine import SCHEDULERS, WAIT_MODES, SimulationConfig, run
from .experiment import DEFAULT_PARAMS, PlanError, load_plan, report, run_plan
from .instantiator import ConstraintViolation, UnsatisfiableConstraints, dumps_instance, instantiate
from .model import element_census, has_errors, validate_model
from .stochastic import InvalidParameters, parse_dist

EXIT_OK, EXIT_SEMANTIC, EXIT_IO = 0, 1, 2

FIXTURES = Path(__file__).parent / "fixtures"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _default_seed() -> int | None:
    raw = os.environ.get("ENVDT_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"ENVDT_SEED must be an integer, got {raw!r}", EXIT_IO) from None


def _params(pairs: list[str] | None) -> dict:
    out = dict(DEFAULT_PARAMS)
    for pair in pairs or []:
        name, sep, value = pair.partition("=")
        if not sep:
            raise CliError(f"--param expects NAME=VALUE, got {pair!r}", EXIT_SEMANTIC)
        try:
            out[name] = int(value)
        except ValueError:
            try:
                out[name] = float(value)
            except ValueError:
                raise CliError(f"--param {name}: {value!r} is not a number", EXIT_SEMANTIC) from None
    return out


def _load(path: str):
    """Parse and validate; diagnostics go to stderr."""
    try:
        model = load_model(path)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from exc
    except ModelSyntaxError as exc:
        raise CliError(str(exc), EXIT_SEMANTIC) from exc
    diags = validate_model(model)
    for d in diags:
        _err(str(d))
    if has_errors(diags):
        raise CliError(f"{path}: {sum(d.severity == 'error' for d in diags)} error(s)", EXIT_SEMANTIC)
    return model


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from exc


# -- subcommands ----------------------------------------------------------------


def cmd_validate(args) -> int:
    model = _load(args.model)
    print(f"{args.model}: ok ({model.name})")
    return EXIT_OK


def cmd_census(args) -> int:
    census = element_census(_load(args.model))
    if args.json:
        print(json.dumps(dataclasses.asdict(census)))
    else:
        for name, value in dataclasses.asdict(census).items():
            print(f"{name:20s} {value}")
    return EXIT_OK


def cmd_instantiate(args) -> int:
    model = _load(args.model)
    seed = args.seed if args.seed is not None else (_default_seed() or 0)
    try:
        inst = instantiate(model, seed, _params(args.param))
    except UnsatisfiableConstraints as exc:
        raise CliError(f"unsatisfiable constraints {', '.join(exc.constraint_ids)}: {exc.reason}", EXIT_SEMANTIC)
    _write(args.out, dumps_instance(inst))
    return EXIT_OK


def _twin_sink(spec: str, run_id: str):
    try:
        endpoint = open_endpoint(spec)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_SEMANTIC) from exc
    return endpoint, Dispatcher(endpoint, run_id)


def cmd_simulate(args) -> int:
    model = _load(args.model)
    seed = args.seed if args.seed is not None else (_default_seed() or 0)
    try:
        dist = parse_dist(args.dist)
        config = SimulationConfig(
            seed=seed, distribution=dist, once_only=args.once_only, max_steps=args.max_steps,
            scheduler=args.scheduler, wait_mode=args.wait_mode,
        )
        inst = instantiate(model, seed, _params(args.param))
    except (InvalidParameters, ValueError) as exc:
        raise CliError(str(exc), EXIT_SEMANTIC) from exc
    except UnsatisfiableConstraints as exc:
        raise CliError(f"unsatisfiable constraints {', '.join(exc.constraint_ids)}: {exc.reason}", EXIT_SEMANTIC)

    run_id = f"{Path(args.model).stem.lower()}-{dist.kind}-{seed}"
    endpoint = dispatcher = None
    if args.twin:
        endpoint, dispatcher = _twin_sink(args.twin, run_id)
    trace = run(model, inst, config, dispatcher)
    twin_note = ""
    if dispatcher is not None:
        try:
            receipts = dispatcher.close(timeout=60)
        except EndpointUnavailable as exc:
            raise CliError(f"twin endpoint: {exc}", EXIT_IO) from exc
        finally:
            endpoint.close()
        twin_note = f" acked={len(receipts)}"
        stub = getattr(endpoint, "stub", None)
        if stub is not None:
            twin_note += f" twin={stub.state(run_id).label}"

    trace_path = args.trace
    if trace_path is None and args.out is not None:
        trace_path = str(Path(args.out) / f"{run_id}.jsonl")
    if trace_path is not None:
        _write(trace_path, trace.to_jsonl())
    cov = coverage(trace.records, model, run_id)
    div = diversity(trace.records, run_id)
    print(
        f"{run_id}: steps={trace.steps} events={len(trace.events)} coverage={cov.percent:.2f}% "
        f"diversity={div.simpson:.4f} core_ms={trace.core_ms:.2f} reason={trace.reason}{twin_note}"
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan_path = Path(args.plan) if args.plan else FIXTURES / "default-plan.yaml"
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        plan = load_plan(plan_path, seed=seed, out=args.out)
    except OSError as exc:
        raise CliError(f"{plan_path}: {exc.strerror or exc}", EXIT_IO) from exc
    except (PlanError, ValueError) as exc:
        raise CliError(str(exc), EXIT_SEMANTIC) from exc
    for fixture in plan.fixtures:
        _load(str(fixture))
    if args.repetitions is not None:
        plan = dataclasses.replace(plan, repetitions=args.repetitions)
    total = len(plan.runs())
    try:
        result = run_plan(plan, workers=args.workers, limit=args.limit)
    except (UnsatisfiableConstraints, ConstraintViolation) as exc:
        raise CliError(str(exc), EXIT_SEMANTIC) from exc
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    done = len(result.skipped) + len(result.executed)
    print(f"{plan.out}: executed {len(result.executed)}, skipped {len(result.skipped)}, {done}/{total} complete")
    if result.tables:
        print(f"tables written to {Path(plan.out) / 'tables'}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        tables = report(args.inp, args.out)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    for name, table in tables.items():
        print(f"{Path(args.out) / (name + '.csv')}: {len(table.cells)} cells")
    return EXIT_OK


def cmd_twin_stub(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    server = TwinStubServer(args.host, args.listen, TwinStub())
    try:
        server.start()
    except OSError as exc:
        raise CliError(f"cannot listen on {args.host}:{args.listen}: {exc}", EXIT_IO) from exc
    print(f"twin stub listening on {server.address}", flush=True)
    try:
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        for run_id, state in sorted(server.stub.states.items()):
            print(f"{run_id}: {len(state.log)} events, label {state.label}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="envdt", description="Environment simulation for medical-device digital twins.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="parse and check a model")
    s.add_argument("model")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("census", help="count model elements")
    s.add_argument("model")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_census)

    s = sub.add_parser("instantiate", help="generate a constraint-satisfying instance model")
    s.add_argument("model")
    s.add_argument("--seed", type=int)
    s.add_argument("--param", action="append", metavar="NAME=VALUE")
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_instantiate)

    s = sub.add_parser("simulate", help="run one simulation")
    s.add_argument("model")
    s.add_argument("--seed", type=int)
    s.add_argument("--dist", default="uniform", help="kind or kind(name=value, ...)")
    s.add_argument("--once-only", dest="once_only", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--max-steps", type=int, default=10_000)
    s.add_argument("--scheduler", choices=SCHEDULERS, default="deterministic-interleave")
    s.add_argument("--wait-mode", choices=WAIT_MODES, default="skip")
    s.add_argument("--twin", help="inproc or tcp://host:port")
    s.add_argument("--trace", help="trace output file")
    s.add_argument("--out", help="directory for the trace when --trace is not given")
    s.add_argument("--param", action="append", metavar="NAME=VALUE")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("experiment", help="run a plan of repeated simulations")
    s.add_argument("plan", nargs="?", help="YAML plan (default: the shipped three-device plan)")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--limit", type=int, help="stop after this many runs")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="aggregate traces into CSV tables")
    s.add_argument("--in", dest="inp", required=True, help="directory of traces and sidecars")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("twin-stub", help="serve the twin stub over TCP")
    s.add_argument("--listen", type=int, required=True, metavar="PORT")
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_twin_stub)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG)
    try:
        return args.func(args)
    except CliError as exc:
        _err(str(exc))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
