"""Command line entry point: ``talus sim|net|experiment|bench|tee``"""
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import harness, tee
from .bench import bench
from .experiments import EXPERIMENTS, ExperimentConfig, ExperimentReport, experiment
from .mpc import ConfigurationGuardError
from .network import SimNetwork
from .params import LEVELS
from .storage import CounterRollback, SessionCounter, data_dir

logger = logging.getLogger(__name__)

FORMAT = "%(asctime)s: %(message)s"
BLAME_FILE = "blame.json"
COUNTER_FILE = "counter.bin"


def id_list(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part]


def emit(report: ExperimentReport, args) -> None:
    text = report.to_json() if args.out == "json" else report.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--level", choices=sorted(LEVELS), default="65")
    parser.add_argument("--t", type=int, default=3, help="threshold T")
    parser.add_argument("--n", type=int, default=5, help="number of parties N")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", choices=("csv", "json"), default="csv")
    parser.add_argument("--output", help="write the report here instead of stdout")


def protocol_options(parser: argparse.ArgumentParser) -> None:
    common(parser)
    parser.add_argument("--profile", choices=harness.PROFILES, default="mpc")
    parser.add_argument("--signers", type=id_list, help="signing set, e.g. 1,2,3")
    parser.add_argument("--msg", default="talus")
    parser.add_argument("--signatures", type=int, default=1)
    parser.add_argument("--max-attempts", type=int, default=50)
    parser.add_argument("--carry-backend", choices=("cscp", "dcf", "plain"))
    parser.add_argument("--fault", choices=harness.FAULTS)
    parser.add_argument("--faulty-party", type=int)
    parser.add_argument("--refresh", action="store_true")
    parser.add_argument("--transcript", help="save the transcript under this path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talus", description="Threshold ML-DSA signing")
    parser.add_argument("--verbose", "-v", action="store_true")
    parser.add_argument("--data-dir", help="defaults to $TALUS_DATA_DIR or ./.talus")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("sim", help="run a protocol in process")
    protocol_options(sim)
    sim.add_argument("--mode", choices=("lockstep", "rushing"), default="lockstep")

    net = commands.add_parser("net", help="run a protocol through a local relay hub")
    protocol_options(net)
    net.add_argument("--url", default="tcp://127.0.0.1:0")
    net.add_argument("--timeout", type=float, default=30.0)

    run = commands.add_parser("experiment", help="run one experiment")
    run.add_argument("name", choices=sorted(EXPERIMENTS))
    common(run)
    run.add_argument("--trials", type=int)
    run.add_argument("--thresholds", type=id_list)
    run.add_argument("--engine", choices=("fast", "protocol"), default="fast")

    timing = commands.add_parser("bench", help="local timings")
    common(timing)
    timing.add_argument("--samples", type=int, default=10)
    timing.add_argument("--url", help="measure over a local hub at this address")

    tee_parser = commands.add_parser("tee", help="coordinator-held TEE deployment")
    tee_commands = tee_parser.add_subparsers(dest="action", required=True)
    keygen = tee_commands.add_parser("keygen")
    keygen.add_argument("--level", choices=sorted(LEVELS), default="65")
    keygen.add_argument("--t", type=int, default=3)
    keygen.add_argument("--n", type=int, default=5)
    keygen.add_argument("--seed", type=int)
    preprocess = tee_commands.add_parser("preprocess")
    preprocess.add_argument("--pool-size", type=int, default=10)
    preprocess.add_argument("--signers", type=id_list)
    sign = tee_commands.add_parser("sign")
    sign.add_argument("--msg", required=True)
    tee_commands.add_parser("blame")
    tee_commands.add_parser("refresh")
    return parser


def protocol_config(args, transport_url: Optional[str] = None) -> harness.ProtocolConfig:
    return harness.ProtocolConfig(
        profile=args.profile,
        level=args.level,
        threshold=args.t,
        parties=args.n,
        signing_set=args.signers,
        message=args.msg.encode(),
        seed=args.seed,
        carry_backend=args.carry_backend,
        mode=getattr(args, "mode", "lockstep"),
        fault=args.fault,
        faulty_party=args.faulty_party,
        transport_url=transport_url,
        signatures=args.signatures,
        max_attempts=args.max_attempts,
        refresh=args.refresh,
        timeout=getattr(args, "timeout", 30.0),
    )


def run_protocol_command(args) -> int:
    url = args.url if args.command == "net" else None
    outcome = harness.run(protocol_config(args, url))
    if args.transcript:
        outcome.transcript.save(args.transcript)
    emit(ExperimentReport(name=args.command, rows=[outcome.summary()]), args)
    return 0 if outcome.verified and not outcome.blamed else 1


def run_experiment_command(args) -> int:
    config = ExperimentConfig(
        trials=args.trials,
        seed=args.seed,
        level=args.level,
        thresholds=args.thresholds,
        parties=args.n,
        engine=args.engine,
    )
    emit(experiment(args.name, config), args)
    return 0


def run_bench_command(args) -> int:
    report = asyncio.run(bench(args.level, args.t, args.n, args.samples, args.seed, args.url))
    emit(report, args)
    return 0


def run_tee_command(args) -> int:
    directory = data_dir(args.data_dir)
    network = SimNetwork()

    if args.action == "keygen":
        rng = np.random.default_rng(args.seed)
        pk, signers, coordinator = tee.tee_keygen(args.t, args.n, rng.bytes(32), args.level, rng)
        tee.save_tee(directory, coordinator, signers)
        (directory / "pk.bin").write_bytes(pk.to_bytes())
        print(pk.to_bytes().hex())
        return 0

    coordinator, signers = tee.load_tee(directory)
    if args.action == "preprocess":
        counter = SessionCounter(directory / COUNTER_FILE)
        signing_set = args.signers or list(range(1, coordinator.threshold + 1))
        for _ in range(args.pool_size):
            session = asyncio.run(
                tee.tee_preprocess(coordinator, signers, signing_set, network, counter.next_tau)
            )
            logger.info(f"Pooled {session.tau.hex()} after {session.attempts} attempts")
        print(f"{len(coordinator.fresh_sessions())} fresh sessions")
    elif args.action == "sign":
        fresh = coordinator.fresh_sessions()
        if not fresh:
            print("No fresh session, run `talus tee preprocess` first", file=sys.stderr)
            return 1
        try:
            signature = asyncio.run(
                tee.tee_sign(coordinator, signers, fresh[0].tau, args.msg.encode(), network)
            )
        except tee.SigningAbort as abort:
            (directory / BLAME_FILE).write_text(
                json.dumps({"reason": abort.reason, "blamed": abort.blamed})
            )
            print(f"Signing aborted: {abort}", file=sys.stderr)
            tee.save_tee(directory, coordinator, signers)
            return 1
        print(signature.to_bytes().hex())
    elif args.action == "blame":
        path = directory / BLAME_FILE
        if not path.exists():
            print("No failed signing recorded")
            return 0
        verdict = json.loads(path.read_text())
        print(f"{verdict['reason']}: blamed {verdict['blamed']}")
        return 1 if verdict["blamed"] else 0
    elif args.action == "refresh":
        try:
            asyncio.run(tee.tee_refresh(coordinator, signers, network))
        except tee.RefreshRejected as rejected:
            print(f"Refresh rejected: {rejected}", file=sys.stderr)
            return 1
        print("Shares refreshed")
    tee.save_tee(directory, coordinator, signers)
    return 0


COMMANDS = {
    "sim": run_protocol_command,
    "net": run_protocol_command,
    "experiment": run_experiment_command,
    "bench": run_bench_command,
    "tee": run_tee_command,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format=FORMAT,
        level=logging.INFO if args.verbose else logging.WARNING,
        datefmt="%H:%M:%S",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationGuardError, CounterRollback, ValueError) as exception:
        print(f"talus: {exception}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
