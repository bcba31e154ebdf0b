"""``pbc-bb84`` command line front end.

Subcommands: ``rates`` (redundant-key-rate sweep), ``binding``
(binding-bound grid), ``simulate`` (one protocol session), ``route``
(flooding discovery plus datagram/vc selection).  Every output is a pure
function of (arguments, seed); CSV column order is fixed and JSON is
emitted with sorted keys so reruns are byte-identical.

Exit codes: 0 success / Accept, 2 Reject, 3 NoCommitFrame, 64 usage
error.  ``PBC_BB84_OUTPUT_DIR`` overrides the directory for relative
output paths.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from . import math_core, relay_routing
from .commitment_protocol import SessionConfig, run_session

EXIT_OK = 0
EXIT_REJECT = 2
EXIT_NO_COMMIT = 3
EXIT_USAGE = 64

OUTPUT_DIR_ENV = "PBC_BB84_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_output(path: str | None):
    if path is None or path == "-":
        return None
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _open_output(path: str | None):
    resolved = _resolve_output(path)
    if resolved is None:
        return sys.stdout, False
    return open(resolved, "w", newline=""), True


def _grid(lo: float, hi: float, steps: int) -> list[float]:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if hi < lo:
        raise ValueError("range is inverted")
    if steps == 1:
        return [lo]
    return [lo + (hi - lo) * i / (steps - 1) for i in range(steps)]


def cmd_rates(args) -> int:
    try:
        q_grid = _grid(args.q_min, args.q_max, args.q_steps)
        p_grid = _grid(args.p_min, args.p_max, args.p_steps)
        for q in q_grid:
            if not 0.0 <= q < 0.5:
                raise ValueError(f"q_tol grid value {q} outside [0, 0.5)")
        for p in p_grid:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p grid value {p} outside [0, 1]")
    except ValueError as exc:
        print(f"rates: {exc}", file=sys.stderr)
        return EXIT_USAGE

    stream, close = _open_output(args.output)
    try:
        writer = csv.writer(stream)
        writer.writerow(["q_tol", "p", "r", "r_prime"])
        for q in q_grid:
            r = math_core.final_key_rate(q)
            for p in p_grid:
                r_prime = math_core.redundant_key_rate(q, p, args.n_quarter)
                writer.writerow([f"{q:.10g}", f"{p:.10g}", f"{r:.12g}", f"{r_prime:.12g}"])
    finally:
        if close:
            stream.close()
    return EXIT_OK


def cmd_binding(args) -> int:
    variants = (
        list(math_core.BINDING_VARIANTS) if args.variant == "both" else [args.variant]
    )
    for n_tol in args.n_tol:
        if n_tol == 1:
            print("binding: n_tol=1 is singular and rejected", file=sys.stderr)
            return EXIT_USAGE

    stream, close = _open_output(args.output)
    try:
        writer = csv.writer(stream)
        writer.writerow(["p", "n_tol", "e_tol", "variant", "eps_b"])
        try:
            for p in args.p:
                for n_tol in args.n_tol:
                    for e_tol in args.e_tol:
                        bp = math_core.BindingParams(
                            p_commit=p, n_tol=n_tol, e_tol=e_tol,
                            delta_grid=args.delta_grid,
                        )
                        for variant in variants:
                            eps = math_core.binding_bound(bp, variant)
                            writer.writerow(
                                [f"{p:.10g}", n_tol, f"{e_tol:.10g}", variant, f"{eps:.12g}"]
                            )
        except ValueError as exc:
            print(f"binding: {exc}", file=sys.stderr)
            return EXIT_USAGE
    finally:
        if close:
            stream.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"simulate: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = SessionConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        print(f"simulate: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    transcript = run_session(config)
    stream, close = _open_output(args.output)
    try:
        json.dump(transcript.to_json_dict(), stream, indent=2, sort_keys=True)
        stream.write("\n")
    finally:
        if close:
            stream.close()
    if transcript.status == "accept":
        return EXIT_OK
    if transcript.status == "reject":
        return EXIT_REJECT
    return EXIT_NO_COMMIT


def _json_score(score: float):
    if math.isinf(score):
        return "-inf" if score < 0 else "inf"
    return score


def cmd_route(args) -> int:
    try:
        with open(args.network) as fh:
            doc = json.load(fh)
        graph = relay_routing.NetworkGraph.from_json(doc)
        t = doc["traffic"]
        traffic = relay_routing.TrafficSpec(
            t["src"], t["dst"], t["n_packets"], t["packet_len"]
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"route: invalid network document: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        candidates = relay_routing.flood_discover(graph, traffic)
    except ValueError as exc:
        print(f"route: {exc}", file=sys.stderr)
        return EXIT_USAGE

    report: dict = {
        "mode": args.mode,
        "alpha": args.alpha if args.mode == "vc" else None,
        "candidates": [
            {"path": list(c.nodes), "edge_probs": list(c.edge_probs)}
            for c in candidates
        ],
    }
    if not candidates:
        report["status"] = "unreachable"
        report["chosen"] = None
        report["reservation"] = None
    else:
        report["status"] = "ok"
        if args.mode == "datagram":
            chosen = relay_routing.datagram_select(candidates)
            report["reservation"] = None
        else:
            chosen = relay_routing.vc_select(candidates, args.alpha)
            reservation = relay_routing.reserve_circuit(
                graph, chosen, candidates, traffic
            )
            report["reservation"] = reservation.to_json_dict()
        report["chosen"] = {
            "path": list(chosen.nodes),
            "edge_probs": list(chosen.edge_probs),
            "score": _json_score(chosen.score),
            "viable": chosen.viable,
        }

    stream, close = _open_output(args.output)
    try:
        json.dump(report, stream, indent=2, sort_keys=True)
        stream.write("\n")
    finally:
        if close:
            stream.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pbc-bb84", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rates", help="sweep r and r' over (q_tol, p)")
    p.add_argument("--q-min", type=float, default=0.0)
    p.add_argument("--q-max", type=float, default=0.06)
    p.add_argument("--q-steps", type=int, default=25)
    p.add_argument("--p-min", type=float, default=0.0)
    p.add_argument("--p-max", type=float, default=0.01)
    p.add_argument("--p-steps", type=int, default=25)
    p.add_argument("--n-quarter", type=int, default=100)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("binding", help="binding-bound grid")
    p.add_argument("--p", type=float, nargs="+", default=[0.1])
    p.add_argument("--n-tol", type=int, nargs="+", default=[10, 20, 40, 80, 160, 320])
    p.add_argument("--e-tol", type=float, nargs="+", default=[0.05])
    p.add_argument(
        "--variant",
        choices=list(math_core.BINDING_VARIANTS) + ["both"],
        default="both",
    )
    p.add_argument("--delta-grid", type=int, default=10_000)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_binding)

    p = sub.add_parser("simulate", help="run one protocol session")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("route", help="discovery + selection on a network file")
    p.add_argument("--network", required=True)
    p.add_argument("--mode", choices=["datagram", "vc"], default="datagram")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_route)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
