"""Command-line front end.

Subcommands: ``register`` (enroll a meter fleet into a keystore), ``run``
(honest authentication sessions against a persisted fleet), ``attack``
(adversary scenarios), ``puf-stats`` / ``bench`` / ``randomness`` (metrics
reports).  Report paths write the delimited output and render figures next
to it (``--no-figures`` disables).  Exit code 0 means every embedded
assertion passed; any acceptance violation exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytics, figures
from .codec import new_prng
from .config import SimConfig, load_config
from .keystore import Keystore
from .netlab import (
    NetLab, ScenarioSpec, ScriptError, capture_scenario, desync_scenario,
    dos_probe, leak_scenario, make_temp_fn, replay_scenario, run_scenario,
    soak_scenario, tamper_scenario, _int_seed,
)
from .protocol import NgState, SmDevice, register
from .puf import PufInstance

FLEET_FORMAT = "ocec-fleet/1"


def _parse_temps(text: str):
    kind, _, rest = text.partition(":")
    if kind == "fixed":
        return float(rest)
    if kind == "uniform":
        lo, hi = rest.split(":")
        return {"uniform": [float(lo), float(hi)]}
    if kind == "cycle":
        return [float(v) for v in rest.split(",")]
    raise argparse.ArgumentTypeError(
        f"bad temperature schedule {text!r} (fixed:T | uniform:LO:HI | cycle:a,b,...)"
    )


def _parse_range(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _figure_dir(args) -> Path | None:
    if getattr(args, "no_figures", False):
        return None
    if getattr(args, "figures", None):
        return Path(args.figures)
    if args.out:
        return Path(args.out).resolve().parent
    return None


def _config(args) -> SimConfig:
    return load_config(args.config) if args.config else SimConfig()


def _load_fleet(path: str) -> dict:
    obj = json.loads(Path(path).read_text())
    if obj.get("format") != FLEET_FORMAT:
        raise SystemExit(f"unsupported fleet format in {path}")
    return obj


def _build_sm(entry: dict, config: SimConfig, session_seed: int) -> SmDevice:
    noise_rng = (np.random.default_rng(entry["noise_seed"] + session_seed)
                 if config.noise_enabled else None)
    sm = SmDevice(
        puf=PufInstance.from_seed(entry["instance_seed"], **config.puf_kwargs()),
        prng=new_prng(entry["prng_seed"] + session_seed),
        noise_rng=noise_rng,
        name=entry["name"],
        response_len=config.response_len,
        t_max=config.t_max,
        recovery_mode=config.recovery_mode,
    )
    sm.nonvolatile_id = bytes.fromhex(entry["current_id"]) if entry["current_id"] else None
    if entry.get("fallback_id"):
        sm.fallback_id = bytes.fromhex(entry["fallback_id"])
    return sm


def cmd_register(args) -> int:
    config = _config(args)
    if not args.keystore:
        raise SystemExit("register needs --keystore")
    store = Keystore.open(args.keystore, create=True)
    root = np.random.SeedSequence(args.seed)
    ng = NgState(store=store, prng=new_prng(_int_seed(root.spawn(1)[0])),
                 recovery_mode=config.recovery_mode)
    entries = []
    for i in range(args.meters):
        puf_ss, prng_ss, noise_ss = root.spawn(1)[0].spawn(3)
        entry = {
            "name": f"sm{i:03d}",
            "instance_seed": _int_seed(puf_ss),
            "prng_seed": _int_seed(prng_ss) % 2**63,
            "noise_seed": _int_seed(noise_ss) % 2**63,
            "current_id": "",
            "fallback_id": "",
        }
        sm = _build_sm(entry, config, session_seed=0)
        record = register(sm, ng)
        entry["current_id"] = record.id.hex()
        entries.append(entry)
    fleet = {"format": FLEET_FORMAT, "config": config.as_dict(), "meters": entries}
    fleet_path = args.fleet or str(Path(args.keystore).with_suffix(".fleet.json"))
    Path(fleet_path).write_text(json.dumps(fleet, indent=2) + "\n")
    _write_or_print(json.dumps({
        "registered": args.meters,
        "keystore": str(args.keystore),
        "fleet": fleet_path,
    }, indent=2), args.out)
    return 0


def cmd_run(args) -> int:
    config = _config(args)
    if not (args.keystore and args.fleet):
        raise SystemExit("run needs --keystore and --fleet")
    store = Keystore.open(args.keystore)
    fleet = _load_fleet(args.fleet)
    if args.config is None and "config" in fleet:
        config = load_config(overrides=fleet["config"])
    events = []
    sink = events.append if args.log else None
    ng = NgState(store=store, prng=new_prng(args.seed),
                 recovery_mode=config.recovery_mode, event_sink=sink)
    sms = [_build_sm(e, config, session_seed=args.seed) for e in fleet["meters"]]
    for sm in sms:
        sm.event_sink = sink
    temp_fn = make_temp_fn(args.temps)
    temp_rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(1)[0])
    payload = new_prng(args.seed + 1)

    accepted = 0
    failures = []
    for s in range(args.sessions):
        sm = sms[s % len(sms)]
        sm.temp_c = temp_fn(s, temp_rng)
        msg1 = sm.start()
        msg2 = ng.on_msg1(msg1, sm.name, payload.randbytes(16))
        if msg2 is None:
            sm.abort()
            failures.append({"session": s, "meter": sm.name, "reason": "unknown_id"})
            continue
        try:
            msg3 = sm.on_msg2(msg2, payload.randbytes(16))
            ng.on_msg3(msg3, sm.name)
            accepted += 1
        except Exception as exc:  # verifier mismatch, yield exhaustion
            sm.abort()
            failures.append({"session": s, "meter": sm.name, "reason": str(exc)})
    for sm, entry in zip(sms, fleet["meters"]):
        entry["current_id"] = sm.nonvolatile_id.hex()
        entry["fallback_id"] = sm.fallback_id.hex() if sm.fallback_id else ""
    Path(args.fleet).write_text(json.dumps(fleet, indent=2) + "\n")
    if args.log:
        Path(args.log).write_text(
            "".join(json.dumps(e, sort_keys=True) + "\n" for e in events))
    summary = {
        "sessions": args.sessions,
        "accepted": accepted,
        "failures": failures,
        "recovery_extension": config.recovery_mode,
    }
    _write_or_print(json.dumps(summary, indent=2, sort_keys=True), args.out)
    return 0 if accepted == args.sessions else 1


def cmd_attack(args) -> int:
    config = _config(args)
    if args.script:
        spec = ScenarioSpec.from_json(Path(args.script).read_text())
        report = run_scenario(spec, config=config)
        ok = report.attacks_succeeded == 0
    else:
        name = args.scenario
        if name == "soak":
            report, _, _ = soak_scenario(args.meters, args.sessions, args.seed,
                                         config=config,
                                         temps={"uniform": [0.0, 80.0]})
            ok = report.sessions_accepted == report.sessions_attempted
        elif name == "replay":
            report = replay_scenario(args.meters, args.sessions, args.seed,
                                     config=config,
                                     substitution_sessions=min(args.sessions, 25))
            ok = report.attacks_succeeded == 0
        elif name == "tamper":
            report = tamper_scenario(args.meters, args.sessions, args.seed,
                                     config=config)
            ok = report.attacks_succeeded == 0 and report.sessions_accepted == 0
        elif name == "dos":
            lab = NetLab(meters=args.meters, seed=args.seed, config=config,
                         audit=False)
            probe = dos_probe(lab, 0, args.sessions)
            from .netlab import ScenarioReport
            report = ScenarioReport(name="dos", seed=args.seed)
            report.attacks_launched = probe["bogus_packets"]
            report.attacks_succeeded = probe["accepts"]
            report.extras = probe
            ok = probe["accepts"] == 0 and probe["all_costs_exact"]
        elif name == "leak":
            report = leak_scenario(args.meters, args.seed, config=config,
                                   forgery_attempts=args.sessions,
                                   guess_trials=args.sessions)
            ex = report.extras
            ok = (ex["recovered_key_half_ok"] and ex["recovered_hashed_key_half_ok"]
                  and ex["next_key_guess_hits"] == 0 and ex["forgery_accepts"] == 0)
        elif name == "capture":
            report = capture_scenario(args.meters, args.sessions, args.seed,
                                      config=config)
            ok = (report.extras["substring_hits"] == 0
                  and report.extras["dumps_well_formed"] == args.meters)
        elif name == "desync":
            report = desync_scenario(args.seed, config=config,
                                     recovery=args.recovery)
            ok = (report.extras["recovered_via_fallback"] if args.recovery
                  else report.extras["permanently_blocked"])
        else:
            raise SystemExit(f"unknown scenario {name!r}")
    _write_or_print(report.to_json(), args.out)
    return 0 if ok else 1


def cmd_puf_stats(args) -> int:
    config = _config(args)
    result = analytics.puf_stats(
        instances=args.instances,
        n_not_values=_parse_range(args.n_not),
        temps=[float(v) for v in args.temps.split(",")],
        evals_per_point=args.evals,
        seed=args.seed,
        config=config,
    )
    _write_or_print(result.to_csv(), args.out)
    fig_dir = _figure_dir(args)
    if fig_dir is not None:
        stem = Path(args.out).stem if args.out else "puf_stats"
        for path in figures.render_puf_stats(result, fig_dir, stem=stem):
            print(f"wrote {path}", file=sys.stderr)
    exhausted = sum(row["yield_exhausted"] for row in result.rows)
    return 0 if exhausted == 0 else 1


def cmd_bench(args) -> int:
    config = _config(args)
    result = analytics.bench(sessions=args.sessions, seed=args.seed,
                             meters=args.meters, config=config)
    _write_or_print(result.to_csv(), args.out)
    fig_dir = _figure_dir(args)
    if fig_dir is not None:
        stem = Path(args.out).stem if args.out else "bench"
        for path in figures.render_bench(result, fig_dir, stem=stem):
            print(f"wrote {path}", file=sys.stderr)
    for violation in result.violations[:20]:
        print(f"VIOLATION: {violation}", file=sys.stderr)
    print(f"bench wall time: {result.wall_seconds:.2f}s (informational)",
          file=sys.stderr)
    return 0 if result.ok else 1


def cmd_randomness(args) -> int:
    config = _config(args)
    keys = analytics.collect_session_keys(sessions=args.sessions, seed=args.seed,
                                          meters=args.meters, config=config)
    report = analytics.key_randomness(keys)
    _write_or_print(json.dumps(report, indent=2, sort_keys=True), args.out)
    fig_dir = _figure_dir(args)
    if fig_dir is not None:
        stem = Path(args.out).stem if args.out else "randomness"
        for path in figures.render_randomness(report, keys, fig_dir, stem=stem):
            print(f"wrote {path}", file=sys.stderr)
    return 0 if report["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oceclab",
        description="Error-filtering PUF lab and meter/gateway authentication bench",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--keystore", help="gateway keystore path")
    common.add_argument("--config", help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", parents=[common],
                       help="enroll a meter fleet into a keystore")
    p.add_argument("--meters", type=int, default=5)
    p.add_argument("--fleet", help="fleet state file (default: next to keystore)")
    p.set_defaults(fn=cmd_register)

    p = sub.add_parser("run", parents=[common],
                       help="run honest sessions against a persisted fleet")
    p.add_argument("--sessions", type=int, default=10)
    p.add_argument("--fleet", required=False)
    p.add_argument("--temps", type=_parse_temps, default={"uniform": [0.0, 80.0]})
    p.add_argument("--log", help="JSON-lines protocol event log path")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("attack", parents=[common], help="adversary scenarios")
    p.add_argument("--scenario",
                   choices=["soak", "replay", "tamper", "dos", "leak",
                            "capture", "desync"],
                   default="soak")
    p.add_argument("--script", help="scenario JSON file (overrides --scenario)")
    p.add_argument("--sessions", type=int, default=100)
    p.add_argument("--meters", type=int, default=3)
    p.add_argument("--recovery", action="store_true",
                   help="enable the opt-in desync recovery extension")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("puf-stats", parents=[common],
                       help="yield/uniformity/uniqueness/BER sweep")
    p.add_argument("--instances", type=int, default=40)
    p.add_argument("--n-not", default="0:4", help="range LO:HI or list a,b,c")
    p.add_argument("--temps", default="0,25,40,60,80")
    p.add_argument("--evals", type=int, default=8)
    p.add_argument("--figures", help="figure output dir (default: next to --out)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_puf_stats)

    p = sub.add_parser("bench", parents=[common],
                       help="per-session op and byte accounting")
    p.add_argument("--sessions", type=int, default=100)
    p.add_argument("--meters", type=int, default=5)
    p.add_argument("--figures")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("randomness", parents=[common],
                       help="statistical sanity of derived session keys")
    p.add_argument("--sessions", type=int, default=200)
    p.add_argument("--meters", type=int, default=10)
    p.add_argument("--figures")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_randomness)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScriptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
