"""``echoscope`` command line: simulate, monitor, calibrate, analyze.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 missing privileges.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal as signals
import sys
import time

import numpy as np
import yaml

from . import __version__
from .analysis import error_reduction, export_report, rtt_dependency_regression, summarize_log
from .config import (
    ConfigError,
    build_topologies,
    bundled_scenarios,
    describe_keys,
    load_config,
    scenario_path,
)
from .orchestrator import (
    AlertEmitter,
    DetectorConfig,
    FileSink,
    HostRegistry,
    JsonlLog,
    Orchestrator,
    StderrSink,
    probe_bandwidth,
    schedule_next,
)
from .prober import ProbeError, rate_from_rtt
from .profiler import load_profile, save_profile

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PRIVILEGE = 0, 1, 2, 3

log = logging.getLogger("echoscope")


def _value(text: str):
    """Parse a ``--set`` value with YAML scalar rules (numbers, null, lists)."""
    return yaml.safe_load(text)


def _overrides(args) -> dict:
    out = {}
    flags = {
        "seed": "seed", "m": "probe.m", "n": "probe.n", "rate_hz": "probe.rate_hz",
        "p_thr": "detector.p_thr", "window": "detector.window", "grace_n": "detector.grace_n",
        "grace_rate": "detector.grace_rate", "probes": "run.probes",
        "profile_dir": "run.profile_dir",
    }
    for attr, key in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _value(v)
    return out


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # accepted after the subcommand too; SUPPRESS keeps the top-level value
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, help="master seed (required to simulate)")
    p.add_argument("--m", type=int, help="MLS register count (probe length 2^m - 1)")
    p.add_argument("--n", type=int, help="probe length; must equal 2^m - 1")
    p.add_argument("--rate-hz", type=float, help="fixed transmission rate instead of calibrating")
    p.add_argument("--p-thr", type=float, help="alert tail probability")
    p.add_argument("--window", type=int, help="score averaging window (probes)")
    p.add_argument("--grace-n", type=int, help="grace period length (observations)")
    p.add_argument("--grace-rate", type=float, help="probe-rate multiplier during grace")
    p.add_argument("--profile-dir", help="where host profiles are stored")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (dotted path), repeatable")


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulate import run_scenario
    cfg = load_config(scenario_path(args.scenario), _overrides(args))
    if cfg["seed"] is None:
        raise ConfigError("seed: required in simulate mode (set it in the file or pass --seed)")
    if not cfg["hosts"]:
        raise ConfigError("hosts: simulate needs at least one host")
    log_dir = args.log_dir or os.path.join(cfg["run"]["log_dir"], cfg["name"])
    run = run_scenario(cfg, log_dir)
    post = [r for r in run.results if not r.grace]
    summary = {
        "scenario": cfg["name"],
        "probes": len(run.results),
        "alerts": sum(r.verdict.is_alert for r in run.results),
        "post_grace_alerts": sum(r.verdict.is_alert for r in post),
        "windowed_alerts": sum(r.windowed_alert for r in post),
        "log_dir": log_dir,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    out: dict = {}
    if args.mu is not None:
        out["rate_hz"] = rate_from_rtt(args.mu)
        out["mu_rtt_star_s"] = args.mu
    elif args.scenario is not None:
        from .prober import calibrate_rate
        from .prober.sim import SimTransport
        cfg = load_config(scenario_path(args.scenario), _overrides(args))
        if cfg["seed"] is None:
            raise ConfigError("seed: required to calibrate against a simulated scenario")
        transport = SimTransport(build_topologies(cfg), cfg["seed"])
        out["hosts"] = {}
        for host in transport.topologies:
            f_s, mu = calibrate_rate(transport, host, cfg["probe"]["calibration_pings"])
            out["hosts"][host] = {"rate_hz": f_s, "mu_rtt_star_s": mu}
    elif args.target is not None:
        from .prober import calibrate_rate
        from .prober.live import LiveTransport
        f_s, mu = calibrate_rate(LiveTransport(), args.target, args.pings)
        out = {"target": args.target, "rate_hz": f_s, "mu_rtt_star_s": mu}
    else:
        raise ConfigError("calibrate needs one of --mu, --scenario or --target")
    n = args.n if args.n is not None else 2 ** (args.m or 10) - 1
    out["bandwidth"] = {"n": n, **probe_bandwidth(n)}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _find_log(path: str) -> str:
    cand = os.path.join(path, "scores.jsonl") if os.path.isdir(path) else path
    if not os.path.isfile(cand):
        raise FileNotFoundError(f"no score log at {path}")
    return cand


def _regression(args, out_dir: str) -> dict:
    from .simulate import regression_dataset
    cfg = load_config(scenario_path(args.regression), _overrides(args))
    seed = cfg["seed"] if cfg["seed"] is not None else 0
    top = next(iter(build_topologies(cfg).values())).benign()
    X, Y = regression_dataset(top, args.signals, args.k, np.random.default_rng(seed),
                              m=cfg["probe"]["m"])
    rep = rtt_dependency_regression(X, Y, args.k)
    red = error_reduction(X, Y, args.k)
    path = os.path.join(out_dir, "regression.dat")
    with open(path, "w") as f:
        f.write(f"# y[{args.k}] ~ x[1..{args.k}], n={rep.n}, R2={rep.r_squared!r}, "
                f"residual_se={rep.residual_error!r}, error_reduction={red!r}\n")
        f.write("# term coef std_error t p\n")
        for i, name in enumerate(rep.names):
            f.write(f"{name} {rep.coefficients[i]!r} {rep.std_errors[i]!r} "
                    f"{rep.t_values[i]!r} {rep.p_values[i]!r}\n")
    return {"most_significant": rep.most_significant(), "r_squared": rep.r_squared,
            "error_reduction": red, "file": path}


def cmd_analyze(args) -> int:
    out: dict = {}
    out_dir = args.out
    if args.logs is not None:
        log_path = _find_log(args.logs)
        out_dir = out_dir or os.path.join(os.path.dirname(log_path), "report")
        exp = export_report(log_path, out_dir)
        out["export"] = {"files": exp.files, "rows": exp.rows, "skipped": exp.skipped}
        out["summary"] = summarize_log(log_path)
    if args.regression is not None:
        out_dir = out_dir or "report"
        os.makedirs(out_dir, exist_ok=True)
        out["regression"] = _regression(args, out_dir)
    if not out:
        raise ConfigError("analyze needs a log directory and/or --regression SCENARIO")
    print(json.dumps(out, sort_keys=True, default=str))
    return EXIT_OK


def cmd_monitor(args) -> int:
    from .prober.live import LiveTransport
    cfg = load_config(args.config, _overrides(args))
    live = cfg["live"]
    transport = LiveTransport(live["reply_timeout_s"])   # fails fast without privileges
    log_dir = args.log_dir or cfg["run"]["log_dir"]
    prof_dir = cfg["run"]["profile_dir"] or os.path.join(log_dir, "profiles")
    os.makedirs(log_dir, exist_ok=True)
    registry = HostRegistry(live["subnet"], live["local_address"])
    targets = list(live["targets"]) + (["127.0.0.1"] if args.loopback else [])
    for addr in targets:
        if args.loopback and addr == "127.0.0.1":
            registry.admit(addr, time.time())
            continue
        ttl = None
        try:
            transport.ping(addr, 42, 1)
            ttl = transport.last_ttl.get(addr)
        except ProbeError:
            pass
        log.info("%s: %s", addr, registry.observe_address(addr, ttl, time.time()))
    for addr, entry in registry.gamma.items():
        p = os.path.join(prof_dir, f"{addr}.json")
        if os.path.exists(p):
            entry.profile = load_profile(p)
            log.info("resumed profile for %s", addr)

    stop = {"flag": False}

    def _stop(signum, frame):
        stop["flag"] = True

    signals.signal(signals.SIGTERM, _stop)
    signals.signal(signals.SIGINT, _stop)
    emitter = AlertEmitter([StderrSink(), FileSink(os.path.join(log_dir, "alerts.jsonl"))],
                           cfg["detector"]["alert_dedup_s"])
    rng = np.random.default_rng()
    cycles = 0
    with JsonlLog(os.path.join(log_dir, "scores.jsonl")) as scores:
        orch = Orchestrator(registry, transport, DetectorConfig.from_config(cfg),
                            emitter=emitter, score_log=scores, wall_clock=time.time,
                            sleep=time.sleep)
        last_beat = 0.0
        while not stop["flag"]:
            if live["max_cycles"] is not None and cycles >= live["max_cycles"]:
                break
            for addr in registry.due_retries(time.time()):
                ttl = None
                try:
                    transport.ping(addr, 42, 1)
                    ttl = transport.last_ttl.get(addr)
                except ProbeError:
                    pass
                registry.observe_address(addr, ttl, time.time())
            if len(registry) == 0:
                if time.time() - last_beat >= live["heartbeat_s"]:
                    log.info("heartbeat: no hosts to protect")
                    last_beat = time.time()
                time.sleep(min(1.0, live["heartbeat_s"]))
                continue
            host, u = schedule_next(registry, rng)
            try:
                orch.run_cycle(host, u)
            except ProbeError as exc:
                log.warning("probe of %s failed: %s", host, exc)
            cycles += 1
            emitter.flush()
    for addr, entry in registry.gamma.items():
        if entry.profile is not None:
            save_profile(entry.profile, os.path.join(prof_dir, f"{addr}.json"))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    keys = "configuration keys (YAML, dotted paths):\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="echoscope", formatter_class=fmt, epilog=keys,
                                description="Ping echo-analysis MitM detection for switched LANs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", formatter_class=fmt, epilog=keys,
                       help="run a scenario against the simulated LAN",
                       description="Bundled scenarios: " + ", ".join(bundled_scenarios()))
    s.add_argument("scenario", help="scenario file or bundled scenario name")
    s.add_argument("--log-dir", help="output directory (default run.log_dir/<name>)")
    s.add_argument("--probes", type=int, help="probe cycles to run")
    _add_run_flags(s)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("monitor", formatter_class=fmt, epilog=keys,
                       help="protect live hosts with raw ICMP probing")
    m.add_argument("--config", help="config file (live section)")
    m.add_argument("--log-dir")
    m.add_argument("--loopback", action="store_true", help="also probe 127.0.0.1 (smoke test)")
    _add_run_flags(m)
    m.set_defaults(func=cmd_monitor)

    c = sub.add_parser("calibrate", formatter_class=fmt, epilog=keys,
                       help="compute f_s = 2 / mu_RTT* and probe bandwidth")
    g = c.add_mutually_exclusive_group()
    g.add_argument("--mu", type=float, help="mean 1542-byte RTT in seconds")
    g.add_argument("--scenario", help="calibrate against a simulated scenario")
    g.add_argument("--target", help="calibrate against a live host")
    c.add_argument("--pings", type=int, default=50)
    _add_run_flags(c)
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("analyze", formatter_class=fmt, epilog=keys,
                       help="score a run, export plot data, run the RTT regression")
    a.add_argument("logs", nargs="?", help="run directory or scores.jsonl")
    a.add_argument("--out", help="report directory")
    a.add_argument("--regression", metavar="SCENARIO", help="regress y[k] on x[1..k]")
    a.add_argument("--signals", type=int, default=5000)
    a.add_argument("--k", type=int, default=25)
    _add_run_flags(a)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except PermissionError as exc:
        print(f"permission error: {exc}", file=sys.stderr)
        return EXIT_PRIVILEGE
    except Exception as exc:
        from .prober.live import PrivilegeError
        if isinstance(exc, PrivilegeError):
            print(f"privilege error: {exc}", file=sys.stderr)
            return EXIT_PRIVILEGE
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
