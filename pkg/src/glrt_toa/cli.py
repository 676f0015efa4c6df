"""Command-line entry point: ``glrt-toa <subcommand> --config FILE``.

Exit codes: 0 success, 1 replay mismatch, 2 configuration error, 3 I/O error,
4 acceptance check violated (``--check``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional

from .channel import CirError
from .harness import (ConfigError, ExperimentConfig, OutputError, ReplayMismatch, check_coarse,
                      check_fine, check_resolvability, check_timing, load_config, replay,
                      run_coarse_benchmark, run_fine_benchmark, run_resolvability, run_timing, synth_cir)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CHECK = 4

log = logging.getLogger("glrt_toa")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glrt-toa", description="GLRT time-of-arrival benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="YAML experiment configuration (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--trials", type=int, help="override trials per grid point")
        sp.add_argument("--workers", type=int, help="worker threads")
        sp.add_argument("--out", help=out_help)

    for name, helptext in (("coarse-bench", "ROC/AUC of the coarse detector vs TDNC"),
                           ("fine-bench", "absolute timing error of the fine stage vs FDNC"),
                           ("resolvability", "two-path delay resolvability table"),
                           ("timing", "fine-stage wall-time statistics")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--check", action="store_true", help="exit with code 4 if an acceptance check fails")
        if name == "coarse-bench":
            sp.add_argument("--no-calibrate", action="store_true",
                            help="skip the signal-free threshold calibration")

    sp = sub.add_parser("replay", help="re-run one persisted trial and compare bit for bit")
    sp.add_argument("--run", required=True, help="result directory holding manifest.json")
    sp.add_argument("--trial", type=int, required=True)
    sp.add_argument("--config", help="configuration to replay with (default: the recorded one)")

    sp = sub.add_parser("synth-cir", help="write one synthetic trial's channel as a CIR file")
    common(sp, out_help="CIR file to write")
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--snr", type=float)
    sp.add_argument("--sir", type=float)
    return p


def _config(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "trials": args.trials, "workers": args.workers}
    if args.command != "synth-cir":
        overrides["out"] = args.out
    if args.config:
        return load_config(args.config, overrides)
    from .harness import config_from_dict
    return config_from_dict({k: v for k, v in overrides.items() if v is not None})


def _report(checks) -> int:
    for c in checks:
        print(c.line())
    return EXIT_CHECK if any(not c.passed for c in checks) else EXIT_OK


def run(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            cfg = load_config(args.config) if args.config else None
            try:
                lines = replay(args.run, args.trial, cfg)
            except ReplayMismatch as exc:
                print(str(exc))
                return EXIT_MISMATCH
            print("\n".join(lines))
            return EXIT_OK

        cfg = _config(args)
        if args.command == "synth-cir":
            if not args.out:
                raise ConfigError("synth-cir needs --out FILE")
            sc = synth_cir(cfg, args.out, args.trial, args.snr, args.sir)
            print(f"wrote {args.out}: {len(sc.sync_paths)} sync paths, {len(sc.intf_paths)} interference paths")
            return EXIT_OK
        if args.command == "coarse-bench":
            res = run_coarse_benchmark(cfg, calibrate=not args.no_calibrate)
            for (snr, sir, method, rank), (a, s) in sorted(res.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3])):
                print(f"SNR {snr:g} SIR {sir:g} {method:5s} rank {rank}: AUC {a:.4f} +- {s:.4f}")
            checks = check_coarse(cfg, res)
        elif args.command == "fine-bench":
            import numpy as np
            res = run_fine_benchmark(cfg)
            for (snr, sir, method, rank), e in res.items():
                print(f"SNR {snr:g} SIR {sir:g} {method:5s} rank {rank}: median |err| {np.median(e):.4f} samples")
            checks = check_fine(cfg, res)
        elif args.command == "resolvability":
            rows = run_resolvability(cfg)
            for r in rows:
                print(f"SNR {r['snr']:g}: d90 {r['d90']:.3f}  d50 {r['d50']:.3f}  d10 {r['d10']:.3f}  J_max {r['j_max']}")
            checks = check_resolvability(cfg, rows)
        elif args.command == "timing":
            st = run_timing(cfg)
            for m in ("glrt", "fdnc"):
                s = st[m]
                print(f"{m}: mean {s['mean']:.3f} ms  max {s['max']:.3f}  min {s['min']:.3f}  std {s['std']:.3f}")
            print(f"mean ratio GLRT/FDNC: {st['ratio']:.2f}")
            checks = check_timing(cfg, st)
        else:  # pragma: no cover - argparse rejects unknown commands
            raise ConfigError(f"unknown command {args.command}")
        if args.check:
            return _report(checks)
        return EXIT_OK
    except (ConfigError, CirError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
