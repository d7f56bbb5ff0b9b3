#!/usr/bin/env python3
"""
Command-line front end for clustered risk-ratio confidence intervals.

Subcommands:
  ci               intervals from all 17 methods for a study CSV
  simulate         Monte-Carlo coverage grid from a YAML config
  appropriateness  simulate studies shaped like a real example and flag weak methods
"""

import argparse
import os
import sys

from dotenv import load_dotenv

from coverage_simulator import CoverageSimulator
from errors import ClusterRRError, ConfigError, ParseError, ValidationError
from interval_methods import IntervalCalculator, MethodParams
from study_io import (
    appropriateness_frame,
    emit,
    eta_theta_means,
    grid_frame,
    load_grid_config,
    load_params_config,
    read_study,
    render,
    render_csv,
    results_frame,
    summary_frame,
)

INPUT_ERRORS = (ParseError, ValidationError, ConfigError)


def _env(name, cast, default=None):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw.strip())
    except ValueError:
        raise ConfigError(f"environment variable {name} is malformed: {raw!r}") from None


class ClusterRiskRatioApp:
    """Main application class that wires configuration, computation and output."""

    def __init__(self):
        self.alpha = 0.05
        self.workers = 1
        self.seed = None
        self.reps = None
        self.stall_ratio = None
        self.status = sys.stdout

    def setup(self):
        """Load defaults from the environment (.env supported)."""
        load_dotenv()
        self.alpha = _env("CLUSTER_RR_ALPHA", float, 0.05)
        self.workers = _env("CLUSTER_RR_WORKERS", int, 1)
        self.seed = _env("CLUSTER_RR_SEED", int)
        self.reps = _env("CLUSTER_RR_REPS", int)
        self.stall_ratio = _env("CLUSTER_RR_STALL_RATIO", float)

    def say(self, message=""):
        print(message, file=self.status)

    def banner(self, title):
        self.say("\n" + "=" * 50)
        self.say(title)
        self.say("=" * 50)

    def _route_status(self, fmt, out):
        # keep stdout parseable when it carries machine output
        self.status = sys.stderr if (out is None and fmt != "table") else sys.stdout

    def _write(self, text, out):
        leftover = emit(text, out)
        if leftover is not None:
            sys.stdout.write(leftover)
        else:
            self.say(f"💾 Wrote {out}")

    def run_ci(self, args):
        alpha = args.alpha if args.alpha is not None else self.alpha
        self._route_status(args.format, args.out)
        self.banner(f"📊 RISK RATIO INTERVALS (alpha = {alpha})")

        study = read_study(args.study)
        self.say(f"✅ Loaded {len(study.treatment)} treatment and {len(study.control)} control clusters")
        params = MethodParams(alpha=alpha, koopman_form=args.koopman_form, katz_radicand=args.katz_radicand)
        results = IntervalCalculator(params).compute_all(study)

        missing = [r for r in results if not r.exists]
        if missing:
            self.say(f"⚠️  {len(missing)} method(s) Nonexistent: "
                     + ", ".join(f"{r.method} ({r.reason})" for r in missing))
        self._write(render(results_frame(results), args.format), args.out)
        return 0

    def _progress(self, done, total, metrics):
        spec = metrics.spec
        mark = "⚠️ " if metrics.stalled else "⏳"
        self.say(f"{mark} [{done}/{total}] clusters={spec.clusters_per_group} size={spec.cluster_size} "
                 f"eta={spec.eta} theta=({spec.theta1}, {spec.theta2}) "
                 f"-> {metrics.good}/{metrics.rejected_samples}")

    def run_simulate(self, args):
        config = load_grid_config(args.config)
        workers = args.workers if args.workers is not None else self.workers
        reps = args.reps if args.reps is not None else self.reps
        seed = args.seed if args.seed is not None else (config.seed if config.seed is not None else self.seed)
        self._route_status("csv", args.out)

        specs = config.scenarios(replications=reps, seed=seed, stall_ratio=self.stall_ratio)
        self.banner("📊 COVERAGE SIMULATION")
        self.say(f"Cells: {config.cell_count}  replications: {specs[0].replications}  workers: {workers}")
        self.say("=" * 50)

        simulator = CoverageSimulator(config.method_params(), workers=workers, progress=self._progress)
        result = simulator.run_grid(specs, methods=config.methods)

        self._write(render_csv(grid_frame(result.cells)), args.out)
        summary = render_csv(summary_frame(result.medians))
        means = render_csv(eta_theta_means(result.cells, config.methods))
        if args.summary_out:
            emit(summary, args.summary_out)
            base, ext = os.path.splitext(args.summary_out)
            emit(means, f"{base}_means{ext or '.csv'}")
            self.say(f"💾 Wrote {args.summary_out} and {base}_means{ext or '.csv'}")
        else:
            self.banner("📊 MEDIANS OVER CELLS")
            self.say(summary.rstrip())

        stalled = result.stalled_cells
        if stalled:
            self.say(f"⚠️  {len(stalled)} cell(s) stalled and were left out of the medians")
        self.say(f"✅ Finished {len(result.cells)} cells")
        return 0

    def run_appropriateness(self, args):
        params = load_params_config(args.params)
        reps = args.reps if args.reps is not None else (self.reps or params.replications)
        seed = args.seed if args.seed is not None else (params.seed if params.seed is not None else self.seed)
        if seed is None:
            raise ConfigError("no master seed: set seed in the params file, --seed or CLUSTER_RR_SEED")
        self._route_status(args.format, args.out)

        self.banner(f"📊 APPROPRIATENESS CHECK: {params.name}")
        self.say(f"eta = {params.eta}  replications: {reps}")
        simulator = CoverageSimulator(params.method_params())
        metrics, rows = simulator.appropriateness_check(
            params.treatment, params.control, params.eta, reps,
            alpha=params.alpha, seed=seed, methods=params.methods,
            stall_ratio=self.stall_ratio or params.stall_ratio,
        )
        self.say(f"✅ {metrics.good} good replications ({metrics.rejected_samples} rejected)")
        flagged = [r.method for r in rows if r.verdict == "FLAG"]
        if flagged:
            self.say(f"⚠️  Flagged: {', '.join(flagged)}")
        self._write(render(appropriateness_frame(rows), args.format), args.out)
        return 0

    def run(self, argv=None):
        parser = build_parser()
        args = parser.parse_args(argv)
        try:
            self.setup()
            return args.handler(self, args)
        except INPUT_ERRORS as e:
            print(f"❌ {e}", file=sys.stderr)
            return 2
        except OSError as e:
            print(f"❌ cannot write output: {e}", file=sys.stderr)
            return 2
        except ClusterRRError as e:
            print(f"❌ {e.code}: {e}", file=sys.stderr)
            return 1


def build_parser():
    parser = argparse.ArgumentParser(description="Confidence intervals for a risk ratio from clustered binary data")
    sub = parser.add_subparsers(dest="command", required=True)

    ci = sub.add_parser("ci", help="compute all 17 intervals for a study CSV")
    ci.add_argument("study", help="CSV with header group,cluster,size,successes")
    ci.add_argument("--alpha", type=float, default=None)
    ci.add_argument("--koopman-form", choices=["printed", "standard"], default="printed",
                    help="weight in the Koopman score brace: successes (printed) or sizes (standard)")
    ci.add_argument("--katz-radicand", choices=["printed", "standard"], default="printed",
                    help="Katz and inverse sinh log-variance with +1/n (printed) or -1/n (standard)")
    ci.add_argument("--format", choices=["table", "csv", "json"], default="table")
    ci.add_argument("--out", default=None)
    ci.set_defaults(handler=ClusterRiskRatioApp.run_ci)

    sim = sub.add_parser("simulate", help="run a coverage simulation grid")
    sim.add_argument("config", help="YAML grid config")
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default=None, help="per-cell metrics CSV (stdout if omitted)")
    sim.add_argument("--summary-out", default=None, help="medians CSV; the eta/theta means go next to it")
    sim.set_defaults(handler=ClusterRiskRatioApp.run_simulate)

    fit = sub.add_parser("appropriateness", help="check methods against a simulated copy of an example")
    fit.add_argument("params", help="YAML example parameters")
    fit.add_argument("--reps", type=int, default=None)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--format", choices=["table", "csv", "json"], default="table")
    fit.add_argument("--out", default=None)
    fit.set_defaults(handler=ClusterRiskRatioApp.run_appropriateness)
    return parser


def main(argv=None):
    app = ClusterRiskRatioApp()
    try:
        sys.exit(app.run(argv))
    except KeyboardInterrupt:
        print("\n\n⚠️  Keyboard interrupt received - stopping", file=sys.stderr)
        sys.exit(130)


if __name__ == "__main__":
    main()
