"""Command-line front end: solve or learn drop policies, simulate them
against CoDel and droptail baselines, infer traffic parameters, and export
policy heatmaps — all driven by a flat-key scenario file, with every
output stamped with the scenario hash for reproducibility.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 I/O error (including hash-mismatched overwrite refusals).
"""

import csv
import io
import sys
from pathlib import Path

import click
import numpy as np

from .inference import ObservationLog, fit as fit_gamma
from .rtt_multi import DiscretizedPolicy, learn_policy
from .scenario import ScenarioConfig, ScenarioError
from .simulator import (
    CodelPolicy,
    DroptailPolicy,
    EventKind,
    LearnedPolicy,
    TablePolicy,
    aggregate,
    run_replication,
)
from .smdp import PolicyTable, SmdpPolicySolver
from .zero_rtt import ZeroRttModel
from .rtt_single import RttSingleModel

EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_IO = 4

HASH_PREFIX = "# config_hash="


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_scenario(ctx) -> ScenarioConfig:
    opts = ctx.obj
    if not opts["config"]:
        _fail(EXIT_CONFIG, "--config is required for this command")
    try:
        scenario = ScenarioConfig.from_file(opts["config"])
        return scenario.with_overrides(seed=opts["seed"], full_scale=opts["full_scale"])
    except ScenarioError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _write_output(path: Path, text: str, config_hash: str, force: bool):
    """Write ``text`` prefixed with the config hash; refuse to overwrite a
    file carrying a different hash unless forced."""
    path = Path(path)
    if path.exists() and not force:
        try:
            first = path.open().readline().strip()
        except OSError as exc:
            _fail(EXIT_IO, f"cannot read existing output {path}: {exc}")
        if first.startswith(HASH_PREFIX) and first[len(HASH_PREFIX):] != config_hash:
            _fail(
                EXIT_IO,
                f"{path} was produced by a different configuration "
                f"({first[len(HASH_PREFIX):]} != {config_hash}); use --force to overwrite",
            )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(f"{HASH_PREFIX}{config_hash}\n")
            f.write(text)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write {path}: {exc}")
    click.echo(f"wrote {path}")


def _capture_csv(write_fn) -> str:
    """Run a ``to_csv(path)``-style writer against a temporary buffer."""
    import tempfile

    with tempfile.NamedTemporaryFile("r", suffix=".csv", delete=False) as tmp:
        tmp_path = tmp.name
    try:
        write_fn(tmp_path)
        return open(tmp_path).read()
    finally:
        Path(tmp_path).unlink(missing_ok=True)


def _heatmap_text(table: PolicyTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["rate_pkts_per_s", "queue", "action"])
    grid = table.action_grid()
    for i, rate in enumerate(table.rate_values):
        for q in range(table.buffer + 1):
            writer.writerow([repr(float(rate)), q, int(grid[i, q])])
    return buf.getvalue()


def _solve_table(scenario: ScenarioConfig) -> PolicyTable:
    model_config = scenario.build_model_config()
    model = (
        ZeroRttModel(model_config)
        if scenario.model == "zero_rtt"
        else RttSingleModel(model_config)
    )
    table = SmdpPolicySolver(tolerance=1e-6).fit(model).policy_
    if not table.converged:
        _fail(
            EXIT_NO_CONVERGENCE,
            f"value iteration did not converge: residual span "
            f"{table.residual_span:.3e} after {table.iterations} sweeps",
        )
    return table


@click.group()
@click.option("--config", type=click.Path(), default=None, help="Scenario file.")
@click.option("--seed", type=int, default=None, help="Override run.seed.")
@click.option("--out-dir", type=click.Path(), default=".", help="Output directory.")
@click.option("--full-scale", is_flag=True,
              help="Run the full protocol (200 replications x 50000 arrivals).")
@click.option("--force", is_flag=True, help="Overwrite outputs from other configs.")
@click.pass_context
def main(ctx, config, seed, out_dir, full_scale, force):
    """Queue-management policy solver and evaluation harness."""
    ctx.obj = {
        "config": config,
        "seed": seed,
        "out_dir": Path(out_dir),
        "full_scale": full_scale,
        "force": force,
    }


@main.command()
@click.pass_context
def solve(ctx):
    """Solve the configured model exactly; write policy and heatmap CSVs."""
    scenario = _load_scenario(ctx)
    if scenario.model == "rtt_multi":
        _fail(EXIT_CONFIG, "model rtt_multi has no exact solver; use 'learn'")
    table = _solve_table(scenario)
    opts = ctx.obj
    h = scenario.config_hash()
    _write_output(opts["out_dir"] / "policy.csv", _capture_csv(table.to_csv), h, opts["force"])
    _write_output(opts["out_dir"] / "heatmap.csv", _heatmap_text(table), h, opts["force"])
    click.echo(f"gain={table.gain!r} iterations={table.iterations}")


@main.command()
@click.pass_context
def learn(ctx):
    """Learn a tabular multi-flow policy from sampled transitions."""
    scenario = _load_scenario(ctx)
    if scenario.model != "rtt_multi":
        _fail(EXIT_CONFIG, "'learn' only applies to model rtt_multi")
    episodes = scenario.replications * scenario.arrivals_per_run
    policy = learn_policy(
        scenario.build_model_config(),
        scenario.build_discretization(),
        episodes=episodes,
        seed=scenario.seed,
    )
    opts = ctx.obj
    _write_output(
        opts["out_dir"] / "learned_policy.csv",
        _capture_csv(policy.to_csv),
        scenario.config_hash(),
        opts["force"],
    )
    click.echo(
        f"episodes={episodes} states={len(policy.q_values)} "
        f"undervisited={policy.undervisited()}"
    )


def _strip_hash_line(path: Path) -> str:
    text = open(path).read()
    if text.startswith(HASH_PREFIX):
        text = text.split("\n", 1)[1]
    return text


def _load_policy_for(scenario: ScenarioConfig, policy_name: str, policy_file):
    if policy_name == "droptail":
        return DroptailPolicy()
    if policy_name == "codel":
        return CodelPolicy(target=scenario.eta_seconds, interval=0.1)
    if policy_name != "paqman":
        _fail(EXIT_CONFIG, f"unknown policy {policy_name!r}")
    if policy_file is not None:
        import tempfile

        text = _strip_hash_line(Path(policy_file))
        with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as tmp:
            tmp.write(text)
            tmp_path = tmp.name
        try:
            if scenario.model == "rtt_multi":
                learned = DiscretizedPolicy.from_csv(tmp_path, scenario.build_model_config())
                return LearnedPolicy(learned)
            return TablePolicy(PolicyTable.from_csv(tmp_path))
        finally:
            Path(tmp_path).unlink(missing_ok=True)
    if scenario.model == "rtt_multi":
        episodes = scenario.replications * scenario.arrivals_per_run
        learned = learn_policy(
            scenario.build_model_config(),
            scenario.build_discretization(),
            episodes=episodes,
            seed=scenario.seed,
        )
        return LearnedPolicy(learned)
    return TablePolicy(_solve_table(scenario))


def _fresh_policy(scenario, name, policy_file):
    # CoDel is stateful: every replication needs its own instance
    return _load_policy_for(scenario, name, policy_file)


@main.command()
@click.option("--policy", "policy_name", default="paqman",
              type=click.Choice(["paqman", "codel", "droptail"]))
@click.option("--policy-file", type=click.Path(exists=False), default=None,
              help="Reuse a previously written policy CSV.")
@click.pass_context
def simulate(ctx, policy_name, policy_file):
    """Run one replication and write the full event trace."""
    scenario = _load_scenario(ctx)
    try:
        policy = _fresh_policy(scenario, policy_name, policy_file)
    except (OSError, KeyError, ValueError) as exc:
        _fail(EXIT_IO, f"cannot load policy file: {exc}")
    trace = run_replication(
        scenario.build_model_config(), policy, scenario.arrivals_per_run, scenario.seed
    )
    opts = ctx.obj
    _write_output(
        opts["out_dir"] / f"trace_{policy_name}.csv",
        _capture_csv(trace.to_csv),
        scenario.config_hash(),
        opts["force"],
    )
    click.echo(
        f"arrivals={scenario.arrivals_per_run} admitted={trace.admitted} "
        f"departures={trace.departures} conserved={trace.is_conserved}"
    )


def _evolution_text(all_traces: dict, n_bins: int = 100) -> str:
    """Time-binned queue/rate evolution, averaged over replications."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["policy", "time_fraction", "mean_queue", "mean_rate"])
    for name, traces in all_traces.items():
        horizon = min(tr.duration for tr in traces)
        edges = np.linspace(0.0, horizon, n_bins + 1)
        queue_sum = np.zeros(n_bins)
        rate_sum = np.zeros(n_bins)
        for tr in traces:
            times = np.array([0.0] + [e.time for e in tr.events])
            queues = np.array([0] + [e.queue_after for e in tr.events], dtype=float)
            rates = np.array(
                [tr.config["initial_rate"]] + [e.rate_after for e in tr.events]
            )
            idx = np.searchsorted(times, edges[:-1], side="right") - 1
            queue_sum += queues[idx]
            rate_sum += rates[idx]
        for k in range(n_bins):
            writer.writerow(
                [
                    name,
                    repr(float((k + 0.5) / n_bins)),
                    repr(float(queue_sum[k] / len(traces))),
                    repr(float(rate_sum[k] / len(traces))),
                ]
            )
    return buf.getvalue()


@main.command()
@click.option("--policies", default="paqman,codel,droptail",
              help="Comma-separated subset of paqman,codel,droptail.")
@click.option("--policy-file", type=click.Path(exists=False), default=None)
@click.pass_context
def compare(ctx, policies, policy_file):
    """Evaluate the policies on identical seeds; write a comparison report."""
    scenario = _load_scenario(ctx)
    names = [p.strip() for p in policies.split(",") if p.strip()]
    if not names:
        _fail(EXIT_CONFIG, "no policies selected")
    for name in names:
        if name not in ("paqman", "codel", "droptail"):
            _fail(EXIT_CONFIG, f"unknown policy {name!r}")
    model_config = scenario.build_model_config()
    all_traces = {}
    reports = {}
    for name in names:
        traces = []
        shared = None
        if name != "codel":  # stateless policies can be built once
            shared = _load_policy_for(scenario, name, policy_file)
        for rep in range(scenario.replications):
            policy = shared if shared is not None else _fresh_policy(
                scenario, name, policy_file
            )
            traces.append(
                run_replication(
                    model_config, policy, scenario.arrivals_per_run,
                    seed=scenario.seed + rep,
                )
            )
        all_traces[name] = traces
        reports[name] = aggregate(traces, scenario.burn_in_fraction)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["policy", "mean_queue", "mean_delay", "mean_rate", "throughput",
         "utilization", "policy_drops", "forced_drops"]
    )
    summary = []
    for name in names:
        s = reports[name].pooled
        writer.writerow(
            [name, repr(s.mean_queue), repr(s.mean_delay), repr(s.mean_rate),
             repr(s.throughput), repr(s.utilization), s.policy_drops, s.forced_drops]
        )
        summary.append(
            f"{name:9s} delay={s.mean_delay * 1e3:8.2f} ms  "
            f"throughput={s.throughput:10.2f} pkt/s  utilization={s.utilization:6.3f}  "
            f"drops={s.policy_drops}+{s.forced_drops}"
        )
    opts = ctx.obj
    h = scenario.config_hash()
    _write_output(opts["out_dir"] / "comparison.csv", buf.getvalue(), h, opts["force"])
    _write_output(
        opts["out_dir"] / "evolution.csv", _evolution_text(all_traces), h, opts["force"]
    )
    _write_output(
        opts["out_dir"] / "summary.txt", "\n".join(summary) + "\n", h, opts["force"]
    )
    for line in summary:
        click.echo(line)


@main.command()
@click.argument("logfile", type=click.Path(exists=False))
@click.pass_context
def infer(ctx, logfile):
    """Fit the Gamma-AIMD traffic model to an observation log CSV."""
    try:
        log = ObservationLog.from_csv(logfile)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_IO, f"cannot read observation log: {exc}")
    result = fit_gamma(log)
    if not result.converged:
        _fail(
            EXIT_NO_CONVERGENCE,
            f"likelihood maximisation did not converge "
            f"(gradient norm {result.gradient_norm:.3e})",
        )
    row = result.as_row()
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(list(row))
    writer.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
    opts = ctx.obj
    _write_output(opts["out_dir"] / "fit.csv", buf.getvalue(), "none", opts["force"])
    for key, value in row.items():
        click.echo(f"{key}={value!r}")


@main.command("export-policy")
@click.argument("policy_csv", type=click.Path(exists=False))
@click.pass_context
def export_policy(ctx, policy_csv):
    """Re-export a solved policy CSV as a (rate, queue) heatmap grid."""
    import tempfile

    try:
        text = _strip_hash_line(Path(policy_csv))
        with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as tmp:
            tmp.write(text)
            tmp_path = tmp.name
        try:
            table = PolicyTable.from_csv(tmp_path)
        finally:
            Path(tmp_path).unlink(missing_ok=True)
    except (OSError, KeyError, ValueError) as exc:
        _fail(EXIT_IO, f"cannot read policy file: {exc}")
    opts = ctx.obj
    _write_output(
        opts["out_dir"] / "heatmap.csv", _heatmap_text(table), "none", opts["force"]
    )


if __name__ == "__main__":
    main()
