"""Command-line interface: simulate, train-offline, optimize, eval-lodo.

Every command resolves its settings as flags > config file > defaults (with
PIPETUNE_SEED as a last-resort seed), freezes the resolved snapshot into a
manifest next to its outputs, and is bit-reproducible from that manifest up
to timestamp fields.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click

from . import __version__
from .es_predictor import EarlyStopPredictor
from .lodo import (
    METHODS,
    LodoHarness,
    LodoSettings,
    write_reports_csv,
    write_summary_json,
    summarize,
)
from .optimizer import Schedules, TwoPhaseOptimizer
from .ranker import OfflineRanker
from .simulator import SimSpec, Simulation, load_sidecar_spec, write_sidecar
from .space import default_space
from .corpus import load_corpus, save_corpus

TIMESTAMP_FIELDS = ("created_at", "wall_clock")


def _parse_config_file(path: str) -> dict:
    """Key/value lines, '#' comments; values parsed as JSON when possible."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"bad config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key.replace("-", "_")] = json.loads(value)
        except json.JSONDecodeError:
            out[key.replace("-", "_")] = value
    return out


def _resolve(ctx: click.Context, config_path: str | None) -> dict:
    """Apply precedence flags > config file > defaults (env seed fallback)."""
    settings = dict(ctx.params)
    settings.pop("config", None)
    overrides = _parse_config_file(config_path) if config_path else {}
    for name, value in overrides.items():
        if name not in settings:
            raise click.UsageError(f"unknown config key {name!r}")
        if ctx.get_parameter_source(name) == click.core.ParameterSource.DEFAULT:
            settings[name] = value
    if (
        "seed" in settings
        and ctx.get_parameter_source("seed") == click.core.ParameterSource.DEFAULT
        and "seed" not in overrides
        and os.environ.get("PIPETUNE_SEED")
    ):
        settings["seed"] = int(os.environ["PIPETUNE_SEED"])
    return settings


def _write_manifest(out_dir: Path, command: str, settings: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "settings": {k: v for k, v in sorted(settings.items()) if k != "out"},
        "outputs": sorted(outputs),
        "created_at": time.time(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_simulation(corpus_dir: Path) -> Simulation:
    sidecar = corpus_dir / "ground_truth.json"
    if not sidecar.exists():
        raise click.UsageError(f"missing ground-truth sidecar {sidecar}")
    return Simulation(load_sidecar_spec(sidecar))


@click.group()
@click.version_option(__version__)
def cli():
    """Budget-aware two-phase configuration selection."""


@cli.command()
@click.option("--datasets", default=10, show_default=True, help="Corpus dataset count.")
@click.option("--runs-per-dataset", default=600, show_default=True)
@click.option("--descriptor-dim", default=8, show_default=True)
@click.option("--shared-weight", default=1.0, show_default=True)
@click.option("--residual-weight", default=0.5, show_default=True)
@click.option("--noise", default=0.02, show_default=True)
@click.option("--informativeness", default=0.7, show_default=True)
@click.option("--space-file", type=click.Path(exists=True), default=None,
              help="JSON space description; defaults to the built-in space.")
@click.option("--seed", default=0, show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), required=True)
@click.pass_context
def simulate(ctx, **_kwargs):
    """Generate a synthetic corpus with its ground-truth sidecar."""
    p = _resolve(ctx, ctx.params.get("config"))
    if p["datasets"] < 1:
        raise click.UsageError("--datasets must be >= 1")
    space = default_space()
    if p["space_file"]:
        from .space import ConfigSpace

        space = ConfigSpace.from_json(Path(p["space_file"]).read_text())
    try:
        spec = SimSpec(
            space=space,
            n_datasets=p["datasets"],
            descriptor_dim=p["descriptor_dim"],
            shared_weight=p["shared_weight"],
            residual_weight=p["residual_weight"],
            noise=p["noise"],
            trajectory_informativeness=p["informativeness"],
            seed=p["seed"],
            runs_per_dataset=p["runs_per_dataset"],
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    simulation = Simulation(spec)
    save_corpus(out / "corpus.jsonl", simulation.build_groups(), space)
    write_sidecar(out / "ground_truth.json", simulation)
    _write_manifest(out, "simulate", p, ["corpus.jsonl", "ground_truth.json"])
    click.echo(f"wrote corpus for {spec.n_datasets} datasets to {out}")


_model_options = [
    click.option("--ranker-members", default=3, show_default=True),
    click.option("--ranker-rounds", default=120, show_default=True),
    click.option("--predictor-members", default=5, show_default=True),
    click.option("--predictor-rounds", default=120, show_default=True),
    click.option("--depth", default=4, show_default=True),
    click.option("--learning-rate", default=0.1, show_default=True),
    click.option("--min-leaf", default=5, show_default=True),
    click.option("--apply-filter", is_flag=True, default=False),
]


def _with_model_options(cmd):
    for option in reversed(_model_options):
        cmd = option(cmd)
    return cmd


@cli.command("train-offline")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True), required=True,
              help="Directory produced by `simulate`.")
@click.option("--heldout", default=None, help="Train one split only.")
@click.option("--truncation", default=0.5, show_default=True,
              type=click.Choice(["0.25", "0.5", "0.75"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), required=True)
@_with_model_options
@click.pass_context
def train_offline(ctx, **_kwargs):
    """Train ranker and predictor bundles per leave-one-dataset-out split."""
    p = _resolve(ctx, ctx.params.get("config"))
    corpus_dir = Path(p["corpus_dir"])
    simulation = _load_simulation(corpus_dir)
    space = simulation.spec.space
    groups = load_corpus(corpus_dir / "corpus.jsonl", space)
    ids = [g.dataset_id for g in groups]
    if p["heldout"] is not None and p["heldout"] not in ids:
        raise click.UsageError(f"unknown held-out dataset {p['heldout']!r}")
    heldout_ids = [p["heldout"]] if p["heldout"] else ids
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for hid in heldout_ids:
        training = [g for g in groups if g.dataset_id != hid]
        ranker = OfflineRanker(
            members=p["ranker_members"],
            rounds=p["ranker_rounds"],
            depth=p["depth"],
            learning_rate=p["learning_rate"],
            min_leaf=p["min_leaf"],
            apply_filter=p["apply_filter"],
            seed=p["seed"],
        ).fit(training, space)
        predictor = EarlyStopPredictor(
            members=p["predictor_members"],
            rounds=p["predictor_rounds"],
            depth=p["depth"],
            learning_rate=p["learning_rate"],
            min_leaf=p["min_leaf"],
            truncation=float(p["truncation"]),
            seed=p["seed"],
        ).fit(training, space, surrogate=ranker)
        ranker.save(out / f"ranker_{hid}.json")
        predictor.save(out / f"predictor_{hid}.json")
        outputs += [f"ranker_{hid}.json", f"predictor_{hid}.json"]
    _write_manifest(out, "train-offline", p, outputs)
    click.echo(f"wrote {len(outputs)} bundles to {out}")


@cli.command()
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True), required=True)
@click.option("--models", "models_dir", type=click.Path(exists=True), required=True)
@click.option("--target", required=True, help="Held-out dataset id.")
@click.option("--budget", default=15, show_default=True)
@click.option("--warm-start", default=5, show_default=True)
@click.option("--truncation", default=0.5, show_default=True,
              type=click.Choice(["0.25", "0.5", "0.75"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), required=True)
@click.pass_context
def optimize(ctx, **_kwargs):
    """Run the online two-phase loop against one held-out dataset."""
    p = _resolve(ctx, ctx.params.get("config"))
    corpus_dir, models_dir = Path(p["corpus_dir"]), Path(p["models_dir"])
    ranker_path = models_dir / f"ranker_{p['target']}.json"
    predictor_path = models_dir / f"predictor_{p['target']}.json"
    for path in (ranker_path, predictor_path):
        if not path.exists():
            raise click.UsageError(f"missing model bundle {path}")
    simulation = _load_simulation(corpus_dir)
    try:
        sim = simulation.dataset(p["target"])
    except KeyError as exc:
        raise click.UsageError(str(exc))
    if p["budget"] < 1:
        raise click.UsageError("--budget must be >= 1")
    space = simulation.spec.space
    ranker = OfflineRanker.load(ranker_path)
    predictor = EarlyStopPredictor.load(predictor_path)
    truncation = float(p["truncation"])
    if predictor.truncation != truncation:
        raise click.UsageError(
            f"predictor bundle was trained at truncation {predictor.truncation}"
        )
    from .space import enumerate_configs
    import numpy as np

    pool = enumerate_configs(space)
    scored = ranker.score(np.asarray(sim.meta_features), pool, space)
    optimizer = TwoPhaseOptimizer(
        schedules=Schedules(budget=p["budget"], warm_start=p["warm_start"]),
        seed=p["seed"],
    )
    result = optimizer.run(
        scored,
        predictor,
        lambda config: sim.emit_trajectory(config, truncation),
        np.asarray(sim.meta_features),
        space,
    )
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    with (out / "trace.jsonl").open("w") as fh:
        for row in result.trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "result.json").write_text(
        json.dumps(
            {
                "chosen": result.chosen.values(space),
                "proxy_score": result.proxy_score,
                "evaluations_used": result.evaluations_used,
                "target": p["target"],
            },
            indent=2,
            sort_keys=True,
        )
    )
    _write_manifest(out, "optimize", p, ["trace.jsonl", "result.json"])
    click.echo(
        f"selected {result.chosen.values(space)} after "
        f"{result.evaluations_used} early-stop evaluations"
    )


@cli.command("eval-lodo")
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True), required=True)
@click.option("--methods", default="two_phase,offline_only,global,random_single",
              show_default=True)
@click.option("--budget", default=15, show_default=True)
@click.option("--budgets", default=None, help="Comma list for a budget sweep.")
@click.option("--truncation", default=0.5, show_default=True,
              type=click.Choice(["0.25", "0.5", "0.75"]))
@click.option("--ablate", multiple=True,
              type=click.Choice(["no_residual", "no_bo", "no_offline"]))
@click.option("--warm-start", default=5, show_default=True)
@click.option("--gp-restarts", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@_with_model_options
@click.option("-o", "--out", type=click.Path(), required=True)
@click.pass_context
def eval_lodo(ctx, **_kwargs):
    """Evaluate methods across every LODO split and emit CSV/JSON reports."""
    p = _resolve(ctx, ctx.params.get("config"))
    methods = [m.strip() for m in p["methods"].split(",") if m.strip()]
    methods += [a for a in p["ablate"] if a not in methods]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise click.UsageError(f"unknown methods: {unknown}")
    budgets = [p["budget"]]
    if p["budgets"]:
        try:
            budgets = [int(b) for b in p["budgets"].split(",")]
        except ValueError:
            raise click.UsageError("--budgets must be a comma list of integers")
    simulation = _load_simulation(Path(p["corpus_dir"]))
    settings = LodoSettings(
        budget=p["budget"],
        warm_start=p["warm_start"],
        truncation=float(p["truncation"]),
        ranker_members=p["ranker_members"],
        ranker_rounds=p["ranker_rounds"],
        predictor_members=p["predictor_members"],
        predictor_rounds=p["predictor_rounds"],
        depth=p["depth"],
        learning_rate=p["learning_rate"],
        min_leaf=p["min_leaf"],
        gp_restarts=p["gp_restarts"],
        apply_filter=p["apply_filter"],
        seed=p["seed"],
    )
    harness = LodoHarness(simulation, settings)
    combined = {}
    for budget in budgets:
        results = harness.run(methods, budget=budget)
        for method, reports in results.items():
            label = method if len(budgets) == 1 else f"{method}@b{budget}"
            combined[label] = reports
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(out / "report.csv", combined)
    write_summary_json(out / "summary.json", combined)
    if harness.failures:
        (out / "failures.json").write_text(json.dumps(harness.failures, indent=2))
    _write_manifest(out, "eval-lodo", p, ["report.csv", "summary.json"])
    means = {m: round(e["regret"], 4) for m, e in summarize(combined).items()}
    click.echo(f"mean regret by method: {means}")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except Exception as exc:  # internal error contract: exit code 1
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
