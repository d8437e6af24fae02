"""Command-line entry points.

Three commands are installed:

* ``cdt`` — the goal-prompted recommender: train, recommend, attention,
  embed-export.
* ``eval`` — the counterfactual evaluators: train one candidate, select
  the best on held-out factual MSE, estimate treatment effects.
* ``cdt-lab`` — the full experiment pipeline and the HTTP service.

Data-producing verbs take a pipeline config JSON (seedable with
``--seed``); inference verbs take a checkpoint directory plus a dataset
JSONL file.
"""
from __future__ import annotations

import json
import pathlib
import sys
from types import SimpleNamespace

import click

from . import embedding as emb
from . import evaluators as ev
from .model import CdtModel
from .pipeline import PipelineConfig, PipelineError, run_full_pipeline
from .sequencing import N_GOAL_BINS, split_cohort_subsequences
from .synth import generate_cohort, import_dataset, split_dataset


def _load_config(path, seed):
    config = PipelineConfig.load(path) if path else PipelineConfig()
    if seed is not None:
        config.seed = seed
    return config


def _materialize(config):
    """Generate the configured cohort and prepare every split."""
    cohort_config = config.cohort_config()
    cohort = generate_cohort(cohort_config)
    splits = dict(zip(("train", "valid", "test"),
                      split_dataset(cohort, config.seed)))
    schema = emb.fit_schema(splits["train"], cohort_config)
    baselines = {p.pid: p.baseline for p in cohort}
    prepared = {
        name: [emb.prepare_subsequence(s, baselines, schema)
               for s in split_cohort_subsequences(patients)]
        for name, patients in splits.items()
    }
    return SimpleNamespace(cohort_config=cohort_config, cohort=cohort,
                           splits=splits, schema=schema, prepared=prepared)


def _load_cohort_sequence(schema, cohort_path, patient_id):
    cohort = import_dataset(cohort_path)
    match = next((p for p in cohort if p.pid == patient_id), None)
    if match is None:
        raise click.ClickException(f"unknown patient id {patient_id!r}")
    return emb.prepare_sequence(match.admissions, match.baseline, schema,
                                patient_id=match.pid)


def _echo_json(obj):
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


config_option = click.option("--config", "config_path", type=click.Path(
    exists=True, dir_okay=False), default=None,
    help="Pipeline config JSON; defaults apply when omitted.")
seed_option = click.option("--seed", type=int, default=None,
                           help="Override the config seed.")


# ---------------------------------------------------------------------------
# cdt: the goal-prompted recommender


@click.group()
def cdt():
    """Goal-prompted medication recommendation transformer."""


@cdt.command("train")
@config_option
@seed_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              required=True, help="Checkpoint output directory.")
@click.option("--verbose/--quiet", default=True)
def cdt_train(config_path, seed, out_dir, verbose):
    """Generate the cohort and train the recommender."""
    config = _load_config(config_path, seed)
    data = _materialize(config)
    model = CdtModel(data.schema, config.cdt_config())
    log = model.train(data.prepared["train"], data.prepared["valid"],
                      verbose=verbose)
    model.save(out_dir)
    with open(pathlib.Path(out_dir) / "train_log.json", "w",
              encoding="utf-8") as f:
        json.dump(log, f, indent=2)
    click.echo(f"saved checkpoint to {out_dir} "
               f"(best valid loss {min(e['valid_loss'] for e in log):.4f})")


@cdt.command("recommend")
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--cohort", "cohort_path",
              type=click.Path(exists=True, dir_okay=False), required=True,
              help="Dataset JSONL with the patient histories.")
@click.option("--patient", "patient_id", required=True)
@click.option("--bin-lo", type=int, default=0, show_default=True)
@click.option("--bin-hi", type=int, default=16, show_default=True,
              help="Inclusive upper goal bin.")
def cdt_recommend(checkpoint, cohort_path, patient_id, bin_lo, bin_hi):
    """Sweep goal bins for one patient and print the ranked answer."""
    if not 0 <= bin_lo <= bin_hi < N_GOAL_BINS:
        raise click.ClickException(
            f"need 0 <= bin-lo <= bin-hi < {N_GOAL_BINS}")
    model = CdtModel.load(checkpoint)
    prepared = _load_cohort_sequence(model.schema, cohort_path, patient_id)
    best, per_bin = model.recommend(prepared, range(bin_lo, bin_hi + 1))
    _echo_json({"patient_id": patient_id, "best": best, "per_bin": per_bin})


@cdt.command("attention")
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--cohort", "cohort_path",
              type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--patient", "patient_id", required=True)
@click.option("--goal-bin", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              default=None, help="Write JSON here instead of stdout.")
def cdt_attention(checkpoint, cohort_path, patient_id, goal_bin, out_path):
    """Dump per-layer attention maps with token labels."""
    if not 0 <= goal_bin < N_GOAL_BINS:
        raise click.ClickException(f"goal bin outside 0..{N_GOAL_BINS - 1}")
    model = CdtModel.load(checkpoint)
    prepared = _load_cohort_sequence(model.schema, cohort_path, patient_id)
    prepared.goal_bin = goal_bin
    payload = model.capture_attention(prepared)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(payload, f)
        click.echo(f"wrote attention for {len(payload['token_labels'])} "
                   f"tokens to {out_path}")
    else:
        _echo_json(payload)


@cdt.command("embed-export")
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--cohort", "cohort_path",
              type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              required=True, help="CSV output path.")
def cdt_embed_export(checkpoint, cohort_path, out_path):
    """Export per-admission representations for the whole cohort."""
    model = CdtModel.load(checkpoint)
    cohort = import_dataset(cohort_path)
    baselines = {p.pid: p.baseline for p in cohort}
    prepared = [emb.prepare_subsequence(s, baselines, model.schema)
                for s in split_cohort_subsequences(cohort)]
    model.export_admission_embeddings(prepared, out_path)
    click.echo(f"wrote embeddings for {len(prepared)} subsequences "
               f"to {out_path}")


# ---------------------------------------------------------------------------
# eval: counterfactual evaluators


@click.group(name="eval")
def eval_cli():
    """Counterfactual treatment-effect evaluators."""


_FACTORIES = {"crn-e": ev.crn_e_config, "t-grl": ev.t_grl_config,
              "t-dc": ev.t_dc_config}


@eval_cli.command("train")
@click.option("--model", "model_name",
              type=click.Choice(sorted(_FACTORIES)), required=True)
@config_option
@seed_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              required=True)
@click.option("--verbose/--quiet", default=True)
def eval_train(model_name, config_path, seed, out_dir, verbose):
    """Train one evaluator candidate on the generated cohort."""
    config = _load_config(config_path, seed)
    data = _materialize(config)
    overrides = {"seed": config.seed,
                 **config.evaluator_overrides.get(model_name, {})}
    model = ev.Evaluator(data.schema, _FACTORIES[model_name](**overrides))
    log = model.train(data.prepared["train"], data.prepared["valid"],
                      verbose=verbose)
    model.save(out_dir)
    with open(pathlib.Path(out_dir) / "train_log.json", "w",
              encoding="utf-8") as f:
        json.dump(log, f, indent=2)
    click.echo(f"saved {model_name} to {out_dir}")


@eval_cli.command("select")
@click.option("--run", "run_dir", type=click.Path(exists=True,
              file_okay=False), required=True,
              help="Directory holding evaluator-<name> checkpoints.")
@config_option
@seed_option
def eval_select(run_dir, config_path, seed):
    """Rank the trained candidates by held-out factual MSE."""
    config = _load_config(config_path, seed)
    data = _materialize(config)
    run = pathlib.Path(run_dir)
    candidates = []
    for name in sorted(_FACTORIES):
        path = run / f"evaluator-{name}"
        if path.is_dir():
            candidates.append((name, ev.Evaluator.load(path)))
    if not candidates:
        raise click.ClickException(f"no evaluator-* checkpoints in {run_dir}")
    selected, _, table = ev.select_evaluator(candidates,
                                             data.prepared["test"])
    with open(run / "selection.json", "w", encoding="utf-8") as f:
        json.dump({"selected": selected, "table": table}, f, indent=2)
    _echo_json({"selected": selected, "table": table})


@eval_cli.command("effects")
@click.option("--run", "run_dir", type=click.Path(exists=True,
              file_okay=False), required=True,
              help="Pipeline run directory with cdt/, bc/, evaluator-*/.")
@config_option
@seed_option
def eval_effects(run_dir, config_path, seed):
    """Estimate treatment effects on the test split under every regime."""
    config = _load_config(config_path, seed)
    data = _materialize(config)
    run = pathlib.Path(run_dir)
    cdt_model = CdtModel.load(run / "cdt")
    bc_model = ev.BcModel.load(run / "bc")
    with open(run / "selection.json", encoding="utf-8") as f:
        selected = json.load(f)["selected"]
    evaluator = ev.Evaluator.load(run / f"evaluator-{selected}")
    truth = {p.pid: p.truth for p in data.cohort}
    report = ev.estimate_effects(cdt_model, bc_model, evaluator,
                                 data.prepared["test"], truth=truth,
                                 dynamics=data.cohort_config.dynamics)
    report.to_csv(run / "effects.csv")
    report.to_json(run / "effects_summary.json")
    _echo_json(report.summary)


# ---------------------------------------------------------------------------
# cdt-lab: pipeline and service


@click.group(name="cdt-lab")
def cdt_lab():
    """Full experiment pipeline and HTTP service."""


@cdt_lab.command("run")
@config_option
@seed_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default=None, help="Run directory (default: timestamped).")
@click.option("--verbose/--quiet", default=True)
def cdt_lab_run(config_path, seed, out_dir, verbose):
    """Execute every pipeline stage and write the artifact manifest."""
    config = _load_config(config_path, seed)
    try:
        result = run_full_pipeline(config, out_dir=out_dir, verbose=verbose)
    except PipelineError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(f"completed stages: {', '.join(result.manifest['stages'])}")
    click.echo(f"artifacts in {result.out_dir}")


@cdt_lab.command("serve")
@click.option("--checkpoint", "run_dir", type=click.Path(exists=True,
              file_okay=False), required=True,
              help="Pipeline run directory to mount.")
@click.option("--cohort", "cohort_path",
              type=click.Path(exists=True, dir_okay=False), required=True,
              help="Dataset JSONL browsable through /v1/patients.")
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def cdt_lab_serve(run_dir, cohort_path, port, host):
    """Serve /v1/* over the mounted checkpoint and cohort."""
    import uvicorn

    from .service import ModelRegistry, create_app
    registry = ModelRegistry()
    registry.load(run_dir, cohort_path)
    uvicorn.run(create_app(registry), host=host, port=port)
