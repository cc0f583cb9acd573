"""
Command-line driver
Subcommands: gen, train-asr, decode, label, train-conf, eval, ablate, report
"""

import functools
import logging
from pathlib import Path
from typing import Callable, Optional

import click
from pydantic import ValidationError

from .config.run_config import RunConfig, load_run_config
from .config.settings import get_settings
from .core.exceptions import ConfidenceLabError
from .models.data_models import BaselineStrategy, DecoderMask, Split
from .services import pipeline_orchestrator as pipeline
from .utils.logging_config import configure_logging

logger = logging.getLogger(__name__)


def _choice(enum_type) -> click.Choice:
    return click.Choice([member.value for member in enum_type], case_sensitive=False)


def _handle_errors(command: Callable) -> Callable:
    """Log library errors and turn them into a nonzero exit with a one-line message"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ConfidenceLabError, ValidationError) as e:
            logger.error(f"❌ {click.get_current_context().info_name} failed: {e}")
            raise click.ClickException(str(e)) from e

    return wrapper


def _run_config(ctx: click.Context, **overrides) -> RunConfig:
    base: RunConfig = ctx.obj["config"]
    return base.with_overrides(**overrides)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON run configuration; flags override its values.")
@click.option("--seed", type=int, default=None, help="Seed for every random choice in the run.")
@click.option("--fine-tune-recipe", is_flag=True, default=False, help="lr 5e-6, one confidence epoch, 10% dropout.")
@click.option("--log-level", default=None, help="Overrides CWL_LOG_LEVEL.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], seed: Optional[int], fine_tune_recipe: bool, log_level: Optional[str]):
    """Word-level confidence lab: synthetic corpus to calibrated confidence metrics"""
    settings = get_settings()
    configure_logging(log_level or settings.log_level, settings.log_json)
    try:
        config = load_run_config(config_path)
        if seed is not None:
            config = config.with_overrides(seed=seed, corpus=config.corpus.model_copy(update={"seed": seed}).model_dump())
    except ConfidenceLabError as e:
        raise click.ClickException(str(e)) from e
    if fine_tune_recipe:
        config = config.fine_tune_recipe()
    ctx.ensure_object(dict)
    ctx.obj["config"] = config


@cli.command("gen")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--n-utterances", type=int, default=None)
@click.option("--noise-sigma", type=float, default=None)
@click.option("--shift-noise-scale", type=float, default=None, help="Write an out-of-domain EVAL set with noise scaled by this factor.")
@click.option("--novel-word-fraction", type=float, default=0.2, show_default=True)
@click.pass_context
@_handle_errors
def gen(ctx, out, n_utterances, noise_sigma, shift_noise_scale, novel_word_fraction):
    """Generate a synthetic corpus manifest"""
    config = ctx.obj["config"]
    updates = {k: v for k, v in {"n_utterances": n_utterances, "noise_sigma": noise_sigma}.items() if v is not None}
    config = config.with_overrides(corpus=config.corpus.model_copy(update=updates).model_dump())
    utterances = pipeline.run_gen(config, out, shift_noise_scale, novel_word_fraction)
    click.echo(f"{len(utterances)} utterances -> {out}")


@cli.command("train-asr")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--model-preset", type=click.Choice(["tiny", "base"]), default=None)
@click.pass_context
@_handle_errors
def train_asr(ctx, manifest, out, epochs, lr, model_preset):
    """Train the toy ASR on the ASR_TRAIN split"""
    config = _run_config(ctx, asr_epochs=epochs, asr_lr=lr, model_preset=model_preset)
    result = pipeline.run_train_asr(manifest, config, out)
    click.echo(f"{len(result.losses)} steps, final loss {result.losses[-1]:.5f} -> {out}")


@cli.command("decode")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", type=click.Choice([s.value for s in Split] + ["ALL"], case_sensitive=False), default=Split.EVAL.value, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_handle_errors
def decode(checkpoint, manifest, split, out):
    """Greedy-decode one split into a decoded-record file"""
    chosen = None if split.upper() == "ALL" else Split(split.upper())
    records = pipeline.run_decode(checkpoint, manifest, chosen, out)
    click.echo(f"{len(records)} hypotheses -> {out}")


@cli.command("label")
@click.option("--decoded", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--baseline", type=_choice(BaselineStrategy), default=None, help="Softmax strategy for the stored word confidences.")
@click.pass_context
@_handle_errors
def label(ctx, decoded, manifest, out, baseline):
    """Align hypotheses with references and attach correctness labels"""
    config = _run_config(ctx, baseline=baseline.upper() if baseline else None)
    records = pipeline.run_label(decoded, manifest, out, config.baseline)
    click.echo(f"{len(records)} labeled hypotheses -> {out}")


@cli.command("train-conf")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True, help="ASR (LM-head) checkpoint.")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--mask", type=_choice(DecoderMask), default=None)
@click.option("--freeze-encoder/--train-encoder", default=None)
@click.option("--all-tokens", is_flag=True, default=False, help="Apply the loss on every hypothesis token, not only word-final ones.")
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.pass_context
@_handle_errors
def train_conf(ctx, checkpoint, labels, manifest, out, mask, freeze_encoder, all_tokens, epochs, lr):
    """Fine-tune the ASR into a confidence model"""
    config = _run_config(
        ctx,
        decoder_mask=mask.upper() if mask else None,
        freeze_encoder=freeze_encoder,
        loss_on_all_tokens=all_tokens or None,
        conf_epochs=epochs,
        lr=lr,
    )
    result = pipeline.run_train_conf(checkpoint, labels, manifest, config, out)
    click.echo(f"{len(result.losses)} steps, final loss {result.losses[-1]:.5f} -> {out}")


@cli.command("eval")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--source", required=True, help="SOFTMAX:<MIN|MEAN|SUM|PRODUCT|MAX> or CONF:<checkpoint>[:<LAST|MIN|MEAN|PRODUCT|MAX>]")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None, help="Needed for CONF sources.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--dataset", default=None, help="Dataset column name; defaults to the label file stem.")
@click.option("--n-bins", type=int, default=None)
@click.option("--calibration-fraction", type=float, default=None)
@click.pass_context
@_handle_errors
def eval_command(ctx, labels, source, manifest, out, dataset, n_bins, calibration_fraction):
    """Score labeled hypotheses and write an EvalReport"""
    config = _run_config(ctx, n_bins=n_bins, calibration_fraction=calibration_fraction)
    report = pipeline.run_eval(labels, source, config, out, manifest=manifest, dataset=dataset)
    click.echo(pipeline.eval_table(report), nl=False)


@cli.command("ablate")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True, help="ASR (LM-head) checkpoint.")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), required=True, help="Labeled records for training.")
@click.option("--eval-labels", type=click.Path(exists=True, dir_okay=False), default=None, help="Labeled records to evaluate; defaults to --labels.")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
@_handle_errors
def ablate(ctx, checkpoint, labels, eval_labels, manifest, out):
    """Train CAUSAL and NON_CAUSAL confidence models and compare them"""
    reports = pipeline.run_ablate(checkpoint, labels, manifest, ctx.obj["config"], out, eval_labeled=eval_labels)
    click.echo(pipeline.ablation_table(reports), nl=False)


@cli.command("report")
@click.argument("reports", nargs=-1, type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_handle_errors
def report(reports, out):
    """Render saved reports as a metric x model table with one column per dataset"""
    click.echo(pipeline.run_report([Path(p) for p in reports], out), nl=False)


def main() -> None:
    cli(obj={})


if __name__ == "__main__":
    main()
