"""Command-line entry points: one subcommand per platform operation."""

from __future__ import annotations

import dataclasses
import json
import sys

import click

from .core import Speaker
from .dm import StarThresholds
from .episodelog import EpisodeLog, read_episodes
from .orchestrator import LifelongRun, RoundPlan
from .pipeline import (
    STREAM_SPECS,
    QualityFilterConfig,
    build_eval_sets,
    corpus_texts,
    curve_csv,
    dataset_stats,
    eval_episode_ids,
    extract_pairs,
    filter_by_quality,
    learning_curve,
    sweep_quality_threshold,
)
from .pool import VariantFactors
from .safety import Blocklist
from .scoring import (
    CandidateBank,
    PolyLiteConfig,
    PolyLiteModel,
    evaluate_hits,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .service import ServiceConfig, build_runtime, load_config, packaged_blocklist_path
from .service import serve as serve_app
from .service.loopback import run_protocol_sim_players
from .simulate import SimPlayerPolicy, run_sim_players
from .text import build_vocab, expression_ratios
from .worldgen import WorldSpec, build_world, seed_story_episodes


def _episodes(path: str):
    try:
        return read_episodes(path)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc))


def _write(out: str | None, text: str) -> None:
    if out is None or out == "-":
        click.echo(text, nl=not text.endswith("\n"))
    else:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


def _complete(episodes):
    return [ep for ep in episodes if ep.complete]


def _pairs_from(episodes, target_author=Speaker.HUMAN):
    return [p for ep in _complete(episodes) for p in extract_pairs(ep, target_author)]


model_options = [
    click.option("--embed-dim", default=64, show_default=True),
    click.option("--num-codes", default=5, show_default=True),
    click.option("--max-context-tokens", default=128, show_default=True),
    click.option("--lr", default=0.05, show_default=True),
    click.option("--batch-size", default=32, show_default=True),
    click.option("--history-negatives", default=4, show_default=True),
    click.option("--epochs", default=3, show_default=True),
]


def with_model_options(f):
    for opt in reversed(model_options):
        f = opt(f)
    return f


def _config_from(seed, **kw):
    return PolyLiteConfig(
        embed_dim=kw["embed_dim"],
        num_codes=kw["num_codes"],
        max_context_tokens=kw["max_context_tokens"],
        learning_rate=kw["lr"],
        batch_size=kw["batch_size"],
        history_negatives=kw["history_negatives"],
        epochs=kw["epochs"],
        seed=seed,
    )


def _bank_for(pairs):
    blocklist = Blocklist.load(packaged_blocklist_path())
    return CandidateBank.build((p.target for p in pairs), vet=blocklist.allows)


@click.group()
def main():
    """Role-playing dialogue game that retrains its own models in rounds."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=False)
def serve(config_path):
    """Run the gameplay service until interrupted."""
    config = load_config(config_path) if config_path else ServiceConfig()
    try:
        serve_app(config)
    except OSError as exc:  # busy port and friends
        raise click.ClickException(f"startup failed: {exc}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=False)
@click.option("--log", required=True, help="episode log to append to")
@click.option("--episodes", default=20, show_default=True)
@click.option("--quality", default=0.9, show_default=True)
@click.option("--continue-prob", default=0.6, show_default=True)
@click.option("--slope", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--wire/--direct", default=False, show_default=True,
              help="drive play through the message protocol")
def simulate(config_path, log, episodes, quality, continue_prob, slope, seed, wire):
    """Collect episodes from synthetic players."""
    config = load_config(config_path) if config_path else ServiceConfig()
    config = dataclasses.replace(config, episode_log=log)
    runtime, episode_log = build_runtime(config)
    policy = SimPlayerPolicy(
        quality_level=quality,
        base_continue_prob=continue_prob,
        engagement_slope=slope,
        seed=seed,
    )
    driver = run_protocol_sim_players if wire else run_sim_players
    try:
        stored = driver(runtime, episodes, policy, seed=seed)
    finally:
        episode_log.close()
    click.echo(f"stored {stored} episodes in {log}")


@main.command()
@click.option("--log", required=True, type=click.Path(exists=True))
@click.option("--out", default="-", show_default=True)
@click.option("--target-author", type=click.Choice(["human", "model"]), default="human",
              show_default=True)
def extract(log, out, target_author):
    """Turn complete episodes into (context, target) training pairs."""
    pairs = _pairs_from(_episodes(log), Speaker(target_author))
    text = "\n".join(json.dumps(p.to_record(), ensure_ascii=False) for p in pairs)
    _write(out, text + "\n" if text else "")
    click.echo(f"extracted {len(pairs)} pairs", err=True)


@main.command("filter")
@click.option("--log", required=True, type=click.Path(exists=True))
@click.option("--min-quality", "min_quality", default=0, show_default=True)
@click.option("--out", default="-", show_default=True)
def filter_cmd(log, min_quality, out):
    """Keep only complete episodes at or above a quality threshold."""
    episodes = _complete(_episodes(log))
    kept = filter_by_quality(episodes, QualityFilterConfig(C=min_quality, enabled=True))
    text = "\n".join(
        json.dumps(ep.to_record(), ensure_ascii=False, separators=(",", ":")) for ep in kept
    )
    _write(out, text + "\n" if text else "")
    click.echo(f"kept {len(kept)} of {len(episodes)} complete episodes", err=True)


@main.command("train")
@click.option("--log", required=True, type=click.Path(exists=True))
@click.option("--seed-log", type=click.Path(exists=True), required=False,
              help="additional seed-corpus episodes")
@click.option("--out", required=True, help="checkpoint path to write")
@click.option("--seed", default=0, show_default=True)
@with_model_options
def train_cmd(log, seed_log, out, seed, **model_kw):
    """Train a retrieval scorer from scratch on logged episodes."""
    episodes = _episodes(log) + (_episodes(seed_log) if seed_log else [])
    pairs = _pairs_from(episodes)
    if not pairs:
        raise click.ClickException("no training pairs in the given logs")
    config = _config_from(seed, **model_kw)
    model = PolyLiteModel.init(build_vocab(corpus_texts(pairs)), config)
    try:
        trained, trace = train(model, pairs)
    except RuntimeError as exc:
        raise click.ClickException(f"training diverged: {exc}")
    save_checkpoint(trained, out)
    click.echo(f"trained on {len(pairs)} pairs; final loss {trace[-1]:.4f}; wrote {out}")


@main.command("eval")
@click.option("--log", required=True, type=click.Path(exists=True))
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="-", show_default=True)
def eval_cmd(log, ckpt, seed, out):
    """Hits@1/20 of a checkpoint against pairs from a log."""
    pairs = _pairs_from(_episodes(log))
    if not pairs:
        raise click.ClickException("no complete episodes to evaluate on")
    model = load_checkpoint(ckpt)
    report = evaluate_hits(model, pairs, _bank_for(pairs), seed)
    _write(out, json.dumps(dataclasses.asdict(report), sort_keys=True) + "\n")


@main.command()
@click.option("--log", required=True, type=click.Path(exists=True), help="wild episodes")
@click.option("--seed-log", required=True, type=click.Path(exists=True),
              help="seed-corpus episodes")
@click.option("--stream", type=click.Choice(list(STREAM_SPECS)), default="mix_50_50",
              show_default=True)
@click.option("--checkpoints", default="8,16,32", show_default=True,
              help="comma-separated pair counts to score at")
@click.option("--eval-min-quality", default=9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="-", show_default=True)
@with_model_options
def curve(log, seed_log, stream, checkpoints, eval_min_quality, seed, out, **model_kw):
    """Hits-versus-cost learning curve for one data stream."""
    wild_eps = _episodes(log)
    seed_pairs = _pairs_from(_episodes(seed_log))
    try:
        marks = tuple(int(x) for x in checkpoints.split(",") if x.strip())
    except ValueError:
        raise click.ClickException(f"bad --checkpoints {checkpoints!r}")
    try:
        val_pairs, _ = build_eval_sets(wild_eps, min_quality=eval_min_quality)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    held_out = eval_episode_ids(val_pairs)
    wild_pairs = [
        p
        for ep in _complete(wild_eps)
        if ep.episode_id not in held_out
        for p in extract_pairs(ep)
    ]
    config = _config_from(seed, **model_kw)
    bank = _bank_for(seed_pairs + wild_pairs)
    try:
        points = learning_curve(
            stream, seed_pairs, wild_pairs, val_pairs, bank, marks, config, eval_seed=seed
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    _write(out, curve_csv(points))


@main.command()
@click.option("--log", required=True, type=click.Path(exists=True))
@click.option("--out", default="-", show_default=True)
def stats(log, out):
    """One-row CSV of corpus statistics for a log."""
    episodes = _episodes(log)
    if not episodes:
        raise click.ClickException("empty log")
    record = dataset_stats(episodes).to_record()
    header = ",".join(record)
    row = ",".join(str(v) for v in record.values())
    _write(out, f"{header}\n{row}\n")


@main.command()
@click.option("--log", required=True, type=click.Path(exists=True),
              help="corpus A episodes (e.g. wild)")
@click.option("--baseline", required=True, type=click.Path(exists=True),
              help="corpus B episodes (e.g. seed)")
@click.option("--speaker", type=click.Choice(["human", "model", "both"]), default="human",
              show_default=True)
@click.option("--min-count", default=20, show_default=True)
@click.option("--top-k", default=70, show_default=True)
@click.option("--direction", type=click.Choice(["over", "under"]), default="over",
              show_default=True)
@click.option("--out", default="-", show_default=True)
def analyze(log, baseline, speaker, min_count, top_k, direction, out):
    """Words overexpressed in one corpus relative to another."""

    def texts(path):
        keep = {"human": (Speaker.HUMAN,), "model": (Speaker.MODEL,)}.get(
            speaker, (Speaker.HUMAN, Speaker.MODEL)
        )
        return [t.text for ep in _episodes(path) for t in ep.turns if t.speaker in keep]

    corpus_a, corpus_b = texts(log), texts(baseline)
    if not corpus_a or not corpus_b:
        raise click.ClickException("both logs need utterances from the chosen speaker")
    report = expression_ratios(corpus_a, corpus_b, min_count, top_k, direction)
    _write(out, report.to_csv())


@main.command()
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--sim/--no-sim", default=True, show_default=True,
              help="simulated players (the only player source available here)")
@click.option("--workdir", required=False, help="override the plan's workdir")
@click.option("--seed", default=0, show_default=True)
def rounds(plan_path, sim, workdir, seed):
    """Run the full deploy-collect-retrain loop from a JSON plan."""
    if not sim:
        raise click.ClickException("live players need the serve command; use --sim here")
    with open(plan_path, encoding="utf-8") as f:
        plan_doc = json.load(f)
    try:
        run, plans, policy = _lifelong_from_plan(plan_doc, workdir, seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise click.ClickException(f"bad plan: {exc}")

    def source(runtime, n):
        run_sim_players(runtime, n, policy, seed=seed)

    run.bootstrap(plans[0])
    for plan in plans:
        report = run.run_round(plan, source)
        click.echo(
            f"round {report.round_id}: {report.episodes_collected} episodes, "
            f"{report.pairs_extracted} pairs -> {report.report_path}"
        )
    run.close()


def _lifelong_from_plan(doc: dict, workdir: str | None, seed: int):
    world = doc.get("world", {})
    catalog = build_world(
        WorldSpec(
            num_characters=world.get("num_characters", 24),
            num_locations=world.get("num_locations", 8),
            seed=world.get("seed", 0),
        )
    )
    coverage = doc.get("seed_coverage", 1.0)
    covered = None
    if coverage < 1.0:
        n = max(2, int(len(catalog.characters) * coverage))
        covered = [c.id for c in catalog.characters[:n]]
    seed_eps = seed_story_episodes(
        catalog,
        doc.get("seed_episodes", 40),
        seed=doc.get("seed_corpus_seed", 0),
        covered_character_ids=covered,
    )
    ev = doc.get("eval", {})
    train_cfg = PolyLiteConfig(**doc.get("train", {}))
    run = LifelongRun(
        workdir or doc["workdir"],
        catalog,
        seed_eps,
        blocklist=Blocklist.load(packaged_blocklist_path()),
        thresholds=StarThresholds(proportional_mode=True),
        seed_eval_fraction=ev.get("seed_fraction", 0.2),
        eval_min_quality=ev.get("min_quality", 9),
        min_eval_episodes=ev.get("min_episodes", 4),
    )
    plans = []
    for spec in doc["rounds"]:
        factors = tuple(
            VariantFactors(**cell) for cell in spec.get("factors", [{"train_data": "seed+wild"}])
        )
        qf = spec.get("quality_filter", {})
        plans.append(
            RoundPlan(
                round_id=spec["round_id"],
                target_episode_count=spec["target_episodes"],
                factors=factors,
                train_config=train_cfg,
                quality_filter=QualityFilterConfig(
                    C=qf.get("C", 0), enabled=qf.get("enabled", False)
                ),
                seed=spec.get("seed", seed),
            )
        )
    sim = doc.get("sim", {})
    policy = SimPlayerPolicy(
        quality_level=sim.get("quality_level", 0.9),
        base_continue_prob=sim.get("base_continue_prob", 0.6),
        engagement_slope=sim.get("engagement_slope", 0.0),
        seed=sim.get("seed", 0),
    )
    return run, plans, policy


@main.command("sweep-c")
@click.option("--log", required=True, type=click.Path(exists=True), help="wild episodes")
@click.option("--seed-log", type=click.Path(exists=True), required=False)
@click.option("--thresholds", default="0,6,9,12", show_default=True)
@click.option("--eval-min-quality", default=9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="-", show_default=True)
@with_model_options
def sweep_c(log, seed_log, thresholds, eval_min_quality, seed, out, **model_kw):
    """Find the quality threshold C that maximizes held-out hits."""
    wild_eps = _episodes(log)
    seed_pairs = _pairs_from(_episodes(seed_log)) if seed_log else []
    try:
        grid = tuple(int(x) for x in thresholds.split(",") if x.strip())
    except ValueError:
        raise click.ClickException(f"bad --thresholds {thresholds!r}")
    try:
        val_pairs, _ = build_eval_sets(wild_eps, min_quality=eval_min_quality)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    config = _config_from(seed, **model_kw)
    all_pairs = seed_pairs + _pairs_from(wild_eps)
    best, points = sweep_quality_threshold(
        wild_eps,
        val_pairs,
        _bank_for(all_pairs),
        config,
        thresholds=grid,
        seed_pairs=seed_pairs,
        exclude_episode_ids=eval_episode_ids(val_pairs),
        eval_seed=seed,
    )
    lines = ["C,num_pairs,hits_at_1_of_20"]
    for p in points:
        lines.append(f"{p.C},{p.num_pairs},{p.hits_at_1_of_20:.6f}")
    _write(out, "\n".join(lines) + "\n")
    click.echo(f"best C = {best}", err=True)


if __name__ == "__main__":
    main()
