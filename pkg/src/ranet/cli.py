"""Command-line entry point: ``ranet generate|train|evaluate|predict|ablate|inspect-graph``."""
from __future__ import annotations

import csv
import json
import logging
import os
import sys
from pathlib import Path

import click
import torch

from .candidate_map import build_candidate_map
from .config import (
    OUTPUT_ROOT_ENV,
    FULL_SCALE,
    SYNTHETIC_PRESET,
    ExperimentConfig,
    apply_overrides,
    load_config,
    save_config,
)
from .data import SyntheticSpec, collate, generate_splits, load_dataset
from .errors import RanetError
from .evaluation import build_report
from .relation_graph import build_adjacency

PRESETS = {"none": {}, "synthetic": SYNTHETIC_PRESET, "full": FULL_SCALE}


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _config(config: str | None, overrides: tuple[str, ...], preset: str) -> ExperimentConfig:
    preset_items = [f"{k}={v}" for k, v in PRESETS[preset].items()]
    return load_config(config, preset_items + list(overrides))


config_options = [
    click.option("--config", "-c", type=click.Path(exists=True, dir_okay=False), help="YAML or JSON config file."),
    click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override one config field."),
    click.option("--preset", type=click.Choice(sorted(PRESETS)), default="none", show_default=True,
                 help="Apply a named group of overrides before --set."),
]


def with_config(fn):
    for opt in reversed(config_options):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int):
    """Relation-aware temporal language grounding on snippet features."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@click.option("--out", type=click.Path(file_okay=False), help="Dataset root (default: $RANET_OUTPUT_ROOT/data).")
@click.option("--seed", default=0, show_default=True)
@click.option("--n-train", default=600, show_default=True)
@click.option("--n-val", default=200, show_default=True)
@click.option("--n-test", default=200, show_default=True)
@click.option("--t-raw", default=32, show_default=True)
@click.option("--c-in", default=32, show_default=True)
@click.option("--noise", default=0.05, show_default=True)
@click.option("--distractor-rate", default=0.7, show_default=True)
def generate(out, seed, n_train, n_val, n_test, t_raw, c_in, noise, distractor_rate):
    """Write train/val/test synthetic splits."""
    root = Path(out) if out else _output_root() / "data"
    spec = SyntheticSpec(T_raw=t_raw, C_in=c_in, noise_std=noise, distractor_rate=distractor_rate, seed=seed)
    sizes = {k: n for k, n in (("train", n_train), ("val", n_val), ("test", n_test)) if n > 0}
    paths = generate_splits(spec, root, sizes)
    for name, p in paths.items():
        click.echo(f"{name}\t{p}")


@main.command()
@with_config
def train(config, overrides, preset):
    """Train one model; writes log, checkpoint, parameter report and a loss plot."""
    from .plotting import plot_training_log
    from .train import train as run_train

    cfg = _config(config, overrides, preset)
    res = run_train(cfg)
    out = cfg.output_dir
    save_config(cfg, out / "config.yaml")
    with open(res.log_path) as fh:
        rows = list(csv.DictReader(fh))
    if rows:
        plot_training_log(rows, out / "train_log.png")
    click.echo(f"checkpoint\t{res.checkpoint}")
    click.echo(f"best_epoch\t{res.best_epoch}")
    click.echo(f"final_loss\t{res.final_loss:.6f}")
    click.echo(f"parameters\t{res.params['total']}")


@main.command()
@with_config
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False),
              help="Score an existing prediction dump instead of running a checkpoint.")
@click.option("--split", type=click.Path(exists=True), help="Manifest to evaluate (default: test_manifest).")
@click.option("--out", type=click.Path(file_okay=False))
def evaluate(config, overrides, preset, checkpoint, predictions, split, out):
    """Rank k@mu table and IoU sweep as CSV plus a sweep plot."""
    from .plotting import plot_sweep
    from .train import evaluate as run_evaluate
    from .train import read_prediction_dump

    if checkpoint and not config:
        # start from the configuration stored with the weights
        saved = torch.load(checkpoint, map_location="cpu", weights_only=False)["config"]
        cfg = apply_overrides(ExperimentConfig.from_dict(saved),
                              [f"{k}={v}" for k, v in PRESETS[preset].items()] + list(overrides))
    else:
        cfg = _config(config, overrides, preset)
    out_dir = Path(out) if out else cfg.output_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    if predictions:
        dataset = load_dataset(split or cfg.test_manifest, unk=cfg.unk_token or None)
        gts = {(s.record.video_id, s.record.query_id): s.record.gt_span for s in dataset}
        report = build_report(read_prediction_dump(predictions), gts, tuple(cfg.eval_ks), tuple(cfg.eval_mus))
        report.write_metrics_csv(out_dir / "metrics.csv")
        report.write_sweep_csv(out_dir / "sweep.csv")
    elif checkpoint:
        report = run_evaluate(cfg, checkpoint, split, out_dir)
    else:
        raise click.UsageError("need --checkpoint or --predictions")
    plot_sweep({"Rank1": report.iou_sweep}, out_dir / "sweep.png")
    for (k, mu), v in sorted(report.table.items()):
        click.echo(f"R{k}@{mu:.2f}\t{v:.2f}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--index", default=0, show_default=True, help="Sample index within the manifest.")
@click.option("-k", "top_k", default=5, show_default=True)
@click.option("--dump-attention", type=click.Path(dir_okay=False), help="Write R (candidates x tokens) as CSV.")
@click.option("--score-map", type=click.Path(dir_okay=False), help="Write the candidate score heatmap image.")
def predict(checkpoint, manifest, index, top_k, dump_attention, score_map):
    """Top-k spans for one sample, as one JSON line."""
    from .plotting import plot_score_map
    from .ranker import rank_choices
    from .train import load_checkpoint

    model, cfg, _ = load_checkpoint(checkpoint)
    dataset = load_dataset(manifest, unk=cfg.unk_token or None)
    if not 0 <= index < len(dataset):
        raise click.BadParameter(f"index {index} outside 0..{len(dataset) - 1}", param_hint="--index")
    sample = dataset[index]
    model.eval()
    with torch.no_grad():
        batch = collate([sample], model.cmap, (cfg.theta_min, cfg.theta_max))
        out = model(batch.feats, batch.feat_lengths, batch.ids, batch.id_lengths)
    scores = out.scores[0]
    preds = rank_choices(scores, model.cmap, sample.record.duration, top_k)
    click.echo(json.dumps({
        "video_id": sample.record.video_id,
        "query_id": sample.record.query_id,
        "query": sample.record.query_text,
        "predictions": [p.to_dict() for p in preds],
    }))
    if dump_attention:
        R = out.fusion.R
        if R is None:
            raise click.UsageError("this model has no token-aware branch, so there is no R to dump")
        tokens = sample.record.query_text.split()
        with open(dump_attention, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["candidate", "start", "end"] + tokens)
            for k, (i, j) in enumerate(model.cmap.pairs()):
                w.writerow([k, i, j] + [f"{x:.6g}" for x in R[0, k].tolist()])
    if score_map:
        plot_score_map(scores.numpy(), model.cmap, score_map)


@main.command()
@with_config
@click.option("--mode", type=click.Choice(["components", "psi"]), default="components", show_default=True)
@click.option("--out", type=click.Path(file_okay=False))
def ablate(config, overrides, preset, mode, out):
    """Train one model per ablation row; CSV table, bar chart and sweep overlay."""
    from .plotting import plot_ablation, plot_sweep
    from .train import ABLATION_ROWS, PSI_ROWS, run_ablation

    cfg = _config(config, overrides, preset)
    out_dir = Path(out) if out else cfg.output_dir / f"ablation-{mode}"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, ABLATION_ROWS if mode == "components" else PSI_ROWS, out_dir / "ablation.csv")
    names = [r.name for r in rows]
    keys = sorted(rows[0].report.table)
    plot_ablation(names, {f"R{k}@{mu:.1f}": [r.report.table[(k, mu)] for r in rows] for k, mu in keys},
                  out_dir / "ablation.png")
    plot_sweep({r.name: r.report.iou_sweep for r in rows}, out_dir / "sweep.png")
    with open(out_dir / "ablation.csv") as fh:
        click.echo(fh.read().rstrip())


@main.command("inspect-graph")
@click.option("-T", "T", default=16, show_default=True)
@click.option("--strategy", type=click.Choice(["dense", "sparse"]), default="dense", show_default=True)
@click.option("--out", type=click.Path(file_okay=False))
def inspect_graph(T, strategy, out):
    """Dump the candidate map, criss-cross adjacency and degree histogram."""
    cmap = build_candidate_map(T, strategy)
    adj = build_adjacency(cmap)
    out_dir = Path(out) if out else _output_root() / f"graph-T{T}-{strategy}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "candidate_map.json").write_text(cmap.to_json())
    (out_dir / "adjacency.json").write_text(json.dumps(adj.to_dict()))
    with open(out_dir / "degree_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "count"])
        w.writerows(adj.degree_histogram().items())
    click.echo(f"T\t{T}\nstrategy\t{strategy}\nN\t{cmap.N}\nedges\t{adj.edge_count}\nout\t{out_dir}")


def run() -> None:
    try:
        main(standalone_mode=True)
    except RanetError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    run()
