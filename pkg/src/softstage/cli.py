"""Command line entry points.

Subcommands: ``consensus`` (scorer reliability and consensus tables from a
label file), ``synth`` (write a synthetic cohort), ``experiment`` (run the
cross-validated arm comparison and render its report and figures), and
``plot`` (figures for one subject). Every run writes a flat key=value
manifest next to its outputs, settings resolve as flags over manifest over
defaults, and the SOFTSTAGE_SEED environment variable supplies the default
seed. Exit codes: 0 success, 1 usage, 2 bad input data, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .consensus import (
    format_consensus_csv,
    format_soft_consensus_csv,
    majority_vote,
    rank_scorers,
    soft_consensus,
)
from .errors import DataError, SoftstageError, ValidationError
from .fileio import atomic_write_text, fmt_float
from .harness import (
    ARM_LABELS,
    ExperimentConfig,
    emit_report,
    load_dataset,
    pooled_rows,
    run_experiment,
)
from .metrics import acs as acs_metric, aggregate
from .records import Hypnogram, drop_unclassified, parse_labels, write_features, write_labels
from .synthgen import (
    GeneratorSpec,
    calibrate_agreement,
    format_latent_csv,
    gen_cohort,
    mean_soft_agreement,
)
from .viz import HypnodensitySeries, emit_hypnodensity, emit_hypnogram, read_hypnodensity_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

SEED_ENV = "SOFTSTAGE_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _git_commit() -> str:
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=10
        )
    except OSError:
        return "unknown"
    return proc.stdout.strip() if proc.returncode == 0 else "unknown"


def parse_manifest(path) -> dict:
    items = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"manifest line without '=': {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def write_manifest(path, items: dict) -> None:
    lines = [f"{k}={v}" for k, v in items.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _bool_text(value: bool) -> str:
    return "true" if value else "false"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


class _Settings:
    """Flag > manifest > default resolution for one subcommand."""

    def __init__(self, args):
        self.args = args
        self.manifest = {}
        if getattr(args, "from_manifest", None):
            self.manifest = parse_manifest(args.from_manifest)

    def get(self, key, default, cast=str):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.manifest:
            text = self.manifest[key]
            if text == "":
                return default
            return cast(text)
        return default

    def seed(self, key="seed", default=0):
        value = self.get(key, None, int)
        if value is not None:
            return value
        env = os.environ.get(SEED_ENV)
        return int(env) if env else default

    def seeds(self, default="0"):
        text = self.get("seeds", None, str)
        if text is None:
            env = os.environ.get(SEED_ENV)
            text = env if env else default
        return tuple(int(s) for s in str(text).split(",") if s != "")


def _out_dir(settings: _Settings) -> Path:
    out = settings.get("out_dir", None, str)
    if out is None:
        raise ValidationError("an output directory is required (--out-dir)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _base_manifest(subcommand: str) -> dict:
    return {
        "subcommand": subcommand,
        "version": __version__,
        "commit": _git_commit(),
    }


# ---------------------------------------------------------------- consensus


def cmd_consensus(args) -> int:
    settings = _Settings(args)
    labels_path = settings.get("labels", None, str)
    if labels_path is None:
        raise ValidationError("a label table is required")
    out = _out_dir(settings)
    records = [drop_unclassified(r) for r in parse_labels(labels_path)]
    rankings = {r.subject_id: rank_scorers(r) for r in records}
    consensuses = [majority_vote(r, rankings[r.subject_id]) for r in records]
    soft = [soft_consensus(r) for r in records]

    atomic_write_text(out / "consensus.csv", format_consensus_csv(consensuses))
    atomic_write_text(out / "soft_consensus.csv", format_soft_consensus_csv(soft))

    lines = ["subject,scorer,soft_agreement"]
    by_scorer: dict = {}
    for record in records:
        for scorer_id, sa in rankings[record.subject_id].entries:
            by_scorer.setdefault(scorer_id, []).append(sa)
        ordered = sorted(rankings[record.subject_id].entries)
        for scorer_id, sa in ordered:
            lines.append(f"{record.subject_id},{scorer_id},{fmt_float(sa)}")
    for scorer_id in records[0].scorer_ids:
        lines.append(f"cohort,{scorer_id},{fmt_float(np.mean(by_scorer[scorer_id]))}")
    overall = float(np.mean([sa for vals in by_scorer.values() for sa in vals]))
    lines.append(f"cohort,all,{fmt_float(overall)}")
    atomic_write_text(out / "soft_agreement.csv", "\n".join(lines) + "\n")

    manifest = _base_manifest("consensus")
    manifest.update({"labels": str(labels_path), "out_dir": str(out)})
    write_manifest(out / "run_manifest.txt", manifest)
    print(f"consensus tables for {len(records)} subjects written to {out}")
    print(f"cohort mean soft-agreement: {overall:.4f}")
    return EXIT_OK


# -------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    settings = _Settings(args)
    out = _out_dir(settings)
    subjects = settings.get("subjects", 40, int)
    epochs = settings.get("epochs", 960, int)
    scorers = settings.get("scorers", 5, int)
    feature_dim = settings.get("feature_dim", 8, int)
    mean_scale = settings.get("mean_scale", 1.0, float)
    noise_scale = settings.get("noise_scale", 1.0, float)
    diagonal = settings.get("diagonal", None, float)
    target_sa = settings.get("target_sa", None, float)
    seed = settings.seed()
    if diagonal is not None and target_sa is not None:
        raise ValidationError("--diagonal and --target-sa are mutually exclusive")

    spec = GeneratorSpec.default(
        num_subjects=subjects,
        num_epochs=epochs,
        num_scorers=scorers,
        feature_dim=feature_dim,
        diagonal=diagonal if diagonal is not None else 0.8,
        mean_scale=mean_scale,
        noise_scale=noise_scale,
        seed=seed,
    )
    pilot_sa = None
    if target_sa is not None:
        spec = calibrate_agreement(target_sa, spec)
        pilot_sa = mean_soft_agreement(spec, 10)
    realized_diagonal = float(spec.scorer_confusions[0, 0, 0])

    cohort = gen_cohort(spec)
    write_labels([rec for _, rec, _ in cohort], out / "labels.csv")
    write_features([fm for _, _, fm in cohort], out / "features.csv")
    atomic_write_text(out / "latent.csv", format_latent_csv([lat for lat, _, _ in cohort]))

    manifest = _base_manifest("synth")
    manifest.update(
        {
            "out_dir": str(out),
            "subjects": str(subjects),
            "epochs": str(epochs),
            "scorers": str(scorers),
            "feature_dim": str(feature_dim),
            "mean_scale": fmt_float(mean_scale),
            "noise_scale": fmt_float(noise_scale),
            "diagonal": "" if diagonal is None else fmt_float(diagonal),
            "target_sa": "" if target_sa is None else fmt_float(target_sa),
            "seed": str(seed),
            "realized_diagonal": fmt_float(realized_diagonal),
            "pilot_soft_agreement": "" if pilot_sa is None else fmt_float(pilot_sa),
        }
    )
    write_manifest(out / "run_manifest.txt", manifest)
    print(f"cohort of {subjects} subjects x {epochs} epochs x {scorers} scorers written to {out}")
    if pilot_sa is not None:
        print(f"calibrated confusion diagonal {realized_diagonal:.4f}, pilot soft-agreement {pilot_sa:.4f}")
    return EXIT_OK


# --------------------------------------------------------------- experiment


def _experiment_config(settings: _Settings) -> ExperimentConfig:
    arms_text = settings.get("arms", "base,ls_u,ls_sc", str)
    arms = tuple(a.strip() for a in arms_text.split(",") if a.strip())
    alpha = settings.get("alpha", None, float)
    return ExperimentConfig(
        arms=arms,
        alpha=alpha,
        k=settings.get("k", 5, int),
        val_count=settings.get("val_count", 8, int),
        test_count=settings.get("test_count", 8, int),
        seeds=settings.seeds(),
        hidden_width=settings.get("hidden_width", 32, int),
        dropout_rate=settings.get("dropout_rate", 0.3, float),
        learning_rate=settings.get("learning_rate", 1e-3, float),
        batch_size=settings.get("batch_size", 128, int),
        max_iterations=settings.get("max_iterations", 100, int),
        patience=settings.get("patience", 10, int),
        context=settings.get("context", False, _parse_bool),
        mc_passes=settings.get("mc_passes", 0, int),
        num_bins=settings.get("num_bins", 10, int),
        plot_subjects=settings.get("plot_subjects", 2, int),
    )


def _experiment_figures(result, dataset, out: Path) -> None:
    cfg = result.config
    if cfg.plot_subjects <= 0:
        return
    fig_dir = out / "figures"
    sample_ids = sorted(
        {sid for arm in cfg.arms for sid in result.runs[arm][0].sample_probs}
    )
    for sid in sample_ids:
        data = dataset[sid]
        emit_hypnogram(Hypnogram(sid, "consensus", data.consensus), fig_dir / f"consensus_{sid}.svg")
        votes = HypnodensitySeries(sid, "scorer votes", data.sc)
        emit_hypnodensity(votes, fig_dir / f"votes_{sid}.svg")
        for arm in cfg.arms:
            probs = result.runs[arm][0].sample_probs.get(sid)
            if probs is None:
                continue
            series = HypnodensitySeries(sid, f"{ARM_LABELS[arm]} output", probs)
            emit_hypnodensity(
                series,
                fig_dir / f"model_{arm}_{sid}.svg",
                acs_value=acs_metric(data.sc, probs),
            )


def cmd_experiment(args) -> int:
    settings = _Settings(args)
    dataset_dir = settings.get("dataset", None, str)
    if dataset_dir is None:
        raise ValidationError("a dataset directory is required (--dataset)")
    out = _out_dir(settings)
    cfg = _experiment_config(settings)
    dataset = load_dataset(dataset_dir)
    result = run_experiment(dataset, cfg)

    failed = [arm for arm in cfg.arms if not any(run.rows for run in result.runs[arm])]
    if failed:
        for arm in failed:
            for run in result.runs[arm]:
                for err in run.errors:
                    print(f"{ARM_LABELS[arm]} seed {run.seed}: {err}", file=sys.stderr)
        raise SoftstageError(f"no fold finished for arms: {', '.join(failed)}")

    paths = emit_report(result, out)
    _experiment_figures(result, dataset, out)

    manifest = _base_manifest("experiment")
    manifest.update(
        {
            "dataset": str(dataset_dir),
            "out_dir": str(out),
            "arms": ",".join(cfg.arms),
            "alpha": "" if cfg.alpha is None else fmt_float(cfg.alpha),
            "k": str(cfg.k),
            "val_count": str(cfg.val_count),
            "test_count": str(cfg.test_count),
            "seeds": ",".join(str(s) for s in cfg.seeds),
            "hidden_width": str(cfg.hidden_width),
            "dropout_rate": fmt_float(cfg.dropout_rate),
            "learning_rate": fmt_float(cfg.learning_rate),
            "batch_size": str(cfg.batch_size),
            "max_iterations": str(cfg.max_iterations),
            "patience": str(cfg.patience),
            "context": _bool_text(cfg.context),
            "mc_passes": str(cfg.mc_passes),
            "num_bins": str(cfg.num_bins),
            "plot_subjects": str(cfg.plot_subjects),
        }
    )
    for arm in cfg.arms:
        if arm == "base":
            continue
        alphas = ";".join(
            "" if run.alpha is None else fmt_float(run.alpha) for run in result.runs[arm]
        )
        manifest[f"selected_alpha_{arm}"] = alphas
    write_manifest(out / "run_manifest.txt", manifest)

    summaries = {}
    for arm in cfg.arms:
        report = aggregate(pooled_rows(result, arm))
        summaries[arm] = report.mean
        m = report.mean
        print(
            f"{ARM_LABELS[arm]:12s} acc={m['accuracy']:.4f} mf1={m['macro_f1']:.4f} "
            f"kappa={m['kappa']:.4f} ece={m['ece']:.4f} conf={m['confidence']:.4f} "
            f"acs={m['acs']:.4f}"
        )
    if "base" in summaries:
        for arm in cfg.arms:
            if arm == "base":
                continue
            base_ece = summaries["base"]["ece"]
            arm_ece = summaries[arm]["ece"]
            print(
                f"ECE direction: base {base_ece:.4f} -> {ARM_LABELS[arm]} {arm_ece:.4f} "
                f"(delta {arm_ece - base_ece:+.4f})"
            )
            p = result.pvalues.get(("acs", "base", arm))
            if p is not None:
                print(f"paired ACS p-value, base vs {ARM_LABELS[arm]}: {p:.3g}")
    print(f"report written to {paths['report']}")
    return EXIT_OK


# --------------------------------------------------------------------- plot


def cmd_plot(args) -> int:
    settings = _Settings(args)
    labels_path = settings.get("labels", None, str)
    if labels_path is None:
        raise ValidationError("a label table is required (--labels)")
    out = _out_dir(settings)
    records = {r.subject_id: drop_unclassified(r) for r in parse_labels(labels_path)}
    subject = settings.get("subject", None, str)
    if subject is None:
        subject = next(iter(records))
    if subject not in records:
        raise ValidationError(f"subject {subject!r} not in {labels_path}")
    record = records[subject]
    ranking = rank_scorers(record)
    cons = majority_vote(record, ranking)
    sc = soft_consensus(record)

    emit_hypnogram(Hypnogram(subject, "consensus", cons.stages), out / f"consensus_{subject}.svg")
    emit_hypnodensity(
        HypnodensitySeries(subject, "scorer votes", sc.values), out / f"votes_{subject}.svg"
    )
    probs_path = settings.get("probs", None, str)
    if probs_path is not None:
        probs = read_hypnodensity_csv(probs_path)
        series = HypnodensitySeries(subject, "model output", probs)
        emit_hypnodensity(
            series, out / f"model_{subject}.svg", acs_value=acs_metric(sc.values, probs)
        )

    manifest = _base_manifest("plot")
    manifest.update(
        {
            "labels": str(labels_path),
            "subject": subject,
            "probs": "" if probs_path is None else str(probs_path),
            "out_dir": str(out),
        }
    )
    write_manifest(out / "run_manifest.txt", manifest)
    print(f"figures for {subject} written to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="softstage", description=__doc__)
    parser.add_argument("--version", action="version", version=f"softstage {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("consensus", help="consensus and reliability tables from a label file")
    p.add_argument("labels", nargs="?", help="label csv (subject,epoch,scorer columns)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--from-manifest", dest="from_manifest")
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("synth", help="generate a synthetic multi-scorer cohort")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--subjects", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scorers", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--mean-scale", dest="mean_scale", type=float)
    p.add_argument("--noise-scale", dest="noise_scale", type=float)
    p.add_argument("--diagonal", type=float, help="shared scorer confusion diagonal")
    p.add_argument("--target-sa", dest="target_sa", type=float, help="calibrate to this mean soft-agreement")
    p.add_argument("--seed", type=int)
    p.add_argument("--from-manifest", dest="from_manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("experiment", help="cross-validated arm comparison on a dataset directory")
    p.add_argument("--dataset", help="directory holding labels.csv and features.csv")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--arms", help="comma list from base,ls_u,ls_sc")
    p.add_argument("--alpha", type=float, help="fixed smoothing strength (default: grid search)")
    p.add_argument("--k", type=int)
    p.add_argument("--val-count", dest="val_count", type=int)
    p.add_argument("--test-count", dest="test_count", type=int)
    p.add_argument("--seeds", help="comma list of seeds")
    p.add_argument("--hidden-width", dest="hidden_width", type=int)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--context", action="store_const", const=True, help="use neighbour-epoch features")
    p.add_argument("--mc-passes", dest="mc_passes", type=int, help="extra MC-dropout evaluation")
    p.add_argument("--num-bins", dest="num_bins", type=int)
    p.add_argument("--plot-subjects", dest="plot_subjects", type=int)
    p.add_argument("--from-manifest", dest="from_manifest")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="hypnogram and hypnodensity figures for one subject")
    p.add_argument("--labels")
    p.add_argument("--subject")
    p.add_argument("--probs", help="hypnodensity data table to draw as model output")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--from-manifest", dest="from_manifest")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"softstage: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"softstage: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SoftstageError as exc:
        print(f"softstage: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"softstage: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
