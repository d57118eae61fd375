"""Operator entry point.

Subcommands: gen-phantom (dataset synthesis), train, eval, infer,
gradcheck. A single canonical JSON config document drives everything;
unknown keys are rejected up front and the fully-resolved config is
materialized into the output directory so runs are self-describing.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. MIXVOX_LOG sets verbosity (debug|info|warning|error).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from .autodiff import Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .data.bundle import load_exam, save_exam, save_volume_payload
from .data.exam import GradeBinning, STRATA
from .data.normalize import normalize_exam
from .data.phantom import PhantomConfig, generate_dataset
from .errors import ConfigError, DataError, MixvoxError, NumericsError
from .losses import exam_targets, gates_from_experiment, total_objective
from .model import GradeNet, ModelConfig
from .training import TrainConfig, inference_rule_for, train
from .training.augment import AugmentConfig
from . import metrics as M

logger = logging.getLogger("mixvox")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


@dataclass
class EvalOptions:
    pirads_cutoffs: tuple = (4, 5)
    risk_threshold: float = 0.0


@dataclass
class RunConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    num_bins: int = 2


def _from_dict(cls, data, path="config"):
    """Build a dataclass tree from JSON, rejecting unknown keys."""
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object for {cls.__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        sub = f.type if isinstance(f.type, type) else None
        target = {
            "phantom": PhantomConfig, "model": ModelConfig, "train": TrainConfig,
            "eval": EvalOptions, "augment": AugmentConfig,
        }.get(key)
        if target is not None and isinstance(value, dict):
            kwargs[key] = _from_dict(target, value, f"{path}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON: {exc}") from exc
    cfg = _from_dict(RunConfig, raw)
    if cfg.model.num_bins != cfg.num_bins:
        raise ConfigError(
            f"model.num_bins={cfg.model.num_bins} != num_bins={cfg.num_bins}"
        )
    return cfg


def _materialize(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True, default=list) + "\n"
    )


def _setup_logging():
    level = os.environ.get("MIXVOX_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(exc: Exception, code: int):
    logger.error("%s", exc)
    sys.exit(code)


def _check_out_dir(out, force: bool):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output dir {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(data_dir: Path):
    root = Path(data_dir)
    listing = root / "dataset.json"
    if listing.is_file():
        names = json.loads(listing.read_text())["exams"]
        paths = [root / n for n in names]
    else:
        paths = sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())
    if not paths:
        raise DataError(f"no exam bundles under {root}")
    return [load_exam(p) for p in paths]


@click.group()
def main():
    """Mixed-supervision lesion risk and grade mapping."""
    _setup_logging()


@main.command("gen-phantom")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="RunConfig JSON; defaults apply when omitted.")
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--force", is_flag=True, help="Allow writing into a non-empty directory.")
def gen_phantom(config_path, count, seed, out_dir, force):
    """Generate a synthetic exam dataset of bundles plus a manifest."""
    try:
        cfg = load_run_config(config_path) if config_path else RunConfig()
        out = _check_out_dir(out_dir, force)
        _materialize(cfg, out)
        exams = generate_dataset(cfg.phantom, count, seed)
        strata = {label: 0 for label in STRATA}
        names = []
        for exam in exams:
            save_exam(exam, out / exam.exam_id)
            strata[exam.cohort_stratum] += 1
            names.append(exam.exam_id)
        (out / "dataset.json").write_text(json.dumps({
            "count": count, "seed": seed, "strata": strata, "exams": names,
        }, indent=2, sort_keys=True) + "\n")
        click.echo(f"wrote {count} bundles to {out} (strata: {strata})")
    except ConfigError as exc:
        _fail(exc, EXIT_USAGE)
    except DataError as exc:
        _fail(exc, EXIT_DATA)


def _validate_experiment(_ctx, _param, value):
    if value is None:
        return value
    try:
        gates_from_experiment(value)
    except ConfigError as exc:
        raise click.BadParameter(str(exc))
    return value


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--experiment", callback=_validate_experiment, default=None,
              help="4-bit id overriding the config (e.g. 1111).")
@click.option("--data", "data_dir", type=click.Path(), required=True,
              help="Dataset directory of exam bundles.")
@click.option("--val-fraction", type=float, default=0.2, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--force", is_flag=True)
def train_cmd(config_path, experiment, data_dir, val_fraction, out_dir, force):
    """Train a model; writes best/last checkpoints and a JSONL log."""
    try:
        cfg = load_run_config(config_path) if config_path else RunConfig()
        if experiment is not None:
            cfg.train.experiment_id = experiment
        out = _check_out_dir(out_dir, force)
        _materialize(cfg, out)
        exams = _load_dataset(data_dir)
        n_val = max(1, int(round(len(exams) * val_fraction)))
        if len(exams) <= n_val:
            raise DataError(f"dataset of {len(exams)} exams too small for validation")
        train_set, val_set = exams[:-n_val], exams[-n_val:]
        binning = GradeBinning.for_bins(cfg.num_bins)
        result = train(cfg.model, cfg.train, train_set, val_set,
                       binning=binning, out_dir=out)
        click.echo(
            f"best {result.best_metric_name}={result.best_metric:.4f} "
            f"at epoch {result.best_epoch}; checkpoints in {out}"
        )
    except ConfigError as exc:
        _fail(exc, EXIT_USAGE)
    except DataError as exc:
        _fail(exc, EXIT_DATA)
    except NumericsError as exc:
        _fail(exc, EXIT_NUMERIC)


def _predictions_for(net: GradeNet, exams, binning, rule):
    preds = []
    ious = []
    with no_grad():
        for exam in exams:
            risk, grade = net.forward(Tensor(exam.channels))
            ious.append(M.iou(M.binarize_risk(risk.data), exam.lesion_union_mask()))
            preds.extend(M.predict_exam_regions(
                grade.data, exam, binning, rule, region_bias=net.region_bias.data,
            ))
    return preds, float(np.mean(ious))


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--experiment", callback=_validate_experiment, default=None,
              help="Controls the inference rule; defaults to msb.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--force", is_flag=True)
def eval_cmd(ckpt_path, data_dir, experiment, out_dir, force):
    """Score a checkpoint on a dataset; writes metrics JSON and CSV."""
    try:
        out = _check_out_dir(out_dir, force)
        bundle = load_checkpoint(ckpt_path)
        binning = GradeBinning.for_bins(bundle.config.num_bins)
        rule = inference_rule_for(experiment) if experiment else M.RULE_MSB
        if rule is None:
            rule = M.RULE_MODE
        exams = [normalize_exam(e) for e in _load_dataset(data_dir)]
        preds, mean_iou = _predictions_for(bundle.net, exams, binning, rule)

        def maybe(fn, *args, **kwargs):
            try:
                return fn(*args, **kwargs).as_dict()
            except DataError as exc:
                logger.warning("%s skipped: %s", fn.__name__, exc)
                return None

        report = M.MetricsReport(
            experiment_id=experiment or "",
            rule=rule,
            iou_mean=mean_iou,
            lesion=maybe(M.lesion_accuracy, preds, binning),
            gland_via_lesions=maybe(M.gland_accuracy, preds, binning, via="lesions"),
            gland_via_regions=maybe(M.gland_accuracy, preds, binning, via="regions"),
            region=maybe(M.region_accuracy, preds, binning),
            pirads_ge4=maybe(M.pirads_baseline, preds, binning, 4),
            pirads_ge5=maybe(M.pirads_baseline, preds, binning, 5),
            num_exams=len(exams),
            num_lesions=sum(1 for p in preds if p.kind == 1),
        )
        report.to_json(out / "metrics.json")
        report.to_csv(out / "metrics.csv")
        click.echo(f"metrics written to {out}")
    except ConfigError as exc:
        _fail(exc, EXIT_USAGE)
    except DataError as exc:
        _fail(exc, EXIT_DATA)
    except NumericsError as exc:
        _fail(exc, EXIT_NUMERIC)


@main.command("infer")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--exam", "exam_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--force", is_flag=True)
def infer_cmd(ckpt_path, exam_dir, out_dir, force):
    """Run one exam through a checkpoint; writes maps and a region report."""
    try:
        out = _check_out_dir(out_dir, force)
        bundle = load_checkpoint(ckpt_path)
        binning = GradeBinning.for_bins(bundle.config.num_bins)
        exam = normalize_exam(load_exam(exam_dir))
        with no_grad():
            risk, grade = bundle.net.forward(Tensor(exam.channels))
        save_volume_payload(out / "risk_map.f32", risk.data[0])
        for k in range(grade.data.shape[0]):
            save_volume_payload(out / f"grade_bin{k}.f32", grade.data[k])
        mode_preds = M.predict_exam_regions(grade.data, exam, binning, M.RULE_MODE)
        msb_preds = M.predict_exam_regions(
            grade.data, exam, binning, M.RULE_MSB,
            region_bias=bundle.net.region_bias.data,
        )
        thr = binning.cs_bin_threshold
        regions = []
        for mp, sp in zip(mode_preds, msb_preds):
            regions.append({
                "region_id": mp.region_id,
                "kind": mp.kind,
                "histogram": [float(v) for v in mp.histogram],
                "mode_bin": mp.predicted_bin,
                "msb_bin": sp.predicted_bin,
                "scores": [float(v) for v in sp.scores],
            })
        lesion_bins = [r["msb_bin"] for r in regions if r["kind"] == 1]
        report = {
            "exam_id": exam.exam_id,
            "regions": regions,
            "gland": {
                "mode_bin": max((r["mode_bin"] for r in regions if r["kind"] == 1),
                                default=max(r["mode_bin"] for r in regions)),
                "msb_bin": max(lesion_bins, default=max(r["msb_bin"] for r in regions)),
                "cs_bin_threshold": thr,
            },
        }
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        click.echo(f"inference report written to {out}")
    except ConfigError as exc:
        _fail(exc, EXIT_USAGE)
    except DataError as exc:
        _fail(exc, EXIT_DATA)
    except NumericsError as exc:
        _fail(exc, EXIT_NUMERIC)


@main.command("gradcheck")
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--step", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=202, show_default=True)
@click.option("--max-entries", type=int, default=None,
              help="Per-parameter cap on probed entries (default: all).")
def gradcheck_cmd(tolerance, step, seed, max_entries):
    """Finite-difference audit of the full objective on a toy network."""
    from .verify import full_objective_grad_check

    try:
        report = full_objective_grad_check(seed=seed, step=step, tolerance=tolerance,
                                           max_entries=max_entries)
        click.echo(f"max relative error {report.max_rel_error:.3e} "
                   f"(tolerance {tolerance:g})")
        if not report.passed:
            for rep in report.failures:
                click.echo(f"  FAIL {rep.name}: {rep.max_rel_error:.3e}")
            sys.exit(EXIT_NUMERIC)
    except MixvoxError as exc:
        _fail(exc, EXIT_NUMERIC)


if __name__ == "__main__":
    main()
