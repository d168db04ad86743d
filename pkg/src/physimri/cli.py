"""Command-line front end.

Subcommands: ``simulate`` (synthesize one volume), ``pgs`` (gold-standard
segmentation), ``sweep`` (parameter sweep with volume extraction),
``evaluate`` (annealing-style report), ``losses`` (reference loss values
for serialized fields). Every subcommand is deterministic given its
inputs and seed; ``--threads`` never changes output bytes.

Exit codes: 0 success, 1 I/O failure, 2 validation error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from ._version import __version__
from .augment import (
    PRESETS,
    RngStream,
    iod_counterpart,
    load_range,
    normalize_physics_vector,
    range_to_dict,
    sample_params,
)
from .errors import PhysimriError, ValidationError
from .gold_standard import load_prior, pgs_segment
from .io import (
    load_labelmap,
    load_mpm,
    load_soft_segmentation,
    save_volume,
)
from .metrics import (
    RunRecord,
    annealing_report,
    dice,
    run_records_from_csv,
    run_records_to_csv,
    sweep_curve,
    sweep_to_csv,
)
from .nifti import read_nifti
from .sequences import MprageParams, SpgrParams, params_from_json, params_to_dict
from .simulate import SimOptions, simulate_volume
from .uncertainty import (
    aleatoric_segmentation_samples,
    attenuated_ce_loss,
    calibrated_volume_bounds,
    stratification_feature_loss,
    volumes_from_labelmaps,
)
from .volumes import CLASS_NAMES

EXIT_IO = 1
EXIT_VALIDATION = 2

_SEQ_CHOICES = click.Choice(["spgr", "mprage"])
_DTYPE_CHOICES = click.Choice(["float32", "float64"])


def _guarded(func):
    """Map exceptions to the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValidationError, PhysimriError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except FileNotFoundError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="physimri")
def main():
    """Physics-informed MR simulation and evaluation toolkit."""


def _threads_option(func):
    return click.option(
        "--threads",
        type=int,
        default=1,
        envvar="PHYSIMRI_THREADS",
        show_default=True,
        help="Worker threads (speed only; never changes output bytes).",
    )(func)


def _resolve_params(seq, tr, te, fa, ti, td, tau, gain, params_file):
    if params_file is not None:
        return params_from_json(Path(params_file).read_text())
    if seq is None:
        raise ValidationError("give --params, --preset/--range, or --seq with its timing flags")
    if seq == "spgr":
        if tr is None or te is None or fa is None:
            raise ValidationError("SPGR needs --tr, --te and --fa")
        return SpgrParams(tr, te, fa, gain)
    if ti is None:
        raise ValidationError("MPRAGE needs --ti (and optionally --td, --tau)")
    return MprageParams(ti, td, tau, gain)


@main.command()
@click.option("--mpm", "mpm_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--params", "params_file", type=click.Path(exists=True, dir_okay=False), help="Sequence parameter JSON file.")
@click.option("--seq", type=_SEQ_CHOICES, help="Sequence type for explicit parameter flags.")
@click.option("--tr", type=float, help="Repetition time, ms (SPGR).")
@click.option("--te", type=float, help="Echo time, ms (SPGR).")
@click.option("--fa", type=float, help="Flip angle, degrees (SPGR).")
@click.option("--ti", type=float, help="Inversion time, ms (MPRAGE).")
@click.option("--td", type=float, default=0.0, show_default=True, help="Delay time, ms (MPRAGE).")
@click.option("--tau", type=float, default=1000.0, show_default=True, help="Slice imaging time, ms (MPRAGE).")
@click.option("--gain", type=float, default=1.0, show_default=True)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Sample parameters from a named range.")
@click.option("--range", "range_file", type=click.Path(exists=True, dir_okay=False), help="Sample parameters from a JSON range file.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stream", type=int, default=0, show_default=True)
@click.option("--magnitude/--no-magnitude", default=True, show_default=True)
@click.option("--normalize", type=click.Choice(["none", "max", "percentile"]), default="none", show_default=True)
@click.option("--percentile", type=float, default=None)
@click.option("--invalid-value", type=float, default=0.0, show_default=True)
@click.option("--dtype", type=_DTYPE_CHOICES, default="float32", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="simulated.nii.gz", show_default=True)
@_threads_option
@_guarded
def simulate(
    mpm_path, params_file, seq, tr, te, fa, ti, td, tau, gain,
    preset, range_file, seed, stream, magnitude, normalize, percentile,
    invalid_value, dtype, out, threads,
):
    """Simulate one volume from a multi-parametric map."""
    mpm = load_mpm(mpm_path)
    physics = None
    rng_seed = None
    if preset is not None or range_file is not None:
        if preset is not None and range_file is not None:
            raise ValidationError("give either --preset or --range, not both")
        rng = RngStream(seed, stream)
        range_ = load_range(preset if preset is not None else range_file)
        params = sample_params(range_, rng)
        physics = normalize_physics_vector(params, iod_counterpart(range_)).tolist()
        rng_seed = seed
    else:
        params = _resolve_params(seq, tr, te, fa, ti, td, tau, gain, params_file)
    opts = SimOptions(
        magnitude=magnitude,
        normalize=None if normalize == "none" else normalize,
        percentile=percentile,
        invalid_voxel_value=invalid_value,
    )
    vol = simulate_volume(mpm, params, opts, threads=threads, rng_seed=rng_seed)
    save_volume(vol, out, dtype=dtype)
    record = vol.provenance.to_dict()
    record["output"] = str(out)
    record["invalid_voxels"] = mpm.n_invalid
    if physics is not None:
        record["physics_vector"] = physics
    click.echo(json.dumps(record, sort_keys=True))


@main.command()
@click.option("--mpm", "mpm_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--prior", "prior_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-soft", type=click.Path(dir_okay=False), default="pgs_soft.nii.gz", show_default=True)
@click.option("--out-labels", type=click.Path(dir_okay=False), default="pgs_labels.nii.gz", show_default=True)
@click.option("--dtype", type=_DTYPE_CHOICES, default="float32", show_default=True)
@_guarded
def pgs(mpm_path, prior_path, out_soft, out_labels, dtype):
    """Gold-standard soft segmentation and its argmax label map."""
    mpm = load_mpm(mpm_path)
    prior = load_prior(prior_path)
    soft = pgs_segment(mpm, prior)
    save_volume(soft, out_soft, dtype=dtype)
    labels = soft.argmax_labels()
    save_volume(labels, out_labels)
    summary = {
        "soft": str(out_soft),
        "labels": str(out_labels),
        "background_pd_threshold": prior.resolve_pd_threshold(mpm.pd),
        "class_voxels": {
            name: int(np.count_nonzero(labels.labels == i))
            for i, name in enumerate(CLASS_NAMES)
        },
    }
    click.echo(json.dumps(summary, sort_keys=True))


def _parse_fixed(values):
    fixed = {}
    for item in values:
        if "=" not in item:
            raise ValidationError(f"--fix expects name=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            fixed[key.strip()] = float(raw)
        except ValueError:
            raise ValidationError(f"--fix {item!r}: value is not a number")
    return fixed


def _grid_params(range_, param, n_points, points, fixed):
    names = range_.parameter_names()
    if param not in names:
        raise ValidationError(f"--param must be one of {names} for this range")
    unknown = set(fixed) - set(names)
    if unknown:
        raise ValidationError(f"--fix names {sorted(unknown)} not in {names}")
    if points:
        values = [float(v) for v in points.split(",")]
    else:
        lo, hi = range_.interval(param)
        values = np.linspace(lo, hi, n_points).tolist()
    settings = []
    for value in values:
        draw = {}
        for name in names:
            if name == param:
                draw[name] = value
            elif name in fixed:
                draw[name] = fixed[name]
            else:
                lo, hi = range_.interval(name)
                draw[name] = (lo + hi) / 2.0  # unfixed parameters sit at midpoint
        if range_.seq == "mprage":
            settings.append(
                MprageParams(draw["ti_ms"], range_.td_ms, range_.tau_ms, 1.0)
            )
        else:
            settings.append(
                SpgrParams(draw["tr_ms"], draw["te_ms"], draw["fa_deg"], 1.0)
            )
    return settings


def _in_iod(params, iod_range):
    for name in iod_range.parameter_names():
        lo, hi = iod_range.interval(name)
        if not lo <= getattr(params, name) <= hi:
            return False
    return True


@main.command()
@click.option("--mpm", "mpm_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(PRESETS)))
@click.option("--range", "range_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--param", default=None, help="Varied parameter (default: the range's first).")
@click.option("--n-points", type=int, default=10, show_default=True)
@click.option("--points", default=None, help="Explicit comma-separated parameter values.")
@click.option("--fix", "fixed", multiple=True, help="Fix another parameter, e.g. --fix te_ms=5.")
@click.option("--prior", "prior_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tissue", type=click.Choice(["csf", "gm", "wm"]), default="wm", show_default=True)
@click.option("--experiment", default="sweep", show_default=True)
@click.option("--logits", "logits_path", type=click.Path(exists=True, dir_okay=False), help="Logit field for aleatoric bounds.")
@click.option("--sigma", "sigma_path", type=click.Path(exists=True, dir_okay=False), help="Noise-scale field for aleatoric bounds.")
@click.option("--bound-samples", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stream", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="sweep_runs.csv", show_default=True)
@click.option("--curve", "curve_out", type=click.Path(dir_okay=False), default=None, help="Curve CSV path (default: <out stem>_curve.csv).")
@click.option("--order-by", type=click.Choice(["param", "consistency"]), default="param", show_default=True)
@click.option("--save-volumes", "volumes_dir", type=click.Path(file_okay=False), default=None, help="Also write each simulated point here.")
@_threads_option
@_guarded
def sweep(
    mpm_path, preset, range_file, param, n_points, points, fixed, prior_path,
    tissue, experiment, logits_path, sigma_path, bound_samples, seed, stream,
    out, curve_out, order_by, volumes_dir, threads,
):
    """Simulate a parameter grid and extract per-point tissue volumes."""
    if (preset is None) == (range_file is None):
        raise ValidationError("give exactly one of --preset or --range")
    range_ = load_range(preset if preset is not None else range_file)
    param = param or range_.parameter_names()[0]
    mpm = load_mpm(mpm_path)
    prior = load_prior(prior_path)
    soft = pgs_segment(mpm, prior)
    labels = soft.argmax_labels()
    volumes = volumes_from_labelmaps([labels])
    vol_by_class = {
        name: float(volumes.class_volumes(name)[0]) for name in ("csf", "gm", "wm")
    }

    bounds = None
    if (logits_path is None) != (sigma_path is None):
        raise ValidationError("--logits and --sigma must be given together")
    if logits_path is not None:
        logits, _, _ = read_nifti(logits_path)
        sigma, _, _ = read_nifti(sigma_path)
        samples = aleatoric_segmentation_samples(
            np.asarray(logits, dtype=np.float64),
            np.asarray(sigma, dtype=np.float64),
            bound_samples,
            RngStream(seed, stream),
        )
        sample_set = volumes_from_labelmaps(samples)
        bounds = calibrated_volume_bounds(sample_set)[tissue]

    iod_range = iod_counterpart(range_)
    records = []
    for i, params in enumerate(_grid_params(range_, param, n_points, points, _parse_fixed(fixed))):
        sim = simulate_volume(mpm, params, threads=threads)
        if volumes_dir is not None:
            save_volume(sim, Path(volumes_dir) / f"point_{i:04d}.nii.gz")
        records.append(
            RunRecord(
                experiment=experiment,
                subject_id=mpm.subject_id or "subject",
                seq=range_.seq,
                dist="iod" if _in_iod(params, iod_range) else "ood",
                params=params,
                volumes_ml=vol_by_class,
                dice_scores={},
                lo_ml=None if bounds is None else bounds.lo_ml,
                hi_ml=None if bounds is None else bounds.hi_ml,
            )
        )
    run_records_to_csv(records, out)
    curve_path = curve_out or str(Path(out).with_suffix("")) + "_curve.csv"
    curve = sweep_curve(records, param, tissue=tissue, order_by=order_by)
    sweep_to_csv(curve, param, curve_path)
    click.echo(json.dumps({"runs": str(out), "curve": curve_path, "n_points": len(records)}, sort_keys=True))


@main.command()
@click.option("--runs", "runs_paths", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Run-record CSV (repeatable).")
@click.option("--labelmap-dir", type=click.Path(exists=True, file_okay=False), help="Directory of segmentation label maps to score.")
@click.option("--pgs", "pgs_path", type=click.Path(dir_okay=False), help="Gold-standard soft segmentation for Dice scoring.")
@click.option("--experiment", default="experiment", show_default=True)
@click.option("--subject", default="subject", show_default=True)
@click.option("--seq", type=_SEQ_CHOICES, default="mprage", show_default=True)
@click.option("--dist", type=click.Choice(["iod", "ood"]), default="iod", show_default=True)
@click.option("--alpha", type=float, default=0.01, show_default=True)
@click.option("--out-prefix", default="report", show_default=True)
@_guarded
def evaluate(runs_paths, labelmap_dir, pgs_path, experiment, subject, seq, dist, alpha, out_prefix):
    """Assemble annealing-style Dice/CoV tables with significance marks."""
    records = []
    for path in runs_paths:
        records.extend(run_records_from_csv(path))
    if labelmap_dir is not None:
        if pgs_path is None:
            raise ValidationError("Dice scoring against the gold standard needs --pgs")
        if not Path(pgs_path).exists():
            raise ValidationError(f"no such file: {pgs_path}")
        reference = load_soft_segmentation(pgs_path).argmax_labels()
        files = sorted(
            p for p in Path(labelmap_dir).iterdir()
            if p.name.endswith((".nii", ".nii.gz"))
        )
        if not files:
            raise ValidationError(f"{labelmap_dir}: no .nii[.gz] label maps found")
        for path in files:
            lm = load_labelmap(path)
            volumes = volumes_from_labelmaps([lm])
            records.append(
                RunRecord(
                    experiment=experiment,
                    subject_id=subject,
                    seq=seq,
                    dist=dist,
                    params=None,
                    volumes_ml={
                        name: float(volumes.class_volumes(name)[0])
                        for name in ("csf", "gm", "wm")
                    },
                    dice_scores={
                        "gm": dice(lm, reference, CLASS_NAMES.index("gm")).score,
                        "wm": dice(lm, reference, CLASS_NAMES.index("wm")).score,
                    },
                )
            )
    if not records:
        raise ValidationError("nothing to evaluate: give --runs and/or --labelmap-dir")
    report = annealing_report(records, alpha=alpha)
    csv_path = f"{out_prefix}.csv"
    json_path = f"{out_prefix}.json"
    report.write_csv(csv_path)
    report.write_json(json_path)
    click.echo(json.dumps({"csv": csv_path, "json": json_path}, sort_keys=True))


@main.command()
@click.option("--logits", "logits_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sigma", "sigma_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--target", "target_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--features", "features_paths", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Feature-map volume (repeat >= 2 times for the batch loss).")
@click.option("--passes", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stream", type=int, default=0, show_default=True)
@_guarded
def losses(logits_path, sigma_path, target_path, features_paths, passes, seed, stream):
    """Reference loss values for serialized fields (trainer test oracle)."""
    logits, _, _ = read_nifti(logits_path)
    sigma, _, _ = read_nifti(sigma_path)
    target, _, _ = read_nifti(target_path)
    loss, _ = attenuated_ce_loss(
        np.asarray(logits, dtype=np.float64),
        np.asarray(sigma, dtype=np.float64),
        np.asarray(target).astype(np.int64),
        passes,
        RngStream(seed, stream),
    )
    result = {"attenuated_ce": loss, "stratification_loss": None}
    if features_paths:
        maps = [np.asarray(read_nifti(p)[0], dtype=np.float64) for p in features_paths]
        result["stratification_loss"] = stratification_feature_loss(maps)
    click.echo(json.dumps(result, sort_keys=True))


if __name__ == "__main__":
    main()
