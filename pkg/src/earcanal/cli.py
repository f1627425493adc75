"""Batch command-line interface.

Four subcommands cover the pipeline end to end:

* ``synth``       write a synthetic subject corpus (STL meshes, plant
                  JSONs, manifests) for a given seed;
* ``shape``       STL meshes -> slice-center tracks -> shape similarity
                  matrix CSV;
* ``acoustic``    plant JSONs or recorded WAV takes -> response features
                  -> acoustic similarity matrix CSV;
* ``correlate``   the two matrix CSVs -> per-subject regression report
                  (CSV, SVG plots, JSON summary).

Every command takes ``--config`` (JSON), ``--out`` (directory), and
``--seed``; each output directory receives the resolved config, and
reruns with identical config and seed are byte-identical.  Exit codes:
0 success, 1 computational failure, 2 input/config failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from earcanal.acoustics import (
    ImpulseResponse,
    acoustic_similarity_matrix,
    generate_mls,
    recover_impulse_response,
    response_feature,
    simulate_measurement,
)
from earcanal.analysis import SimilarityMatrix, emit_report
from earcanal.config import PipelineConfig
from earcanal.mesh import parse_stl, slice_centroids, triangle_centroids, write_binary_stl
from earcanal.shape import shape_center_fn, shape_similarity_matrix
from earcanal.synth import generate_canal_mesh, generate_plant, make_subject_family


class InputError(Exception):
    """Unusable input or configuration (exit code 2)."""


def _load_json(path: Path) -> dict:
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None


def _load_config(args) -> PipelineConfig:
    if args.config is not None:
        try:
            cfg = PipelineConfig.from_dict(_load_json(Path(args.config)))
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid config {args.config}: {exc}") from None
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg = PipelineConfig.from_dict({**{k: v for k, v in cfg.to_dict().items() if k != "schema"}, "seed": args.seed})
    return cfg


def _manifest_subjects(manifest_path: Path) -> dict:
    data = _load_json(manifest_path)
    subjects = data.get("subjects")
    if not isinstance(subjects, dict) or not subjects:
        raise InputError(f"{manifest_path}: manifest must map 'subjects' to a nonempty object")
    return subjects


def _read_wav(path: Path, expected_rate: int) -> np.ndarray:
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise InputError(f"cannot decode {path}: {exc}") from None
    if rate != expected_rate:
        raise InputError(f"{path}: expected {expected_rate} Hz, got {rate} Hz (no resampling)")
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype != np.int16:
        raise InputError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return data.astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray, sample_rate: int = 44100) -> None:
    """Store a float sequence as 16-bit PCM, scaled to 90% full scale."""
    peak = np.abs(samples).max()
    if peak == 0.0:
        raise ValueError("refusing to write an all-zero WAV")
    pcm = np.round(samples / peak * 0.9 * 32767.0).astype(np.int16)
    wavfile.write(path, sample_rate, pcm)


def _write_all(outputs: dict) -> None:
    # all-or-nothing: nothing touches disk until every value is computed
    for path, data in outputs.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)


def cmd_shape(args) -> int:
    cfg = _load_config(args)
    manifest_path = Path(args.manifest)
    subjects = _manifest_subjects(manifest_path)
    out = Path(args.out)

    tracks = []
    failures = []
    for sid, rel in subjects.items():
        stl_path = (manifest_path.parent / rel).resolve()
        if not stl_path.is_file():
            raise InputError(f"no such file: {stl_path} (subject {sid!r})")
        try:
            mesh = parse_stl(stl_path.read_bytes())
            slices = slice_centroids(triangle_centroids(mesh), cfg.delta_z)
            tracks.append((sid, shape_center_fn(slices, cfg.min_slice_points)))
        except ValueError as exc:
            failures.append(f"{sid}: {exc}")
    if failures:
        for line in failures:
            print(f"error: {line}", file=sys.stderr)
        return 1

    outputs = {}
    for sid, track in tracks:
        outputs[out / f"ec_{sid}.csv"] = track.to_csv()
        outputs[out / f"ec_{sid}.json"] = json.dumps(track.to_dict(), indent=2, sort_keys=True) + "\n"
    if len(tracks) >= 2:
        matrix = shape_similarity_matrix(tracks, cfg.theta_samples)
        outputs[out / "shape_similarity.csv"] = matrix.to_csv()
    else:
        print("warning: only one subject; similarity matrix skipped", file=sys.stderr)
    _write_all(outputs)
    cfg.dump(out / "config.json", command="shape")
    return 0


def _features_from_plant(sid, sidx, plant_spec: dict, cfg: PipelineConfig, excitation):
    if "taps" in plant_spec:
        plant = ImpulseResponse(np.asarray(plant_spec["taps"], dtype=np.float64), cfg.sample_rate, "raw")
    elif plant_spec.get("schema") == "plant/1":
        from earcanal.synth import PlantGenerator

        plant = generate_plant(PlantGenerator.from_dict(plant_spec), cfg.sample_rate)
    else:
        raise InputError(
            f"subject {sid!r}: plant JSON must hold either 'taps' or a 'plant/1' generator"
        )
    feats = []
    for take in range(cfg.takes):
        rng = np.random.default_rng([cfg.seed, sidx, take])
        rec = simulate_measurement(excitation, plant, cfg.repeats, cfg.noise_rms, rng)
        raw = recover_impulse_response(rec, excitation, cfg.repeats)
        feats.append((take, _feature(raw, cfg, sid, take)))
    return feats


def _feature(raw: ImpulseResponse, cfg: PipelineConfig, sid: str, take: int):
    return response_feature(
        raw,
        trim_threshold=cfg.trim_threshold,
        low_hz=cfg.band_low_hz,
        high_hz=cfg.band_high_hz,
        filter_order=cfg.filter_order,
        feature_length=cfg.feature_length,
        subject_id=sid,
        take_index=take,
    )


def cmd_acoustic(args) -> int:
    cfg = _load_config(args)
    manifest_path = Path(args.manifest)
    subjects = _manifest_subjects(manifest_path)
    out = Path(args.out)
    excitation = generate_mls(cfg.mls_order, cfg.sample_rate)

    all_feats = []
    for sidx, (sid, entry) in enumerate(subjects.items()):
        if isinstance(entry, dict) and "plant" in entry:
            spec = _load_json((manifest_path.parent / entry["plant"]).resolve())
            feats = _features_from_plant(sid, sidx, spec, cfg, excitation)
        elif isinstance(entry, dict) and "takes" in entry:
            feats = []
            for take, rel in enumerate(entry["takes"]):
                rec = _read_wav((manifest_path.parent / rel).resolve(), cfg.sample_rate)
                raw = recover_impulse_response(rec, excitation, cfg.repeats)
                feats.append((take, _feature(raw, cfg, sid, take)))
        else:
            raise InputError(
                f"subject {sid!r}: manifest entry needs a 'plant' path or a 'takes' list"
            )
        for take, feat in feats:
            all_feats.append((sid, take, feat))

    outputs = {}
    for sid, take, feat in all_feats:
        stem = f"feature_{sid}_{take:02d}"
        outputs[out / f"{stem}.f32"] = feat.samples.astype("<f4").tobytes()
        sidecar = {
            "schema": "acoustic_feature/1",
            "subject_id": sid,
            "take_index": take,
            "sample_rate": feat.sample_rate,
            "length": len(feat),
            "stages": ["raw", "trimmed", "min_phase", "bandpassed", "normalized"],
            "parameters": {
                "mls_order": cfg.mls_order,
                "repeats": cfg.repeats,
                "noise_rms": cfg.noise_rms,
                "trim_threshold": cfg.trim_threshold,
                "band_low_hz": cfg.band_low_hz,
                "band_high_hz": cfg.band_high_hz,
                "filter_order": cfg.filter_order,
                "feature_length": cfg.feature_length,
            },
        }
        outputs[out / f"{stem}.json"] = json.dumps(sidecar, indent=2, sort_keys=True) + "\n"

    if len({sid for sid, _, _ in all_feats}) >= 2:
        matrix = acoustic_similarity_matrix(all_feats, cfg.similarity_mode)
        outputs[out / "acoustic_similarity.csv"] = matrix.to_csv()
    else:
        print("warning: only one subject; similarity matrix skipped", file=sys.stderr)
    _write_all(outputs)
    cfg.dump(out / "config.json", command="acoustic")
    return 0


def cmd_correlate(args) -> int:
    cfg = _load_config(args)
    shape_path, acoustic_path = Path(args.shape), Path(args.acoustic)
    for p in (shape_path, acoustic_path):
        if not p.is_file():
            raise InputError(f"no such file: {p}")
    try:
        shape_m = SimilarityMatrix.from_csv(shape_path.read_text(), kind="shape")
        acoustic_m = SimilarityMatrix.from_csv(acoustic_path.read_text(), kind="acoustic")
    except ValueError as exc:
        raise InputError(f"cannot parse similarity CSV: {exc}") from None
    if set(shape_m.ids) != set(acoustic_m.ids):
        raise InputError(
            f"matrices cover different subjects: {sorted(shape_m.ids)} vs {sorted(acoustic_m.ids)}"
        )
    pair = None
    if args.pair is not None:
        parts = args.pair.split(",")
        if len(parts) != 2:
            raise InputError(f"--pair expects 'id_a,id_b', got {args.pair!r}")
        for p in parts:
            if p not in shape_m.ids:
                raise InputError(f"--pair names unknown subject {p!r}")
        pair = (parts[0], parts[1])
    out = Path(args.out)
    emit_report(shape_m, acoustic_m, out, designated_pair=pair, config=cfg.to_dict())
    cfg.dump(out / "config.json", command="correlate")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    levels = [args.perturbation]
    sweep = False
    if args.sweep is not None:
        try:
            levels = [float(p) for p in args.sweep.split(",")]
        except ValueError:
            raise InputError(f"--sweep expects comma-separated numbers, got {args.sweep!r}") from None
        if not levels:
            raise InputError("--sweep needs at least one perturbation level")
        sweep = True
    out = Path(args.out)

    for level in levels:
        corpus = out / f"perturbation_{level:g}" if sweep else out
        try:
            family = make_subject_family(cfg.seed, level)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        outputs = {}
        shape_subjects = {}
        acoustic_subjects = {}
        for spec in family:
            mesh = generate_canal_mesh(spec.canal)
            outputs[corpus / f"{spec.subject_id}.stl"] = write_binary_stl(mesh)
            outputs[corpus / f"{spec.subject_id}_plant.json"] = (
                json.dumps(spec.plant.to_dict(), indent=2, sort_keys=True) + "\n"
            )
            shape_subjects[spec.subject_id] = f"{spec.subject_id}.stl"
            acoustic_subjects[spec.subject_id] = {"plant": f"{spec.subject_id}_plant.json"}
        outputs[corpus / "shape_manifest.json"] = json.dumps(
            {"schema": "shape_manifest/1", "subjects": shape_subjects}, indent=2, sort_keys=True
        ) + "\n"
        outputs[corpus / "acoustic_manifest.json"] = json.dumps(
            {"schema": "acoustic_manifest/1", "subjects": acoustic_subjects}, indent=2, sort_keys=True
        ) + "\n"
        outputs[corpus / "family.json"] = json.dumps(family.to_dict(), indent=2, sort_keys=True) + "\n"
        _write_all(outputs)
        cfg.dump(corpus / "config.json", command="synth")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earcanal",
        description="Ear-canal geometry and acoustics similarity pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="pipeline config JSON (defaults are used when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (default: config value, 0)")

    p = sub.add_parser("shape", help="STL meshes to slice-center tracks and shape similarity")
    common(p)
    p.add_argument("--manifest", required=True,
                   help="JSON mapping subjects to STL paths (relative to the manifest)")
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("acoustic", help="plants or WAV takes to features and acoustic similarity")
    common(p)
    p.add_argument("--manifest", required=True,
                   help="JSON mapping subjects to {'plant': path} or {'takes': [wav, ...]}")
    p.set_defaults(func=cmd_acoustic)

    p = sub.add_parser("correlate", help="regress acoustic similarity on shape similarity")
    common(p)
    p.add_argument("--shape", required=True, help="shape similarity matrix CSV")
    p.add_argument("--acoustic", required=True, help="acoustic similarity matrix CSV")
    p.add_argument("--pair", default=None,
                   help="designated pair 'id_a,id_b' for overall-mean excess statistics")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("synth", help="generate a synthetic subject corpus")
    common(p)
    p.add_argument("--perturbation", type=float, default=0.02,
                   help="twin latent perturbation (default 0.02)")
    p.add_argument("--sweep", default=None,
                   help="comma-separated perturbation levels; writes one corpus per level")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
