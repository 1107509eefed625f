"""Command-line entry point.

Subcommands: parse, split, audit, mccv, cam, score, overlay, toy. Every
command is deterministic given its flags: all randomness flows from an
explicit ``--seed``/``--seeds``, outputs are ordered by record id or seed,
and each run writes its fully-resolved parameters to ``<out>.run.json``.

Exit codes: 0 success, 1 input or parse error, 2 leakage found by audit
(so CI can gate on clean splits). Errors go to stderr as one JSON object.
"""

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import annotations as ann
from . import cam as camlib
from . import imaging
from . import interpret
from . import manifest as mf
from . import toylab
from .errors import SplitproofError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_LEAK = 2


def worker_count() -> int:
    """Worker cap from SPLITPROOF_THREADS; defaults to 1 (sequential)."""
    raw = os.environ.get("SPLITPROOF_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError("SPLITPROOF_THREADS must be >= 1")
    return n


def _pmap(fn, items):
    """Map preserving item order; threads only when the env cap allows."""
    items = list(items)
    workers = min(worker_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fail(message: str, **extra) -> int:
    payload = {"error": message}
    payload.update(extra)
    print(json.dumps(payload), file=sys.stderr)
    return EXIT_ERROR


def _write_run_config(out_path, command: str, params: dict) -> None:
    resolved = {"command": command}
    resolved.update({k: v for k, v in sorted(params.items())})
    with open(str(out_path) + ".run.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, default=str)
        fh.write("\n")


def _parse_fractions(text: str):
    parts = [p for p in text.split(",") if p != ""]
    return tuple(float(p) for p in parts)


def _parse_counts(text: str) -> dict:
    # e.g. "Benign=969/410/136,Malignant=2940/1241/414"
    counts = {}
    for clause in text.split(","):
        name, _, sizes = clause.partition("=")
        counts[ann.Label(name.strip())] = tuple(int(s) for s in sizes.split("/"))
    return counts


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    xml_dir = Path(args.xml_dir)
    if not xml_dir.is_dir():
        return _fail(f"not a directory: {xml_dir}")
    all_annotations = []
    n_scans = 0
    for path in sorted(xml_dir.glob("*.xml")):
        data = path.read_bytes()
        try:
            sessions = ann.parse_lidc_xml(data)
            scan_id = ann.scan_series_uid(data) or path.stem
        except SplitproofError as e:
            return _fail(str(e), file=str(path), kind=type(e).__name__)
        n_scans += 1
        grouped = ann.group_reads_into_nodules(
            sessions,
            args.match_tolerance,
            scan_id=scan_id,
            patient_id=path.stem,
        )
        all_annotations.extend(ann.filter_min_readers(grouped, args.min_readers))
    ann.write_annotations(all_annotations, args.out)
    _write_run_config(
        args.out,
        "parse",
        {
            "xml_dir": str(xml_dir),
            "out": str(args.out),
            "min_readers": args.min_readers,
            "match_tolerance": args.match_tolerance,
        },
    )
    by_label = {}
    for a in all_annotations:
        by_label[a.label.value] = by_label.get(a.label.value, 0) + 1
    print(
        json.dumps(
            {
                "scans": n_scans,
                "annotations": len(all_annotations),
                "by_label": dict(sorted(by_label.items())),
            }
        )
    )
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = mf.read_manifest(args.manifest)
    if args.counts is not None:
        if args.mode != "unfair":
            return _fail("counts mode is only defined for --mode unfair")
        assignment = mf.unfair_split_counts(manifest, _parse_counts(args.counts), args.seed)
    else:
        if args.fractions is None:
            return _fail("either --fractions or --counts is required")
        fractions = _parse_fractions(args.fractions)
        if args.mode == "fair":
            assignment = mf.fair_split(manifest, fractions, args.seed)
        else:
            assignment = mf.unfair_split(manifest, fractions, args.seed)
    mf.write_assignment(assignment, args.out)
    _write_run_config(
        args.out,
        "split",
        {
            "manifest": args.manifest,
            "mode": args.mode,
            "fractions": args.fractions,
            "counts": args.counts,
            "seed": args.seed,
            "out": str(args.out),
        },
    )
    sizes = {}
    for fold in assignment.fold_of.values():
        sizes[fold.value] = sizes.get(fold.value, 0) + 1
    print(json.dumps({"records": len(assignment.fold_of), "fold_sizes": dict(sorted(sizes.items()))}))
    return EXIT_OK


def cmd_audit(args) -> int:
    manifest = mf.read_manifest(args.manifest)
    assignment = mf.read_assignment(args.assignment)
    report = mf.leakage_audit(manifest, assignment)
    payload = mf.leakage_report_to_dict(report)
    if args.out:
        mf.write_leakage_report(report, args.out)
        _write_run_config(
            args.out,
            "audit",
            {"manifest": args.manifest, "assignment": args.assignment, "out": str(args.out)},
        )
    print(json.dumps(payload))
    return EXIT_OK if report.is_clean else EXIT_LEAK


def cmd_mccv(args) -> int:
    manifest = mf.read_manifest(args.manifest)
    patients = set(manifest.patients())
    test_patients = {p for p in args.test_patients.split(",") if p}
    unknown = test_patients - patients
    if unknown:
        return _fail(f"test patients not in manifest: {sorted(unknown)}")
    schedule = mf.mccv_schedule(patients, test_patients, args.fraction, args.epochs, args.seed)
    mf.write_schedule(schedule, args.out)
    _write_run_config(
        args.out,
        "mccv",
        {
            "manifest": args.manifest,
            "test_patients": sorted(test_patients),
            "fraction": args.fraction,
            "epochs": args.epochs,
            "seed": args.seed,
            "out": str(args.out),
        },
    )
    print(json.dumps({"epochs": args.epochs, "pool": len(patients - test_patients)}))
    return EXIT_OK


_VARIANTS = {
    "relu-sum": camlib.CamVariant.RELU_SUM,
    "mean": camlib.CamVariant.CHANNEL_MEAN,
    "max": camlib.CamVariant.CHANNEL_MAX,
}


def cmd_cam(args) -> int:
    features = camlib.FeatureStack(camlib.read_tensor(args.features))
    grads = camlib.GradientStack(camlib.read_tensor(args.grads))
    out_w = out_h = None
    if args.size:
        w_text, _, h_text = args.size.partition("x")
        out_w, out_h = int(w_text), int(h_text)
    heatmap = camlib.compute_heatmap(features, grads, _VARIANTS[args.variant], out_w, out_h)
    out = Path(args.out)
    if out.suffix.lower() == ".png":
        imaging.save_image(imaging.GrayImage(heatmap.data), out)
    else:
        camlib.write_tensor(heatmap.data, out)
    _write_run_config(
        args.out,
        "cam",
        {
            "features": args.features,
            "grads": args.grads,
            "variant": args.variant,
            "size": args.size,
            "out": str(args.out),
        },
    )
    print(json.dumps({"width": heatmap.width, "height": heatmap.height, "variant": args.variant}))
    return EXIT_OK


def _load_heatmap(path: Path) -> camlib.HeatMap:
    if path.suffix.lower() == ".png":
        return camlib.HeatMap(imaging.load_image(path).data)
    return camlib.HeatMap(np.asarray(camlib.read_tensor(path), dtype=np.float64))


def cmd_score(args) -> int:
    heatmap_dir = Path(args.heatmap_dir)
    mask_dir = Path(args.mask_dir)
    record_ids = []
    with open(args.pairing, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record_ids.append(json.loads(line)["record_id"])

    def load_item(record_id):
        try:
            heatmap_path = heatmap_dir / f"{record_id}.png"
            if not heatmap_path.exists():
                heatmap_path = heatmap_dir / f"{record_id}.ftnsr"
            heatmap = _load_heatmap(heatmap_path)
            mask = imaging.load_mask(mask_dir / f"{record_id}.png")
            return (record_id, args.model_tag, heatmap, mask)
        except (SplitproofError, OSError) as e:
            return (record_id, args.model_tag, e)

    items = _pmap(load_item, record_ids)
    scoreable = [item for item in items if len(item) == 4]
    report = interpret.score_batch(scoreable)
    rows = list(report.rows)
    for record_id, tag, error in (item for item in items if len(item) == 3):
        rows.append(interpret.ReportRow(record_id, tag, None, f"{type(error).__name__}: {error}"))
    rows.sort(key=lambda r: (r.record_id, r.model_tag))
    report = interpret.InterpretabilityReport(rows=tuple(rows), aggregates=report.aggregates)
    interpret.write_report(report, args.out, metadata={"variant": args.variant, "model_tag": args.model_tag})
    _write_run_config(
        args.out,
        "score",
        {
            "heatmap_dir": str(heatmap_dir),
            "mask_dir": str(mask_dir),
            "pairing": args.pairing,
            "model_tag": args.model_tag,
            "variant": args.variant,
            "out": str(args.out),
        },
    )
    n_err = sum(1 for r in rows if r.error)
    print(json.dumps({"rows": len(rows), "errored": n_err}))
    return EXIT_OK


def cmd_overlay(args) -> int:
    heatmap = _load_heatmap(Path(args.heatmap))
    base = imaging.load_image(args.image)
    rgb = imaging.overlay_colormap(imaging.GrayImage(heatmap.data), base, args.alpha)
    imaging.save_rgb(rgb, args.out)
    _write_run_config(
        args.out,
        "overlay",
        {"heatmap": args.heatmap, "image": args.image, "alpha": args.alpha, "out": str(args.out)},
    )
    print(json.dumps({"out": str(args.out)}))
    return EXIT_OK


def _export_cohort(config: toylab.ToyConfig, export_dir: Path) -> None:
    cohort = toylab.generate_cohort(config)
    n_challenge = toylab.challenge_patient_count(config)
    challenge_ids = {
        f"P{p:03d}" for p in range(config.n_patients - n_challenge, config.n_patients)
    }
    pool_idx = [i for i, pid in enumerate(cohort.patient_ids) if pid not in challenge_ids]
    challenge_idx = [i for i, pid in enumerate(cohort.patient_ids) if pid in challenge_ids]
    export_dir.mkdir(parents=True, exist_ok=True)
    for i, pid in enumerate(cohort.patient_ids):
        patient_dir = export_dir / pid
        patient_dir.mkdir(exist_ok=True)
        imaging.save_image(imaging.GrayImage(cohort.images[i]), patient_dir / f"img_{i:04d}.png")
        if cohort.labels[i]:
            imaging.save_mask(imaging.BinaryMask(cohort.lesion_masks[i]), patient_dir / f"mask_{i:04d}.png")
    mf.write_manifest(toylab._toy_manifest(cohort, pool_idx), export_dir / "manifest.jsonl")
    mf.write_manifest(toylab._toy_manifest(cohort, challenge_idx), export_dir / "challenge.jsonl")
    with open(export_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(toylab.config_to_dict(config), fh, indent=2)
        fh.write("\n")


def cmd_toy(args) -> int:
    bundle = toylab.load_defaults()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        # accept either a bare ToyConfig dict or a full bundle
        if "config" in loaded:
            bundle.update(loaded)
        else:
            bundle["config"] = loaded
    config = toylab.config_from_dict(bundle["config"])
    hyper = toylab.TrainHyper(**bundle["hyper"])
    fractions = tuple(bundle["fractions"])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(bundle["acceptance_seeds"])
    modes = {
        "fair": [toylab.ExperimentMode.FAIR],
        "unfair": [toylab.ExperimentMode.UNFAIR],
        "both": [toylab.ExperimentMode.FAIR, toylab.ExperimentMode.UNFAIR],
    }[args.mode]

    if args.export_dir:
        _export_cohort(dataclasses.replace(config, seed=seeds[0]), Path(args.export_dir))

    def run_one(pair):
        mode, seed = pair
        return toylab.run_experiment(dataclasses.replace(config, seed=seed), mode, fractions, hyper)

    results = _pmap(run_one, [(mode, seed) for mode in modes for seed in seeds])
    toylab.write_results_csv(results, args.out)
    _write_run_config(
        args.out,
        "toy",
        {
            "config": toylab.config_to_dict(config),
            "hyper": dataclasses.asdict(hyper),
            "fractions": list(fractions),
            "mode": args.mode,
            "seeds": seeds,
            "out": str(args.out),
            "export_dir": args.export_dir,
        },
    )

    summary = {"rows": len(results)}
    if args.mode == "both":
        thresholds = bundle["thresholds"]
        by = {(r.mode, r.seed): r for r in results}
        gap_ok = [
            by[(toylab.ExperimentMode.UNFAIR, s)].test_accuracy
            - by[(toylab.ExperimentMode.UNFAIR, s)].challenge_accuracy
            >= thresholds["unfair_min_gap"]
            for s in seeds
        ]
        fair_ok = [
            abs(
                by[(toylab.ExperimentMode.FAIR, s)].test_accuracy
                - by[(toylab.ExperimentMode.FAIR, s)].challenge_accuracy
            )
            <= thresholds["fair_max_gap"]
            for s in seeds
        ]
        ratio_ok = []
        for s in seeds:
            fair = by[(toylab.ExperimentMode.FAIR, s)]
            unfair = by[(toylab.ExperimentMode.UNFAIR, s)]
            ratio_ok.append(
                fair.mean_saliency_on_lesion / fair.mean_saliency_off_lesion
                > unfair.mean_saliency_on_lesion / unfair.mean_saliency_off_lesion
            )
        need = thresholds["min_passing_seeds"]
        summary["gates"] = {
            "unfair_gap": {"passed": sum(gap_ok), "of": len(seeds), "ok": sum(gap_ok) >= need},
            "fair_gap": {"passed": sum(fair_ok), "of": len(seeds), "ok": sum(fair_ok) >= need},
            "saliency_ratio": {"passed": sum(ratio_ok), "of": len(seeds), "ok": sum(ratio_ok) >= need},
        }
        summary["all_gates_ok"] = all(g["ok"] for g in summary["gates"].values())
    print(json.dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitproof", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="LIDC XML directory -> annotation JSONL")
    p.add_argument("--xml-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-readers", type=int, default=3)
    p.add_argument("--match-tolerance", type=float, default=ann.DEFAULT_MATCH_TOLERANCE_PX)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("split", help="generate a fair or unfair split assignment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["fair", "unfair"], required=True)
    p.add_argument("--fractions", help="train,validation,test e.g. 0.7,0.2,0.1")
    p.add_argument("--counts", help="exact sizes, e.g. Benign=969/410/136,Malignant=2940/1241/414")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("audit", help="audit an assignment for patient leakage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("mccv", help="per-epoch patient-level MCCV schedule")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-patients", required=True, help="comma-separated patient ids")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mccv)

    p = sub.add_parser("cam", help="heat map from exported feature/gradient tensors")
    p.add_argument("--features", required=True)
    p.add_argument("--grads", required=True)
    p.add_argument("--variant", choices=sorted(_VARIANTS), default="relu-sum")
    p.add_argument("--size", help="output WxH, e.g. 512x512 (default: feature map size)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("score", help="score heat maps against nodule masks")
    p.add_argument("--heatmap-dir", required=True)
    p.add_argument("--mask-dir", required=True)
    p.add_argument("--pairing", required=True, help="JSONL with a record_id per line")
    p.add_argument("--model-tag", default="model")
    p.add_argument("--variant", choices=sorted(_VARIANTS), default="relu-sum")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("overlay", help="blend a color-mapped heat map over an image")
    p.add_argument("--heatmap", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("toy", help="synthetic fair/unfair experiment sweep")
    p.add_argument("--config", help="ToyConfig JSON or a full bundle (default: packaged)")
    p.add_argument("--mode", choices=["fair", "unfair", "both"], default="both")
    p.add_argument("--seeds", help="comma-separated; default: frozen acceptance seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--export-dir", help="also write cohort PNGs + manifests here")
    p.set_defaults(func=cmd_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except SplitproofError as e:
        return _fail(str(e), kind=type(e).__name__)
    except (OSError, ValueError, KeyError) as e:
        return _fail(str(e), kind=type(e).__name__)


if __name__ == "__main__":
    sys.exit(main())
