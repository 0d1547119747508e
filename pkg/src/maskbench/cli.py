"""Command-line entry point.

Every command writes a JSON report (with the resolved configuration and toolkit
version), an aligned text table, and PNG figures into ``--out``. Options can also come
from a flat ``key = value`` file given with ``--config``; flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, report
from .detection import (
    COCO_THRESHOLDS,
    load_detections,
    load_ground_truth,
    mean_ap,
    parse_thresholds,
    pr_curve,
)
from .embedding import blockmean_embedder, read_embeddings, write_embeddings
from .errors import DataError, InputError, MaskbenchError, ValidationError
from .imaging import (
    FACE_SIZE,
    apply_region_mask,
    make_hybrid,
    occlude_lower_face,
    rescale_area,
    sample_periocular_mask,
)
from .losses import DEFAULT_MARGIN, LOSSES, grad_check, random_valid_sample
from .protocols import (
    EmbeddingSource,
    FaceLoader,
    checkpoint,
    frame_index,
    run_identification,
    run_verification,
    stable_seed,
)
from .raster import Manifest, ManifestEntry, load_manifest, read_image, save_manifest, write_image
from .recognition import ConditionMatrix, build_condition_matrix, read_fold_results, write_fold_results
from .reference import (
    DETECTION,
    IDENTIFICATION,
    IDENTIFICATION_DOMAINS,
    VERIFICATION_FULL_FACE,
    VERIFICATION_PERIOCULAR,
    discrepancies,
    quoted_deltas,
)
from .splits import SplitPlan, partition_counts, split_holdout, split_kfold
from .synthetic import write_corpus

log = logging.getLogger("maskbench")

PREPROCESS_OPS = ("rescale", "periocular", "occlude", "hybrid")


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys may use dashes or underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embed_source(args, manifest: Manifest) -> EmbeddingSource:
    loader = FaceLoader(manifest)
    if getattr(args, "embeddings", None):
        return EmbeddingSource(loader, table=read_embeddings(args.embeddings))
    return EmbeddingSource(loader, blockmean_embedder(args.grid, args.features))


def _emit_matrix(out: Path, name: str, matrix: ConditionMatrix, payload: dict, args, command: str):
    report.write_json(out / f"{name}.json", report.envelope({**payload, "matrix": matrix.to_dict()}, _config(args), command))
    report.write_text(out / f"{name}.txt", matrix.format())
    report.write_text(out / f"{name}.csv", report.matrix_csv(matrix))
    report.plot_condition_matrix(matrix, out / f"{name}.png")
    print(matrix.format())


# -- commands ---------------------------------------------------------------------------

def cmd_detect_eval(args) -> int:
    gts = load_ground_truth(args.gt)
    dets = load_detections(args.dets)
    thresholds = parse_thresholds(args.iou_thresholds)
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    res = mean_ap(dets, gts, thresholds, classes)
    out = _out(args)
    doc = res.to_dict()
    doc["ground_truth_boxes"] = len(gts)
    doc["detections"] = len(dets)
    report.write_json(out / "detect_eval.json", report.envelope(doc, _config(args), "detect-eval"))
    lines = [f"{'IoU':>6}  {'mAP':>8}  {'TP':>6} {'FP':>6} {'FN':>6}"]
    for t, v in res.per_threshold.items():
        c = res.counts[t]
        lines.append(f"{t:>6.2f}  {v:>8.4f}  {c.tp:>6} {c.fp:>6} {c.fn:>6}")
    lines.append(f"mAP={res.map:.4f}  mAP50={_fmt(res.map50)}  mAP75={_fmt(res.map75)}")
    lines += [f"class {c}: AP={v:.4f}" for c, v in res.per_class.items()]
    report.write_text(out / "detect_eval.txt", "\n".join(lines))
    t0 = 0.5 if res.map50 is not None else thresholds[0]
    report.plot_pr_curves(
        {f"class {c}": pr_curve(dets, gts, c, t0) for c in classes}, out / "pr_curves.png", f"IoU {t0:.2f}"
    )
    report.plot_map_by_threshold(res.per_threshold, out / "map_by_threshold.png")
    print("\n".join(lines))
    return 0


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    ops = _csv_list(args.ops)
    for op in ops:
        if op not in PREPROCESS_OPS:
            raise ValidationError(f"unknown op {op!r}; choose from {PREPROCESS_OPS}")
    out = _out(args)
    image_ops = [op for op in ops if op != "hybrid"]
    provenance = []
    entries = []
    processed = {}
    for e in manifest.entries:
        img = read_image(manifest.resolve(e))
        steps = []
        for op in image_ops:
            if op == "rescale":
                img = rescale_area(img, args.size, args.size)
                steps.append({"op": "rescale", "size": args.size})
            elif op == "periocular":
                s = stable_seed(args.seed, e.path)
                mask = sample_periocular_mask(s)
                img = apply_region_mask(img, mask)
                steps.append({"op": "periocular", "seed": s, "mask_bits": f"{mask.to_int():016x}"})
            elif op == "occlude":
                img = occlude_lower_face(img, args.fill)
                steps.append({"op": "occlude", "fill": args.fill})
        rel = str(Path(e.path).with_suffix(".png"))
        write_image(img, out / "images" / rel)
        processed[e.path] = img
        entries.append(ManifestEntry(f"images/{rel}", e.subject_id, e.spectrum, e.mask_state))
        provenance.append({"source": e.path, "output": f"images/{rel}", "seed": args.seed, "steps": steps})
    save_manifest(Manifest(tuple(entries), manifest.class_count), out / "manifest.csv")
    if "hybrid" in ops:
        rows = ["path,subject_id,mask_state,visual_path,thermal_path"]
        for (subject, k), fr in sorted(frame_index(manifest).items()):
            for state in ("unmasked", "masked"):
                vis = fr.get(("visual", state))
                th = fr.get(("thermal", "unmasked"))
                if vis is None:
                    continue
                if th is None:
                    raise DataError(f"no thermal capture paired with {vis.path} (subject {subject}, frame {k})")
                h = make_hybrid(processed[vis.path], processed[th.path])
                rel = f"hybrid/{state}/{subject}_{k:03d}.png"
                write_image(h, out / rel)
                rows.append(f"{rel},{subject},{state},{vis.path},{th.path}")
                provenance.append({"output": rel, "seed": args.seed, "steps": [{"op": "hybrid", "visual": vis.path, "thermal": th.path}]})
        report.write_text(out / "hybrid_manifest.csv", "\n".join(rows))
    with open(out / "provenance.jsonl", "w", encoding="utf-8") as fh:
        for rec in provenance:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    report.write_json(
        out / "preprocess.json",
        report.envelope({"images": len(entries), "ops": ops, "outputs": len(provenance)}, _config(args), "preprocess"),
    )
    print(f"wrote {len(provenance)} images to {out}")
    return 0


def _load_plans(args, manifest: Manifest, level: str) -> list[SplitPlan]:
    if getattr(args, "split", None):
        text = Path(args.split).read_text()
        doc = json.loads(text)
        items = doc if isinstance(doc, list) else [doc]
        return [SplitPlan.from_json(json.dumps(d)) for d in items]
    return split_kfold(manifest, args.folds, args.seed, level)


def cmd_verify(args) -> int:
    manifest = load_manifest(args.manifest)
    plans = _load_plans(args, manifest, args.level)
    embed = _embed_source(args, manifest)
    run = run_verification(manifest, plans, embed, args.seed, args.spectrum, max_pairs=args.max_pairs)
    out = _out(args)
    payload = {
        "conditions": {"a": "no mask / no mask", "b": "mask / mask", "c": "no mask / mask"},
        "folds": len(plans),
        "thresholds": {f"fold{f}/{c}": t for (f, c), t in sorted(run.thresholds.items())},
    }
    report.write_text(out / "verify_folds.csv", write_fold_results(run.fold_results))
    _emit_matrix(out, "verify", run.matrix, payload, args, "verify")
    return 0


def cmd_identify(args) -> int:
    out = _out(args)
    if args.reference:
        deltas = [d.to_dict() for d in quoted_deltas()]
        payload = {"source": "reference tables", "deltas": deltas[2:4]}
        _emit_matrix(out, "identify", IDENTIFICATION, payload, args, "identify")
        for d in deltas[2:4]:
            print(f"{d['name']}: {d['delta']:.4f}")
        return 0
    if not args.manifest:
        raise ValidationError("identify needs --manifest (or --reference)")
    manifest = load_manifest(args.manifest)
    if args.embeddings:
        raise ValidationError("identify derives hybrid images, so it needs raw images; --embeddings is not supported")
    domains = _csv_list(args.domains)
    matrix, results = run_identification(
        manifest, blockmean_embedder(args.grid, args.features), domains, args.folds, args.seed
    )
    report.write_text(out / "identify_folds.csv", write_fold_results(results))
    _emit_matrix(out, "identify", matrix, {"domains": domains, "folds": args.folds}, args, "identify")
    return 0


def cmd_checkpoint(args) -> int:
    gallery = load_manifest(args.gallery)
    visual = read_image(args.visual)
    thermal_path = args.thermal
    decision = checkpoint(
        visual,
        args.masked,
        gallery,
        blockmean_embedder(args.grid, args.features),
        thermal=(lambda: read_image(thermal_path)) if thermal_path else None,
    )
    out = _out(args)
    doc = decision.to_dict()
    if decision.hybrid is not None:
        write_image(decision.hybrid, out / "hybrid.png")
        doc["hybrid_path"] = "hybrid.png"
    report.write_json(out / "checkpoint.json", report.envelope(doc, _config(args), "checkpoint"))
    report.write_text(out / "checkpoint.txt", "\n".join(decision.trace))
    print("\n".join(decision.trace))
    print(f"route={decision.route} identity={decision.identity}")
    return 0


def cmd_reference(args) -> int:
    out = _out(args)
    deltas = quoted_deltas()
    notes = discrepancies()
    doc = {
        "deltas": [d.to_dict() for d in deltas],
        "discrepancies": notes,
        "tables": {
            "verification_full_face": VERIFICATION_FULL_FACE.to_dict(),
            "verification_periocular": VERIFICATION_PERIOCULAR.to_dict(),
            "identification": IDENTIFICATION.to_dict(),
            "detection": {s: {b: dict(zip(("mAP", "mAP50", "mAP75"), v)) for b, v in rows.items()} for s, rows in DETECTION.items()},
        },
    }
    report.write_json(out / "reference.json", report.envelope(doc, _config(args), "reference"))
    lines = []
    for m in (VERIFICATION_FULL_FACE, VERIFICATION_PERIOCULAR, IDENTIFICATION):
        lines += [m.format(), ""]
    lines.append("Mask detector (Cascade R-CNN)")
    lines.append(f"{'spectrum':<9} {'backbone':<23} {'mAP':>6} {'mAP50':>6} {'mAP75':>6}")
    for s, rows in DETECTION.items():
        for b, (m, m50, m75) in rows.items():
            lines.append(f"{s:<9} {b:<23} {m:>6.3f} {m50:>6.3f} {m75:>6.3f}")
    lines += ["", "Degradation deltas"]
    for d in deltas:
        flag = "" if d.quoted is None else ("  (matches quoted)" if d.agrees else f"  (quoted {d.quoted:.4f}: MISMATCH)")
        lines.append(f"  {d.name}: {d.baseline_value:.4f} - {d.degraded_value:.4f} = {d.to_dict()['delta']:.4f}{flag}")
    lines += ["", "Flagged discrepancies"] + [f"  - {n}" for n in notes]
    text = "\n".join(lines)
    report.write_text(out / "reference.txt", text)
    report.plot_condition_matrix(VERIFICATION_FULL_FACE, out / "verification_full_face.png")
    report.plot_condition_matrix(VERIFICATION_PERIOCULAR, out / "verification_periocular.png")
    report.plot_condition_matrix(IDENTIFICATION, out / "identification.png")
    report.plot_deltas([d.name for d in deltas], [d.value for d in deltas], out / "deltas.png")
    print(text)
    return 0


def cmd_matrix(args) -> int:
    results = read_fold_results(args.results)
    matrix = build_condition_matrix(results, title=args.title)
    _emit_matrix(_out(args), "matrix", matrix, {"source": str(args.results)}, args, "matrix")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    ids = sorted(LOSSES) if args.loss == "all" else [args.loss]
    out_lines = []
    failed = 0
    summary = {}
    for lid in ids:
        worst = None
        n_fail = 0
        for _ in range(args.samples):
            rep = grad_check(lid, random_valid_sample(lid, rng), args.step, args.tol)
            if worst is None or rep.max_rel_error > worst.max_rel_error:
                worst = rep
            n_fail += not rep.passed
        failed += n_fail
        summary[lid] = {"samples": args.samples, "failures": n_fail, "max_rel_error": worst.max_rel_error}
        out_lines.append(f"{lid}: {args.samples} samples, {n_fail} failures, worst case:")
        out_lines.append(worst.format())
        out_lines.append("")
    text = "\n".join(out_lines)
    print(text)
    if args.out:
        out = _out(args)
        report.write_text(out / "gradcheck.txt", text)
        report.write_json(out / "gradcheck.json", report.envelope({"losses": summary}, _config(args), "gradcheck"))
    return 1 if failed else 0


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out(args)
    if args.holdout:
        fractions = [float(f) for f in _csv_list(args.holdout)]
        plan = split_holdout(manifest, fractions, args.seed, args.level)
        (out / "split.json").write_text(plan.to_json() + "\n")
        counts = {"plan": partition_counts(manifest, plan)}
    else:
        plans = split_kfold(manifest, args.folds, args.seed, args.level)
        (out / "split.json").write_text("[\n" + ",\n".join(p.to_json() for p in plans) + "\n]\n")
        counts = {f"fold{i}": partition_counts(manifest, p) for i, p in enumerate(plans)}
    report.write_json(out / "split_counts.json", report.envelope(counts, _config(args), "split"))
    print(json.dumps(counts, indent=1))
    return 0


def cmd_embed(args) -> int:
    manifest = load_manifest(args.manifest)
    src = EmbeddingSource(FaceLoader(manifest), blockmean_embedder(args.grid, args.features))
    table = {e.path: src(e) for e in manifest.entries}
    out = _out(args)
    report.write_text(out / "embeddings.csv", write_embeddings(table))
    print(f"wrote {len(table)} embeddings of dimension {len(next(iter(table.values()))) if table else 0}")
    return 0


def cmd_synth(args) -> int:
    m = write_corpus(args.out, args.subjects, args.images, args.seed, args.fill)
    print(f"wrote {len(m)} images for {len(m.subjects)} subjects; manifest at {Path(args.out) / 'manifest.csv'}")
    return 0


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"maskbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="flat key=value file; flags override its values")
        sp.set_defaults(func=func)
        return sp

    def embed_opts(sp, precomputed=True):
        sp.add_argument("--grid", type=int, default=8, help="block-mean grid size (default 8)")
        sp.add_argument("--features", choices=("full", "periocular"), default="full")
        if precomputed:
            sp.add_argument("--embeddings", help="precomputed embeddings CSV (image_path,v0,v1,...)")

    sp = command("detect-eval", cmd_detect_eval, "score detections: IoU matching, AP, mAP over IoU thresholds")
    sp.add_argument("--gt", required=True, help="ground-truth JSON array")
    sp.add_argument("--dets", required=True, help="detections JSON array")
    sp.add_argument("--iou-thresholds", default="0.5:0.05:0.95")
    sp.add_argument("--out", default="out/detect")

    sp = command("preprocess", cmd_preprocess, "rescale, periocular blackout, occlude, build hybrids")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--ops", default="rescale", help=f"comma list from {','.join(PREPROCESS_OPS)}")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=FACE_SIZE)
    sp.add_argument("--fill", type=int, default=0)
    sp.add_argument("--out", default="out/preprocess")

    sp = command("verify", cmd_verify, "1:1 verification condition matrix over folds")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", help="split plan JSON (object or array of fold plans)")
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--level", choices=("subject", "sample"), default="subject")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--spectrum", choices=("visual", "thermal"), default="visual")
    sp.add_argument("--max-pairs", type=int, default=2000)
    sp.add_argument("--margin", type=float, default=DEFAULT_MARGIN, help="recorded for provenance")
    embed_opts(sp)
    sp.add_argument("--out", default="out/verify")

    sp = command("identify", cmd_identify, "1:N identification matrix across image domains")
    sp.add_argument("--manifest")
    sp.add_argument("--reference", action="store_true", help="emit the published table and its deltas instead")
    sp.add_argument("--domains", default=",".join(IDENTIFICATION_DOMAINS))
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    embed_opts(sp)
    sp.add_argument("--out", default="out/identify")

    sp = command("checkpoint", cmd_checkpoint, "route one capture through the mask-aware checkpoint flow")
    sp.add_argument("--visual", required=True)
    sp.add_argument("--thermal")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--masked", dest="masked", action="store_true")
    g.add_argument("--unmasked", dest="masked", action="store_false")
    sp.add_argument("--gallery", required=True, help="manifest of enrolled subjects")
    embed_opts(sp, precomputed=False)
    sp.add_argument("--out", default="out/checkpoint")

    sp = command("reference", cmd_reference, "render the published tables and re-derive quoted deltas")
    sp.add_argument("--out", default="out/reference")

    sp = command("matrix", cmd_matrix, "aggregate train_cond,test_cond,fold,accuracy CSV into a matrix")
    sp.add_argument("--results", required=True)
    sp.add_argument("--title", default="")
    sp.add_argument("--out", default="out/matrix")

    sp = command("gradcheck", cmd_gradcheck, "finite-difference check of the loss gradients")
    sp.add_argument("--loss", choices=("all", *sorted(LOSSES)), default="all")
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")

    sp = command("split", cmd_split, "subject-disjoint hold-out or k-fold split plan")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--holdout", help="fractions, e.g. 0.7,0.2,0.1 (default: k-fold)")
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--level", choices=("subject", "sample"), default="subject")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out/split")

    sp = command("embed", cmd_embed, "write block-mean embeddings for a manifest")
    sp.add_argument("--manifest", required=True)
    embed_opts(sp, precomputed=False)
    sp.add_argument("--out", default="out/embed")

    sp = command("synth", cmd_synth, "generate the procedural desk-scale corpus")
    sp.add_argument("--subjects", type=int, default=40)
    sp.add_argument("--images", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fill", type=int, default=0)
    sp.add_argument("--out", default="out/synth")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    if known.config and command:
        cfg = read_config(known.config)
        sp = subparsers[command]
        actions = {a.dest: a for a in sp._actions}
        unknown = sorted(set(cfg) - set(actions))
        if unknown:
            raise InputError(f"{known.config}: unknown keys for {command}: {', '.join(unknown)}")
        defaults = {}
        for k, v in cfg.items():
            action = actions[k]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[k] = action.type(v) if action.type else v
                except ValueError as exc:
                    raise InputError(f"{known.config}: bad value for {k}: {v!r}") from exc
            action.required = False
        sp.set_defaults(**defaults)
        for group in sp._mutually_exclusive_groups:
            if any(a.dest in defaults for a in group._group_actions):
                group.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except MaskbenchError as exc:
        print(f"maskbench: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MaskbenchError as exc:
        print(f"maskbench: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"maskbench: error [InputError]: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
