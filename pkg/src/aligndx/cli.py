"""Command-line entry point.

Subcommands mirror the pipeline stages: synth, train, classify, retrieve,
explain, predict, evaluate, export-embeddings.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure; every failure prints a
one-line diagnostic.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .data import (
    AbnormalityType,
    DatasetManifest,
    SynthConfig,
    TextModality,
    load_manifest,
    mark_splits,
    save_manifest,
    split_dataset,
    synth_dataset,
)
from .diagnosis import ConditionalTable, DiagnosisHead
from .errors import DataError, NumericError
from .explanation import generate_description, load_templates
from .metrics import report_to_csv
from .pca import PowerIterationPCA
from .projection import (
    Checkpoint,
    ProjectionPair,
    init_projection,
    load_checkpoint,
    normalize_rows,
    save_checkpoint,
)
from .training import TrainConfig, class_anchor_texts, train

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract wants 1
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="aligndx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic manifest")
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-class", type=int, default=40)
    p.add_argument("--dim-image", type=int, default=32)
    p.add_argument("--dim-text", type=int, default=32)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--train-per-class", type=int, default=None,
                   help="mark the first N cases per class as the train split")
    p.add_argument("--dementia-mix", default=None,
                   help="JSON object: type code -> [p_non, p_ad, p_other]")

    def common(p, checkpoint=True):
        p.add_argument("--manifest", required=True,
                       help="reference dataset manifest (train split = references)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n-train", type=int, default=None,
                       help="seeded split size when the manifest declares none")

    p = sub.add_parser("train", help="fit projection heads and diagnosis predictors")
    common(p, checkpoint=False)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--modality", default="abnormality",
                   choices=[m.value for m in TextModality])
    p.add_argument("--proj-dim", type=int, default=128)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--lambda-reg", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--k", type=int, default=3, help="references per evidence bundle")
    p.add_argument("--alpha", type=float, default=1.0, help="conditional smoothing")
    p.add_argument("--head-lr", type=float, default=0.5)
    p.add_argument("--head-epochs", type=int, default=500)
    p.add_argument("--report", default=None, help="write the training report JSON here")

    for name, help_text in (
        ("classify", "predict abnormality types for queries"),
        ("retrieve", "top-k reference retrieval for queries"),
        ("explain", "render evidence explanations for queries"),
        ("predict", "dementia/AD probability for queries"),
        ("evaluate", "full evaluation battery on a test split"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--queries", default=None,
                       help="query manifest; default: the test split of --manifest")
        p.add_argument("--k", type=int, default=3)
        p.add_argument("--out", default=None,
                       help="output file (evaluate: output directory)")
        if name in ("explain", "predict", "evaluate"):
            p.add_argument("--task", default="dementia", choices=["dementia", "ad"])
            p.add_argument("--predictor", default="conditional",
                           choices=["conditional", "head"])
        if name == "explain":
            p.add_argument("--templates", default=None,
                           help="JSON file of per-type descriptions")

    p = sub.add_parser("export-embeddings",
                       help="2-D PCA coordinates of the projected embedding space")
    common(p)
    p.add_argument("--out", required=True, help="output CSV path")

    return parser


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {path}")
    return p


def _split_reference(manifest: DatasetManifest, args) -> tuple[DatasetManifest, DatasetManifest | None]:
    """Reference (train) cases and, when available, held-out test cases."""
    if any(c.split is not None for c in manifest.cases):
        return split_dataset(manifest, 0, 0)
    if args.n_train is not None:
        return split_dataset(manifest, args.n_train, args.seed)
    return manifest, None


def _load_queries(args, reference_test: DatasetManifest | None) -> DatasetManifest:
    if getattr(args, "queries", None):
        return load_manifest(_require_file(args.queries))
    if reference_test is None or not reference_test.cases:
        raise DataError(
            "no queries: pass --queries or a manifest with a declared/seeded test split"
        )
    return reference_test


def _restore(args) -> tuple[Checkpoint, DatasetManifest, DatasetManifest | None,
                            pipeline.AbnormalityRetriever]:
    checkpoint = load_checkpoint(_require_file(args.checkpoint))
    manifest = load_manifest(_require_file(args.manifest))
    if manifest.dims != (checkpoint.dim_image, checkpoint.dim_text):
        raise DataError(
            f"manifest dims {manifest.dims} do not match checkpoint "
            f"({checkpoint.dim_image}, {checkpoint.dim_text})"
        )
    reference, held_out = _split_reference(manifest, args)
    modality = TextModality.from_code(
        checkpoint.train_config.get("modality", "abnormality"))
    retriever = pipeline.AbnormalityRetriever(k=getattr(args, "k", 3)).fit(
        reference, pair=checkpoint.pair, modality=modality)
    return checkpoint, reference, held_out, retriever


def _stored_predictors(checkpoint: Checkpoint, kind: str,
                       retriever, reference) -> dict:
    """Predictors from the checkpoint; refitted on the fly when absent."""
    if kind == "conditional":
        if checkpoint.conditional:
            return {
                task: ConditionalTable.from_json(obj, task=task)
                for task, obj in checkpoint.conditional.items()
            }
    elif checkpoint.diagnosis:
        return {
            task: DiagnosisHead.from_json(obj)
            for task, obj in checkpoint.diagnosis.items()
        }
    return pipeline.fit_predictors(retriever, reference, predictor=kind)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    mix = dict(SynthConfig().dementia_mix)
    if args.dementia_mix:
        try:
            raw = json.loads(args.dementia_mix)
        except json.JSONDecodeError as exc:
            raise DataError(f"--dementia-mix: malformed JSON ({exc.msg})") from None
        for code, probs in raw.items():
            mix[AbnormalityType.from_code(code)] = tuple(float(p) for p in probs)
    config = SynthConfig(
        n_per_class=args.n_per_class, dim_image=args.dim_image,
        dim_text=args.dim_text, class_separation=args.separation,
        noise_sigma=args.noise, dementia_mix=mix,
    )
    manifest = synth_dataset(config, seed=args.seed)
    if args.train_per_class is not None:
        manifest = mark_splits(manifest, args.train_per_class)
    save_manifest(manifest, args.out)
    print(f"wrote {len(manifest.cases)} cases to {args.out}")
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(_require_file(args.manifest))
    reference, _ = _split_reference(manifest, args)
    config = TrainConfig(
        tau=args.tau, lambda_reg=args.lambda_reg, lr=args.lr,
        momentum=args.momentum, epochs=args.epochs, batch_size=args.batch_size,
        seed=args.seed, modality=TextModality.from_code(args.modality),
    )
    dim_d, dim_m = manifest.dims
    initial = ProjectionPair(
        vision=init_projection(dim_d, args.proj_dim, args.seed),
        text=init_projection(dim_m, args.proj_dim, args.seed + 1),
    )
    pair, report = train(reference, initial, config)

    retriever = pipeline.AbnormalityRetriever(k=args.k).fit(
        reference, pair=pair, modality=config.modality)
    conditional = {
        task: table.to_json()
        for task, table in pipeline.fit_predictors(
            retriever, reference, predictor="conditional", alpha=args.alpha
        ).items()
    }
    diagnosis = None
    try:
        heads = pipeline.fit_predictors(
            retriever, reference, predictor="head",
            head_lr=args.head_lr, head_epochs=args.head_epochs, seed=args.seed,
        )
        diagnosis = {task: head.to_json() for task, head in heads.items()}
    except ValueError as exc:
        print(f"warning: skipping logistic heads ({exc})", file=sys.stderr)

    checkpoint = Checkpoint(
        pair=pair, dim_image=dim_d, dim_text=dim_m, tau=config.tau,
        train_config=config.to_json(), diagnosis=diagnosis, conditional=conditional,
    )
    save_checkpoint(checkpoint, args.out)
    if args.report:
        _write_json(Path(args.report), report.to_json())
    print(
        f"trained on {len(reference.cases)} cases for {config.epochs} epochs; "
        f"final loss {report.epoch_losses[-1]:.4f}" if report.epoch_losses
        else f"trained on {len(reference.cases)} cases (no epochs)"
    )
    print(f"wrote checkpoint to {args.out}")
    return 0


def cmd_classify(args) -> int:
    _, _, held_out, retriever = _restore(args)
    queries = _load_queries(args, held_out)
    results = retriever.retrieve_manifest(queries)
    for r in results:
        print(f"{r.query_id}\t{r.predicted.value}\t"
              f"{r.class_scores[r.predicted]:.4f}")
    if args.out:
        _write_json(Path(args.out), [r.to_json() for r in results])
    return 0


def cmd_retrieve(args) -> int:
    _, _, held_out, retriever = _restore(args)
    queries = _load_queries(args, held_out)
    results = retriever.retrieve_manifest(queries)
    for r in results:
        print(f"query {r.query_id} (predicted {r.predicted.value}):")
        for m in r.top_k:
            print(f"  {m.ref_id}\t{m.similarity:.4f}\t{m.abnormality.value}")
    if args.out:
        _write_json(Path(args.out), [r.to_json() for r in results])
    return 0


def cmd_explain(args) -> int:
    checkpoint, reference, held_out, retriever = _restore(args)
    queries = _load_queries(args, held_out)
    templates = load_templates(_require_file(args.templates)) if args.templates else None
    predictors = _stored_predictors(checkpoint, args.predictor, retriever, reference)
    outputs = pipeline.run_pipeline(retriever, queries, predictors)
    explanations = []
    for out in outputs:
        exp = generate_description(
            out.result, out.probabilities[args.task], args.task, templates=templates)
        explanations.append(exp)
        print(f"=== {out.result.query_id} ===")
        print(exp.rendered)
        print()
    if args.out:
        _write_json(Path(args.out), [e.to_json() for e in explanations])
    return 0


def cmd_predict(args) -> int:
    checkpoint, reference, held_out, retriever = _restore(args)
    queries = _load_queries(args, held_out)
    predictors = _stored_predictors(checkpoint, args.predictor, retriever, reference)
    outputs = pipeline.run_pipeline(retriever, queries, predictors)
    rows = []
    for out in outputs:
        p = out.probabilities[args.task]
        label = 1 if p >= 0.5 else 0
        rows.append({"query_id": out.result.query_id, "task": args.task,
                     "probability": p, "label": label,
                     "predicted_abnormality": out.result.predicted.value})
        print(f"{out.result.query_id}\t{p:.4f}\t{label}")
    if args.out:
        _write_json(Path(args.out), rows)
    return 0


def cmd_evaluate(args) -> int:
    checkpoint, reference, held_out, retriever = _restore(args)
    queries = _load_queries(args, held_out)
    predictors = _stored_predictors(checkpoint, args.predictor, retriever, reference)
    evaluation = pipeline.evaluate_pipeline(retriever, queries, predictors)

    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, report in evaluation["reports"].items():
        _write_json(out_dir / f"{name}_report.json", report.to_json())
        (out_dir / f"{name}_report.csv").write_text(
            report_to_csv(report), encoding="utf-8")
    _write_json(out_dir / "error_rates.json", evaluation["error_rates"])
    _write_json(out_dir / "retrieval_analytics.json", evaluation["analytics"])

    for name, report in evaluation["reports"].items():
        m = report.metrics
        print(f"{name}: accuracy {100 * m.accuracy:.2f}% | AUC {m.auc_roc:.2f} | "
              f"sensitivity {100 * m.sensitivity:.2f}% | "
              f"specificity {100 * m.specificity:.2f}% | "
              f"precision {100 * m.precision:.2f}% | F1 {100 * m.f1:.2f}%")
    print(f"wrote reports to {out_dir}")
    return 0


def cmd_export_embeddings(args) -> int:
    checkpoint = load_checkpoint(_require_file(args.checkpoint))
    manifest = load_manifest(_require_file(args.manifest))
    pair = checkpoint.pair
    modality = TextModality.from_code(
        checkpoint.train_config.get("modality", "abnormality"))

    points = normalize_rows(pair.vision.apply(
        manifest.image_matrix().astype(np.float64)))
    rows = [
        (case.id, case.abnormality.value, 0)
        for case in manifest.cases
    ]
    anchors = class_anchor_texts(manifest, modality)
    anchor_rows = []
    anchor_points = []
    for abn in AbnormalityType:
        if abn in anchors:
            anchor_points.append(normalize_rows(pair.text.apply(anchors[abn])[None, :])[0])
            anchor_rows.append((f"anchor:{abn.value}", abn.value, 1))
    X = np.vstack([points, np.stack(anchor_points)]) if anchor_points else points

    pca = PowerIterationPCA(n_components=2, seed=args.seed).fit(X)
    coords = pca.transform(X)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "type", "x", "y", "is_anchor"])
        for (case_id, abn, is_anchor), (x, y) in zip(rows + anchor_rows, coords):
            writer.writerow([case_id, abn, repr(float(x)), repr(float(y)), is_anchor])
    explained = pca.explained_variance_.sum() / pca.total_variance_
    print(f"wrote {len(coords)} points to {args.out} "
          f"(2-component variance share {explained:.4f})")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "classify": cmd_classify,
    "retrieve": cmd_retrieve,
    "explain": cmd_explain,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("aligndx: a subcommand is required", file=sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream consumer (e.g. `| head`) closed the pipe; exit quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
