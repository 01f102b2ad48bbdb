"""Single executable wiring the toolkit into a workflow:

    otopipe ingest  --root RAW --table diag.csv --out WORK
    otopipe score   --manifest WORK/manifest.tsv --out WORK
    otopipe filter  --manifest WORK/manifest.tsv --out WORK
    otopipe split   --manifest ... --strategy grouped --seed 1 --out WORK
    otopipe audit   --manifest ... --split WORK/splits/... --out WORK
    otopipe eval    --predictions preds.tsv --out WORK
    otopipe anova   --summaries cells.csv
    otopipe synth   --out WORK
    otopipe report  --out WORK

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 leakage
gate failure. Every run appends a provenance line (UTC time, argv, config
digest, seed) to ``<out>/run.log``; output files themselves are
deterministic, so re-running a command overwrites identical content.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import audit as audit_mod
from . import evaluation, manifest as manifest_mod, splitting, stats, synth as synth_mod
from .errors import DataError, LeakageError, OtopipeError
from .imaging import bits_from_thumb
from .pipeline import PipelineConfig, QualityPolicy, run_pipeline, score_frames

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_LEAKAGE = 3


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this toolkit reserves 2
    for data errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        print(text)


def _config_digest(payload) -> str:
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _log_run(out_dir: Path, argv: list[str], config_payload, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    line = f"{stamp}\t{' '.join(argv)}\t{_config_digest(config_payload)}\t{seed}\n"
    with open(out_dir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(line)


def _load_pipeline_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read pipeline config {path}: {exc}") from exc

    def policy(key: str) -> QualityPolicy:
        entry = raw.get(key)
        if entry is None:
            return QualityPolicy("percentile", 25.0)
        return QualityPolicy(entry["kind"], float(entry["value"]))

    return PipelineConfig(
        trim_fraction=float(raw.get("trim_fraction", 0.10)),
        laplacian=policy("laplacian"),
        entropy=policy("entropy"),
        crop_enabled=bool(raw.get("crop_enabled", True)),
        fill=int(raw.get("fill", 0)),
    )


def _write_summary_tsv(summary: evaluation.RunSummary, path: Path) -> None:
    lines = ["metric\tmean\tvariance\tstd\tmin\tq1\tmedian\tq3\tmax"]
    for name, s in summary.metrics.items():
        var = "-" if s.variance is None else repr(s.variance)
        std = "-" if s.std is None else repr(s.std)
        lines.append(
            f"{name}\t{s.mean!r}\t{var}\t{std}\t{s.minimum!r}\t{s.q1!r}"
            f"\t{s.median!r}\t{s.q3!r}\t{s.maximum!r}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_summary_tsv(path: Path) -> evaluation.RunSummary:
    lines = path.read_text(encoding="utf-8").splitlines()
    metrics: dict[str, evaluation.MetricSummary] = {}
    for line in lines[1:]:
        if not line:
            continue
        f = line.split("\t")
        metrics[f[0]] = evaluation.MetricSummary(
            mean=float(f[1]),
            variance=None if f[2] == "-" else float(f[2]),
            std=None if f[3] == "-" else float(f[3]),
            minimum=float(f[4]),
            q1=float(f[5]),
            median=float(f[6]),
            q3=float(f[7]),
            maximum=float(f[8]),
        )
    return evaluation.RunSummary(run_count=0, metrics=metrics)


def _write_audit(report, stem: Path) -> None:
    stem.with_suffix(".txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    rows = [
        f"n_test\t{report.n_test}",
        f"n_train\t{report.n_train}",
        f"contamination_rate\t{report.contamination_rate!r}",
        f"duplicates_checked\t{int(report.duplicates_checked)}",
    ]
    rows.extend(f"patient_overlap\t{p}" for p in report.patient_overlap)
    rows.extend(f"video_overlap\t{v}" for v in report.video_overlap)
    rows.extend(f"adjacency\t{t}\t{r}" for t, r in report.adjacency_pairs)
    rows.extend(f"duplicate\t{t}\t{r}\t{d}" for t, r, d in report.duplicate_pairs)
    stem.with_suffix(".tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")


# --- subcommand implementations -------------------------------------------


def _cmd_ingest(args) -> int:
    out = Path(args.out)
    mani, report = manifest_mod.ingest_tree(args.root, args.table)
    out.mkdir(parents=True, exist_ok=True)
    manifest_mod.save(mani, out / "manifest.tsv")
    (out / "ingest_report.txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    problems = manifest_mod.invariant_errors(mani)
    if problems:
        for p in problems:
            print(str(p), file=sys.stderr)
        return EXIT_DATA
    _say(args, f"ingested {len(mani.videos)} videos, {len(mani.frames)} frames -> {out / 'manifest.tsv'}")
    return EXIT_OK


def _cmd_score(args) -> int:
    out = Path(args.out)
    mani = manifest_mod.load(args.manifest)
    scored = score_frames(mani)
    out.mkdir(parents=True, exist_ok=True)
    manifest_mod.save(scored, out / "manifest_scored.tsv")
    n = sum(1 for f in scored.frames if f.laplacian_variance is not None)
    _say(args, f"scored {n} frames -> {out / 'manifest_scored.tsv'}")
    return EXIT_OK


def _cmd_filter(args) -> int:
    out = Path(args.out)
    mani = manifest_mod.load(args.manifest)
    config = _load_pipeline_config(args.config)
    processed, report = run_pipeline(mani, config, out / "processed")
    out.mkdir(parents=True, exist_ok=True)
    manifest_mod.save(processed, out / "manifest_processed.tsv")
    (out / "pipeline_report.txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    rows = [
        f"total\t{report.total}",
        f"kept\t{report.kept}",
        f"dropped_trim\t{report.dropped_trim}",
        f"dropped_quality\t{report.dropped_quality}",
        f"dropped_unreadable\t{report.dropped_unreadable}",
    ]
    rows.extend(f"video\t{s.video_id}\t{s.kept}\t{s.dropped}" for s in report.per_video)
    rows.extend(f"warning\t{w}" for w in report.warnings)
    (out / "pipeline_report.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _say(args, f"kept {report.kept}/{report.total} frames -> {out / 'manifest_processed.tsv'}")
    return EXIT_OK


def _cmd_split(args) -> int:
    out = Path(args.out)
    mani = manifest_mod.load(args.manifest)
    strategy = splitting.NAIVE_FRAME if args.strategy == "naive" else splitting.GROUPED_PATIENT
    spec = splitting.SplitSpec(
        strategy=strategy,
        test_fraction=args.test_fraction,
        seed=args.seed,
        run_count=args.runs,
    )
    assignments = splitting.run_series(mani, spec)
    split_dir = out / "splits"
    split_dir.mkdir(parents=True, exist_ok=True)
    for assignment in assignments:
        splitting.save_assignment(
            assignment, split_dir / f"{args.strategy}_run{assignment.run_index}.tsv"
        )
    _say(args, f"wrote {len(assignments)} assignments under {split_dir}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    out = Path(args.out)
    mani = manifest_mod.load(args.manifest)
    assignment = splitting.load_assignment(args.split)
    fingerprints = None
    if not args.no_duplicates:
        fingerprints = audit_mod.compute_fingerprints(mani)
    report = audit_mod.audit_split(
        mani,
        assignment,
        adjacency_window=args.window,
        dup_threshold=args.dup_threshold,
        fingerprints=fingerprints,
    )
    out.mkdir(parents=True, exist_ok=True)
    _write_audit(report, out / "audit_report")
    _say(args, "\n".join(report.lines()))
    if args.forbid_patient_overlap or args.max_contamination is not None:
        policy = audit_mod.GatePolicy(
            forbid_patient_overlap=args.forbid_patient_overlap,
            max_contamination=args.max_contamination,
        )
        result = audit_mod.gate(report, policy)
        if not result.passed:
            for reason in result.reasons:
                print(f"leakage gate failed: {reason}", file=sys.stderr)
            return EXIT_LEAKAGE
        _say(args, "leakage gate passed")
    return EXIT_OK


def _cmd_eval(args) -> int:
    out = Path(args.out)
    rows = evaluation.load_predictions(args.predictions)
    assignment = splitting.load_assignment(args.split) if args.split else None
    warnings = evaluation.validate_predictions(rows, assignment)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    out.mkdir(parents=True, exist_ok=True)

    reports = [evaluation.evaluate_run(rows, run) for run in evaluation.run_indices(rows)]
    metric_names = sorted({k for r in reports for k in r.aggregate_metrics()})
    lines = ["run\t" + "\t".join(metric_names)]
    for r in reports:
        agg = r.aggregate_metrics()
        lines.append(
            f"{r.run_index}\t" + "\t".join(repr(agg[k]) if k in agg else "-" for k in metric_names)
        )
    (out / "metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    pc_lines = ["run\tclass\tprecision\trecall\tspecificity\tf1\tsupport"]
    for r in reports:
        for m in r.per_class:
            pc_lines.append(
                f"{r.run_index}\t{m.label.canonical_name}\t{m.precision!r}\t{m.recall!r}"
                f"\t{m.specificity!r}\t{m.f1!r}\t{m.support}"
            )
    (out / "per_class.tsv").write_text("\n".join(pc_lines) + "\n", encoding="utf-8")

    cm_lines = []
    for r in reports:
        cm_lines.append(f"run {r.run_index} confusion matrix (rows=true, cols=predicted):")
        for i, row in enumerate(r.cm):
            label = manifest_mod.ClassLabel(i).canonical_name
            cm_lines.append(f"  {label:<20}" + " ".join(f"{int(v):>6}" for v in row))
    (out / "confusion.txt").write_text("\n".join(cm_lines) + "\n", encoding="utf-8")

    _write_summary_tsv(evaluation.summarize_runs(reports), out / "summary.tsv")
    _say(args, f"evaluated {len(reports)} runs -> {out / 'metrics.tsv'}")
    return EXIT_OK


def _cmd_anova(args) -> int:
    if args.summaries:
        design = stats.load_summaries(args.summaries)
        table = stats.anova_from_summaries(design, alpha=args.alpha)
    else:
        values, row_levels, col_levels = stats.load_raw(args.raw)
        table = stats.anova_from_raw(
            values, alpha=args.alpha, row_levels=row_levels, col_levels=col_levels
        )
    text = stats.format_anova_table(table)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "anova.txt").write_text(text + "\n", encoding="utf-8")

        def opt(v):
            return "-" if v is None else repr(v)

        rows = ["source\tss\tdf\tms\tf\tp\tf_crit"]
        for row in table.rows:
            rows.append(
                f"{row.source}\t{row.ss!r}\t{row.df}\t{opt(row.ms)}\t{opt(row.f)}"
                f"\t{opt(row.p)}\t{opt(row.f_crit)}"
            )
        (out / "anova.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_synth(args) -> int:
    out = Path(args.out)
    config = synth_mod.SynthConfig(seed=args.seed)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read synth config {args.config}: {exc}") from exc
        raw.setdefault("seed", args.seed)
        config = synth_mod.SynthConfig(**raw)

    if args.generate_only:
        mani = synth_mod.generate(config, out / "dataset")
        manifest_mod.save(mani, out / "manifest.tsv")
        _say(args, f"generated {len(mani.frames)} frames under {out / 'dataset'}")
        return EXIT_OK

    result = synth_mod.inflation_experiment(
        config, out / "dataset", runs=args.runs, test_fraction=args.test_fraction, k=args.k
    )
    manifest_mod.save(result.manifest, out / "manifest.tsv")
    split_dir = out / "splits"
    split_dir.mkdir(parents=True, exist_ok=True)
    bits = {
        fid: bits_from_thumb(t) for fid, t in synth_mod.frame_thumbs(result.manifest).items()
    }
    for name, outcome in (("naive", result.naive), ("grouped", result.grouped)):
        for assignment in outcome.assignments:
            splitting.save_assignment(
                assignment, split_dir / f"{name}_run{assignment.run_index}.tsv"
            )
        evaluation.save_predictions(outcome.predictions, out / f"predictions_{name}.tsv")
        _write_summary_tsv(outcome.summary, out / f"summary_{name}.tsv")
        # audit run 0 of each strategy so the report can show the contrast
        report = audit_mod.audit_split(
            result.manifest, outcome.assignments[0], fingerprints=bits
        )
        _write_audit(report, out / f"audit_{name}")

    delta_lines = ["metric\tbefore\tafter\tdrop\trelative"]
    for d in result.delta.deltas:
        rel = "-" if d.relative_drop is None else repr(d.relative_drop)
        delta_lines.append(
            f"{d.metric}\t{d.mean_before!r}\t{d.mean_after!r}\t{d.absolute_drop!r}\t{rel}"
        )
    (out / "delta.tsv").write_text("\n".join(delta_lines) + "\n", encoding="utf-8")
    (out / "delta.txt").write_text("\n".join(result.delta.lines()) + "\n", encoding="utf-8")
    _say(
        args,
        f"naive accuracy {result.naive.summary.metrics['accuracy'].mean:.4f} vs "
        f"grouped {result.grouped.summary.metrics['accuracy'].mean:.4f} "
        f"(gap {result.accuracy_gap:.4f})",
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise DataError(f"report: {out} is not a directory")
    sections: list[tuple[str, list[str]]] = []

    def add_text(title: str, path: Path):
        if path.is_file():
            sections.append((title, path.read_text(encoding="utf-8").rstrip("\n").split("\n")))

    add_text("ingest", out / "ingest_report.txt")
    add_text("pipeline", out / "pipeline_report.txt")
    for stem in ("audit_report", "audit_naive", "audit_grouped"):
        add_text(stem, out / f"{stem}.txt")
    for name in ("summary", "summary_naive", "summary_grouped"):
        path = out / f"{name}.tsv"
        if path.is_file():
            summary = _read_summary_tsv(path)
            lines = [f"{'metric':<20}{'mean':>12}{'std':>12}{'min':>12}{'median':>12}{'max':>12}"]
            for metric, s in summary.metrics.items():
                std = f"{s.std:.6f}" if s.std is not None else "*"
                lines.append(
                    f"{metric:<20}{s.mean:>12.6f}{std:>12}{s.minimum:>12.6f}"
                    f"{s.median:>12.6f}{s.maximum:>12.6f}"
                )
            sections.append((name, lines))
    add_text("delta (naive minus grouped)", out / "delta.txt")
    add_text("anova", out / "anova.txt")

    if not sections:
        raise DataError(f"report: no recognized artifacts under {out}")
    text_lines: list[str] = []
    for title, lines in sections:
        text_lines.append(f"=== {title} ===")
        text_lines.extend(lines)
        text_lines.append("")
    (out / "report.txt").write_text("\n".join(text_lines), encoding="utf-8")

    tsv_lines = ["section\tline"]
    for title, lines in sections:
        tsv_lines.extend(f"{title}\t{line}" for line in lines)
    (out / "report.tsv").write_text("\n".join(tsv_lines) + "\n", encoding="utf-8")
    _say(args, f"report written to {out / 'report.txt'}")
    return EXIT_OK


# --- argument wiring --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otopipe", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress chatter")
        p.add_argument("--seed", type=int, default=0, help="seed for all randomness")

    p = sub.add_parser("ingest", help="walk a raw frame tree and build a manifest")
    p.add_argument("--root", required=True, help="dataset root: <year-month>/<patient>/<video>/<i>.<ext>")
    p.add_argument("--table", required=True, help="diagnosis table csv (patient_id, video_id, label)")
    common(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("score", help="fill blur and entropy scores for every frame")
    p.add_argument("--manifest", required=True)
    common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("filter", help="run the full pipeline: trim, score, filter, crop")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="pipeline config json")
    common(p)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("split", help="produce seeded train/test assignments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", choices=("naive", "grouped"), default="grouped")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--runs", type=int, default=11)
    common(p)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("audit", help="detect leakage in a split assignment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True, help="assignment file from the split command")
    p.add_argument("--window", type=int, default=audit_mod.DEFAULT_ADJACENCY_WINDOW)
    p.add_argument("--dup-threshold", type=int, default=audit_mod.DEFAULT_DUP_THRESHOLD)
    p.add_argument("--no-duplicates", action="store_true", help="skip fingerprint comparison")
    p.add_argument("--forbid-patient-overlap", action="store_true")
    p.add_argument("--max-contamination", type=float, default=None)
    common(p)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("eval", help="compute the metric suite from a prediction file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--split", help="assignment file to cross-check prediction coverage")
    common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("anova", help="two-factor ANOVA from summaries or raw values")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--summaries", help="csv/tsv: row_level, col_level, count, mean, variance")
    src.add_argument("--raw", help="csv/tsv: row_level, col_level, value")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="optional output directory")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_anova)

    p = sub.add_parser("synth", help="generate a synthetic dataset and run the inflation experiment")
    cfg_src = p.add_mutually_exclusive_group()
    cfg_src.add_argument("--config", help="synth config json")
    cfg_src.add_argument("--default", action="store_true", help="use the default configuration")
    p.add_argument("--runs", type=int, default=11)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("-k", type=int, default=1, help="probe neighbor count")
    p.add_argument("--generate-only", action="store_true", help="write the dataset, skip the experiment")
    common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report", help="merge evaluation, audit, delta and anova outputs")
    common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        code = args.func(args)
        if getattr(args, "out", None):
            config_payload = {
                k: v for k, v in vars(args).items() if k not in ("func", "quiet")
            }
            _log_run(Path(args.out), ["otopipe", *argv], config_payload, getattr(args, "seed", 0))
        return code
    except LeakageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except OtopipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
