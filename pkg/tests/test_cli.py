import json
import re
from pathlib import Path

import numpy as np
import pytest

from otopipe.cli import EXIT_DATA, EXIT_LEAKAGE, EXIT_OK, EXIT_USAGE, build_parser, main
from otopipe.imgio import write_pnm

DATA = Path(__file__).parent / "data"

SMALL_SYNTH = {
    "patients_per_class": 2,
    "videos_per_patient": 1,
    "frames_per_video": 6,
    "image_side": 32,
}


def make_tree(tmp_path, n_videos=3, frames=6):
    root = tmp_path / "raw"
    labels = ["Normal", "Earwax", "ChronicOtitisMedia", "Myringosclerosis"]
    rows = ["patient_id,video_id,label"]
    rng = np.random.default_rng(0)
    for v in range(n_videos):
        d = root / "2023-01" / f"p{v}" / f"v{v}"
        d.mkdir(parents=True)
        for i in range(frames):
            write_pnm(d / f"{i}.pgm", rng.integers(0, 256, size=(16, 16), dtype=np.uint8))
        rows.append(f"p{v},v{v},{labels[v % 4]}")
    table = tmp_path / "diag.csv"
    table.write_text("\n".join(rows) + "\n")
    return root, table


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert main(["split", "--no-such-flag"]) == EXIT_USAGE
        assert main(["definitely-not-a-command"]) == EXIT_USAGE

    def test_data_error_is_two(self, tmp_path, capsys):
        code = main(["score", "--manifest", str(tmp_path / "missing.tsv"), "--out", str(tmp_path)])
        assert code == EXIT_DATA

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert main(["anova", "--help"]) == 0


class TestHelpSurface:
    def test_every_subcommand_documents_its_flags(self, capsys):
        surface = {
            "ingest": ["--root", "--table", "--out", "--quiet", "--seed"],
            "score": ["--manifest", "--out"],
            "filter": ["--manifest", "--config", "--out"],
            "split": ["--manifest", "--strategy", "--test-fraction", "--runs", "--seed"],
            "audit": [
                "--manifest",
                "--split",
                "--window",
                "--dup-threshold",
                "--no-duplicates",
                "--forbid-patient-overlap",
                "--max-contamination",
            ],
            "eval": ["--predictions", "--split", "--out"],
            "anova": ["--summaries", "--raw", "--alpha"],
            "synth": ["--config", "--default", "--runs", "--test-fraction", "--generate-only"],
            "report": ["--out"],
        }
        for command, flags in surface.items():
            with pytest.raises(SystemExit):
                main_args = [command, "--help"]
                build_parser().parse_args(main_args)
            help_text = capsys.readouterr().out
            for flag in flags:
                assert flag in help_text, f"{command} help is missing {flag}"


class TestWorkflow:
    def test_ingest_split_audit_clean(self, tmp_path, capsys):
        # two patients per class, so the grouped split can keep every class in train
        root, table = make_tree(tmp_path, n_videos=8)
        work = tmp_path / "work"
        assert main(["ingest", "--root", str(root), "--table", str(table), "--out", str(work)]) == EXIT_OK
        assert (work / "manifest.tsv").is_file()
        assert (work / "ingest_report.txt").is_file()

        assert (
            main(
                [
                    "split",
                    "--manifest",
                    str(work / "manifest.tsv"),
                    "--strategy",
                    "grouped",
                    "--seed",
                    "1",
                    "--runs",
                    "2",
                    "--out",
                    str(work),
                ]
            )
            == EXIT_OK
        )
        split_file = work / "splits" / "grouped_run0.tsv"
        assert split_file.is_file()

        code = main(
            [
                "audit",
                "--manifest",
                str(work / "manifest.tsv"),
                "--split",
                str(split_file),
                "--forbid-patient-overlap",
                "--out",
                str(work),
            ]
        )
        assert code == EXIT_OK
        report = (work / "audit_report.txt").read_text()
        assert "patient overlap: 0" in report
        assert "video overlap: 0" in report

    def test_naive_split_fails_gate_with_exit_three(self, tmp_path, capsys):
        root, table = make_tree(tmp_path, n_videos=2, frames=20)
        work = tmp_path / "work"
        main(["ingest", "--root", str(root), "--table", str(table), "--out", str(work)])
        main(
            [
                "split",
                "--manifest",
                str(work / "manifest.tsv"),
                "--strategy",
                "naive",
                "--runs",
                "1",
                "--out",
                str(work),
            ]
        )
        code = main(
            [
                "audit",
                "--manifest",
                str(work / "manifest.tsv"),
                "--split",
                str(work / "splits" / "naive_run0.tsv"),
                "--forbid-patient-overlap",
                "--out",
                str(work),
            ]
        )
        assert code == EXIT_LEAKAGE
        assert "leakage gate failed" in capsys.readouterr().err

    def test_score_then_filter(self, tmp_path, capsys):
        root, table = make_tree(tmp_path)
        work = tmp_path / "work"
        main(["ingest", "--root", str(root), "--table", str(table), "--out", str(work)])
        assert main(["score", "--manifest", str(work / "manifest.tsv"), "--out", str(work)]) == EXIT_OK
        assert (work / "manifest_scored.tsv").is_file()
        cfg = tmp_path / "pipe.json"
        cfg.write_text(json.dumps({"trim_fraction": 0.0, "crop_enabled": True}))
        assert (
            main(
                [
                    "filter",
                    "--manifest",
                    str(work / "manifest.tsv"),
                    "--config",
                    str(cfg),
                    "--out",
                    str(work),
                ]
            )
            == EXIT_OK
        )
        assert (work / "pipeline_report.txt").is_file()
        assert (work / "manifest_processed.tsv").is_file()


class TestAnovaCommand:
    def test_published_cells_reproduce_published_table(self, capsys, tmp_path):
        code = main(["anova", "--summaries", str(DATA / "anova_cells.csv"), "--out", str(tmp_path)])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        sample_line = next(l for l in out.splitlines() if l.startswith("Sample"))
        numbers = re.findall(r"[0-9.]+(?:E-?[0-9]+)?", sample_line)
        ss, df, ms, f, p, fcrit = numbers
        assert abs(float(ss) - 0.241029) < 1e-5
        assert abs(float(f) - 193.1412) < 0.01
        assert abs(float(p) - 1.31e-14) / 1.31e-14 < 0.03
        assert abs(float(fcrit) - 4.170877) < 1e-4
        assert (tmp_path / "anova.tsv").is_file()

    def test_raw_and_summaries_flags_are_exclusive(self, capsys):
        assert main(["anova", "--summaries", "a.csv", "--raw", "b.csv"]) == EXIT_USAGE


class TestSynthAndReport:
    def test_synth_then_report(self, tmp_path, capsys):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps(SMALL_SYNTH))
        work = tmp_path / "work"
        code = main(
            ["synth", "--config", str(cfg), "--runs", "2", "--seed", "3", "--out", str(work)]
        )
        assert code == EXIT_OK
        for name in (
            "manifest.tsv",
            "predictions_naive.tsv",
            "predictions_grouped.tsv",
            "summary_naive.tsv",
            "summary_grouped.tsv",
            "delta.tsv",
            "audit_naive.tsv",
            "audit_grouped.tsv",
        ):
            assert (work / name).is_file(), name

        assert main(["report", "--out", str(work)]) == EXIT_OK
        report = (work / "report.txt").read_text()
        assert "delta (naive minus grouped)" in report
        assert "summary_naive" in report
        assert "audit_grouped" in report
        assert (work / "report.tsv").is_file()

    def test_default_experiment_reports_inflation(self, tmp_path, capsys):
        work = tmp_path / "work"
        assert main(["synth", "--default", "--seed", "0", "--out", str(work)]) == EXIT_OK
        assert main(["report", "--out", str(work)]) == EXIT_OK
        deltas = {}
        for line in (work / "delta.tsv").read_text().splitlines()[1:]:
            fields = line.split("\t")
            deltas[fields[0]] = float(fields[3])
        assert deltas["accuracy"] >= 0.10
        report = (work / "report.txt").read_text()
        assert "delta (naive minus grouped)" in report
        # the naive split's own audit must show the contamination
        naive_audit = (work / "audit_naive.txt").read_text()
        assert "patient overlap: 0" not in naive_audit
        grouped_audit = (work / "audit_grouped.txt").read_text()
        assert "patient overlap: 0" in grouped_audit

    def test_generate_only(self, tmp_path, capsys):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps(SMALL_SYNTH))
        work = tmp_path / "work"
        code = main(
            ["synth", "--config", str(cfg), "--generate-only", "--out", str(work)]
        )
        assert code == EXIT_OK
        assert (work / "manifest.tsv").is_file()
        assert (work / "dataset" / "diagnosis.csv").is_file()

    def test_default_and_config_flags_exclusive(self, tmp_path, capsys):
        assert (
            main(["synth", "--default", "--config", "x.json", "--out", str(tmp_path)])
            == EXIT_USAGE
        )


class TestIdempotence:
    def test_rerun_overwrites_identically(self, tmp_path, capsys):
        root, table = make_tree(tmp_path)
        work = tmp_path / "work"
        args = ["ingest", "--root", str(root), "--table", str(table), "--out", str(work)]
        assert main(args) == EXIT_OK
        first = (work / "manifest.tsv").read_bytes()
        assert main(args) == EXIT_OK
        assert (work / "manifest.tsv").read_bytes() == first
        # the run log accumulates provenance lines, one per invocation
        log_lines = (work / "run.log").read_text().strip().splitlines()
        assert len(log_lines) == 2
        assert all("ingest" in line for line in log_lines)
