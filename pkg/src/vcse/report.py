"""Render evaluation rows as an aligned text table, a CSV file and a bar chart."""

from __future__ import annotations

import csv
import io
import shutil
import tempfile
from pathlib import Path
from typing import Sequence

from .evaluation import EvalRow
from .plotting import bar_chart

TABLE_NAME = "results.txt"
CSV_NAME = "results.csv"
CHART_NAME = "si_snri.png"
COLUMNS = ("Model", "Reference", "SI-SNRi", "SDRi", "N")


def _cells(row: EvalRow) -> list[str]:
    return [row.model_name, row.reference_kind, f"{row.si_snri_db:.4f}", f"{row.sdri_db:.4f}", str(row.n_utterances)]


def format_table(rows: Sequence[EvalRow]) -> str:
    body = [list(COLUMNS)] + [_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in body) for i in range(len(COLUMNS))]
    rule = "+".join("-" * (w + 2) for w in widths)
    lines = [rule]
    for k, line in enumerate(body):
        lines.append("|".join(f" {c:<{w}} " if i < 2 else f" {c:>{w}} " for i, (c, w) in enumerate(zip(line, widths))))
        if k == 0:
            lines.append(rule)
    lines.append(rule)
    return "\n".join(lines) + "\n"


def format_csv(rows: Sequence[EvalRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model_name", "reference_kind", "si_snri_db", "sdri_db", "n_utterances"])
    for r in rows:
        writer.writerow(_cells(r))
    return buf.getvalue()


def render_report(rows: Sequence[EvalRow], out_dir: str | Path, *, highlight: str | None = "VCSE") -> list[Path]:
    """Write table, CSV and chart into ``out_dir``. Nothing is written unless all three succeed."""
    if not rows:
        raise ValueError("no evaluation rows to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = (TABLE_NAME, CSV_NAME, CHART_NAME)
    with tempfile.TemporaryDirectory(dir=out, prefix=".report-") as tmp:
        tmp = Path(tmp)
        (tmp / TABLE_NAME).write_text(format_table(rows), encoding="utf-8")
        (tmp / CSV_NAME).write_text(format_csv(rows), encoding="utf-8")
        bar_chart([r.model_name for r in rows], [r.si_snri_db for r in rows], tmp / CHART_NAME,
                  ylabel="SI-SNRi (dB)", highlight=highlight)
        for name in names:
            shutil.move(str(tmp / name), out / name)
    return [out / n for n in names]


def read_csv_rows(path: str | Path) -> list[EvalRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EvalRow(r["model_name"], r["reference_kind"], float(r["si_snri_db"]), float(r["sdri_db"]),
                        int(r["n_utterances"])) for r in csv.DictReader(fh)]
