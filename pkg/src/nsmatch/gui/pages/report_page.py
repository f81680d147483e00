from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import pandas as pd
from PySide6.QtCore import Qt, Signal
from PySide6.QtWidgets import (
    QAbstractItemView,
    QGridLayout,
    QGroupBox,
    QHBoxLayout,
    QLabel,
    QLineEdit,
    QPushButton,
    QTableWidget,
    QTableWidgetItem,
    QVBoxLayout,
    QWidget,
)

from nsmatch.core.models.common import StageResult
from nsmatch.experiment.runner import ReportFrames


@dataclass(frozen=True)
class Column:
    """One table column bound to a field of report.csv, runs.csv or an oracle summary."""

    name: str
    header: str
    fmt: str | None = None  # None: text column

    @property
    def numeric(self) -> bool:
        return self.fmt is not None


REPORT_COLUMNS = (
    Column("method", "Method"),
    Column("metric", "Metric"),
    Column("sample", "Sample"),
    Column("mean", "Mean", ".4g"),
    Column("standard_error", "Std. error", ".2g"),
    Column("n_runs", "Runs", ".0f"),
)
RUN_COLUMNS = (
    Column("dgp_seed", "DGP seed", ".0f"),
    Column("train_seed", "Train seed", ".0f"),
    Column("method", "Method"),
    Column("metric", "Metric"),
    Column("sample", "Sample"),
    Column("value", "Value", ".4g"),
)


class MetricItem(QTableWidgetItem):
    """Numeric cell. NaN marks a skipped metric and sorts after every number."""

    def __init__(self, value: Any, fmt: str) -> None:
        v = math.nan if value is None else float(value)
        super().__init__("-" if math.isnan(v) else format(v, fmt))
        self.value = v
        self.setTextAlignment(Qt.AlignRight | Qt.AlignVCenter)

    def sort_key(self) -> tuple[bool, float]:
        return (math.isnan(self.value), 0.0 if math.isnan(self.value) else self.value)

    def __lt__(self, other: QTableWidgetItem) -> bool:  # type: ignore[override]
        if isinstance(other, MetricItem):
            return self.sort_key() < other.sort_key()
        return super().__lt__(other)


def schema_table(title: str, columns: tuple[Column, ...], sortable: bool = False) -> tuple[QGroupBox, QTableWidget]:
    gb = QGroupBox(title)
    t = QTableWidget(0, len(columns))
    t.setHorizontalHeaderLabels([c.header for c in columns])
    for i, c in enumerate(columns):
        t.horizontalHeaderItem(i).setToolTip(c.name)
    t.setEditTriggers(QAbstractItemView.NoEditTriggers)
    t.setSelectionBehavior(QAbstractItemView.SelectRows)
    t.setAlternatingRowColors(True)
    t.setSortingEnabled(sortable)
    t.horizontalHeader().setStretchLastSection(True)
    QVBoxLayout(gb).addWidget(t)
    return gb, t


def set_row(t: QTableWidget, r: int, columns: tuple[Column, ...], record: Mapping[str, Any]) -> None:
    for c, col in enumerate(columns):
        value = record.get(col.name)
        if col.numeric:
            assert col.fmt is not None
            t.setItem(r, c, MetricItem(value, col.fmt))
        else:
            t.setItem(r, c, QTableWidgetItem("" if value is None else str(value)))


class ReportPage(QWidget):
    openRequested = Signal(str)

    def __init__(self, report_dir: str = "out") -> None:
        super().__init__()

        self._dir = QLineEdit(report_dir)
        open_btn = QPushButton("Open")
        open_btn.clicked.connect(self._on_open_clicked)  # type: ignore[arg-type]

        dir_row = QHBoxLayout()
        dir_row.addWidget(QLabel("Report Dir"))
        dir_row.addWidget(self._dir, 1)
        dir_row.addWidget(open_btn)

        self._status = QLabel("-")
        self._created = QLabel("-")
        self._runs = QLabel("-")
        self._notes = QLabel("")
        self._notes.setWordWrap(True)
        for lbl in (self._status, self._created, self._runs):
            lbl.setTextInteractionFlags(Qt.TextSelectableByMouse)

        summary = QGroupBox("Summary")
        grid = QGridLayout(summary)
        grid.addWidget(QLabel("Status"), 0, 0)
        grid.addWidget(self._status, 0, 1)
        grid.addWidget(QLabel("Created"), 1, 0)
        grid.addWidget(self._created, 1, 1)
        grid.addWidget(QLabel("Runs / Jobs"), 2, 0)
        grid.addWidget(self._runs, 2, 1)
        grid.addWidget(QLabel("Notes"), 3, 0)
        grid.addWidget(self._notes, 3, 1)

        self.report = schema_table("Aggregated (mean and standard error)", REPORT_COLUMNS)
        self.runs = schema_table("Per-run values", RUN_COLUMNS, sortable=True)

        layout = QVBoxLayout(self)
        layout.addLayout(dir_row)
        layout.addWidget(summary)
        layout.addWidget(self.report[0], 1)
        layout.addWidget(self.runs[0], 1)

    def report_dir(self) -> str:
        return self._dir.text().strip() or "out"

    def _on_open_clicked(self) -> None:
        self.openRequested.emit(self.report_dir())

    def set_data(self, result: StageResult[ReportFrames]) -> None:
        d = result.data
        self._status.setText(str(result.status))
        self._notes.setText("\n".join(result.notes))
        self._created.setText(str(d.manifest.get("created_utc", "-")))
        jobs = d.manifest.get("jobs", "-")
        n_runs = d.runs[["dgp_seed", "train_seed"]].drop_duplicates().shape[0] if not d.runs.empty else 0
        self._runs.setText(f"{n_runs} / {jobs}")

        self._fill(self.report[1], d.report, REPORT_COLUMNS)
        self._fill(self.runs[1], d.runs, RUN_COLUMNS)

    def _fill(self, t: QTableWidget, frame: pd.DataFrame, columns: tuple[Column, ...]) -> None:
        sort_col = t.horizontalHeader().sortIndicatorSection()
        sort_order = t.horizontalHeader().sortIndicatorOrder()
        sorting = t.isSortingEnabled()

        t.setSortingEnabled(False)
        t.setRowCount(frame.shape[0])
        for r, record in enumerate(frame.to_dict(orient="records")):
            set_row(t, r, columns, record)
        t.resizeColumnsToContents()

        if sorting:
            t.setSortingEnabled(True)
            t.sortItems(sort_col, sort_order)
