from __future__ import annotations

from dataclasses import asdict

from PySide6.QtCore import Signal
from PySide6.QtWidgets import (
    QComboBox,
    QGridLayout,
    QGroupBox,
    QHBoxLayout,
    QPushButton,
    QLabel,
    QSpinBox,
    QTableWidget,
    QVBoxLayout,
    QWidget,
)

from nsmatch.experiment.oracles import SUITES, OracleSummary
from nsmatch.gui.pages.report_page import Column, schema_table, set_row

ORACLE_COLUMNS = (
    Column("suite", "Suite"),
    Column("result", "Result"),
    Column("trials", "Trials", ".0f"),
    Column("worst_deviation", "Worst dev.", ".3e"),
    Column("worst_seed", "Worst seed", ".0f"),
    Column("tolerance", "Tolerance", ".0e"),
    Column("failures", "Failures", ".0f"),
    Column("failing_seed", "First failing seed", ".0f"),
    Column("elapsed_s", "Time (s)", ".2f"),
)


class OraclePage(QWidget):
    runRequested = Signal(dict)

    def __init__(self) -> None:
        super().__init__()

        self._suite = QComboBox()
        self._suite.addItems(["all", *sorted(SUITES)])
        self._trials = QSpinBox()
        self._trials.setRange(0, 100000)
        self._trials.setSpecialValueText("default")
        self._seed = QSpinBox()
        self._seed.setRange(0, 2**31 - 1)

        self._run_btn = QPushButton("Run")
        self._run_btn.clicked.connect(self._on_run_clicked)  # type: ignore[arg-type]

        cfg = QGroupBox("Oracle Check")
        grid = QGridLayout(cfg)
        grid.addWidget(QLabel("Suite"), 0, 0)
        grid.addWidget(self._suite, 0, 1)
        grid.addWidget(QLabel("Trials"), 1, 0)
        grid.addWidget(self._trials, 1, 1)
        grid.addWidget(QLabel("Seed"), 2, 0)
        grid.addWidget(self._seed, 2, 1)

        row = QHBoxLayout()
        row.addWidget(cfg)
        row.addStretch(1)
        row.addWidget(self._run_btn)

        self.results = schema_table("Results", ORACLE_COLUMNS)

        layout = QVBoxLayout(self)
        layout.addLayout(row)
        layout.addWidget(self.results[0], 1)

    def _on_run_clicked(self) -> None:
        suite = self._suite.currentText()
        trials = int(self._trials.value())
        self.runRequested.emit(
            {
                "suites": sorted(SUITES) if suite == "all" else [suite],
                "trials": trials or None,
                "seed": int(self._seed.value()),
            }
        )

    def set_busy(self, busy: bool) -> None:
        self._run_btn.setEnabled(not busy)

    def add_summary(self, s: OracleSummary) -> None:
        t: QTableWidget = self.results[1]
        r = t.rowCount()
        t.insertRow(r)
        set_row(t, r, ORACLE_COLUMNS, {**asdict(s), "result": "PASS" if s.passed else "FAIL"})
        t.resizeColumnsToContents()

    def clear(self) -> None:
        self.results[1].setRowCount(0)
