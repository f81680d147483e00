from __future__ import annotations

from pathlib import Path
from typing import Any

from PySide6.QtCore import QThreadPool, QTimer
from PySide6.QtWidgets import (
    QMainWindow,
    QSplitter,
    QStackedWidget,
    QTreeWidget,
    QTreeWidgetItem,
)

from nsmatch.core.models.common import StageResult
from nsmatch.experiment.oracles import OracleSummary, run_oracle_check
from nsmatch.experiment.runner import read_outputs
from nsmatch.gui.pages.oracle_page import OraclePage
from nsmatch.gui.pages.report_page import ReportPage
from nsmatch.gui.workers import Channel, Worker, WorkerJob

RELOAD_MS = 30000


class MainWindow(QMainWindow):
    def __init__(self, report_dir: Path | None = None) -> None:
        super().__init__()
        self.setWindowTitle("nsmatch")
        self.resize(1100, 720)

        self._thread_pool = QThreadPool.globalInstance()
        # Report reloads and oracle runs are versioned separately so a timer
        # reload never drops a pending oracle result.
        self._req: dict[str, int] = {"report": 0, "oracles": 0}
        self._active_workers: set[Worker] = set()
        self._report_dir = report_dir

        self._nav = QTreeWidget()
        self._nav.setHeaderHidden(True)

        self._pages = QStackedWidget()
        self._report = ReportPage(str(report_dir) if report_dir else "out")
        self._oracles = OraclePage()
        self._pages.addWidget(self._report)
        self._pages.addWidget(self._oracles)

        self._nav_items: dict[str, int] = {"Report": 0, "Oracles": 1}
        for title in self._nav_items:
            self._nav.addTopLevelItem(QTreeWidgetItem([title]))
        self._nav.setCurrentItem(self._nav.topLevelItem(0))

        splitter = QSplitter()
        splitter.addWidget(self._nav)
        splitter.addWidget(self._pages)
        splitter.setStretchFactor(0, 0)
        splitter.setStretchFactor(1, 1)
        self.setCentralWidget(splitter)

        self.statusBar().showMessage("Ready")

        self._nav.currentItemChanged.connect(self._on_nav_changed)  # type: ignore[arg-type]
        self._report.openRequested.connect(self._on_open_report)  # type: ignore[arg-type]
        self._oracles.runRequested.connect(self.run_oracles)  # type: ignore[arg-type]

        self._reload_timer = QTimer(self)
        self._reload_timer.setInterval(RELOAD_MS)
        self._reload_timer.timeout.connect(self.refresh_report)  # type: ignore[arg-type]
        self._reload_timer.start()

        if report_dir is not None:
            self.refresh_report()

    def _start(self, job: WorkerJob) -> None:
        w = Worker(job)
        self._active_workers.add(w)
        w.signals.result.connect(self._on_worker_result)  # type: ignore[arg-type]
        w.signals.error.connect(self._on_worker_error)  # type: ignore[arg-type]
        w.signals.finished.connect(lambda _w=w: self._active_workers.discard(_w))  # type: ignore[arg-type]
        self._thread_pool.start(w)

    def _next_req(self, channel: Channel) -> int:
        self._req[channel] += 1
        return self._req[channel]

    def _on_nav_changed(self, current: QTreeWidgetItem | None, _prev: QTreeWidgetItem | None) -> None:
        if current is None:
            return
        idx = self._nav_items.get(current.text(0))
        if idx is not None:
            self._pages.setCurrentIndex(idx)

    def _on_open_report(self, path: str) -> None:
        self._report_dir = Path(path)
        self.refresh_report()

    def refresh_report(self) -> None:
        if self._report_dir is None:
            return
        target = self._report_dir
        self._start(WorkerJob(fn=lambda: read_outputs(target), channel="report", req_id=self._next_req("report"), label=str(target)))

    def run_oracles(self, cfg: dict) -> None:
        suites = list(cfg.get("suites") or [])
        trials = cfg.get("trials")
        seed = int(cfg.get("seed") or 0)

        def job() -> list[OracleSummary]:
            return [run_oracle_check(name, trials, seed) for name in suites]

        self._oracles.clear()
        self._oracles.set_busy(True)
        self.statusBar().showMessage(f"Running {len(suites)} oracle suite(s), seed {seed}")
        self._start(WorkerJob(fn=job, channel="oracles", req_id=self._next_req("oracles"), label="oracle-check"))

    def _on_worker_result(self, channel: str, req_id: int, res: Any) -> None:
        if req_id != self._req.get(channel):
            return
        if channel == "report" and isinstance(res, StageResult):
            self._on_report_result(res)
        elif channel == "oracles" and isinstance(res, list):
            self._on_oracle_result(res)

    def _on_report_result(self, res: StageResult) -> None:
        try:
            self._report.set_data(res)
        except Exception as e:  # noqa: BLE001
            self.statusBar().showMessage(f"Error: {e}")
            return
        self.statusBar().showMessage(
            f"Loaded {self._report_dir}: {res.ts.strftime('%F %T')} | Status: {res.status} | Warnings: {res.warning_count}"
        )

    def _on_oracle_result(self, res: list[OracleSummary]) -> None:
        self._oracles.set_busy(False)
        for summary in res:
            self._oracles.add_summary(summary)
        failed = sum(not s.passed for s in res)
        self.statusBar().showMessage(f"Oracles: {len(res) - failed} passed, {failed} failed")

    def _on_worker_error(self, channel: str, req_id: int, msg: str) -> None:
        if req_id != self._req.get(channel):
            return
        if channel == "oracles":
            self._oracles.set_busy(False)
        # Periodic reloads would stack modal dialogs.
        self.statusBar().showMessage(f"Error: {msg}")
