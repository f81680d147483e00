import os

import pytest

os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
QtWidgets = pytest.importorskip("PySide6.QtWidgets")

from nsmatch.experiment import oracles, runner  # noqa: E402
from nsmatch.experiment.config import ExperimentConfig  # noqa: E402
from nsmatch.gui.main_window import MainWindow  # noqa: E402
from nsmatch.gui.pages.oracle_page import OraclePage  # noqa: E402
from nsmatch.gui.pages.report_page import REPORT_COLUMNS, MetricItem, ReportPage  # noqa: E402
from nsmatch.gui.workers import Worker, WorkerJob  # noqa: E402


@pytest.fixture(scope="module")
def qapp():
    return QtWidgets.QApplication.instance() or QtWidgets.QApplication([])


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("report")
    cfg = ExperimentConfig.from_dict(
        {"dgp": {"n": 120, "d_observed": 3, "d_latent": 1}, "methods": ["raw_x", "no_matching"], "dgp_seeds": [0, 1]}
    )
    runner.run_experiment(cfg, out_dir=out)
    return out


def test_metric_item_sorts_by_value_with_nan_last(qapp):
    nine, ten, skipped = MetricItem(9.0, ".0f"), MetricItem(10.0, ".0f"), MetricItem(float("nan"), ".4g")
    assert nine < ten and not ten < nine
    assert ten < skipped and not skipped < nine
    assert (nine.text(), skipped.text()) == ("9", "-")
    assert MetricItem(None, ".4g").text() == "-"


def test_report_page_fills_tables(qapp, report_dir):
    page = ReportPage(str(report_dir))
    loaded = runner.read_outputs(report_dir)
    page.set_data(loaded)
    assert page.report[1].rowCount() == len(loaded.data.report)
    headers = [page.report[1].horizontalHeaderItem(i).toolTip() for i in range(len(REPORT_COLUMNS))]
    assert set(headers) <= set(loaded.data.report.columns)
    assert isinstance(page.report[1].item(0, 3), MetricItem)
    assert page.runs[1].rowCount() == len(loaded.data.runs)


def test_report_page_open_signal(qapp, report_dir):
    page = ReportPage(str(report_dir))
    seen = []
    page.openRequested.connect(seen.append)
    page._on_open_clicked()
    assert seen == [str(report_dir)]


def test_oracle_page_request_and_results(qapp):
    page = OraclePage()
    requests = []
    page.runRequested.connect(requests.append)
    page._on_run_clicked()
    assert requests[0]["suites"] == sorted(oracles.SUITES) and requests[0]["trials"] is None
    page.add_summary(oracles.run_oracle_check("tv_equality", trials=2))
    assert page.results[1].item(0, 1).text() == "PASS"
    page.clear()
    assert page.results[1].rowCount() == 0


def test_main_window_builds(qapp, report_dir):
    w = MainWindow(report_dir)
    w._reload_timer.stop()
    w._thread_pool.waitForDone()
    assert w._pages.count() == 2
    w._on_worker_result("report", w._req["report"], runner.read_outputs(report_dir))
    assert "Loaded" in w.statusBar().currentMessage()


def test_main_window_ignores_stale_results(qapp, report_dir):
    w = MainWindow()
    w._reload_timer.stop()
    w.statusBar().showMessage("Ready")
    w._req["report"] = 2
    w._on_worker_result("report", 1, runner.read_outputs(report_dir))
    w._on_worker_error("report", 1, "late failure")
    assert w.statusBar().currentMessage() == "Ready"


def test_worker_reports_errors_with_label(qapp):
    def boom():
        raise ValueError("no report.csv")

    worker = Worker(WorkerJob(fn=boom, channel="report", req_id=3, label="out"))
    errors, results = [], []
    worker.signals.error.connect(lambda *args: errors.append(args))
    worker.signals.result.connect(lambda *args: results.append(args))
    worker.run()
    assert errors == [("report", 3, "out: no report.csv")]
    assert results == []
