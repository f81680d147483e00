import faulthandler
import sys
from pathlib import Path

from PySide6.QtWidgets import QApplication

from nsmatch.gui.main_window import MainWindow


def run(report_dir: str | Path | None = None) -> int:
    faulthandler.enable()
    app = QApplication.instance() or QApplication(sys.argv)
    app.setApplicationName("nsmatch dashboard")

    w = MainWindow(Path(report_dir) if report_dir else None)
    w.show()

    return app.exec()
