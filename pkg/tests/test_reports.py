import json

import numpy as np
import pytest

from core.errors import ReportIoError
from core.reports import (
    METRIC_COLUMNS, MetricRow, read_metric_csv, write_confusion_csv, write_json, write_metric_csv, write_table_csv,
)


def test_metric_csv_keeps_column_order_and_blanks(tmp_path):
    path = tmp_path / "m.csv"
    write_metric_csv([MetricRow(0, 1, "train", 0.5, recon=0.25), MetricRow(0, 2, "val", 0.125, mae=1e-4)], path)
    assert path.read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)
    rows = read_metric_csv(path)
    assert rows[0]["recon"] == "0.25" and rows[0]["kl"] == ""
    assert float(rows[1]["mae"]) == 1e-4
    assert rows[1]["split"] == "val"


def test_json_handles_numpy_values(tmp_path):
    path = tmp_path / "nested" / "out.json"
    write_json({"a": np.float32(0.5), "b": np.arange(3), "c": np.int64(4)}, path)
    assert json.loads(path.read_text()) == {"a": 0.5, "b": [0, 1, 2], "c": 4}
    assert [p.name for p in path.parent.iterdir()] == ["out.json"]


def test_confusion_grid(tmp_path):
    path = tmp_path / "confusion.csv"
    write_confusion_csv(np.array([[3, 1], [0, 4]]), ["delay", "ringmod"], path)
    assert path.read_text().splitlines() == ["true\\pred,delay,ringmod", "delay,3,1", "ringmod,0,4"]


def test_table_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_table_csv(("parameter", "mmi_nats"), [("drive", 1.5), ("muffle", 0.25)], path)
    assert path.read_text().splitlines() == ["parameter,mmi_nats", "drive,1.5", "muffle,0.25"]


def test_unwritable_json_target_raises_report_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(ReportIoError) as info:
        write_json({"a": 1}, blocker / "out.json")
    assert info.value.exit_code == 3
    assert list(tmp_path.iterdir()) == [blocker]


def test_unwritable_csv_target_raises_report_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(ReportIoError):
        write_table_csv(("a",), [(1,)], blocker / "t.csv")
