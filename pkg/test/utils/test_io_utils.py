import hashlib
import json

import numpy as np
import pytest

from rtegrad import __version__
from rtegrad.core.domain import GradientField, GridSpec
from rtegrad.core.errors import ConfigurationError
from rtegrad.models.schemas import load_config
from rtegrad.utils.io_utils import (
    SCHEMA_VERSION,
    ResultTable,
    density_table,
    emit_plotdata,
    file_sha256,
    format_value,
    gradient_table,
    read_csv,
    write_csv,
    write_manifest,
)


@pytest.fixture
def gradient_1d(line):
    domain, _ = line
    grid = GridSpec(domain, (4,))
    return GradientField(grid, np.array([0.1, -2.5e-7, 1.0 / 3.0, 0.0]))


def test_format_value():
    """Test values are written with 17 significant digits"""
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(np.float64(1.0 / 3.0)) == "0.33333333333333331"
    assert format_value(7) == "7"
    assert format_value(np.int64(12)) == "12"
    assert format_value(None) == ""
    assert format_value("mean4") == "mean4"


def test_gradient_table_layout(gradient_1d):
    """Test the gradient table columns and rows"""
    table = gradient_table(gradient_1d, "inverse-1d", "otd", 1000, 3)
    assert table.columns == [
        "experiment",
        "method",
        "N",
        "seed",
        "cell_center",
        "gradient_value",
    ]
    np.testing.assert_allclose(table.column("cell_center"), [-1.5, -0.5, 0.5, 1.5])
    stderr = GradientField(gradient_1d.grid, np.full(4, 0.01))
    with_err = gradient_table(gradient_1d, "inverse-1d", "otd", 1000, "mean2", stderr)
    assert with_err.columns[-1] == "stderr"


def test_two_dimensional_tables_use_both_coordinates(square):
    """Test 2D tables carry both cell-center coordinates"""
    domain, _ = square
    grid = GridSpec(domain, (2, 3))
    density = GradientField(grid, np.arange(6.0))
    table = density_table(density, "inverse-2d", 100, 1)
    assert table.columns[-3:] == ["x1", "x2", "density"]
    assert table.rows[1]["x1"] == pytest.approx(-0.5)
    assert table.rows[1]["x2"] == pytest.approx(0.0)


def test_csv_keeps_full_precision(tmp_path, gradient_1d):
    """Test writing and reading a CSV keeps every bit"""
    table = gradient_table(gradient_1d, "inverse-1d", "fvm", None, None)
    path = write_csv(table, tmp_path / "sub" / "gradient_fvm.csv")
    text = path.read_text()
    assert text.splitlines()[0] == (
        "experiment,method,N,seed,cell_center,gradient_value"
    )
    assert "\r" not in text
    assert "inverse-1d,fvm,,,-1.5,0.10000000000000001" in text
    back = read_csv(path)
    assert back.kind == "gradient"
    np.testing.assert_array_equal(back.column("gradient_value"), gradient_1d.values)


def test_read_csv_rejects_other_files(tmp_path):
    """Test reading refuses CSV files with unknown columns"""
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigurationError):
        read_csv(path)


def test_manifest_contents(tmp_path):
    """Test the manifest records the config hash, seeds and versions"""
    config = load_config(profile="inverse-1d")
    path = write_manifest(
        tmp_path, config, [1, 2], extra={"command": "grad-otd"}, name="run.json"
    )
    manifest = json.loads(path.read_text())
    expected = hashlib.sha256(config.canonical_json().encode("utf-8")).hexdigest()
    assert manifest["config_sha256"] == expected
    assert manifest["seeds"] == [1, 2]
    assert manifest["version"] == __version__
    assert manifest["schema_version"] == SCHEMA_VERSION
    assert manifest["command"] == "grad-otd"
    # the same inputs always give the same file
    again = write_manifest(
        tmp_path, config, [1, 2], extra={"command": "grad-otd"}, name="again.json"
    )
    assert again.read_text() == path.read_text()


def test_manifest_without_config(tmp_path):
    """Test a config-less manifest records only what it is given"""
    source = tmp_path / "table.csv"
    source.write_text("a\n")
    extra = {"source": str(source), "source_sha256": file_sha256(source)}
    path = write_manifest(tmp_path, None, [], extra, "plot.manifest.json")
    manifest = json.loads(path.read_text())
    assert "config" not in manifest and "config_sha256" not in manifest
    assert manifest["seeds"] == []
    expected = hashlib.sha256(b"a\n").hexdigest()
    assert manifest["source_sha256"] == expected


def test_emit_field_plotdata(tmp_path, gradient_1d):
    """Test field plot data are center and value columns"""
    table = gradient_table(gradient_1d, "inverse-1d", "otd", 10, 1)
    (path,) = emit_plotdata(table, tmp_path, "grad")
    lines = path.read_text().splitlines()
    assert path.name == "grad.dat"
    assert lines[0] == "cell_center value"
    assert lines[1] == "-1.5 0.10000000000000001"
    assert len(lines) == 5


def test_emit_convergence_plotdata(tmp_path):
    """Test convergence plot data hold log10 points and the fitted line"""
    rows = [{"N": n, "error": 3.0 / np.sqrt(n)} for n in (100, 10_000, 1_000_000)]
    table = ResultTable("convergence", ["N", "error"], rows)
    points, fit = emit_plotdata(table, tmp_path, "conv")
    assert points.name == "conv_points.dat" and fit.name == "conv_fit.dat"
    ends = np.loadtxt(fit, skiprows=1)
    slope = (ends[1, 1] - ends[0, 1]) / (ends[1, 0] - ends[0, 0])
    assert slope == pytest.approx(-0.5)
    assert ends[0, 0] == pytest.approx(2.0)


def test_emit_convergence_with_zero_error_skips_fit(tmp_path):
    """Test an exact match writes no fitted line"""
    rows = [{"N": n, "error": 0.0} for n in (10, 100, 1000)]
    table = ResultTable("convergence", ["N", "error"], rows)
    paths = emit_plotdata(table, tmp_path, "exact")
    assert [p.name for p in paths] == ["exact_points.dat"]
