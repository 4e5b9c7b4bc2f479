"""Synthetic dataset generation, persistence and the chronological split."""

import json

import numpy as np
import pytest

from voltreg.data import (
    HOURS,
    TAN_PHI,
    MalformedRowError,
    SchemaError,
    capacity_factor,
    generate_synthetic,
    load_dataset,
    save_dataset,
)

CAPS = (400.0, 300.0, 250.0, 500.0, 350.0, 200.0)


@pytest.fixture(scope="module")
def year():
    return generate_synthetic(7, 365, CAPS)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(3, 50, CAPS)


def test_same_seed_gives_identical_files(tmp_path):
    a = save_dataset(generate_synthetic(11, 30, CAPS), tmp_path / "a")
    b = save_dataset(generate_synthetic(11, 30, CAPS), tmp_path / "b")
    assert (a.parent / "dataset.csv").read_bytes() == (b.parent / "dataset.csv").read_bytes()
    assert a.read_bytes() == b.read_bytes()


def test_different_seeds_differ():
    a = generate_synthetic(1, 30, CAPS)
    b = generate_synthetic(2, 30, CAPS)
    assert not np.array_equal(a.pv_target, b.pv_target)


def test_too_few_days():
    with pytest.raises(ValueError):
        generate_synthetic(0, 5, CAPS)


def test_night_hours_produce_nothing(year):
    # hours whose forecast irradiance is zero on every day are night hours
    night = np.all(year.pv_irr == 0, axis=(0, 1))
    assert night.sum() >= 6
    assert np.all(year.pv_target[:, :, night] == 0)
    assert np.all(year.pv_past[:, :, night] == 0)


def test_pv_bounded_by_capacity(year):
    cap = np.array(CAPS)[None, :, None]
    assert np.all(year.pv_target >= 0)
    assert np.all(year.pv_target <= cap)


def test_capacity_factor_is_plausible(year):
    assert 0.10 <= capacity_factor(year) <= 0.25


def test_series_shapes_and_reactive_demand(small):
    rec = small.record(4)
    assert rec.pv_target.shape == (len(CAPS), HOURS)
    assert rec.load_target.shape == (HOURS,)
    np.testing.assert_allclose(rec.load_q_target / rec.load_target, np.sqrt(1 / 0.95 ** 2 - 1))
    assert TAN_PHI == pytest.approx(0.3286841051788632)


def test_split_is_chronological(year):
    assert year.split == 292
    assert year.day[year.train_idx].max() < year.day[year.test_idx].min()
    with pytest.raises(SchemaError):
        year.with_split(0)


def test_round_trip(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    back = load_dataset(manifest)
    for name in ("day", "pv_capacity", "pv_past", "pv_temp", "pv_irr", "pv_target",
                 "load_past", "load_temp", "load_target"):
        np.testing.assert_array_equal(getattr(back, name), getattr(small, name))
    assert back.split == small.split
    assert back.provenance == json.loads(json.dumps(small.provenance))


def test_truncated_file_reports_line(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    csv_path = tmp_path / "dataset.csv"
    lines = csv_path.read_text().splitlines()
    # cut the last row in half
    lines[-1] = lines[-1][: len(lines[-1]) // 2]
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRowError) as exc:
        load_dataset(manifest)
    assert exc.value.line == len(lines)
    assert f"line {len(lines)}" in str(exc.value)


def test_missing_rows_are_reported(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    csv_path = tmp_path / "dataset.csv"
    lines = csv_path.read_text().splitlines()
    csv_path.write_text("\n".join(lines[:-7]) + "\n")
    with pytest.raises(MalformedRowError):
        load_dataset(manifest)


def test_missing_column_is_named(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    csv_path = tmp_path / "dataset.csv"
    text = csv_path.read_text().replace("target_h05", "target_hx", 1)
    csv_path.write_text(text)
    with pytest.raises(SchemaError, match="target_h05"):
        load_dataset(manifest)


def test_schema_version_is_checked(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    doc = json.loads(manifest.read_text())
    doc["schema_version"] = 99
    manifest.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_dataset(manifest)


def test_invariants_checked_on_load(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    csv_path = tmp_path / "dataset.csv"
    lines = csv_path.read_text().splitlines()
    fields = lines[1].split(",")
    # a PV target above capacity
    fields[-1] = "1e9"
    lines[1] = ",".join(fields)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError):
        load_dataset(manifest)


def test_unparseable_value(small, tmp_path):
    manifest = save_dataset(small, tmp_path)
    csv_path = tmp_path / "dataset.csv"
    lines = csv_path.read_text().splitlines()
    fields = lines[3].split(",")
    fields[5] = "abc"
    lines[3] = ",".join(fields)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRowError) as exc:
        load_dataset(manifest)
    assert exc.value.line == 4
