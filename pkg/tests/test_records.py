# -*- coding: utf-8 -*-
import math

import numpy as np
import pandas as pd
import pytest

from src.errors import GridSizeError
from src.records import (
    SWEEP_COLUMNS,
    SnapshotBundle,
    SweepRecord,
    atomic_path,
    load_snapshots,
    read_jsonl,
    read_sweep_csv,
    save_snapshots,
    write_csv,
    write_dat,
    write_jsonl,
    write_sweep_csv,
)


def _record(eps, T, flags=()):
    return SweepRecord(
        epsilon=eps,
        T_num=T,
        threshold=1e6,
        dr=0.01,
        dt_policy="cfl-nonlinear-timescale",
        flags=flags,
        regime="Strauss",
        predicted_exponent=-2.0,
        T_num_high=None if T is None else T * 1.001,
        steps=1234,
        wall_seconds=0.5,
        config_hash="abc123",
    )


def test_sweep_csv_keeps_columns_and_order(tmp_path):
    path = tmp_path / "sweep" / "lifespan_sweep.csv"
    records = [_record(0.4, 12.5), _record(0.1, None, ("excluded: no blow-up",)), _record(0.2, 40.0, ("a", "b"))]
    write_sweep_csv(path, records)
    frame = pd.read_csv(path)
    assert list(frame.columns) == SWEEP_COLUMNS
    assert list(frame["epsilon"]) == [0.1, 0.2, 0.4]

    back = read_sweep_csv(path)
    assert [rec.epsilon for rec in back] == [0.1, 0.2, 0.4]
    assert back[0].T_num is None and not back[0].usable
    assert back[0].flags == ("excluded: no blow-up",)
    assert back[1].flags == ("a", "b")
    assert back[2].T_num == pytest.approx(12.5)
    assert back[2].regime == "Strauss" and back[2].config_hash == "abc123"
    assert back[2].steps == 1234


def test_usable_records():
    assert _record(0.1, 3.0).usable
    assert not _record(0.1, None).usable
    assert not _record(0.1, 3.0, ("excluded: manual",)).usable


def test_read_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_sweep_csv(tmp_path / "none.csv")
    with pytest.raises(FileNotFoundError):
        read_jsonl(tmp_path / "none.jsonl")
    with pytest.raises(FileNotFoundError):
        load_snapshots(tmp_path / "none.npz")


def test_atomic_path_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"
    with pytest.raises(RuntimeError):
        with atomic_path(target) as tmp:
            tmp.write_text("half", encoding="utf-8")
            raise RuntimeError("boom")
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


def test_jsonl_handles_numpy_values(tmp_path):
    path = tmp_path / "items.jsonl"
    write_jsonl(path, [{"x": np.float64(1.5), "arr": np.arange(3), "flags": ("a",)}, {"x": 2}])
    items = read_jsonl(path)
    assert items == [{"arr": [0, 1, 2], "flags": ["a"], "x": 1.5}, {"x": 2}]


def test_dat_header_and_columns(tmp_path):
    path = tmp_path / "curve.dat"
    write_dat(path, {"t": [0.0, 1.0, 2.0], "F": [1.0, 2.0, 4.0]})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# t F"
    data = np.loadtxt(path)
    assert data.shape == (3, 2)
    assert data[:, 1] == pytest.approx([1.0, 2.0, 4.0])


def test_write_csv_from_rows(tmp_path):
    path = write_csv(tmp_path / "rows.csv", [{"a": 1, "b": math.pi}], columns=["a", "b"])
    frame = pd.read_csv(path)
    assert frame.loc[0, "b"] == pytest.approx(math.pi, rel=1e-11)


def test_snapshot_bundle_round_trip(tmp_path):
    r = np.linspace(0.0, 1.0, 11)
    bundle = SnapshotBundle(
        times=[0.0, 0.5],
        r=r,
        u=np.vstack([r, 2 * r]),
        v=np.zeros((2, 11)),
        metadata={"epsilon": 0.2, "n": 3},
    )
    assert len(bundle) == 2 and bundle.dr == pytest.approx(0.1)
    path = save_snapshots(tmp_path / "snap.npz", bundle)
    back = load_snapshots(path)
    assert np.array_equal(back.u, bundle.u)
    assert np.array_equal(back.times, bundle.times)
    assert back.metadata == {"epsilon": 0.2, "n": 3}


def test_snapshot_shape_mismatch():
    with pytest.raises(GridSizeError):
        SnapshotBundle(times=[0.0, 1.0], r=np.zeros(5), u=np.zeros((2, 4)), v=np.zeros((2, 5)))
