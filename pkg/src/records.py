# -*- coding: utf-8 -*-
"""扫描记录与产物读写：CSV (pandas)、JSON lines、两列 .dat、npz 快照。

所有写入先落到目标目录下的临时文件，再 os.replace 原子替换。
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import GridSizeError

logger = logging.getLogger(__name__)

# lifespan-sweep CSV 的列顺序（docs/csv_schemas.md 同步维护）
SWEEP_COLUMNS = [
    "epsilon",
    "T_num",
    "T_num_high",
    "threshold",
    "dr",
    "dt_policy",
    "flags",
    "regime",
    "predicted_exponent",
    "steps",
    "wall_seconds",
    "config_hash",
]

FLAG_SEPARATOR = ";"


@dataclass(frozen=True)
class SweepRecord:
    """单次寿命测量；只追加、不修改。"""

    epsilon: float
    T_num: Optional[float]
    threshold: float
    dr: float
    dt_policy: str
    flags: tuple = ()
    regime: str = ""
    predicted_exponent: float = float("nan")
    T_num_high: Optional[float] = None
    steps: int = 0
    wall_seconds: float = 0.0
    config_hash: str = ""

    @property
    def usable(self) -> bool:
        return self.T_num is not None and not any(f.startswith("excluded") for f in self.flags)

    def as_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row["flags"] = FLAG_SEPARATOR.join(self.flags)
        return {k: row[k] for k in SWEEP_COLUMNS}


@dataclass
class SnapshotBundle:
    """一次运行的解快照：times (k,), r (J+1,), u/v (k, J+1)。"""

    times: np.ndarray
    r: np.ndarray
    u: np.ndarray
    v: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        k, j = self.times.size, self.r.size
        if self.u.shape != (k, j) or self.v.shape != (k, j):
            raise GridSizeError(
                f"快照形状不一致: times={k}, r={j}, u={self.u.shape}, v={self.v.shape}"
            )

    @property
    def dr(self) -> float:
        return float(self.r[1] - self.r[0]) if self.r.size > 1 else 0.0

    def __len__(self) -> int:
        return int(self.times.size)


@contextmanager
def atomic_path(path: str | Path) -> Iterator[Path]:
    """产出同目录下的临时路径；块正常结束后替换为目标文件。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    tmp_path = Path(tmp)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()


def write_text(path: str | Path, text: str) -> Path:
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    logger.info("写出 %s", path)
    return Path(path)


def write_csv(path: str | Path, rows: Iterable[Mapping[str, Any]] | pd.DataFrame, columns: Optional[Sequence[str]] = None) -> Path:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    with atomic_path(path) as tmp:
        frame.to_csv(tmp, index=False, float_format="%.12g")
    logger.info("写出 %s (%d 行)", path, len(frame))
    return Path(path)


def write_sweep_csv(path: str | Path, records: Sequence[SweepRecord]) -> Path:
    ordered = sorted(records, key=lambda rec: rec.epsilon)
    return write_csv(path, (rec.as_row() for rec in ordered), columns=SWEEP_COLUMNS)


def read_sweep_csv(path: str | Path) -> List[SweepRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"扫描记录不存在: {path}")
    frame = pd.read_csv(path, keep_default_na=True)
    records = []
    for row in frame.to_dict(orient="records"):
        flags = row.get("flags")
        records.append(
            SweepRecord(
                epsilon=float(row["epsilon"]),
                T_num=None if pd.isna(row["T_num"]) else float(row["T_num"]),
                threshold=float(row["threshold"]),
                dr=float(row["dr"]),
                dt_policy=str(row["dt_policy"]),
                flags=tuple(str(flags).split(FLAG_SEPARATOR)) if isinstance(flags, str) and flags else (),
                regime="" if pd.isna(row["regime"]) else str(row["regime"]),
                predicted_exponent=float(row["predicted_exponent"]),
                T_num_high=None if pd.isna(row["T_num_high"]) else float(row["T_num_high"]),
                steps=int(row["steps"]),
                wall_seconds=float(row["wall_seconds"]),
                config_hash="" if pd.isna(row["config_hash"]) else str(row["config_hash"]),
            )
        )
    return records


def _json_default(obj: Any) -> Any:
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    return str(obj)


def write_jsonl(path: str | Path, items: Iterable[Mapping[str, Any]]) -> Path:
    lines = [json.dumps(dict(item), ensure_ascii=False, sort_keys=True, default=_json_default) for item in items]
    return write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_jsonl(path: str | Path) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"JSON lines 文件不存在: {path}")
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_dat(path: str | Path, columns: Mapping[str, Sequence[float]]) -> Path:
    """多列文本：首行 # 列名，可直接交给 gnuplot / matplotlib.loadtxt。"""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[name], dtype=float) for name in names])
    with atomic_path(path) as tmp:
        np.savetxt(tmp, data, header=" ".join(names), fmt="%.12e")
    logger.info("写出 %s (%d 行)", path, data.shape[0])
    return Path(path)


def save_snapshots(path: str | Path, bundle: SnapshotBundle) -> Path:
    with atomic_path(path) as tmp:
        # np.savez 会给无后缀的路径补 .npz，这里直接写入文件对象
        with tmp.open("wb") as fh:
            np.savez(
                fh,
                times=bundle.times,
                r=bundle.r,
                u=bundle.u,
                v=bundle.v,
                metadata=np.array(json.dumps(bundle.metadata, default=_json_default)),
            )
    logger.info("写出快照 %s (%d 个时刻)", path, len(bundle))
    return Path(path)


def load_snapshots(path: str | Path) -> SnapshotBundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"快照不存在: {path}")
    with np.load(path, allow_pickle=False) as data:
        metadata = json.loads(str(data["metadata"])) if "metadata" in data.files else {}
        return SnapshotBundle(
            times=data["times"],
            r=data["r"],
            u=data["u"],
            v=data["v"],
            metadata=metadata,
        )
