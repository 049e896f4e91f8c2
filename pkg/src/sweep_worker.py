# -*- coding: utf-8 -*-
"""独立运行的并行执行器：进程池 + 进度回调，结果按提交顺序返回。"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Iterable, List, Optional

logger = logging.getLogger(__name__)

# progress(current, total, label)
ProgressCallback = Callable[[int, int, str], None]


class SweepWorker:
    """在进程池中执行一组独立任务，并报告进度。

    max_workers = 1 时在当前进程内顺序执行（便于调试和测试）。
    完成顺序不影响返回顺序，因此扫描结果与并行度无关。
    """

    def __init__(self, max_workers: int = 1, progress: Optional[ProgressCallback] = None, label: str = "运行"):
        if max_workers < 1:
            raise ValueError(f"max_workers 必须 >= 1, 得到 {max_workers}")
        self._max_workers = max_workers
        self._progress = progress
        self._label = label

    def _emit(self, current: int, total: int) -> None:
        label = "%s... (%d/%d)" % (self._label, current, total)
        logger.debug(label)
        if self._progress is not None:
            self._progress(current, total, label)

    def map(self, fn: Callable[..., Any], *iterables: Iterable[Any]) -> List[Any]:
        jobs = list(zip(*iterables))
        total = len(jobs)
        if self._max_workers == 1 or total <= 1:
            results = []
            for i, args in enumerate(jobs):
                results.append(fn(*args))
                self._emit(i + 1, total)
            return results

        results: List[Any] = [None] * total
        with ProcessPoolExecutor(max_workers=min(self._max_workers, total)) as pool:
            futures = {pool.submit(fn, *args): i for i, args in enumerate(jobs)}
            for done, future in enumerate(as_completed(futures), start=1):
                # 任一任务异常直接向上抛出，未完成的任务随进程池关闭而取消
                results[futures[future]] = future.result()
                self._emit(done, total)
        return results
