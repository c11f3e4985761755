"""Background jobs for long-running requests (training)."""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from .models import JobStatus

log = logging.getLogger(__name__)


class JobManager:
    """Runs jobs one at a time on a worker thread; status is kept in memory."""

    def __init__(self, workers: int = 1):
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="spgof-job")
        self._jobs: dict[str, JobStatus] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn: Callable, total: int = 0) -> JobStatus:
        """``fn(progress)`` is called with a ``progress(done, total)`` callback."""
        job = JobStatus(id=uuid.uuid4().hex[:12], kind=kind, state="queued", total=total)
        with self._lock:
            self._jobs[job.id] = job

        def progress(done: int, total: int) -> None:
            self._update(job.id, progress=done, total=total)

        def run():
            self._update(job.id, state="running")
            try:
                result = fn(progress)
            except Exception as exc:  # reported through the job status
                log.exception("job %s failed", job.id)
                self._update(job.id, state="failed", error=f"{type(exc).__name__}: {exc}")
                return
            payload = result.model_dump() if hasattr(result, "model_dump") else result
            self._update(job.id, state="done", result=payload)

        self._pool.submit(run)
        return self.get(job.id)

    def _update(self, job_id: str, **fields) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=fields)

    def get(self, job_id: str) -> JobStatus:
        with self._lock:
            if job_id not in self._jobs:
                raise KeyError(job_id)
            return self._jobs[job_id]

    def list(self) -> list[JobStatus]:
        with self._lock:
            return list(self._jobs.values())

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)
