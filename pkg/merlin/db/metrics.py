import csv
import logging
import os
import queue
import threading
from typing import Optional

from merlin.schemas.run import METRICS_COLUMNS, MetricsRow

logger = logging.getLogger(__name__)

_STOP = object()


class MetricsWriter:
    """
    Append-only metrics CSV.

    Any number of workers `put` rows; one consumer thread drains the queue
    and writes them in arrival order.
    """

    def __init__(self, path: str):
        self.path = path
        self.queue: "queue.Queue" = queue.Queue()
        self.rows_written = 0
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "MetricsWriter":
        new_file = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
        if new_file:
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(METRICS_COLUMNS)
        self._thread = threading.Thread(target=self._drain, name="metrics-writer", daemon=True)
        self._thread.start()
        return self

    def put(self, row: MetricsRow) -> None:
        self.queue.put(row)

    def _drain(self) -> None:
        with open(self.path, "a", newline="") as f:
            writer = csv.writer(f)
            while True:
                row = self.queue.get()
                if row is _STOP:
                    break
                writer.writerow(row.csv_values())
                f.flush()
                self.rows_written += 1

    def close(self) -> None:
        if self._thread is None:
            return
        self.queue.put(_STOP)
        self._thread.join()
        self._thread = None
        logger.info(f"Wrote {self.rows_written} metrics rows to {self.path}")

    def __enter__(self) -> "MetricsWriter":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()
