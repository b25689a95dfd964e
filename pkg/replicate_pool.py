"""
Replicate worker pool for SGD Lab
Runs independent replicate blocks on worker threads and hands results back
keyed by block index, so the reduction never depends on completion order
"""
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence

import psutil

from errors import ConfigError

THREADS_ENV_VAR = 'SGDLAB_THREADS'


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """--threads beats SGDLAB_THREADS beats the physical core count"""
    if requested is None:
        env_value = os.environ.get(THREADS_ENV_VAR)
        if env_value:
            try:
                requested = int(env_value)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {env_value!r}")
    if requested is None:
        requested = psutil.cpu_count(logical=False) or 1
    if requested < 1:
        raise ConfigError(f"Thread count must be >= 1, got {requested}")
    return requested


class ReplicatePool:
    def __init__(self, threads: Optional[int] = None):
        self.threads = resolve_thread_count(threads)
        self._lock = threading.Lock()
        self._results: Dict[int, Any] = {}
        self._errors: Dict[int, BaseException] = {}

    def _run_block(self, index: int, func: Callable, payload: Any):
        try:
            result = func(payload)
            with self._lock:
                self._results[index] = result
        except Exception as e:
            with self._lock:
                self._errors[index] = e

    def map(self, func: Callable, payloads: Sequence[Any]) -> List[Any]:
        """Apply func to each payload; results come back in payload order"""
        with self._lock:
            self._results.clear()
            self._errors.clear()

        if self.threads == 1 or len(payloads) <= 1:
            for index, payload in enumerate(payloads):
                self._run_block(index, func, payload)
                if self._errors:
                    break
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                for index, payload in enumerate(payloads):
                    executor.submit(self._run_block, index, func, payload)

        if self._errors:
            # lowest block index wins so the reported failure is reproducible
            first = min(self._errors)
            logging.error(f"Replicate block {first} failed: {self._errors[first]}")
            raise self._errors[first]

        return [self._results[index] for index in range(len(payloads))]
