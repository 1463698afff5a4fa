"""
@file utilities.py
@brief Run-time support components for training runs
@details Only what the harness needs: a loss-trend monitor and the per-run
log file attachment.
"""

import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple, Union

RUN_LOG_FORMAT = '%(levelname)s - %(message)s'


@dataclass
class LossTrendMonitor:
    """
    @brief Flags windows in which the smoothed training loss went up
    @details Tracks:
    - an exponential moving average of the per-epoch loss
    - every ``window``-epoch span starting at or after ``warmup`` whose
      smoothed loss ends higher than it started
    """
    window: int = 20
    warmup: int = 10
    smoothing: float = 0.8
    smoothed: List[float] = field(default_factory=list)
    flagged: List[Tuple[int, int]] = field(default_factory=list)

    def update(self, epoch_loss: float) -> bool:
        """
        @brief Record one epoch's mean loss
        @return True if this epoch closes a flagged window
        """
        previous = self.smoothed[-1] if self.smoothed else epoch_loss
        self.smoothed.append(self.smoothing * previous + (1.0 - self.smoothing) * epoch_loss)
        end = len(self.smoothed) - 1
        start = end - self.window
        if start < self.warmup:
            return False
        if self.smoothed[end] > self.smoothed[start]:
            self.flagged.append((start, end))
            logging.warning(f"Smoothed loss rose from {self.smoothed[start]:.6f} (epoch {start}) "
                            f"to {self.smoothed[end]:.6f} (epoch {end})")
            return True
        return False

    @property
    def is_flagged(self) -> bool:
        return bool(self.flagged)


@contextmanager
def run_log(path: Union[str, Path], level: int = logging.INFO) -> Iterator[logging.Handler]:
    """
    Attach a timestamp-free FileHandler to the root logger for one run.

    Two identical runs write byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode='w', encoding='utf-8')
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(RUN_LOG_FORMAT))
    root = logging.getLogger()
    previous_level = root.level
    if root.level == logging.NOTSET or root.level > level:
        root.setLevel(level)
    root.addHandler(handler)
    try:
        yield handler
    finally:
        root.removeHandler(handler)
        root.setLevel(previous_level)
        handler.close()


def atomic_write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    """Write sorted-key JSON through a temporary file and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp = path.with_suffix(path.suffix + '.tmp')
    with open(temp, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    os.replace(temp, path)
    return path
