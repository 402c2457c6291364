import time
import logging

logger = logging.getLogger(__name__)


class ProgressReporter:
    """Simple text-based progress notifications for long loops.

    Parameters
    ----------
    total : int
        Number of steps in the loop.
    unit : str
        Name of one step, used in the rate message.
    print_func : callable or None
        The function to call when updating progress. It is given a single str argument
        containing the progress message. Defaults to `logger.info`.
    every : int
        Only report when the percentage has advanced by at least this much.
    """

    def __init__(self, total, unit="steps", print_func=None, every=10):
        if print_func is None:
            print_func = logger.info
        self.print_func = print_func
        self.total = total
        self.unit = unit
        self.every = every
        self.reset()

    def reset(self):
        self.last_progress = -self.every
        self.last_step = 0
        self.t0 = time.time()

    def update(self, step):
        """Report after completing `step` (zero based)."""
        progress = int((step + 1) / self.total * 100)
        if progress - self.last_progress < self.every and step + 1 < self.total:
            return
        time_taken = time.time() - self.t0
        try:
            speed = (step + 1 - self.last_step) / time_taken
        except ZeroDivisionError:
            speed = float("inf")
        self.update_progress(progress, speed)
        self.last_progress = progress
        self.last_step = step + 1
        self.t0 = time.time()

    def update_progress(self, progress, speed=None):
        if speed is not None:
            self.print_func(f"Completed {progress}%, {speed:.1f} {self.unit}/second")
        else:
            self.print_func(f"Completed {progress}%")
