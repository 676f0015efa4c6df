"""Run the timing benchmark with configs/timing.yaml and its acceptance checks.

Extra arguments are passed through, e.g. ``--workers 4 --out /tmp/timing``.
"""

import sys
from pathlib import Path

from glrt_toa.cli import run

if __name__ == "__main__":
    config = Path(__file__).resolve().parents[1] / "configs" / "timing.yaml"
    sys.exit(run(["timing", "--config", str(config), "--check"] + sys.argv[1:]))
