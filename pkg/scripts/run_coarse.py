"""Run the coarse-bench benchmark with configs/coarse.yaml and its acceptance checks.

Extra arguments are passed through, e.g. ``--workers 4 --out /tmp/coarse``.
"""

import sys
from pathlib import Path

from glrt_toa.cli import run

if __name__ == "__main__":
    config = Path(__file__).resolve().parents[1] / "configs" / "coarse.yaml"
    sys.exit(run(["coarse-bench", "--config", str(config), "--check"] + sys.argv[1:]))
