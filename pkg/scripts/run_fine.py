"""Run the fine-bench benchmark with configs/fine.yaml and its acceptance checks.

Extra arguments are passed through, e.g. ``--workers 4 --out /tmp/fine``.
"""

import sys
from pathlib import Path

from glrt_toa.cli import run

if __name__ == "__main__":
    config = Path(__file__).resolve().parents[1] / "configs" / "fine.yaml"
    sys.exit(run(["fine-bench", "--config", str(config), "--check"] + sys.argv[1:]))
