"""Run the resolvability benchmark with configs/resolvability.yaml and its acceptance checks.

Extra arguments are passed through, e.g. ``--workers 4 --out /tmp/resolvability``.
"""

import sys
from pathlib import Path

from glrt_toa.cli import run

if __name__ == "__main__":
    config = Path(__file__).resolve().parents[1] / "configs" / "resolvability.yaml"
    sys.exit(run(["resolvability", "--config", str(config), "--check"] + sys.argv[1:]))
