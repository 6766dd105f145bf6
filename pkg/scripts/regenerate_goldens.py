"""Rewrite tests/golden/*.kv from the current code.

Run only after an intentional change to simulation or filter behaviour; the
diff of the golden files is the record of what moved.
"""

import sys
import tempfile
from pathlib import Path

from uwbfusion.cli import main

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
SEED = 1
DURATION = 8.0
KINDS = ("static_square", "far_anchor", "translating_target", "rotating_target")


def regenerate() -> int:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for kind in KINDS:
        with tempfile.TemporaryDirectory() as tmp:
            code = main(["run", str(ROOT / "configs" / f"{kind}.ini"), "--out", tmp,
                         "--seed", str(SEED), "--duration", str(DURATION)])
            if code != 0:
                print(f"{kind}: run exited {code}", file=sys.stderr)
                return code
            (GOLDEN / f"{kind}.kv").write_text((Path(tmp) / "summary.kv").read_text())
        print(f"wrote {GOLDEN / (kind + '.kv')}")
    return 0


if __name__ == "__main__":
    sys.exit(regenerate())
