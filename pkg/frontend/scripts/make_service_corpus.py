"""Build a tiny four-finger corpus for integration tests.

Usage: python3 scripts/make_service_corpus.py OUTDIR
Prints the manifest path on stdout.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from record_fixture import build_manifest  # noqa: E402

if __name__ == "__main__":
    print(build_manifest(Path(sys.argv[1])))
