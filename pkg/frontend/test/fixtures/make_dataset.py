"""Build a one-record synthetic dataset for the UI contract test.

The stored pose and focal length are stripped so the backend's audit
command can only succeed after the UI commits an alignment.
"""
import json
import sys
from pathlib import Path

HERE = Path(__file__).resolve()
sys.path.insert(0, str(HERE.parents[3] / "tests"))

from _synth import make_dataset  # noqa: E402


def main() -> None:
    root = Path(sys.argv[1])
    make_dataset(root, n_records=1)
    path = root / "annotations.json"
    doc = json.loads(path.read_text())
    for record in doc:
        record["pose"] = None
        record["focal"] = None
    path.write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
