#!/usr/bin/env python3
"""Export the Twonorm, Ringnorm and Letter benchmarks to libsvm text files.

The raw tables ship inside the `keel-ds` wheel on PyPI. Run:

    pip download --no-deps keel-ds -d /tmp/keel
    python3 scripts/export_benchmarks.py /tmp/keel/keel_ds-*.whl data/

Letter is exported as a binary problem: letter "Z" (label 1) against the
other 25 letters (label 0).
"""
import sys
import zipfile
from pathlib import Path

SOURCES = {
    "twonorm": ("keel_ds/data/balanced/raw/twonorm.dat", None),
    "ringnorm": ("keel_ds/data/balanced/raw/ring.dat", None),
    "letter": ("keel_ds/data/balanced/raw/letter.dat", "Z"),
}


def rows(text):
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("@"):
            yield [tok.strip() for tok in line.split(",")]


def to_libsvm(fields, positive):
    *features, label = fields
    if positive is not None:
        label = "1" if label == positive else "0"
    pairs = [f"{i}:{v}" for i, v in enumerate(features, start=1) if float(v) != 0.0]
    return " ".join([label, *pairs])


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    wheel, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as zf:
        for name, (member, positive) in SOURCES.items():
            text = zf.read(member).decode()
            lines = [to_libsvm(r, positive) for r in rows(text)]
            (out_dir / f"{name}.libsvm").write_text("\n".join(lines) + "\n")
            print(f"{name}: {len(lines)} rows")


if __name__ == "__main__":
    main()
