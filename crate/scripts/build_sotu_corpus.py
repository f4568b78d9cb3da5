"""Concatenate State of the Union addresses (US government works, public domain)
in chronological order into a single text corpus of a fixed byte budget.

Source: the `@stdlib/datasets-sotu` npm package (data/*.txt).

    npm pack @stdlib/datasets-sotu && tar xzf stdlib-datasets-sotu-*.tgz
    python scripts/build_sotu_corpus.py package/data data/sotu_500k.txt
"""
import pathlib
import sys

BUDGET = 500_000


def main(src, out_path):
    out = bytearray()
    for path in sorted(pathlib.Path(src).glob("*.txt")):
        text = path.read_text(encoding="utf-8").strip()
        text = text.encode("ascii", "ignore") + b"\n\n"
        out += text
        if len(out) >= BUDGET:
            break
    out = out[:BUDGET]
    pathlib.Path(out_path).write_bytes(bytes(out))
    print(len(out), "bytes")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
