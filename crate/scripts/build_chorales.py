"""Build a piano-roll JSON dataset from the Bach chorales bundled with music21.

Each chorale is quantized to quarter-note steps; a step holds the MIDI numbers
of every note sounding at its onset. The split is a seeded 60/20/20 shuffle.

    pip install music21
    python scripts/build_chorales.py data/jsb_chorales.json
"""
import json
import random
import sys

from music21 import corpus


def to_steps(score):
    notes = []
    for n in score.flatten().notes:
        start = float(n.offset)
        end = start + float(n.quarterLength)
        for p in n.pitches:
            notes.append((start, end, int(p.midi)))
    if not notes:
        return []
    total = int(max(e for _, e, _ in notes))
    steps = []
    for t in range(total):
        active = sorted({m for s, e, m in notes if s <= t < e})
        steps.append(active)
    return steps


def main(out_path):
    paths = sorted(str(p) for p in corpus.getComposer("bach"))
    seqs = []
    for path in paths:
        if not path.endswith((".mxl", ".xml", ".krn")):
            continue
        try:
            steps = to_steps(corpus.parse(path))
        except Exception:
            continue
        if len(steps) < 8:
            continue
        if any(m < 21 or m > 108 for s in steps for m in s):
            continue
        seqs.append(steps)
    random.Random(0).shuffle(seqs)
    n = len(seqs)
    n_train, n_valid = int(0.6 * n), int(0.2 * n)
    data = {
        "train": seqs[:n_train],
        "valid": seqs[n_train:n_train + n_valid],
        "test": seqs[n_train + n_valid:],
    }
    with open(out_path, "w") as f:
        json.dump(data, f, separators=(",", ":"))
    print({k: len(v) for k, v in data.items()})


if __name__ == "__main__":
    main(sys.argv[1])
