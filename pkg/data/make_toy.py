"""Regenerate the bundled toy corpus (digit transliteration).

Source sentences are sequences of full-width digit tokens, target sentences
the corresponding English number words, so the task is word-for-word
dictionary translation plus the half-width normalization step.  Run from the
repository root:

    python3 data/make_toy.py
"""

import os

import numpy as np

WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven",
         "eight", "nine"]
FULLWIDTH = [chr(0xFF10 + d) for d in range(10)]


def make_split(rng, n):
    src_lines = []
    tgt_lines = []
    for _ in range(n):
        length = int(rng.integers(2, 8))
        digits = [int(d) for d in rng.integers(0, 10, length)]
        src_lines.append(" ".join(FULLWIDTH[d] for d in digits))
        tgt_lines.append(" ".join(WORDS[d] for d in digits))
    return src_lines, tgt_lines


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    rng = np.random.default_rng(20160801)
    for split, n in (("train", 200), ("dev", 40)):
        src, tgt = make_split(rng, n)
        for side, lines in (("src", src), ("tgt", tgt)):
            with open(os.path.join(here, f"{split}.{side}"), "w",
                      encoding="utf-8") as f:
                f.write("\n".join(lines) + "\n")
    print("wrote train (200 lines) and dev (40 lines)")


if __name__ == "__main__":
    main()
