#!/usr/bin/env python3
"""Convert the per-digit JSON files of the `mnist` npm package into IDX files.

Each input file `<digit>.json` holds {"data": [...]} with 784 floats in [0, 1]
per image. The images are shuffled with a fixed seed and split into a train
and a test set, written as train-images-idx3-ubyte etc. in the output folder.
"""

import argparse
import json
import random
import struct
from pathlib import Path


def write_idx(path: Path, dims, payload: bytes) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">I", 0x0800 | len(dims)))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits", type=Path, help="folder with 0.json .. 9.json")
    ap.add_argument("out", type=Path, help="output folder")
    ap.add_argument("--test", type=int, default=1000, help="number of test images")
    ap.add_argument("--seed", type=int, default=20200101)
    args = ap.parse_args()

    examples = []
    for digit in range(10):
        values = json.loads((args.digits / f"{digit}.json").read_text())["data"]
        if len(values) % 784:
            raise SystemExit(f"{digit}.json: length {len(values)} is not a multiple of 784")
        for k in range(0, len(values), 784):
            pixels = bytes(round(255 * min(1.0, max(0.0, v))) for v in values[k : k + 784])
            examples.append((pixels, digit))

    random.Random(args.seed).shuffle(examples)
    test, train = examples[: args.test], examples[args.test :]
    args.out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        write_idx(args.out / f"{name}-images-idx3-ubyte", (len(part), 28, 28), b"".join(p for p, _ in part))
        write_idx(args.out / f"{name}-labels-idx1-ubyte", (len(part),), bytes(d for _, d in part))
        print(f"{name}: {len(part)} images")


if __name__ == "__main__":
    main()
