#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled with the `mnist` npm package.

The package ships 10000 real MNIST digits as JSON (pixels already divided by
255). They are shuffled with a fixed seed and split into train/test sets, then
written in the standard IDX layout under the four usual file names so the
loader treats them like the original distribution.

Usage: make_mnist_idx.py OUT_DIR [--train 6000] [--package-dir DIR]
"""
import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    return workdir / "package"


def write_idx(out: pathlib.Path, stem: str, samples):
    images = out / f"{stem}-images-idx3-ubyte"
    labels = out / f"{stem}-labels-idx1-ubyte"
    with open(images, "wb") as fi:
        fi.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            fi.write(bytes(pixels))
    with open(labels, "wb") as fl:
        fl.write(struct.pack(">II", 0x00000801, len(samples)))
        fl.write(bytes(label for _, label in samples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--train", type=int, default=6000)
    ap.add_argument("--package-dir", type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=20201211)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package_dir or fetch_package(pathlib.Path(tmp))
        samples = []
        for digit in range(10):
            data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
            for i in range(0, len(data), 784):
                pixels = [min(255, max(0, round(v * 255))) for v in data[i:i + 784]]
                samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "train", samples[:args.train])
    write_idx(out, "t10k", samples[args.train:])
    print(f"wrote {args.train} train / {len(samples) - args.train} test samples to {out}")


if __name__ == "__main__":
    main()
