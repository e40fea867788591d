#!/usr/bin/env python3
"""Build the local data directory used by the acceptance suite.

Pulls the `mlxtend` wheel from the package index (no install) and extracts
its bundled 5,000-image MNIST subset, writing it as IDX files, plus the
Boston housing table as CSV. Pass a yacht CSV via --yacht to also stage it.
"""
import argparse
import gzip
import pathlib
import shutil
import struct
import subprocess
import tempfile
import zipfile


def write_idx(path, type_code, dims, payload):
    with open(path, "wb") as f:
        f.write(bytes([0, 0, type_code, len(dims)]))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--yacht", help="optional path to yacht_hydrodynamics.data")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            ["pip", "download", "--no-deps", "mlxtend==0.24.0", "-d", tmp],
            check=True,
            stdout=subprocess.DEVNULL,
        )
        wheel = next(pathlib.Path(tmp).glob("mlxtend-*.whl"))
        z = zipfile.ZipFile(wheel)
        rows = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode().splitlines()
        images = bytearray()
        labels = bytearray()
        for row in rows:
            vals = [int(float(v)) for v in row.split(",")]
            images.extend(vals[:784])
            labels.append(vals[784])
        n = len(rows)
        write_idx(out / "mnist5k-images-idx3-ubyte", 0x08, [n, 28, 28], bytes(images))
        write_idx(out / "mnist5k-labels-idx1-ubyte", 0x08, [n], bytes(labels))
        (out / "boston_housing.csv").write_bytes(z.read("mlxtend/data/data/boston_housing.csv"))

    if args.yacht:
        # UCI ships whitespace-separated values; normalize to CSV.
        lines = [",".join(l.split()) for l in open(args.yacht) if l.strip()]
        (out / "yacht.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote data to {out}")


if __name__ == "__main__":
    main()
