#!/usr/bin/env python3
"""Fetch MovieLens100K and write it in the original ml-100k file layout.

grouplens.org is not always reachable from build machines, so the ratings,
users and items are taken from the copy bundled inside the pytorch-widedeep
wheel on PyPI and written back out as u.data / u.user / u.item.
"""
import argparse
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

WHEEL = "pytorch-widedeep==1.7.0"
PREFIX = "pytorch_widedeep/datasets/data/MovieLens100k_"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/ml-100k")
    args = ap.parse_args()

    import pandas as pd

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                        "-q", "-d", tmp, WHEEL], check=True)
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            def load(name):
                return pd.read_parquet(io.BytesIO(z.read(PREFIX + name + ".parquet.brotli")))
            data, users, items = load("data"), load("users"), load("items")

    data[["user_id", "movie_id", "rating", "timestamp"]].to_csv(
        out / "u.data", sep="\t", header=False, index=False)
    users[["user_id", "age", "gender", "occupation", "zip_code"]].to_csv(
        out / "u.user", sep="|", header=False, index=False)
    items.to_csv(out / "u.item", sep="|", header=False, index=False, encoding="latin-1")
    print(f"wrote {len(data)} ratings, {len(users)} users, {len(items)} items to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
