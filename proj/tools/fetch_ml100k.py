#!/usr/bin/env python3
"""Materialize MovieLens-100k as plain CSV files under data/ml-100k/.

The GroupLens site is not always reachable from build machines, so the
ratings are taken from the copy bundled inside the RecBole wheel on PyPI.

Outputs:
  ratings.csv  user,item,rating,timestamp
  genres.csv   item,topic
  titles.csv   item,title
"""

import argparse
import csv
import pathlib
import subprocess
import sys
import tempfile
import zipfile

WHEEL_PREFIX = "recbole/dataset_example/ml-100k/ml-100k"


def find_wheel(cache: pathlib.Path) -> pathlib.Path:
    wheels = sorted(cache.glob("recbole-*.whl"))
    if wheels:
        return wheels[-1]
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
         "-d", str(cache), "recbole==1.2.1"],
        check=True,
    )
    return sorted(cache.glob("recbole-*.whl"))[-1]


def read_table(wheel: zipfile.ZipFile, suffix: str):
    text = wheel.read(WHEEL_PREFIX + suffix).decode("utf-8")
    rows = [line.split("\t") for line in text.splitlines() if line]
    return rows[1:]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/ml-100k")
    parser.add_argument("--wheel-cache", default=None)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        cache = pathlib.Path(args.wheel_cache or tmp)
        with zipfile.ZipFile(find_wheel(cache)) as wheel:
            inter = read_table(wheel, ".inter")
            items = read_table(wheel, ".item")

    with open(out / "ratings.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user", "item", "rating", "timestamp"])
        for user, item, rating, ts in inter:
            w.writerow([user, item, int(float(rating)), int(float(ts))])

    with open(out / "genres.csv", "w", newline="") as g, \
            open(out / "titles.csv", "w", newline="") as t:
        gw = csv.writer(g, lineterminator="\n")
        tw = csv.writer(t, lineterminator="\n")
        gw.writerow(["item", "topic"])
        tw.writerow(["item", "title"])
        for row in items:
            item, title = row[0], row[1]
            tw.writerow([item, title])
            genres = row[3].split() if len(row) > 3 else []
            for genre in genres:
                gw.writerow([item, genre])

    print(f"wrote {len(inter)} ratings and {len(items)} items to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
