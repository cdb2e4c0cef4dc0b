"""Download MovieLens 100k and place ``u.data`` under ``data/ml-100k/``.

Tries the GroupLens archive first.  If that host is unreachable, falls back to
the copy bundled inside the RecBole wheel (``pip download recbole==1.2.1``),
whose ``ml-100k.inter`` holds the same 100,000 records with a header line.
"""
import argparse
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens(timeout):
    with urllib.request.urlopen(GROUPLENS, timeout=timeout) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data").decode()


def from_recbole():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-d", tmp,
                        "recbole==1.2.1"], check=True)
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read("recbole/dataset_example/ml-100k/ml-100k.inter").decode()
    return "".join(line + "\n" for line in text.splitlines()[1:] if line.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/ml-100k/u.data")
    ap.add_argument("--timeout", type=float, default=30)
    args = ap.parse_args()
    try:
        text = from_grouplens(args.timeout)
    except OSError as exc:
        print(f"GroupLens download failed ({exc}); using the RecBole wheel", file=sys.stderr)
        text = from_recbole()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {sum(1 for _ in text.splitlines())} ratings to {out}")


if __name__ == "__main__":
    main()
