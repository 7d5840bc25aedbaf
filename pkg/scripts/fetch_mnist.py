#!/usr/bin/env python3
"""Download the four MNIST IDX files into $GENCLASS_DATA (default ./data).

Tries a list of public mirrors; files are kept gzipped (the loader reads
.gz transparently). Verifies the IDX magic of every file it fetched.
"""

import gzip
import os
import sys
import urllib.request

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
FILES = {
    "train-images-idx3-ubyte.gz": 0x803,
    "train-labels-idx1-ubyte.gz": 0x801,
    "t10k-images-idx3-ubyte.gz": 0x803,
    "t10k-labels-idx1-ubyte.gz": 0x801,
}


def fetch(name: str, dest: str) -> None:
    last_err = None
    for mirror in MIRRORS:
        url = mirror + name
        try:
            print(f"fetching {url}")
            with urllib.request.urlopen(url, timeout=60) as r, open(dest, "wb") as f:
                f.write(r.read())
            return
        except Exception as exc:
            last_err = exc
            print(f"  failed: {exc}")
    raise SystemExit(f"could not download {name}: {last_err}")


def main() -> int:
    data_dir = os.environ.get("GENCLASS_DATA", "data")
    os.makedirs(data_dir, exist_ok=True)
    for name, magic in FILES.items():
        dest = os.path.join(data_dir, name)
        if not os.path.exists(dest):
            fetch(name, dest)
        with gzip.open(dest, "rb") as f:
            got = int.from_bytes(f.read(4), "big")
        if got != magic:
            raise SystemExit(f"{dest}: bad IDX magic 0x{got:08x}")
        print(f"ok {dest}")
    print(f"\nMNIST ready; export GENCLASS_DATA={os.path.abspath(data_dir)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
