"""Download the 50-girls excerpt (three waves) and convert it to edge lists.

The archive holds s50-network1.dat .. s50-network3.dat, 50 x 50 adjacency
matrices whose nonzero codes mean "named as a friend".  Output goes to
data/girls/wave{1,2,3}.edges with a pinned node list s001..s050.

    python scripts/fetch_girls.py [--url URL] [--zip local.zip]
"""

import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

from lsjm.io import serialize_edge_list
from lsjm.network import AdjacencyView, NodeSet

URL = "https://www.stats.ox.ac.uk/~snijders/siena/s50_data.zip"


def convert(archive: bytes, out: Path) -> list[Path]:
    nodes = NodeSet([f"s{i + 1:03d}" for i in range(50)])
    written = []
    with zipfile.ZipFile(io.BytesIO(archive)) as zf:
        names = {Path(n).name: n for n in zf.namelist()}
        for wave in (1, 2, 3):
            raw = zf.read(names[f"s50-network{wave}.dat"]).decode()
            y = (np.loadtxt(io.StringIO(raw)) != 0).astype(int)
            np.fill_diagonal(y, 0)
            view = AdjacencyView(y, directed=True, view_label=f"wave{wave}")
            path = out / f"wave{wave}.edges"
            path.write_text(serialize_edge_list(nodes, view))
            written.append(path)
    return written


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--url", default=URL)
    ap.add_argument("--zip", help="use an already downloaded archive")
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "girls"))
    args = ap.parse_args()
    if args.zip:
        archive = Path(args.zip).read_bytes()
    else:
        try:
            with urllib.request.urlopen(args.url, timeout=30) as resp:
                archive = resp.read()
        except OSError as exc:
            sys.exit(f"download failed ({exc}); fetch {args.url} by hand and pass --zip")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in convert(archive, out):
        print(p)


if __name__ == "__main__":
    main()
