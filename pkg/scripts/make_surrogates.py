"""Write the seeded surrogate edge lists used when the real data are absent.

    python scripts/make_surrogates.py [--out data]
"""

import argparse
from pathlib import Path

from lsjm.io import serialize_edge_list
from lsjm.synthetic import girls_surrogate, protein_surrogate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    args = ap.parse_args()
    for folder, mp in [("girls_surrogate", girls_surrogate()), ("protein_surrogate", protein_surrogate())]:
        d = Path(args.out) / folder
        d.mkdir(parents=True, exist_ok=True)
        for v in mp.views:
            path = d / f"{v.view_label}.edges"
            path.write_text(serialize_edge_list(mp.nodes, v))
            print(path)


if __name__ == "__main__":
    main()
