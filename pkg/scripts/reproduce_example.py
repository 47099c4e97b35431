"""Regenerate the benchmark margin table and save it as JSON.

    python3 scripts/reproduce_example.py --out results/table.json
"""

import argparse
import json
from pathlib import Path

from delaymargin import __version__
from delaymargin import example as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/table.json")
    args = ap.parse_args()

    table = ex.reproduce()
    print(table.render())
    print("timings: " + ", ".join(f"{k} {v:.2f}s" for k, v in table.timings.items()))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({**table.to_dict(), "version": __version__}, indent=2, sort_keys=True))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
