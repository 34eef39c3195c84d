import argparse
import json
import sys


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (default 5)")
    p.add_argument("--json", help="write the raw rows here")
    return p


def emit(rows, path=None):
    if path:
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
    sys.stdout.flush()
