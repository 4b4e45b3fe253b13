#!/usr/bin/env python3
"""Independent recomputation of the cold-start bias statistics.

Reads a feature/attribution matrix and its schema, rebuilds the interval
means with exact rational interval assignment, matches each record to the
nearest stored midpoint (ties toward the smaller one), converts the matched
means to contribution probabilities and reports the statistics of
|teacher_prob - (0.5 + sum c)|.
"""
import csv
import json
import math
import statistics
import sys
from fractions import Fraction


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def midpoint(value, kind, step):
    if kind == "integer":
        return Fraction(value)
    s = Fraction(step)
    m = math.floor((Fraction(value) + s / 2) / s)
    return m * s


def nearest(value, table):
    v = Fraction(value)
    return min(table, key=lambda m: (abs(v - m), m))


def main(schema_path, matrix_path, step=0.5):
    schema = json.load(open(schema_path))
    features = [(f["name"], f.get("kind", "continuous")) for f in schema["features"]]
    with open(matrix_path) as fh:
        first = fh.readline().strip()
        base = float(first.split("=", 1)[1])
        rows = list(csv.DictReader(fh))

    tables = []
    for name, kind in features:
        groups = {}
        for r in rows:
            key = midpoint(float(r["v_" + name]), kind, step)
            groups.setdefault(key, []).append(float(r["s_" + name]))
        tables.append({k: math.fsum(v) / len(v) for k, v in groups.items()})

    diffs = []
    for r in rows:
        total = 0.0
        contributions = []
        for (name, kind), table in zip(features, tables):
            phi = table[nearest(float(r["v_" + name]), table)]
            contributions.append(sigmoid(base + phi) - sigmoid(base))
        p = min(1.0, max(0.0, 0.5 + math.fsum(contributions)))
        diffs.append(abs(float(r["teacher_prob"]) - p))

    out = {
        "n": len(diffs),
        "mean": math.fsum(diffs) / len(diffs),
        "stddev": statistics.pstdev(diffs),
        "median": statistics.median(diffs),
        "min": min(diffs),
        "max": max(diffs),
    }
    print(json.dumps({k: (repr(v) if isinstance(v, float) else v) for k, v in out.items()}, indent=1))


if __name__ == "__main__":
    main(*sys.argv[1:3])
