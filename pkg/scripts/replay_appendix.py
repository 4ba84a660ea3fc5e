#!/usr/bin/env python3
"""Recompute F1 from the tabulated PA/UA and roll up district areas from an appendix CSV.

The CSV needs columns district, pa, ua, f1, area_ha (percentages for pa/ua).
"""
import argparse
import csv

from phenorice.validation import ConfusionMatrix, build_report, metrics


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("csv", nargs="?", default="tests/data/appendix_a.csv")
    p.add_argument("--official-total", type=float, default=None)
    a = p.parse_args()
    with open(a.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    worst = 0.0
    for r in rows:
        pa, ua = float(r["pa"]) / 100, float(r["ua"]) / 100
        f1 = metrics(ConfusionMatrix(1.0, 1 / ua - 1, 1 / pa - 1, 1.0)).f1
        worst = max(worst, abs(f1 - float(r["f1"])))
        print(f"{r['district']:<28} F1 table={float(r['f1']):.3f} recomputed={f1:.4f}")
    report = build_report(None, {r["district"]: float(r["area_ha"]) for r in rows},
                          official_total=a.official_total)
    print(f"max |dF1| = {worst:.4f}")
    print(f"state area = {report['state']['area_ha']:,.0f} ha over {len(rows)} districts")


if __name__ == "__main__":
    main()
