#!/usr/bin/env python3
"""Pixel accuracy by field size on a landscape of 1, 4 and 25 px rice fields."""
import argparse

from phenorice.classifier import classify_district
from phenorice.synthetic import make_field_size_landscape, nalgonda_style_calibration


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=8)
    a = p.parse_args()
    d = make_field_size_landscape(sizes=(1, 2, 5), seed=a.seed)
    result = classify_district(d.cube, nalgonda_style_calibration(d.windows))
    correct = (result.final.values == 1) == d.truth
    size = d.meta["field_pixels"]
    for s in (1, 4, 25):
        print(f"{s:>3} px fields: accuracy {correct[size == s].mean():.3f} over {(size == s).sum()} px")


if __name__ == "__main__":
    main()
