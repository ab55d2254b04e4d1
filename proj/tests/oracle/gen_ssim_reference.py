#!/usr/bin/env python3
"""Freeze SSIM reference values computed by scikit-image.

Gaussian weights (sigma 1.5, 11x11 window), population covariance,
data_range 1. Images are 8-bit intensities scaled to [0, 1].
"""
import json
import pathlib

import numpy as np
from skimage.metrics import structural_similarity

OUT = pathlib.Path(__file__).resolve().parents[1] / "data" / "ssim_reference.json"


def ssim(a, b):
    return float(structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False, data_range=1.0))


def main():
    rng = np.random.default_rng(77)
    cases = []
    for i in range(8):
        h, w = int(rng.integers(11, 40)), int(rng.integers(11, 40))
        a = rng.integers(0, 256, size=(h, w))
        kind = ["noise", "blend", "shift", "gradient"][i % 4]
        if kind == "noise":
            b = rng.integers(0, 256, size=(h, w))
        elif kind == "blend":
            b = np.clip(a + rng.normal(0, 20, size=(h, w)), 0, 255).round().astype(int)
        elif kind == "shift":
            b = np.roll(a, 2, axis=1)
        else:
            yy, xx = np.mgrid[0:h, 0:w]
            a = ((xx * 255) // max(w - 1, 1)).astype(int)
            b = ((yy * 255) // max(h - 1, 1)).astype(int)
        cases.append({"name": f"{kind}_{i}", "width": w, "height": h,
                      "a": a.flatten().tolist(), "b": b.flatten().tolist(),
                      "ssim": ssim(a / 255.0, b / 255.0)})
    OUT.write_text(json.dumps({"reference": "skimage.metrics.structural_similarity", "cases": cases}) + "\n")


if __name__ == "__main__":
    main()
