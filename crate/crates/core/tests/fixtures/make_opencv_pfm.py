"""Regenerate the OpenCV-written PFM fixtures and their expected values."""
import json

import cv2
import numpy as np

h, w = 3, 4
rgb = np.zeros((h, w, 3), np.float32)
for y in range(h):
    for x in range(w):
        for c in range(3):
            rgb[y, x, c] = (y * 100 + x * 10 + c) / 7.0 - 2.5
# OpenCV holds BGR in memory and writes RGB.
assert cv2.imwrite("opencv_rgb.pfm", rgb[:, :, ::-1].copy())
gray = np.arange(h * w, dtype=np.float32).reshape(h, w) * 0.125 + 1e-3
assert cv2.imwrite("opencv_gray.pfm", gray)
json.dump(
    {
        "width": w,
        "height": h,
        "rgb_rows_top_down": [[[float(v) for v in px] for px in row] for row in rgb],
        "gray_rows_top_down": [[float(v) for v in row] for row in gray],
    },
    open("opencv_expected.json", "w"),
    indent=1,
)
