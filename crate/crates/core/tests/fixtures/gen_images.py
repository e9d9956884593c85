"""Writes the 16x16 calibration images and the run input as MTEN files."""
import math
import os
import struct


def mten_f32(shape, values):
    dims = list(shape) + [0] * (4 - len(shape))
    head = b"MTEN" + struct.pack("<BBH4I", 0, len(shape), 0, *dims)
    return head + struct.pack(f"<{len(values)}f", *values)


def image(k):
    cx, cy = 3 + (k * 5) % 10, 3 + (k * 3) % 10
    sigma = 2.0 + (k % 3)
    out = []
    for y in range(16):
        for x in range(16):
            blob = math.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma * sigma))
            stripe = 0.25 * (1 + math.sin((x * (k % 4 + 1) + y * (k // 4 + 1)) * 0.7))
            out.append(round(min(1.0, 0.7 * blob + stripe), 4))
    return out


if __name__ == "__main__":
    os.makedirs("calib", exist_ok=True)
    for k in range(8):
        with open(f"calib/{k:02}.mten", "wb") as f:
            f.write(mten_f32([1, 16, 16, 1], image(k)))
    with open("input_f32.mten", "wb") as f:
        f.write(mten_f32([1, 16, 16, 1], image(11)))
