"""Reference values frozen into the C++ tests.

Run with `python3 tests/oracles/frozen_values.py`; every number printed here
appears verbatim in a test. Depends on numpy and shapely only.
"""
import math
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

np.set_printoptions(precision=17)
HERE = Path(__file__).resolve().parent


def fmt(x):
    return f"{x:.17g}"


def parse_calib(path):
    fields = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, vals = line.split(":", 1)
        fields[key.strip()] = np.array([float(v) for v in vals.split()])
    p2 = fields["P2"].reshape(3, 4)
    r0 = np.eye(4)
    r0[:3, :3] = fields["R0_rect"].reshape(3, 3)
    tr = np.eye(4)
    tr[:3, :] = fields["Tr_velo_to_cam"].reshape(3, 4)
    return p2 @ r0 @ tr


def calibration():
    m = parse_calib(HERE.parent / "fixtures" / "kitti_000000.txt")
    print("# composed projection, row-major")
    print(", ".join(fmt(v) for v in m.ravel()))
    for p in [(10.0, 1.5, -0.8), (25.3, -4.2, 0.6), (6.0, 2.0, -1.2)]:
        h = m @ np.array([*p, 1.0])
        print(f"# project{p}: u v depth")
        print(fmt(h[0] / h[2]), fmt(h[1] / h[2]), fmt(h[2]))


def footprint(c, s, yaw):
    cy, sy = math.cos(yaw), math.sin(yaw)
    pts = []
    for dx, dy in [(1, 1), (-1, 1), (-1, -1), (1, -1)]:
        lx, ly = 0.5 * s[0] * dx, 0.5 * s[1] * dy
        pts.append((c[0] + cy * lx - sy * ly, c[1] + sy * lx + cy * ly))
    return Polygon(pts)


def iou3d(a, b):
    inter_bev = footprint(*a).intersection(footprint(*b)).area
    za = (a[0][2] - a[1][2] / 2, a[0][2] + a[1][2] / 2)
    zb = (b[0][2] - b[1][2] / 2, b[0][2] + b[1][2] / 2)
    dz = max(0.0, min(za[1], zb[1]) - max(za[0], zb[0]))
    inter = inter_bev * dz
    va = a[1][0] * a[1][1] * a[1][2]
    vb = b[1][0] * b[1][1] * b[1][2]
    bev = inter_bev / (footprint(*a).area + footprint(*b).area - inter_bev)
    return inter / (va + vb - inter), bev


def iou():
    pairs = [
        (((0, 0, 0), (4, 2, 1.5), 0.0), ((1, 0.5, 0.2), (4, 2, 1.5), 0.5)),
        (((10, -3, -1), (3.9, 1.6, 1.56), 0.3), ((10.5, -2.6, -0.8), (4.2, 1.7, 1.5), -0.4)),
        (((0, 0, 0), (2, 2, 2), math.pi / 4), ((0.5, 0, 0.5), (2, 1, 1), 0.0)),
    ]
    print("# iou_3d, iou_bev")
    for a, b in pairs:
        v3, vb = iou3d(a, b)
        print(fmt(v3), fmt(vb))


def softmax():
    x = np.array([1.0, 2.0, 3.0])
    e = np.exp(x - x.max())
    print("# softmax [1,2,3]")
    print(", ".join(fmt(v) for v in e / e.sum()))


def losses():
    print("# focal alpha .25 gamma 2 p .9 y 1")
    print(fmt(0.25 * 0.1**2 * -math.log(0.9)))
    print("# focal gamma 0 alpha .5 p .5 y 1")
    print(fmt(0.5 * math.log(2.0)))
    ref = ((1.0, 2.0, -1.0), (3.9, 1.6, 1.56), 0.0)
    tgt = ((1.5, 1.6, -0.9), (4.2, 1.7, 1.5), 0.3)
    diag = math.hypot(3.9, 1.6)
    code = [
        (tgt[0][0] - ref[0][0]) / diag,
        (tgt[0][1] - ref[0][1]) / diag,
        (tgt[0][2] - ref[0][2]) / ref[1][2],
        math.log(tgt[1][0] / ref[1][0]),
        math.log(tgt[1][1] / ref[1][1]),
        math.log(tgt[1][2] / ref[1][2]),
        tgt[2] - ref[2],
    ]
    print("# encode_box")
    print(", ".join(fmt(v) for v in code))


def attention():
    # One head, C = 2, d_k = d_v = 2, hand-picked weights.
    fp = np.array([[1.0, 0.5], [-0.3, 2.0]])
    fi = np.array([[0.2, -1.0], [1.5, 0.4], [-0.7, 0.9]])
    wq = np.array([[0.6, -0.2], [0.1, 0.8]])
    wk = np.array([[-0.5, 0.3], [0.9, 0.2]])
    wv = np.array([[0.4, 1.1], [-0.6, 0.3]])
    wo = np.array([[0.7, -0.4], [0.2, 0.5]])
    bo = np.array([0.05, -0.1])
    q, k, v = fp @ wq, fi @ wk, fi @ wv
    logits = q @ k.T / math.sqrt(2.0)
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    out = (a @ v) @ wo + bo
    print("# single-head attention output")
    print(", ".join(fmt(x) for x in out.ravel()))


def vfim():
    p = np.array([1.0, 2.0, 0.0])
    i = np.array([0.0, 1.0, 1.0])
    cos = p @ i / (np.linalg.norm(p) * np.linalg.norm(i))
    print("# identity-head vfim loss for [1,2,0] vs [0,1,1]")
    print(fmt(-cos))


def sign_test():
    print("# P(X >= k), X ~ Bin(10, 1/2), k = 8, 9, 10")
    for k in (8, 9, 10):
        print(fmt(sum(math.comb(10, j) for j in range(k, 11)) / 1024))


if __name__ == "__main__":
    calibration()
    iou()
    softmax()
    losses()
    attention()
    vfim()
    sign_test()
