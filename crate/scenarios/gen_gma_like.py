#!/usr/bin/env python3
"""Generates scenarios/gma_like.msh and scenarios/gma_like.json.

The domain is a 12 km x 9 km ellipse triangulated with 82 boundary and 409
interior vertices (Delaunay), giving 898 triangles and 491 vertices. Road
polylines are bent at their midpoint so every road splits into cells of
exactly 0.205 km.
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

HERE = Path(__file__).resolve().parent
CENTER = np.array([6.0, 4.5])
SEMI = np.array([6.0, 4.5])
N_BOUNDARY = 82
N_INTERIOR = 409
CELL = 0.205


def ellipse_level(p):
    q = (p - CENTER) / SEMI
    return (q * q).sum(axis=-1)


def boundary_points():
    # Equal arc-length spacing on the ellipse.
    t = np.linspace(0.0, 2.0 * math.pi, 20001)
    xy = CENTER + SEMI * np.stack([np.cos(t), np.sin(t)], axis=1)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    targets = np.arange(N_BOUNDARY) * arc[-1] / N_BOUNDARY
    ts = np.interp(targets, arc, t)
    return CENTER + SEMI * np.stack([np.cos(ts), np.sin(ts)], axis=1)


def lattice(h):
    rows = []
    dy = h * math.sqrt(3.0) / 2.0
    for j, y in enumerate(np.arange(CENTER[1] - SEMI[1], CENTER[1] + SEMI[1] + dy, dy)):
        shift = 0.5 * h if j % 2 else 0.0
        for x in np.arange(CENTER[0] - SEMI[0] + shift, CENTER[0] + SEMI[0] + h, h):
            rows.append((x, y))
    pts = np.array(rows)
    return pts[ellipse_level(pts) < 0.88]


def interior_points():
    lo, hi = 0.2, 1.0
    for _ in range(200):
        h = 0.5 * (lo + hi)
        n = len(lattice(h))
        if n < N_INTERIOR:
            hi = h
        else:
            lo = h
    pts = lattice(lo)
    # Drop the outermost surplus points.
    order = np.argsort(ellipse_level(pts), kind="stable")
    return pts[np.sort(order[:N_INTERIOR])]


def write_msh(path, vertices, triangles):
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(vertices))]
    lines += [f"{i + 1} {x:.12g} {y:.12g} 0" for i, (x, y) in enumerate(vertices)]
    lines += ["$EndNodes", "$Elements", str(len(triangles))]
    lines += [f"{i + 1} 2 2 1 1 {a + 1} {b + 1} {c + 1}" for i, (a, b, c) in enumerate(triangles)]
    lines += ["$EndElements"]
    path.write_text("\n".join(lines) + "\n")


def mesh():
    pts = np.vstack([boundary_points(), interior_points()])
    tri = Delaunay(pts).simplices
    tris = []
    for a, b, c in tri:
        pa, pb, pc = pts[a], pts[b], pts[c]
        cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        tris.append((a, b, c) if cross > 0 else (a, c, b))
    assert len(pts) == 491 and len(tris) == 898, (len(pts), len(tris))
    return pts, tris


NODES = {
    "S1": (1.0, 6.0),
    "S2": (1.0, 3.5),
    "S10": (3.0, 1.0),
    "J1": (2.5, 4.8),
    "J2": (4.0, 4.8),
    "J3": (5.5, 4.0),
    "J4": (5.5, 6.5),
    "J5": (7.0, 3.0),
    "J6": (5.0, 1.8),
    "J7": (7.5, 6.5),
    "J8": (8.5, 3.0),
    "J9": (9.0, 4.8),
    "E13": (11.0, 4.8),
    "E14": (9.5, 1.5),
    "E15": (8.5, 7.8),
}

# Roads 1..17 as (from, to).
ROADS = [
    ("S1", "J1"), ("S2", "J1"), ("J1", "J2"), ("J2", "J4"), ("J2", "J3"),
    ("J3", "J4"), ("J3", "J5"), ("J6", "J5"), ("J6", "J3"), ("S10", "J6"),
    ("J5", "J8"), ("J4", "J7"), ("J9", "E13"), ("J8", "E14"), ("J7", "E15"),
    ("J8", "J9"), ("J7", "J9"),
]

JUNCTIONS = [
    ([1, 2], [3]), ([3], [4, 5]), ([5, 9], [6, 7]), ([4, 6], [12]), ([7, 8], [11]),
    ([10], [8, 9]), ([12], [15, 17]), ([11], [14, 16]), ([16, 17], [13]),
]


def polyline(a, b):
    a, b = np.array(NODES[a]), np.array(NODES[b])
    chord = np.linalg.norm(b - a)
    n = math.ceil(chord / CELL)
    length = n * CELL
    h = math.sqrt(max((length / 2) ** 2 - (chord / 2) ** 2, 0.0))
    normal = np.array([-(b - a)[1], (b - a)[0]]) / chord
    mid = 0.5 * (a + b) + h * normal
    pts = [a.tolist(), mid.tolist(), b.tolist()] if h > 1e-12 else [a.tolist(), b.tolist()]
    return [[round(x, 12) for x in p] for p in pts], n


def scenario():
    fd = {"family": "greenshields", "v_free": 45, "rho_max": 180}
    roads, cells = [], []
    for i, (a, b) in enumerate(ROADS):
        line, n = polyline(a, b)
        eps = 0.7 if i < 3 else 0.5
        roads.append({"polyline": line, "fd": fd, "gamma": 1e6, "eta": 3.16e-5, "eps_density": eps})
        cells.append(n)
    hours = np.arange(0, 25)
    f_in = [[float(t), round(1000.0 - 800.0 * math.cos(2.0 * math.pi * t / 24.0), 9)] for t in hours]
    inflows = [
        {"road": r - 1, "f_in": f_in, "cap_in": 2013, "q0": 0, "eps_queue": e, "lambda_q": 0}
        for r, e in [(1, 0.45), (2, 0.45), (10, 0.1)]
    ]
    outflows = [{"road": r - 1, "f_out": 2013, "eps_out": 0.5} for r in (13, 14, 15)]
    return {
        "id": "gma_like",
        "seed": 0,
        "roads": roads,
        "junctions": [{"incoming": [k - 1 for k in i], "outgoing": [l - 1 for l in o]} for i, o in JUNCTIONS],
        "inflows": inflows,
        "outflows": outflows,
        "mesh": "gma_like.msh",
        "wind": {"kind": "uniform", "velocity": [9.0, 3.0]},
        "pollution": {"mu": 3.5e-8, "kappa": 6e-3},
        "discretization": {"dt": 4e-3, "steps": 6000, "cells": cells},
        "ga": {"population_size": 50},
        "follower": {"starts": 5},
    }


def main():
    pts, tris = mesh()
    write_msh(HERE / "gma_like.msh", pts, tris)
    (HERE / "gma_like.json").write_text(dump(scenario()))


def dump(doc):
    # One top-level key per line, list entries one per line.
    out = []
    for key, value in doc.items():
        if isinstance(value, list) and value and isinstance(value[0], dict):
            items = ",\n".join("    " + json.dumps(v) for v in value)
            out.append(f'  "{key}": [\n{items}\n  ]')
        else:
            out.append(f'  "{key}": {json.dumps(value)}')
    return "{\n" + ",\n".join(out) + "\n}\n"


if __name__ == "__main__":
    main()
