"""Wavefront OBJ export of transported 3-D chart grids."""

import numpy as np


def grid_triangles(shape, periodic):
    """Triangles (0-based vertex ids) splitting the quads of a 2-D grid.

    Periodic axes wrap around; non-periodic axes leave their ends open.
    """
    n0, n1 = shape
    rows = range(n0 if periodic[0] else n0 - 1)
    cols = range(n1 if periodic[1] else n1 - 1)
    tris = []
    for i in rows:
        for j in cols:
            i2, j2 = (i + 1) % n0, (j + 1) % n1
            a, b, c, d = i * n1 + j, i2 * n1 + j, i2 * n1 + j2, i * n1 + j2
            tris.append((a, b, c))
            tris.append((a, c, d))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def write_obj(path, pieces):
    """Write ``pieces`` = [(positions (N0, N1, 3), normals, grid), ...] to one file."""
    lines = ["# levelflow transported level surface"]
    faces = []
    offset = 0
    for positions, normals, grid in pieces:
        shape = positions.shape[:2]
        V = positions.reshape(-1, 3)
        N = normals.reshape(-1, 3)
        N = N / np.linalg.norm(N, axis=1)[:, None]
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in V.tolist()]
        lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in N.tolist()]
        tris = grid_triangles(shape, [ax.periodic for ax in grid]) + offset + 1
        faces += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in tris.tolist()]
        offset += len(V)
    with open(path, "w") as fh:
        fh.write("\n".join(lines + faces) + "\n")


def read_obj(path):
    """Minimal reader returning ``(vertices, normals, faces)`` with 0-based faces."""
    verts, norms, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "vn":
                norms.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
    return np.array(verts), np.array(norms), np.array(faces, dtype=np.int64)
