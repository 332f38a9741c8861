"""ASCII PLY reader/writer for xyz point clouds.

Only `element vertex` with float x/y/z properties is interpreted; extra
vertex properties are skipped, other elements (faces etc.) are ignored.
"""

from pathlib import Path

import numpy as np


def load_ply(path) -> np.ndarray:
    """Read an ASCII PLY file and return its vertices as an (n, 3) float64 array."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file (missing 'ply' magic)")
    n_vertex = None
    prop_names = []
    in_vertex = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=1):
        parts = raw.strip().split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported, got format '{parts[1]}'")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertex = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            prop_names.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if n_vertex is None or body_start is None:
        raise ValueError(f"{path}: malformed PLY header (no vertex element)")
    for axis in ("x", "y", "z"):
        if axis not in prop_names:
            raise ValueError(f"{path}: vertex element lacks '{axis}' property")
    cols = [prop_names.index(a) for a in ("x", "y", "z")]
    rows = []
    for raw in lines[body_start : body_start + n_vertex]:
        vals = raw.split()
        rows.append([float(vals[c]) for c in cols])
    if len(rows) != n_vertex:
        raise ValueError(f"{path}: expected {n_vertex} vertices, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(n_vertex, 3)


def save_ply(path, cloud: np.ndarray) -> None:
    """Write an (n, 3) cloud as ASCII PLY. Coordinates use %.17g so the
    float64 values round-trip exactly through `load_ply`."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected (n, 3) cloud, got shape {cloud.shape}")
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(cloud)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for p in cloud:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
