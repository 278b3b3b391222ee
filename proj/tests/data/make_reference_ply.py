"""Writes reference_3dgs.ply: a small splat scene in the layout produced by
the common 3DGS training code (normals, DC + 45 rest SH coefficients,
logit opacity, log scale, wxyz rotation)."""
import struct
import math
import random

random.seed(2024)
names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
names += [f"f_rest_{i}" for i in range(45)]
names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]

rows = []
for i in range(1500):
    # a ring of blobs plus a ground disc
    if i < 1000:
        a = random.uniform(0, 2 * math.pi)
        r = 1.0 + random.gauss(0, 0.08)
        p = (r * math.cos(a), r * math.sin(a), random.gauss(0, 0.1))
        rgb = (0.5 + 0.5 * math.cos(a), 0.5 + 0.5 * math.sin(a), 0.3)
    else:
        a = random.uniform(0, 2 * math.pi)
        r = math.sqrt(random.uniform(0, 1)) * 1.6
        p = (r * math.cos(a), r * math.sin(a), -0.4 + random.gauss(0, 0.01))
        rgb = (0.4, 0.4, 0.45)
    dc = [(c - 0.5) / 0.28209479177387814 for c in rgb]
    rest = [random.gauss(0, 0.02) for _ in range(45)]
    opacity = random.uniform(-2.0, 4.0)
    scale = [math.log(random.uniform(0.01, 0.06)) for _ in range(3)]
    q = [random.gauss(0, 1) for _ in range(4)]
    qs = 0.5 + random.random()  # stored quaternions are not unit length
    q = [v * qs for v in q]
    rows.append(list(p) + [0.0, 0.0, 0.0] + dc + rest + [opacity] + scale + q)

with open("reference_3dgs.ply", "wb") as f:
    header = "ply\nformat binary_little_endian 1.0\n"
    header += f"element vertex {len(rows)}\n"
    header += "".join(f"property float {n}\n" for n in names)
    header += "end_header\n"
    f.write(header.encode("ascii"))
    for row in rows:
        f.write(struct.pack("<" + "f" * len(names), *row))
