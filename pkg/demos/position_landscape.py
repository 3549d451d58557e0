"""Position loss landscapes for a masked and an unmasked probe.

Moves a single probe position over the whole periodic domain and writes the
log-scaled landscapes as PNG files next to a short summary of their minima.

    python3 demos/position_landscape.py [out_dir] [seed]
"""

import sys
from pathlib import Path

import numpy as np

from blindpty.evaluation import landscape_scan, local_minima, render_landscape
from blindpty.optics import ApertureSpec, make_probe
from blindpty.phantom import generate_phantom, transmission_from_profile

H = 32
out = Path(sys.argv[1] if len(sys.argv) > 1 else "landscapes")
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
out.mkdir(parents=True, exist_ok=True)

x = transmission_from_profile(generate_phantom(H, "full", seed))
R = (H + 2 * H) // 2
for label, block in (("masked", 1), ("unmasked", 0)):
    L = landscape_scan(x, make_probe(ApertureSpec(2 * H, 0.5, mask_block=block, seed=seed)), [H / 2, H / 2], R)
    deep = local_minima(L, threshold=0.1 * np.median(L))
    render_landscape(L, out / f"landscape_{label}.png")
    print(f"{label:9s} local minima {len(local_minima(L)):4d}, below 10% of median {len(deep):3d}, "
          f"argmin offset {np.subtract(np.unravel_index(np.argmin(L), L.shape), R).tolist()}")
