"""Blind reconstruction with a masked and an unmasked probe.

Simulates one 32x32 phantom scanned at 100 unknown positions, runs VI with the
H-TV prior for both probes and prints the metrics.  Takes a few minutes on one
core; pass a smaller step count as the first argument for a quicker look.

    python3 demos/blind_recovery.py [n_outer] [seed]
"""

import sys

from blindpty.evaluation import evaluate
from blindpty.forward import NoiseSpec, forward_intensity, sample_positions, sigma_for_snr, simulate_measurements
from blindpty.inference import ReconstructionConfig, run_vi
from blindpty.optics import ApertureSpec, make_probe
from blindpty.phantom import generate_phantom, transmission_from_profile

H, K = 32, 100
n_outer = int(sys.argv[1]) if len(sys.argv) > 1 else 150
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

x = transmission_from_profile(generate_phantom(H, "full", seed))
r = sample_positions(K, H, seed + 1000)

for label, block in (("random phase mask", 1), ("plain aperture", 0)):
    probe = make_probe(ApertureSpec(2 * H, 0.5, mask_block=block, seed=seed))
    sigma = sigma_for_snr(forward_intensity(r, x, probe), 4.5)
    meas = simulate_measurements(x, probe, r, NoiseSpec("gaussian", sigma), seed=seed)
    cfg = ReconstructionConfig(image_prior="htv", htv_lambda=5.0, lr_pos_mu=1.25,
                               precision="single", seed=seed).scaled(n_outer)
    res = run_vi(cfg, meas, probe, object_size=H)
    rep = evaluate(res.x, x, res.r, r)
    print(f"{label:18s} posCorrect {rep.pos_correct_pct:5.1f}%  cRMS {rep.crms:.3f}  "
          f"aSSIM {rep.assim:.3f}  aPSNR {rep.apsnr:.1f} dB")
