#!/usr/bin/env python3
"""Smoke test for the beamlink_py extension module.

Build and stage the module first:

    cargo build -p beamlink-py --release
    cp target/release/libbeamlink_py.so python/beamlink_py.so

then run `python3 python/smoke_test.py`.
"""

import sys
import os

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

import beamlink_py as bl


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  [{status}] {name}{': ' + detail if detail else ''}")
    if not ok:
        raise SystemExit(f"smoke test failed at: {name}")


def main():
    print("beamlink_py smoke test")

    # Doppler helper
    fd = bl.max_doppler_hz(30.0, 4e9)
    check("max_doppler_hz", abs(fd - 111.1) < 0.05, f"f_d = {fd:.2f} Hz")

    # channel generation: shape, determinism, normalization
    h = bl.generate_channel("tdl-a", 100.0, 15.0, 4, 42, 2)
    check("channel shape", h.shape == (4, 14, 24, 4, 2), str(h.shape))
    h2 = bl.generate_channel("tdl-a", 100.0, 15.0, 4, 42, 2)
    check("channel determinism", np.array_equal(h, h2))
    power_db = 10 * np.log10(np.mean(np.abs(h) ** 2))
    check("channel normalization", abs(power_db) < 0.1, f"{power_db:.3f} dB")

    # static channel has no evolution
    hs = bl.generate_channel("tdl-b", 80.0, 0.0, 3, 7, 1)
    drift = np.max(np.abs(hs[0] - hs[2]))
    check("static channel", drift < 1e-6, f"max drift {drift:.2e}")

    # zero forcing: H W = I
    rng = np.random.default_rng(3)
    H = (rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))) / np.sqrt(2)
    W = bl.zf_precoder(H)
    check("zf shape", W.shape == (4, 2))
    err = np.max(np.abs(H @ W - np.eye(2)))
    check("zf identity", err < 1e-10, f"max deviation {err:.2e}")

    # Neumann approximation converges to the exact precoder
    W64 = bl.zf_precoder_neumann(H, 64)
    gap = np.max(np.abs(W64 - W))
    check("neumann k=64", gap < 1e-6, f"gap {gap:.2e}")

    # 16-QAM map: unit energy, hard-decision roundtrip through the demapper
    bits = rng.integers(0, 2, size=4 * 64).astype(np.uint8)
    syms = bl.qam16_map(bits)
    check("qam energy", abs(np.mean(np.abs(syms) ** 2) - 1.0) < 0.15)
    llr = bl.qam16_llr(syms, np.full(len(syms), 0.01))
    hard = (llr < 0).astype(np.uint8).reshape(-1)
    check("demap roundtrip", np.array_equal(hard, bits))

    # schedule and weighting helpers
    check("snr weight", abs(bl.snr_weight(0.0) - 1.0) < 1e-12)
    check("lr warmup midpoint", abs(bl.lr_at(800, 20000, 3.6e-5, 1600, 0.3) - 1.8e-5) < 1e-12)

    # predictor checkpoint, when one has been trained (optional)
    ckpt = os.environ.get("BEAMLINK_CHECKPOINT", "")
    if ckpt and os.path.exists(ckpt):
        p = bl.Predictor.load(ckpt)
        print(f"  loaded predictor: {p.describe()}")
        est = h[0].astype(np.complex64)
        pred = p.predict(est, 1)
        check("predictor output", pred.shape == est.shape and np.isfinite(pred).all())
    else:
        print("  (set BEAMLINK_CHECKPOINT to also exercise Predictor.load)")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
