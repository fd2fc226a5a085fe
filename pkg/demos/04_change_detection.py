"""Sudden-change detection on per-episode returns.

The detector flags episode i when R_i drops below a blend of the running
extrema: R_i < c_th * max + (1 - c_th) * min, both taken over episodes up
to and including i. The agent clears its context on detection and starts
re-exploring. This script traces the rule on synthetic histories,
including its two boundary settings and its known sharp edge: a strict
new minimum always fires for any positive threshold.

Run: python demos/04_change_detection.py
"""

from peeradapt.adapt import detect_change

histories = {
    "steady partner": [4.0, 4.0, 4.0, 4.0, 4.0],
    "improving play (never fires)": [1.0, 2.0, 3.0, 4.0, 5.0],
    "partner swapped at episode 4": [4.0, 4.0, 4.0, 1.2, 1.0, 2.8, 3.9],
    "single dip, then recovery": [4.0, 3.0, 4.0, 4.0],
}

for name, returns in histories.items():
    print(f"{name}: {returns}")
    for c_th in (0.0, 0.8, 1.0):
        fired = [
            i + 1
            for i in range(len(returns))
            if detect_change(returns[: i + 1], c_th)
        ]
        print(f"  c_th={c_th:.1f}: detections at episodes {fired or 'none'}")
    print()

print("edge case: any strict new minimum fires for every c_th > 0")
print("  history [3.0, 2.999]:", detect_change([3.0, 2.999], 0.05))
print("  (the blend of extrema sits strictly above a fresh minimum)")
