"""Regenerates the synthetic CSV fixtures. Output is deterministic."""

import csv
import math
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent


def ocx24():
    # simplex lattice with step 0.1 (66 compositions) minus the three pure metals
    rows = []
    for ag in range(11):
        for au in range(11 - ag):
            zn = 10 - ag - au
            if 10 in (ag, au, zn):
                continue
            x = (ag / 10, au / 10, zn / 10)
            bump = math.exp(-((x[0] - 0.6) ** 2 + (x[1] - 0.1) ** 2 + (x[2] - 0.3) ** 2) / 0.06)
            ridge = 0.35 * math.exp(-((x[1] - 0.7) ** 2) / 0.02)
            wobble = 0.04 * math.sin(17 * x[0] + 5 * x[1])
            rows.append((*x, bump + ridge + wobble))
    lo = min(r[3] for r in rows)
    hi = max(r[3] for r in rows)
    with open(HERE / "ocx24_synthetic.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x_Ag", "x_Au", "x_Zn", "fe-h2"])
        for ag, au, zn, v in rows:
            w.writerow([f"{ag:.1f}", f"{au:.1f}", f"{zn:.1f}", f"{100 * (v - lo) / (hi - lo):.4f}"])
    assert len(rows) == 63


def lcbench():
    rng = random.Random(7)
    with open(HERE / "lcbench_synthetic.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["batch_size", "max_units", "learning_rate", "momentum", "weight_decay", "val_accuracy"])
        for _ in range(40):
            bs = 2 ** rng.randint(4, 9)
            units = 2 ** rng.randint(6, 10)
            lr = 10 ** rng.uniform(-4, -1)
            mom = rng.uniform(0.1, 0.99)
            wd = 10 ** rng.uniform(-5, -1)
            score = (
                0.9
                - 0.08 * (math.log10(lr) + 2.5) ** 2
                - 0.02 * abs(math.log2(bs) - 6)
                + 0.01 * math.log2(units / 64)
                - 0.05 * (mom - 0.9) ** 2
                - 0.5 * wd
                + rng.gauss(0, 0.005)
            )
            w.writerow([bs, units, f"{lr:.6g}", f"{mom:.4f}", f"{wd:.6g}", f"{100 * score:.3f}"])


if __name__ == "__main__":
    ocx24()
    lcbench()
