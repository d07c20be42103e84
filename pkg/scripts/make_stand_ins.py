"""Regenerate the bundled synthetic stand-in datasets.

The spatial and salary datasets shipped in src/clgm/data are synthetic
stand-ins: schema-compatible, seeded, generated here. They are not the
original survey data. Run from the repository root:

    python3 scripts/make_stand_ins.py
"""

import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "src" / "clgm" / "data"


def queen_grid_w(side=7):
    """Row-standardized queen-contiguity weights on a side x side grid.

    Queen moves (diagonals included) keep the graph non-bipartite, so
    the row-standardized spectrum stays well inside (-1, 1].
    """
    n = side * side
    w = np.zeros((n, n))
    for i in range(side):
        for j in range(side):
            k = i * side + j
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == dj == 0:
                        continue
                    a, b = i + di, j + dj
                    if 0 <= a < side and 0 <= b < side:
                        w[k, a * side + b] = 1.0
    return w / w.sum(axis=1, keepdims=True)


def make_spatial(seed=20240901):
    rng = np.random.default_rng(seed)
    w = queen_grid_w()
    n = w.shape[0]
    income = np.round(rng.uniform(4.0, 32.0, size=n), 3)
    hvalue = np.round(np.clip(income * 1.6 + rng.uniform(8.0, 45.0, size=n),
                              17.0, 97.0), 3)
    x = np.column_stack([np.ones(n), income, hvalue])
    beta = np.array([60.0, -1.0, -0.3])
    rho, tau_u = 0.5, 0.01
    # y = (I - rho W)^-1 X beta + eps, eps precision tau_u (I-rho W)(I-rho W)'
    u = rng.normal(scale=tau_u**-0.5, size=n)
    m = np.eye(n) - rho * w
    crime = np.linalg.solve(m, x @ beta) + np.linalg.solve(m.T, u)
    crime = np.round(crime, 6)

    lines = ["id,crime,income,hvalue"]
    for i in range(n):
        lines.append(f"{i + 1},{crime[i]},{income[i]},{hvalue[i]}")
    (OUT / "columbus.csv").write_text("\n".join(lines) + "\n")

    lines = ["row,col,weight"]
    for i in range(n):
        for j in range(n):
            if w[i, j] > 0:
                lines.append(f"{i + 1},{j + 1},{float(w[i, j])!r}")
    (OUT / "columbus_w.csv").write_text("\n".join(lines) + "\n")


def make_salaries(seed=20240902, n=263):
    rng = np.random.default_rng(seed)
    playing_time = rng.uniform(90.0, 690.0, size=n)
    atbat = np.round(playing_time + rng.normal(scale=15.0, size=n)).clip(20)
    hits = np.round(atbat * rng.normal(0.258, 0.025, size=n)).clip(1)
    hmrun = np.round(hits * np.abs(rng.normal(0.09, 0.05, size=n))).clip(0)
    runs = np.round(hits * rng.normal(0.52, 0.08, size=n) + hmrun).clip(0)
    rbi = np.round(hits * rng.normal(0.45, 0.10, size=n)
                   + 1.5 * hmrun).clip(0)
    ability = (hits / atbat - 0.258) * 2000.0 + rbi + 0.8 * runs
    salary = np.round(np.exp(4.6 + 0.004 * ability
                             + rng.normal(scale=0.55, size=n)), 1)

    lines = ["salary,AtBat,Hits,HmRun,Runs,RBI"]
    for i in range(n):
        lines.append(f"{salary[i]},{atbat[i]:.0f},{hits[i]:.0f},"
                     f"{hmrun[i]:.0f},{runs[i]:.0f},{rbi[i]:.0f}")
    (OUT / "hitters.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    make_spatial()
    make_salaries()
    print("wrote", OUT / "columbus.csv")
    print("wrote", OUT / "columbus_w.csv")
    print("wrote", OUT / "hitters.csv")
