"""Regenerates synthetic-decay.csv: a poisoned relaxation curve with 1% relative noise."""

import numpy as np

N_QP = 1.03
T1_QP = 8e-6
T1_R = 23.6e-6

rng = np.random.default_rng(20240101)
t = np.linspace(0.0, 150e-6, 76)
p1 = np.exp(N_QP * np.expm1(-t / T1_QP) - t / T1_R)
p1 *= 1.0 + 0.01 * rng.standard_normal(t.size)

with open("synthetic-decay.csv", "w") as f:
    f.write(f"# n_qp={N_QP} t1_qp_s={T1_QP} t1_r_s={T1_R} relative_noise=0.01\n")
    f.write("time_s,p1\n")
    for ti, pi in zip(t, p1):
        f.write(f"{ti:.16e},{pi:.16e}\n")
