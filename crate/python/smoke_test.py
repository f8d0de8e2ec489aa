"""Smoke test for the wfqd extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import math

import numpy as np

import wfqd


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print(f"ok  {msg}")


def main():
    check(abs(wfqd.LF_THRESHOLD - (math.sqrt(2) - 1) / 2) < 1e-15, "LF threshold")

    cfg = wfqd.WfConfig(2, 3, p0=0.5, seed=42)
    state = wfqd.equilibrate_wf(cfg, 0)
    again = wfqd.equilibrate_wf(cfg, 0)
    r = state.probabilities()
    check(r == again.probabilities(), "equilibration is deterministic")

    p0, p1 = state.p
    check(abs(p0 - 0.5) < 1e-15 and abs(p1 - 0.5) < 1e-15, "pointer probabilities")
    check(abs(r["p_f_i"] - 0.5) < 1e-15, "Friend's own outcome probability")
    check(abs(r["p_w_i"] - (p0 * (1 - r["misid_10"]) + p1 * r["misid_01"])) < 1e-12, "p_w_i from misidentification rates")
    check(abs(r["epsilon"] - abs(r["p_w_i"] - r["p_f_i"])) < 1e-12, "epsilon is |p_w_i - p_f_i|")
    check(abs(r["delta"] - abs(r["p_w_j"] - r["p_f_j"])) < 1e-12, "delta is |p_w_j - p_f_j|")

    rho = np.array(state.dense())
    check(rho.shape == (64, 64), "dense lab dimension")
    check(abs(np.trace(rho) - 1) < 1e-12, "unit trace")
    check(np.abs(rho - rho.conj().T).max() < 1e-12, "Hermitian")
    check(np.linalg.eigvalsh(rho).min() > -1e-10, "positive semidefinite")
    check(np.abs(rho[:32, 32:]).max() < 1e-12, "no coherence between pointer sectors")

    fo, eo = state.overlaps()
    check(0 <= fo <= 1 and 0 <= eo <= 1, "overlaps in [0, 1]")

    ecfg = wfqd.EwfsConfig(2, 1, seed=42)
    es = wfqd.equilibrate_ewfs_state(ecfg, 0)
    eps, bound, violable = es.lf_epsilon()
    check(abs(bound - (2 + 4 * eps)) < 1e-15, "LF bound is 2 + 4 eps")
    check(violable == (eps < wfqd.LF_THRESHOLD), "violability flag")
    table = np.array(es.p_cd)
    check(abs(table.sum() - 1) < 1e-12, "joint outcome table normalised")
    check(np.allclose(table, [[0.25, 0.25], [0.25, 0.25]], atol=1e-12), "maximally entangled source at theta = pi/4")

    x = [[0, 1], [1, 0]]
    z = [[1, 0], [0, -1]]
    s = 1 / math.sqrt(2)
    b0 = [[-s, -s], [-s, s]]
    b1 = [[-s, s], [s, s]]
    singlet = np.array([0, 1, -1, 0]) / math.sqrt(2)
    rho_s = np.outer(singlet, singlet.conj()).tolist()
    value = wfqd.chsh(rho_s, 2, z, x, b1, b0)
    check(abs(abs(value) - 2 * math.sqrt(2)) < 1e-12, "Tsirelson value on the singlet")
    try:
        wfqd.chsh(rho_s, 3, z, x, b1, b0)
    except ValueError:
        check(True, "bad bipartition rejected")
    else:
        raise AssertionError("bad bipartition accepted")

    rows = wfqd.sweep("wf", [1, 2], [2], samples=5, seed=7)
    check(len(rows) == 2 * 12, "sweep row count")
    check(all(row["n_samples"] == 5 for row in rows), "sample count recorded")
    csv = wfqd.preset_csv("fig3", samples=2)
    check(csv.splitlines()[0] == ",".join(wfqd.CSV_HEADER), "CSV header")

    try:
        wfqd.WfConfig(20, 20)
    except MemoryError:
        check(True, "qubit budget enforced")
    else:
        raise AssertionError("oversized layout accepted")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
