"""Fast fixture and oracle verifications behind ``nflearn check``."""
from __future__ import annotations

import numpy as np

from .estimation import SampleTerms, rnf_contributions, rnf_objective
from .functions import Theta, rnf_mu_dense, rnf_mu_exact, rnf_mu_tau
from .graph import influence_matrix, tau_neighborhood
from .harness import enumerate_designs, fixture, gen_er_digraph
from .rng import stream
from .snowball import (SRSWOR, QTau, eligibility_flags, f_in_sample, joint_matrix,
                       run_tsbs, sbs_weights)
from .trw import stationary_probs, transition_matrix

FIG1_A2 = np.array([[0, 0, 1, 1], [0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0]])
FIG1_A3 = np.array([[0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])


def _fig1_powers():
    a = fixture("fig1").adjacency.toarray()
    a2, a3 = a @ a, a @ a @ a
    ok = (a2 == FIG1_A2).all() and (a3 == FIG1_A3).all() and not (a3 @ a).any()
    return ok, "A^2, A^3 match; A^4 = 0" if ok else "matrix powers differ"


def _fig1_tau():
    g = fixture("fig1")
    got = [sorted(tau_neighborhood(g, i, 2)) for i in range(4)]
    ok = got == [[], [0], [0, 1], [0, 1, 2]]
    return ok, f"nu^2 = {got}"


def _fig2_waves():
    g = fixture("fig2")
    s = run_tsbs(g, {0}, 3)
    waves = [sorted(w) for w in s.waves]
    F = sorted(f_in_sample(s, 2))
    tau = sorted(i for i, v in eligibility_flags(s, QTau(2)).items() if v)
    ok = waves == [[1], [2], [3]] and F == [0, 1, 2, 3] and tau == [0, 1]
    return ok, f"waves {waves}, F(i3) {F}, s_tau {tau}"


def _stationary():
    g = fixture("fig2")
    p = transition_matrix(g, 1.0)
    vals, vecs = np.linalg.eig(p.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    err = float(np.abs(v / v.sum() - stationary_probs(g, 1.0)).max())
    return err <= 1e-10, f"max error {err:.1e}"


def _enumeration():
    g = fixture("fig2")
    design = SRSWOR(2, g.n)
    tab = enumerate_designs(g, design, 1)
    F = tuple(frozenset([i]) for i in range(g.n))
    err = float(np.abs(tab.pr_joint - joint_matrix(F, design)).max())
    sample = run_tsbs(g, {0, 3}, 1)
    w_ok = np.allclose(sbs_weights(sample, design).w, 2.5)
    return err <= 1e-12 and w_ok, f"max joint error {err:.1e}"


def _gradient():
    rng = stream(7)
    worst = 0.0
    for _ in range(20):
        t = SampleTerms(np.zeros(1, dtype=np.int64), np.ones(1), rng.standard_normal((1, 2)),
                        rng.standard_normal(1), np.zeros((1, 2)), rng.standard_normal(1),
                        rng.uniform(0.1, 1, 1), rng.uniform(0.5, 2, 1))
        beta, lam = rng.standard_normal(2), rng.uniform(-0.9, 0.9)
        h = rnf_contributions(t, Theta(beta, lam=lam))[0]
        eps = 1e-6
        fd = []
        for k in range(3):
            v = np.r_[beta, lam]
            vp, vm = v.copy(), v.copy()
            vp[k] += eps
            vm[k] -= eps
            fd.append((rnf_objective(t, vp[2], vp[:2]) - rnf_objective(t, vm[2], vm[:2])) / (2 * eps))
        worst = max(worst, float(np.max(np.abs(h - fd) / np.maximum(np.abs(fd), 1e-8))))
    return worst <= 1e-6, f"max relative error {worst:.1e}"


def _rnf_solvers():
    g = gen_er_digraph(60, 0.08, seed=3, dim=2)
    m = influence_matrix(g)
    th = Theta([0.5, -1.0], lam=0.7)
    fp = rnf_mu_exact(g, m, th).mu
    dense = rnf_mu_dense(m, 0.7, g.x @ th.beta)
    f1 = fixture("fig1")
    m1 = influence_matrix(f1)
    t1 = Theta([1.0], lam=0.6)
    q3 = rnf_mu_tau(f1, m1, t1, 3).mu
    ex = rnf_mu_exact(f1, m1, t1).mu
    e1, e2 = float(np.abs(fp - dense).max()), float(np.abs(q3 - ex).max())
    return e1 <= 1e-8 and e2 <= 1e-14, f"fixed point {e1:.1e}, Q3 {e2:.1e}"


CHECKS = [
    ("fig1 matrix powers", _fig1_powers),
    ("fig1 tau-neighbourhoods", _fig1_tau),
    ("fig2 waves and eligibility", _fig2_waves),
    ("TRW stationary law", _stationary),
    ("design enumeration", _enumeration),
    ("gradient identity", _gradient),
    ("RNF solver equivalence", _rnf_solvers),
]


def run_checks() -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - reported as a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
