import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nflearn.estimation import VarianceSpec, population_terms
from nflearn.graph import influence_matrix
from nflearn.harness import ModelSpec, enumerate_designs, fixture, gen_er_digraph, gen_outcomes
from nflearn.snowball import (SRSWOR, Bernoulli, DesignError, QTau, SampleGraph, design_from_dict,
                              eligibility_flags, f_in_sample, inclusion_prob, joint_inclusion_prob,
                              joint_matrix, parse_target, population_ancestry, run_tsbs,
                              sample_bundle_json, sample_terms, sbs_weights)


def undirected_adj(g):
    return [set(map(int, g.neighbor_array(i))) for i in range(g.n)]


def waves_oracle(g, s0, T):
    adj = undirected_adj(g)
    layers = [set(s0)]
    for _ in range(T):
        reach = set().union(*(adj[i] for i in layers[-1])) if layers[-1] else set()
        layers.append(reach - set().union(*layers))
    return [frozenset(w) for w in layers[1:]]


def bfs_ball(adj, i, r):
    ball, front = {i}, {i}
    for _ in range(r):
        front = set().union(*(adj[j] for j in front)) - ball if front else set()
        ball |= front
    return ball


def small_graphs(max_n=8):
    return st.builds(lambda n, p, seed: gen_er_digraph(n, p, seed=seed),
                     st.integers(2, max_n), st.floats(0.1, 0.6), st.integers(0, 10 ** 6))


class TestWaves:
    def test_figure2_run(self):
        s = run_tsbs(fixture("fig2"), {0}, 3)
        assert [set(w) for w in s.waves] == [{1}, {2}, {3}]
        assert s.seed_sample == {0, 1, 2}
        assert s.nodes == (0, 1, 2, 3)

    def test_figure1_one_wave_from_i2(self):
        s = run_tsbs(fixture("fig1"), {1}, 1)
        assert s.waves[0] == {0, 2, 3}
        assert s.seed_sample == {1}

    def test_census_has_empty_waves(self):
        g = fixture("fig2")
        s = run_tsbs(g, range(g.n), 2)
        assert all(len(w) == 0 for w in s.waves)
        assert s.seed_sample == set(range(g.n))
        assert s.terminated

    def test_invalid_inputs(self):
        g = fixture("fig2")
        with pytest.raises(DesignError):
            run_tsbs(g, set(), 2)
        with pytest.raises(DesignError):
            run_tsbs(g, {0}, 0)

    @settings(max_examples=80, deadline=None)
    @given(small_graphs(), st.integers(1, 4), st.integers(0, 10 ** 6))
    def test_waves_match_set_algebra(self, g, T, seed):
        rng = np.random.default_rng(seed)
        s0 = set(rng.choice(g.n, size=int(rng.integers(1, g.n + 1)), replace=False).tolist())
        assert list(run_tsbs(g, s0, T).waves) == waves_oracle(g, s0, T)

    @settings(max_examples=60, deadline=None)
    @given(small_graphs(), st.integers(1, 3), st.integers(0, 10 ** 6))
    def test_reciprocal_incident_observation(self, g, T, seed):
        rng = np.random.default_rng(seed)
        s0 = {int(rng.integers(g.n))}
        s = run_tsbs(g, s0, T)
        observed = {(i, j): w for i, j, w in s.edges}
        for i in s.seed_sample:
            for j in range(g.n):
                if j == i:
                    continue
                assert s.known(i, j) and s.known(j, i)
                for a, b in ((i, j), (j, i)):
                    assert ((a, b) in observed) == g.has_edge(a, b)
                    if g.has_edge(a, b):
                        assert observed[(a, b)] == g.edge_values[(a, b)]
        for i, j, _ in s.edges:
            assert i in s.seed_sample or j in s.seed_sample


class TestEligibility:
    def test_figure2_qtau(self):
        s = run_tsbs(fixture("fig2"), {0}, 3)
        flags = eligibility_flags(s, QTau(2))
        assert {i for i, v in flags.items() if v} == {0, 1}

    def test_cnf_flags_are_seed_sample(self):
        s = run_tsbs(fixture("fig2"), {0}, 3)
        for target in ("cnf", "rnf"):
            flags = eligibility_flags(s, target)
            assert {i for i, v in flags.items() if v} == s.seed_sample
            assert set(flags) == set(s.nodes)

    @settings(max_examples=80, deadline=None)
    @given(small_graphs(), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10 ** 6))
    def test_qtau_contains_s0_and_observes_neighbourhood(self, g, T, tau, seed):
        rng = np.random.default_rng(seed)
        s0 = set(rng.choice(g.n, size=int(rng.integers(1, 3)), replace=False).tolist())
        s = run_tsbs(g, s0, T)
        ok = {i for i, v in eligibility_flags(s, QTau(tau)).items() if v}
        if T >= tau:
            assert s0 <= ok
        adj = undirected_adj(g)
        for i in ok:
            # everything within tau - 1 hops of i is a seed node, so all
            # edges and values along paths of length <= tau into i are observed
            assert bfs_ball(adj, i, tau - 1) <= s.seed_sample

    def test_parse_target(self):
        assert parse_target("qtau:3") == QTau(3)
        assert parse_target("cnf") == "cnf"
        with pytest.raises(ValueError):
            parse_target("bogus")
        with pytest.raises(ValueError):
            QTau(0)


class TestAncestry:
    def test_figure2_f_of_i3(self):
        g = fixture("fig2")
        s = run_tsbs(g, {0}, 3)
        assert f_in_sample(s, 2) == {0, 1, 2, 3}
        assert 4 in population_ancestry(g, 3)[2]
        assert 4 not in f_in_sample(s, 2)

    def test_one_wave_gives_singleton(self):
        s = run_tsbs(fixture("fig1"), {1}, 1)
        assert f_in_sample(s, 1) == {1}

    def test_ineligible_node_rejected(self):
        s = run_tsbs(fixture("fig2"), {0}, 3)
        with pytest.raises(DesignError):
            f_in_sample(s, 3)

    def test_figure2_distance_i1_to_i5(self):
        s = run_tsbs(fixture("fig2"), {0}, 5)
        assert s.distances_from([0])[4] == 4

    @settings(max_examples=40, deadline=None)
    @given(small_graphs(), st.integers(1, 4))
    def test_sample_ancestry_within_population_ancestry(self, g, T):
        F = population_ancestry(g, T)
        for s0 in itertools.combinations(range(g.n), 1):
            s = run_tsbs(g, s0, T)
            for i in s.seed_sample:
                assert f_in_sample(s, i) <= F[i]


class TestProbabilities:
    def test_srswor_one_of_five(self):
        assert inclusion_prob({0, 1, 2, 3}, SRSWOR(1, 5)) == pytest.approx(0.8, abs=1e-15)

    def test_bernoulli_single(self):
        assert inclusion_prob({3}, Bernoulli(0.37, 6)) == pytest.approx(0.37, abs=1e-15)

    def test_census(self):
        for k in range(1, 6):
            assert inclusion_prob(set(range(k)), SRSWOR(5, 5)) == 1.0

    def test_equal_sets_reduce_to_marginal(self):
        for d in (SRSWOR(3, 9), Bernoulli(0.2, 9)):
            F = {1, 4, 6}
            assert joint_inclusion_prob(F, F, d) == pytest.approx(inclusion_prob(F, d), abs=1e-15)

    def test_empty_set_rejected(self):
        with pytest.raises(DesignError):
            inclusion_prob(set(), SRSWOR(1, 4))

    def test_design_validation(self):
        with pytest.raises(DesignError):
            SRSWOR(0, 4)
        with pytest.raises(DesignError):
            Bernoulli(1.0, 4)
        with pytest.raises(DesignError):
            design_from_dict({"kind": "cluster"}, 4)
        assert design_from_dict({"kind": "srswor", "m": 2}, 4) == SRSWOR(2, 4)

    @pytest.mark.parametrize("N", [4, 5, 6])
    def test_disjoint_bernoulli_sets_factorise(self, N):
        p = 0.3
        d = Bernoulli(p, N)
        Fi, Fj = {0, 1}, set(range(2, N))
        exact = sum(q for s0, q in d.enumerate() if s0 & Fi and s0 & Fj)
        closed = joint_inclusion_prob(Fi, Fj, d)
        product = (1 - (1 - p) ** len(Fi)) * (1 - (1 - p) ** len(Fj))
        assert closed == pytest.approx(exact, abs=1e-12)
        assert closed == pytest.approx(product, abs=1e-12)

    def test_srswor_rational_oracle(self):
        N, m = 8, 3
        total = 0
        hits = Fraction(0)
        Fi, Fj = {0, 1, 2}, {2, 5}
        for s0 in itertools.combinations(range(N), m):
            total += 1
            hits += bool(set(s0) & Fi and set(s0) & Fj)
        assert joint_inclusion_prob(Fi, Fj, SRSWOR(m, N)) == pytest.approx(float(hits / total),
                                                                          abs=1e-15)

    @pytest.mark.parametrize("design", [SRSWOR(1, 5), SRSWOR(2, 7), SRSWOR(4, 8),
                                        Bernoulli(0.25, 6), Bernoulli(0.6, 7)])
    def test_all_pairs_match_enumeration(self, design):
        rng = np.random.default_rng(design.N)
        F = [frozenset(rng.choice(design.N, size=int(rng.integers(1, design.N)), replace=False)
                       .tolist()) for _ in range(6)]
        exact = np.zeros((len(F), len(F)))
        for s0, q in design.enumerate():
            hit = np.array([bool(s0 & f) for f in F])
            exact += q * np.outer(hit, hit)
        assert np.abs(joint_matrix(F, design) - exact).max() <= 1e-12

    @pytest.mark.parametrize("design", [SRSWOR(2, 8), Bernoulli(0.3, 8)])
    def test_conditional_weight_identity(self, design):
        for k in range(1, design.N + 1):
            F = frozenset(range(k))
            e = sum(q for s0, q in design.enumerate() if s0 & F)
            assert e / inclusion_prob(F, design) == pytest.approx(1.0, abs=1e-12)


class TestWeights:
    def test_figure2_weight_of_i3(self):
        g = fixture("fig2")
        design = SRSWOR(1, 5)
        s = run_tsbs(g, {0}, 3)
        w = sbs_weights(s, design)
        assert w.weight(2) == pytest.approx(1.25, abs=1e-15)
        assert w.weight(3) == 0.0
        with pytest.raises(KeyError):
            w.weight(4)
        F = f_in_sample(s, 2)
        total = sum(q * bool(s0 & F) * w.weight(2) for s0, q in design.enumerate())
        assert total == pytest.approx(1.0, abs=1e-15)

    def test_census_weights_are_one(self):
        g = fixture("fig2")
        s = run_tsbs(g, range(5), 3)
        assert np.all(sbs_weights(s, SRSWOR(5, 5)).w == 1.0)

    def test_diagonal_of_joint_matches_weights(self):
        g = gen_er_digraph(12, 0.2, seed=3)
        design = SRSWOR(3, 12)
        s = run_tsbs(g, {0, 5, 9}, 2)
        w = sbs_weights(s, design)
        p = w.joint_matrix(design)
        np.testing.assert_allclose(np.diag(p), w.pi, rtol=1e-15)
        # Delta_ii = w_i^2 pi_i - 1 = w_i - 1
        np.testing.assert_allclose(w.w ** 2 * np.diag(p) - 1, w.w - 1, rtol=1e-12, atol=1e-14)

    def test_enumeration_tables_figure2(self):
        g = fixture("fig2")
        tab = enumerate_designs(g, SRSWOR(1, 5), 3)
        assert tab.n_samples == 5
        # fig2 is a path in the undirected view; j is a seed node when the
        # start lies within two hops of it
        np.testing.assert_allclose(tab.pr_delta, [0.6, 0.8, 1.0, 0.8, 0.6], atol=1e-15)

    def test_enumeration_census(self):
        tab = enumerate_designs(fixture("fig2"), SRSWOR(5, 5), 2)
        np.testing.assert_array_equal(tab.pr_delta, 1.0)
        np.testing.assert_array_equal(tab.pr_joint, 1.0)

    @pytest.mark.parametrize("T", [1, 2])
    def test_enumeration_is_unbiased_for_short_waves(self, T):
        # with T <= 2 the sample ancestry is the population ancestry,
        # so E[delta_i w_i] = 1 for every node
        for seed in range(10):
            g = gen_er_digraph(7, 0.2, seed=seed)
            for design in (SRSWOR(2, 7), Bernoulli(0.3, 7)):
                tab = enumerate_designs(g, design, T)
                F = population_ancestry(g, T)
                np.testing.assert_allclose(tab.e_delta_w, 1.0, atol=1e-12)
                np.testing.assert_allclose(tab.pr_joint, joint_matrix(F, design), atol=1e-12)

    def test_enumeration_limit(self):
        with pytest.raises(DesignError):
            enumerate_designs(gen_er_digraph(30, 0.1), SRSWOR(10, 30), 1)


class TestSampleTerms:
    @pytest.mark.parametrize("mode,T", [("cnf", 1), ("cnf", 2), ("rnf", 2), ("rnf", 3)])
    def test_observed_bundles_equal_population_rows(self, mode, T):
        g = gen_er_digraph(30, 0.1, seed=7)
        model = (ModelSpec("cnf", (1.0,), gamma=(0.5,)) if mode == "cnf"
                 else ModelSpec("rnf", (1.0,), lam=0.4))
        g = gen_outcomes(g, model, seed=7)
        m = influence_matrix(g)
        pop = population_terms(g, m)
        design = SRSWOR(4, 30)
        for seed in range(5):
            s = run_tsbs(g, design.draw(np.random.default_rng(seed)), T)
            w = sbs_weights(s, design, mode)
            t = sample_terms(s, w, VarianceSpec(), target=mode)
            ref = pop.take(w.nodes, w.w)
            cols = ("x", "y", "z") + (("ydot", "msig2") if mode == "rnf" else ())
            for name in cols:
                np.testing.assert_allclose(getattr(t, name), getattr(ref, name), rtol=1e-13,
                                           atol=1e-15, err_msg=name)

    def test_bundle_json_round_trip(self):
        g = gen_outcomes(fixture("fig2"), ModelSpec("rnf", (1.0,), lam=0.3))
        design = SRSWOR(1, 5)
        s = run_tsbs(g, {0}, 3)
        w = sbs_weights(s, design, QTau(2))
        d = json.loads(sample_bundle_json(s, w, design, QTau(2)))
        assert d["design"]["target"] == "qtau:2"
        assert d["delta"] == {"0": 1, "1": 1, "2": 0, "3": 0}
        back = SampleGraph.from_dict(d)
        assert back.waves == s.waves and back.edges == s.edges
        np.testing.assert_array_equal(back.y, s.y)

    def test_observed_graph_masks_unseen(self):
        g = gen_outcomes(fixture("fig2"), ModelSpec("cnf", (1.0,), gamma=(0.5,)))
        obs = run_tsbs(g, {0}, 2).observed_graph()
        assert np.isnan(obs.y[3]) and np.isnan(obs.x[4, 0])
        assert obs.y[2] == g.y[2]
