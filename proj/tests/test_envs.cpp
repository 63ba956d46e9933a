#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "latentlab/envs.hpp"

using namespace latentlab;

TEST_CASE("stratified: one accuracy per interval, for every seed") {
    const double lo[] = {0.45, 0.55, 0.65, 0.9}, hi[] = {0.6, 0.7, 0.8, 1.0};
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        ExpertStream s = sample_expert_stream(Regime::Stratified, 4, 100, seed);
        // undo the permutation to recover the per-interval draws
        std::vector<double> raw(4);
        for (int i = 0; i < 4; ++i) raw[s.permutation[i]] = s.quality[i];
        std::vector<double> by_interval{raw[3], raw[2], raw[1], raw[0]};
        for (int k = 0; k < 4; ++k) {
            CHECK(by_interval[k] >= lo[k]);
            CHECK(by_interval[k] <= hi[k]);
        }
        CHECK(*std::max_element(s.quality.begin(), s.quality.end()) >= 0.9);
    }
}

TEST_CASE("flat and anti-signal intervals") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        ExpertStream f = sample_expert_stream(Regime::Flat, 4, 10, seed);
        int high = 0;
        for (double q : f.quality) {
            CHECK(q >= 0.4);
            CHECK(q <= 0.7);
            high += q > 0.6;
        }
        CHECK(high <= 1);

        ExpertStream a = sample_expert_stream(Regime::AntiSignal, 4, 10, seed);
        CHECK(std::count_if(a.quality.begin(), a.quality.end(), [](double q) { return q < 0.1; }) == 1);
    }
    CHECK_THROWS_AS(sample_expert_stream(Regime::Flat, 3, 10, 0), ConfigError);
}

TEST_CASE("uniform regime and stream shape") {
    ExpertStream s = sample_expert_stream(Regime::Uniform, 7, 50, 9);
    CHECK(s.labels.size() == 50);
    CHECK(s.advice.size() == 50);
    for (const auto& row : s.advice) CHECK(row.size() == 7);
    for (double q : s.quality) {
        CHECK(q >= 0.3);
        CHECK(q <= 0.9);
    }
    std::vector<int> p = s.permutation;
    std::sort(p.begin(), p.end());
    for (int i = 0; i < 7; ++i) CHECK(p[i] == i);
}

TEST_CASE("a perfect expert always matches the label") {
    ExpertStream s = expert_stream_with_quality({1.0, 0.0, 0.5}, 300, 4);
    for (int t = 0; t < 300; ++t) {
        CHECK(s.advice[t][0] == s.labels[t]);
        CHECK(s.advice[t][1] != s.labels[t]);
    }
    CHECK_THROWS_AS(expert_stream_with_quality({1.2}, 5, 0), RangeError);
}

TEST_CASE("empirical accuracy within 4 sigma") {
    ExpertStream s = expert_stream_with_quality({0.3, 0.55, 0.8, 0.95}, 5000, 31);
    for (int i = 0; i < 4; ++i) {
        int ok = 0;
        for (int t = 0; t < 5000; ++t) ok += s.advice[t][i] == s.labels[t];
        double p = s.quality[i], sd = std::sqrt(p * (1 - p) / 5000);
        CHECK(std::abs(ok / 5000.0 - p) <= 4 * sd);
    }
    int ones = 0;
    for (int y : s.labels) ones += y;
    CHECK(std::abs(ones / 5000.0 - 0.5) <= 4 * std::sqrt(0.25 / 5000));
}

TEST_CASE("streams are deterministic in the seed") {
    ExpertStream a = sample_expert_stream(Regime::Stratified, 4, 100, 77);
    ExpertStream b = sample_expert_stream(Regime::Stratified, 4, 100, 77);
    ExpertStream c = sample_expert_stream(Regime::Stratified, 4, 100, 78);
    CHECK(stream_to_json(a) == stream_to_json(b));
    CHECK(stream_to_json(a) != stream_to_json(c));
}

TEST_CASE("mdp grid and reward families") {
    auto grid = mdp_grid();
    CHECK(grid.size() == 18);
    CHECK(family_from_name(family_name(RewardFamily::Sparse)) == RewardFamily::Sparse);

    double sparse_mean = 0.0, peaked_mean = 0.0;
    int sparse_n = 0, peaked_n = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        MdpSpec p = sample_mdp({RewardFamily::Peaked, 1.0}, seed);
        for (int s = 0; s < p.S; ++s)
            for (int a = 0; a < p.A; ++a) {
                CHECK(p.R(s, a) > 0.0);
                CHECK(p.R(s, a) < 1.0);
                peaked_mean += p.R(s, a);
                ++peaked_n;
            }
        MdpSpec q = sample_mdp({RewardFamily::Sparse, 1.0}, seed);
        for (int s = 0; s < q.S; ++s)
            for (int a = 0; a < q.A; ++a) {
                CHECK(q.R(s, a) >= 0.0);
                CHECK(q.R(s, a) <= 1.0);
                sparse_mean += q.R(s, a);
                ++sparse_n;
            }
        CHECK(p.S >= 2);
        CHECK(p.S <= 8);
        CHECK(p.A >= 2);
        CHECK(p.A <= 4);
        CHECK(p.T >= 10);
        CHECK(p.T <= 50);
        CHECK(p.epsilon >= 0.0);
        CHECK(p.epsilon <= 1.0);
    }
    // Beta(2,2) has mean 1/2, Beta(0.1,2) has mean 0.1/2.1
    CHECK(std::abs(peaked_mean / peaked_n - 0.5) < 0.03);
    CHECK(std::abs(sparse_mean / sparse_n - 0.1 / 2.1) < 0.02);
}

TEST_CASE("transition rows are distributions") {
    for (const MdpCell& cell : mdp_grid()) {
        MdpSpec m = sample_mdp(cell, 1234);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) {
                double sum = 0.0;
                for (double p : m.P[s][a]) {
                    CHECK(p >= 0.0);
                    sum += p;
                }
                CHECK(std::abs(sum - 1.0) <= 1e-12);
            }
    }
}

TEST_CASE("Dirichlet concentration: large kappa rows are flatter") {
    Rng rng(6);
    double big = 0.0, small = 0.0;
    for (int k = 0; k < 1000; ++k) {
        auto a = sample_dirichlet(5.0, 4, rng), b = sample_dirichlet(0.1, 4, rng);
        big += *std::max_element(a.begin(), a.end());
        small += *std::max_element(b.begin(), b.end());
    }
    CHECK(big / 1000 < small / 1000 - 0.2);
}

TEST_CASE("rollout: pure exploration has a uniform action marginal") {
    MdpRanges r;
    r.A_min = r.A_max = 4;
    MdpSpec m = sample_mdp({RewardFamily::Uniform, 1.0}, 3, r);
    m.epsilon = 1.0;
    m.T = 10000;
    Trajectory t = rollout_qlearning(m, 11);
    std::vector<int> cnt(4, 0);
    for (const Step& s : t.steps) ++cnt[s.a];
    double chi2 = 0.0;
    for (int c : cnt) chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
    CHECK(chi2 < 16.27);  // chi-square, 3 dof, p = 0.001
}

TEST_CASE("rollout: greedy start picks the lowest action, records the post-update argmax") {
    MdpSpec m = sample_mdp({RewardFamily::Peaked, 1.0}, 8);
    m.epsilon = 0.0;
    Trajectory t = rollout_qlearning(m, 5);
    REQUIRE(!t.steps.empty());
    CHECK(t.steps[0].a == 0);
    for (size_t k = 0; k < t.steps.size(); ++k) {
        const Step& s = t.steps[k];
        CHECK(s.a_star == argmax_lowest(t.Q[k].row(s.s_next).transpose()));
        QTable prev = k == 0 ? QTable::Zero(m.S, m.A) : t.Q[k - 1];
        CHECK(t.Q[k] == q_learning_step(prev, s.s, s.a, s.r, s.s_next, m.alpha, m.gamma_disc));
    }
}

TEST_CASE("rollout: permuted copy is a relabelling") {
    MdpSpec m = sample_mdp({RewardFamily::Dense, 0.1}, 21);
    Trajectory t = rollout_qlearning(m, 2);
    for (size_t k = 0; k < t.steps.size(); ++k) {
        CHECK(t.permuted_steps[k].s == m.state_perm[t.steps[k].s]);
        CHECK(t.permuted_steps[k].a == m.action_perm[t.steps[k].a]);
        CHECK(t.permuted_steps[k].r == t.steps[k].r);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) CHECK(t.permuted_Q[k](m.state_perm[s], m.action_perm[a]) == t.Q[k](s, a));
    }
}

TEST_CASE("rollout: deterministic and Bernoulli rewards are 0/1") {
    MdpSpec m = sample_mdp({RewardFamily::Bernoulli, 1.0}, 17);
    Trajectory a = rollout_qlearning(m, 99), b = rollout_qlearning(m, 99);
    REQUIRE(a.steps.size() == b.steps.size());
    for (size_t k = 0; k < a.steps.size(); ++k) {
        CHECK(a.steps[k].s == b.steps[k].s);
        CHECK(a.steps[k].a == b.steps[k].a);
        CHECK(a.steps[k].r == b.steps[k].r);
        CHECK(a.Q[k] == b.Q[k]);
        CHECK((a.steps[k].r == 0.0 || a.steps[k].r == 1.0));
    }
    CHECK(mdp_to_json(m) == mdp_to_json(sample_mdp({RewardFamily::Bernoulli, 1.0}, 17)));
}

TEST_CASE("rollout: update hook replaces the tabular rule only") {
    MdpSpec m = sample_mdp({RewardFamily::Uniform, 5.0}, 4);
    int calls = 0;
    auto hook = [&](const QTable& Q, int s, int a, double r, int s2) {
        ++calls;
        return q_learning_step(Q, s, a, r, s2, m.alpha, m.gamma_disc);
    };
    Trajectory a = rollout_qlearning(m, 8), b = rollout_qlearning(m, 8, hook);
    CHECK(calls == m.T);
    for (size_t k = 0; k < a.steps.size(); ++k) CHECK(a.Q[k] == b.Q[k]);
}
