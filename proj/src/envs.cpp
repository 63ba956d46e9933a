#include "latentlab/envs.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace latentlab {

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::Uniform: return "uniform";
        case Regime::Stratified: return "stratified";
        case Regime::Flat: return "flat";
        case Regime::AntiSignal: return "anti_signal";
    }
    return "?";
}

Regime regime_from_name(const std::string& s) {
    for (Regime r : {Regime::Uniform, Regime::Stratified, Regime::Flat, Regime::AntiSignal})
        if (s == regime_name(r)) return r;
    if (s == "anti-signal") return Regime::AntiSignal;
    throw ConfigError("unknown regime: " + s);
}

static std::vector<int> shuffled(int n, Rng& rng) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

// labels are fair coins; expert i is right with probability quality[i]
static void fill_rounds(ExpertStream& st, Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int t = 0; t < st.T; ++t) {
        int y = coin(rng) ? 1 : 0;
        std::vector<int> adv(st.n);
        for (int i = 0; i < st.n; ++i) adv[i] = u01(rng) < st.quality[i] ? y : 1 - y;
        st.labels.push_back(y);
        st.advice.push_back(std::move(adv));
    }
}

ExpertStream expert_stream_with_quality(const std::vector<double>& quality, int T, std::uint64_t seed) {
    if (quality.empty() || T < 0) throw ConfigError("expert stream needs n >= 1 and T >= 0");
    for (double q : quality)
        if (!(q >= 0.0 && q <= 1.0)) throw RangeError("expert accuracy must lie in [0,1]");
    ExpertStream st;
    st.regime = Regime::Uniform;
    st.seed = seed;
    st.n = static_cast<int>(quality.size());
    st.T = T;
    st.quality = quality;
    st.permutation.resize(st.n);
    std::iota(st.permutation.begin(), st.permutation.end(), 0);
    Rng rng(seed);
    fill_rounds(st, rng);
    return st;
}

ExpertStream sample_expert_stream(Regime regime, int n, int T, std::uint64_t seed) {
    if (n < 1 || T < 0) throw ConfigError("expert stream needs n >= 1 and T >= 0");
    std::vector<std::pair<double, double>> iv;
    switch (regime) {
        case Regime::Uniform: iv.assign(n, {0.3, 0.9}); break;
        case Regime::Stratified: iv = {{0.9, 1.0}, {0.65, 0.8}, {0.55, 0.7}, {0.45, 0.6}}; break;
        case Regime::Flat: iv = {{0.6, 0.7}, {0.4, 0.6}, {0.4, 0.6}, {0.4, 0.6}}; break;
        case Regime::AntiSignal: iv = {{0.6, 0.7}, {0.0, 0.1}, {0.4, 0.6}, {0.4, 0.6}}; break;
    }
    if (static_cast<int>(iv.size()) != n) throw ConfigError(std::string(regime_name(regime)) + " regime needs n = 4");

    Rng rng(seed);
    ExpertStream st;
    st.regime = regime;
    st.seed = seed;
    st.n = n;
    st.T = T;
    std::vector<double> raw(n);
    for (int i = 0; i < n; ++i) raw[i] = std::uniform_real_distribution<double>(iv[i].first, iv[i].second)(rng);
    st.permutation = shuffled(n, rng);
    st.quality.resize(n);
    for (int i = 0; i < n; ++i) st.quality[i] = raw[st.permutation[i]];

    fill_rounds(st, rng);
    return st;
}

const char* family_name(RewardFamily f) {
    switch (f) {
        case RewardFamily::Peaked: return "peaked";
        case RewardFamily::Bimodal: return "bimodal";
        case RewardFamily::Uniform: return "uniform";
        case RewardFamily::Sparse: return "sparse";
        case RewardFamily::Dense: return "dense";
        case RewardFamily::Bernoulli: return "bernoulli";
    }
    return "?";
}

RewardFamily family_from_name(const std::string& s) {
    for (RewardFamily f : {RewardFamily::Peaked, RewardFamily::Bimodal, RewardFamily::Uniform, RewardFamily::Sparse,
                           RewardFamily::Dense, RewardFamily::Bernoulli})
        if (s == family_name(f)) return f;
    throw ConfigError("unknown reward family: " + s);
}

std::vector<MdpCell> mdp_grid() {
    std::vector<MdpCell> g;
    for (RewardFamily f : {RewardFamily::Peaked, RewardFamily::Bimodal, RewardFamily::Uniform, RewardFamily::Sparse,
                           RewardFamily::Dense, RewardFamily::Bernoulli})
        for (double k : {0.1, 1.0, 5.0}) g.push_back({f, k});
    return g;
}

double sample_beta(double a, double b, Rng& rng) {
    double x = std::gamma_distribution<double>(a, 1.0)(rng);
    double y = std::gamma_distribution<double>(b, 1.0)(rng);
    if (x + y == 0.0) return a >= b ? 1.0 : 0.0;  // both gammas underflowed
    return x / (x + y);
}

std::vector<double> sample_dirichlet(double kappa, int k, Rng& rng) {
    std::vector<double> g(k);
    double z = 0.0;
    std::gamma_distribution<double> gd(kappa, 1.0);
    for (auto& x : g) z += (x = gd(rng));
    if (z == 0.0) {
        // every draw underflowed (tiny kappa): put the mass on one uniform index
        std::fill(g.begin(), g.end(), 0.0);
        g[std::uniform_int_distribution<int>(0, k - 1)(rng)] = 1.0;
        return g;
    }
    for (auto& x : g) x /= z;
    return g;
}

static std::pair<double, double> beta_params(RewardFamily f) {
    switch (f) {
        case RewardFamily::Peaked: return {2.0, 2.0};
        case RewardFamily::Bimodal: return {0.5, 0.5};
        case RewardFamily::Uniform: return {1.0, 1.0};
        case RewardFamily::Sparse: return {0.1, 2.0};
        case RewardFamily::Dense: return {2.0, 0.1};
        case RewardFamily::Bernoulli: break;
    }
    return {0.0, 0.0};
}

MdpSpec sample_mdp(const MdpCell& cell, std::uint64_t seed, const MdpRanges& ranges, bool bernoulli_per_visit) {
    if (!(cell.kappa > 0.0)) throw ConfigError("Dirichlet concentration must be > 0");
    Rng rng(seed);
    MdpSpec m;
    m.cell = cell;
    m.seed = seed;
    m.bernoulli_per_visit = bernoulli_per_visit;
    m.S = std::uniform_int_distribution<int>(ranges.S_min, ranges.S_max)(rng);
    m.A = std::uniform_int_distribution<int>(ranges.A_min, ranges.A_max)(rng);
    m.T = std::uniform_int_distribution<int>(ranges.T_min, ranges.T_max)(rng);
    m.epsilon = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    m.P.assign(m.S, std::vector<std::vector<double>>(m.A));
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) m.P[s][a] = sample_dirichlet(cell.kappa, m.S, rng);
    m.R = Mat(m.S, m.A);
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
            if (cell.family == RewardFamily::Bernoulli) {
                m.R(s, a) = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
            } else {
                auto [al, be] = beta_params(cell.family);
                m.R(s, a) = sample_beta(al, be, rng);
            }
        }
    m.state_perm = shuffled(m.S, rng);
    m.action_perm = shuffled(m.A, rng);
    return m;
}

Trajectory rollout_qlearning(const MdpSpec& m, std::uint64_t seed, const QUpdateFn& update) {
    Rng rng(seed);
    Trajectory tr;
    tr.seed = seed;
    QTable Q = QTable::Zero(m.S, m.A);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> any_action(0, m.A - 1);

    // Bernoulli draws fixed once per (s,a) when not resampled per visit
    Mat fixed_draw;
    if (m.cell.family == RewardFamily::Bernoulli && !m.bernoulli_per_visit) {
        fixed_draw = Mat(m.S, m.A);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) fixed_draw(s, a) = u01(rng) < m.R(s, a) ? 1.0 : 0.0;
    }

    int s = std::uniform_int_distribution<int>(0, m.S - 1)(rng);
    for (int t = 0; t < m.T; ++t) {
        int a;
        if (u01(rng) < m.epsilon)
            a = any_action(rng);
        else
            a = argmax_lowest(Q.row(s).transpose());
        double r;
        if (m.cell.family != RewardFamily::Bernoulli)
            r = m.R(s, a);
        else if (m.bernoulli_per_visit)
            r = u01(rng) < m.R(s, a) ? 1.0 : 0.0;
        else
            r = fixed_draw(s, a);
        std::discrete_distribution<int> next(m.P[s][a].begin(), m.P[s][a].end());
        int s2 = next(rng);
        Q = update ? update(Q, s, a, r, s2) : q_learning_step(Q, s, a, r, s2, m.alpha, m.gamma_disc);
        int a_star = argmax_lowest(Q.row(s2).transpose());
        tr.steps.push_back({s, a, r, s2, a_star});
        tr.Q.push_back(Q);
        s = s2;
    }

    for (size_t t = 0; t < tr.steps.size(); ++t) {
        const Step& st = tr.steps[t];
        tr.permuted_steps.push_back({m.state_perm[st.s], m.action_perm[st.a], st.r, m.state_perm[st.s_next],
                                     m.action_perm[st.a_star]});
        QTable P(m.S, m.A);
        for (int i = 0; i < m.S; ++i)
            for (int j = 0; j < m.A; ++j) P(m.state_perm[i], m.action_perm[j]) = tr.Q[t](i, j);
        tr.permuted_Q.push_back(P);
    }
    return tr;
}

std::string stream_to_json(const ExpertStream& s) {
    nlohmann::json j{{"regime", regime_name(s.regime)}, {"seed", s.seed},        {"n", s.n},
                     {"T", s.T},                        {"quality", s.quality}, {"permutation", s.permutation},
                     {"labels", s.labels},              {"advice", s.advice}};
    return j.dump();
}

std::string mdp_to_json(const MdpSpec& m) {
    std::vector<std::vector<double>> R(m.S, std::vector<double>(m.A));
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) R[s][a] = m.R(s, a);
    nlohmann::json j{{"family", family_name(m.cell.family)},
                     {"kappa", m.cell.kappa},
                     {"seed", m.seed},
                     {"S", m.S},
                     {"A", m.A},
                     {"T", m.T},
                     {"epsilon", m.epsilon},
                     {"alpha", m.alpha},
                     {"gamma_disc", m.gamma_disc},
                     {"bernoulli_per_visit", m.bernoulli_per_visit},
                     {"P", m.P},
                     {"R", R},
                     {"state_perm", m.state_perm},
                     {"action_perm", m.action_perm}};
    return j.dump();
}

}  // namespace latentlab
