#include "latentlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "latentlab/protocol.hpp"
#include "latentlab/qlearn_circuit.hpp"
#include "latentlab/wma_circuit.hpp"

namespace latentlab {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- regret

RegretTrace regret(const std::vector<int>& predictions, const ExpertStream& stream) {
    if (predictions.size() != stream.labels.size())
        throw ShapeError("regret: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(stream.labels.size()) + " rounds");
    RegretTrace rt;
    std::vector<int> ecum(stream.n, 0);
    int cum = 0;
    for (size_t t = 0; t < predictions.size(); ++t) {
        int p = predictions[t];
        if (p != 0 && p != 1) throw RangeError("regret: predictions must be 0 or 1");
        int y = stream.labels[t];
        int l = p != y;
        cum += l;
        for (int i = 0; i < stream.n; ++i) ecum[i] += stream.advice[t][i] != y;
        int best = *std::min_element(ecum.begin(), ecum.end());
        rt.loss.push_back(l);
        rt.cum_loss.push_back(cum);
        rt.best_expert_cum_loss.push_back(best);
        rt.regret.push_back(cum - best);
        rt.expert_cum_loss.push_back(ecum);
    }
    return rt;
}

// ---------------------------------------------------------------- seeding

static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t instance_seed(std::uint64_t base, int index) { return base ^ static_cast<std::uint64_t>(index); }

std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : tag) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ splitmix64(h));
}

Rng strategy_rng(std::uint64_t inst_seed, const std::string& strategy) {
    return Rng(mix_seed(inst_seed, "strategy:" + strategy));
}

// ---------------------------------------------------------------- config

static const std::set<std::string> kModes = {"verify-wma", "verify-qlearn", "bench-experts", "bench-qlearn",
                                             "protocol"};
static const std::vector<std::string> kExpertStrategies = {"MW", "FTL", "FPW", "Majority", "Random", "WMA-circuit"};
static const std::vector<std::string> kQStrategies = {"q-learning", "q-circuit", "random"};
static const std::set<std::string> kPredictors = {"always-1", "mw-wrapper", "counter-note", "remote"};

RunConfig default_config(const std::string& mode) {
    if (!kModes.count(mode)) throw ConfigError("unknown mode: " + mode);
    RunConfig c;
    c.mode = mode;
    if (mode == "verify-wma") {
        c.instances = 100;
        c.horizon = 100;
        c.regime = "uniform";
        c.tol_state = 1e-8;
        c.tol_pred = 1e-9;
    } else if (mode == "verify-qlearn") {
        c.instances = 100;
        c.horizon = 50;
        c.tol_state = 1e-9;
    } else if (mode == "bench-experts") {
        c.instances = 30;
        c.horizon = 100;
        c.strategies = kExpertStrategies;
        c.strategies.push_back("protocol:mw-wrapper");
    } else if (mode == "bench-qlearn") {
        c.instances = 36;
        c.horizon = 50;
        c.strategies = kQStrategies;
    } else {
        c.instances = 5;
        c.horizon = 100;
    }
    return c;
}

json RunConfig::to_json() const {
    return json{{"mode", mode},
                {"seed", seed},
                {"instances", instances},
                {"horizon", horizon},
                {"regime", regime},
                {"out", out},
                {"strategies", strategies},
                {"wma_n_min", wma_n_min},
                {"wma_n_max", wma_n_max},
                {"wma_gamma_min", wma_gamma_min},
                {"wma_gamma_max", wma_gamma_max},
                {"circuit_gamma_scale", circuit_gamma_scale},
                {"q_S_min", q_S_min},
                {"q_S_max", q_S_max},
                {"q_A_min", q_A_min},
                {"q_A_max", q_A_max},
                {"q_T_min", q_T_min},
                {"q_T_max", q_T_max},
                {"bernoulli_per_visit", bernoulli_per_visit},
                {"circuit_alpha_scale", circuit_alpha_scale},
                {"framing", framing},
                {"state", state},
                {"history", history},
                {"predictor", predictor},
                {"remote", remote},
                {"tol_state", tol_state},
                {"tol_pred", tol_pred},
                {"threads", threads}};
}

template <class T>
static void take(const json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>)
        ok = v.is_boolean();
    else if constexpr (std::is_same_v<T, std::uint64_t>)
        ok = v.is_number_unsigned();
    else if constexpr (std::is_integral_v<T>)
        ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>)
        ok = v.is_number();
    else if constexpr (std::is_same_v<T, std::string>)
        ok = v.is_string();
    if (!ok) throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    try {
        dst = v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::string mode = "bench-experts";
    take(j, "mode", mode);
    RunConfig c = default_config(mode);
    json keys = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!keys.contains(it.key())) throw ConfigError("unknown config key: " + it.key());
    take(j, "seed", c.seed);
    take(j, "instances", c.instances);
    take(j, "horizon", c.horizon);
    take(j, "regime", c.regime);
    take(j, "out", c.out);
    if (j.contains("strategies")) {
        const json& s = j.at("strategies");
        if (!s.is_array()) throw ConfigError("config key 'strategies' must be an array of names");
        c.strategies.clear();
        for (const auto& x : s) {
            if (!x.is_string()) throw ConfigError("config key 'strategies' must be an array of names");
            c.strategies.push_back(x.get<std::string>());
        }
    }
    take(j, "wma_n_min", c.wma_n_min);
    take(j, "wma_n_max", c.wma_n_max);
    take(j, "wma_gamma_min", c.wma_gamma_min);
    take(j, "wma_gamma_max", c.wma_gamma_max);
    take(j, "circuit_gamma_scale", c.circuit_gamma_scale);
    take(j, "q_S_min", c.q_S_min);
    take(j, "q_S_max", c.q_S_max);
    take(j, "q_A_min", c.q_A_min);
    take(j, "q_A_max", c.q_A_max);
    take(j, "q_T_min", c.q_T_min);
    take(j, "q_T_max", c.q_T_max);
    take(j, "bernoulli_per_visit", c.bernoulli_per_visit);
    take(j, "circuit_alpha_scale", c.circuit_alpha_scale);
    take(j, "framing", c.framing);
    take(j, "state", c.state);
    take(j, "history", c.history);
    take(j, "predictor", c.predictor);
    if (j.contains("remote")) {
        c.remote = j.at("remote");
        if (!c.remote.is_null() && !c.remote.is_object()) throw ConfigError("config key 'remote' must be an object");
    }
    take(j, "tol_state", c.tol_state);
    take(j, "tol_pred", c.tol_pred);
    take(j, "threads", c.threads);
    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (!kModes.count(mode)) throw ConfigError("unknown mode: " + mode);
    if (instances < 0) throw ConfigError("instances must be >= 0");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    Regime r = regime_from_name(regime);
    if (out.empty()) throw ConfigError("out must name a directory");
    // 2n+5 positions per round must fit the positional range
    if (wma_n_min < 1 || wma_n_max < wma_n_min || wma_n_max > 29)
        throw ConfigError("need 1 <= wma_n_min <= wma_n_max <= 29");
    if (!(wma_gamma_min > 1.0) || wma_gamma_max < wma_gamma_min) throw ConfigError("need 1 < wma_gamma_min <= wma_gamma_max");
    if (!(circuit_gamma_scale > 0.0) || !(circuit_alpha_scale > 0.0)) throw ConfigError("fault-injection scales must be > 0");
    if (q_S_min < 1 || q_S_max < q_S_min) throw ConfigError("need 1 <= q_S_min <= q_S_max");
    // 3A+9 positions per step must fit the positional range
    if (q_A_min < 1 || q_A_max < q_A_min || q_A_max > 18) throw ConfigError("need 1 <= q_A_min <= q_A_max <= 18");
    if (q_T_min < 1 || q_T_max < q_T_min) throw ConfigError("need 1 <= q_T_min <= q_T_max");
    if (tol_state < 0.0 || tol_pred < 0.0) throw ConfigError("tolerances must be >= 0");
    if (mode == "verify-wma" && r != Regime::Uniform) throw ConfigError("verify-wma draws n per episode; regime must be uniform");

    for (const auto& s : strategies) {
        if (mode == "bench-experts") {
            bool ok = std::find(kExpertStrategies.begin(), kExpertStrategies.end(), s) != kExpertStrategies.end();
            if (s.rfind("protocol:", 0) == 0) ok = kPredictors.count(s.substr(9)) > 0;
            if (!ok) throw ConfigError("unknown strategy for bench-experts: " + s);
        } else if (mode == "bench-qlearn") {
            if (std::find(kQStrategies.begin(), kQStrategies.end(), s) == kQStrategies.end())
                throw ConfigError("unknown strategy for bench-qlearn: " + s);
        }
    }
    std::set<std::string> uniq(strategies.begin(), strategies.end());
    if (uniq.size() != strategies.size()) throw ConfigError("duplicate strategy names");

    protocol_from_names(framing, state, history);
    if (!kPredictors.count(predictor)) throw ConfigError("unknown predictor: " + predictor);
    bool wants_remote = predictor == "remote" && mode == "protocol";
    for (const auto& s : strategies) wants_remote |= s == "protocol:remote";
    if (wants_remote) endpoint_from_json(remote).validate();
}

static json canonical(const RunConfig& c) {
    json j = c.to_json();
    j.erase("out");
    j.erase("threads");
    return j;
}

std::string RunConfig::hash() const { return sha256_hex(canonical(*this).dump()); }

std::vector<std::uint64_t> RunConfig::seeds() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < instances; ++i) s.push_back(instance_seed(seed, i));
    return s;
}

// ---------------------------------------------------------------- utilities

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(xs.size() - 1))};
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    int k = threads > 0 ? threads : std::max(1, hw);
    k = std::min(k, n);
    if (k == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < k; ++w)
        pool.emplace_back([&] {
            for (int i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

static std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

static std::string seeds_csv(const std::vector<std::uint64_t>& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out;
}

static void write_file(const std::filesystem::path& path, const std::string& data) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << data;
    f.close();
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

static std::string artifact_header(const RunConfig& cfg) {
    return "# config_sha256=" + cfg.hash() + "\n# seeds=" + seeds_csv(cfg.seeds()) + "\n# config=" +
           canonical(cfg).dump() + "\n";
}

static ojson artifact_meta(const RunConfig& cfg) {
    ojson m;
    m["config_sha256"] = cfg.hash();
    m["seeds"] = cfg.seeds();
    m["config"] = ojson::parse(canonical(cfg).dump());
    return m;
}

static std::string plot_meta(const RunConfig& cfg) {
    return "config_sha256=" + cfg.hash() + " seeds=" + seeds_csv(cfg.seeds()) + " config=" + canonical(cfg).dump();
}

// ---------------------------------------------------------------- equivalence

bool EquivalenceReport::pass() const {
    return max_state_dev <= tol_state && max_pred_dev <= tol_pred && agree == total && nonupdated_changed == 0;
}

json EquivalenceReport::to_json() const {
    json j{{"kind", kind},
           {"episodes", episodes},
           {"steps", steps},
           {"max_state_dev", max_state_dev},
           {"max_pred_dev", max_pred_dev},
           {"agree", agree},
           {"total", total},
           {"agreement", agreement()},
           {"nonupdated_changed", nonupdated_changed},
           {"tol_state", tol_state},
           {"tol_pred", tol_pred},
           {"pass", pass()},
           {"seeds", seeds},
           {"per_step_max", per_step_max}};
    if (first_divergence_episode)
        j["first_divergence"] = {{"episode", *first_divergence_episode}, {"step", *first_divergence_step}};
    else
        j["first_divergence"] = nullptr;
    return j;
}

namespace {
struct EpisodeDev {
    std::vector<double> dev;
    double max_state = 0.0, max_pred = 0.0;
    long agree = 0, total = 0, nonupdated = 0;
    std::optional<int> first;
};

void merge(EquivalenceReport& rep, std::vector<EpisodeDev>& eps) {
    for (size_t i = 0; i < eps.size(); ++i) {
        auto& e = eps[i];
        rep.steps += static_cast<long>(e.dev.size());
        rep.max_state_dev = std::max(rep.max_state_dev, e.max_state);
        rep.max_pred_dev = std::max(rep.max_pred_dev, e.max_pred);
        rep.agree += e.agree;
        rep.total += e.total;
        rep.nonupdated_changed += e.nonupdated;
        if (e.first && !rep.first_divergence_episode) {
            rep.first_divergence_episode = static_cast<int>(i);
            rep.first_divergence_step = *e.first;
        }
        rep.per_step_max.push_back(std::move(e.dev));
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MdpRanges ranges_of(const RunConfig& cfg) {
    MdpRanges r;
    r.S_min = cfg.q_S_min;
    r.S_max = cfg.q_S_max;
    r.A_min = cfg.q_A_min;
    r.A_max = cfg.q_A_max;
    r.T_max = std::min(cfg.q_T_max, cfg.horizon);
    r.T_min = std::min(cfg.q_T_min, r.T_max);
    return r;
}
}  // namespace

EquivalenceReport verify_wma(const RunConfig& cfg) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    EquivalenceReport rep;
    rep.kind = "wma";
    rep.episodes = cfg.instances;
    rep.seeds = cfg.seeds();
    rep.tol_state = cfg.tol_state;
    rep.tol_pred = cfg.tol_pred;

    std::vector<EpisodeDev> eps(cfg.instances);
    parallel_for(cfg.instances, cfg.threads, [&](int i) {
        std::uint64_t s = rep.seeds[i];
        Rng prng(mix_seed(s, "wma-params"));
        int n = std::uniform_int_distribution<int>(cfg.wma_n_min, cfg.wma_n_max)(prng);
        double gamma = std::uniform_real_distribution<double>(cfg.wma_gamma_min, cfg.wma_gamma_max)(prng);
        ExpertStream st = sample_expert_stream(Regime::Uniform, n, cfg.horizon, mix_seed(s, "stream"));

        WmaConfig wc;
        wc.n = n;
        wc.gamma = gamma * cfg.circuit_gamma_scale;
        wc.T = cfg.horizon;
        wc.decode = WmaDecode::Threshold;
        WmaCircuit c = build_wma_circuit(wc);

        EpisodeDev& e = eps[i];
        Vec lc = Vec::Zero(n), lr = Vec::Zero(n);
        for (int t = 0; t < cfg.horizon; ++t) {
            WmaRound round{st.advice[t], st.labels[t]};
            WmaStep cs = run_round(c, lc, round);
            MwuLogResult rs = mwu_step_log(lr, round.preds, round.y, gamma);
            double ds = (cs.lambda_next - rs.lambda).cwiseAbs().maxCoeff();
            double dp = std::abs(cs.p_hat - rs.p_hat);
            int dc = wma_decide(c, cs.prediction, nullptr);
            int dr = rs.p_hat >= 0.5 - kThresholdTieTol ? 1 : 0;
            e.dev.push_back(ds);
            e.max_state = std::max(e.max_state, ds);
            e.max_pred = std::max(e.max_pred, dp);
            e.total++;
            e.agree += dc == dr;
            if (!e.first && (ds > cfg.tol_state || dp > cfg.tol_pred || dc != dr)) e.first = t + 1;
            lc = cs.lambda_next;
            lr = rs.lambda;
        }
    });
    merge(rep, eps);
    rep.seconds = seconds_since(t0);
    return rep;
}

EquivalenceReport verify_qlearn(const RunConfig& cfg) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    EquivalenceReport rep;
    rep.kind = "qlearn";
    rep.episodes = cfg.instances;
    rep.seeds = cfg.seeds();
    rep.tol_state = cfg.tol_state;
    rep.tol_pred = cfg.tol_pred;

    const auto grid = mdp_grid();
    const MdpRanges ranges = ranges_of(cfg);
    std::vector<EpisodeDev> eps(cfg.instances);
    parallel_for(cfg.instances, cfg.threads, [&](int i) {
        std::uint64_t s = rep.seeds[i];
        MdpSpec m = sample_mdp(grid[i % grid.size()], mix_seed(s, "mdp"), ranges, cfg.bernoulli_per_visit);
        Trajectory tr = rollout_qlearning(m, mix_seed(s, "rollout"));

        QCircuitConfig qc;
        qc.S = m.S;
        qc.A = m.A;
        qc.alpha = m.alpha * cfg.circuit_alpha_scale;
        qc.gamma_disc = m.gamma_disc;
        qc.T = m.T;
        QCircuit c = build_q_circuit(qc);

        EpisodeDev& e = eps[i];
        QContext ctx = make_context(c, QTable::Zero(m.S, m.A));
        QTable ref_prev = QTable::Zero(m.S, m.A);
        for (size_t t = 0; t < tr.permuted_steps.size(); ++t) {
            const Step& st = tr.permuted_steps[t];
            QTable before = context_table(c, ctx);
            QStepResult res = run_step(c, ctx, {st.s, st.a, st.r, st.s_next});
            QTable after = context_table(c, res.new_context);
            const QTable& ref = tr.permuted_Q[t];

            double dq = (after - ref).cwiseAbs().maxCoeff();
            long changed = 0;
            for (int x = 0; x < m.S; ++x)
                for (int y = 0; y < m.A; ++y)
                    if (!(x == st.s && y == st.a) && after(x, y) != before(x, y)) ++changed;
            int greedy = argmax_lowest(ref_prev.row(st.s_next).transpose());

            e.dev.push_back(dq);
            e.max_state = std::max(e.max_state, dq);
            e.nonupdated += changed;
            e.total++;
            e.agree += res.a_star == greedy;
            if (!e.first && (dq > cfg.tol_state || changed || res.a_star != greedy)) e.first = static_cast<int>(t) + 1;
            ctx = res.new_context;
            ref_prev = ref;
        }
    });
    merge(rep, eps);
    rep.seconds = seconds_since(t0);
    return rep;
}

BenchOutputs write_equivalence(const RunConfig& cfg, const EquivalenceReport& rep) {
    BenchOutputs out;
    ojson j = artifact_meta(cfg);
    j["report"] = ojson::parse(rep.to_json().dump());
    std::filesystem::path p = std::filesystem::path(cfg.out) / ("verify_" + rep.kind + ".json");
    write_file(p, j.dump(2) + "\n");
    out.files.push_back(p.string());
    out.summary = rep.to_json();
    out.summary.erase("per_step_max");
    return out;
}

// ---------------------------------------------------------------- plots

static std::string xml_escape(const std::string& s) {
    std::string o;
    for (char ch : s) {
        switch (ch) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += ch;
        }
    }
    return o;
}

static std::string f2(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

std::string emit_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& ylabel,
                      const std::string& meta) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    const double W = 760, H = 460, left = 70, right = 180, top = 40, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;

    size_t T = 1;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& s : series) {
        T = std::max(T, s.mean.size());
        for (size_t t = 0; t < s.mean.size(); ++t) {
            double sd = t < s.std.size() ? s.std[t] : 0.0;
            double a = s.mean[t] - sd, b = s.mean[t] + sd;
            if (first) lo = a, hi = b, first = false;
            lo = std::min(lo, a);
            hi = std::max(hi, b);
        }
    }
    if (hi - lo < 1e-12) {
        lo -= 1.0;
        hi += 1.0;
    } else {
        double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
    auto X = [&](size_t t) { return left + (T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.5) * pw; };
    auto Y = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };

    std::string safe_meta = meta;
    for (size_t p; (p = safe_meta.find("--")) != std::string::npos;) safe_meta.replace(p, 2, "- -");

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\">\n";
    o << "<!-- " << safe_meta << " -->\n";
    o << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    o << "<text x=\"" << f2(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"15\">" << xml_escape(title) << "</text>\n";
    o << "<g stroke=\"black\" stroke-width=\"1\">\n";
    o << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(top + ph) << "\" x2=\"" << f2(left + pw) << "\" y2=\""
      << f2(top + ph) << "\"/>\n";
    o << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(top) << "\" x2=\"" << f2(left) << "\" y2=\"" << f2(top + ph)
      << "\"/>\n";
    o << "</g>\n";

    o << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int k = 0; k <= 4; ++k) {
        double v = lo + (hi - lo) * k / 4.0;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", v);
        o << "<line x1=\"" << f2(left - 4) << "\" y1=\"" << f2(Y(v)) << "\" x2=\"" << f2(left) << "\" y2=\""
          << f2(Y(v)) << "\" stroke=\"black\"/>";
        o << "<text x=\"" << f2(left - 6) << "\" y=\"" << f2(Y(v) + 4) << "\" text-anchor=\"end\">" << buf
          << "</text>\n";
    }
    std::set<size_t> xt = {0, T - 1};
    for (int k = 1; k < 4; ++k) xt.insert(static_cast<size_t>(std::llround((T - 1) * k / 4.0)));
    for (size_t t : xt) {
        o << "<line x1=\"" << f2(X(t)) << "\" y1=\"" << f2(top + ph) << "\" x2=\"" << f2(X(t)) << "\" y2=\""
          << f2(top + ph + 4) << "\" stroke=\"black\"/>";
        o << "<text x=\"" << f2(X(t)) << "\" y=\"" << f2(top + ph + 17) << "\" text-anchor=\"middle\">" << t + 1
          << "</text>\n";
    }
    o << "<text x=\"" << f2(left + pw / 2) << "\" y=\"" << f2(H - 10) << "\" text-anchor=\"middle\">round</text>\n";
    o << "<text transform=\"translate(16," << f2(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(ylabel) << "</text>\n";
    o << "</g>\n";

    for (size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* col = palette[k % 10];
        if (s.mean.empty()) continue;
        o << "<polygon fill=\"" << col << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
        for (size_t t = 0; t < s.mean.size(); ++t) {
            double sd = t < s.std.size() ? s.std[t] : 0.0;
            o << (t ? " " : "") << f2(X(t)) << "," << f2(Y(s.mean[t] + sd));
        }
        for (size_t t = s.mean.size(); t-- > 0;) {
            double sd = t < s.std.size() ? s.std[t] : 0.0;
            o << " " << f2(X(t)) << "," << f2(Y(s.mean[t] - sd));
        }
        o << "\"/>\n";
        o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.6\" points=\"";
        for (size_t t = 0; t < s.mean.size(); ++t) o << (t ? " " : "") << f2(X(t)) << "," << f2(Y(s.mean[t]));
        o << "\"/>\n";
    }

    o << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
    for (size_t k = 0; k < series.size(); ++k) {
        double y = top + 10 + 18.0 * static_cast<double>(k);
        double x = left + pw + 16;
        o << "<line x1=\"" << f2(x) << "\" y1=\"" << f2(y) << "\" x2=\"" << f2(x + 22) << "\" y2=\"" << f2(y)
          << "\" stroke=\"" << palette[k % 10] << "\" stroke-width=\"3\"/>";
        o << "<text x=\"" << f2(x + 28) << "\" y=\"" << f2(y + 4) << "\">" << xml_escape(series[k].name)
          << "</text>\n";
    }
    o << "</g>\n</svg>\n";
    return o.str();
}

// Mean and std per round over the traces long enough to have that round.
static PlotSeries curve(const std::string& name, const std::vector<std::vector<double>>& traces) {
    PlotSeries ps;
    ps.name = name;
    size_t T = 0;
    for (const auto& tr : traces) T = std::max(T, tr.size());
    for (size_t t = 0; t < T; ++t) {
        std::vector<double> xs;
        for (const auto& tr : traces)
            if (t < tr.size()) xs.push_back(tr[t]);
        auto [m, s] = mean_std(xs);
        ps.mean.push_back(m);
        ps.std.push_back(s);
    }
    return ps;
}

// ---------------------------------------------------------------- expert benchmark

namespace {
struct StrategyRun {
    std::vector<int> predictions;
    bool failed = false;
    std::string failure;
};

StrategyRun run_expert_strategy(const std::string& name, const ExpertStream& st, std::uint64_t inst,
                                const RunConfig& cfg) {
    StrategyRun out;
    if (name == "WMA-circuit") {
        // same eta draw as the MW baseline, gamma = e^eta
        Rng rng = strategy_rng(inst, "MW");
        BaselineLearner mw(Strategy::MW, st.n, rng);
        WmaConfig wc;
        wc.n = st.n;
        wc.gamma = std::exp(mw.eta());
        wc.T = st.T;
        wc.decode = WmaDecode::Threshold;
        WmaCircuit c = build_wma_circuit(wc);
        Vec lambda = Vec::Zero(st.n);
        for (int t = 0; t < st.T; ++t) {
            WmaStep s = run_round(c, lambda, {st.advice[t], st.labels[t]});
            out.predictions.push_back(wma_decide(c, s.prediction, nullptr));
            lambda = s.lambda_next;
        }
        return out;
    }
    if (name.rfind("protocol:", 0) == 0) {
        ProtocolSpec spec = protocol_from_names(cfg.framing, cfg.state, cfg.history);
        auto pred = make_predictor(name.substr(9), inst, cfg.remote);
        EpisodeResult res = run_protocol_episode(spec, *pred, st);
        out.predictions = res.predictions;
        out.failed = res.failed;
        out.failure = res.failure;
        return out;
    }
    Rng rng = strategy_rng(inst, name);
    BaselineLearner learner(strategy_from_name(name), st.n, rng);
    for (int t = 0; t < st.T; ++t) {
        out.predictions.push_back(learner.predict(st.advice[t], rng));
        learner.update(st.advice[t], st.labels[t]);
    }
    return out;
}

ExpertStream truncated(const ExpertStream& st, size_t T) {
    ExpertStream s = st;
    s.T = static_cast<int>(T);
    s.labels.resize(T);
    s.advice.resize(T);
    return s;
}

struct RegretTable {
    std::vector<std::string> strategies;
    // [instance][strategy]
    std::vector<std::vector<RegretTrace>> traces;
    std::vector<std::vector<std::string>> failures;
};

BenchOutputs write_regret_outputs(const RunConfig& cfg, const std::string& prefix, const RegretTable& tab,
                                  ojson extra) {
    BenchOutputs out;
    const int n = static_cast<int>(tab.traces.size());

    std::string csv = artifact_header(cfg) + "instance,round,strategy,loss,cum_loss,best_expert_cum_loss,regret\n";
    size_t T = 0;
    for (const auto& inst : tab.traces)
        for (const auto& tr : inst) T = std::max(T, tr.loss.size());
    for (int i = 0; i < n; ++i)
        for (size_t t = 0; t < T; ++t)
            for (size_t k = 0; k < tab.strategies.size(); ++k) {
                const RegretTrace& tr = tab.traces[i][k];
                if (t >= tr.loss.size()) continue;
                csv += std::to_string(i) + "," + std::to_string(t + 1) + "," + tab.strategies[k] + "," +
                       std::to_string(tr.loss[t]) + "," + std::to_string(tr.cum_loss[t]) + "," +
                       std::to_string(tr.best_expert_cum_loss[t]) + "," + std::to_string(tr.regret[t]) + "\n";
            }

    ojson summary = artifact_meta(cfg);
    ojson strat = ojson::object();
    std::vector<PlotSeries> series;
    for (size_t k = 0; k < tab.strategies.size(); ++k) {
        std::vector<double> fr, fl;
        std::vector<std::vector<double>> curves;
        std::vector<int> failed;
        for (int i = 0; i < n; ++i) {
            if (!tab.failures[i][k].empty()) {
                failed.push_back(i);
                continue;
            }
            const RegretTrace& tr = tab.traces[i][k];
            if (tr.regret.empty()) continue;
            fr.push_back(tr.regret.back());
            fl.push_back(tr.cum_loss.back());
            curves.emplace_back(tr.regret.begin(), tr.regret.end());
        }
        auto [rm, rs] = mean_std(fr);
        auto [lm, ls] = mean_std(fl);
        ojson e;
        e["instances"] = fr.size();
        e["final_regret_mean"] = rm;
        e["final_regret_std"] = rs;
        e["final_cum_loss_mean"] = lm;
        e["final_cum_loss_std"] = ls;
        e["failed_instances"] = failed;
        strat[tab.strategies[k]] = e;
        series.push_back(curve(tab.strategies[k], curves));
    }
    summary["strategies"] = strat;
    for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();

    namespace fs = std::filesystem;
    fs::path dir(cfg.out);
    fs::path pc = dir / (prefix + "_regret.csv"), pj = dir / (prefix + "_summary.json"), ps = dir / (prefix + "_regret.svg");
    write_file(pc, csv);
    summary["files"] = {pc.filename().string(), pj.filename().string(), ps.filename().string()};
    write_file(pj, summary.dump(2) + "\n");
    write_file(ps, emit_plot(series, "Cumulative regret (" + cfg.regime + ", " + std::to_string(n) + " instances)",
                             "regret", plot_meta(cfg)));
    out.files = {pc.string(), pj.string(), ps.string()};
    out.summary = json::parse(summary.dump());
    return out;
}
}  // namespace

BenchOutputs run_bench_experts(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.instances == 0) {
        BenchOutputs b;
        b.empty = true;
        return b;
    }
    RegretTable tab;
    tab.strategies = cfg.strategies.empty() ? default_config("bench-experts").strategies : cfg.strategies;
    const Regime regime = regime_from_name(cfg.regime);
    const auto seeds = cfg.seeds();
    tab.traces.assign(cfg.instances, std::vector<RegretTrace>(tab.strategies.size()));
    tab.failures.assign(cfg.instances, std::vector<std::string>(tab.strategies.size()));

    bool remote = false;
    for (const auto& s : tab.strategies) remote |= s == "protocol:remote";
    parallel_for(cfg.instances, remote ? 1 : cfg.threads, [&](int i) {
        ExpertStream st = sample_expert_stream(regime, 4, cfg.horizon, mix_seed(seeds[i], "stream"));
        for (size_t k = 0; k < tab.strategies.size(); ++k) {
            StrategyRun r = run_expert_strategy(tab.strategies[k], st, seeds[i], cfg);
            tab.traces[i][k] = regret(r.predictions, truncated(st, r.predictions.size()));
            if (r.failed) tab.failures[i][k] = r.failure.empty() ? "failed" : r.failure;
        }
    });
    return write_regret_outputs(cfg, "experts", tab, ojson::object());
}

// ---------------------------------------------------------------- Q-learning benchmark

BenchOutputs run_bench_qlearn(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.instances == 0) {
        BenchOutputs b;
        b.empty = true;
        return b;
    }
    const std::vector<std::string> strategies = cfg.strategies.empty() ? kQStrategies : cfg.strategies;
    const auto grid = mdp_grid();
    const auto seeds = cfg.seeds();
    const MdpRanges ranges = ranges_of(cfg);

    struct Inst {
        std::string cell;
        std::vector<Trajectory> runs;  // per strategy
    };
    std::vector<Inst> insts(cfg.instances);
    parallel_for(cfg.instances, cfg.threads, [&](int i) {
        const MdpCell& cell = grid[i % grid.size()];
        MdpSpec m = sample_mdp(cell, mix_seed(seeds[i], "mdp"), ranges, cfg.bernoulli_per_visit);
        Inst& in = insts[i];
        in.cell = std::string(family_name(cell.family)) + "/" + fmt_double(cell.kappa);
        const std::uint64_t rs = mix_seed(seeds[i], "rollout");
        for (const auto& s : strategies) {
            if (s == "q-learning") {
                in.runs.push_back(rollout_qlearning(m, rs));
            } else if (s == "q-circuit") {
                QCircuitConfig qc;
                qc.S = m.S;
                qc.A = m.A;
                qc.alpha = m.alpha * cfg.circuit_alpha_scale;
                qc.gamma_disc = m.gamma_disc;
                qc.T = m.T;
                QCircuit c = build_q_circuit(qc);
                in.runs.push_back(rollout_qlearning(m, rs, [&c](const QTable& Q, int s0, int a, double r, int s1) {
                    QStepResult res = run_step(c, make_context(c, Q), {s0, a, r, s1});
                    return context_table(c, res.new_context);
                }));
            } else {
                MdpSpec explore = m;
                explore.epsilon = 1.0;
                in.runs.push_back(rollout_qlearning(explore, rs));
            }
        }
    });

    std::string csv = artifact_header(cfg) + "instance,round,strategy,reward,cum_reward,cell\n";
    size_t T = 0;
    for (const auto& in : insts)
        for (const auto& r : in.runs) T = std::max(T, r.steps.size());
    for (int i = 0; i < cfg.instances; ++i) {
        std::vector<double> cum(strategies.size(), 0.0);
        for (size_t t = 0; t < T; ++t)
            for (size_t k = 0; k < strategies.size(); ++k) {
                const auto& steps = insts[i].runs[k].steps;
                if (t >= steps.size()) continue;
                cum[k] += steps[t].r;
                csv += std::to_string(i) + "," + std::to_string(t + 1) + "," + strategies[k] + "," +
                       fmt_double(steps[t].r) + "," + fmt_double(cum[k]) + "," + insts[i].cell + "\n";
            }
    }

    ojson summary = artifact_meta(cfg);
    ojson strat = ojson::object();
    std::vector<PlotSeries> series;
    for (size_t k = 0; k < strategies.size(); ++k) {
        std::vector<double> finals;
        std::vector<std::vector<double>> curves;
        for (const auto& in : insts) {
            std::vector<double> c;
            double acc = 0.0;
            for (const auto& st : in.runs[k].steps) c.push_back(acc += st.r);
            finals.push_back(acc);
            curves.push_back(std::move(c));
        }
        auto [m, s] = mean_std(finals);
        ojson e;
        e["instances"] = finals.size();
        e["final_cum_reward_mean"] = m;
        e["final_cum_reward_std"] = s;
        strat[strategies[k]] = e;
        series.push_back(curve(strategies[k], curves));
    }
    summary["strategies"] = strat;

    // circuit-driven rollouts should retrace the tabular ones action for action
    auto qi = std::find(strategies.begin(), strategies.end(), "q-learning");
    auto ci = std::find(strategies.begin(), strategies.end(), "q-circuit");
    if (qi != strategies.end() && ci != strategies.end()) {
        size_t a = qi - strategies.begin(), b = ci - strategies.begin();
        int same = 0;
        double maxdq = 0.0;
        for (const auto& in : insts) {
            bool eq = in.runs[a].steps.size() == in.runs[b].steps.size();
            for (size_t t = 0; eq && t < in.runs[a].steps.size(); ++t)
                eq = in.runs[a].steps[t].a == in.runs[b].steps[t].a && in.runs[a].steps[t].s == in.runs[b].steps[t].s;
            same += eq;
            if (eq)
                for (size_t t = 0; t < in.runs[a].Q.size(); ++t)
                    maxdq = std::max(maxdq, (in.runs[a].Q[t] - in.runs[b].Q[t]).cwiseAbs().maxCoeff());
        }
        summary["circuit_identical_trajectories"] = same;
        summary["circuit_max_q_dev"] = maxdq;
    }

    namespace fs = std::filesystem;
    fs::path dir(cfg.out);
    fs::path pc = dir / "qlearn_rewards.csv", pj = dir / "qlearn_summary.json", ps = dir / "qlearn_rewards.svg";
    summary["files"] = {pc.filename().string(), pj.filename().string(), ps.filename().string()};
    write_file(pc, csv);
    write_file(pj, summary.dump(2) + "\n");
    write_file(ps, emit_plot(series, "Cumulative reward (" + std::to_string(cfg.instances) + " instances)",
                             "cumulative reward", plot_meta(cfg)));
    BenchOutputs out;
    out.files = {pc.string(), pj.string(), ps.string()};
    out.summary = json::parse(summary.dump());
    return out;
}

// ---------------------------------------------------------------- protocol runs

BenchOutputs run_protocol_command(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.instances == 0) {
        BenchOutputs b;
        b.empty = true;
        return b;
    }
    const ProtocolSpec spec = protocol_from_names(cfg.framing, cfg.state, cfg.history);
    const Regime regime = regime_from_name(cfg.regime);
    const auto seeds = cfg.seeds();
    std::vector<EpisodeResult> eps(cfg.instances);
    parallel_for(cfg.instances, cfg.predictor == "remote" ? 1 : cfg.threads, [&](int i) {
        ExpertStream st = sample_expert_stream(regime, 4, cfg.horizon, mix_seed(seeds[i], "stream"));
        auto pred = make_predictor(cfg.predictor, seeds[i], cfg.remote);
        eps[i] = run_protocol_episode(spec, *pred, st);
    });

    std::string trace = artifact_meta(cfg).dump() + "\n";
    int parse_failures = 0, long_notes = 0;
    ojson failed = ojson::array();
    RegretTable tab;
    tab.strategies = {"protocol:" + cfg.predictor};
    for (int i = 0; i < cfg.instances; ++i) {
        for (const auto& t : eps[i].turns) {
            ojson line;
            line["instance"] = i;
            const ojson tj = turn_to_json(t);
            for (auto it = tj.begin(); it != tj.end(); ++it) line[it.key()] = it.value();
            trace += line.dump() + "\n";
            parse_failures += t.parse_failure;
            long_notes += t.note_too_long;
        }
        tab.traces.push_back({eps[i].regret});
        tab.failures.push_back({eps[i].failed ? eps[i].failure : std::string()});
        if (eps[i].failed) failed.push_back({{"instance", i}, {"failure", eps[i].failure}});
    }
    ojson extra;
    extra["parse_failures"] = parse_failures;
    extra["notes_over_limit"] = long_notes;
    extra["failed_episodes"] = failed;
    extra["trace_file"] = "protocol_trace.jsonl";
    BenchOutputs out = write_regret_outputs(cfg, "protocol", tab, extra);
    std::filesystem::path pt = std::filesystem::path(cfg.out) / "protocol_trace.jsonl";
    write_file(pt, trace);
    out.files.insert(out.files.begin(), pt.string());
    return out;
}

}  // namespace latentlab
