#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/envs.hpp"

namespace latentlab {

// ---- regret ----

struct RegretTrace {
    std::vector<int> loss;                  // per round
    std::vector<int> cum_loss;
    std::vector<int> best_expert_cum_loss;  // min over experts of the prefix loss
    std::vector<int> regret;
    std::vector<std::vector<int>> expert_cum_loss;  // [t][i]
};

RegretTrace regret(const std::vector<int>& predictions, const ExpertStream& stream);

// ---- seeding ----

std::uint64_t instance_seed(std::uint64_t base, int index);  // base xor index
std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag);
Rng strategy_rng(std::uint64_t inst_seed, const std::string& strategy);

// ---- configuration ----

struct RunConfig {
    std::string mode = "bench-experts";  // verify-wma | verify-qlearn | bench-experts | bench-qlearn | protocol
    std::uint64_t seed = 20240601;
    int instances = 30;
    int horizon = 100;
    std::string regime = "stratified";
    std::string out = "out";
    std::vector<std::string> strategies;  // empty = mode default

    // verify wma
    int wma_n_min = 1, wma_n_max = 8;
    double wma_gamma_min = 1.1, wma_gamma_max = 3.0;
    double circuit_gamma_scale = 1.0;  // fault injection: circuit gamma = gamma * scale

    // verify / bench qlearn
    int q_S_min = 2, q_S_max = 8;
    int q_A_min = 2, q_A_max = 4;
    int q_T_min = 10, q_T_max = 50;
    bool bernoulli_per_visit = true;
    double circuit_alpha_scale = 1.0;  // fault injection

    // protocol
    std::string framing = "online";
    std::string state = "note";
    std::string history = "retained";
    std::string predictor = "mw-wrapper";
    nlohmann::json remote;  // RemoteEndpointConfig fields; null when unused

    double tol_state = 0.0;  // 0 = mode default
    double tol_pred = 0.0;
    int threads = 0;         // 0 = hardware concurrency

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);  // unknown keys and bad types -> ConfigError
    void validate() const;
    // SHA-256 of the canonical config (output directory and thread count excluded).
    std::string hash() const;
    std::vector<std::uint64_t> seeds() const;
};

RunConfig default_config(const std::string& mode);

// ---- equivalence ----

struct EquivalenceReport {
    std::string kind;  // "wma" or "qlearn"
    int episodes = 0;
    long steps = 0;
    double max_state_dev = 0.0;  // |lambda| or |Q|
    double max_pred_dev = 0.0;   // |p_hat| (wma only)
    long agree = 0, total = 0;
    long nonupdated_changed = 0;  // qlearn: entries off (s_t,a_t) not bitwise equal
    std::optional<int> first_divergence_episode;
    std::optional<int> first_divergence_step;  // 1-based
    std::vector<std::vector<double>> per_step_max;  // [episode][step]
    std::vector<std::uint64_t> seeds;
    double tol_state = 0.0, tol_pred = 0.0;
    double seconds = 0.0;  // wall time; kept out of the written artifact

    double agreement() const { return total ? static_cast<double>(agree) / total : 1.0; }
    bool pass() const;
    nlohmann::json to_json() const;
};

EquivalenceReport verify_wma(const RunConfig& cfg);
EquivalenceReport verify_qlearn(const RunConfig& cfg);

// ---- benchmarks and artifacts ----

struct PlotSeries {
    std::string name;
    std::vector<double> mean;
    std::vector<double> std;
};

// Line chart with a +-1 std band per series; pure function of its inputs.
std::string emit_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& ylabel,
                      const std::string& meta);

struct BenchOutputs {
    std::vector<std::string> files;
    nlohmann::json summary;
    bool empty = false;
};

BenchOutputs run_bench_experts(const RunConfig& cfg);
BenchOutputs run_bench_qlearn(const RunConfig& cfg);
BenchOutputs write_equivalence(const RunConfig& cfg, const EquivalenceReport& rep);
BenchOutputs run_protocol_command(const RunConfig& cfg);

// mean and sample standard deviation (0 for fewer than two values)
std::pair<double, double> mean_std(const std::vector<double>& xs);

void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace latentlab
