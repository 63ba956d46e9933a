#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latentlab/reference.hpp"

namespace latentlab {

enum class Regime { Uniform, Stratified, Flat, AntiSignal };
const char* regime_name(Regime r);
Regime regime_from_name(const std::string& s);

struct ExpertStream {
    Regime regime = Regime::Stratified;
    std::uint64_t seed = 0;
    int n = 4;
    int T = 100;
    std::vector<double> quality;           // after permutation
    std::vector<int> permutation;          // permutation[i] = pre-permutation slot of expert i
    std::vector<int> labels;               // y_t
    std::vector<std::vector<int>> advice;  // advice[t][i]
};

// Regimes other than Uniform are defined for n = 4 only.
ExpertStream sample_expert_stream(Regime regime, int n, int T, std::uint64_t seed);
// Fixed accuracies, no permutation.
ExpertStream expert_stream_with_quality(const std::vector<double>& quality, int T, std::uint64_t seed);

enum class RewardFamily { Peaked, Bimodal, Uniform, Sparse, Dense, Bernoulli };
const char* family_name(RewardFamily f);
RewardFamily family_from_name(const std::string& s);

struct MdpCell {
    RewardFamily family = RewardFamily::Peaked;
    double kappa = 1.0;
};
// The 6 x 3 grid, family-major.
std::vector<MdpCell> mdp_grid();

struct MdpSpec {
    MdpCell cell;
    std::uint64_t seed = 0;
    int S = 2, A = 2, T = 10;
    double epsilon = 0.0;
    double alpha = 0.1;
    double gamma_disc = 0.9;
    bool bernoulli_per_visit = true;
    std::vector<std::vector<std::vector<double>>> P;  // P[s][a][s']
    Mat R;  // mean reward, or success probability for Bernoulli
    std::vector<int> state_perm, action_perm;
};

struct MdpRanges {
    int S_min = 2, S_max = 8;
    int A_min = 2, A_max = 4;
    int T_min = 10, T_max = 50;
};

MdpSpec sample_mdp(const MdpCell& cell, std::uint64_t seed, const MdpRanges& ranges = {},
                   bool bernoulli_per_visit = true);

struct Step {
    int s, a;
    double r;
    int s_next;
    int a_star;  // argmax_a Q_{t+1}(s_next, a)
};

struct Trajectory {
    std::uint64_t seed = 0;
    std::vector<Step> steps;    // canonical labels
    std::vector<QTable> Q;      // Q[t] = Q_{t+1}, canonical labels
    // Relabelled copy with the MdpSpec state and action permutations applied.
    std::vector<Step> permuted_steps;
    std::vector<QTable> permuted_Q;
};

// Replaces the tabular update inside the rollout (e.g. with a circuit); the
// exploration and environment randomness are unchanged.
using QUpdateFn = std::function<QTable(const QTable& Q, int s, int a, double r, int s_next)>;

Trajectory rollout_qlearning(const MdpSpec& mdp, std::uint64_t seed, const QUpdateFn& update = {});

double sample_beta(double a, double b, Rng& rng);
std::vector<double> sample_dirichlet(double kappa, int k, Rng& rng);

std::string stream_to_json(const ExpertStream& s);
std::string mdp_to_json(const MdpSpec& m);

}  // namespace latentlab
