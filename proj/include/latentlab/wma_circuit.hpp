#pragma once

#include <vector>

#include "latentlab/circuit.hpp"
#include "latentlab/reference.hpp"

namespace latentlab {

enum class WmaDecode { Randomized, Threshold };

struct WmaConfig {
    int n = 2;
    double gamma = 2.0;
    int T = 100;
    WmaDecode decode = WmaDecode::Threshold;
    double epsilon = 0.01;   // chooser tolerance for the routing heads
    double mask_bias = 2048; // additive score that isolates expert slots in the vote head
};

struct WmaRound {
    std::vector<int> preds;
    int y = 0;
};

struct WmaCircuit {
    WmaConfig cfg;
    EmbeddingTable table;
    PositionalCodec codec;
    CircuitSpec spec;

    int round_length() const { return 2 * cfg.n + 5; }
    int query_pos() const { return 2 * cfg.n + 3; }   // <p?>
    int update_pos() const { return 2 * cfg.n + 5; }  // <w?>
};

WmaCircuit build_wma_circuit(const WmaConfig& cfg, const EmbeddingTable& table, const PositionalCodec& codec);
WmaCircuit build_wma_circuit(const WmaConfig& cfg);  // default vocabulary and codec

// <w> <z_t> e_1 p_1 ... e_n p_n <p?> y <w?>  (d x (2n+5))
Mat encode_round(const WmaCircuit& c, const Vec& lambda, const WmaRound& round);

Vec superpose(const WmaCircuit& c, const Vec& lambda);      // sum lambda_i u_{e_i}
Vec decode_lambda(const WmaCircuit& c, const Vec& id_like);  // inverse of superpose

struct WmaStep {
    double p_hat;
    Vec lambda_next;
    Vec prediction;  // raw output at <p?>
    Vec state;       // raw output at <w?>
};

WmaStep run_round(const WmaCircuit& c, const Vec& lambda, const WmaRound& round);

// Threshold: 1 iff p_hat >= 0.5 (ties to 1). Randomized: Bernoulli(p_hat) from rng.
int wma_decide(const WmaCircuit& c, const Vec& prediction, Rng* rng);

}  // namespace latentlab
