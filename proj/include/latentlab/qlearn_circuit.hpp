#pragma once

#include <optional>
#include <vector>

#include "latentlab/circuit.hpp"
#include "latentlab/reference.hpp"

namespace latentlab {

struct QCircuitConfig {
    int S = 2;
    int A = 2;
    double alpha = 0.1;
    double gamma_disc = 0.9;
    std::optional<double> beta;  // nullopt = hard selection
    int T = 50;
    bool fo_softmax = false;     // route with softmax choosers instead of hard ones
    double fo_epsilon = 0.01;
    double mask_bias = 1024;     // separates candidate slots from everything else
};

// Transition with 0-based indices.
struct Transition {
    int s = 0;
    int a = 0;
    double r = 0.0;
    int s_next = 0;
};

// buf1 superposition per action: sum_s Q(s,a) u_s (width d_te).
struct QContext {
    std::vector<Vec> cols;
};

struct QCircuit {
    QCircuitConfig cfg;
    EmbeddingTable table;
    PositionalCodec codec;
    CircuitSpec spec;

    int offset() const { return cfg.A + 1; }
    int select_pos() const { return offset() + 6 + 2 * cfg.A; }
    int astar_pos() const { return offset() + 7 + 2 * cfg.A; }
    int update_pos() const { return offset() + 8 + 2 * cfg.A; }
    int discrete_length() const { return 2 * cfg.A + 9; }
    int total_length() const { return 3 * cfg.A + 9; }

    int state_token(int s) const;
    int action_token(int a) const;
};

QCircuit build_q_circuit(const QCircuitConfig& cfg, const EmbeddingTable& table, const PositionalCodec& codec);
QCircuit build_q_circuit(const QCircuitConfig& cfg);

QContext make_context(const QCircuit& c, const QTable& Q);
QTable context_table(const QCircuit& c, const QContext& ctx);

// Phase 1: <BOS> c_1..c_A <Q_curr> s_t a_t <r> <Q_next> (s' a_i)x A <Select>
Mat encode_step(const QCircuit& c, const QContext& ctx, const Transition& tr);
// Phase 2 appends the a* slot and <Update>.
Mat append_phase2(const QCircuit& c, const Mat& phase1, int a_star);

// Fixed-offset heads of layer 1 (for routing checks).
std::vector<const HeadSpec*> fo_heads(const QCircuit& c);

struct QStepResult {
    int a_star = 0;
    QContext new_context;
    Vec select_out;
    Vec update_out;
};

QStepResult run_step(const QCircuit& c, const QContext& ctx, const Transition& tr);

}  // namespace latentlab
