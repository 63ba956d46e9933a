#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latentlab/embedding.hpp"

namespace latentlab {

enum class AttnKind { Hard, Softmax, Linear };

const char* kind_name(AttnKind k);
AttnKind kind_from_name(const std::string& s);

// Routing metadata carried by fixed-offset chooser heads so their designated
// targets can be checked after the fact.
struct ChooserTag {
    Vec ubar;        // width d; <ubar, h_i> = <u_notT, id_i>
    int offset = 0;
    double epsilon = 0.01;
};

struct HeadSpec {
    std::string name;
    Mat W_Q, W_K;  // key_dim x d
    Mat W_V;       // val_dim x d
    Mat W_O;       // d x val_dim
    AttnKind kind = AttnKind::Softmax;
    double beta = 1.0;
    std::optional<int> write_block;  // nullopt = additive over the whole vector
    std::optional<ChooserTag> chooser;

    void validate(int d) const;
};

// Row i holds the causal weights of query i (zero above the diagonal).
// For linear heads this is the raw logit matrix, masked.
Mat attention_weights(const HeadSpec& head, const Mat& H);

// H is d x T, one column per position. Returns W_O * combine(...), d x T.
Mat head_forward(const HeadSpec& head, const Mat& H);
std::vector<Vec> head_forward(const HeadSpec& head, const std::vector<Vec>& seq);

Mat stack_columns(const std::vector<Vec>& seq);

struct ChooserParams {
    std::vector<std::string> target_set;
    int offset = 0;
    double epsilon = 0.01;
    double eta_ch = 0.0;
    double xi = 0.0;

    // Smallest eta_ch and xi allowed for this codec.
    static ChooserParams at_bounds(std::vector<std::string> target_set, int offset, double epsilon,
                                   const PositionalCodec& codec);
};

struct ChooserBounds {
    double eta_min;
    double xi_min;
};
ChooserBounds chooser_bounds(const PositionalCodec& codec, int offset, double epsilon);

struct FoOptions {
    std::string name = "fo";
    bool hard = false;
    std::optional<Mat> W_V;  // default identity (d x d)
    std::optional<Mat> W_O;  // default identity
    std::optional<int> write_block;
};

HeadSpec build_fixed_offset_head(const ChooserParams& params, const PositionalCodec& codec,
                                 const EmbeddingTable& table, const BlockLayout& layout,
                                 const FoOptions& opts = {});

// Position the chooser should route query i (1-based) to, or 0 when i is in the
// target set but has no position i - offset to go to.
int designated_target(const ChooserTag& tag, const Mat& H, int i);

struct ConcentrationReport {
    double min_mass = 1.0;
    int seq_index = -1;
    int position = -1;  // 1-based
    long checked = 0;
    long skipped = 0;
};

ConcentrationReport chooser_concentration_report(const HeadSpec& head, const std::vector<Mat>& seqs);

}  // namespace latentlab
