#pragma once

#include <string>
#include <vector>

#include "latentlab/attention.hpp"

namespace latentlab {

enum class PostKind { Identity, AffineNorm };

struct LayerSpec {
    std::vector<HeadSpec> heads;
    PostKind post = PostKind::Identity;
    Mat affine;     // d x d, used when post == AffineNorm
    Vec bias;       // d
    double ln_eps = 1e-5;
};

enum class ReadoutMode { Probabilities, Threshold, Argmax, RawLatent };

struct ReadoutSpec {
    Mat W_out;  // V x d
    ReadoutMode mode = ReadoutMode::RawLatent;
    double theta = 0.5;
    int positive_token = -1;  // token whose score is thresholded
};

struct CircuitSpec {
    BlockLayout layout;
    std::vector<LayerSpec> layers;
    ReadoutSpec readout;

    // Shape checks plus block-write discipline; throws ConfigError / ShapeError.
    void validate() const;
};

// W_out rows are the identity embeddings placed on the given block.
ReadoutSpec make_readout(const EmbeddingTable& table, const BlockLayout& layout, int read_block,
                         ReadoutMode mode, double theta = 0.5, int positive_token = -1);

Mat apply_layer(const LayerSpec& layer, const BlockLayout& layout, const Mat& H);
Mat forward_all(const CircuitSpec& c, const Mat& H);
Vec forward_pass(const CircuitSpec& c, const Mat& H);
Vec forward_pass(const CircuitSpec& c, const std::vector<Vec>& seq);

// Appends each raw output as the next input, with the appended slot's pos block
// replaced by that slot's positional code. Returns the raw outputs in order.
std::vector<Vec> autoregress_continuous(const CircuitSpec& c, const PositionalCodec& codec,
                                        const Mat& prompt, int steps);

struct Decoded {
    ReadoutMode mode;
    Vec probs;      // Probabilities
    int token = -1; // Threshold / Argmax
    double score = 0.0;
    Vec latent;     // RawLatent
};

// Threshold readouts treat scores within this distance of theta as ties (decided as 1).
inline constexpr double kThresholdTieTol = 1e-12;

Vec readout_scores(const ReadoutSpec& r, const Vec& v);
Decoded decode(const ReadoutSpec& r, const Vec& v);

// d_te x d selector reading coordinates `idx` of block b.
Mat block_select(const BlockLayout& L, int b, const std::vector<int>& idx);
// d x d_te map writing a d_te vector into block b, scaled by sign.
Mat block_emit(const BlockLayout& L, int b, double sign = 1.0);

std::string circuit_to_json(const CircuitSpec& c);
CircuitSpec circuit_from_json(const std::string& text);

}  // namespace latentlab
