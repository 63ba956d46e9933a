#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <vector>

#include "latentlab/errors.hpp"

namespace latentlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Ordered token list. Index order is the one-hot order in the identity block.
class VocabSpec {
public:
    VocabSpec() = default;
    explicit VocabSpec(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& name(int idx) const;
    int index_of(const std::string& tok) const;
    bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

    // <w> <p?> <w?> <q0> <q1> e1..en
    static VocabSpec wma(int n);
    // <BOS> s1..sS a1..aA <r> <Select> <Q_curr> <Q_next> <Update>
    static VocabSpec qlearn(int num_states, int num_actions);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Residual stream layout: [ id | buf_1 .. buf_k | pos ].
// Block 0 is id, blocks 1..buffer_count are buffers, block buffer_count+1 is pos.
struct BlockLayout {
    int d_te = 0;
    int buffer_count = 0;
    int d_pe = 0;

    int d() const { return (1 + buffer_count) * d_te + d_pe; }
    int block_count() const { return buffer_count + 2; }
    int pos_block() const { return buffer_count + 1; }
    int block_offset(int b) const;
    int block_width(int b) const;

    Vec read_block(const Vec& h, int b) const;
    void write_block(Vec& h, int b, const Vec& x) const;
};

// One-hot identity embeddings, so U^T U = I holds bitwise.
class EmbeddingTable {
public:
    explicit EmbeddingTable(VocabSpec vocab);

    const VocabSpec& vocab() const { return vocab_; }
    int d_te() const { return vocab_.size(); }
    const Mat& U() const { return U_; }
    Vec u(const std::string& tok) const;
    Vec u(int idx) const;

private:
    VocabSpec vocab_;
    Mat U_;
};

// Rotation-pair positional code: block m of pos(i) is (cos i*w_m, sin i*w_m).
class PositionalCodec {
public:
    PositionalCodec(std::vector<double> omega, int t_max);

    // w_m = pi * 3^-m for m = 1..d_pe/2
    static PositionalCodec standard(int d_pe = 16, int t_max = 64);

    int d_pe() const { return static_cast<int>(omega_.size()) * 2; }
    int t_max() const { return t_max_; }
    const std::vector<double>& omega() const { return omega_; }

    Vec pos(int i) const;      // 1-based, 1 <= i <= t_max
    Mat shift(int ell) const;  // R^(ell); shift(1) is the successor matrix P
    Mat successor() const { return shift(1); }

private:
    std::vector<double> omega_;
    int t_max_;
};

struct Margins {
    double delta_pos = 0.0;
    double delta_bos = 0.0;
};

// Exhaustive scan over i, j in [1, t_max]. Throws CodecUnsoundError if either
// margin is not strictly positive.
Margins margins(const PositionalCodec& codec, int ell = 0);

Vec embed_token(const EmbeddingTable& table, const std::string& tok, int i,
                const BlockLayout& layout, const PositionalCodec& codec);

// Builds a layout whose id/buffer width matches the table and pos width the codec.
BlockLayout make_layout(const EmbeddingTable& table, int buffer_count,
                        const PositionalCodec& codec);

}  // namespace latentlab
