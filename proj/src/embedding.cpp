#include "latentlab/embedding.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace latentlab {

VocabSpec::VocabSpec(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw VocabularyError("vocabulary must contain at least one token");
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
        if (!index_.emplace(tokens_[i], i).second)
            throw VocabularyError("duplicate token name: " + tokens_[i]);
    }
}

const std::string& VocabSpec::name(int idx) const {
    if (idx < 0 || idx >= size()) throw VocabularyError("token index out of range: " + std::to_string(idx));
    return tokens_[idx];
}

int VocabSpec::index_of(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw VocabularyError("unknown token: " + tok);
    return it->second;
}

VocabSpec VocabSpec::wma(int n) {
    if (n < 1) throw ConfigError("expert count must be >= 1");
    std::vector<std::string> t = {"<w>", "<p?>", "<w?>", "<q0>", "<q1>"};
    for (int i = 1; i <= n; ++i) t.push_back("e" + std::to_string(i));
    return VocabSpec(std::move(t));
}

VocabSpec VocabSpec::qlearn(int num_states, int num_actions) {
    if (num_states < 1 || num_actions < 1) throw ConfigError("state and action counts must be >= 1");
    std::vector<std::string> t = {"<BOS>"};
    for (int s = 1; s <= num_states; ++s) t.push_back("s" + std::to_string(s));
    for (int a = 1; a <= num_actions; ++a) t.push_back("a" + std::to_string(a));
    for (const char* m : {"<r>", "<Select>", "<Q_curr>", "<Q_next>", "<Update>"}) t.emplace_back(m);
    return VocabSpec(std::move(t));
}

int BlockLayout::block_offset(int b) const {
    if (b < 0 || b >= block_count()) throw RangeError("block index out of range");
    return b * d_te;
}

int BlockLayout::block_width(int b) const {
    if (b < 0 || b >= block_count()) throw RangeError("block index out of range");
    return b == pos_block() ? d_pe : d_te;
}

Vec BlockLayout::read_block(const Vec& h, int b) const {
    if (h.size() != d()) throw ShapeError("vector width does not match layout");
    return h.segment(block_offset(b), block_width(b));
}

void BlockLayout::write_block(Vec& h, int b, const Vec& x) const {
    if (h.size() != d()) throw ShapeError("vector width does not match layout");
    if (x.size() != block_width(b)) throw ShapeError("block payload width mismatch");
    h.segment(block_offset(b), block_width(b)) = x;
}

EmbeddingTable::EmbeddingTable(VocabSpec vocab) : vocab_(std::move(vocab)) {
    U_ = Mat::Identity(vocab_.size(), vocab_.size());
}

Vec EmbeddingTable::u(const std::string& tok) const { return U_.col(vocab_.index_of(tok)); }

Vec EmbeddingTable::u(int idx) const {
    vocab_.name(idx);  // range check
    return U_.col(idx);
}

PositionalCodec::PositionalCodec(std::vector<double> omega, int t_max)
    : omega_(std::move(omega)), t_max_(t_max) {
    if (omega_.empty()) throw ConfigError("positional codec needs at least one angle");
    if (t_max_ < 1) throw ConfigError("positional horizon must be >= 1");
}

PositionalCodec PositionalCodec::standard(int d_pe, int t_max) {
    if (d_pe < 2 || d_pe % 2 != 0) throw ConfigError("d_pe must be a positive even number");
    std::vector<double> w;
    for (int m = 1; m <= d_pe / 2; ++m) w.push_back(std::numbers::pi * std::pow(3.0, -m));
    return PositionalCodec(std::move(w), t_max);
}

Vec PositionalCodec::pos(int i) const {
    if (i < 1 || i > t_max_)
        throw RangeError("position " + std::to_string(i) + " outside [1, " + std::to_string(t_max_) + "]");
    Vec p(d_pe());
    for (size_t m = 0; m < omega_.size(); ++m) {
        p(2 * m) = std::cos(i * omega_[m]);
        p(2 * m + 1) = std::sin(i * omega_[m]);
    }
    return p;
}

Mat PositionalCodec::shift(int ell) const {
    if (ell < 0 || ell > t_max_) throw RangeError("shift offset out of range");
    Mat R = Mat::Zero(d_pe(), d_pe());
    for (size_t m = 0; m < omega_.size(); ++m) {
        double c = std::cos(ell * omega_[m]), s = std::sin(ell * omega_[m]);
        R(2 * m, 2 * m) = c;
        R(2 * m, 2 * m + 1) = -s;
        R(2 * m + 1, 2 * m) = s;
        R(2 * m + 1, 2 * m + 1) = c;
    }
    return R;
}

Margins margins(const PositionalCodec& codec, int ell) {
    const int T = codec.t_max();
    if (T < 2) throw RangeError("margins need t_max >= 2");
    Mat P(codec.d_pe(), T);
    for (int i = 1; i <= T; ++i) P.col(i - 1) = codec.pos(i);
    Mat RP = codec.shift(ell) * P;

    Margins m;
    m.delta_pos = std::numeric_limits<double>::infinity();
    for (int i = 1; i <= T; ++i) {
        double self = P.col(i - 1).squaredNorm();
        for (int j = 1; j <= T; ++j) {
            if (j == i - ell) continue;
            m.delta_pos = std::min(m.delta_pos, self - P.col(i - 1).dot(RP.col(j - 1)));
        }
    }
    m.delta_bos = std::numeric_limits<double>::infinity();
    double self1 = P.col(0).squaredNorm();
    for (int j = 2; j <= T; ++j) m.delta_bos = std::min(m.delta_bos, self1 - P.col(0).dot(P.col(j - 1)));

    if (!(m.delta_pos > 0.0)) throw CodecUnsoundError("positional margin is not positive: " + std::to_string(m.delta_pos));
    if (!(m.delta_bos > 0.0)) throw CodecUnsoundError("sink margin is not positive: " + std::to_string(m.delta_bos));
    return m;
}

BlockLayout make_layout(const EmbeddingTable& table, int buffer_count, const PositionalCodec& codec) {
    if (buffer_count < 0) throw ConfigError("buffer count must be >= 0");
    return BlockLayout{table.d_te(), buffer_count, codec.d_pe()};
}

Vec embed_token(const EmbeddingTable& table, const std::string& tok, int i,
                const BlockLayout& layout, const PositionalCodec& codec) {
    if (layout.d_te != table.d_te() || layout.d_pe != codec.d_pe())
        throw ShapeError("layout does not match table/codec widths");
    Vec u = table.u(tok);
    Vec p = codec.pos(i);
    Vec h = Vec::Zero(layout.d());
    layout.write_block(h, 0, u);
    layout.write_block(h, layout.pos_block(), p);
    return h;
}

}  // namespace latentlab
