#include "latentlab/attention.hpp"

#include <cmath>
#include <sstream>

namespace latentlab {

const char* kind_name(AttnKind k) {
    switch (k) {
        case AttnKind::Hard: return "hard";
        case AttnKind::Softmax: return "softmax";
        case AttnKind::Linear: return "linear";
    }
    return "?";
}

AttnKind kind_from_name(const std::string& s) {
    if (s == "hard") return AttnKind::Hard;
    if (s == "softmax") return AttnKind::Softmax;
    if (s == "linear") return AttnKind::Linear;
    throw ConfigError("unknown attention kind: " + s);
}

void HeadSpec::validate(int d) const {
    auto fail = [&](const std::string& what) { throw ShapeError("head '" + name + "': " + what); };
    if (W_Q.cols() != d || W_K.cols() != d || W_V.cols() != d) fail("projection width != d");
    if (W_Q.rows() != W_K.rows()) fail("query/key dims differ");
    if (W_O.rows() != d) fail("output rows != d");
    if (W_O.cols() != W_V.rows()) fail("output cols != value dim");
    if (kind == AttnKind::Softmax && !(beta > 0.0)) throw ConfigError("head '" + name + "': softmax beta must be > 0");
    if (chooser && chooser->ubar.size() != d) fail("chooser ubar width != d");
}

Mat stack_columns(const std::vector<Vec>& seq) {
    if (seq.empty()) throw std::invalid_argument("empty sequence");
    Mat H(seq[0].size(), static_cast<Eigen::Index>(seq.size()));
    for (size_t j = 0; j < seq.size(); ++j) {
        if (seq[j].size() != H.rows()) throw ShapeError("ragged sequence");
        H.col(j) = seq[j];
    }
    return H;
}

Mat attention_weights(const HeadSpec& head, const Mat& H) {
    if (H.cols() == 0) throw std::invalid_argument("empty sequence");
    head.validate(static_cast<int>(H.rows()));
    const Eigen::Index T = H.cols();
    Mat Qm = head.W_Q * H;
    Mat Km = head.W_K * H;
    Mat L = Qm.transpose() * Km;  // L(i, j) = <q_i, k_j>
    Mat W = Mat::Zero(T, T);
    for (Eigen::Index i = 0; i < T; ++i) {
        switch (head.kind) {
            case AttnKind::Hard: {
                Eigen::Index best = 0;
                for (Eigen::Index j = 1; j <= i; ++j)
                    if (L(i, j) > L(i, best)) best = j;
                W(i, best) = 1.0;
                break;
            }
            case AttnKind::Softmax: {
                double mx = L(i, 0);
                for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, L(i, j));
                double z = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    W(i, j) = std::exp(head.beta * (L(i, j) - mx));
                    z += W(i, j);
                }
                for (Eigen::Index j = 0; j <= i; ++j) W(i, j) /= z;
                break;
            }
            case AttnKind::Linear:
                for (Eigen::Index j = 0; j <= i; ++j) W(i, j) = L(i, j);
                break;
        }
    }
    return W;
}

Mat head_forward(const HeadSpec& head, const Mat& H) {
    Mat W = attention_weights(head, H);
    Mat Vm = head.W_V * H;
    Mat C = Vm * W.transpose();
    return head.W_O * C;
}

std::vector<Vec> head_forward(const HeadSpec& head, const std::vector<Vec>& seq) {
    Mat out = head_forward(head, stack_columns(seq));
    std::vector<Vec> r;
    for (Eigen::Index j = 0; j < out.cols(); ++j) r.push_back(out.col(j));
    return r;
}

ChooserBounds chooser_bounds(const PositionalCodec& codec, int offset, double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("chooser epsilon must lie in (0,1)");
    Margins m = margins(codec, offset);
    return {std::log(codec.t_max() / epsilon) / m.delta_pos, 3.0 * codec.d_pe() / m.delta_bos};
}

ChooserParams ChooserParams::at_bounds(std::vector<std::string> target_set, int offset, double epsilon,
                                       const PositionalCodec& codec) {
    ChooserBounds b = chooser_bounds(codec, offset, epsilon);
    return ChooserParams{std::move(target_set), offset, epsilon, b.eta_min, b.xi_min};
}

HeadSpec build_fixed_offset_head(const ChooserParams& params, const PositionalCodec& codec,
                                 const EmbeddingTable& table, const BlockLayout& layout,
                                 const FoOptions& opts) {
    if (layout.d_te != table.d_te() || layout.d_pe != codec.d_pe())
        throw ShapeError("layout does not match table/codec");
    if (params.offset < 0) throw ConfigError("chooser offset must be >= 0");
    ChooserBounds b = chooser_bounds(codec, params.offset, params.epsilon);
    if (params.eta_ch < b.eta_min) {
        std::ostringstream os;
        os << "eta_ch >= log(T_max/eps)/delta_pos violated: " << params.eta_ch << " < " << b.eta_min;
        throw ConfigError(os.str());
    }
    if (params.xi < b.xi_min) {
        std::ostringstream os;
        os << "xi >= 3*d_pe/delta_bos violated: " << params.xi << " < " << b.xi_min;
        throw ConfigError(os.str());
    }

    const int d = layout.d(), dpe = layout.d_pe;
    const int po = layout.block_offset(layout.pos_block());

    // complement of the target set in the identity block
    Vec ubar = Vec::Ones(table.d_te());
    for (const auto& t : params.target_set) ubar(table.vocab().index_of(t)) = 0.0;

    HeadSpec h;
    h.name = opts.name;
    h.kind = opts.hard ? AttnKind::Hard : AttnKind::Softmax;
    h.beta = 1.0;
    h.W_Q = Mat::Zero(2 * dpe, d);
    h.W_K = Mat::Zero(2 * dpe, d);
    h.W_Q.block(0, po, dpe, dpe).setIdentity();
    h.W_Q.block(dpe, 0, dpe, table.d_te()) = params.xi * codec.pos(1) * ubar.transpose();
    h.W_K.block(0, po, dpe, dpe) = params.eta_ch * codec.shift(params.offset);
    h.W_K.block(dpe, po, dpe, dpe) = params.eta_ch * Mat::Identity(dpe, dpe);
    h.W_V = opts.W_V ? *opts.W_V : Mat(Mat::Identity(d, d));
    h.W_O = opts.W_O ? *opts.W_O : Mat(Mat::Identity(d, h.W_V.rows()));
    h.write_block = opts.write_block;

    ChooserTag tag;
    tag.ubar = Vec::Zero(d);
    tag.ubar.head(table.d_te()) = ubar;
    tag.offset = params.offset;
    tag.epsilon = params.epsilon;
    h.chooser = tag;
    h.validate(d);
    return h;
}

int designated_target(const ChooserTag& tag, const Mat& H, int i) {
    double c = tag.ubar.dot(H.col(i - 1));
    if (c != 0.0) return 1;
    return i - tag.offset >= 1 ? i - tag.offset : 0;
}

ConcentrationReport chooser_concentration_report(const HeadSpec& head, const std::vector<Mat>& seqs) {
    if (!head.chooser) throw ConfigError("head '" + head.name + "' carries no chooser metadata");
    ConcentrationReport rep;
    for (size_t s = 0; s < seqs.size(); ++s) {
        Mat W = attention_weights(head, seqs[s]);
        for (int i = 1; i <= seqs[s].cols(); ++i) {
            int tgt = designated_target(*head.chooser, seqs[s], i);
            if (tgt == 0) {
                ++rep.skipped;
                continue;
            }
            ++rep.checked;
            double mass = W(i - 1, tgt - 1);
            if (mass < rep.min_mass || rep.seq_index < 0) {
                if (mass < rep.min_mass) rep.min_mass = mass;
                rep.seq_index = static_cast<int>(s);
                rep.position = i;
            }
        }
    }
    return rep;
}

}  // namespace latentlab
