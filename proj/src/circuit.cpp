#include "latentlab/circuit.hpp"
#include "latentlab/reference.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

namespace latentlab {

using nlohmann::json;

void CircuitSpec::validate() const {
    const int d = layout.d();
    if (readout.W_out.size() && readout.W_out.cols() != d) throw ShapeError("readout width != d");
    for (size_t l = 0; l < layers.size(); ++l) {
        std::set<int> used;
        for (const auto& h : layers[l].heads) {
            h.validate(d);
            if (!h.write_block) continue;
            int b = *h.write_block;
            if (b < 0 || b >= layout.block_count())
                throw ConfigError("head '" + h.name + "' writes to a nonexistent block");
            if (!used.insert(b).second)
                throw ConfigError("layer " + std::to_string(l + 1) + ": two heads write block " +
                                  std::to_string(b));
            int off = layout.block_offset(b), w = layout.block_width(b);
            Mat outside = h.W_O;
            outside.middleRows(off, w).setZero();
            if (!outside.isZero(0.0))
                throw ConfigError("head '" + h.name + "' has output support outside its write block");
        }
        if (layers[l].post == PostKind::AffineNorm) {
            if (layers[l].affine.rows() != d || layers[l].affine.cols() != d || layers[l].bias.size() != d)
                throw ShapeError("layer post map has wrong shape");
        }
    }
}

ReadoutSpec make_readout(const EmbeddingTable& table, const BlockLayout& layout, int read_block,
                         ReadoutMode mode, double theta, int positive_token) {
    ReadoutSpec r;
    r.W_out = Mat::Zero(table.d_te(), layout.d());
    r.W_out.middleCols(layout.block_offset(read_block), layout.d_te) = table.U().transpose();
    r.mode = mode;
    r.theta = theta;
    r.positive_token = positive_token;
    return r;
}

Mat apply_layer(const LayerSpec& layer, const BlockLayout& layout, const Mat& H) {
    Mat out = H;
    for (const auto& h : layer.heads) {
        Mat o = head_forward(h, H);
        if (h.write_block) {
            int off = layout.block_offset(*h.write_block), w = layout.block_width(*h.write_block);
            out.middleRows(off, w) += o.middleRows(off, w);
        } else {
            out += o;
        }
    }
    if (layer.post == PostKind::AffineNorm) {
        out = (layer.affine * out).colwise() + layer.bias;
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            double mu = out.col(j).mean();
            double var = (out.col(j).array() - mu).square().mean();
            out.col(j) = (out.col(j).array() - mu) / std::sqrt(var + layer.ln_eps);
        }
    }
    return out;
}

Mat forward_all(const CircuitSpec& c, const Mat& H) {
    if (H.cols() == 0) throw std::invalid_argument("empty sequence");
    if (H.rows() != c.layout.d()) throw ShapeError("sequence width != circuit width");
    Mat cur = H;
    for (const auto& layer : c.layers) cur = apply_layer(layer, c.layout, cur);
    return cur;
}

Vec forward_pass(const CircuitSpec& c, const Mat& H) {
    Mat out = forward_all(c, H);
    return out.col(out.cols() - 1);
}

Vec forward_pass(const CircuitSpec& c, const std::vector<Vec>& seq) { return forward_pass(c, stack_columns(seq)); }

std::vector<Vec> autoregress_continuous(const CircuitSpec& c, const PositionalCodec& codec,
                                        const Mat& prompt, int steps) {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (prompt.cols() + steps > codec.t_max())
        throw RangeError("continuous autoregression would run past t_max");
    const int pb = c.layout.pos_block();
    Mat seq = prompt;
    std::vector<Vec> outs;
    for (int s = 0; s < steps; ++s) {
        Vec y = forward_pass(c, seq);
        outs.push_back(y);
        if (s + 1 == steps) break;
        Vec next = y;
        c.layout.write_block(next, pb, codec.pos(static_cast<int>(seq.cols()) + 1));
        seq.conservativeResize(Eigen::NoChange, seq.cols() + 1);
        seq.col(seq.cols() - 1) = next;
    }
    return outs;
}

Mat block_select(const BlockLayout& L, int b, const std::vector<int>& idx) {
    Mat P = Mat::Zero(L.d_te, L.d());
    for (int k : idx) P(k, L.block_offset(b) + k) = 1.0;
    return P;
}

Mat block_emit(const BlockLayout& L, int b, double sign) {
    Mat O = Mat::Zero(L.d(), L.d_te);
    O.middleRows(L.block_offset(b), L.d_te) = sign * Mat::Identity(L.d_te, L.d_te);
    return O;
}

Vec readout_scores(const ReadoutSpec& r, const Vec& v) { return r.W_out * v; }

Decoded decode(const ReadoutSpec& r, const Vec& v) {
    Decoded d;
    d.mode = r.mode;
    switch (r.mode) {
        case ReadoutMode::RawLatent:
            d.latent = v;
            break;
        case ReadoutMode::Argmax: {
            Vec s = readout_scores(r, v);
            d.token = argmax_lowest(s);
            d.score = s(d.token);
            break;
        }
        case ReadoutMode::Probabilities: {
            Vec s = readout_scores(r, v);
            Vec e = (s.array() - s.maxCoeff()).exp();
            d.probs = e / e.sum();
            break;
        }
        case ReadoutMode::Threshold: {
            if (r.positive_token < 0) throw ConfigError("threshold readout needs a positive token");
            Vec s = readout_scores(r, v);
            d.score = s(r.positive_token);
            d.token = d.score >= r.theta - kThresholdTieTol ? 1 : 0;  // ties go to 1
            break;
        }
    }
    return d;
}

// ---- JSON ----

static json mat_json(const Mat& m) {
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

static Mat json_mat(const json& j) {
    Eigen::Index r = j.at("rows"), c = j.at("cols");
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != r * c) throw ConfigError("matrix data length mismatch");
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[i * c + k].get<double>();
    return m;
}

static const char* mode_name(ReadoutMode m) {
    switch (m) {
        case ReadoutMode::Probabilities: return "probabilities";
        case ReadoutMode::Threshold: return "threshold";
        case ReadoutMode::Argmax: return "argmax";
        case ReadoutMode::RawLatent: return "raw-latent";
    }
    return "?";
}

static ReadoutMode mode_from(const std::string& s) {
    if (s == "probabilities") return ReadoutMode::Probabilities;
    if (s == "threshold") return ReadoutMode::Threshold;
    if (s == "argmax") return ReadoutMode::Argmax;
    if (s == "raw-latent") return ReadoutMode::RawLatent;
    throw ConfigError("unknown readout mode: " + s);
}

std::string circuit_to_json(const CircuitSpec& c) {
    json j;
    j["layout"] = {{"d_te", c.layout.d_te}, {"buffer_count", c.layout.buffer_count}, {"d_pe", c.layout.d_pe}};
    j["layers"] = json::array();
    for (const auto& L : c.layers) {
        json jl;
        jl["post"] = L.post == PostKind::Identity ? "identity" : "affine-norm";
        if (L.post == PostKind::AffineNorm) {
            jl["affine"] = mat_json(L.affine);
            jl["bias"] = mat_json(L.bias);
            jl["ln_eps"] = L.ln_eps;
        }
        jl["heads"] = json::array();
        for (const auto& h : L.heads) {
            json jh{{"name", h.name}, {"kind", kind_name(h.kind)}, {"beta", h.beta},
                    {"W_Q", mat_json(h.W_Q)}, {"W_K", mat_json(h.W_K)},
                    {"W_V", mat_json(h.W_V)}, {"W_O", mat_json(h.W_O)}};
            jh["write_block"] = h.write_block ? json(*h.write_block) : json("additive-whole");
            if (h.chooser)
                jh["chooser"] = {{"ubar", mat_json(h.chooser->ubar)}, {"offset", h.chooser->offset},
                                 {"epsilon", h.chooser->epsilon}};
            jl["heads"].push_back(jh);
        }
        j["layers"].push_back(jl);
    }
    j["readout"] = {{"mode", mode_name(c.readout.mode)}, {"theta", c.readout.theta},
                    {"positive_token", c.readout.positive_token}, {"W_out", mat_json(c.readout.W_out)}};
    return j.dump(1);
}

CircuitSpec circuit_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("circuit JSON: ") + e.what());
    }
    CircuitSpec c;
    c.layout = {j.at("layout").at("d_te"), j.at("layout").at("buffer_count"), j.at("layout").at("d_pe")};
    for (const auto& jl : j.at("layers")) {
        LayerSpec L;
        if (jl.at("post") == "affine-norm") {
            L.post = PostKind::AffineNorm;
            L.affine = json_mat(jl.at("affine"));
            L.bias = json_mat(jl.at("bias"));
            L.ln_eps = jl.at("ln_eps");
        }
        for (const auto& jh : jl.at("heads")) {
            HeadSpec h;
            h.name = jh.at("name");
            h.kind = kind_from_name(jh.at("kind"));
            h.beta = jh.at("beta");
            h.W_Q = json_mat(jh.at("W_Q"));
            h.W_K = json_mat(jh.at("W_K"));
            h.W_V = json_mat(jh.at("W_V"));
            h.W_O = json_mat(jh.at("W_O"));
            if (jh.at("write_block").is_number_integer()) h.write_block = jh.at("write_block").get<int>();
            if (jh.contains("chooser")) {
                ChooserTag t;
                t.ubar = json_mat(jh["chooser"].at("ubar"));
                t.offset = jh["chooser"].at("offset");
                t.epsilon = jh["chooser"].at("epsilon");
                h.chooser = t;
            }
            L.heads.push_back(std::move(h));
        }
        c.layers.push_back(std::move(L));
    }
    const auto& jr = j.at("readout");
    c.readout.mode = mode_from(jr.at("mode"));
    c.readout.theta = jr.at("theta");
    c.readout.positive_token = jr.at("positive_token");
    c.readout.W_out = json_mat(jr.at("W_out"));
    c.validate();
    return c;
}

}  // namespace latentlab
