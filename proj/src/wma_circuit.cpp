#include "latentlab/wma_circuit.hpp"

#include <cmath>

namespace latentlab {

namespace {

std::vector<int> all_idx(int n) {
    std::vector<int> v(n);
    for (int i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

WmaCircuit build_wma_circuit(const WmaConfig& cfg, const EmbeddingTable& table, const PositionalCodec& codec) {
    if (cfg.n < 1) throw ConfigError("wma: n must be >= 1");
    if (!(cfg.gamma > 1.0)) throw ConfigError("wma: gamma must be > 1");
    const VocabSpec& V = table.vocab();
    for (const char* t : {"<w>", "<p?>", "<w?>", "<q0>", "<q1>"})
        if (!V.contains(t)) throw VocabularyError(std::string("wma vocabulary lacks ") + t);
    std::vector<int> experts, qs = {V.index_of("<q0>"), V.index_of("<q1>")};
    for (int i = 1; i <= cfg.n; ++i) experts.push_back(V.index_of("e" + std::to_string(i)));
    if (codec.t_max() < 2 * cfg.n + 5) throw ConfigError("wma: codec horizon shorter than one round");
    margins(codec, 1);  // throws if unsound

    WmaCircuit c{cfg, table, codec, {}};
    BlockLayout L = make_layout(table, 3, codec);
    c.spec.layout = L;
    const int d = L.d(), dte = L.d_te, dpe = L.d_pe;
    const int po = L.block_offset(L.pos_block());
    Mat id_all = block_select(L, 0, all_idx(dte));

    // Layer 1: buf1 gets id(prev) - id(<w>) on outcome tokens, zero elsewhere.
    std::vector<std::string> everything = V.tokens(), non_q;
    for (const auto& t : everything)
        if (t != "<q0>" && t != "<q1>") non_q.push_back(t);
    LayerSpec l1;
    {
        FoOptions o;
        o.name = "L1H1a prev-id";
        o.hard = true;
        o.W_V = id_all;
        o.W_O = block_emit(L, 1, +1.0);
        l1.heads.push_back(build_fixed_offset_head(ChooserParams::at_bounds(everything, 1, cfg.epsilon, codec),
                                                   codec, table, L, o));
        o.name = "L1H1b prev-id-or-sink";
        o.W_O = block_emit(L, 1, -1.0);
        l1.heads.push_back(build_fixed_offset_head(ChooserParams::at_bounds(non_q, 1, cfg.epsilon, codec),
                                                   codec, table, L, o));
    }

    // Layer 2: <p?>, <w?> fetch the superposition at position 2; <w?> fetches y.
    LayerSpec l2;
    {
        HeadSpec h;
        h.name = "L2H1 superposition";
        h.kind = AttnKind::Hard;
        h.W_Q = Mat::Zero(dpe, d);
        Vec p2 = codec.pos(2);
        h.W_Q.col(V.index_of("<p?>")) = p2;
        h.W_Q.col(V.index_of("<w?>")) = p2;
        h.W_K = Mat::Zero(dpe, d);
        h.W_K.block(0, po, dpe, dpe).setIdentity();
        h.W_V = block_select(L, 0, experts);
        h.W_O = block_emit(L, 2);
        h.write_block = 2;
        l2.heads.push_back(h);

        FoOptions o;
        o.name = "L2H2 truth";
        o.hard = true;
        o.W_V = block_select(L, 0, qs);
        o.W_O = block_emit(L, 3);
        o.write_block = 3;
        l2.heads.push_back(build_fixed_offset_head(ChooserParams::at_bounds({"<w?>"}, 1, cfg.epsilon, codec),
                                                   codec, table, L, o));
    }

    // Layer 3: weighted vote at <p?> (softmax over lambda_i on expert slots),
    // log-gamma update at <w?> (linear).
    LayerSpec l3;
    {
        HeadSpec h;
        h.name = "L3H1 vote";
        h.kind = AttnKind::Softmax;
        h.beta = 1.0;
        h.W_Q = Mat::Zero(dte + 1, d);
        h.W_K = Mat::Zero(dte + 1, d);
        for (int k : experts) {
            h.W_Q(k, L.block_offset(2) + k) = 1.0;
            h.W_K(k, L.block_offset(1) + k) = 1.0;
        }
        h.W_Q(dte, L.block_offset(0) + V.index_of("<p?>")) = cfg.mask_bias;
        h.W_K(dte, L.block_offset(1) + V.index_of("<w>")) = -1.0;
        h.W_V = block_select(L, 0, qs);
        h.W_O = block_emit(L, 1);
        h.write_block = 1;
        l3.heads.push_back(h);

        HeadSpec u;
        u.name = "L3H2 update";
        u.kind = AttnKind::Linear;
        u.W_Q = std::log(cfg.gamma) * block_select(L, 3, qs);
        u.W_K = block_select(L, 0, qs);
        u.W_V = block_select(L, 1, experts);
        u.W_O = block_emit(L, 2);
        u.write_block = 2;
        l3.heads.push_back(u);
    }

    c.spec.layers = {l1, l2, l3};
    c.spec.readout = make_readout(table, L, 1, ReadoutMode::Threshold, 0.5, V.index_of("<q1>"));
    c.spec.validate();
    return c;
}

WmaCircuit build_wma_circuit(const WmaConfig& cfg) {
    return build_wma_circuit(cfg, EmbeddingTable(VocabSpec::wma(cfg.n)), PositionalCodec::standard(16, 64));
}

Vec superpose(const WmaCircuit& c, const Vec& lambda) {
    if (lambda.size() != c.cfg.n) throw ShapeError("lambda size != n");
    Vec z = Vec::Zero(c.table.d_te());
    for (int i = 0; i < c.cfg.n; ++i) z(c.table.vocab().index_of("e" + std::to_string(i + 1))) = lambda(i);
    return z;
}

Vec decode_lambda(const WmaCircuit& c, const Vec& id_like) {
    Vec lam(c.cfg.n);
    for (int i = 0; i < c.cfg.n; ++i) lam(i) = id_like.dot(c.table.u("e" + std::to_string(i + 1)));
    return lam;
}

Mat encode_round(const WmaCircuit& c, const Vec& lambda, const WmaRound& round) {
    const int n = c.cfg.n;
    if (static_cast<int>(round.preds.size()) != n) throw ShapeError("round has wrong number of predictions");
    for (int p : round.preds)
        if (p != 0 && p != 1) throw RangeError("predictions must be 0 or 1");
    if (round.y != 0 && round.y != 1) throw RangeError("truth must be 0 or 1");
    if (!lambda.allFinite()) throw StateError("log-weights must be finite");
    if (c.round_length() > c.codec.t_max()) throw RangeError("round exceeds positional horizon");

    const BlockLayout& L = c.spec.layout;
    const EmbeddingTable& E = c.table;
    auto q = [](int b) { return b ? "<q1>" : "<q0>"; };
    Mat H(L.d(), c.round_length());
    H.col(0) = embed_token(E, "<w>", 1, L, c.codec);
    Vec z = Vec::Zero(L.d());
    L.write_block(z, 0, superpose(c, lambda));
    L.write_block(z, L.pos_block(), c.codec.pos(2));
    H.col(1) = z;
    for (int i = 1; i <= n; ++i) {
        H.col(2 * i) = embed_token(E, "e" + std::to_string(i), 2 * i + 1, L, c.codec);
        H.col(2 * i + 1) = embed_token(E, q(round.preds[i - 1]), 2 * i + 2, L, c.codec);
    }
    H.col(2 * n + 2) = embed_token(E, "<p?>", 2 * n + 3, L, c.codec);
    H.col(2 * n + 3) = embed_token(E, q(round.y), 2 * n + 4, L, c.codec);
    H.col(2 * n + 4) = embed_token(E, "<w?>", 2 * n + 5, L, c.codec);
    return H;
}

WmaStep run_round(const WmaCircuit& c, const Vec& lambda, const WmaRound& round) {
    if (!lambda.allFinite()) throw StateError("log-weights must be finite");
    // the vote head relies on exp(-(lambda_max + M)) underflowing to exactly 0
    if (lambda.maxCoeff() + c.cfg.mask_bias < 750.0)
        throw StateError("log-weights below the vote head's exact range");
    Mat out = forward_all(c.spec, encode_round(c, lambda, round));
    const BlockLayout& L = c.spec.layout;
    WmaStep s;
    s.prediction = out.col(c.query_pos() - 1);
    s.state = out.col(c.update_pos() - 1);
    s.p_hat = readout_scores(c.spec.readout, s.prediction)(c.table.vocab().index_of("<q1>"));
    s.lambda_next = decode_lambda(c, L.read_block(s.state, 2));
    return s;
}

int wma_decide(const WmaCircuit& c, const Vec& prediction, Rng* rng) {
    Decoded d = decode(c.spec.readout, prediction);
    if (c.cfg.decode == WmaDecode::Threshold) return d.token;
    if (!rng) throw ConfigError("randomized decode needs an rng");
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(*rng);
    return u < d.score ? 1 : 0;
}

}  // namespace latentlab
