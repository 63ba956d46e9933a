#include "latentlab/qlearn_circuit.hpp"

#include <cmath>

namespace latentlab {

int QCircuit::state_token(int s) const {
    if (s < 0 || s >= cfg.S) throw RangeError("state index out of range");
    return table.vocab().index_of("s" + std::to_string(s + 1));
}

int QCircuit::action_token(int a) const {
    if (a < 0 || a >= cfg.A) throw RangeError("action index out of range");
    return table.vocab().index_of("a" + std::to_string(a + 1));
}

namespace {

// 1 x d row picking one coordinate of a block
Mat unit_row(const BlockLayout& L, int b, int k, double v = 1.0) {
    Mat r = Mat::Zero(1, L.d());
    r(0, L.block_offset(b) + k) = v;
    return r;
}

}  // namespace

QCircuit build_q_circuit(const QCircuitConfig& cfg, const EmbeddingTable& table, const PositionalCodec& codec) {
    if (cfg.S < 1 || cfg.A < 1) throw ConfigError("q circuit: |S| and |A| must be >= 1");
    if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw ConfigError("q circuit: alpha must lie in (0,1]");
    if (!(cfg.gamma_disc >= 0.0 && cfg.gamma_disc < 1.0)) throw ConfigError("q circuit: gamma_disc must lie in [0,1)");
    if (cfg.beta && !(*cfg.beta > 0.0)) throw ConfigError("q circuit: beta must be > 0");
    const VocabSpec& V = table.vocab();
    for (const char* t : {"<BOS>", "<r>", "<Select>", "<Q_curr>", "<Q_next>", "<Update>"})
        if (!V.contains(t)) throw VocabularyError(std::string("q vocabulary lacks ") + t);

    QCircuit c{cfg, table, codec, {}};
    if (codec.t_max() < c.total_length()) throw ConfigError("q circuit: codec horizon shorter than one step");
    margins(codec, 2);

    BlockLayout L = make_layout(table, 2, codec);
    c.spec.layout = L;
    const int d = L.d(), dte = L.d_te;

    std::vector<int> S_idx, A_idx;
    std::vector<std::string> A_tok;
    for (int s = 0; s < cfg.S; ++s) S_idx.push_back(c.state_token(s));
    for (int a = 0; a < cfg.A; ++a) {
        A_idx.push_back(c.action_token(a));
        A_tok.push_back(V.name(A_idx.back()));
    }
    const int R = V.index_of("<r>"), SEL = V.index_of("<Select>"),
              QC = V.index_of("<Q_curr>"), QN = V.index_of("<Q_next>"), UPD = V.index_of("<Update>");
    std::vector<int> QC_A = A_idx;
    QC_A.push_back(QC);

    auto fo = [&](const std::string& name, std::vector<std::string> target, int ell, Mat Wv, Mat Wo) {
        FoOptions o;
        o.name = name;
        o.hard = !cfg.fo_softmax;
        o.W_V = std::move(Wv);
        o.W_O = std::move(Wo);
        return build_fixed_offset_head(ChooserParams::at_bounds(std::move(target), ell, cfg.fo_epsilon, codec),
                                       codec, table, L, o);
    };

    // Layer 1: routing and context fetching.
    LayerSpec l1;
    l1.heads.push_back(fo("1.1 prev-state", A_tok, 1, block_select(L, 0, S_idx), block_emit(L, 0)));
    l1.heads.push_back(fo("1.2 next-state", {"<Select>"}, 2, block_select(L, 0, S_idx), block_emit(L, 1)));
    l1.heads.push_back(fo("1.3 reward-state", {"<r>"}, 2, block_select(L, 0, S_idx), block_emit(L, 0)));
    l1.heads.push_back(fo("1.4 current-tag", A_tok, 2, block_select(L, 0, {QC}), block_emit(L, 0)));
    {
        HeadSpec h;
        h.name = "1.5 next-tag";
        h.kind = AttnKind::Hard;
        h.W_Q = Mat::Zero(1, d);
        for (int a : A_idx) h.W_Q(0, a) = 1.0;
        h.W_K = unit_row(L, 0, QN);
        h.W_V = block_select(L, 0, {QN});
        h.W_O = block_emit(L, 0);
        l1.heads.push_back(h);
    }
    {
        // actions fetch their own context column; contexts fall through to BOS
        HeadSpec h;
        h.name = "1.6 context-fetch";
        h.kind = AttnKind::Hard;
        h.W_Q = block_select(L, 0, A_idx);
        for (int a : A_idx) h.W_Q(a, UPD) = 1.0;
        h.W_Q(UPD, UPD) = -2.0;
        std::vector<int> key_idx = A_idx;
        key_idx.push_back(UPD);
        h.W_K = block_select(L, 0, key_idx);
        h.W_V = block_select(L, 1, S_idx);
        h.W_O = block_emit(L, 1);
        l1.heads.push_back(h);
    }

    // Layer 2: <Select> retrieves s_t from the tagged a_t; <Update> retrieves s'.
    LayerSpec l2;
    {
        HeadSpec h;
        h.name = "2.1 select-current";
        h.kind = AttnKind::Hard;
        h.W_Q = Mat::Zero(dte, d);
        for (int k : QC_A) h.W_Q(k, SEL) = 1.0;
        h.W_K = block_select(L, 0, QC_A);
        h.W_V = block_select(L, 0, S_idx);
        h.W_O = block_emit(L, 2);
        h.write_block = 2;
        l2.heads.push_back(h);

        HeadSpec u;
        u.name = "2.2 update-next-state";
        u.kind = AttnKind::Hard;
        u.W_Q = unit_row(L, 0, UPD);
        u.W_K = unit_row(L, 0, SEL);
        u.W_V = block_select(L, 1, S_idx);
        u.W_O = block_emit(L, 0);
        l2.heads.push_back(u);
    }

    // Layer 3: maximization over candidate slots at <Select>; <Update> inherits a_t's column.
    LayerSpec l3;
    {
        const double M = cfg.mask_bias;
        Mat WQ = Mat::Zero(dte + 1, d), WK = Mat::Zero(dte + 1, d);
        WQ.topRows(dte) = block_select(L, 1, S_idx);
        WK.topRows(dte) = block_select(L, 1, S_idx);
        // gate row: +1 at <Select>, -1 on every other token coordinate
        for (int k = 0; k < dte; ++k) WQ(dte, k) = -1.0;
        WQ(dte, SEL) = 1.0;
        Vec f = Vec::Constant(dte, -M);
        for (int a : A_idx) f(a) = 2 * M;
        f(QC) = -2 * M;
        f(UPD) = -3 * M;
        WK.row(dte).head(dte) = f.transpose();

        HeadSpec h;
        h.kind = cfg.beta ? AttnKind::Softmax : AttnKind::Hard;
        h.beta = cfg.beta.value_or(1.0);
        h.W_Q = WQ;
        h.W_K = WK;

        HeadSpec h31 = h;
        h31.name = "3.1 argmax-action";
        h31.W_V = block_select(L, 0, A_idx);
        h31.W_O = block_emit(L, 0);
        l3.heads.push_back(h31);

        HeadSpec h32 = h;
        h32.name = "3.2 argmax-column";
        h32.W_V = block_select(L, 1, S_idx);
        h32.W_O = block_emit(L, 0);
        l3.heads.push_back(h32);

        HeadSpec u;
        u.name = "3.3 update-inherit";
        u.kind = AttnKind::Hard;
        u.W_Q = Mat::Zero(dte, d);
        for (int k : QC_A) u.W_Q(k, UPD) = 1.0;
        u.W_K = block_select(L, 0, QC_A);
        u.W_V = Mat::Zero(2 * dte, d);
        u.W_V.topRows(dte) = block_select(L, 0, A_idx);
        u.W_V.bottomRows(dte) = block_select(L, 1, S_idx);
        u.W_O = Mat::Zero(d, 2 * dte);
        u.W_O.leftCols(dte) = block_emit(L, 0);
        u.W_O.rightCols(dte) = block_emit(L, 1);
        l3.heads.push_back(u);
    }

    // Layer 4: TD terms accumulated along u_{s_t} in buf1(<Update>).
    LayerSpec l4;
    {
        HeadSpec h;
        h.name = "4.1 minus-current";
        h.kind = AttnKind::Linear;
        h.W_Q = -cfg.alpha * block_select(L, 1, S_idx);
        h.W_K = block_select(L, 2, S_idx);
        h.W_V = block_select(L, 2, S_idx);
        h.W_O = block_emit(L, 1);
        l4.heads.push_back(h);

        HeadSpec r;
        r.name = "4.2 reward";
        r.kind = AttnKind::Linear;
        r.W_Q = unit_row(L, 0, UPD, cfg.alpha);
        r.W_K = unit_row(L, 1, R);
        r.W_V = block_select(L, 0, S_idx);
        r.W_O = block_emit(L, 1);
        l4.heads.push_back(r);

        HeadSpec m;
        m.name = "4.3 discounted-max";
        m.kind = AttnKind::Linear;
        m.W_Q = cfg.alpha * cfg.gamma_disc * block_select(L, 0, S_idx);
        m.W_K = block_select(L, 0, S_idx);
        m.W_V = block_select(L, 2, S_idx);
        m.W_O = block_emit(L, 1);
        l4.heads.push_back(m);
    }

    c.spec.layers = {l1, l2, l3, l4};
    c.spec.readout = make_readout(table, L, 1, ReadoutMode::RawLatent);
    c.spec.validate();
    return c;
}

QCircuit build_q_circuit(const QCircuitConfig& cfg) {
    EmbeddingTable t(VocabSpec::qlearn(cfg.S, cfg.A));
    return build_q_circuit(cfg, t, PositionalCodec::standard(16, 64));
}

QContext make_context(const QCircuit& c, const QTable& Q) {
    if (Q.rows() != c.cfg.S || Q.cols() != c.cfg.A) throw ShapeError("Q table shape mismatch");
    if (!Q.allFinite()) throw StateError("Q table must be finite");
    QContext ctx;
    for (int a = 0; a < c.cfg.A; ++a) {
        Vec col = Vec::Zero(c.table.d_te());
        for (int s = 0; s < c.cfg.S; ++s) col(c.state_token(s)) = Q(s, a);
        ctx.cols.push_back(col);
    }
    return ctx;
}

QTable context_table(const QCircuit& c, const QContext& ctx) {
    if (static_cast<int>(ctx.cols.size()) != c.cfg.A) throw ShapeError("context has wrong number of columns");
    QTable Q(c.cfg.S, c.cfg.A);
    for (int a = 0; a < c.cfg.A; ++a)
        for (int s = 0; s < c.cfg.S; ++s) Q(s, a) = ctx.cols[a].dot(c.table.u(c.state_token(s)));
    return Q;
}

Mat encode_step(const QCircuit& c, const QContext& ctx, const Transition& tr) {
    const int A = c.cfg.A;
    if (static_cast<int>(ctx.cols.size()) != A) throw ShapeError("context has wrong number of columns");
    for (const auto& col : ctx.cols)
        if (!col.allFinite()) throw StateError("context column is not finite");
    c.state_token(tr.s);
    c.state_token(tr.s_next);
    c.action_token(tr.a);
    if (!(tr.r >= 0.0 && tr.r <= 1.0)) throw RangeError("reward must lie in [0,1]");

    const BlockLayout& L = c.spec.layout;
    const EmbeddingTable& E = c.table;
    const VocabSpec& V = E.vocab();
    Mat H(L.d(), c.select_pos());
    int p = 1;
    auto put = [&](const std::string& tok) {
        H.col(p - 1) = embed_token(E, tok, p, L, c.codec);
        ++p;
    };
    put("<BOS>");
    for (int a = 0; a < A; ++a) {
        Vec h = Vec::Zero(L.d());
        L.write_block(h, 0, E.u(c.action_token(a)) + E.u("<Update>"));
        L.write_block(h, 1, ctx.cols[a]);
        L.write_block(h, L.pos_block(), c.codec.pos(p));
        H.col(p - 1) = h;
        ++p;
    }
    put("<Q_curr>");
    put(V.name(c.state_token(tr.s)));
    put(V.name(c.action_token(tr.a)));
    H.col(p - 1) = embed_token(E, "<r>", p, L, c.codec);
    H.col(p - 1).segment(L.block_offset(1), L.d_te) = tr.r * E.u("<r>");
    ++p;
    put("<Q_next>");
    for (int a = 0; a < A; ++a) {
        put(V.name(c.state_token(tr.s_next)));
        put(V.name(c.action_token(a)));
    }
    put("<Select>");
    return H;
}

Mat append_phase2(const QCircuit& c, const Mat& phase1, int a_star) {
    if (phase1.cols() != c.select_pos()) throw ShapeError("phase-1 sequence has wrong length");
    const BlockLayout& L = c.spec.layout;
    Mat H(phase1.rows(), c.total_length());
    H.leftCols(phase1.cols()) = phase1;
    H.col(c.astar_pos() - 1) =
        embed_token(c.table, c.table.vocab().name(c.action_token(a_star)), c.astar_pos(), L, c.codec);
    H.col(c.update_pos() - 1) = embed_token(c.table, "<Update>", c.update_pos(), L, c.codec);
    return H;
}

std::vector<const HeadSpec*> fo_heads(const QCircuit& c) {
    std::vector<const HeadSpec*> out;
    for (const auto& layer : c.spec.layers)
        for (const auto& h : layer.heads)
            if (h.chooser) out.push_back(&h);
    return out;
}

QStepResult run_step(const QCircuit& c, const QContext& ctx, const Transition& tr) {
    const BlockLayout& L = c.spec.layout;
    Mat H1 = encode_step(c, ctx, tr);

    QStepResult res;
    res.select_out = forward_pass(c.spec, H1);
    Vec id_sel = L.read_block(res.select_out, 0);
    Vec act(c.cfg.A);
    for (int a = 0; a < c.cfg.A; ++a) act(a) = id_sel(c.action_token(a));
    res.a_star = argmax_lowest(act);

    Mat H2 = append_phase2(c, H1, res.a_star);
    res.update_out = forward_pass(c.spec, H2);
    Vec buf1 = L.read_block(res.update_out, 1);

    res.new_context = ctx;
    Vec col = Vec::Zero(L.d_te);
    for (int s = 0; s < c.cfg.S; ++s) col(c.state_token(s)) = buf1(c.state_token(s));
    res.new_context.cols[tr.a] = col;
    return res;
}

}  // namespace latentlab
