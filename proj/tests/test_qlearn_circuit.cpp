#include <doctest.h>

#include <limits>
#include <random>

#include "latentlab/qlearn_circuit.hpp"

using namespace latentlab;

namespace {

QCircuit make(int S, int A, double alpha = 0.1, double g = 0.9, bool fo_softmax = false) {
    QCircuitConfig cfg;
    cfg.S = S;
    cfg.A = A;
    cfg.alpha = alpha;
    cfg.gamma_disc = g;
    cfg.fo_softmax = fo_softmax;
    return build_q_circuit(cfg);
}

QTable random_table(int S, int A, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return QTable::NullaryExpr(S, A, [&]() { return u(rng); });
}

}  // namespace

TEST_CASE("single action: selection forced, update follows the Bellman rule") {
    QCircuit c = make(3, 1, 0.3, 0.8);
    QTable Q(3, 1);
    Q << 0.2, -0.4, 0.9;
    QStepResult r = run_step(c, make_context(c, Q), {1, 0, 0.5, 2});
    CHECK(r.a_star == 0);
    QTable ref = q_learning_step(Q, 1, 0, 0.5, 2, 0.3, 0.8);
    QTable got = context_table(c, r.new_context);
    CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("alpha 1, no discount, zero table: update buffer is r on the current state") {
    QCircuit c = make(3, 2, 1.0, 0.0);
    QStepResult r = run_step(c, make_context(c, QTable::Zero(3, 2)), {2, 1, 0.75, 0});
    Vec buf = c.spec.layout.read_block(r.update_out, 1);
    Vec expect = Vec::Zero(c.spec.layout.d_te);
    expect(c.state_token(2)) = 0.75;
    for (int s = 0; s < 3; ++s) CHECK(std::abs(buf(c.state_token(s)) - expect(c.state_token(s))) <= 1e-12);
}

TEST_CASE("2x2 fixture: updated entry 0.533, everything else bitwise unchanged") {
    QCircuit c = make(2, 2);
    QTable Q(2, 2);
    Q << 0.5, 0.1, 0.7, 0.3;
    QContext ctx = make_context(c, Q);
    QStepResult r = run_step(c, ctx, {0, 0, 0.2, 1});
    QTable got = context_table(c, r.new_context);
    CHECK(std::abs(got(0, 0) - 0.533) <= 1e-12);
    CHECK(got(0, 1) == Q(0, 1));
    CHECK(got(1, 1) == Q(1, 1));
    CHECK(r.new_context.cols[1] == ctx.cols[1]);
    CHECK(got(1, 0) == Q(1, 0));
}

TEST_CASE("greedy selection and tie rule") {
    QCircuit c = make(2, 2);
    QTable Q(2, 2);
    Q << 0.0, 0.0, 0.1, 0.9;
    CHECK(run_step(c, make_context(c, Q), {0, 0, 0.0, 1}).a_star == 1);
    Q.row(1) << 0.4, 0.4;
    CHECK(run_step(c, make_context(c, Q), {0, 0, 0.0, 1}).a_star == 0);
}

TEST_CASE("context encode and decode are exact") {
    QCircuit c = make(5, 3);
    QContext z = make_context(c, QTable::Zero(5, 3));
    for (const auto& col : z.cols) CHECK(col.isZero(0.0));
    Rng rng(41);
    for (int k = 0; k < 1000; ++k) {
        QTable Q = random_table(5, 3, rng);
        QContext ctx = make_context(c, Q);
        for (int a = 0; a < 3; ++a)
            for (int s = 0; s < 5; ++s) CHECK(ctx.cols[a].dot(c.table.u(c.state_token(s))) == Q(s, a));
        CHECK(context_table(c, ctx) == Q);
    }
    QTable bad = QTable::Zero(5, 3);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(make_context(c, bad), StateError);
}

TEST_CASE("sequence lengths") {
    for (int A : {2, 3, 4}) {
        QCircuit c = make(3, A);
        CHECK(c.discrete_length() == 2 * A + 9);
        CHECK(c.total_length() == 3 * A + 9);
        Mat p1 = encode_step(c, make_context(c, QTable::Zero(3, A)), {0, 0, 0.0, 0});
        CHECK(p1.cols() == c.select_pos());
        CHECK(append_phase2(c, p1, 0).cols() == c.total_length());
    }
}

TEST_CASE("encode_step rejects bad transitions") {
    QCircuit c = make(2, 2);
    QContext ctx = make_context(c, QTable::Zero(2, 2));
    CHECK_THROWS_AS(encode_step(c, ctx, {2, 0, 0.0, 0}), RangeError);
    CHECK_THROWS_AS(encode_step(c, ctx, {0, 2, 0.0, 0}), RangeError);
    CHECK_THROWS_AS(encode_step(c, ctx, {0, 0, 1.5, 0}), RangeError);
}

TEST_CASE("write locality over random steps") {
    QCircuit c = make(4, 3, 0.5, 0.7);
    Rng rng(77);
    QTable Q = random_table(4, 3, rng);
    QContext ctx = make_context(c, Q);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 40; ++t) {
        Transition tr{static_cast<int>(rng() % 4), static_cast<int>(rng() % 3), u(rng), static_cast<int>(rng() % 4)};
        QTable before = context_table(c, ctx);
        QStepResult r = run_step(c, ctx, tr);
        CHECK(r.a_star == argmax_lowest(before.row(tr.s_next).transpose()));
        QTable after = context_table(c, r.new_context);
        QTable ref = q_learning_step(before, tr.s, tr.a, tr.r, tr.s_next, 0.5, 0.7);
        CHECK((after - ref).cwiseAbs().maxCoeff() <= 1e-12);
        for (int a = 0; a < 3; ++a)
            for (int s = 0; s < 4; ++s)
                if (a != tr.a || s != tr.s) CHECK(after(s, a) == before(s, a));
        ctx = r.new_context;
    }
}

TEST_CASE("fixed-offset heads concentrate on their targets for the full step") {
    for (bool soft : {false, true}) {
        QCircuit c = make(4, 3, 0.1, 0.9, soft);
        Rng rng(5);
        Mat H = append_phase2(c, encode_step(c, make_context(c, random_table(4, 3, rng)), {1, 2, 0.3, 3}), 1);
        int n = 0;
        Mat x = H;
        for (const auto& layer : c.spec.layers) {
            for (const auto& h : layer.heads) {
                if (!h.chooser) continue;
                ++n;
                ConcentrationReport rep = chooser_concentration_report(h, {x});
                CHECK_MESSAGE(rep.min_mass >= 0.99, h.name);
            }
            x = apply_layer(layer, c.spec.layout, x);
        }
        CHECK(n >= 4);
        CHECK(static_cast<int>(fo_heads(c).size()) == n);
    }
}

TEST_CASE("build errors") {
    QCircuitConfig cfg;
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(build_q_circuit(cfg), ConfigError);
    cfg.alpha = 0.1;
    cfg.gamma_disc = 1.0;
    CHECK_THROWS_AS(build_q_circuit(cfg), ConfigError);
    cfg.gamma_disc = 0.9;
    cfg.beta = -1.0;
    CHECK_THROWS_AS(build_q_circuit(cfg), ConfigError);
    cfg.beta.reset();
    CHECK_THROWS_AS(build_q_circuit(cfg, EmbeddingTable(VocabSpec::qlearn(1, 2)), PositionalCodec::standard()),
                    VocabularyError);
}
