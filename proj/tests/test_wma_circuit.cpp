#include <doctest.h>

#include <cmath>
#include <limits>

#include "latentlab/wma_circuit.hpp"

using namespace latentlab;

namespace {

WmaCircuit make(int n, double gamma = 2.0, WmaDecode mode = WmaDecode::Threshold) {
    WmaConfig cfg;
    cfg.n = n;
    cfg.gamma = gamma;
    cfg.decode = mode;
    return build_wma_circuit(cfg);
}

Vec lam2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("single expert: the vote is that expert's prediction") {
    WmaCircuit c = make(1);
    for (int p : {0, 1}) {
        WmaStep s = run_round(c, Vec::Constant(1, -3.0), {{p}, 1});
        CHECK(s.p_hat == doctest::Approx(p).epsilon(1e-15));
        CHECK(wma_decide(c, s.prediction, nullptr) == p);
    }
}

TEST_CASE("vote head weights over experts follow exp(lambda)") {
    WmaCircuit c = make(2);
    Mat H = encode_round(c, lam2(std::log(2.0), 0.0), {{1, 0}, 1});
    Mat x = H;
    for (int l = 0; l < 2; ++l) x = apply_layer(c.spec.layers[l], c.spec.layout, x);
    const HeadSpec* vote = nullptr;
    for (const auto& h : c.spec.layers[2].heads)
        if (h.name.rfind("L3H1", 0) == 0) vote = &h;
    REQUIRE(vote);
    Mat W = attention_weights(*vote, x);
    int q = c.query_pos() - 1;
    // expert i occupies the e_i / p_i pair at 0-based columns 2+2i, 3+2i
    double w1 = W(q, 2) + W(q, 3), w2 = W(q, 4) + W(q, 5);
    CHECK(w1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(w2 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("run_round: worked examples") {
    WmaCircuit c = make(2, 1.5);
    CHECK(run_round(c, Vec::Zero(2), {{1, 0}, 1}).p_hat == doctest::Approx(0.5).epsilon(1e-14));

    WmaStep s = run_round(c, lam2(std::log(2.0), 0.0), {{1, 0}, 1});
    CHECK(std::abs(s.p_hat - 2.0 / 3.0) <= 1e-12);
    CHECK(std::abs(s.lambda_next(0) - (std::log(2.0) + std::log(1.5))) <= 1e-12);
    CHECK(std::abs(s.lambda_next(1)) <= 1e-12);

    Vec bad = lam2(std::numeric_limits<double>::quiet_NaN(), 0.0);
    CHECK_THROWS_AS(run_round(c, bad, {{1, 0}, 1}), StateError);
    CHECK_THROWS_AS(run_round(c, Vec::Zero(2), {{1, 2}, 1}), RangeError);
    CHECK_THROWS_AS(run_round(c, Vec::Zero(3), {{1, 0}, 1}), ShapeError);
}

TEST_CASE("encode_round: state slot and lengths") {
    WmaCircuit c = make(2);
    Mat H = encode_round(c, Vec::Zero(2), {{1, 0}, 0});
    CHECK(c.spec.layout.read_block(H.col(1), 0).isZero(0.0));

    Mat G = encode_round(c, lam2(std::log(2.0), 0.0), {{1, 0}, 0});
    CHECK(c.spec.layout.read_block(G.col(1), 0).dot(c.table.u("e1")) == std::log(2.0));

    for (int n = 1; n <= 8; ++n) {
        WmaCircuit w = make(n);
        CHECK(encode_round(w, Vec::Zero(n), {std::vector<int>(n, 1), 1}).cols() == 2 * n + 5);
        CHECK(w.round_length() == 2 * n + 5);
    }
}

TEST_CASE("superposition round trip") {
    WmaCircuit c = make(5);
    Vec lam(5);
    lam << 0.25, -1.5, 3.0, 0.0, 7.125;
    CHECK(decode_lambda(c, superpose(c, lam)) == lam);
}

TEST_CASE("adding a constant to every log-weight leaves the vote unchanged") {
    WmaCircuit c = make(4);
    Vec lam(4);
    lam << 0.3, -0.7, 1.1, 0.0;
    for (double shift : {-20.0, 5.0, 40.0}) {
        WmaStep a = run_round(c, lam, {{1, 0, 1, 0}, 1});
        WmaStep b = run_round(c, (lam.array() + shift).matrix(), {{1, 0, 1, 0}, 1});
        CHECK(std::abs(a.p_hat - b.p_hat) <= 1e-12);
    }
}

TEST_CASE("threshold decode matches the deterministic vote, ties to 1") {
    WmaCircuit c = make(2);
    Rng rng(2);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int k = 0; k < 200; ++k) {
        Vec lam = lam2(u(rng), u(rng));
        std::vector<int> p{static_cast<int>(rng() % 2), static_cast<int>(rng() % 2)};
        WmaStep s = run_round(c, lam, {p, 0});
        double ref = mwu_step_log(lam, p, 0, 2.0).p_hat;
        CHECK(wma_decide(c, s.prediction, nullptr) == (ref >= 0.5 ? 1 : 0));
    }
    WmaStep tie = run_round(c, Vec::Zero(2), {{1, 0}, 0});
    CHECK(wma_decide(c, tie.prediction, nullptr) == 1);
}

TEST_CASE("randomized decode emits 1 at the vote probability") {
    WmaCircuit c = make(2, 2.0, WmaDecode::Randomized);
    WmaStep s = run_round(c, lam2(std::log(2.0), 0.0), {{1, 0}, 1});
    CHECK_THROWS_AS(wma_decide(c, s.prediction, nullptr), ConfigError);
    Rng rng(2024);
    const int N = 20000;
    int ones = 0;
    for (int k = 0; k < N; ++k) ones += wma_decide(c, s.prediction, &rng);
    // 5 sigma for Bernoulli(2/3)
    CHECK(std::abs(ones / double(N) - 2.0 / 3.0) <= 5 * std::sqrt(2.0 / 9.0 / N));
}

TEST_CASE("serialized circuit reruns identically") {
    WmaCircuit c = make(3, 1.8);
    WmaCircuit back = c;
    back.spec = circuit_from_json(circuit_to_json(c.spec));
    Vec lam = Vec::Zero(3);
    Vec lam_b = lam;
    for (int t = 0; t < 10; ++t) {
        WmaRound r{{t % 2, (t / 2) % 2, 1}, (t / 3) % 2};
        WmaStep a = run_round(c, lam, r), b = run_round(back, lam_b, r);
        CHECK(a.p_hat == b.p_hat);
        CHECK(a.lambda_next == b.lambda_next);
        lam = a.lambda_next;
        lam_b = b.lambda_next;
    }
}

TEST_CASE("build errors") {
    WmaConfig cfg;
    cfg.gamma = 1.0;
    CHECK_THROWS_AS(build_wma_circuit(cfg), ConfigError);
    cfg.gamma = 2.0;
    cfg.n = 0;
    CHECK_THROWS_AS(build_wma_circuit(cfg), ConfigError);
    cfg.n = 3;
    CHECK_THROWS_AS(build_wma_circuit(cfg, EmbeddingTable(VocabSpec::wma(2)), PositionalCodec::standard()),
                    VocabularyError);
    CHECK_THROWS_AS(build_wma_circuit(cfg, EmbeddingTable(VocabSpec::wma(3)), PositionalCodec::standard(16, 8)),
                    ConfigError);
}
