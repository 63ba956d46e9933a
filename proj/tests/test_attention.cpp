#include <doctest.h>

#include <cmath>
#include <random>

#include "latentlab/attention.hpp"

using namespace latentlab;

namespace {

// Rows: constant 1, score, value. Query row 0 against key row 1 gives logit = score_j.
HeadSpec scalar_head(AttnKind kind, double beta = 1.0) {
    HeadSpec h;
    h.kind = kind;
    h.beta = beta;
    h.W_Q = Mat::Zero(1, 3);
    h.W_Q(0, 0) = 1.0;
    h.W_K = Mat::Zero(1, 3);
    h.W_K(0, 1) = 1.0;
    h.W_V = Mat::Zero(1, 3);
    h.W_V(0, 2) = 1.0;
    h.W_O = Mat::Zero(3, 1);
    h.W_O(2, 0) = 1.0;
    return h;
}

Mat scalar_seq(const std::vector<double>& scores, const std::vector<double>& values) {
    Mat H(3, scores.size());
    for (size_t j = 0; j < scores.size(); ++j) H.col(j) << 1.0, scores[j], values[j];
    return H;
}

Mat random_sequence(const EmbeddingTable& t, const BlockLayout& L, const PositionalCodec& c, int len,
                    std::mt19937_64& rng) {
    std::uniform_int_distribution<int> tok(0, t.d_te() - 1);
    Mat H(L.d(), len);
    for (int i = 1; i <= len; ++i) H.col(i - 1) = embed_token(t, t.vocab().name(tok(rng)), i, L, c);
    return H;
}

}  // namespace

TEST_CASE("head_forward: softmax with equal logits averages") {
    Mat H = scalar_seq({0.3, 0.3}, {2.0, 6.0});
    Mat out = head_forward(scalar_head(AttnKind::Softmax), H);
    CHECK(out(2, 1) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(out(2, 0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("head_forward: hard picks the unique argmax, earliest on ties") {
    Mat H = scalar_seq({1.0, 2.0}, {5.0, -3.0});
    CHECK(head_forward(scalar_head(AttnKind::Hard), H)(2, 1) == -3.0);
    Mat T = scalar_seq({2.0, 1.0, 2.0}, {5.0, 0.0, 9.0});
    CHECK(head_forward(scalar_head(AttnKind::Hard), T)(2, 2) == 5.0);
}

TEST_CASE("head_forward: linear is the raw weighted sum") {
    Mat H = scalar_seq({1.0, 2.0}, {5.0, -3.0});
    CHECK(head_forward(scalar_head(AttnKind::Linear), H)(2, 1) == doctest::Approx(1.0 * 5.0 + 2.0 * -3.0));
}

TEST_CASE("attention weights: causal, rows sum to one") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (AttnKind k : {AttnKind::Softmax, AttnKind::Hard}) {
        std::vector<double> s(12), v(12);
        for (int j = 0; j < 12; ++j) s[j] = g(rng), v[j] = g(rng);
        Mat W = attention_weights(scalar_head(k, 2.5), scalar_seq(s, v));
        for (int i = 0; i < 12; ++i) {
            CHECK(std::abs(W.row(i).sum() - 1.0) <= 1e-12);
            for (int j = i + 1; j < 12; ++j) CHECK(W(i, j) == 0.0);
            if (k == AttnKind::Hard) CHECK(W.row(i).maxCoeff() == 1.0);
        }
    }
}

TEST_CASE("causality: changing a suffix never changes earlier outputs") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (AttnKind k : {AttnKind::Softmax, AttnKind::Hard, AttnKind::Linear}) {
        std::vector<double> s(10), v(10);
        for (int j = 0; j < 10; ++j) s[j] = g(rng), v[j] = g(rng);
        Mat a = head_forward(scalar_head(k), scalar_seq(s, v));
        for (int j = 6; j < 10; ++j) s[j] = 0.0, v[j] = 0.0;
        Mat b = head_forward(scalar_head(k), scalar_seq(s, v));
        CHECK(a.leftCols(6) == b.leftCols(6));
    }
}

TEST_CASE("softmax approaches hard within the beta-limit bound") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double delta = 1e-6, gap = 0.1;
    for (int trial = 0; trial < 200; ++trial) {
        int T = 2 + trial % 30;
        std::vector<double> s(T), v(T);
        for (int j = 0; j < T; ++j) s[j] = u(rng), v[j] = u(rng);
        // enforce the gap at the last query: a unique max at least `gap` above the rest
        int top = static_cast<int>(rng() % T);
        double best = *std::max_element(s.begin(), s.end());
        s[top] = best + gap;
        double beta = std::log(T / delta) / gap;
        Mat soft = head_forward(scalar_head(AttnKind::Softmax, beta), scalar_seq(s, v));
        Mat hard = head_forward(scalar_head(AttnKind::Hard), scalar_seq(s, v));
        double vmax = 0.0;
        for (double x : v) vmax = std::max(vmax, std::abs(x));
        CHECK(std::abs(soft(2, T - 1) - hard(2, T - 1)) <= delta * vmax);
    }
}

TEST_CASE("head validation") {
    HeadSpec h = scalar_head(AttnKind::Softmax, 0.0);
    CHECK_THROWS_AS(h.validate(3), ConfigError);
    h = scalar_head(AttnKind::Softmax);
    CHECK_NOTHROW(h.validate(3));
    CHECK_THROWS_AS(h.validate(4), ShapeError);
    CHECK(kind_from_name(kind_name(AttnKind::Linear)) == AttnKind::Linear);
}

TEST_CASE("chooser: constructor rejects parameters below the bounds") {
    EmbeddingTable t(VocabSpec::wma(4));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 0, c);
    ChooserParams p = ChooserParams::at_bounds({"e1"}, 2, 0.01, c);
    CHECK(p.eta_ch == doctest::Approx(std::log(64 / 0.01) / margins(c, 2).delta_pos));
    CHECK(p.xi == doctest::Approx(3.0 * 16 / margins(c, 2).delta_bos));
    ChooserParams low = p;
    low.eta_ch *= 0.5;
    CHECK_THROWS_WITH_AS(build_fixed_offset_head(low, c, t, L), doctest::Contains("eta_ch"), ConfigError);
    low = p;
    low.xi *= 0.5;
    CHECK_THROWS_WITH_AS(build_fixed_offset_head(low, c, t, L), doctest::Contains("xi"), ConfigError);
}

TEST_CASE("chooser: zero offset over the whole vocabulary routes to self") {
    EmbeddingTable t(VocabSpec::wma(4));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 0, c);
    HeadSpec h = build_fixed_offset_head(ChooserParams::at_bounds(t.vocab().tokens(), 0, 0.01, c), c, t, L);
    std::mt19937_64 rng(1);
    Mat H = random_sequence(t, L, c, 40, rng);
    Mat W = attention_weights(h, H);
    for (int i = 0; i < 40; ++i) CHECK(W(i, i) >= 0.99);
}

TEST_CASE("chooser: offset 2 at position 9, in and out of the target set") {
    EmbeddingTable t(VocabSpec::wma(4));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 0, c);
    HeadSpec h = build_fixed_offset_head(ChooserParams::at_bounds({"e1", "e2"}, 2, 0.01, c), c, t, L);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Mat H = random_sequence(t, L, c, 16, rng);
        H.col(8) = embed_token(t, "e1", 9, L, c);
        CHECK(attention_weights(h, H)(8, 6) >= 0.99);
        H.col(8) = embed_token(t, "<w>", 9, L, c);
        CHECK(attention_weights(h, H)(8, 0) >= 0.99);
    }
}

TEST_CASE("chooser concentration: at the bound, below it, and a single token") {
    EmbeddingTable t(VocabSpec::wma(4));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 0, c);
    std::mt19937_64 rng(21);
    std::vector<Mat> seqs;
    for (int s = 0; s < 100; ++s) seqs.push_back(random_sequence(t, L, c, 1 + static_cast<int>(rng() % 64), rng));

    for (int ell : {0, 1, 2, 5}) {
        HeadSpec h = build_fixed_offset_head(ChooserParams::at_bounds({"e1", "e3", "<p?>"}, ell, 0.01, c), c, t, L);
        ConcentrationReport r = chooser_concentration_report(h, seqs);
        CHECK(r.min_mass >= 0.99);
        CHECK(r.checked > 1000);

        // halve eta_ch by hand: the report must notice the lost mass
        HeadSpec weak = h;
        weak.W_K *= 0.5;
        ConcentrationReport w = chooser_concentration_report(weak, seqs);
        CHECK(w.min_mass < r.min_mass);
    }

    HeadSpec h = build_fixed_offset_head(ChooserParams::at_bounds({"e1"}, 0, 0.01, c), c, t, L);
    ConcentrationReport one = chooser_concentration_report(h, {random_sequence(t, L, c, 1, rng)});
    CHECK(one.min_mass == 1.0);
    CHECK(one.checked == 1);
}

TEST_CASE("chooser: targets before the sequence start are skipped and counted") {
    EmbeddingTable t(VocabSpec::wma(4));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 0, c);
    HeadSpec h = build_fixed_offset_head(ChooserParams::at_bounds(t.vocab().tokens(), 3, 0.01, c), c, t, L);
    std::mt19937_64 rng(2);
    ConcentrationReport r = chooser_concentration_report(h, {random_sequence(t, L, c, 10, rng)});
    CHECK(r.skipped == 3);
    CHECK(r.checked == 7);
}
