#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "latentlab/embedding.hpp"

using namespace latentlab;

TEST_CASE("vocab: reserved tokens and lookup") {
    VocabSpec w = VocabSpec::wma(3);
    for (const char* t : {"<w>", "<p?>", "<w?>", "<q0>", "<q1>", "e1", "e2", "e3"}) CHECK(w.contains(t));
    CHECK(w.size() == 8);
    CHECK(w.name(w.index_of("e2")) == "e2");
    CHECK_THROWS_AS(w.index_of("e4"), VocabularyError);
    CHECK_THROWS_AS(VocabSpec({"a", "a"}), VocabularyError);
    CHECK_THROWS_AS(VocabSpec(std::vector<std::string>{}), VocabularyError);

    VocabSpec q = VocabSpec::qlearn(3, 2);
    for (const char* t : {"<BOS>", "s1", "s3", "a1", "a2", "<r>", "<Select>", "<Q_curr>", "<Q_next>", "<Update>"})
        CHECK(q.contains(t));
    CHECK(q.size() == 1 + 3 + 2 + 5);
}

TEST_CASE("embedding table is exactly orthonormal") {
    EmbeddingTable t(VocabSpec::qlearn(8, 4));
    Mat G = t.U().transpose() * t.U();
    CHECK(G == Mat::Identity(t.d_te(), t.d_te()));
    for (int a = 0; a < t.d_te(); ++a)
        for (int b = 0; b < t.d_te(); ++b) CHECK(t.u(a).dot(t.u(b)) == (a == b ? 1.0 : 0.0));
}

TEST_CASE("block layout: disjoint cover, read after write") {
    EmbeddingTable t(VocabSpec::wma(2));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 3, c);
    CHECK(L.d() == 4 * t.d_te() + 16);
    int next = 0;
    for (int b = 0; b < L.block_count(); ++b) {
        CHECK(L.block_offset(b) == next);
        next += L.block_width(b);
    }
    CHECK(next == L.d());

    Vec h = Vec::LinSpaced(L.d(), 1.0, static_cast<double>(L.d()));
    Vec before = h;
    Vec x = Vec::Constant(t.d_te(), -7.0);
    L.write_block(h, 2, x);
    CHECK(L.read_block(h, 2) == x);
    for (int b : {0, 1, 3, 4}) CHECK(L.read_block(h, b) == L.read_block(before, b));
    CHECK_THROWS_AS(L.read_block(h, 5), RangeError);
}

TEST_CASE("embed_token: id block one-hot, position independent") {
    EmbeddingTable t(VocabSpec::wma(2));
    PositionalCodec c = PositionalCodec::standard();
    BlockLayout L = make_layout(t, 3, c);
    Vec q0 = embed_token(t, "<q0>", 1, L, c);
    CHECK(L.read_block(q0, 0).dot(t.u("<q0>")) == 1.0);
    CHECK(L.read_block(q0, 0).dot(t.u("<q1>")) == 0.0);
    for (int b = 1; b <= 3; ++b) CHECK(L.read_block(q0, b).isZero(0.0));

    Vec a = embed_token(t, "e1", 3, L, c), b = embed_token(t, "e1", 7, L, c);
    CHECK(L.read_block(a, 0) == L.read_block(b, 0));
    CHECK(L.read_block(a, L.pos_block()) != L.read_block(b, L.pos_block()));
    CHECK_THROWS_AS(embed_token(t, "nope", 1, L, c), VocabularyError);
    CHECK_THROWS_AS(embed_token(t, "e1", 65, L, c), RangeError);
}

TEST_CASE("positional codes: norms and shift operator") {
    PositionalCodec c = PositionalCodec::standard();
    CHECK(c.d_pe() == 16);
    for (int m = 0; m < 8; ++m) CHECK(c.omega()[m] == doctest::Approx(M_PI * std::pow(3.0, -(m + 1))));
    for (int i = 1; i <= c.t_max(); ++i) {
        Vec p = c.pos(i);
        for (int m = 0; m < 8; ++m) CHECK(std::hypot(p(2 * m), p(2 * m + 1)) == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK((c.shift(0) - Mat::Identity(16, 16)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((c.shift(1) * c.pos(3) - c.pos(4)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((c.shift(2) - c.shift(1) * c.shift(1)).cwiseAbs().maxCoeff() <= 1e-12);

    double worst = 0.0;
    for (int ell = 0; ell <= 8; ++ell)
        for (int i = 1; i + ell <= c.t_max(); ++i)
            worst = std::max(worst, (c.shift(ell) * c.pos(i) - c.pos(i + ell)).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-12);
    CHECK_THROWS_AS(c.pos(0), RangeError);
}

TEST_CASE("margins: hand-checked small codec") {
    // pos(1)=(0,1), pos(2)=(-1,0), pos(3)=(0,-1): the closest competitor is orthogonal
    PositionalCodec c({M_PI / 2}, 3);
    Margins m = margins(c, 0);
    CHECK(m.delta_pos == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(margins(PositionalCodec({M_PI / 2}, 1)), RangeError);
    // omega = 2*pi makes every position identical
    CHECK_THROWS_AS(margins(PositionalCodec({2 * M_PI}, 4), 0), CodecUnsoundError);
}

TEST_CASE("margins: brute-force scan agrees with the implementation") {
    PositionalCodec c = PositionalCodec::standard(8, 20);
    for (int ell : {0, 1, 3}) {
        double dpos = 1e300;
        for (int i = 1; i <= 20; ++i)
            for (int j = 1; j <= 20; ++j) {
                if (j == i - ell) continue;
                dpos = std::min(dpos, c.pos(i).squaredNorm() - c.pos(i).dot(c.shift(ell) * c.pos(j)));
            }
        CHECK(margins(c, ell).delta_pos == doctest::Approx(dpos).epsilon(1e-12));
    }
}

TEST_CASE("margins: default codec matches the golden fixture") {
    std::ifstream f(std::string(LATENTLAB_SOURCE_DIR) + "/fixtures/golden/margins.json");
    REQUIRE(f.good());
    auto g = nlohmann::json::parse(f);
    PositionalCodec c = PositionalCodec::standard();
    for (const auto& row : g["margins"]) {
        Margins m = margins(c, row["offset"].get<int>());
        CHECK(m.delta_pos > 0.0);
        CHECK(std::abs(m.delta_pos - row["delta_pos"].get<double>()) <= 1e-12);
        CHECK(std::abs(m.delta_bos - row["delta_bos"].get<double>()) <= 1e-12);
    }
}
