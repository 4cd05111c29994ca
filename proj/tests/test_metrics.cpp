#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gpvs/metrics.hpp"

using namespace gpvs;

namespace {

TokenSeq toks(const std::string& s) { return detail_corpus::split_ws(s); }

}  // namespace

TEST_CASE("sentence bleu2") {
  SECTION("exact match scores one") {
    CHECK(bleu2(toks("a b c"), {toks("a b c")}) == Catch::Approx(1.0));
  }
  SECTION("hand-counted two-thirds and one-half case") {
    const double expect = std::sqrt((2.0 / 3.0) * (1.0 / 2.0));
    CHECK(bleu2(toks("the cat sat"), {toks("the cat sleeps")}) ==
          Catch::Approx(expect).margin(1e-9));
    CHECK(expect == Catch::Approx(0.57735).margin(1e-5));
  }
  SECTION("smoothing floor with disjoint tokens") {
    // equal lengths, denominators 3 and 2
    const double expect = std::sqrt((1.0 / 6.0) * (1.0 / 4.0));
    CHECK(bleu2(toks("x y z"), {toks("a b c")}) == Catch::Approx(expect).margin(1e-9));
    CHECK(expect == Catch::Approx(0.2041).margin(1e-4));
  }
  SECTION("empty hypothesis scores zero") {
    CHECK(bleu2({}, {toks("a b")}) == 0.0);
  }
  SECTION("empty reference list is an error") {
    CHECK_THROWS_AS(bleu2(toks("a"), {}), std::invalid_argument);
  }
  SECTION("brevity penalty uses the closest reference length, ties shorter") {
    // hyp length 2, refs lengths 1 and 3: both distance 1, tie goes to 1
    const double with_tie = bleu2(toks("a b"), {toks("a"), toks("a b c")});
    const double just_short = bleu2(toks("a b"), {toks("a")});
    CHECK(with_tie >= just_short);  // extra reference can only help precision
    // a longer hypothesis is not penalized
    CHECK(bleu2(toks("a b c d"), {toks("a b")}) ==
          bleu2(toks("a b c d"), {toks("a b")}));
  }
  SECTION("score lives in the unit interval and ignores reference order") {
    gpvs::Rng rng(3);
    const std::vector<std::string> pool = {"a", "b", "c", "d"};
    for (int k = 0; k < 200; ++k) {
      auto draw = [&](std::size_t len) {
        TokenSeq out;
        for (std::size_t i = 0; i < len; ++i) out.push_back(pool[rng.below(pool.size())]);
        return out;
      };
      const TokenSeq hyp = draw(1 + rng.below(5));
      const TokenSeq r1 = draw(1 + rng.below(5));
      const TokenSeq r2 = draw(1 + rng.below(5));
      const double fwd = bleu2(hyp, {r1, r2});
      CHECK(fwd >= 0.0);
      CHECK(fwd <= 1.0);
      CHECK(fwd == bleu2(hyp, {r2, r1}));
      // adding the hypothesis itself as a reference reaches the ceiling
      CHECK(bleu2(hyp, {r1, r2, hyp}) == Catch::Approx(1.0));
      CHECK(bleu2(hyp, {r1, r2, hyp}) >= fwd);
    }
  }
}

TEST_CASE("corpus bleu2") {
  SECTION("perfect corpus scores one") {
    CHECK(corpus_bleu2({{toks("a b"), {toks("a b")}}, {toks("c d e"), {toks("c d e")}}}) ==
          Catch::Approx(1.0));
  }
  SECTION("single pair equals sentence bleu when counts are nonzero") {
    const TokenSeq hyp = toks("the cat sat");
    const std::vector<TokenSeq> refs = {toks("the cat sleeps")};
    CHECK(corpus_bleu2({{hyp, refs}}) == Catch::Approx(bleu2(hyp, refs)).margin(1e-12));
  }
  SECTION("two-pair hand aggregation") {
    // pair 1: hyp "a b", ref "a b"   -> uni 2/2, bi 1/1, len 2/2
    // pair 2: hyp "c d", ref "c x"   -> uni 1/2, bi 0/1, len 2/2
    // corpus: p1 = 3/4, p2 = 1/2, bp = 1
    const double expect = std::sqrt((3.0 / 4.0) * (1.0 / 2.0));
    CHECK(corpus_bleu2({{toks("a b"), {toks("a b")}}, {toks("c d"), {toks("c x")}}}) ==
          Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("self bleu2") {
  SECTION("five identical sentences score exactly one") {
    const std::vector<TokenSeq> outputs(5, toks("a b c d"));
    CHECK(self_bleu2(outputs) == 1.0);
  }
  SECTION("pairwise-disjoint sentences fall below the smoothing ceiling") {
    const std::vector<TokenSeq> outputs = {toks("a1 a2 a3 a4 a5"), toks("b1 b2 b3 b4 b5"),
                                           toks("c1 c2 c3 c4 c5"), toks("d1 d2 d3 d4 d5"),
                                           toks("e1 e2 e3 e4 e5")};
    CHECK(self_bleu2(outputs) < 0.25);
  }
  SECTION("fewer than two outputs is an error") {
    CHECK_THROWS_AS(self_bleu2({toks("a")}), std::invalid_argument);
  }
}

TEST_CASE("div4") {
  SECTION("duplicated sentence halves the ratio") {
    CHECK(div4({toks("a b c d e"), toks("a b c d e")}) == Catch::Approx(0.5));
  }
  SECTION("no shared 4-grams scores one") {
    CHECK(div4({toks("a b c d"), toks("e f g h"), toks("i j k l")}) == 1.0);
  }
  SECTION("all sentences shorter than four tokens score one by convention") {
    CHECK(div4({toks("a b c"), toks("d e"), toks("f")}) == 1.0);
  }
  SECTION("doubling the whole output set halves the value") {
    std::vector<TokenSeq> base = {toks("a b c d e"), toks("a b x y z w")};
    std::vector<TokenSeq> doubled = base;
    doubled.insert(doubled.end(), base.begin(), base.end());
    CHECK(div4(doubled) == Catch::Approx(0.5 * div4(base)).margin(1e-12));
  }
}

TEST_CASE("uniqueness") {
  SECTION("all identical over ten outputs") {
    CHECK(uniqueness(std::vector<TokenSeq>(10, toks("a b"))) == Catch::Approx(0.1));
  }
  SECTION("all distinct") {
    CHECK(uniqueness({toks("a"), toks("b"), toks("c")}) == 1.0);
  }
  SECTION("two of three distinct") {
    CHECK(uniqueness({toks("x"), toks("x"), toks("y")}) == Catch::Approx(2.0 / 3.0));
  }
  SECTION("count is integral") {
    gpvs::Rng rng(5);
    for (int k = 0; k < 50; ++k) {
      std::vector<TokenSeq> outputs;
      const std::size_t n = 1 + rng.below(10);
      for (std::size_t i = 0; i < n; ++i)
        outputs.push_back({std::string(1, static_cast<char>('a' + rng.below(3)))});
      const double u = uniqueness(outputs);
      const double count = u * static_cast<double>(n);
      CHECK(std::abs(count - std::round(count)) < 1e-9);
    }
  }
}

TEST_CASE("protocol validation") {
  EvalProtocol p;
  p.num_generate = 10;
  p.subset_for_overlap = 11;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.subset_for_overlap = 5;
  CHECK_NOTHROW(p.validate());
}
