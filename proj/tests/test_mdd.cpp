#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "mpl/mdd.hpp"
#include "mpl/rng.hpp"

using namespace mpl;
using namespace mpl::mdd;

namespace {

std::vector<int> random_seq(int max_len, int vocab, Rng& rng) {
  const int len = static_cast<int>(rng.uniform_int(0, max_len));
  std::vector<int> s(len);
  for (int i = 0; i < len; ++i) s[i] = static_cast<int>(rng.uniform_int(0, vocab - 1));
  return s;
}

// Replays alignment ops on the reference and checks the hypothesis comes out.
void check_replay(const EditAlignment& a, const std::vector<int>& ref,
                  const std::vector<int>& hyp) {
  std::vector<int> rebuilt;
  int cost = 0;
  for (const EditOp& op : a.ops) {
    switch (op.kind) {
      case EditOpKind::Match:
        REQUIRE(ref.at(op.ref_pos) == hyp.at(op.hyp_pos));
        rebuilt.push_back(ref[op.ref_pos]);
        break;
      case EditOpKind::Substitute:
        REQUIRE(ref.at(op.ref_pos) != hyp.at(op.hyp_pos));
        rebuilt.push_back(hyp[op.hyp_pos]);
        ++cost;
        break;
      case EditOpKind::Insert:
        rebuilt.push_back(hyp.at(op.hyp_pos));
        ++cost;
        break;
      case EditOpKind::Delete:
        ++cost;
        break;
    }
  }
  CHECK(rebuilt == hyp);
  CHECK(cost == a.distance);
}

// Plain DP distance, reimplemented independently of align().
int reference_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

long match_count(const EditAlignment& a) {
  long n = 0;
  for (const auto& op : a.ops) n += op.kind == EditOpKind::Match ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("align basics") {
  SUBCASE("identity") {
    const auto a = align({0, 1, 2}, {0, 1, 2});
    CHECK(a.distance == 0);
    REQUIRE(a.ops.size() == 3);
    for (const auto& op : a.ops) CHECK(op.kind == EditOpKind::Match);
  }
  SUBCASE("single substitution") {
    const auto a = align({0, 1, 2}, {0, 9, 2});
    CHECK(a.distance == 1);
    REQUIRE(a.ops.size() == 3);
    CHECK(a.ops[0].kind == EditOpKind::Match);
    CHECK(a.ops[1].kind == EditOpKind::Substitute);
    CHECK(a.ops[2].kind == EditOpKind::Match);
  }
  SUBCASE("swapped pair resolves to two substitutions") {
    const auto a = align({0, 1}, {1, 0});
    CHECK(a.distance == 2);
    REQUIRE(a.ops.size() == 2);
    CHECK(a.ops[0].kind == EditOpKind::Substitute);
    CHECK(a.ops[1].kind == EditOpKind::Substitute);
  }
}

TEST_CASE("align replay and distance agree with the textbook DP") {
  Rng rng(404);
  for (int rep = 0; rep < 300; ++rep) {
    const auto ref = random_seq(8, 3, rng);
    const auto hyp = random_seq(8, 3, rng);
    const auto a = align(ref, hyp);
    CHECK(a.distance == reference_distance(ref, hyp));
    check_replay(a, ref, hyp);
  }
}

TEST_CASE("classify single-position cases") {
  // canonical [AH]=0, alternatives AE=1, IY=2
  SUBCASE("all agree -> TA") {
    const auto c = classify({0}, {0}, {0});
    CHECK(c.ta == 1);
    CHECK(c.fr + c.fa + c.tr() == 0);
  }
  SUBCASE("detected and diagnosed -> TR correct") {
    const auto c = classify({0}, {1}, {1});
    CHECK(c.tr_correct_diag == 1);
    CHECK(c.ta + c.fr + c.fa + c.tr_error_diag == 0);
  }
  SUBCASE("mispronunciation missed -> FA") {
    const auto c = classify({0}, {1}, {0});
    CHECK(c.fa == 1);
    CHECK(c.ta + c.fr + c.tr() == 0);
  }
  SUBCASE("detected but misdiagnosed -> TR erroneous") {
    const auto c = classify({0}, {1}, {2});
    CHECK(c.tr_error_diag == 1);
    CHECK(c.ta + c.fr + c.fa + c.tr_correct_diag == 0);
  }
  SUBCASE("false alarm -> FR") {
    const auto c = classify({0}, {0}, {1});
    CHECK(c.fr == 1);
    CHECK(c.ta + c.fa + c.tr() == 0);
  }
  SUBCASE("empty canonical is rejected") {
    CHECK_THROWS_AS(classify({}, {0}, {0}), DataError);
  }
}

TEST_CASE("classify handles deletions and insertions") {
  SUBCASE("speaker deletion, model follows -> TR correct") {
    const auto c = classify({0, 1}, {1}, {1});
    CHECK(c.ta == 1);
    CHECK(c.tr_correct_diag == 1);
  }
  SUBCASE("speaker deletion, model echoes canonical -> FA") {
    const auto c = classify({0, 1}, {1}, {0, 1});
    CHECK(c.ta == 1);
    CHECK(c.fa == 1);
  }
  SUBCASE("speaker insertion, model follows -> TR correct") {
    const auto c = classify({0}, {0, 2}, {0, 2});
    CHECK(c.ta == 1);
    CHECK(c.tr_correct_diag == 1);
  }
  SUBCASE("speaker insertion, model misses it -> FA") {
    const auto c = classify({0}, {0, 2}, {0});
    CHECK(c.ta == 1);
    CHECK(c.fa == 1);
  }
  SUBCASE("empty predicted is a stream of deletes") {
    const auto c = classify({0, 1}, {0, 1}, {});
    CHECK(c.fr == 2);
  }
}

TEST_CASE("classify count-conservation and echo properties over random triples") {
  Rng rng(9090);
  for (int rep = 0; rep < 1200; ++rep) {
    auto canonical = random_seq(8, 3, rng);
    if (canonical.empty()) canonical.push_back(0);
    const auto perceived = random_seq(8, 3, rng);
    const auto predicted = random_seq(8, 3, rng);

    const auto a1 = align(canonical, perceived);
    const long matches = match_count(a1);
    const long misp_events = static_cast<long>(a1.ops.size()) - matches;

    const auto counts = classify(canonical, perceived, predicted);
    CHECK(counts.ta + counts.fr == matches);
    CHECK(counts.fa + counts.tr() == misp_events);

    // a recognizer that echoes the human labels never false-rejects or
    // misdiagnoses
    const auto echo_perceived = classify(canonical, perceived, perceived);
    CHECK(echo_perceived.fr == 0);
    CHECK(echo_perceived.tr_error_diag == 0);

    // a recognizer that echoes the canonical text accepts everything
    const auto echo_canonical = classify(canonical, perceived, canonical);
    CHECK(echo_canonical.fr == 0);
    CHECK(echo_canonical.tr() == 0);
  }
}

TEST_CASE("metric fixtures") {
  SUBCASE("counts 1662/1967/2324") {
    MddCounts c;
    c.fr = 1662;
    c.fa = 1967;
    c.tr_correct_diag = 1795;
    c.tr_error_diag = 529;
    const auto s = mdd_scores(c);
    REQUIRE(s.precision);
    REQUIRE(s.recall);
    REQUIRE(s.f1);
    CHECK(std::round(*s.precision * 100) / 100 == doctest::Approx(58.30));
    CHECK(std::round(*s.recall * 100) / 100 == doctest::Approx(54.16));
    CHECK(std::round(*s.f1 * 100) / 100 == doctest::Approx(56.16));
  }
  SUBCASE("counts 1841/1977/2314") {
    MddCounts c;
    c.fr = 1841;
    c.fa = 1977;
    c.tr_correct_diag = 1755;
    c.tr_error_diag = 559;
    const auto s = mdd_scores(c);
    REQUIRE(s.precision);
    REQUIRE(s.recall);
    REQUIRE(s.f1);
    CHECK(std::round(*s.precision * 100) / 100 == doctest::Approx(55.69));
    CHECK(std::round(*s.recall * 100) / 100 == doctest::Approx(53.93));
    CHECK(std::round(*s.f1 * 100) / 100 == doctest::Approx(54.80));
  }
  SUBCASE("zero TR gives zero P and R and an undefined F1") {
    MddCounts c;
    c.fr = 5;
    c.fa = 3;
    const auto s = mdd_scores(c);
    REQUIRE(s.precision);
    REQUIRE(s.recall);
    CHECK(*s.precision == 0.0);
    CHECK(*s.recall == 0.0);
    CHECK_FALSE(s.f1);
  }
  SUBCASE("zero denominators give undefined markers") {
    const auto s = mdd_scores(MddCounts{});
    CHECK_FALSE(s.precision);
    CHECK_FALSE(s.recall);
    CHECK_FALSE(s.f1);
  }
}

TEST_CASE("per basics") {
  CHECK(per({0, 1, 2}, {0, 2}) == doctest::Approx(1.0 / 3.0));
  CHECK(per({0, 1, 2}, {0, 1, 2}) == doctest::Approx(0.0));
  CHECK(per({0}, {1, 2}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(per({}, {0}), DataError);
}

TEST_CASE("per invariances") {
  Rng rng(55);
  for (int rep = 0; rep < 100; ++rep) {
    auto x = random_seq(8, 4, rng);
    if (x.empty()) x.push_back(1);
    CHECK(per(x, x) == 0.0);
    auto y = random_seq(8, 4, rng);
    // permute the vocabulary consistently on both sides
    const std::vector<int> perm = {2, 3, 0, 1};
    auto px = x;
    auto py = y;
    for (int& v : px) v = perm[v];
    for (int& v : py) v = perm[v];
    CHECK(per(x, y) == doctest::Approx(per(px, py)));
  }
}

TEST_CASE("speaker PER is micro-averaged") {
  std::vector<ScoredUtterance> rows;
  // distance 1 over length 2 plus distance 1 over length 8 -> 2/10
  rows.push_back({"spk", {0, 1}, {0, 2}});
  rows.push_back({"spk", {0, 1, 2, 3, 0, 1, 2, 3}, {0, 1, 2, 3, 0, 1, 2, 2}});
  const auto per_map = per_speaker_per(rows);
  REQUIRE(per_map.size() == 1);
  CHECK(per_map.at("spk") == doctest::Approx(0.2));

  std::vector<ScoredUtterance> single = {{"a", {0, 1}, {0, 1}}};
  CHECK(per_speaker_per(single).at("a") == 0.0);
}

TEST_CASE("select extremes") {
  const std::map<std::string, double> per_map = {
      {"s1", 0.1}, {"s2", 0.2}, {"s3", 0.3}, {"s4", 0.4}};
  const auto [top, bottom] = select_extremes(per_map, 1);
  CHECK(top == std::vector<std::string>{"s4"});
  CHECK(bottom == std::vector<std::string>{"s1"});

  SUBCASE("boundary tie goes to the smaller id") {
    const std::map<std::string, double> tied = {{"a", 0.5}, {"b", 0.5}, {"c", 0.1}};
    const auto [t, b] = select_extremes(tied, 1);
    CHECK(t == std::vector<std::string>{"a"});
    CHECK(b == std::vector<std::string>{"c"});
  }
  SUBCASE("k too large") {
    CHECK_THROWS_AS(select_extremes(per_map, 3), ConfigError);
  }
}

TEST_CASE("pearson on the worked examples") {
  CHECK(*pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(*pearson({1, 2, 3}, {-1, -2, -3}) == doctest::Approx(-1.0));
  CHECK(*pearson({1, 2, 3}, {6, 4, 5}) == doctest::Approx(-0.5));
  CHECK_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), DataError);
}

TEST_CASE("pearson is affine-equivariant in sign") {
  Rng rng(66);
  std::vector<double> x(10), y(10);
  for (int i = 0; i < 10; ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
  }
  const double r = *pearson(x, y);
  for (double a : {2.5, -0.3}) {
    std::vector<double> ax(10);
    for (int i = 0; i < 10; ++i) ax[i] = a * x[i] + 7.0;
    CHECK(*pearson(ax, y) == doctest::Approx((a > 0 ? 1.0 : -1.0) * r).epsilon(1e-9));
  }
}

TEST_CASE("pearson p-value sanity") {
  CHECK(pearson_p_value(0.0, 20) == doctest::Approx(1.0));
  CHECK(pearson_p_value(1.0, 20) == doctest::Approx(0.0));
  // strong correlation on 20 points is very significant
  CHECK(pearson_p_value(-0.84, 20) < 1e-4);
  // same r, fewer points, weaker evidence
  CHECK(pearson_p_value(-0.84, 5) > pearson_p_value(-0.84, 20));
}
