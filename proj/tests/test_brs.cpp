#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sdd/brs.hpp"
#include "support/fixtures.hpp"

using namespace sdd;

namespace {

// Every rule that instantiates only values seen together in some tuple.
std::vector<Rule> observed_rules(const Table& t) {
  std::vector<Rule> out;
  const std::size_t w = t.num_columns();
  for (std::size_t i = 0; i < t.num_rows(); ++i) {
    for (std::size_t mask = 1; mask < (std::size_t{1} << w); ++mask) {
      Rule r(w);
      for (std::size_t c = 0; c < w; ++c) {
        if (mask >> c & 1) r[c] = t.at(i, c);
      }
      if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
    }
  }
  return out;
}

double marginal_value(const Table& t, const std::vector<Rule>& solution, const Rule& r, const WeightFunction& w) {
  double mv = 0;
  for (std::size_t i = 0; i < t.num_rows(); ++i) {
    if (!covers(r, t.row(i))) continue;
    double top = 0;
    for (const auto& s : solution) {
      if (covers(s, t.row(i))) top = std::max(top, w(s));
    }
    mv += std::max(0.0, w(r) - top);
  }
  return mv;
}

// Exhaustive best marginal rule among admitted rules, same tie order.
std::optional<std::pair<Rule, double>> reference_best(const Table& t, const std::vector<Rule>& solution,
                                                      const WeightFunction& w, const DrillConstraint& constraint) {
  std::optional<std::pair<Rule, double>> best;
  for (const auto& r : observed_rules(t)) {
    if (!constraint.admits(r)) continue;
    double mv = marginal_value(t, solution, r, w);
    if (!best || mv > best->second || (mv == best->second && pattern_less(r, best->first))) best = {{r, mv}};
  }
  return best;
}

}  // namespace

TEST(FindBestMarginalRule, F1EmptySolutionPicksGeneralRule) {
  auto t = fixtures::fixture_f1();
  WeightFunction w({WeightKind::size}, t.columns());
  auto best = find_best_marginal_rule({}, DataView::of(t), 2, w, DrillConstraint::root(2));
  ASSERT_TRUE(best);
  EXPECT_EQ(best->rule, (Rule{0, kStar}));
  EXPECT_EQ(best->marginal_value, 1000);
  EXPECT_EQ(best->count, 1000);
}

TEST(FindBestMarginalRule, F1SecondPickIsB1) {
  auto t = fixtures::fixture_f1();
  WeightFunction w({WeightKind::size}, t.columns());
  std::vector<Rule> s{Rule{0, kStar}};
  auto best = find_best_marginal_rule(s, DataView::of(t), 2, w, DrillConstraint::root(2));
  ASSERT_TRUE(best);
  EXPECT_EQ(best->rule, (Rule{0, 0}));
  EXPECT_EQ(best->marginal_value, 100);
}

TEST(FindBestMarginalRule, MatchesExhaustiveReferenceOnRandomTables) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 150; ++trial) {
    auto t = fixtures::random_table(rng, 15, 4, 3);
    WeightFunction w({trial % 2 ? WeightKind::size : WeightKind::bits}, t.columns());
    auto view = DataView::of(t);
    std::vector<Rule> solution;
    for (int step = 0; step < 3; ++step) {
      SearchStats stats;
      stats.keep_trace = true;
      auto got = find_best_marginal_rule(solution, view, w.max_weight(), w, DrillConstraint::root(4), {}, &stats);
      auto want = reference_best(t, solution, w, DrillConstraint::root(4));
      ASSERT_EQ(got.has_value(), want.has_value());
      if (!got) break;
      ASSERT_EQ(got->marginal_value, want->second) << "trial " << trial;
      ASSERT_EQ(got->rule, want->first) << "trial " << trial;
      EXPECT_LE(stats.passes, 4u);
      for (const auto& e : stats.trace) {
        EXPECT_EQ(e.marginal_value, marginal_value(t, solution, e.rule, w));
        EXPECT_GE(e.upper_bound, e.marginal_value);
      }
      solution.push_back(got->rule);
    }
  }
}

TEST(FindBestMarginalRule, StarModeMatchesReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto t = fixtures::random_table(rng, 14, 4, 3);
    WeightFunction w({WeightKind::size}, t.columns());
    DrillConstraint c{Rule(4), static_cast<std::size_t>(trial % 4)};
    if (trial % 3 == 0) {
      std::size_t base_col = (trial + 1) % 4;
      c.base[base_col] = t.at(0, base_col);
    }
    std::vector<Rule> solution;
    for (int step = 0; step < 3; ++step) {
      auto got = find_best_marginal_rule(solution, DataView::of(t), w.max_weight(), w, c);
      auto want = reference_best(t, solution, w, c);
      ASSERT_EQ(got.has_value(), want.has_value());
      if (!got) break;
      ASSERT_EQ(got->rule, want->first);
      ASSERT_EQ(got->marginal_value, want->second);
      ASSERT_FALSE(got->rule.is_star(*c.star_column));
      solution.push_back(got->rule);
    }
  }
}

TEST(FindBestMarginalRule, StarModeRejectsInstantiatedColumn) {
  auto t = fixtures::fixture_f2();
  WeightFunction w({WeightKind::size}, t.columns());
  DrillConstraint c{Rule{0, kStar, kStar}, 0};
  try {
    find_best_marginal_rule({}, DataView::of(t), 3, w, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::column_instantiated);
  }
}

TEST(BestRuleSet, F2SingleRuleMaximizesWeightTimesCount) {
  auto t = fixtures::fixture_f2();
  auto view = DataView::of(t);
  for (auto kind : {WeightKind::size, WeightKind::bits, WeightKind::size_minus_one}) {
    WeightFunction w({kind}, t.columns());
    double best = 0;
    for (const auto& r : observed_rules(t)) best = std::max(best, w(r) * count(view, r));
    BrsOptions opt;
    opt.k = 1;
    opt.m_w = w.max_weight();
    auto got = best_rule_set(view, w, opt);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got.score, best);
    EXPECT_EQ(got.rules[0].weight * got.rules[0].count, best);
  }
}

TEST(BestRuleSet, StopsWhenNothingAddsValue) {
  // Two distinct tuples: after both full rules, nothing has positive value.
  auto t = fixtures::make_table({"A", "B"}, {{"a", "b"}, {"c", "d"}});
  WeightFunction w({WeightKind::size}, t.columns());
  BrsOptions opt;
  opt.k = 3;
  opt.m_w = 2;
  auto got = best_rule_set(DataView::of(t), w, opt);
  EXPECT_EQ(got.size(), 2u);
  EXPECT_EQ(got.score, 4);
}

TEST(BestRuleSet, EmptyDataGivesEmptyList) {
  auto t = fixtures::make_table({"A", "B"}, {});
  WeightFunction w({WeightKind::size}, t.columns());
  auto got = best_rule_set(DataView::of(t), w, {});
  EXPECT_TRUE(got.empty());
}

TEST(BestRuleSet, ListIsWeightSortedAndEmitsIncrementally) {
  std::mt19937_64 rng(9);
  auto t = fixtures::random_table(rng, 200, 5, 4);
  WeightFunction w({WeightKind::size}, t.columns());
  std::vector<Rule> emitted;
  BrsOptions opt;
  opt.k = 5;
  opt.m_w = 5;
  opt.emit = [&](const CandidateEntry& e) { emitted.push_back(e.rule); };
  auto got = best_rule_set(DataView::of(t), w, opt);
  ASSERT_EQ(got.size(), emitted.size());
  for (std::size_t i = 1; i < got.size(); ++i) EXPECT_GE(got.rules[i - 1].weight, got.rules[i].weight);
  for (const auto& e : got.rules) EXPECT_NE(std::find(emitted.begin(), emitted.end(), e.rule), emitted.end());

  auto again = best_rule_set(DataView::of(t), w, opt);
  ASSERT_EQ(again.size(), got.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(again.rules[i].rule, got.rules[i].rule);
    EXPECT_EQ(again.rules[i].marginal_count, got.rules[i].marginal_count);
  }
  EXPECT_EQ(again.score, got.score);
}

TEST(BestRuleSet, SumAggregateFavorsHeavyRows) {
  auto t = fixtures::make_table({"S", "P"}, {{"w", "c"}, {"w", "d"}, {"t", "e"}, {"t", "e"}},
                               {MeasureColumn{"Sales", {1, 1, 50, 50}}});
  WeightFunction w({WeightKind::size}, t.columns());
  BrsOptions opt;
  opt.k = 1;
  opt.m_w = 2;
  opt.aggregate = Aggregate::sum(0);
  auto got = best_rule_set(DataView::of(t), w, opt);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got.rules[0].rule, (Rule{1, 2}));
  EXPECT_EQ(*got.rules[0].sum, 100);

  auto neg = fixtures::make_table({"S"}, {{"w"}}, {MeasureColumn{"Sales", {-1}}});
  EXPECT_THROW(best_rule_set(DataView::of(neg), WeightFunction({WeightKind::size}, neg.columns()), opt), Error);
}

TEST(BestRuleSet, DrillReduceRestrictsToSuperRules) {
  std::mt19937_64 rng(21);
  auto t = fixtures::random_table(rng, 300, 4, 3);
  Rule base{1, kStar, kStar, kStar};
  auto red = drill_reduce(DataView::of(t), {WeightKind::size}, base, std::size_t{2});
  for (std::size_t i = 0; i < red.view.num_rows(); ++i) EXPECT_TRUE(covers(base, red.view.row(i)));
  EXPECT_EQ(static_cast<double>(red.view.num_rows()), count(DataView::of(t), base));
  WeightFunction w(red.config, t.columns());
  BrsOptions opt;
  opt.k = 3;
  opt.m_w = 4;
  opt.constraint = red.constraint;
  auto got = best_rule_set(red.view, w, opt);
  ASSERT_FALSE(got.empty());
  for (const auto& e : got.rules) {
    EXPECT_TRUE(is_subrule(base, e.rule));
    EXPECT_FALSE(e.rule.is_star(2));
  }
  auto identity = drill_reduce(DataView::of(t), {WeightKind::size}, Rule(4));
  EXPECT_EQ(identity.view.num_rows(), t.num_rows());
}

TEST(BruteForce, F2Oracles) {
  auto t = fixtures::fixture_f2();
  auto view = DataView::of(t);
  WeightFunction w({WeightKind::size}, t.columns());
  EXPECT_TRUE(brute_force_best_set(view, w, 0).empty());
  auto one = brute_force_best_set(view, w, 1);
  double best = 0;
  for (const auto& r : observed_rules(t)) best = std::max(best, w(r) * count(view, r));
  EXPECT_EQ(one.score, best);
  auto two = brute_force_best_set(view, w, 2);
  BrsOptions opt;
  opt.k = 2;
  opt.m_w = 3;
  EXPECT_GE(two.score, best_rule_set(view, w, opt).score);

  std::mt19937_64 rng(1);
  auto big = fixtures::random_table(rng, 2000, 6, 8);
  EXPECT_THROW(brute_force_best_set(DataView::of(big), WeightFunction({WeightKind::size}, big.columns()), 2), Error);
}

TEST(EstimateMw, DoublesLargestPickedWeight) {
  // Independent uniform columns: the best list is made of size-1 rules.
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 400; ++i) rows.push_back({std::to_string(i % 4), std::to_string((i / 4) % 4)});
  auto t = fixtures::make_table({"A", "B"}, rows);
  WeightFunction w({WeightKind::size}, t.columns());
  Rng rng(4);
  EXPECT_EQ(estimate_mw(DataView::of(t), w, 2, 100, rng), 2);
  EXPECT_THROW(estimate_mw(DataView::of(t), w, 2, 0, rng), Error);
}
