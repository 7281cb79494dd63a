#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "affloop/catalog.hpp"

using namespace affloop;

namespace {

std::vector<std::string> rules(const Catalog& c) {
  std::vector<std::string> out;
  for (const auto& v : validate_catalog(c)) out.push_back(describe(v));
  return out;
}

PatternSet subset(const std::vector<std::string>& ids, unsigned mask) {
  PatternSet s;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (mask & (1u << i)) s.insert(ids[i]);
  return s;
}

bool includes(const PatternSet& big, const PatternSet& small) {
  return std::includes(big.begin(), big.end(), small.begin(), small.end());
}

}  // namespace

TEST(SeedCatalog, NinePatternsAndValid) {
  auto cat = seed_catalog();
  EXPECT_EQ(cat.patterns.size(), 9u);
  EXPECT_TRUE(validate_catalog(cat).empty());
  for (const char* id : {"collecting", "competition", "cooperation", "enemies", "imperfect-information",
                         "indirect-information", "perfect-information", "pick-ups", "time-limit"})
    EXPECT_TRUE(cat.contains(id)) << id;
  EXPECT_EQ(cat.at("enemies").affect.arousal_effect, ArousalEffect::raise);
  EXPECT_EQ(cat.at("pick-ups").affect.arousal_effect, ArousalEffect::neutral);
  EXPECT_EQ(cat.at("cooperation").affect.arousal_effect, ArousalEffect::lower);
}

TEST(SeedCatalog, ShippedFileMatchesBuiltIn) {
  std::ifstream in(std::string(AFFLOOP_SOURCE_DIR) + "/data/seed_catalog.txt");
  ASSERT_TRUE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), seed_catalog_text());
}

TEST(SeedCatalog, WriteParseRoundTrip) {
  auto cat = seed_catalog();
  auto text = write_catalog(cat);
  auto back = load_catalog(text);
  EXPECT_EQ(write_catalog(back), text);
  EXPECT_EQ(back.version, cat.version);
  EXPECT_EQ(back.at("collecting").description, cat.at("collecting").description);
}

TEST(LoadCatalog, EmptyIsValid) {
  auto cat = load_catalog("");
  EXPECT_TRUE(cat.patterns.empty());
  EXPECT_TRUE(validate_catalog(cat).empty());
}

TEST(LoadCatalog, DuplicateIdNamesIt) {
  try {
    load_catalog("P a A\n  A raise neutral 1 2\nP a Again\n  A raise neutral 1 2\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(LoadCatalog, StructuralErrors) {
  EXPECT_THROW(load_catalog("A raise neutral 1 2\n"), ParseError);
  EXPECT_THROW(load_catalog("P a A\n"), ParseError);
  EXPECT_THROW(load_catalog("P a A\n  A up neutral 1 2\n"), ParseError);
  EXPECT_THROW(load_catalog("P a A\n  A raise neutral 1 2\n  R suppresses b\n"), ParseError);
  EXPECT_THROW(load_catalog("P a A\n  A raise neutral 1 2\n  Q x\n"), ParseError);
  EXPECT_THROW(load_catalog("P a,b A\n  A raise neutral 1 2\n"), ParseError);
}

TEST(LoadCatalog, RuleViolationsAreDataErrors) {
  EXPECT_THROW(load_catalog("P a A\n  A raise neutral 3 2\n"), DataError);
}

TEST(ValidateCatalog, OneWayConflict) {
  auto cat = parse_catalog(
      "P a A\n  A raise neutral 1 2\n  R conflicts b\n"
      "P b B\n  A raise neutral 1 2\n");
  EXPECT_EQ(rules(cat), std::vector<std::string>{"conflict-symmetry a b"});
}

TEST(ValidateCatalog, InstantiatesCycle) {
  auto cat = parse_catalog(
      "P a A\n  A raise neutral 1 2\n  R instantiates b\n"
      "P b B\n  A raise neutral 1 2\n  R instantiates a\n");
  EXPECT_EQ(rules(cat), std::vector<std::string>{"instantiates-cycle a b"});
}

TEST(ValidateCatalog, LongerCycleReportedOnce) {
  auto cat = parse_catalog(
      "P a A\n  A raise neutral 1 2\n  R instantiates b\n"
      "P b B\n  A raise neutral 1 2\n  R instantiates c\n"
      "P c C\n  A raise neutral 1 2\n  R instantiates a\n");
  EXPECT_EQ(rules(cat), std::vector<std::string>{"instantiates-cycle a b c"});
}

TEST(ValidateCatalog, OtherRules) {
  auto cat = parse_catalog(
      "P a A\n  A raise neutral 2 2\n  R modulates a\n  R modulates zz\n"
      "P b B\n  A lower positive 0 31\n");
  EXPECT_EQ(rules(cat), (std::vector<std::string>{"latency-window a", "self-relation a", "unresolved-target a zz",
                                                  "latency-window b"}));
}

TEST(EffectiveSet, Examples) {
  auto cat = seed_catalog();
  EXPECT_TRUE(effective_set(cat, {}).active.empty());
  EXPECT_EQ(effective_set(cat, {"collecting"}).active, (PatternSet{"collecting", "pick-ups"}));
  auto e = effective_set(cat, {"perfect-information", "imperfect-information"});
  ASSERT_EQ(e.conflict_pairs.size(), 1u);
  EXPECT_EQ(e.conflict_pairs[0], std::make_pair(std::string("imperfect-information"), std::string("perfect-information")));
  EXPECT_THROW(effective_set(cat, {"nope"}), DataError);
}

TEST(EffectiveSet, TransitiveClosure) {
  auto cat = seed_catalog();
  auto e = effective_set(cat, {"indirect-information"});
  EXPECT_TRUE(e.active.count("imperfect-information"));
}

TEST(Recommend, Examples) {
  auto cat = seed_catalog();
  auto r = recommend(cat, {"time-limit"}, ArousalEffect::raise, 9);
  auto pos = [&](const std::string& id) { return std::find(r.begin(), r.end(), id) - r.begin(); };
  ASSERT_NE(pos("enemies"), static_cast<long>(r.size()));
  EXPECT_LT(pos("enemies"), pos("pick-ups"));
  EXPECT_TRUE(recommend(cat, {"enemies", "time-limit", "competition", "collecting", "pick-ups",
                              "imperfect-information", "indirect-information"},
                        ArousalEffect::raise, 3)
                  .empty());
  EXPECT_THROW(recommend(cat, {}, ArousalEffect::neutral, 3), UsageError);
}

TEST(Recommend, ModulationRanksWithinGoal) {
  auto cat = seed_catalog();
  // enemies and indirect-information both modulate time-limit; with time-limit active they lead the raise group.
  auto r = recommend(cat, {"time-limit"}, ArousalEffect::raise, 2);
  EXPECT_EQ(r, (std::vector<std::string>{"enemies", "indirect-information"}));
}

TEST(Recommend, NoMatchFallsThroughToTieBreak) {
  auto cat = seed_catalog();
  auto r = recommend(cat, {"cooperation", "perfect-information"}, ArousalEffect::lower, 3);
  EXPECT_EQ(r.size(), 3u);
}

// Exhaustive over every subset of the seed catalog.
TEST(CatalogBruteForce, AllSubsets) {
  auto cat = seed_catalog();
  std::vector<std::string> ids;
  for (const auto& [id, p] : cat.patterns) ids.push_back(id);
  ASSERT_EQ(ids.size(), 9u);
  const unsigned n = 1u << ids.size();
  std::vector<PatternSet> eff(n);
  for (unsigned m = 0; m < n; ++m) eff[m] = effective_set(cat, subset(ids, m)).active;
  for (unsigned m = 0; m < n; ++m) {
    auto sel = subset(ids, m);
    EXPECT_TRUE(includes(eff[m], sel));
    EXPECT_EQ(effective_set(cat, eff[m]).active, eff[m]) << "idempotence at mask " << m;
    for (unsigned i = 0; i < ids.size(); ++i)
      if (!(m & (1u << i))) {
        EXPECT_TRUE(includes(eff[m | (1u << i)], eff[m])) << "monotonicity at mask " << m;
      }
    for (auto goal : {ArousalEffect::raise, ArousalEffect::lower}) {
      auto r = recommend(cat, sel, goal, 9);
      EXPECT_EQ(r, recommend(cat, sel, goal, 9));
      for (const auto& id : r) {
        EXPECT_FALSE(eff[m].count(id));
        EXPECT_FALSE(conflicts_with_any(cat, id, eff[m])) << id << " at mask " << m;
      }
      auto r3 = recommend(cat, sel, goal, 3);
      EXPECT_EQ(r3, std::vector<std::string>(r.begin(), r.begin() + static_cast<long>(std::min<std::size_t>(3, r.size()))));
    }
  }
}
