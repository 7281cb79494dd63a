#pragma once

// Affective game design pattern catalog: annotated pattern nodes with typed
// relations, rule validation, closure under instantiation and recommendation.
//
// File format (line oriented, '#' starts a comment line):
//   V <version tag>
//   P <id> <name...>
//     A <arousal_effect> <valence_effect> <latency_lo_s> <latency_hi_s>
//     R <instantiates|modulates|conflicts> <target_id>
//     D <description...>

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "affloop/error.hpp"
#include "affloop/text.hpp"

namespace affloop {

enum class ArousalEffect { raise, lower, neutral };
enum class ValenceEffect { positive, negative, neutral };
enum class RelationKind { instantiates, modulates, conflicts };

inline std::string_view to_string(ArousalEffect a) {
  switch (a) {
    case ArousalEffect::raise: return "raise";
    case ArousalEffect::lower: return "lower";
    case ArousalEffect::neutral: return "neutral";
  }
  return "?";
}

inline std::string_view to_string(ValenceEffect v) {
  switch (v) {
    case ValenceEffect::positive: return "positive";
    case ValenceEffect::negative: return "negative";
    case ValenceEffect::neutral: return "neutral";
  }
  return "?";
}

inline std::string_view to_string(RelationKind r) {
  switch (r) {
    case RelationKind::instantiates: return "instantiates";
    case RelationKind::modulates: return "modulates";
    case RelationKind::conflicts: return "conflicts";
  }
  return "?";
}

struct AffectAnnotation {
  ArousalEffect arousal_effect = ArousalEffect::neutral;
  ValenceEffect valence_effect = ValenceEffect::neutral;
  double latency_lo_s = 0.0;
  double latency_hi_s = 0.0;
};

struct Relation {
  RelationKind kind = RelationKind::modulates;
  std::string target;
};

struct DesignPattern {
  std::string id;
  std::string name;
  std::string description;
  AffectAnnotation affect;
  std::vector<Relation> relations;

  [[nodiscard]] bool relates(RelationKind kind, const std::string& target) const {
    return std::any_of(relations.begin(), relations.end(),
                       [&](const Relation& r) { return r.kind == kind && r.target == target; });
  }
};

struct Catalog {
  std::string version;
  std::map<std::string, DesignPattern> patterns;  // ordered by id

  [[nodiscard]] bool contains(const std::string& id) const { return patterns.count(id) > 0; }
  [[nodiscard]] const DesignPattern& at(const std::string& id) const {
    auto it = patterns.find(id);
    if (it == patterns.end()) throw DataError("unknown pattern id '" + id + "'");
    return it->second;
  }
  /// Either side declares the conflict.
  [[nodiscard]] bool conflicting(const std::string& a, const std::string& b) const {
    return at(a).relates(RelationKind::conflicts, b) || at(b).relates(RelationKind::conflicts, a);
  }
};

struct Violation {
  std::string rule;
  std::vector<std::string> ids;
};

using PatternSet = std::set<std::string>;

/// Every rule broken by `cat`; empty iff the catalog is consistent.
inline std::vector<Violation> validate_catalog(const Catalog& cat) {
  std::vector<Violation> out;
  for (const auto& [id, p] : cat.patterns) {
    const auto& a = p.affect;
    if (!(a.latency_lo_s < a.latency_hi_s) || a.latency_lo_s < 0.0 || a.latency_hi_s > 30.0)
      out.push_back({"latency-window", {id}});
    for (const auto& r : p.relations) {
      if (r.target == id) {
        out.push_back({"self-relation", {id}});
        continue;
      }
      if (!cat.contains(r.target)) {
        out.push_back({"unresolved-target", {id, r.target}});
        continue;
      }
      if (r.kind == RelationKind::conflicts && !cat.at(r.target).relates(RelationKind::conflicts, id))
        out.push_back({"conflict-symmetry", {id, r.target}});
    }
  }

  // Cycles among instantiates edges, each reported once as the ids on the cycle.
  std::map<std::string, int> color;  // 0 white, 1 on stack, 2 done
  std::vector<std::string> stack;
  std::set<std::vector<std::string>> reported;
  std::function<void(const std::string&)> dfs = [&](const std::string& id) {
    color[id] = 1;
    stack.push_back(id);
    for (const auto& r : cat.at(id).relations) {
      if (r.kind != RelationKind::instantiates || r.target == id || !cat.contains(r.target)) continue;
      if (color[r.target] == 1) {
        auto from = std::find(stack.begin(), stack.end(), r.target);
        std::vector<std::string> cycle(from, stack.end());
        std::sort(cycle.begin(), cycle.end());
        if (reported.insert(cycle).second) out.push_back({"instantiates-cycle", cycle});
      } else if (color[r.target] == 0) {
        dfs(r.target);
      }
    }
    stack.pop_back();
    color[id] = 2;
  };
  for (const auto& [id, p] : cat.patterns)
    if (color[id] == 0) dfs(id);
  return out;
}

inline std::string describe(const Violation& v) {
  std::string s = v.rule;
  for (const auto& id : v.ids) s += " " + id;
  return s;
}

namespace detail {

inline ArousalEffect parse_arousal(std::string_view s, std::size_t lineno) {
  if (s == "raise") return ArousalEffect::raise;
  if (s == "lower") return ArousalEffect::lower;
  if (s == "neutral") return ArousalEffect::neutral;
  throw ParseError(lineno, "unknown arousal effect '" + std::string(s) + "'");
}

inline ValenceEffect parse_valence(std::string_view s, std::size_t lineno) {
  if (s == "positive") return ValenceEffect::positive;
  if (s == "negative") return ValenceEffect::negative;
  if (s == "neutral") return ValenceEffect::neutral;
  throw ParseError(lineno, "unknown valence effect '" + std::string(s) + "'");
}

inline RelationKind parse_relation(std::string_view s, std::size_t lineno) {
  if (s == "instantiates") return RelationKind::instantiates;
  if (s == "modulates") return RelationKind::modulates;
  if (s == "conflicts") return RelationKind::conflicts;
  throw ParseError(lineno, "unknown relation kind '" + std::string(s) + "'");
}

inline std::string join_rest(const std::vector<std::string_view>& f, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < f.size(); ++i) {
    if (i > from) out += ' ';
    out += f[i];
  }
  return out;
}

}  // namespace detail

/// Parses without rule validation. Duplicate ids and structural problems are parse errors.
inline Catalog parse_catalog(std::string_view bytes) {
  Catalog cat;
  DesignPattern* cur = nullptr;
  std::set<std::string> annotated;
  std::map<std::string, std::size_t> defined_at;
  text::for_each_line(bytes, [&](std::size_t lineno, std::string_view line) {
    auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') return;
    auto f = text::split_ws(trimmed);
    if (f[0] == "V") {
      if (f.size() != 2) throw ParseError(lineno, "version line needs one tag");
      cat.version = std::string(f[1]);
      return;
    }
    if (f[0] == "P") {
      if (f.size() < 3) throw ParseError(lineno, "pattern line needs id and name");
      std::string id(f[1]);
      if (id.find(',') != std::string::npos) throw ParseError(lineno, "pattern id may not contain ','");
      if (defined_at.count(id)) throw ParseError(lineno, "duplicate pattern id '" + id + "'");
      defined_at[id] = lineno;
      DesignPattern p;
      p.id = id;
      p.name = detail::join_rest(f, 2);
      cur = &cat.patterns.emplace(id, std::move(p)).first->second;
      return;
    }
    if (!cur) throw ParseError(lineno, "'" + std::string(f[0]) + "' line before any pattern");
    if (f[0] == "A") {
      if (f.size() != 5) throw ParseError(lineno, "annotation needs arousal, valence, latency lo, latency hi");
      if (!annotated.insert(cur->id).second) throw ParseError(lineno, "second annotation for " + cur->id);
      auto lo = text::to_double(f[3]);
      auto hi = text::to_double(f[4]);
      if (!lo || !hi) throw ParseError(lineno, "bad latency");
      cur->affect = {detail::parse_arousal(f[1], lineno), detail::parse_valence(f[2], lineno), *lo, *hi};
    } else if (f[0] == "R") {
      if (f.size() != 3) throw ParseError(lineno, "relation needs kind and target");
      cur->relations.push_back({detail::parse_relation(f[1], lineno), std::string(f[2])});
    } else if (f[0] == "D") {
      if (!cur->description.empty()) cur->description += ' ';
      cur->description += detail::join_rest(f, 1);
    } else {
      throw ParseError(lineno, "unknown line kind '" + std::string(f[0]) + "'");
    }
  });
  for (const auto& [id, p] : cat.patterns)
    if (!annotated.count(id)) throw ParseError(defined_at[id], "pattern " + id + " has no A line");
  return cat;
}

/// Parse and validate; any violation is a DataError listing all of them.
inline Catalog load_catalog(std::string_view bytes) {
  Catalog cat = parse_catalog(bytes);
  auto violations = validate_catalog(cat);
  if (!violations.empty()) {
    std::string msg = "catalog validation failed:";
    for (const auto& v : violations) msg += "\n  " + describe(v);
    throw DataError(msg);
  }
  return cat;
}

inline std::string write_catalog(const Catalog& cat) {
  std::string out;
  if (!cat.version.empty()) out += "V " + cat.version + "\n";
  for (const auto& [id, p] : cat.patterns) {
    out += "P " + id + " " + p.name + "\n";
    out += "  A " + std::string(to_string(p.affect.arousal_effect)) + " " +
           std::string(to_string(p.affect.valence_effect)) + " " + text::shortest(p.affect.latency_lo_s) + " " +
           text::shortest(p.affect.latency_hi_s) + "\n";
    for (const auto& r : p.relations) out += "  R " + std::string(to_string(r.kind)) + " " + r.target + "\n";
    if (!p.description.empty()) out += "  D " + p.description + "\n";
  }
  return out;
}

struct EffectiveSet {
  PatternSet active;
  std::vector<std::pair<std::string, std::string>> conflict_pairs;  // (a, b) with a < b
};

/// Closure of `selected` under instantiates edges, plus the conflicts inside it.
inline EffectiveSet effective_set(const Catalog& cat, const PatternSet& selected) {
  EffectiveSet out;
  std::vector<std::string> todo;
  for (const auto& id : selected) {
    (void)cat.at(id);
    if (out.active.insert(id).second) todo.push_back(id);
  }
  while (!todo.empty()) {
    std::string id = std::move(todo.back());
    todo.pop_back();
    for (const auto& r : cat.at(id).relations)
      if (r.kind == RelationKind::instantiates && out.active.insert(r.target).second) todo.push_back(r.target);
  }
  for (auto a = out.active.begin(); a != out.active.end(); ++a)
    for (auto b = std::next(a); b != out.active.end(); ++b)
      if (cat.conflicting(*a, *b)) out.conflict_pairs.emplace_back(*a, *b);
  return out;
}

/// True when `id` conflicts with some member of `active`.
inline bool conflicts_with_any(const Catalog& cat, const std::string& id, const PatternSet& active) {
  return std::any_of(active.begin(), active.end(), [&](const std::string& a) { return cat.conflicting(id, a); });
}

/// Up to k patterns outside the effective set and compatible with it, ranked by
/// goal match, then whether they modulate an active pattern, then id.
inline std::vector<std::string> recommend(const Catalog& cat, const PatternSet& selected, ArousalEffect goal,
                                          std::size_t k) {
  if (goal == ArousalEffect::neutral) throw UsageError("recommend: goal must be raise or lower");
  auto eff = effective_set(cat, selected);
  struct Ranked {
    bool matches;
    bool modulates;
    const std::string* id;
  };
  std::vector<Ranked> cands;
  for (const auto& [id, p] : cat.patterns) {
    if (eff.active.count(id) || conflicts_with_any(cat, id, eff.active)) continue;
    bool mod = std::any_of(eff.active.begin(), eff.active.end(),
                           [&](const std::string& a) { return p.relates(RelationKind::modulates, a); });
    cands.push_back({p.affect.arousal_effect == goal, mod, &id});
  }
  std::sort(cands.begin(), cands.end(), [](const Ranked& a, const Ranked& b) {
    if (a.matches != b.matches) return a.matches;
    if (a.modulates != b.modulates) return a.modulates;
    return *a.id < *b.id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cands.size() && i < k; ++i) out.push_back(*cands[i].id);
  return out;
}

/// The shipped seed catalog (also installed as data/seed_catalog.txt).
inline std::string_view seed_catalog_text() {
  return R"(# Affective game design patterns: seed catalog.
# Annotations give the expected arousal and valence effect of a pattern's
# game events and the latency window (seconds) of the expected response.
V seed-1

P collecting Collecting
  A neutral positive 1 6
  R instantiates pick-ups
  D Gathering in-game objects as a goal of play.

P competition Competition
  A raise negative 1 6
  R conflicts cooperation
  R modulates enemies
  D Players or agents strive against each other for a shared goal.

P cooperation Cooperation
  A lower positive 2 10
  R conflicts competition
  D Players or agents work together toward a shared goal.

P enemies Enemies
  A raise negative 1 4
  R modulates time-limit
  D Hostile agents appear and threaten the player.

P imperfect-information Imperfect Information
  A raise negative 2 8
  R conflicts perfect-information
  D Parts of the game state are hidden from the player.

P indirect-information Indirect Information
  A raise negative 2 8
  R instantiates imperfect-information
  R modulates time-limit
  D Game state such as time or score is shown only as a chart or description.

P perfect-information Perfect Information
  A lower positive 2 10
  R conflicts imperfect-information
  D The complete game state is visible to the player.

P pick-ups Pick-Ups
  A neutral positive 1 5
  D Objects in the game world that are collected by moving onto them.

P time-limit Time Limit
  A raise negative 1 6
  R modulates enemies
  D A visible countdown bounds the time available to finish a task.
)";
}

inline Catalog seed_catalog() { return load_catalog(seed_catalog_text()); }

}  // namespace affloop
