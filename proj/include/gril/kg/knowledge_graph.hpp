#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <cctype>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gril/errors.hpp"

namespace gril {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using TripleId = std::uint32_t;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;

  // The endpoint opposite to `e`; for a self-loop this is `e` itself.
  EntityId other(EntityId e) const { return e == head ? tail : head; }
};

// Bidirectional string <-> dense id table.
class Vocabulary {
 public:
  std::uint32_t intern(const std::string& name) {
    auto [it, inserted] = ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }
  std::optional<std::uint32_t> find(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name(std::uint32_t id) const {
    if (id >= names_.size()) throw LookupError("unknown id " + std::to_string(id));
    return names_[id];
  }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> names_;
};

// Immutable-after-build triple store with a per-entity incidence index.
class KnowledgeGraph {
 public:
  EntityId add_entity(const std::string& name) {
    EntityId id = entities_.intern(name);
    if (adjacency_.size() < entities_.size()) adjacency_.resize(entities_.size());
    return id;
  }
  RelationId add_relation(const std::string& name) { return relations_.intern(name); }

  // Returns false (and counts a duplicate) when the triple is already stored.
  bool add_triple(const std::string& head, const std::string& relation, const std::string& tail) {
    EntityId h = add_entity(head);
    RelationId r = add_relation(relation);
    EntityId t = add_entity(tail);
    return add_triple(Triple{h, r, t});
  }

  bool add_triple(Triple tr) {
    if (tr.head >= entities_.size() || tr.tail >= entities_.size() || tr.relation >= relations_.size()) {
      throw LookupError("triple references an unknown id");
    }
    if (!seen_.insert(std::make_tuple(tr.head, tr.relation, tr.tail)).second) {
      ++duplicates_;
      return false;
    }
    TripleId id = static_cast<TripleId>(triples_.size());
    triples_.push_back(tr);
    adjacency_[tr.head].push_back(id);
    if (tr.tail != tr.head) adjacency_[tr.tail].push_back(id);
    return true;
  }

  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  std::size_t num_triples() const noexcept { return triples_.size(); }
  std::size_t duplicate_count() const noexcept { return duplicates_; }

  const Triple& triple(TripleId id) const {
    if (id >= triples_.size()) throw LookupError("unknown triple id " + std::to_string(id));
    return triples_[id];
  }
  const std::vector<Triple>& triples() const noexcept { return triples_; }

  // Incident triple ids of `e`, ascending.
  const std::vector<TripleId>& incident(EntityId e) const {
    if (e >= adjacency_.size()) throw LookupError("unknown entity id " + std::to_string(e));
    return adjacency_[e];
  }

  const std::string& entity_name(EntityId e) const { return entities_.name(e); }
  const std::string& relation_name(RelationId r) const { return relations_.name(r); }
  std::optional<EntityId> find_entity(const std::string& name) const { return entities_.find(name); }
  std::optional<RelationId> find_relation(const std::string& name) const { return relations_.find(name); }
  EntityId entity_id(const std::string& name) const {
    auto id = entities_.find(name);
    if (!id) throw LookupError("unknown entity '" + name + "'");
    return *id;
  }
  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }

  bool contains(EntityId e) const noexcept { return e < entities_.size(); }

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::vector<std::vector<TripleId>> adjacency_;
  std::set<std::tuple<EntityId, RelationId, EntityId>> seen_;
  std::size_t duplicates_ = 0;
};

enum class TripleFormat { tsv, jsonl };

inline TripleFormat triple_format_from_path(const std::filesystem::path& p) {
  return p.extension() == ".jsonl" ? TripleFormat::jsonl : TripleFormat::tsv;
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  if (line.find('\t') != std::string::npos) {
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, '\t')) out.push_back(cur);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
  } else {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
  }
  return out;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

// Reads triples in file order. Tab-separated lines are split on tabs;
// lines without tabs fall back to whitespace splitting.
inline KnowledgeGraph ingest_triples(std::istream& in, TripleFormat format) {
  KnowledgeGraph g;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    std::string h, r, t;
    if (format == TripleFormat::tsv) {
      auto f = detail::split_fields(line);
      if (f.size() != 3) throw ParseError(lineno, "expected 3 fields, got " + std::to_string(f.size()));
      h = f[0], r = f[1], t = f[2];
    } else {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw ParseError(lineno, "invalid JSON");
      }
      if (!j.is_object() || j.size() != 3 || !j.contains("head") || !j.contains("relation") || !j.contains("tail")) {
        throw ParseError(lineno, "expected object with exactly head, relation, tail");
      }
      if (!j["head"].is_string() || !j["relation"].is_string() || !j["tail"].is_string()) {
        throw ParseError(lineno, "head, relation and tail must be strings");
      }
      h = j["head"].get<std::string>(), r = j["relation"].get<std::string>(), t = j["tail"].get<std::string>();
    }
    if (h.empty() || r.empty() || t.empty()) throw ParseError(lineno, "empty field");
    g.add_triple(h, r, t);
  }
  return g;
}

inline KnowledgeGraph ingest_triples(const std::filesystem::path& path, TripleFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file " + path.string());
  return ingest_triples(in, format);
}

inline KnowledgeGraph ingest_triples(const std::filesystem::path& path) {
  return ingest_triples(path, triple_format_from_path(path));
}

inline void write_triples_tsv(const KnowledgeGraph& g, std::ostream& out) {
  for (const Triple& t : g.triples()) {
    out << g.entity_name(t.head) << '\t' << g.relation_name(t.relation) << '\t' << g.entity_name(t.tail) << '\n';
  }
}

inline void write_triples_jsonl(const KnowledgeGraph& g, std::ostream& out) {
  for (const Triple& t : g.triples()) {
    nlohmann::json j = {{"head", g.entity_name(t.head)}, {"relation", g.relation_name(t.relation)}, {"tail", g.entity_name(t.tail)}};
    out << j.dump() << '\n';
  }
}

// Every triple with at least one endpoint in `entity_set`, ascending and unique.
template <typename Range>
std::vector<TripleId> frontier_triples(const KnowledgeGraph& g, const Range& entity_set) {
  std::vector<TripleId> out;
  for (EntityId e : entity_set) {
    const auto& inc = g.incident(e);
    out.insert(out.end(), inc.begin(), inc.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace gril
