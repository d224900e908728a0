#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gril/errors.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/numerics/tensor.hpp"

namespace gril {

enum class EmbeddingKind { entity, relation, question };

namespace detail {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double unit_open(std::uint64_t& state) {
  // (0, 1), never exactly 0.
  return (static_cast<double>(splitmix64(state) >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

}  // namespace detail

// Deterministic N(0, 1/d) vector keyed by `token`. Platform independent:
// FNV-1a seeds splitmix64, Box-Muller produces the normals.
inline Tensor hash_vector(std::string_view token, std::size_t dim, std::uint64_t salt = 0) {
  std::uint64_t state = detail::fnv1a(token, 1469598103934665603ULL ^ (salt * 0x9E3779B97F4A7C15ULL));
  Tensor v({dim});
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < dim; i += 2) {
    double u1 = detail::unit_open(state), u2 = detail::unit_open(state);
    double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = sd * r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < dim) v[i + 1] = sd * r * std::sin(2.0 * M_PI * u2);
  }
  return v;
}

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream ss{std::string(text)};
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

// Bag of hashed tokens, each contributing its plain vector plus a vector
// keyed by its position counted from the end of the text. The plain part
// lets relation vectors match question tokens; the positional part keeps
// order information.
inline Tensor hash_text_vector(std::string_view text, std::size_t dim, std::uint64_t salt = 0) {
  Tensor out({dim});
  auto toks = whitespace_tokens(text);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::size_t from_end = toks.size() - 1 - i;
    Tensor a = hash_vector(toks[i], dim, salt);
    Tensor b = hash_vector(toks[i] + "@" + std::to_string(from_end), dim, salt);
    for (std::size_t k = 0; k < dim; ++k) out[k] += a[k] + b[k];
  }
  return out;
}

// Entity, relation and question vectors. Two modes: hash-seeded pseudo-random
// vectors, or a precomputed table loaded from a file (`<count> <dim>` header,
// then `<name> <dim floats>` per line).
class EmbeddingProvider {
 public:
  static EmbeddingProvider hashed(std::size_t dim, std::uint64_t salt = 0) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
    EmbeddingProvider p;
    p.dim_ = dim;
    p.salt_ = salt;
    return p;
  }

  static EmbeddingProvider from_stream(std::istream& in) {
    EmbeddingProvider p;
    p.file_mode_ = true;
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError(1, "missing embedding header");
    std::size_t count = 0;
    {
      std::istringstream hs(line);
      if (!(hs >> count >> p.dim_) || p.dim_ == 0) throw ParseError(1, "header must be '<count> <dim>'");
    }
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::blank(line)) continue;
      std::istringstream ls(line);
      std::string name;
      ls >> name;
      std::vector<double> vals;
      double x;
      while (ls >> x) vals.push_back(x);
      if (!ls.eof()) throw ParseError(lineno, "non-numeric embedding value");
      if (vals.size() != p.dim_) {
        throw ParseError(lineno, "expected " + std::to_string(p.dim_) + " values, got " + std::to_string(vals.size()));
      }
      Tensor t = Tensor::vector(std::move(vals));
      if (!t.all_finite()) throw ParseError(lineno, "non-finite embedding value");
      p.table_[name] = std::move(t);
    }
    if (p.table_.size() != count) {
      throw DataError("embedding file declares " + std::to_string(count) + " rows but has " + std::to_string(p.table_.size()));
    }
    return p;
  }

  static EmbeddingProvider from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file " + path.string());
    return from_stream(in);
  }

  std::size_t dim() const noexcept { return dim_; }
  bool file_mode() const noexcept { return file_mode_; }

  // Vector for a named entity/relation, or for question text.
  Tensor embed(EmbeddingKind kind, const std::string& key) const {
    if (file_mode_) {
      if (auto it = table_.find(key); it != table_.end()) return it->second;
      if (kind != EmbeddingKind::question) throw LookupError("no embedding for '" + key + "'");
      return text_from_table(key);
    }
    if (kind == EmbeddingKind::question) return hash_text_vector(key, dim_, salt_);
    return hash_vector(key, dim_, salt_);
  }

  Tensor entity(const KnowledgeGraph& g, EntityId e) const { return embed(EmbeddingKind::entity, g.entity_name(e)); }
  Tensor relation(const KnowledgeGraph& g, RelationId r) const { return embed(EmbeddingKind::relation, g.relation_name(r)); }
  Tensor question(const std::string& text) const { return embed(EmbeddingKind::question, text); }

 private:
  // Questions absent from the table: mean of the known token rows.
  Tensor text_from_table(const std::string& text) const {
    Tensor out({dim_});
    std::size_t n = 0;
    for (const auto& tok : whitespace_tokens(text)) {
      auto it = table_.find(tok);
      if (it == table_.end()) continue;
      for (std::size_t k = 0; k < dim_; ++k) out[k] += it->second[k];
      ++n;
    }
    if (n > 0)
      for (auto& v : out.values()) v /= static_cast<double>(n);
    return out;
  }

  std::size_t dim_ = 0;
  std::uint64_t salt_ = 0;
  bool file_mode_ = false;
  std::unordered_map<std::string, Tensor> table_;
};

// Entity and relation vectors of one graph, resolved once.
struct GraphEmbeddings {
  std::vector<Tensor> entities;
  std::vector<Tensor> relations;
  std::size_t dim = 0;

  static GraphEmbeddings build(const KnowledgeGraph& g, const EmbeddingProvider& p) {
    GraphEmbeddings out;
    out.dim = p.dim();
    out.entities.reserve(g.num_entities());
    for (EntityId e = 0; e < g.num_entities(); ++e) out.entities.push_back(p.entity(g, e));
    out.relations.reserve(g.num_relations());
    for (RelationId r = 0; r < g.num_relations(); ++r) out.relations.push_back(p.relation(g, r));
    return out;
  }
};

}  // namespace gril
