#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "docrl/text.hpp"

namespace docrl {

// Sparse embedding: bucket -> value.
using SparseVector = std::map<size_t, double>;

inline double dot(const SparseVector& a, const SparseVector& b) {
  double s = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      s += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  return s;
}

inline double norm(const SparseVector& a) { return std::sqrt(dot(a, a)); }

// Sentence encoder interface behind the semantic reward and the question
// embedding. Implementations must be deterministic.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual SparseVector encode(std::string_view s) const = 0;
  virtual size_t dim() const = 0;
  virtual std::string name() const = 0;
};

// Hashed character-trigram counts, L2-normalized. enc("") is the zero vector.
class StandInEncoder final : public SentenceEncoder {
 public:
  static constexpr size_t kDefaultHashDim = 65536;

  explicit StandInEncoder(size_t hash_dim = kDefaultHashDim) : hash_dim_(hash_dim) {
    if (hash_dim == 0) throw std::invalid_argument("StandInEncoder: hash_dim must be positive");
  }

  SparseVector encode(std::string_view s) const override {
    SparseVector v = text::trigram_counts(s, hash_dim_);
    const double n = norm(v);
    if (n > 0.0) {
      for (auto& [k, x] : v) x /= n;
    }
    return v;
  }

  size_t dim() const override { return hash_dim_; }
  std::string name() const override { return "trigram-hash"; }

 private:
  size_t hash_dim_;
};

// cosine(u, v), defined as 0 when either vector is zero.
inline double cosine(const SparseVector& u, const SparseVector& v) {
  const double nu = norm(u), nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot(u, v) / (nu * nv);
}

}  // namespace docrl
