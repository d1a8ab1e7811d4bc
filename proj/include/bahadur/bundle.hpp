#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bahadur/linalg.hpp"
#include "bahadur/rng.hpp"

namespace bahadur {

// Any operation enumerating all 2^M outcomes refuses beyond this.
inline constexpr int kEnumerationGuardM = 25;

// Bijection between coefficient positions l in [p], p = 2^M - M - 1, and
// outcome subsets of size >= 2. Canonical order: ascending cardinality,
// then lexicographic within cardinality. Coordinates are 0-based.
struct BundleIndex {
  int M = 0;
  std::vector<std::vector<int>> table;       // subsets, canonical order
  std::vector<std::uint32_t> masks;          // bitmask form, aligned with table

  static BundleIndex make(int M) {
    if (M < 1 || M > 30) throw std::invalid_argument("BundleIndex: M out of range");
    BundleIndex idx;
    idx.M = M;
    for (int k = 2; k <= M; ++k) {
      // combinations of size k in lexicographic order
      std::vector<int> c(k);
      for (int i = 0; i < k; ++i) c[i] = i;
      while (true) {
        idx.table.push_back(c);
        std::uint32_t m = 0;
        for (int v : c) m |= (1u << v);
        idx.masks.push_back(m);
        int i = k - 1;
        while (i >= 0 && c[i] == M - k + i) --i;
        if (i < 0) break;
        ++c[i];
        for (int j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
      }
    }
    return idx;
  }

  int p() const { return static_cast<int>(table.size()); }

  const std::vector<int>& subset_of(int l) const { return table[l]; }

  int index_of(const std::vector<int>& subset) const {
    std::uint32_t m = 0;
    for (int v : subset) m |= (1u << v);
    for (int l = 0; l < p(); ++l)
      if (masks[l] == m) return l;
    throw std::invalid_argument("BundleIndex::index_of: subset not found");
  }
};

inline void check_interior(const Vec& alpha) {
  for (double a : alpha)
    if (!(a > 0.0 && a < 1.0)) throw std::domain_error("marginal probability not strictly in (0,1)");
}

// z_j = (y_j - alpha_j) / sqrt(alpha_j (1 - alpha_j))
inline Vec standardized_outcome(const std::vector<int>& y, const Vec& alpha) {
  if (y.size() != alpha.size()) throw std::invalid_argument("standardized_outcome: dimension mismatch");
  check_interior(alpha);
  Vec z(y.size());
  for (size_t j = 0; j < y.size(); ++j)
    z[j] = (static_cast<double>(y[j]) - alpha[j]) / std::sqrt(alpha[j] * (1.0 - alpha[j]));
  return z;
}

inline void w_vector_from_z(const Vec& z, const BundleIndex& index, double* out) {
  for (int l = 0; l < index.p(); ++l) {
    double prod = 1.0;
    for (int m : index.table[l]) prod *= z[m];
    out[l] = prod;
  }
}

// W_l = prod_{m in bundle l} z_m(y, alpha)
inline Vec w_vector(const std::vector<int>& y, const Vec& alpha, const BundleIndex& index) {
  if (static_cast<int>(y.size()) != index.M || y.size() != alpha.size())
    throw std::invalid_argument("w_vector: dimension mismatch");
  Vec z = standardized_outcome(y, alpha);
  Vec w(index.p());
  w_vector_from_z(z, index, w.data());
  return w;
}

// (alpha, r) pair representing a pmf over {0,1}^M via the expansion
// p(y) = (1 + W(alpha,y)'r) prod_j alpha_j^{y_j} (1-alpha_j)^{1-y_j}.
struct JointModel {
  Vec alpha;
  Vec r;
  BundleIndex index;

  static JointModel make(Vec alpha, Vec r) {
    JointModel m;
    m.index = BundleIndex::make(static_cast<int>(alpha.size()));
    if (static_cast<int>(r.size()) != m.index.p())
      throw std::invalid_argument("JointModel: r length must be 2^M - M - 1");
    check_interior(alpha);
    m.alpha = std::move(alpha);
    m.r = std::move(r);
    return m;
  }
};

// Outcome codes use binary counting with coordinate 1 (index 0) as the least
// significant bit.
inline std::vector<int> decode_outcome(std::uint32_t code, int M) {
  std::vector<int> y(M);
  for (int j = 0; j < M; ++j) y[j] = (code >> j) & 1u;
  return y;
}

inline std::uint32_t encode_outcome(const std::vector<int>& y) {
  std::uint32_t c = 0;
  for (size_t j = 0; j < y.size(); ++j)
    if (y[j]) c |= (1u << j);
  return c;
}

inline double product_pmf(const std::vector<int>& y, const Vec& alpha) {
  double p = 1.0;
  for (size_t j = 0; j < y.size(); ++j) p *= y[j] ? alpha[j] : (1.0 - alpha[j]);
  return p;
}

// May return a negative value when (alpha, r) is outside the valid set K;
// validation is a separate explicit step.
inline double pmf(const JointModel& model, const std::vector<int>& y) {
  Vec w = w_vector(y, model.alpha, model.index);
  return (1.0 + dot(w, model.r)) * product_pmf(y, model.alpha);
}

inline void require_enumeration(int M) {
  if (M > kEnumerationGuardM) throw std::invalid_argument("2^M enumeration guard exceeded (M > 25)");
}

inline Vec pmf_table(const JointModel& model) {
  const int M = model.index.M;
  require_enumeration(M);
  Vec table(1u << M);
  for (std::uint32_t c = 0; c < table.size(); ++c) table[c] = pmf(model, decode_outcome(c, M));
  return table;
}

// Recovers (alpha, r) from a full pmf table: alpha_j = P(Y_j = 1),
// r_l = E[W_l(Y, alpha)]. Exact inverse of pmf_table on valid models.
inline std::pair<Vec, Vec> extract_r0(const Vec& table, const BundleIndex& index) {
  const int M = index.M;
  require_enumeration(M);
  if (table.size() != (1u << M)) throw std::invalid_argument("extract_r0: table size must be 2^M");
  double total = 0.0;
  for (double p : table) {
    if (p < -1e-12) throw std::invalid_argument("extract_r0: negative probability");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-8) throw std::invalid_argument("extract_r0: probabilities do not sum to 1");
  Vec alpha(M, 0.0);
  for (std::uint32_t c = 0; c < table.size(); ++c)
    for (int j = 0; j < M; ++j)
      if ((c >> j) & 1u) alpha[j] += table[c];
  check_interior(alpha);
  Vec r(index.p(), 0.0);
  for (std::uint32_t c = 0; c < table.size(); ++c) {
    Vec w = w_vector(decode_outcome(c, M), alpha, index);
    for (int l = 0; l < index.p(); ++l) r[l] += table[c] * w[l];
  }
  return {alpha, r};
}

struct ValidityReport {
  bool valid = false;
  double min_value = 0.0;          // min_y 1 + W(alpha,y)'r
  std::vector<int> argmin_y;
};

// True iff 1 + W(alpha,y)'r >= 0 at every outcome (the set K condition).
inline ValidityReport validate_K(const Vec& alpha, const Vec& r, const BundleIndex& index) {
  require_enumeration(index.M);
  check_interior(alpha);
  ValidityReport rep;
  rep.min_value = std::numeric_limits<double>::infinity();
  for (std::uint32_t c = 0; c < (1u << index.M); ++c) {
    std::vector<int> y = decode_outcome(c, index.M);
    double f = 1.0 + dot(w_vector(y, alpha, index), r);
    if (f < rep.min_value) {
      rep.min_value = f;
      rep.argmin_y = y;
    }
  }
  rep.valid = rep.min_value >= 0.0;
  return rep;
}

// i.i.d. draws from the categorical distribution over the 2^M outcomes.
// Rows are outcomes; deterministic given seed.
inline std::vector<std::vector<int>> sample(const JointModel& model, int n, std::uint64_t seed) {
  ValidityReport rep = validate_K(model.alpha, model.r, model.index);
  if (!rep.valid) throw std::invalid_argument("sample: model pmf is negative at some outcome");
  Vec table = pmf_table(model);
  Vec cdf(table.size());
  double acc = 0.0;
  for (size_t c = 0; c < table.size(); ++c) {
    acc += std::max(table[c], 0.0);
    cdf[c] = acc;
  }
  Rng rng(seed);
  std::vector<std::vector<int>> Y;
  Y.reserve(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * acc;
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    std::uint32_t c = static_cast<std::uint32_t>(it - cdf.begin());
    if (c >= table.size()) c = static_cast<std::uint32_t>(table.size()) - 1;
    Y.push_back(decode_outcome(c, model.index.M));
  }
  return Y;
}

// Entry (l, m) = dW_l/dalpha_m: the product over the bundle with the m-th
// factor replaced by dz_m/dalpha_m; zero when m is not in the bundle.
inline Matrix gradient_w_alpha(const std::vector<int>& y, const Vec& alpha, const BundleIndex& index) {
  check_interior(alpha);
  const int M = index.M;
  Vec z = standardized_outcome(y, alpha);
  Vec dz(M);
  for (int m = 0; m < M; ++m) {
    double s = std::sqrt(alpha[m] * (1.0 - alpha[m]));
    dz[m] = -(1.0 + z[m] * (1.0 - 2.0 * alpha[m]) / (2.0 * s)) / s;
  }
  Matrix g(index.p(), M);
  for (int l = 0; l < index.p(); ++l) {
    for (int m : index.table[l]) {
      double prod = dz[m];
      for (int k : index.table[l])
        if (k != m) prod *= z[k];
      g(l, m) = prod;
    }
  }
  return g;
}

// n x p feature matrix with rows W(alpha, Y_i).
inline Matrix w_matrix(const std::vector<std::vector<int>>& Y, const Vec& alpha, const BundleIndex& index) {
  Matrix W(static_cast<int>(Y.size()), index.p());
  for (size_t i = 0; i < Y.size(); ++i) {
    Vec z = standardized_outcome(Y[i], alpha);
    w_vector_from_z(z, index, W.row(static_cast<int>(i)));
  }
  return W;
}

}  // namespace bahadur
