#include "pubflow/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pubflow/csv.hpp"
#include "pubflow/rng.hpp"

namespace pubflow {

std::string_view similarity_method_name(SimilarityMethod m) {
  switch (m) {
    case SimilarityMethod::Attributes: return "attributes";
    case SimilarityMethod::Fusion: return "fusion";
    case SimilarityMethod::Aef: return "aef";
    case SimilarityMethod::Custom: return "custom";
  }
  return "?";
}

SimilarityMethod parse_similarity_method(std::string_view name) {
  if (name == "attributes") return SimilarityMethod::Attributes;
  if (name == "fusion") return SimilarityMethod::Fusion;
  if (name == "aef") return SimilarityMethod::Aef;
  if (name == "custom") return SimilarityMethod::Custom;
  throw std::invalid_argument("unknown similarity method '" + std::string(name) + "'");
}

size_t SimilarityMatrix::index_of(const BasinId& id) const {
  for (size_t i = 0; i < basins.size(); ++i)
    if (basins[i] == id) return i;
  throw std::out_of_range("basin '" + id + "' not in similarity matrix");
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty())
    throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0)
    throw std::domain_error("cosine: zero-norm vector (degenerate standardized row)");
  const double s = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(s, -1.0, 1.0);
}

SimilarityMatrix similarity_matrix(const StaticTable& table,
                                   std::optional<SimilarityMethod> method_override) {
  if (table.size() < 2) throw std::invalid_argument("similarity_matrix: need >= 2 basins");
  auto [std_rows, stats] = standardize_columns(table.values);

  for (size_t i = 0; i < std_rows.size(); ++i) {
    bool all_zero = true;
    for (double v : std_rows[i])
      if (v != 0.0) { all_zero = false; break; }
    if (all_zero)
      throw std::domain_error("similarity_matrix: basin " + table.basins[i] +
                              " is all-zero after standardization");
  }

  SimilarityMatrix m;
  if (method_override) {
    m.method = *method_override;
  } else {
    switch (table.kind) {
      case TableKind::Attributes17: m.method = SimilarityMethod::Attributes; break;
      case TableKind::Aef64: m.method = SimilarityMethod::Aef; break;
      case TableKind::FusionEmbedding: m.method = SimilarityMethod::Fusion; break;
    }
  }
  m.basins = table.basins;
  const size_t n = std_rows.size();
  m.values.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i; j < n; ++j) {
      const double s = cosine(std_rows[i], std_rows[j]);
      m.values[i][j] = s;
      m.values[j][i] = s;
    }
  }
  return m;
}

DonorRanking donor_ranking(const SimilarityMatrix& matrix, const BasinId& target) {
  const size_t t = matrix.index_of(target);
  DonorRanking r;
  r.target = target;
  r.donors.reserve(matrix.size() - 1);
  for (size_t i = 0; i < matrix.size(); ++i)
    if (i != t) r.donors.emplace_back(matrix.basins[i], matrix.values[t][i]);
  std::sort(r.donors.begin(), r.donors.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // tie: ascending id, for cross-platform determinism
  });
  return r;
}

std::vector<BasinId> rank_and_select(const SimilarityMatrix& matrix, const BasinId& target, int k) {
  const int n = static_cast<int>(matrix.size());
  if (k < 1 || k > n - 1)
    throw std::invalid_argument("rank_and_select: k out of range [1, " + std::to_string(n - 1) + "]");
  const DonorRanking r = donor_ranking(matrix, target);
  std::vector<BasinId> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(r.donors[static_cast<size_t>(i)].first);
  return out;
}

std::vector<BasinId> select_random(const std::vector<BasinId>& basins, const BasinId& target,
                                   int k, uint64_t seed) {
  if (k < 1 || k > static_cast<int>(basins.size()) - 1)
    throw std::invalid_argument("select_random: k out of range [1, " +
                                std::to_string(basins.size() - 1) + "]");
  std::vector<BasinId> candidates;
  candidates.reserve(basins.size());
  for (const auto& id : basins)
    if (id != target) candidates.push_back(id);
  if (k > static_cast<int>(candidates.size()))
    throw std::invalid_argument("select_random: k exceeds candidate count");
  Rng rng(seed);
  // Partial Fisher-Yates: selection lands in the first k slots.
  for (int i = 0; i < k; ++i) {
    const size_t j = static_cast<size_t>(i) +
                     static_cast<size_t>(rng.below(candidates.size() - static_cast<size_t>(i)));
    std::swap(candidates[static_cast<size_t>(i)], candidates[j]);
  }
  candidates.resize(static_cast<size_t>(k));
  return candidates;
}

void export_similarity(const SimilarityMatrix& matrix, const std::optional<BasinId>& target,
                       const std::string& path) {
  csv::Writer w(path);
  if (target) {
    const DonorRanking r = donor_ranking(matrix, *target);
    w.row({"donor_id", "score"});
    for (const auto& [id, score] : r.donors) w.row({id, csv::format_double(score)});
  } else {
    std::vector<std::string> head = {"basin_id"};
    head.insert(head.end(), matrix.basins.begin(), matrix.basins.end());
    w.row(head);
    for (size_t i = 0; i < matrix.size(); ++i) {
      std::vector<std::string> cells = {matrix.basins[i]};
      for (double v : matrix.values[i]) cells.push_back(csv::format_double(v));
      w.row(cells);
    }
  }
  w.commit();
}

SimilarityMatrix import_similarity(const std::string& path) {
  const auto t = csv::read_file(path);
  if (t.header.empty() || t.header[0] != "basin_id")
    throw std::runtime_error(path + ": not a similarity matrix export");
  SimilarityMatrix m;
  m.basins.assign(t.header.begin() + 1, t.header.end());
  const size_t n = m.basins.size();
  if (t.rows.size() != n) throw std::runtime_error(path + ": row/column count mismatch");
  m.values.assign(n, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i) {
    if (t.rows[i].size() != n + 1 || t.rows[i][0] != m.basins[i])
      throw std::runtime_error(path + ": malformed row " + std::to_string(i));
    for (size_t j = 0; j < n; ++j)
      m.values[i][j] = csv::parse_double(t.rows[i][j + 1], path);
  }
  return m;
}

}  // namespace pubflow
