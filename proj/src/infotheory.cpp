#include "pubflow/infotheory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pubflow/csv.hpp"

namespace pubflow {

namespace {

/// Equal-frequency bin index per element: bin(v) = #(edges < v) where edge k
/// is the k*n/B-th order statistic. Ties share the lower bin.
std::vector<int> equal_frequency_bins(std::span<const double> x, int bins) {
  const size_t n = x.size();
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  edges.reserve(static_cast<size_t>(bins) - 1);
  for (int k = 1; k < bins; ++k)
    edges.push_back(sorted[static_cast<size_t>(k) * n / static_cast<size_t>(bins) - 1]);
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) {
    int b = 0;
    for (double e : edges)
      if (e < x[i]) ++b;
    out[i] = b;
  }
  return out;
}

}  // namespace

double mutual_information(std::span<const double> x, std::span<const double> y, int bins) {
  if (x.size() != y.size()) throw std::invalid_argument("mutual_information: length mismatch");
  if (bins < 2) throw std::invalid_argument("mutual_information: need >= 2 bins");
  const size_t n = x.size();
  if (n < 2 * static_cast<size_t>(bins))
    throw std::invalid_argument("mutual_information: too few samples (need >= 2*bins)");

  const std::vector<int> bx = equal_frequency_bins(x, bins);
  const std::vector<int> by = equal_frequency_bins(y, bins);

  const size_t b = static_cast<size_t>(bins);
  std::vector<double> joint(b * b, 0.0), px(b, 0.0), py(b, 0.0);
  for (size_t i = 0; i < n; ++i) {
    joint[static_cast<size_t>(bx[i]) * b + static_cast<size_t>(by[i])] += 1.0;
    px[static_cast<size_t>(bx[i])] += 1.0;
    py[static_cast<size_t>(by[i])] += 1.0;
  }
  // Summing in sorted term order makes the estimate bitwise-symmetric in
  // (x, y): transposing the joint histogram permutes the terms only.
  const double dn = static_cast<double>(n);
  std::vector<double> terms;
  terms.reserve(b * b);
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < b; ++j) {
      const double nij = joint[i * b + j];
      if (nij == 0.0) continue;
      terms.push_back((nij / dn) * std::log(nij * dn / (px[i] * py[j])));
    }
  std::sort(terms.begin(), terms.end());
  double mi = 0.0;
  for (double t : terms) mi += t;
  return mi;
}

MiMatrix mi_matrix(const StaticTable& attrs, const StaticTable& embs, int bins) {
  if (attrs.basins != embs.basins)
    throw std::invalid_argument("mi_matrix: basin order mismatch between tables");
  const auto [sa, a_stats] = standardize_columns(attrs.values);
  const auto [se, e_stats] = standardize_columns(embs.values);

  MiMatrix m;
  m.row_names = attrs.columns;
  m.col_names = embs.columns;
  const size_t n = sa.size(), da = attrs.dim(), de = embs.dim();
  std::vector<double> col_a(n), col_e(n);
  m.values.assign(da, std::vector<double>(de, 0.0));
  for (size_t i = 0; i < da; ++i) {
    for (size_t r = 0; r < n; ++r) col_a[r] = sa[r][i];
    for (size_t j = 0; j < de; ++j) {
      for (size_t r = 0; r < n; ++r) col_e[r] = se[r][j];
      m.values[i][j] = mutual_information(col_a, col_e, bins);
    }
  }
  return m;
}

void export_mi_matrix(const MiMatrix& m, const std::string& path) {
  csv::Writer w(path);
  std::vector<std::string> head = {"attribute"};
  head.insert(head.end(), m.col_names.begin(), m.col_names.end());
  w.row(head);
  for (size_t i = 0; i < m.row_names.size(); ++i) {
    std::vector<std::string> cells = {m.row_names[i]};
    for (double v : m.values[i]) cells.push_back(csv::format_fixed(v, 6));
    w.row(cells);
  }
  w.commit();
}

}  // namespace pubflow
