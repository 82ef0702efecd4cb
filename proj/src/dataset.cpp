#include "pubflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "pubflow/csv.hpp"
#include "pubflow/rng.hpp"

namespace pubflow {

const std::vector<std::string>& forcing_columns() {
  static const std::vector<std::string> cols = {"prcp", "dayl", "srad", "tmin",
                                                "tmax", "vp",   "pet"};
  return cols;
}

std::string_view table_kind_name(TableKind k) {
  switch (k) {
    case TableKind::Attributes17: return "attributes-17";
    case TableKind::Aef64: return "aef-64";
    case TableKind::FusionEmbedding: return "fusion-embedding";
  }
  return "?";
}

int table_kind_dim(TableKind k) {
  switch (k) {
    case TableKind::Attributes17: return 17;
    case TableKind::Aef64: return 64;
    case TableKind::FusionEmbedding: return 0;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// TimeSeriesFrame

TimeSeriesFrame::TimeSeriesFrame(Date start, std::vector<std::string> names,
                                 std::vector<std::vector<double>> cols)
    : start_(start), names_(std::move(names)), cols_(std::move(cols)) {
  if (names_.size() != cols_.size())
    throw std::invalid_argument("TimeSeriesFrame: name/column count mismatch");
  if (cols_.empty()) throw std::invalid_argument("TimeSeriesFrame: no columns");
  n_ = cols_.front().size();
  for (const auto& c : cols_)
    if (c.size() != n_) throw std::invalid_argument("TimeSeriesFrame: ragged columns");
}

std::optional<size_t> TimeSeriesFrame::index_of(Date d) const {
  const int32_t off = d.days() - start_.days();
  if (off < 0 || static_cast<size_t>(off) >= n_) return std::nullopt;
  return static_cast<size_t>(off);
}

bool TimeSeriesFrame::has_column(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& TimeSeriesFrame::column(std::string_view name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return cols_[i];
  throw std::out_of_range("no column '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// StaticTable

std::optional<size_t> StaticTable::row_of(const BasinId& id) const {
  for (size_t i = 0; i < basins.size(); ++i)
    if (basins[i] == id) return i;
  return std::nullopt;
}

const std::vector<double>& StaticTable::row(const BasinId& id) const {
  auto idx = row_of(id);
  if (!idx) throw std::out_of_range("basin '" + id + "' not in table");
  return values[*idx];
}

StaticTable StaticTable::select(const std::vector<BasinId>& ids) const {
  StaticTable out;
  out.kind = kind;
  out.columns = columns;
  out.basins.reserve(ids.size());
  out.values.reserve(ids.size());
  for (const auto& id : ids) {
    auto idx = row_of(id);
    if (!idx) throw std::out_of_range("basin '" + id + "' not in table");
    out.basins.push_back(id);
    out.values.push_back(values[*idx]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// BasinArchive

const TimeSeriesFrame& BasinArchive::forcings_for(const BasinId& id) const {
  auto it = forcings.find(id);
  if (it == forcings.end()) throw std::out_of_range("no forcings for basin '" + id + "'");
  return it->second;
}

const TimeSeriesFrame& BasinArchive::flow_for(const BasinId& id) const {
  auto it = flow.find(id);
  if (it == flow.end()) throw std::out_of_range("no flow for basin '" + id + "'");
  return it->second;
}

std::vector<double> BasinArchive::observed_flow(const BasinId& id, const Period& period) const {
  std::vector<double> out(static_cast<size_t>(period.length()), kMissing);
  auto it = flow.find(id);
  if (it == flow.end()) return out;
  const auto& frame = it->second;
  const auto& q = frame.column("q_mm_day");
  for (int i = 0; i < period.length(); ++i) {
    if (auto idx = frame.index_of(period.start.plus_days(i))) out[i] = q[*idx];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading

StaticTable load_static_table(const std::string& path, TableKind kind) {
  const auto t = csv::read_file(path);
  if (t.header.empty() || t.header[0] != "basin_id")
    throw std::runtime_error(path + ": first column must be 'basin_id'");
  const int want = table_kind_dim(kind);
  const int d = static_cast<int>(t.header.size()) - 1;
  if (want > 0 && d != want)
    throw std::runtime_error(path + ": wrong column count for " +
                             std::string(table_kind_name(kind)) + " (got " + std::to_string(d) +
                             ", want " + std::to_string(want) + ")");
  if (d < 1) throw std::runtime_error(path + ": no feature columns");

  StaticTable out;
  out.kind = kind;
  out.columns.assign(t.header.begin() + 1, t.header.end());
  std::set<BasinId> seen;
  for (const auto& row : t.rows) {
    if (static_cast<int>(row.size()) != d + 1)
      throw std::runtime_error(path + ": row with " + std::to_string(row.size()) +
                               " cells, expected " + std::to_string(d + 1));
    const BasinId& id = row[0];
    if (id.empty()) throw std::runtime_error(path + ": empty basin id");
    if (!seen.insert(id).second) throw std::runtime_error(path + ": duplicate id " + id);
    std::vector<double> vals(d);
    for (int j = 0; j < d; ++j)
      vals[j] = csv::parse_double(row[j + 1], path + " basin " + id + " col " + out.columns[j]);
    out.basins.push_back(id);
    out.values.push_back(std::move(vals));
  }
  return out;
}

TimeSeriesFrame load_daily_series(const std::string& path,
                                  const std::vector<std::string>& schema, GapPolicy gaps) {
  const auto t = csv::read_file(path);
  const int date_col = t.column("date");
  if (date_col != 0) throw std::runtime_error(path + ": first column must be 'date'");
  std::vector<int> schema_cols(schema.size());
  for (size_t j = 0; j < schema.size(); ++j) {
    schema_cols[j] = t.column(schema[j]);
    if (schema_cols[j] < 0)
      throw std::runtime_error(path + ": missing schema column '" + schema[j] + "'");
  }
  if (t.rows.empty()) throw std::runtime_error(path + ": no data rows");

  const Date start = Date::parse(t.rows.front()[0]);
  std::vector<std::vector<double>> cols(schema.size());
  Date prev = start.plus_days(-1);
  for (const auto& row : t.rows) {
    const Date d = Date::parse(row[0]);
    const int32_t step = d.days() - prev.days();
    if (step <= 0)
      throw std::runtime_error(path + ": dates not strictly increasing at " + d.to_string());
    if (step > 1) {
      if (gaps == GapPolicy::Error)
        throw std::runtime_error(path + ": date gap before " + d.to_string());
      for (int32_t k = 1; k < step; ++k)
        for (auto& c : cols) c.push_back(kMissing);
    }
    for (size_t j = 0; j < schema.size(); ++j)
      cols[j].push_back(csv::parse_double_or_missing(
          row[static_cast<size_t>(schema_cols[j])], path + " @" + d.to_string()));
    prev = d;
  }
  return TimeSeriesFrame(start, schema, std::move(cols));
}

std::vector<double> convert_flow_units(const std::vector<double>& q_cfs, double area_km2) {
  if (!(area_km2 > 0.0)) throw std::invalid_argument("convert_flow_units: area must be > 0");
  // ft^3/s -> m^3/day -> depth over the basin in mm/day.
  const double factor = 0.0283168 * 86400.0 / (area_km2 * 1e6) * 1e3;
  std::vector<double> out(q_cfs.size());
  for (size_t i = 0; i < q_cfs.size(); ++i)
    out[i] = is_missing(q_cfs[i]) ? kMissing : q_cfs[i] * factor;
  return out;
}

ColumnStats compute_column_stats(const Matrix& m) {
  if (m.empty()) throw std::invalid_argument("compute_column_stats: empty matrix");
  const size_t n = m.size(), d = m.front().size();
  ColumnStats s;
  s.mean.assign(d, 0.0);
  s.sd.assign(d, 0.0);
  for (const auto& row : m) {
    if (row.size() != d) throw std::invalid_argument("compute_column_stats: ragged rows");
    for (size_t j = 0; j < d; ++j) s.mean[j] += row[j];
  }
  for (size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(n);
  for (const auto& row : m)
    for (size_t j = 0; j < d; ++j) {
      const double dev = row[j] - s.mean[j];
      s.sd[j] += dev * dev;
    }
  for (size_t j = 0; j < d; ++j) s.sd[j] = std::sqrt(s.sd[j] / static_cast<double>(n));
  return s;
}

std::pair<Matrix, ColumnStats> standardize_columns(const Matrix& m,
                                                   const std::optional<ColumnStats>& stats) {
  if (m.empty()) throw std::invalid_argument("standardize_columns: empty matrix");
  const size_t d = m.front().size();
  const ColumnStats s = stats ? *stats : compute_column_stats(m);
  if (s.dim() != d || s.sd.size() != d)
    throw std::invalid_argument("standardize_columns: stats dimension mismatch");
  Matrix out(m.size(), std::vector<double>(d));
  for (size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != d) throw std::invalid_argument("standardize_columns: ragged rows");
    for (size_t j = 0; j < d; ++j)
      out[i][j] = s.sd[j] > 0.0 ? (m[i][j] - s.mean[j]) / s.sd[j] : 0.0;
  }
  return {std::move(out), s};
}

std::vector<double> aggregate_pixel_embeddings(const Matrix& pixel_rows) {
  if (pixel_rows.empty())
    throw std::invalid_argument("aggregate_pixel_embeddings: empty input");
  const size_t d = pixel_rows.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& row : pixel_rows) {
    if (row.size() != d)
      throw std::invalid_argument("aggregate_pixel_embeddings: ragged rows");
    for (size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (auto& v : mean) v /= static_cast<double>(pixel_rows.size());
  return mean;
}

std::vector<SplitSpec> build_folds(const std::vector<BasinId>& basins, int n_folds,
                                   uint64_t seed, const Period& train_period,
                                   const Period& test_period) {
  if (n_folds < 2) throw std::invalid_argument("build_folds: need n_folds >= 2");
  if (static_cast<int>(basins.size()) < n_folds)
    throw std::invalid_argument("build_folds: too few basins for " +
                                std::to_string(n_folds) + " folds");
  std::vector<BasinId> shuffled = basins;
  Rng rng(seed);
  rng.shuffle(shuffled);

  const size_t n = shuffled.size();
  const size_t base = n / static_cast<size_t>(n_folds);
  const size_t rem = n % static_cast<size_t>(n_folds);
  std::vector<SplitSpec> folds;
  size_t pos = 0;
  for (int f = 0; f < n_folds; ++f) {
    const size_t sz = base + (static_cast<size_t>(f) < rem ? 1 : 0);
    SplitSpec s;
    s.test_basins.assign(shuffled.begin() + pos, shuffled.begin() + pos + sz);
    s.train_basins.reserve(n - sz);
    for (size_t i = 0; i < n; ++i)
      if (i < pos || i >= pos + sz) s.train_basins.push_back(shuffled[i]);
    s.train_period = train_period;
    s.test_period = test_period;
    s.label = "fold" + std::to_string(f);
    folds.push_back(std::move(s));
    pos += sz;
  }
  return folds;
}

std::vector<BasinId> read_basin_list(const std::string& path) {
  const std::string text = csv::read_text_file(path);
  std::vector<BasinId> out;
  std::string cur;
  for (char c : text) {
    if (c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

BasinArchive load_archive(const ArchivePaths& paths) {
  namespace fs = std::filesystem;
  BasinArchive a;
  a.attributes = load_static_table(paths.attributes, TableKind::Attributes17);

  if (!paths.embeddings.empty() && fs::exists(paths.embeddings)) {
    a.embeddings = load_static_table(paths.embeddings, TableKind::Aef64);
  } else if (!paths.pixels_dir.empty()) {
    // Build the embedding table by averaging per-basin pixel files.
    a.embeddings.kind = TableKind::Aef64;
    for (int j = 0; j < 64; ++j) {
      char name[8];
      std::snprintf(name, sizeof name, "e%02d", j);
      a.embeddings.columns.push_back(name);
    }
    for (const auto& id : a.attributes.basins) {
      const std::string p = paths.pixels_dir + "/" + id + ".csv";
      const auto t = csv::read_file(p);
      if (t.header.size() != 66)
        throw std::runtime_error(p + ": want header year,pixel_id,e00..e63");
      Matrix rows;
      for (const auto& r : t.rows) {
        std::vector<double> v(64);
        for (int j = 0; j < 64; ++j) v[j] = csv::parse_double(r[j + 2], p);
        rows.push_back(std::move(v));
      }
      a.embeddings.basins.push_back(id);
      a.embeddings.values.push_back(aggregate_pixel_embeddings(rows));
    }
  } else {
    throw std::runtime_error("archive: need embeddings.csv or a pixels directory");
  }

  std::vector<BasinId> wanted = paths.basin_list.empty()
                                    ? a.attributes.basins
                                    : read_basin_list(paths.basin_list);
  a.attributes = a.attributes.select(wanted);
  a.embeddings = a.embeddings.select(wanted);

  std::vector<std::string> flow_schema = {"q_mm_day"};
  for (const auto& id : wanted) {
    a.forcings.emplace(id, load_daily_series(paths.forcings_dir + "/" + id + ".csv",
                                             forcing_columns(), GapPolicy::Error));
    const std::string fp = paths.flow_dir + "/" + id + ".csv";
    if (fs::exists(fp))
      a.flow.emplace(id, load_daily_series(fp, flow_schema, GapPolicy::FillMissing));
  }

  if (!paths.areas.empty() && fs::exists(paths.areas)) {
    const auto t = csv::read_file(paths.areas);
    const int idc = t.column("basin_id"), ac = t.column("area_km2");
    if (idc < 0 || ac < 0) throw std::runtime_error(paths.areas + ": want basin_id,area_km2");
    for (const auto& r : t.rows)
      a.area_km2[r[static_cast<size_t>(idc)]] =
          csv::parse_double(r[static_cast<size_t>(ac)], paths.areas);
  }
  return a;
}

void check_archive(const BasinArchive& archive, const Period& train_period,
                   const Period& test_period, int sequence_length) {
  const int warm = sequence_length - 1;
  for (const auto& id : archive.basins()) {
    if (!archive.embeddings.row_of(id))
      throw std::runtime_error("basin " + id + ": missing embedding row");
    auto fit = archive.forcings.find(id);
    if (fit == archive.forcings.end())
      throw std::runtime_error("basin " + id + ": missing forcings");
    for (const Period* p : {&train_period, &test_period}) {
      const Period need{p->start.plus_days(-warm), p->end};
      if (!fit->second.covers(need))
        throw std::runtime_error("basin " + id + ": forcings do not cover " +
                                 need.start.to_string() + ".." + need.end.to_string());
      for (const auto& col : forcing_columns())
        for (int i = 0; i < need.length(); ++i) {
          auto idx = fit->second.index_of(need.start.plus_days(i));
          if (is_missing(fit->second.column(col)[*idx]))
            throw std::runtime_error("basin " + id + ": missing forcing value " + col +
                                     " at " + need.start.plus_days(i).to_string());
        }
    }
    if (archive.flow.find(id) == archive.flow.end())
      throw std::runtime_error("basin " + id + ": missing flow series");
  }
}

}  // namespace pubflow
