#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pubflow/dates.hpp"

namespace pubflow {

using BasinId = std::string;
using Matrix = std::vector<std::vector<double>>;

/// Missing-value sentinel for observations (forcings are required complete).
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// The seven dynamic forcing columns, in file order.
const std::vector<std::string>& forcing_columns();

enum class TableKind { Attributes17, Aef64, FusionEmbedding };

std::string_view table_kind_name(TableKind k);

/// Feature dimension a kind demands, or 0 when unconstrained.
int table_kind_dim(TableKind k);

/// Daily series sharing one contiguous date axis (strictly increasing,
/// step = 1 day). Columns are equal-length named real vectors; missing
/// values carry the NaN sentinel. Immutable after construction.
class TimeSeriesFrame {
 public:
  TimeSeriesFrame(Date start, std::vector<std::string> names, std::vector<std::vector<double>> cols);

  size_t size() const { return n_; }
  Date start_date() const { return start_; }
  Date end_date() const { return start_.plus_days(static_cast<int>(n_) - 1); }
  Date date_at(size_t i) const { return start_.plus_days(static_cast<int>(i)); }

  bool covers(const Period& p) const {
    return n_ > 0 && start_date() <= p.start && p.end <= end_date();
  }
  /// Row index of a date, or nullopt when outside the axis.
  std::optional<size_t> index_of(Date d) const;

  const std::vector<std::string>& column_names() const { return names_; }
  bool has_column(std::string_view name) const;
  const std::vector<double>& column(std::string_view name) const;

 private:
  Date start_;
  size_t n_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> cols_;
};

/// Per-basin static descriptor table: one row per basin, d named columns.
struct StaticTable {
  TableKind kind = TableKind::FusionEmbedding;
  std::vector<BasinId> basins;
  std::vector<std::string> columns;
  Matrix values;  // n x d

  size_t size() const { return basins.size(); }
  size_t dim() const { return columns.size(); }
  std::optional<size_t> row_of(const BasinId& id) const;
  const std::vector<double>& row(const BasinId& id) const;

  /// Subset/reorder rows to `ids` (every id must exist).
  StaticTable select(const std::vector<BasinId>& ids) const;
};

/// Per-column mean and standard deviation (population convention, divisor n).
struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> sd;

  size_t dim() const { return mean.size(); }
};

/// One training/evaluation split.
struct SplitSpec {
  std::vector<BasinId> train_basins;
  std::vector<BasinId> test_basins;
  Period train_period;
  Period test_period;
  std::string label;
};

/// Everything about a basin fleet: descriptor tables plus per-basin series.
struct BasinArchive {
  StaticTable attributes;  // kind Attributes17
  StaticTable embeddings;  // kind Aef64
  std::map<BasinId, TimeSeriesFrame> forcings;
  std::map<BasinId, TimeSeriesFrame> flow;
  std::map<BasinId, double> area_km2;  // optional

  /// Basin ids in attribute-table order (the canonical working order).
  const std::vector<BasinId>& basins() const { return attributes.basins; }

  const TimeSeriesFrame& forcings_for(const BasinId& id) const;
  const TimeSeriesFrame& flow_for(const BasinId& id) const;

  /// Observed flow over `period`, NaN where missing or not recorded.
  std::vector<double> observed_flow(const BasinId& id, const Period& period) const;
};

// ---------------------------------------------------------------------------
// Operations

/// Loads a basin_id,<features...> CSV. Validates the feature count against
/// the declared kind and rejects duplicate/empty ids and non-numeric cells.
StaticTable load_static_table(const std::string& path, TableKind kind);

enum class GapPolicy {
  Error,        // forcings: a hole in the date axis is fatal
  FillMissing,  // flow: holes become NaN rows
};

/// Loads a date,<schema...> CSV into a contiguous daily frame.
TimeSeriesFrame load_daily_series(const std::string& path,
                                  const std::vector<std::string>& schema,
                                  GapPolicy gaps);

/// Converts discharge from ft^3/s to depth over the catchment in mm/day.
/// NaN sentinels pass through unchanged.
std::vector<double> convert_flow_units(const std::vector<double>& q_cfs, double area_km2);

/// Z-scores columns. When `stats` is absent they are computed from `m`
/// (population sd); a zero-sd column maps to all zeros. Supplying stats
/// applies them unchanged (train-set stats onto test data).
std::pair<Matrix, ColumnStats> standardize_columns(const Matrix& m,
                                                   const std::optional<ColumnStats>& stats = std::nullopt);

ColumnStats compute_column_stats(const Matrix& m);

/// Component-wise mean of m x 64 pixel embedding rows.
std::vector<double> aggregate_pixel_embeddings(const Matrix& pixel_rows);

/// Seeded shuffle + near-equal partition into n_folds disjoint test sets;
/// fold i trains on every basin outside its own test set.
std::vector<SplitSpec> build_folds(const std::vector<BasinId>& basins, int n_folds,
                                   uint64_t seed, const Period& train_period,
                                   const Period& test_period);

/// File locations of an archive on disk (see README for the formats).
struct ArchivePaths {
  std::string attributes;     // attributes.csv
  std::string embeddings;     // embeddings.csv (optional if pixels_dir given)
  std::string forcings_dir;   // forcings/<basin_id>.csv
  std::string flow_dir;       // flow/<basin_id>.csv
  std::string pixels_dir;     // optional pixels/<basin_id>.csv
  std::string basin_list;     // optional newline-separated id list
  std::string areas;          // optional basin_id,area_km2 CSV
};

BasinArchive load_archive(const ArchivePaths& paths);

/// Validates coverage of every basin for the given periods (plus warm-up
/// history before each period start). Throws naming the first bad basin.
void check_archive(const BasinArchive& archive, const Period& train_period,
                   const Period& test_period, int sequence_length);

std::vector<BasinId> read_basin_list(const std::string& path);

}  // namespace pubflow
