#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pubflow/clustering.hpp"
#include "pubflow/config.hpp"
#include "pubflow/dataset.hpp"
#include "pubflow/metrics.hpp"
#include "pubflow/model.hpp"
#include "pubflow/similarity.hpp"

namespace pubflow {

/// What one training cell produced: predictions per test basin plus training
/// diagnostics.
struct CellOutput {
  std::map<BasinId, std::vector<double>> sims;  // aligned to the test period
  double loss_first = kMissing;
  double loss_last = kMissing;
  int best_epoch = 0;
  double val_nse = kMissing;
};

/// Seam between the experiment runners and the model. The default backend
/// trains the LSTM; tests may inject an oracle that echoes observations.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual CellOutput run(const ModelConfig& cfg, const BasinArchive& archive,
                         const StaticTable& statics, const std::vector<BasinId>& donors,
                         const Period& train_period, const std::vector<BasinId>& test_basins,
                         const Period& test_period) = 0;
};

class LstmBackend : public ModelBackend {
 public:
  CellOutput run(const ModelConfig& cfg, const BasinArchive& archive, const StaticTable& statics,
                 const std::vector<BasinId>& donors, const Period& train_period,
                 const std::vector<BasinId>& test_basins, const Period& test_period) override;
};

/// Perfect-prediction stub: returns the observed flow as the simulation.
class OracleBackend : public ModelBackend {
 public:
  CellOutput run(const ModelConfig& cfg, const BasinArchive& archive, const StaticTable& statics,
                 const std::vector<BasinId>& donors, const Period& train_period,
                 const std::vector<BasinId>& test_basins, const Period& test_period) override;
};

/// One donor-selection method of Experiment B.
struct MethodSpec {
  std::string label;  // column value: "attributes", "fusion", "aef", "random", custom names
  enum class Kind { Ranked, Random } kind = Kind::Ranked;
  /// Ranking source for Kind::Ranked; empty means "use the fusion pipeline"
  /// when label == "fusion", else the archive table matching the label.
  std::optional<StaticTable> custom_table;
};

/// Fully resolved inputs of one experiment run.
struct ExperimentPlan {
  const BasinArchive* archive = nullptr;
  ModelConfig model;  // base; n_static/mode/seed are set per cell
  Period train_period;
  Period test_period;
  uint64_t master_seed = 42;
  std::string output_dir = "out";
  int jobs = 1;

  // Experiment A
  int expa_seeds = 5;
  int expa_folds = 5;
  int bootstrap_reps = 100;
  double bootstrap_fraction = 0.8;
  bool ks_on_replicates = false;
  bool ks_exact_small = false;  // exact KS enumeration when min(n) <= 10

  // Experiment B
  std::vector<BasinId> targets;
  std::vector<int> k_ladder;
  bool k_ladder_all = false;  // append k = n-1
  int seeds_per_cell = 1;
  std::vector<MethodSpec> methods;
  std::string expb_model_variant = "attributes";  // "attributes" or "aef"

  // Cross-regime
  int cluster_k_min = 2;
  int cluster_k_max = 15;

  ModelBackend* backend = nullptr;  // nullptr -> LstmBackend

  static ExperimentPlan from_config(const RunConfig& cfg, const BasinArchive& archive);
};

struct RunStats {
  int cells_total = 0;
  int cells_run = 0;
  int cells_skipped = 0;
  int cells_failed = 0;
};

/// IS/OOS variant comparison with seed-pooled bootstrap, CDF exports and KS
/// tests. Writes results_exp-a.csv, bootstrap.csv and cdf_*.csv under the
/// plan's output directory. Resumable: completed cells are never retrained.
RunStats run_experiment_a(const ExperimentPlan& plan);

/// Top-k donor scaling across selection methods. Writes results_exp-b.csv.
RunStats run_experiment_b(const ExperimentPlan& plan);

/// Silhouette-selected clustering plus leave-one-cluster-out generalization.
/// Writes results_cross-regime.csv, clusters_*.csv, silhouette_profile_*.csv
/// and cdf_crossregime_*.csv.
RunStats run_cross_regime(const ExperimentPlan& plan);

/// Aggregates result CSVs in `output_dir` into summary_<experiment>.csv
/// tables (group medians/means plus counts).
void write_reports(const std::string& output_dir);

}  // namespace pubflow
