#include "pubflow/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "pubflow/csv.hpp"
#include "pubflow/rng.hpp"

namespace fs = std::filesystem;

namespace pubflow {

namespace {

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ':' || c == '/') c = '_';
  return s;
}

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) { return csv::format_double(v); }

/// Append-only result table keyed by a `cell` column (column index 1).
/// Appends land on disk immediately for crash safety; finalize() rewrites
/// the file in canonical cell order so reruns and resumed runs produce
/// byte-identical tables.
class ResultLog {
 public:
  ResultLog(std::string path, std::vector<std::string> header)
      : path_(std::move(path)), header_(std::move(header)) {
    if (fs::exists(path_)) {
      const auto t = csv::read_file(path_);
      if (t.header != header_)
        throw std::runtime_error(path_ + ": unexpected header (stale results file?)");
      for (const auto& row : t.rows) {
        if (row.size() != header_.size())
          throw std::runtime_error(path_ + ": malformed row");
        rows_[row[1]].push_back(row);
        if (std::find(order_.begin(), order_.end(), row[1]) == order_.end())
          order_.push_back(row[1]);
      }
    }
    append_.open(path_, std::ios::app);
    if (!append_) throw std::runtime_error("cannot open " + path_);
    if (!fs::exists(path_) || fs::file_size(path_) == 0) write_line(append_, header_);
  }

  size_t count(const std::string& cell) const {
    std::lock_guard lock(mu_);
    auto it = rows_.find(cell);
    return it == rows_.end() ? 0 : it->second.size();
  }

  /// A cell is complete when it holds exactly `expected` distinct rows
  /// (duplicates flag a torn write from an interrupted run).
  bool complete(const std::string& cell, size_t expected) const {
    std::lock_guard lock(mu_);
    auto it = rows_.find(cell);
    if (it == rows_.end() || it->second.size() != expected) return false;
    std::set<std::string> seen;
    for (const auto& row : it->second)
      if (!seen.insert(join(row, ',')).second) return false;
    return true;
  }

  std::vector<std::vector<std::string>> rows_of(const std::string& cell) const {
    std::lock_guard lock(mu_);
    auto it = rows_.find(cell);
    return it == rows_.end() ? std::vector<std::vector<std::string>>{} : it->second;
  }

  void drop_cell(const std::string& cell) {
    std::lock_guard lock(mu_);
    rows_.erase(cell);
  }

  void drop_cells_with_prefix(const std::string& prefix) {
    std::lock_guard lock(mu_);
    for (auto it = rows_.begin(); it != rows_.end();)
      it = it->first.rfind(prefix, 0) == 0 ? rows_.erase(it) : std::next(it);
  }

  void append(const std::vector<std::string>& row) {
    if (row.size() != header_.size()) throw std::logic_error("result row width mismatch");
    std::lock_guard lock(mu_);
    rows_[row[1]].push_back(row);
    write_line(append_, row);
    append_.flush();
  }

  /// Atomic rewrite with rows grouped by `cell_order`; cells not listed are
  /// discarded as stale.
  void finalize(const std::vector<std::string>& cell_order) {
    std::lock_guard lock(mu_);
    append_.close();
    csv::Writer w(path_);
    w.row(header_);
    for (const auto& cell : cell_order) {
      auto it = rows_.find(cell);
      if (it == rows_.end()) continue;
      for (const auto& row : it->second) w.row(row);
    }
    w.commit();
  }

 private:
  static void write_line(std::ofstream& out, const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  }

  std::string path_;
  std::vector<std::string> header_;
  std::map<std::string, std::vector<std::vector<std::string>>> rows_;
  std::vector<std::string> order_;
  std::ofstream append_;
  mutable std::mutex mu_;
};

/// Volatile sidecar for wall times and completion stamps (not part of the
/// deterministic results contract).
class RunLog {
 public:
  explicit RunLog(const std::string& path) {
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (fresh) out_ << "experiment,cell,status,wall_ms,completed_at\n";
  }
  void note(const std::string& experiment, const std::string& cell, const std::string& status,
            long wall_ms) {
    std::lock_guard lock(mu_);
    out_ << experiment << ',' << cell << ',' << status << ',' << wall_ms << ',' << now_iso()
         << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex mu_;
};

void run_cells_parallel(int jobs, int n, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min(jobs, n);
  pool.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

uint64_t donor_set_hash(std::vector<BasinId> donors) {
  std::sort(donors.begin(), donors.end());
  return stable_hash(join(donors, ','));
}

void write_cdf_file(const std::string& path, const std::vector<double>& values) {
  std::vector<double> finite;
  for (double v : values)
    if (std::isfinite(v)) finite.push_back(v);
  csv::Writer w(path);
  w.row({"value", "fraction"});
  if (!finite.empty())
    for (const auto& [v, f] : cdf_points(finite)) w.row({fmt(v), fmt(f)});
  w.commit();
}

}  // namespace

// ---------------------------------------------------------------------------
// Backends

CellOutput LstmBackend::run(const ModelConfig& cfg, const BasinArchive& archive,
                            const StaticTable& statics, const std::vector<BasinId>& donors,
                            const Period& train_period, const std::vector<BasinId>& test_basins,
                            const Period& test_period) {
  const TrainedModel model = train(cfg, archive, statics, donors, train_period);
  CellOutput out;
  out.loss_first = model.epoch_train_loss.front();
  out.loss_last = model.epoch_train_loss.back();
  out.best_epoch = model.best_epoch;
  if (model.best_epoch >= 1 &&
      model.best_epoch <= static_cast<int>(model.epoch_val_nse.size()))
    out.val_nse = model.epoch_val_nse[static_cast<size_t>(model.best_epoch - 1)];
  for (const auto& id : test_basins) {
    const TimeSeriesFrame sim = predict(model, archive, statics, id, test_period);
    out.sims[id] = sim.column("q_sim_mm_day");
  }
  return out;
}

CellOutput OracleBackend::run(const ModelConfig&, const BasinArchive& archive, const StaticTable&,
                              const std::vector<BasinId>&, const Period&,
                              const std::vector<BasinId>& test_basins, const Period& test_period) {
  CellOutput out;
  out.loss_first = 0.0;
  out.loss_last = 0.0;
  out.best_epoch = 0;
  out.val_nse = 1.0;
  for (const auto& id : test_basins) out.sims[id] = archive.observed_flow(id, test_period);
  return out;
}

ExperimentPlan ExperimentPlan::from_config(const RunConfig& cfg, const BasinArchive& archive) {
  ExperimentPlan p;
  p.archive = &archive;
  p.model = cfg.model;
  p.train_period = cfg.train_period;
  p.test_period = cfg.test_period;
  p.master_seed = cfg.master_seed;
  p.output_dir = cfg.output_dir;
  p.jobs = cfg.jobs;
  p.expa_seeds = cfg.expa_seeds;
  p.expa_folds = cfg.expa_folds;
  p.bootstrap_reps = cfg.bootstrap_replicates;
  p.bootstrap_fraction = cfg.bootstrap_fraction;
  p.ks_on_replicates = cfg.ks_on_replicates;
  p.ks_exact_small = cfg.ks_exact_small;
  p.targets = cfg.expb_targets;
  p.k_ladder = cfg.expb_k_ladder;
  p.k_ladder_all = cfg.expb_k_ladder_all;
  p.seeds_per_cell = cfg.expb_seeds_per_cell;
  p.expb_model_variant = cfg.expb_model_variant;
  p.methods.push_back({"attributes", MethodSpec::Kind::Ranked, std::nullopt});
  p.methods.push_back({"fusion", MethodSpec::Kind::Ranked, std::nullopt});
  p.methods.push_back({"aef", MethodSpec::Kind::Ranked, std::nullopt});
  if (cfg.expb_include_random) p.methods.push_back({"random", MethodSpec::Kind::Random, std::nullopt});
  p.cluster_k_min = cfg.cluster_k_min;
  p.cluster_k_max = cfg.cluster_k_max;
  return p;
}

// ---------------------------------------------------------------------------
// Experiment A

namespace {

struct ExpaVariant {
  std::string name;
  const StaticTable* table;
};

struct ExpaTrainCell {
  std::string key;
  std::string variant;
  std::string setting;       // "is" or "oos-f<j>"
  int seed_idx;
  std::vector<BasinId> donors;
  std::vector<BasinId> test_basins;
  const StaticTable* table;
};

std::map<BasinId, std::vector<double>> load_preds(const std::string& path, const Period& period) {
  const auto t = csv::read_file(path);
  const int bi = t.column("basin_id"), di = t.column("date"), si = t.column("sim");
  if (bi != 0 || di != 1 || si != 2) throw std::runtime_error(path + ": bad predictions header");
  std::map<BasinId, std::vector<double>> out;
  for (const auto& row : t.rows) {
    auto& v = out[row[0]];
    if (v.empty()) v.assign(static_cast<size_t>(period.length()), kMissing);
    const int off = Date::parse(row[1]).days() - period.start.days();
    if (off < 0 || off >= period.length())
      throw std::runtime_error(path + ": prediction outside test period");
    v[static_cast<size_t>(off)] = csv::parse_double_or_missing(row[2], path);
  }
  return out;
}

void write_preds(const std::string& path, const Period& period,
                 const std::map<BasinId, std::vector<double>>& sims) {
  csv::Writer w(path);
  w.row({"basin_id", "date", "sim"});
  for (const auto& [id, v] : sims)
    for (int i = 0; i < period.length(); ++i)
      w.row({id, period.start.plus_days(i).to_string(), fmt(v[static_cast<size_t>(i)])});
  w.commit();
}

}  // namespace

RunStats run_experiment_a(const ExperimentPlan& plan) {
  if (!plan.archive) throw std::invalid_argument("exp-a: no archive");
  const BasinArchive& archive = *plan.archive;
  const std::vector<BasinId>& basins = archive.basins();
  if (basins.size() < 2) throw std::invalid_argument("exp-a: need >= 2 basins");

  fs::create_directories(plan.output_dir + "/preds/exp-a");
  ResultLog log(plan.output_dir + "/results_exp-a.csv",
                {"experiment", "cell", "variant", "setting", "seed", "basin_id", "metric", "value"});
  RunLog runlog(plan.output_dir + "/runlog_exp-a.csv");
  LstmBackend default_backend;
  ModelBackend* backend = plan.backend ? plan.backend : &default_backend;

  const auto folds = build_folds(basins, plan.expa_folds,
                                 derive_seed(plan.master_seed, "exp-a|folds"), plan.train_period,
                                 plan.test_period);
  const std::vector<ExpaVariant> variants = {{"attributes", &archive.attributes},
                                             {"aef", &archive.embeddings}};

  // Enumerate training cells in canonical order.
  std::vector<ExpaTrainCell> cells;
  for (const auto& v : variants) {
    for (int s = 0; s < plan.expa_seeds; ++s)
      cells.push_back({"train:" + v.name + ":is:s" + std::to_string(s), v.name, "is", s, basins,
                       basins, v.table});
    for (size_t f = 0; f < folds.size(); ++f)
      for (int s = 0; s < plan.expa_seeds; ++s)
        cells.push_back({"train:" + v.name + ":oos-f" + std::to_string(f) + ":s" +
                             std::to_string(s),
                         v.name, "oos-f" + std::to_string(f), s, folds[f].train_basins,
                         folds[f].test_basins, v.table});
  }

  RunStats stats;
  stats.cells_total = static_cast<int>(cells.size());
  std::atomic<int> n_run{0}, n_skip{0}, n_fail{0};

  auto preds_path = [&](const std::string& key) {
    return plan.output_dir + "/preds/exp-a/" + sanitize(key) + ".csv";
  };

  auto run_cell = [&](int idx) {
    const ExpaTrainCell& cell = cells[static_cast<size_t>(idx)];
    if (log.complete(cell.key, 4) && fs::exists(preds_path(cell.key))) {
      n_skip.fetch_add(1);
      return;
    }
    log.drop_cell(cell.key);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ModelConfig cfg = plan.model;
      cfg.n_static = static_cast<int>(cell.table->dim());
      cfg.mode = FrontendMode::JointMlp;
      cfg.seed = derive_seed(plan.master_seed, "exp-a|train|" + cell.variant + "|" +
                                                   cell.setting + "|s" +
                                                   std::to_string(cell.seed_idx));
      const CellOutput out = backend->run(cfg, archive, *cell.table, cell.donors,
                                          plan.train_period, cell.test_basins, plan.test_period);
      write_preds(preds_path(cell.key), plan.test_period, out.sims);
      const std::string seed_label = "s" + std::to_string(cell.seed_idx);
      for (const auto& [metric, value] :
           std::vector<std::pair<std::string, double>>{{"train_loss_first", out.loss_first},
                                                       {"train_loss_last", out.loss_last},
                                                       {"train_best_epoch", out.best_epoch},
                                                       {"train_val_nse", out.val_nse}})
        log.append({"exp-a", cell.key, cell.variant, cell.setting, seed_label, "", metric,
                    fmt(value)});
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0).count();
      runlog.note("exp-a", cell.key, "ok", ms);
      std::cerr << "[exp-a] " << cell.key << " done (" << ms / 1000.0 << " s)\n";
      n_run.fetch_add(1);
    } catch (const std::exception& e) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0).count();
      runlog.note("exp-a", cell.key, std::string("error: ") + e.what(), ms);
      std::cerr << "[exp-a] " << cell.key << " FAILED: " << e.what() << "\n";
      n_fail.fetch_add(1);
    }
  };
  run_cells_parallel(plan.jobs, static_cast<int>(cells.size()), run_cell);

  stats.cells_run = n_run.load();
  stats.cells_skipped = n_skip.load();
  stats.cells_failed = n_fail.load();

  std::vector<std::string> cell_order;
  for (const auto& c : cells) cell_order.push_back(c.key);

  if (stats.cells_failed > 0) {
    log.finalize(cell_order);
    std::cerr << "[exp-a] " << stats.cells_failed << " cell(s) failed; aggregation skipped\n";
    return stats;
  }

  // Aggregation: per-basin seed-pooled bootstrap, CDFs, and KS comparisons.
  // These rows re-derive deterministically from the prediction files, so they
  // are recomputed on every run.
  log.drop_cells_with_prefix("agg:");
  log.drop_cells_with_prefix("ks:");

  csv::Writer boot(plan.output_dir + "/bootstrap.csv");
  boot.row({"experiment", "basin_id", "metric", "replicate", "value"});
  csv::Writer metrics_out(plan.output_dir + "/metrics.csv");
  metrics_out.row({"experiment", "basin_id", "seed", "metric", "value"});

  // Fold lookup for the OOS setting.
  std::map<BasinId, size_t> fold_of;
  for (size_t f = 0; f < folds.size(); ++f)
    for (const auto& id : folds[f].test_basins) fold_of[id] = f;

  // medians[variant][setting][metric] -> per-basin median bootstrapped scores
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> medians;
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> replicates;

  for (const auto& v : variants) {
    // Cache predictions per train cell.
    std::map<std::string, std::map<BasinId, std::vector<double>>> preds;
    for (const auto& c : cells)
      if (c.variant == v.name) preds[c.key] = load_preds(preds_path(c.key), plan.test_period);

    for (const std::string setting : {"is", "oos"}) {
      const std::string agg_cell = "agg:" + v.name + ":" + setting;
      for (const auto& basin : basins) {
        std::vector<ObsSimPairs> runs;
        const auto obs = archive.observed_flow(basin, plan.test_period);
        for (int s = 0; s < plan.expa_seeds; ++s) {
          std::string key;
          if (setting == "is") {
            key = "train:" + v.name + ":is:s" + std::to_string(s);
          } else {
            key = "train:" + v.name + ":oos-f" + std::to_string(fold_of.at(basin)) + ":s" +
                  std::to_string(s);
          }
          const auto& cell_preds = preds.at(key);
          auto it = cell_preds.find(basin);
          if (it == cell_preds.end())
            throw std::runtime_error("exp-a: missing prediction for basin " + basin);
          runs.push_back({obs, it->second});
        }
        const std::string exp_label = "exp-a:" + v.name + ":" + setting;
        for (int s = 0; s < plan.expa_seeds; ++s) {
          const std::string seed_label = "s" + std::to_string(s);
          const auto& run = runs[static_cast<size_t>(s)];
          const double run_nse = nse(run.obs, run.sim).value_or(kMissing);
          const auto run_kge = kge(run.obs, run.sim);
          metrics_out.row({exp_label, basin, seed_label, "nse", fmt(run_nse)});
          metrics_out.row({exp_label, basin, seed_label, "kge",
                           fmt(run_kge ? run_kge->kge : kMissing)});
        }
        const BootstrapResult br =
            pool_and_bootstrap(runs, plan.bootstrap_fraction, plan.bootstrap_reps,
                               derive_seed(plan.master_seed,
                                           "exp-a|boot|" + v.name + "|" + setting + "|" + basin));
        for (int r = 0; r < plan.bootstrap_reps; ++r) {
          boot.row({exp_label, basin, "nse", std::to_string(r),
                    fmt(br.nse_reps[static_cast<size_t>(r)])});
          boot.row({exp_label, basin, "kge", std::to_string(r),
                    fmt(br.kge_reps[static_cast<size_t>(r)])});
        }
        const double nse_med = median_finite(br.nse_reps).value_or(kMissing);
        const double kge_med = median_finite(br.kge_reps).value_or(kMissing);
        log.append({"exp-a", agg_cell, v.name, setting, "", basin, "nse_boot_median",
                    fmt(nse_med)});
        log.append({"exp-a", agg_cell, v.name, setting, "", basin, "kge_boot_median",
                    fmt(kge_med)});
        log.append({"exp-a", agg_cell, v.name, setting, "", basin, "nse_boot_undefined",
                    std::to_string(br.nse_undefined)});
        log.append({"exp-a", agg_cell, v.name, setting, "", basin, "kge_boot_undefined",
                    std::to_string(br.kge_undefined)});
        medians[v.name][setting]["nse"].push_back(nse_med);
        medians[v.name][setting]["kge"].push_back(kge_med);
        for (double x : br.nse_reps)
          if (std::isfinite(x)) replicates[v.name][setting]["nse"].push_back(x);
        for (double x : br.kge_reps)
          if (std::isfinite(x)) replicates[v.name][setting]["kge"].push_back(x);
      }
      for (const std::string metric : {"nse", "kge"})
        write_cdf_file(plan.output_dir + "/cdf_expa_" + metric + "_" + v.name + "_" + setting +
                           ".csv",
                       medians[v.name][setting][metric]);
    }
  }
  boot.commit();
  metrics_out.commit();

  std::vector<std::string> agg_order;
  for (const auto& v : variants)
    for (const std::string setting : {"is", "oos"}) agg_order.push_back("agg:" + v.name + ":" + setting);

  for (const std::string setting : {"is", "oos"}) {
    const std::string ks_cell = "ks:" + setting;
    for (const std::string metric : {"nse", "kge"}) {
      const auto& samples = plan.ks_on_replicates ? replicates : medians;
      std::vector<double> a, b;
      for (double x : samples.at("attributes").at(setting).at(metric))
        if (std::isfinite(x)) a.push_back(x);
      for (double x : samples.at("aef").at(setting).at(metric))
        if (std::isfinite(x)) b.push_back(x);
      const bool exact = plan.ks_exact_small && std::min(a.size(), b.size()) <= 10;
      const KsResult ks = ks_two_sample(a, b, exact);
      log.append({"exp-a", ks_cell, "attributes_vs_aef", setting, "", "", "ks_" + metric + "_d",
                  fmt(ks.d)});
      log.append({"exp-a", ks_cell, "attributes_vs_aef", setting, "", "", "ks_" + metric + "_p",
                  fmt(ks.p)});
    }
    log.append({"exp-a", ks_cell, "attributes_vs_aef", setting, "", "", "ks_samples",
                plan.ks_on_replicates ? "replicates" : "medians"});
    agg_order.push_back(ks_cell);
  }

  cell_order.insert(cell_order.end(), agg_order.begin(), agg_order.end());
  log.finalize(cell_order);
  return stats;
}

// ---------------------------------------------------------------------------
// Experiment B

RunStats run_experiment_b(const ExperimentPlan& plan) {
  if (!plan.archive) throw std::invalid_argument("exp-b: no archive");
  const BasinArchive& archive = *plan.archive;
  const std::vector<BasinId>& basins = archive.basins();
  const int n = static_cast<int>(basins.size());
  if (plan.targets.empty()) throw std::invalid_argument("exp-b: no target basins configured");
  for (const auto& t : plan.targets)
    if (!archive.attributes.row_of(t))
      throw std::invalid_argument("exp-b: target basin " + t + " not in archive");
  if (plan.methods.empty()) throw std::invalid_argument("exp-b: no methods configured");

  std::vector<int> ladder = plan.k_ladder;
  if (plan.k_ladder_all && (ladder.empty() || ladder.back() != n - 1)) ladder.push_back(n - 1);

  fs::create_directories(plan.output_dir + "/models");
  ResultLog log(plan.output_dir + "/results_exp-b.csv",
                {"experiment", "cell", "target", "method", "k", "seed", "metric", "value"});
  RunLog runlog(plan.output_dir + "/runlog_exp-b.csv");
  LstmBackend default_backend;
  ModelBackend* backend = plan.backend ? plan.backend : &default_backend;

  const bool use_aef_model = plan.expb_model_variant == "aef";
  const StaticTable& model_table = use_aef_model ? archive.embeddings : archive.attributes;

  struct ExpbCell {
    std::string key;
    BasinId target;
    std::string method;
    int k;
    int seed_idx;
    const MethodSpec* spec;
  };
  std::vector<ExpbCell> cells;
  for (const auto& target : plan.targets)
    for (const auto& m : plan.methods)
      for (int k : ladder) {
        if (k > n - 1) {
          std::cerr << "[exp-b] skipping k=" << k << " for " << target
                    << " (only " << n - 1 << " donors available)\n";
          continue;
        }
        for (int s = 0; s < plan.seeds_per_cell; ++s)
          cells.push_back({"cell:" + target + ":" + m.label + ":k" + std::to_string(k) + ":s" +
                               std::to_string(s),
                           target, m.label, k, s, &m});
      }

  RunStats stats;
  stats.cells_total = static_cast<int>(cells.size());

  // Ranked similarity matrices, built lazily once per method (fusion: per
  // target, backed by a saved model so resumed runs rank identically).
  std::map<std::string, SimilarityMatrix> matrices;
  auto ranking_matrix = [&](const MethodSpec& m, const BasinId& target) -> const SimilarityMatrix& {
    std::string key = m.label;
    if (m.label == "fusion" && !m.custom_table) key += ":" + target;
    auto it = matrices.find(key);
    if (it != matrices.end()) return it->second;

    SimilarityMatrix sm;
    if (m.custom_table) {
      sm = similarity_matrix(*m.custom_table, SimilarityMethod::Custom);
    } else if (m.label == "attributes") {
      sm = similarity_matrix(archive.attributes);
    } else if (m.label == "aef") {
      sm = similarity_matrix(archive.embeddings);
    } else if (m.label == "fusion") {
      const std::string model_path =
          plan.output_dir + "/models/expb_fusion_" + sanitize(target) + ".bin";
      TrainedModel fusion_model;
      if (fs::exists(model_path)) {
        fusion_model = load_model(model_path);
      } else {
        ModelConfig cfg = plan.model;
        cfg.n_static = static_cast<int>(archive.attributes.dim());
        cfg.mode = FrontendMode::AttrFc;
        cfg.seed = derive_seed(plan.master_seed, "exp-b|fusion-model|" + target);
        std::vector<BasinId> donors;
        for (const auto& id : basins)
          if (id != target) donors.push_back(id);
        std::cerr << "[exp-b] training fusion front end for target " << target << "\n";
        fusion_model = train(cfg, archive, archive.attributes, donors, plan.train_period);
        save_model(fusion_model, model_path);
      }
      sm = similarity_matrix(extract_fusion_embeddings(fusion_model, archive.attributes));
    } else {
      throw std::invalid_argument("exp-b: no ranking source for method '" + m.label + "'");
    }
    return matrices.emplace(std::move(key), std::move(sm)).first->second;
  };

  // Training results are memoized on (target, donor set, seed) so methods
  // that select identical donor sets coincide exactly.
  std::map<std::string, double> memo_nse;

  int done = 0;
  for (const auto& cell : cells) {
    ++done;
    if (log.complete(cell.key, 1)) {
      ++stats.cells_skipped;
      continue;
    }
    log.drop_cell(cell.key);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      std::vector<BasinId> donors;
      if (cell.spec->kind == MethodSpec::Kind::Random) {
        donors = select_random(basins, cell.target, cell.k,
                               derive_seed(plan.master_seed,
                                           "exp-b|random|" + cell.target + "|k" +
                                               std::to_string(cell.k) + "|s" +
                                               std::to_string(cell.seed_idx)));
      } else {
        donors = rank_and_select(ranking_matrix(*cell.spec, cell.target), cell.target, cell.k);
      }
      // No-leakage guard: the target must never train itself.
      for (const auto& id : donors)
        if (id == cell.target)
          throw std::logic_error("exp-b: target " + cell.target + " leaked into its donor set");

      std::sort(donors.begin(), donors.end());  // canonical order: equal sets train identically
      const uint64_t dhash = donor_set_hash(donors);
      const uint64_t train_seed =
          derive_seed(plan.master_seed, "exp-b|cell|" + cell.target + "|s" +
                                            std::to_string(cell.seed_idx) + "|donors:" +
                                            std::to_string(dhash));
      const std::string memo_key =
          cell.target + "|" + std::to_string(dhash) + "|" + std::to_string(train_seed);

      double nse_value;
      auto hit = memo_nse.find(memo_key);
      if (hit != memo_nse.end()) {
        nse_value = hit->second;
      } else {
        ModelConfig cfg = plan.model;
        cfg.n_static = static_cast<int>(model_table.dim());
        cfg.mode = FrontendMode::JointMlp;
        cfg.seed = train_seed;
        const CellOutput out = backend->run(cfg, archive, model_table, donors, plan.train_period,
                                            {cell.target}, plan.test_period);
        const auto obs = archive.observed_flow(cell.target, plan.test_period);
        nse_value = nse(obs, out.sims.at(cell.target)).value_or(kMissing);
        memo_nse.emplace(memo_key, nse_value);
      }
      log.append({"exp-b", cell.key, cell.target, cell.method, std::to_string(cell.k),
                  "s" + std::to_string(cell.seed_idx), "nse", fmt(nse_value)});
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0).count();
      runlog.note("exp-b", cell.key, "ok", ms);
      std::cerr << "[exp-b] " << cell.key << " nse=" << nse_value << " (" << ms / 1000.0
                << " s, " << done << "/" << cells.size() << ")\n";
      ++stats.cells_run;
    } catch (const std::exception& e) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0).count();
      runlog.note("exp-b", cell.key, std::string("error: ") + e.what(), ms);
      std::cerr << "[exp-b] " << cell.key << " FAILED: " << e.what() << "\n";
      ++stats.cells_failed;
    }
  }

  std::vector<std::string> cell_order;
  for (const auto& c : cells) cell_order.push_back(c.key);
  log.finalize(cell_order);
  return stats;
}

// ---------------------------------------------------------------------------
// Cross-regime (leave-one-cluster-out)

RunStats run_cross_regime(const ExperimentPlan& plan) {
  if (!plan.archive) throw std::invalid_argument("cross-regime: no archive");
  const BasinArchive& archive = *plan.archive;
  fs::create_directories(plan.output_dir);
  ResultLog log(plan.output_dir + "/results_cross-regime.csv",
                {"experiment", "cell", "representation", "cluster", "basin_id", "metric", "value"});
  RunLog runlog(plan.output_dir + "/runlog_cross-regime.csv");
  LstmBackend default_backend;
  ModelBackend* backend = plan.backend ? plan.backend : &default_backend;

  log.drop_cells_with_prefix("cluster:");

  RunStats stats;
  std::vector<std::string> cell_order;

  const std::vector<std::pair<std::string, const StaticTable*>> reprs = {
      {"attributes", &archive.attributes}, {"aef", &archive.embeddings}};

  for (const auto& [repr, table] : reprs) {
    const auto [points, col_stats] = standardize_columns(table->values);
    (void)col_stats;
    const int k_max = std::min(plan.cluster_k_max, static_cast<int>(points.size()));
    KSelection sel = select_k(points, plan.cluster_k_min, k_max,
                              derive_seed(plan.master_seed, "cr|cluster|" + repr));
    sel.model.basins = table->basins;
    sel.model.representation = repr;

    {
      csv::Writer w(plan.output_dir + "/clusters_" + repr + ".csv");
      w.row({"basin_id", "cluster"});
      for (size_t i = 0; i < sel.model.basins.size(); ++i)
        w.row({sel.model.basins[i], std::to_string(sel.model.assignments[i])});
      w.commit();
      csv::Writer p(plan.output_dir + "/silhouette_profile_" + repr + ".csv");
      p.row({"K", "score"});
      for (const auto& [k, score] : sel.profile) p.row({std::to_string(k), fmt(score)});
      p.commit();
    }
    const std::string cluster_cell = "cluster:" + repr;
    log.append({"cross-regime", cluster_cell, repr, "", "", "chosen_k",
                std::to_string(sel.best_k)});
    log.append({"cross-regime", cluster_cell, repr, "", "", "best_silhouette",
                fmt(sel.model.silhouette)});
    cell_order.push_back(cluster_cell);

    const auto splits = loco_splits(sel.model, plan.train_period, plan.test_period);
    std::vector<double> repr_nse;
    for (size_t c = 0; c < splits.size(); ++c) {
      const std::string cell = "train:" + repr + ":c" + std::to_string(c);
      cell_order.push_back(cell);
      ++stats.cells_total;
      const size_t expected = 4 + splits[c].test_basins.size();
      if (log.complete(cell, expected)) {
        ++stats.cells_skipped;
        for (const auto& row : log.rows_of(cell))
          if (row[5] == "nse") repr_nse.push_back(csv::parse_double_or_missing(row[6], cell));
        continue;
      }
      log.drop_cell(cell);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        ModelConfig cfg = plan.model;
        cfg.n_static = static_cast<int>(table->dim());
        cfg.mode = FrontendMode::JointMlp;
        cfg.seed = derive_seed(plan.master_seed, "cr|train|" + repr + "|c" + std::to_string(c));
        const CellOutput out =
            backend->run(cfg, archive, *table, splits[c].train_basins, plan.train_period,
                         splits[c].test_basins, plan.test_period);
        const std::string cidx = "c" + std::to_string(c);
        for (const auto& [metric, value] :
             std::vector<std::pair<std::string, double>>{{"train_loss_first", out.loss_first},
                                                         {"train_loss_last", out.loss_last},
                                                         {"train_best_epoch", out.best_epoch},
                                                         {"train_val_nse", out.val_nse}})
          log.append({"cross-regime", cell, repr, cidx, "", metric, fmt(value)});
        for (const auto& basin : splits[c].test_basins) {
          const auto obs = archive.observed_flow(basin, plan.test_period);
          const double score = nse(obs, out.sims.at(basin)).value_or(kMissing);
          log.append({"cross-regime", cell, repr, cidx, basin, "nse", fmt(score)});
          repr_nse.push_back(score);
        }
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0).count();
        runlog.note("cross-regime", cell, "ok", ms);
        std::cerr << "[cross-regime] " << cell << " done (" << ms / 1000.0 << " s)\n";
        ++stats.cells_run;
      } catch (const std::exception& e) {
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0).count();
        runlog.note("cross-regime", cell, std::string("error: ") + e.what(), ms);
        std::cerr << "[cross-regime] " << cell << " FAILED: " << e.what() << "\n";
        ++stats.cells_failed;
      }
    }
    write_cdf_file(plan.output_dir + "/cdf_crossregime_" + repr + ".csv", repr_nse);
  }

  log.finalize(cell_order);
  return stats;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

void summarize_group(csv::Writer& w, const std::string& group, std::vector<double>& values) {
  std::vector<double> finite;
  for (double v : values)
    if (std::isfinite(v)) finite.push_back(v);
  double mean = kMissing;
  if (!finite.empty()) {
    mean = 0.0;
    for (double v : finite) mean += v;
    mean /= static_cast<double>(finite.size());
  }
  const double med = median_finite(finite).value_or(kMissing);
  w.row({group, fmt(med), fmt(mean), std::to_string(finite.size())});
}

}  // namespace

void write_reports(const std::string& output_dir) {
  // exp-a: median of per-basin bootstrapped medians per (variant, setting).
  if (fs::exists(output_dir + "/results_exp-a.csv")) {
    const auto t = csv::read_file(output_dir + "/results_exp-a.csv");
    std::map<std::string, std::vector<double>> groups;
    for (const auto& row : t.rows) {
      if (row[6] != "nse_boot_median" && row[6] != "kge_boot_median") continue;
      groups[row[2] + "/" + row[3] + "/" + row[6]].push_back(
          csv::parse_double_or_missing(row[7], "results_exp-a.csv"));
    }
    csv::Writer w(output_dir + "/summary_exp-a.csv");
    w.row({"group", "median", "mean", "n"});
    for (auto& [group, values] : groups) summarize_group(w, group, values);
    w.commit();
  }
  // exp-b: NSE by (method, k) across targets and seeds.
  if (fs::exists(output_dir + "/results_exp-b.csv")) {
    const auto t = csv::read_file(output_dir + "/results_exp-b.csv");
    std::map<std::string, std::vector<double>> groups;
    for (const auto& row : t.rows) {
      if (row[6] != "nse") continue;
      groups[row[3] + "/k" + row[4]].push_back(
          csv::parse_double_or_missing(row[7], "results_exp-b.csv"));
    }
    csv::Writer w(output_dir + "/summary_exp-b.csv");
    w.row({"group", "median", "mean", "n"});
    for (auto& [group, values] : groups) summarize_group(w, group, values);
    w.commit();
  }
  // cross-regime: per-basin NSE per representation.
  if (fs::exists(output_dir + "/results_cross-regime.csv")) {
    const auto t = csv::read_file(output_dir + "/results_cross-regime.csv");
    std::map<std::string, std::vector<double>> groups;
    for (const auto& row : t.rows) {
      if (row[5] != "nse") continue;
      groups[row[2]].push_back(
          csv::parse_double_or_missing(row[6], "results_cross-regime.csv"));
    }
    csv::Writer w(output_dir + "/summary_cross-regime.csv");
    w.row({"group", "median", "mean", "n"});
    for (auto& [group, values] : groups) summarize_group(w, group, values);
    w.commit();
  }
}

}  // namespace pubflow
