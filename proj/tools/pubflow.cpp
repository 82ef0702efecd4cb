// pubflow — similarity-guided donor selection and LSTM rainfall-runoff
// modeling for prediction in ungauged basins.
//
// One binary, subcommand style. Machine-readable outputs go to files under
// the configured output directory; progress goes to stderr.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>

#include "pubflow/clustering.hpp"
#include "pubflow/config.hpp"
#include "pubflow/csv.hpp"
#include "pubflow/dataset.hpp"
#include "pubflow/experiments.hpp"
#include "pubflow/infotheory.hpp"
#include "pubflow/metrics.hpp"
#include "pubflow/model.hpp"
#include "pubflow/rng.hpp"
#include "pubflow/similarity.hpp"
#include "pubflow/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pubflow;

namespace {

struct GlobalFlags {
  std::string config_path;
  std::string out_override;
  int jobs_override = 0;
  std::optional<uint64_t> seed_override;
};

RunConfig load_config(const GlobalFlags& g) {
  if (g.config_path.empty())
    throw std::runtime_error("this subcommand needs --config <file>");
  RunConfig cfg = parse_config(g.config_path);
  if (!g.out_override.empty()) cfg.output_dir = g.out_override;
  if (g.jobs_override > 0) cfg.jobs = g.jobs_override;
  if (g.seed_override) cfg.master_seed = *g.seed_override;
  return cfg;
}

BasinArchive load_archive_checked(const RunConfig& cfg) {
  std::cerr << "loading archive from " << cfg.paths.attributes << " ...\n";
  BasinArchive a = load_archive(cfg.paths);
  std::cerr << "archive: " << a.basins().size() << " basins\n";
  return a;
}

int finish_run(const RunStats& stats, const std::string& label) {
  std::cerr << "[" << label << "] cells: " << stats.cells_total << " total, " << stats.cells_run
            << " run, " << stats.cells_skipped << " resumed, " << stats.cells_failed
            << " failed\n";
  return stats.cells_failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"similarity-guided donor selection and LSTM rainfall-runoff modeling"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags (--config, --out, ...) may follow the subcommand

  GlobalFlags g;
  app.add_option("--config", g.config_path, "run configuration file");
  app.add_option("--out", g.out_override, "override the output directory");
  app.add_option("--jobs", g.jobs_override, "max concurrent experiment cells");
  uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "override the master seed");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic basin fleet");
  int synth_basins = 8, synth_days = 1500;
  uint64_t synth_seed = 7;
  std::string synth_out = "synthetic";
  synth->add_option("--basins", synth_basins, "number of basins")->required();
  synth->add_option("--days", synth_days, "number of days")->required();
  synth->add_option("--fleet-seed", synth_seed, "generator seed")->required();
  synth->add_option("--dir", synth_out, "destination directory")->required();

  // check-data
  auto* check = app.add_subcommand("check-data", "validate archive coverage for the run periods");

  // similarity
  auto* sim = app.add_subcommand("similarity", "export a similarity matrix or target stripe");
  std::string sim_method = "aef", sim_target, sim_model;
  sim->add_option("--method", sim_method, "attributes|aef|fusion");
  sim->add_option("--target", sim_target, "write a donor stripe for this basin");
  sim->add_option("--model", sim_model, "trained attr-fc model (fusion method)");

  // mi
  auto* mi = app.add_subcommand("mi", "attribute-vs-embedding mutual information matrix");

  // cluster
  auto* cluster = app.add_subcommand("cluster", "silhouette-selected k-means per representation");

  // train
  auto* tr = app.add_subcommand("train", "train one model");
  std::string tr_variant = "attributes", tr_mode = "joint-mlp", tr_donors, tr_out;
  uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  tr->add_option("--variant", tr_variant, "static inputs: attributes|aef");
  tr->add_option("--mode", tr_mode, "front end: joint-mlp|attr-fc");
  tr->add_option("--donors", tr_donors, "file listing donor basin ids (default: all)");
  tr->add_option("--model-out", tr_out, "output model path");
  tr->add_option("--train-seed", tr_seed, "weight init / sampling seed")
      ->each([&](const std::string&) { tr_seed_set = true; });

  // predict
  auto* pr = app.add_subcommand("predict", "predict one basin with a trained model");
  std::string pr_model, pr_basin, pr_period = "test", pr_out;
  pr->add_option("--model", pr_model, "model file")->required();
  pr->add_option("--basin", pr_basin, "target basin id")->required();
  pr->add_option("--period", pr_period, "train|test|YYYY-MM-DD..YYYY-MM-DD");
  pr->add_option("--out-file", pr_out, "output CSV path");

  // experiments
  auto* expa = app.add_subcommand("exp-a", "IS/OOS variant comparison with bootstrap and KS");
  auto* expb = app.add_subcommand("exp-b", "top-k donor scaling across selection methods");
  auto* cross = app.add_subcommand("cross-regime", "leave-one-cluster-out generalization");

  // report
  auto* report = app.add_subcommand("report", "summarize result tables in the output directory");

  CLI11_PARSE(app, argc, argv);
  if (!seed_opt->empty()) g.seed_override = seed_val;

  try {
    if (synth->parsed()) {
      const BasinArchive a = generate_synthetic_fleet(synth_basins, synth_days, synth_seed);
      write_archive_csv(a, synth_out);
      std::cerr << "wrote " << a.basins().size() << "-basin fleet to " << synth_out << "\n";
      return 0;
    }

    if (check->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      check_archive(a, cfg.train_period, cfg.test_period, cfg.model.sequence_length);
      std::cerr << "archive ok: " << a.basins().size() << " basins cover both periods\n";
      return 0;
    }

    if (sim->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      fs::create_directories(cfg.output_dir);
      SimilarityMatrix m;
      if (sim_method == "attributes") {
        m = similarity_matrix(a.attributes);
      } else if (sim_method == "aef") {
        m = similarity_matrix(a.embeddings);
      } else if (sim_method == "fusion") {
        if (sim_model.empty())
          throw std::runtime_error("similarity --method fusion needs --model <attr-fc model>");
        m = similarity_matrix(extract_fusion_embeddings(load_model(sim_model), a.attributes));
      } else {
        throw std::runtime_error("unknown --method '" + sim_method + "'");
      }
      std::string path = cfg.output_dir + "/similarity_" + sim_method;
      if (!sim_target.empty()) path += "_" + sim_target;
      path += ".csv";
      export_similarity(m, sim_target.empty() ? std::nullopt : std::make_optional(sim_target),
                        path);
      std::cerr << "wrote " << path << "\n";
      return 0;
    }

    if (mi->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      fs::create_directories(cfg.output_dir);
      const MiMatrix m = mi_matrix(a.attributes, a.embeddings, cfg.mi_bins);
      export_mi_matrix(m, cfg.output_dir + "/mi_matrix.csv");
      std::cerr << "wrote " << cfg.output_dir << "/mi_matrix.csv\n";
      return 0;
    }

    if (cluster->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      fs::create_directories(cfg.output_dir);
      for (const auto& [kind, table] :
           {std::pair<std::string, const StaticTable*>{"attributes", &a.attributes},
            {"aef", &a.embeddings}}) {
        const auto [points, stats] = standardize_columns(table->values);
        (void)stats;
        const int k_max = std::min(cfg.cluster_k_max, static_cast<int>(points.size()));
        KSelection sel = select_k(points, cfg.cluster_k_min, k_max,
                                  derive_seed(cfg.master_seed, "cr|cluster|" + kind));
        csv::Writer w(cfg.output_dir + "/clusters_" + kind + ".csv");
        w.row({"basin_id", "cluster"});
        for (size_t i = 0; i < table->basins.size(); ++i)
          w.row({table->basins[i], std::to_string(sel.model.assignments[i])});
        w.commit();
        csv::Writer p(cfg.output_dir + "/silhouette_profile_" + kind + ".csv");
        p.row({"K", "score"});
        for (const auto& [k, score] : sel.profile) p.row({std::to_string(k), csv::format_double(score)});
        p.commit();
        std::cerr << kind << ": chose K=" << sel.best_k << " (silhouette "
                  << sel.model.silhouette << ")\n";
      }
      return 0;
    }

    if (tr->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      fs::create_directories(cfg.output_dir);
      const StaticTable& table = tr_variant == "aef" ? a.embeddings : a.attributes;
      if (tr_variant != "aef" && tr_variant != "attributes")
        throw std::runtime_error("--variant must be attributes|aef");
      ModelConfig mc = cfg.model;
      mc.n_static = static_cast<int>(table.dim());
      mc.mode = parse_frontend_mode(tr_mode);
      mc.seed = tr_seed_set ? tr_seed : derive_seed(cfg.master_seed, "cli|train");
      const std::vector<BasinId> donors =
          tr_donors.empty() ? a.basins() : read_basin_list(tr_donors);
      const TrainedModel model = train(mc, a, table, donors, cfg.train_period);
      const std::string out_path =
          tr_out.empty() ? cfg.output_dir + "/model_" + tr_variant + ".bin" : tr_out;
      save_model(model, out_path);
      std::cerr << "trained on " << donors.size() << " donors; best epoch " << model.best_epoch
                << "; wrote " << out_path << "\n";
      return 0;
    }

    if (pr->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      fs::create_directories(cfg.output_dir);
      const TrainedModel model = load_model(pr_model);
      const StaticTable& table =
          model.config.n_static == static_cast<int>(a.embeddings.dim()) ? a.embeddings
                                                                        : a.attributes;
      Period period = cfg.test_period;
      if (pr_period == "train")
        period = cfg.train_period;
      else if (pr_period != "test")
        period = parse_period(pr_period);
      const TimeSeriesFrame sim = predict(model, a, table, pr_basin, period);
      const std::string out_path =
          pr_out.empty() ? cfg.output_dir + "/predictions_" + pr_basin + ".csv" : pr_out;
      csv::Writer w(out_path);
      w.row({"date", "q_sim_mm_day"});
      const auto& q = sim.column("q_sim_mm_day");
      for (size_t i = 0; i < sim.size(); ++i)
        w.row({sim.date_at(i).to_string(), csv::format_double(q[i])});
      w.commit();
      std::cerr << "wrote " << out_path << "\n";
      return 0;
    }

    if (expa->parsed() || expb->parsed() || cross->parsed()) {
      const RunConfig cfg = load_config(g);
      const BasinArchive a = load_archive_checked(cfg);
      fs::create_directories(cfg.output_dir);
      const ExperimentPlan plan = ExperimentPlan::from_config(cfg, a);
      RunStats stats;
      std::string label;
      if (expa->parsed()) {
        label = "exp-a";
        stats = run_experiment_a(plan);
      } else if (expb->parsed()) {
        label = "exp-b";
        stats = run_experiment_b(plan);
      } else {
        label = "cross-regime";
        stats = run_cross_regime(plan);
      }
      return finish_run(stats, label);
    }

    if (report->parsed()) {
      const RunConfig cfg = load_config(g);
      write_reports(cfg.output_dir);
      std::cerr << "wrote summaries under " << cfg.output_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}
