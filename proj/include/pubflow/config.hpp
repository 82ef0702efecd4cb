#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pubflow/dataset.hpp"
#include "pubflow/model.hpp"

namespace pubflow {

/// Structured run configuration, parsed from a flat key=value file with
/// section-prefixed keys (see README for the full key reference). Unknown
/// keys are errors so a typo cannot silently fall back to a default.
struct RunConfig {
  // data.*
  ArchivePaths paths;

  // period.*
  Period train_period;
  Period test_period;

  // run.*
  uint64_t master_seed = 42;
  std::string output_dir = "out";
  int jobs = 1;

  // model.*
  ModelConfig model;  // n_static/mode/seed set per use site

  // expa.*
  int expa_seeds = 5;
  int expa_folds = 5;

  // bootstrap.*
  int bootstrap_replicates = 100;
  double bootstrap_fraction = 0.8;

  // ks.*
  bool ks_on_replicates = false;
  bool ks_exact_small = false;

  // expb.*
  std::vector<BasinId> expb_targets;
  std::vector<int> expb_k_ladder = {100, 200, 300, 400, 500, 600};
  bool expb_k_ladder_all = true;  // append the all-donors baseline (k = n-1)
  int expb_seeds_per_cell = 1;
  bool expb_include_random = true;
  std::string expb_model_variant = "attributes";  // static set used by exp-b models

  // mi.*
  int mi_bins = 16;

  // cluster.*
  int cluster_k_min = 2;
  int cluster_k_max = 15;
};

/// Parses and validates a config file. The PUBFLOW_OUTPUT_DIR environment
/// variable, when set, overrides run.output_dir.
RunConfig parse_config(const std::string& path);

/// Same parser over in-memory text (tests).
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<memory>");

}  // namespace pubflow
