#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pubflow/dataset.hpp"

namespace pubflow {

/// How static descriptors enter the network.
///   JointMlp: concatenate (dyn_t, static) at every timestep, pass through the
///             front end, feed the LSTM the transformed vector.
///   AttrFc:   transform the static vector alone through the front end once,
///             concatenate the result with the raw dyn_t at every timestep.
enum class FrontendMode { JointMlp, AttrFc };

std::string_view frontend_mode_name(FrontendMode m);
FrontendMode parse_frontend_mode(std::string_view name);

struct ModelConfig {
  int n_dyn = 7;
  int n_static = 17;
  FrontendMode mode = FrontendMode::JointMlp;
  int frontend_width = 32;
  int hidden_size = 128;
  double dropout = 0.4;
  int sequence_length = 365;
  int batch_size = 256;
  double learning_rate = 1e-3;
  int epochs = 30;
  uint64_t seed = 0;
  /// 0 = use every valid window each epoch; otherwise sample that many
  /// uniformly without replacement.
  int max_windows_per_epoch = 0;

  int frontend_input() const {
    return mode == FrontendMode::JointMlp ? n_dyn + n_static : n_static;
  }
  int lstm_input() const {
    return mode == FrontendMode::JointMlp ? frontend_width : n_dyn + frontend_width;
  }
  void validate() const;
};

/// All weights of the front end + LSTM + linear head. LSTM gate rows are
/// ordered [input, forget, cell, output], each hidden_size tall.
struct ParamSet {
  Eigen::MatrixXd frontend_w;  // frontend_width x frontend_input
  Eigen::VectorXd frontend_b;  // frontend_width
  Eigen::MatrixXd lstm_w;      // 4H x lstm_input
  Eigen::MatrixXd lstm_u;      // 4H x H
  Eigen::VectorXd lstm_b;      // 4H
  Eigen::VectorXd head_w;      // H
  Eigen::VectorXd head_b;      // 1

  static ParamSet zeros(const ModelConfig& cfg);

  template <typename F>
  void for_each_array(F&& f) {
    f(frontend_w); f(frontend_b); f(lstm_w); f(lstm_u); f(lstm_b); f(head_w); f(head_b);
  }
  template <typename F>
  void for_each_array(F&& f) const {
    f(frontend_w); f(frontend_b); f(lstm_w); f(lstm_u); f(lstm_b); f(head_w); f(head_b);
  }
  size_t coeff_count() const;
};

/// Seeded uniform init in +-1/sqrt(fan-in) per array; forget-gate bias +1.
ParamSet init_params(const ModelConfig& cfg, uint64_t seed);

/// A batch of standardized samples gathered for the network.
struct Batch {
  Eigen::MatrixXd dyn;      // B x (seq * n_dyn), timestep-major blocks
  Eigen::MatrixXd statics;  // B x n_static
  Eigen::VectorXd targets;  // B (standardized flow at the window end)

  int size() const { return static_cast<int>(dyn.rows()); }
};

/// Prediction for one window: standardized flow at the window's final day.
/// `dropout_mask` (hidden_size entries, inverted-dropout scaling baked in)
/// is only supplied during training; inference applies the identity.
double forward(const ModelConfig& cfg, const ParamSet& params, const Eigen::MatrixXd& dyn_window,
               const Eigen::VectorXd& statics, const Eigen::VectorXd* dropout_mask = nullptr);

/// Batched forward, one output per row.
Eigen::VectorXd forward_batch(const ModelConfig& cfg, const ParamSet& params, const Batch& batch,
                              const Eigen::MatrixXd* dropout_masks = nullptr);

/// Hidden-state trajectory h_1..h_T for one window (diagnostics/tests).
std::vector<Eigen::VectorXd> lstm_hidden_trace(const ModelConfig& cfg, const ParamSet& params,
                                               const Eigen::MatrixXd& dyn_window,
                                               const Eigen::VectorXd& statics);

/// Mean-squared-error loss over the batch plus exact analytic gradients via
/// backpropagation through time.
std::pair<double, ParamSet> loss_and_grad(const ModelConfig& cfg, const ParamSet& params,
                                          const Batch& batch,
                                          const Eigen::MatrixXd* dropout_masks = nullptr);

/// Adam optimizer state (first/second moments plus the step counter).
struct AdamState {
  ParamSet m;
  ParamSet v;
  long t = 0;

  static AdamState zeros(const ModelConfig& cfg);
};

/// Standard Adam update (beta1=0.9, beta2=0.999, eps=1e-8, bias correction).
void adam_step(ParamSet& params, AdamState& state, const ParamSet& grads, double lr);

/// A trained model: best-epoch parameters plus the standardization stats the
/// network was fitted with (always from donor training data only).
struct TrainedModel {
  ModelConfig config;
  ParamSet params;
  int best_epoch = 0;  // 1-based
  ColumnStats forcing_stats;  // 7 columns
  ColumnStats static_stats;   // n_static columns
  ColumnStats flow_stats;     // 1 column
  std::vector<BasinId> donors;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_nse;
};

/// Trains on (basin, end-date) windows sampled without replacement per epoch
/// from the donors over the train period, holding out the final 20% of the
/// period as the epoch-selection slice (median per-basin NSE picks the best
/// epoch). Deterministic per (config, archive, donors, seed).
TrainedModel train(const ModelConfig& cfg, const BasinArchive& archive,
                   const StaticTable& statics, const std::vector<BasinId>& donors,
                   const Period& train_period);

/// Sliding daily windows over `period`; output de-standardized to mm/day.
TimeSeriesFrame predict(const TrainedModel& model, const BasinArchive& archive,
                        const StaticTable& statics, const BasinId& basin, const Period& period);

/// Applies training standardization plus the front end to each attribute row
/// (attr-fc models only) and returns the fixed-length embedding table.
StaticTable extract_fusion_embeddings(const TrainedModel& model, const StaticTable& table);

/// Binary serialization; parameter round-trips are bit-exact.
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace pubflow
