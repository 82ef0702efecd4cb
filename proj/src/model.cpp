#include "pubflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "pubflow/metrics.hpp"
#include "pubflow/rng.hpp"

namespace pubflow {

std::string_view frontend_mode_name(FrontendMode m) {
  return m == FrontendMode::JointMlp ? "joint-mlp" : "attr-fc";
}

FrontendMode parse_frontend_mode(std::string_view name) {
  if (name == "joint-mlp") return FrontendMode::JointMlp;
  if (name == "attr-fc") return FrontendMode::AttrFc;
  throw std::invalid_argument("unknown frontend mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (n_dyn < 1 || n_static < 1 || frontend_width < 1 || hidden_size < 1 ||
      sequence_length < 1 || batch_size < 1 || epochs < 1)
    throw std::invalid_argument("ModelConfig: all sizes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("ModelConfig: dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("ModelConfig: learning rate <= 0");
  if (max_windows_per_epoch < 0)
    throw std::invalid_argument("ModelConfig: max_windows_per_epoch < 0");
}

ParamSet ParamSet::zeros(const ModelConfig& cfg) {
  ParamSet p;
  p.frontend_w = Eigen::MatrixXd::Zero(cfg.frontend_width, cfg.frontend_input());
  p.frontend_b = Eigen::VectorXd::Zero(cfg.frontend_width);
  p.lstm_w = Eigen::MatrixXd::Zero(4 * cfg.hidden_size, cfg.lstm_input());
  p.lstm_u = Eigen::MatrixXd::Zero(4 * cfg.hidden_size, cfg.hidden_size);
  p.lstm_b = Eigen::VectorXd::Zero(4 * cfg.hidden_size);
  p.head_w = Eigen::VectorXd::Zero(cfg.hidden_size);
  p.head_b = Eigen::VectorXd::Zero(1);
  return p;
}

size_t ParamSet::coeff_count() const {
  size_t n = 0;
  for_each_array([&](const auto& a) { n += static_cast<size_t>(a.size()); });
  return n;
}

ParamSet init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamSet p = ParamSet::zeros(cfg);
  Rng rng(seed);
  auto fill = [&](Eigen::MatrixXd& m, double bound) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  };
  auto fillv = [&](Eigen::VectorXd& v, double bound) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-bound, bound);
  };
  const double bf = 1.0 / std::sqrt(static_cast<double>(cfg.frontend_input()));
  const double bw = 1.0 / std::sqrt(static_cast<double>(cfg.lstm_input()));
  const double bh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
  fill(p.frontend_w, bf);
  fillv(p.frontend_b, bf);
  fill(p.lstm_w, bw);
  fill(p.lstm_u, bh);
  fillv(p.lstm_b, bh);
  fillv(p.head_w, bh);
  fillv(p.head_b, bh);
  // Forget gate opens by default so early training can carry state.
  p.lstm_b.segment(cfg.hidden_size, cfg.hidden_size).setOnes();
  return p;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd sigmoid(const MatrixXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

/// Per-timestep activations kept for backpropagation.
struct Tape {
  std::vector<MatrixXd> gate_i, gate_f, gate_g, gate_o, tanh_c;
  std::vector<MatrixXd> cell;    // T+1 entries, cell[0] = 0
  std::vector<MatrixXd> hidden;  // T+1 entries, hidden[0] = 0
  std::vector<MatrixXd> front;   // joint mode: per-t frontend activation
  MatrixXd front_static;         // attr-fc mode: single frontend activation
};

void check_shapes(const ModelConfig& cfg, const ParamSet& p) {
  const ParamSet z = ParamSet::zeros(cfg);
  bool ok = p.frontend_w.rows() == z.frontend_w.rows() && p.frontend_w.cols() == z.frontend_w.cols() &&
            p.frontend_b.size() == z.frontend_b.size() && p.lstm_w.rows() == z.lstm_w.rows() &&
            p.lstm_w.cols() == z.lstm_w.cols() && p.lstm_u.rows() == z.lstm_u.rows() &&
            p.lstm_u.cols() == z.lstm_u.cols() && p.lstm_b.size() == z.lstm_b.size() &&
            p.head_w.size() == z.head_w.size() && p.head_b.size() == 1;
  if (!ok) throw std::invalid_argument("ParamSet shapes inconsistent with ModelConfig");
}

/// Runs the network over a batch. When `tape` is given every intermediate is
/// recorded for the backward pass; otherwise only O(B*H) state is kept.
VectorXd run_forward(const ModelConfig& cfg, const ParamSet& p, const Batch& batch,
                     const MatrixXd* masks, Tape* tape) {
  const int B = batch.size();
  const int T = cfg.sequence_length;
  const int H = cfg.hidden_size;
  const int nd = cfg.n_dyn;
  const int F = cfg.frontend_width;

  if (batch.dyn.cols() != static_cast<Eigen::Index>(T) * nd)
    throw std::invalid_argument("batch window width != sequence_length * n_dyn");
  if (batch.statics.cols() != cfg.n_static)
    throw std::invalid_argument("batch statics width != n_static");
  if (!batch.dyn.allFinite())
    throw std::invalid_argument("missing forcing value inside window");

  MatrixXd h = MatrixXd::Zero(B, H);
  MatrixXd c = MatrixXd::Zero(B, H);

  MatrixXd front_static;   // attr-fc: B x F
  MatrixXd gates_static;   // attr-fc: B x 4H contribution of the static part
  MatrixXd pre_static;     // joint: B x F static contribution before tanh
  if (cfg.mode == FrontendMode::AttrFc) {
    front_static = ((batch.statics * p.frontend_w.transpose()).rowwise() +
                    p.frontend_b.transpose()).array().tanh().matrix();
    gates_static.noalias() = front_static * p.lstm_w.rightCols(F).transpose();
  } else {
    pre_static.noalias() = batch.statics * p.frontend_w.rightCols(cfg.n_static).transpose();
  }

  if (tape) {
    tape->gate_i.resize(static_cast<size_t>(T));
    tape->gate_f.resize(static_cast<size_t>(T));
    tape->gate_g.resize(static_cast<size_t>(T));
    tape->gate_o.resize(static_cast<size_t>(T));
    tape->tanh_c.resize(static_cast<size_t>(T));
    tape->cell.resize(static_cast<size_t>(T) + 1);
    tape->hidden.resize(static_cast<size_t>(T) + 1);
    tape->cell[0] = c;
    tape->hidden[0] = h;
    if (cfg.mode == FrontendMode::JointMlp)
      tape->front.resize(static_cast<size_t>(T));
    else
      tape->front_static = front_static;
  }

  MatrixXd gates(B, 4 * H);
  for (int t = 0; t < T; ++t) {
    const auto dyn_t = batch.dyn.middleCols(static_cast<Eigen::Index>(t) * nd, nd);
    if (cfg.mode == FrontendMode::JointMlp) {
      MatrixXd a = dyn_t * p.frontend_w.leftCols(nd).transpose();
      a += pre_static;
      a.rowwise() += p.frontend_b.transpose();
      a = a.array().tanh().matrix();
      gates.noalias() = a * p.lstm_w.transpose();
      if (tape) tape->front[static_cast<size_t>(t)] = std::move(a);
    } else {
      gates.noalias() = dyn_t * p.lstm_w.leftCols(nd).transpose();
      gates += gates_static;
    }
    gates.noalias() += h * p.lstm_u.transpose();
    gates.rowwise() += p.lstm_b.transpose();

    MatrixXd gi = sigmoid(gates.middleCols(0, H));
    MatrixXd gf = sigmoid(gates.middleCols(H, H));
    MatrixXd gg = gates.middleCols(2 * H, H).array().tanh().matrix();
    MatrixXd go = sigmoid(gates.middleCols(3 * H, H));

    c = (gf.array() * c.array() + gi.array() * gg.array()).matrix();
    MatrixXd tc = c.array().tanh().matrix();
    h = (go.array() * tc.array()).matrix();

    if (tape) {
      const auto ut = static_cast<size_t>(t);
      tape->gate_i[ut] = std::move(gi);
      tape->gate_f[ut] = std::move(gf);
      tape->gate_g[ut] = std::move(gg);
      tape->gate_o[ut] = std::move(go);
      tape->tanh_c[ut] = std::move(tc);
      tape->cell[ut + 1] = c;
      tape->hidden[ut + 1] = h;
    }
  }

  MatrixXd h_final = h;
  if (masks) {
    if (masks->rows() != B || masks->cols() != H)
      throw std::invalid_argument("dropout mask shape mismatch");
    h_final = (h_final.array() * masks->array()).matrix();
  }
  VectorXd y = h_final * p.head_w;
  y.array() += p.head_b(0);
  return y;
}

/// Backward pass over one tape; accumulates *sums* of per-sample gradients
/// into `grad` given dL/dy (not yet divided by the batch size).
void run_backward(const ModelConfig& cfg, const ParamSet& p, const Batch& batch,
                  const MatrixXd* masks, const Tape& tape, const VectorXd& dy, ParamSet& grad) {
  const int B = batch.size();
  const int T = cfg.sequence_length;
  const int H = cfg.hidden_size;
  const int nd = cfg.n_dyn;
  const int F = cfg.frontend_width;

  // Head.
  MatrixXd h_final = tape.hidden[static_cast<size_t>(T)];
  if (masks) h_final = (h_final.array() * masks->array()).matrix();
  grad.head_w.noalias() += h_final.transpose() * dy;
  grad.head_b(0) += dy.sum();

  MatrixXd dh = dy * p.head_w.transpose();  // B x H
  if (masks) dh = (dh.array() * masks->array()).matrix();
  MatrixXd dc = MatrixXd::Zero(B, H);

  MatrixXd dgates(B, 4 * H);
  MatrixXd dgates_acc;  // attr-fc: sum over t for the static LSTM columns
  MatrixXd dfront_acc;  // joint: sum over t of frontend pre-activation grads
  if (cfg.mode == FrontendMode::AttrFc) dgates_acc = MatrixXd::Zero(B, 4 * H);
  if (cfg.mode == FrontendMode::JointMlp) dfront_acc = MatrixXd::Zero(B, F);

  for (int t = T - 1; t >= 0; --t) {
    const auto ut = static_cast<size_t>(t);
    const MatrixXd& gi = tape.gate_i[ut];
    const MatrixXd& gf = tape.gate_f[ut];
    const MatrixXd& gg = tape.gate_g[ut];
    const MatrixXd& go = tape.gate_o[ut];
    const MatrixXd& tc = tape.tanh_c[ut];
    const MatrixXd& c_prev = tape.cell[ut];
    const MatrixXd& h_prev = tape.hidden[ut];
    const auto dyn_t = batch.dyn.middleCols(static_cast<Eigen::Index>(t) * nd, nd);

    dc.array() += dh.array() * go.array() * (1.0 - tc.array().square());
    dgates.middleCols(0, H) = (dc.array() * gg.array() * gi.array() * (1.0 - gi.array())).matrix();
    dgates.middleCols(H, H) =
        (dc.array() * c_prev.array() * gf.array() * (1.0 - gf.array())).matrix();
    dgates.middleCols(2 * H, H) = (dc.array() * gi.array() * (1.0 - gg.array().square())).matrix();
    dgates.middleCols(3 * H, H) =
        (dh.array() * tc.array() * go.array() * (1.0 - go.array())).matrix();

    grad.lstm_b.noalias() += dgates.colwise().sum().transpose();
    grad.lstm_u.noalias() += dgates.transpose() * h_prev;
    dh.noalias() = dgates * p.lstm_u;
    dc.array() *= gf.array();

    if (cfg.mode == FrontendMode::JointMlp) {
      const MatrixXd& a = tape.front[ut];
      grad.lstm_w.noalias() += dgates.transpose() * a;
      MatrixXd dpre = ((dgates * p.lstm_w).array() * (1.0 - a.array().square())).matrix();
      grad.frontend_w.leftCols(nd).noalias() += dpre.transpose() * dyn_t;
      dfront_acc += dpre;
    } else {
      grad.lstm_w.leftCols(nd).noalias() += dgates.transpose() * dyn_t;
      dgates_acc += dgates;
    }
  }

  if (cfg.mode == FrontendMode::JointMlp) {
    grad.frontend_w.rightCols(cfg.n_static).noalias() += dfront_acc.transpose() * batch.statics;
    grad.frontend_b.noalias() += dfront_acc.colwise().sum().transpose();
  } else {
    grad.lstm_w.rightCols(F).noalias() += dgates_acc.transpose() * tape.front_static;
    MatrixXd da = dgates_acc * p.lstm_w.rightCols(F);
    MatrixXd dpre = (da.array() * (1.0 - tape.front_static.array().square())).matrix();
    grad.frontend_w.noalias() += dpre.transpose() * batch.statics;
    grad.frontend_b.noalias() += dpre.colwise().sum().transpose();
  }
}

/// Rows of `batch` in [lo, lo+len).
Batch slice_batch(const Batch& batch, int lo, int len) {
  Batch s;
  s.dyn = batch.dyn.middleRows(lo, len);
  s.statics = batch.statics.middleRows(lo, len);
  s.targets = batch.targets.segment(lo, len);
  return s;
}

constexpr int kChunk = 32;  // micro-batch size bounding the tape's memory

}  // namespace

double forward(const ModelConfig& cfg, const ParamSet& params, const Eigen::MatrixXd& dyn_window,
               const Eigen::VectorXd& statics, const Eigen::VectorXd* dropout_mask) {
  cfg.validate();
  check_shapes(cfg, params);
  if (dyn_window.rows() != cfg.sequence_length || dyn_window.cols() != cfg.n_dyn)
    throw std::invalid_argument("forward: window must be sequence_length x n_dyn");
  Batch b;
  b.dyn.resize(1, static_cast<Eigen::Index>(cfg.sequence_length) * cfg.n_dyn);
  for (int t = 0; t < cfg.sequence_length; ++t)
    b.dyn.block(0, static_cast<Eigen::Index>(t) * cfg.n_dyn, 1, cfg.n_dyn) = dyn_window.row(t);
  b.statics = statics.transpose();
  b.targets = VectorXd::Zero(1);
  MatrixXd mask;
  if (dropout_mask) {
    mask = dropout_mask->transpose();
    return run_forward(cfg, params, b, &mask, nullptr)(0);
  }
  return run_forward(cfg, params, b, nullptr, nullptr)(0);
}

Eigen::VectorXd forward_batch(const ModelConfig& cfg, const ParamSet& params, const Batch& batch,
                              const Eigen::MatrixXd* dropout_masks) {
  cfg.validate();
  check_shapes(cfg, params);
  const int B = batch.size();
  VectorXd out(B);
  for (int lo = 0; lo < B; lo += kChunk) {
    const int len = std::min(kChunk, B - lo);
    Batch s = slice_batch(batch, lo, len);
    if (dropout_masks) {
      MatrixXd m = dropout_masks->middleRows(lo, len);
      out.segment(lo, len) = run_forward(cfg, params, s, &m, nullptr);
    } else {
      out.segment(lo, len) = run_forward(cfg, params, s, nullptr, nullptr);
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> lstm_hidden_trace(const ModelConfig& cfg, const ParamSet& params,
                                               const Eigen::MatrixXd& dyn_window,
                                               const Eigen::VectorXd& statics) {
  cfg.validate();
  check_shapes(cfg, params);
  Batch b;
  b.dyn.resize(1, static_cast<Eigen::Index>(cfg.sequence_length) * cfg.n_dyn);
  for (int t = 0; t < cfg.sequence_length; ++t)
    b.dyn.block(0, static_cast<Eigen::Index>(t) * cfg.n_dyn, 1, cfg.n_dyn) = dyn_window.row(t);
  b.statics = statics.transpose();
  b.targets = VectorXd::Zero(1);
  Tape tape;
  run_forward(cfg, params, b, nullptr, &tape);
  std::vector<Eigen::VectorXd> trace;
  trace.reserve(static_cast<size_t>(cfg.sequence_length));
  for (int t = 1; t <= cfg.sequence_length; ++t)
    trace.push_back(tape.hidden[static_cast<size_t>(t)].row(0).transpose());
  return trace;
}

std::pair<double, ParamSet> loss_and_grad(const ModelConfig& cfg, const ParamSet& params,
                                          const Batch& batch,
                                          const Eigen::MatrixXd* dropout_masks) {
  cfg.validate();
  check_shapes(cfg, params);
  const int B = batch.size();
  if (B == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (!batch.targets.allFinite())
    throw std::invalid_argument("loss_and_grad: non-finite target (exclude missing upstream)");

  ParamSet grad = ParamSet::zeros(cfg);
  double sq_sum = 0.0;
  for (int lo = 0; lo < B; lo += kChunk) {
    const int len = std::min(kChunk, B - lo);
    Batch s = slice_batch(batch, lo, len);
    MatrixXd mask;
    const MatrixXd* mp = nullptr;
    if (dropout_masks) {
      mask = dropout_masks->middleRows(lo, len);
      mp = &mask;
    }
    Tape tape;
    VectorXd y = run_forward(cfg, params, s, mp, &tape);
    VectorXd resid = y - s.targets;
    sq_sum += resid.squaredNorm();
    VectorXd dy = 2.0 * resid;  // d(sum of squares)/dy; averaged below
    run_backward(cfg, params, s, mp, tape, dy, grad);
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  grad.for_each_array([&](auto& a) { a *= inv_b; });
  return {sq_sum * inv_b, std::move(grad)};
}

AdamState AdamState::zeros(const ModelConfig& cfg) {
  AdamState s;
  s.m = ParamSet::zeros(cfg);
  s.v = ParamSet::zeros(cfg);
  s.t = 0;
  return s;
}

void adam_step(ParamSet& params, AdamState& state, const ParamSet& grads, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw std::invalid_argument("adam_step: shape mismatch");
    m = b1 * m + (1.0 - b1) * g;
    v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };
  update(params.frontend_w, state.m.frontend_w, state.v.frontend_w, grads.frontend_w);
  update(params.frontend_b, state.m.frontend_b, state.v.frontend_b, grads.frontend_b);
  update(params.lstm_w, state.m.lstm_w, state.v.lstm_w, grads.lstm_w);
  update(params.lstm_u, state.m.lstm_u, state.v.lstm_u, grads.lstm_u);
  update(params.lstm_b, state.m.lstm_b, state.v.lstm_b, grads.lstm_b);
  update(params.head_w, state.m.head_w, state.v.head_w, grads.head_w);
  update(params.head_b, state.m.head_b, state.v.head_b, grads.head_b);
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// Standardized per-basin series arranged for window gathering.
struct BasinSeries {
  BasinId id;
  MatrixXd forcings;  // rows x n_dyn, row 0 = train_start - (seq-1)
  VectorXd statics;
  std::vector<double> flow_std;  // aligned to rows; NaN where missing
};

struct WindowRef {
  int basin;
  int end_row;
};

VectorXd standardize_vec(const std::vector<double>& raw, const ColumnStats& stats) {
  VectorXd out(static_cast<Eigen::Index>(raw.size()));
  for (size_t j = 0; j < raw.size(); ++j)
    out(static_cast<Eigen::Index>(j)) =
        stats.sd[j] > 0.0 ? (raw[j] - stats.mean[j]) / stats.sd[j] : 0.0;
  return out;
}

/// Forcing rows covering [start, end] standardized with `stats`.
MatrixXd standardized_forcings(const TimeSeriesFrame& frame, Date start, Date end,
                               const ColumnStats& stats, const BasinId& id) {
  const Period need{start, end};
  if (!frame.covers(need))
    throw std::runtime_error("basin " + id + ": forcings do not cover " +
                             start.to_string() + ".." + end.to_string() +
                             " (insufficient warm-up history?)");
  const auto& names = forcing_columns();
  const int rows = need.length();
  const size_t base = *frame.index_of(start);
  MatrixXd out(rows, static_cast<Eigen::Index>(names.size()));
  for (size_t j = 0; j < names.size(); ++j) {
    const auto& col = frame.column(names[j]);
    for (int i = 0; i < rows; ++i) {
      const double v = col[base + static_cast<size_t>(i)];
      if (is_missing(v))
        throw std::runtime_error("basin " + id + ": missing forcing " + names[j] + " at " +
                                 start.plus_days(i).to_string());
      out(i, static_cast<Eigen::Index>(j)) =
          stats.sd[j] > 0.0 ? (v - stats.mean[j]) / stats.sd[j] : 0.0;
    }
  }
  return out;
}

Batch gather(const std::vector<BasinSeries>& data, const std::vector<WindowRef>& refs,
             size_t lo, size_t n, int seq, int nd) {
  Batch b;
  b.dyn.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(seq) * nd);
  b.statics.resize(static_cast<Eigen::Index>(n), data.front().statics.size());
  b.targets.resize(static_cast<Eigen::Index>(n));
  for (size_t s = 0; s < n; ++s) {
    const WindowRef& w = refs[lo + s];
    const BasinSeries& bs = data[static_cast<size_t>(w.basin)];
    const int first = w.end_row - seq + 1;
    for (int t = 0; t < seq; ++t)
      b.dyn.block(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t) * nd, 1, nd) =
          bs.forcings.row(first + t);
    b.statics.row(static_cast<Eigen::Index>(s)) = bs.statics.transpose();
    const double f = bs.flow_std[static_cast<size_t>(w.end_row)];
    b.targets(static_cast<Eigen::Index>(s)) = f;
  }
  return b;
}

}  // namespace

TrainedModel train(const ModelConfig& cfg, const BasinArchive& archive,
                   const StaticTable& statics, const std::vector<BasinId>& donors,
                   const Period& train_period) {
  cfg.validate();
  if (donors.empty()) throw std::invalid_argument("train: no donor basins");
  if (static_cast<int>(statics.dim()) != cfg.n_static)
    throw std::invalid_argument("train: static table width != config n_static");
  if (train_period.length() < 2) throw std::invalid_argument("train: period too short");

  const int seq = cfg.sequence_length;
  const Date data_start = train_period.start.plus_days(-(seq - 1));

  // Standardization stats, all from donor training data.
  Matrix forcing_rows;
  Matrix static_rows;
  std::vector<double> flow_pool;
  for (const auto& id : donors) {
    const auto& frame = archive.forcings_for(id);
    const auto base = frame.index_of(train_period.start);
    if (!base || !frame.covers(train_period))
      throw std::runtime_error("train: basin " + id + " forcings do not cover the period");
    for (int i = 0; i < train_period.length(); ++i) {
      std::vector<double> row(forcing_columns().size());
      for (size_t j = 0; j < forcing_columns().size(); ++j)
        row[j] = frame.column(forcing_columns()[j])[*base + static_cast<size_t>(i)];
      forcing_rows.push_back(std::move(row));
    }
    static_rows.push_back(statics.row(id));
    const auto obs = archive.observed_flow(id, train_period);
    for (double v : obs)
      if (!is_missing(v)) flow_pool.push_back(v);
  }
  if (flow_pool.size() < 2) throw std::runtime_error("train: no observed flow in train period");

  TrainedModel model;
  model.config = cfg;
  model.donors = donors;
  model.forcing_stats = compute_column_stats(forcing_rows);
  model.static_stats = compute_column_stats(static_rows);
  {
    Matrix flow_col;
    flow_col.reserve(flow_pool.size());
    for (double v : flow_pool) flow_col.push_back({v});
    model.flow_stats = compute_column_stats(flow_col);
  }
  if (!(model.flow_stats.sd[0] > 0.0))
    throw std::runtime_error("train: donor flow has zero variance");

  // Per-basin standardized series.
  std::vector<BasinSeries> data;
  data.reserve(donors.size());
  for (const auto& id : donors) {
    BasinSeries bs;
    bs.id = id;
    bs.forcings = standardized_forcings(archive.forcings_for(id), data_start, train_period.end,
                                        model.forcing_stats, id);
    bs.statics = standardize_vec(statics.row(id), model.static_stats);
    const auto obs = archive.observed_flow(id, train_period);
    bs.flow_std.assign(static_cast<size_t>(seq - 1), kMissing);  // warm-up rows
    for (double v : obs)
      bs.flow_std.push_back(is_missing(v) ? kMissing
                                          : (v - model.flow_stats.mean[0]) / model.flow_stats.sd[0]);
    data.push_back(std::move(bs));
  }

  // Gradient windows vs the best-epoch selection slice (final 20%).
  const int period_len = train_period.length();
  const int n_val = std::max(1, static_cast<int>(std::floor(0.2 * period_len)));
  const int n_grad = period_len - n_val;
  if (n_grad < 1) throw std::runtime_error("train: period too short for a validation slice");

  std::vector<WindowRef> grad_windows, val_windows;
  for (int b = 0; b < static_cast<int>(data.size()); ++b)
    for (int i = 0; i < period_len; ++i) {
      const int end_row = seq - 1 + i;
      if (is_missing(data[static_cast<size_t>(b)].flow_std[static_cast<size_t>(end_row)])) continue;
      (i < n_grad ? grad_windows : val_windows).push_back({b, end_row});
    }
  if (grad_windows.empty()) throw std::runtime_error("train: no valid training windows");

  ParamSet params = init_params(cfg, cfg.seed);
  AdamState opt = AdamState::zeros(cfg);
  ParamSet best_params = params;
  double best_val = -std::numeric_limits<double>::infinity();
  bool have_best = false;

  const double keep = 1.0 - cfg.dropout;
  std::vector<WindowRef> epoch_windows;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "train|epoch" + std::to_string(epoch)));
    epoch_windows = grad_windows;
    rng.shuffle(epoch_windows);
    if (cfg.max_windows_per_epoch > 0 &&
        static_cast<int>(epoch_windows.size()) > cfg.max_windows_per_epoch)
      epoch_windows.resize(static_cast<size_t>(cfg.max_windows_per_epoch));

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t lo = 0; lo < epoch_windows.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t n = std::min(static_cast<size_t>(cfg.batch_size), epoch_windows.size() - lo);
      Batch batch = gather(data, epoch_windows, lo, n, seq, cfg.n_dyn);

      MatrixXd masks;
      const MatrixXd* mp = nullptr;
      if (cfg.dropout > 0.0) {
        masks.resize(static_cast<Eigen::Index>(n), cfg.hidden_size);
        for (Eigen::Index r = 0; r < masks.rows(); ++r)
          for (Eigen::Index col = 0; col < masks.cols(); ++col)
            masks(r, col) = rng.unit() < keep ? 1.0 / keep : 0.0;
        mp = &masks;
      }

      auto [loss, grads] = loss_and_grad(cfg, params, batch, mp);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: diverged (non-finite loss at epoch " +
                                 std::to_string(epoch) + ")");
      adam_step(params, opt, grads, cfg.learning_rate);
      loss_sum += loss;
      ++batches;
    }
    model.epoch_train_loss.push_back(batches > 0 ? loss_sum / batches : kMissing);

    // Median per-basin NSE on the held-out slice (standardized space; NSE is
    // invariant under the common de-standardization affine map).
    std::vector<double> basin_nse;
    for (int b = 0; b < static_cast<int>(data.size()); ++b) {
      std::vector<WindowRef> mine;
      for (const auto& w : val_windows)
        if (w.basin == b) mine.push_back(w);
      if (mine.size() < 2) continue;
      std::vector<double> obs, sim;
      for (size_t lo = 0; lo < mine.size(); lo += static_cast<size_t>(cfg.batch_size)) {
        const size_t n = std::min(static_cast<size_t>(cfg.batch_size), mine.size() - lo);
        Batch batch = gather(data, mine, lo, n, seq, cfg.n_dyn);
        VectorXd y = forward_batch(cfg, params, batch);
        for (size_t s = 0; s < n; ++s) {
          obs.push_back(batch.targets(static_cast<Eigen::Index>(s)));
          sim.push_back(y(static_cast<Eigen::Index>(s)));
        }
      }
      if (auto score = nse(obs, sim)) basin_nse.push_back(*score);
    }
    double val = kMissing;
    if (auto med = median_finite(basin_nse)) val = *med;
    model.epoch_val_nse.push_back(val);
    if (std::isfinite(val) && (!have_best || val > best_val)) {
      best_val = val;
      best_params = params;
      model.best_epoch = epoch;
      have_best = true;
    }
  }

  if (!have_best) {
    // No epoch produced a scorable validation slice; keep the final state.
    best_params = params;
    model.best_epoch = cfg.epochs;
  }
  model.params = std::move(best_params);
  return model;
}

TimeSeriesFrame predict(const TrainedModel& model, const BasinArchive& archive,
                        const StaticTable& statics, const BasinId& basin, const Period& period) {
  const ModelConfig& cfg = model.config;
  cfg.validate();
  if (static_cast<int>(statics.dim()) != cfg.n_static)
    throw std::invalid_argument("predict: static table width != config n_static");

  const int seq = cfg.sequence_length;
  const Date data_start = period.start.plus_days(-(seq - 1));
  BasinSeries bs;
  bs.id = basin;
  bs.forcings = standardized_forcings(archive.forcings_for(basin), data_start, period.end,
                                      model.forcing_stats, basin);
  bs.statics = standardize_vec(statics.row(basin), model.static_stats);
  bs.flow_std.assign(static_cast<size_t>(bs.forcings.rows()), 0.0);
  std::vector<BasinSeries> data;
  data.push_back(std::move(bs));

  const int n_days = period.length();
  std::vector<WindowRef> refs;
  refs.reserve(static_cast<size_t>(n_days));
  for (int i = 0; i < n_days; ++i) refs.push_back({0, seq - 1 + i});

  std::vector<double> sim(static_cast<size_t>(n_days));
  for (size_t lo = 0; lo < refs.size(); lo += static_cast<size_t>(cfg.batch_size)) {
    const size_t n = std::min(static_cast<size_t>(cfg.batch_size), refs.size() - lo);
    Batch batch = gather(data, refs, lo, n, seq, cfg.n_dyn);
    VectorXd y = forward_batch(cfg, model.params, batch);
    for (size_t s = 0; s < n; ++s)
      sim[lo + s] = y(static_cast<Eigen::Index>(s)) * model.flow_stats.sd[0] +
                    model.flow_stats.mean[0];
  }
  return TimeSeriesFrame(period.start, {"q_sim_mm_day"}, {std::move(sim)});
}

StaticTable extract_fusion_embeddings(const TrainedModel& model, const StaticTable& table) {
  const ModelConfig& cfg = model.config;
  if (cfg.mode != FrontendMode::AttrFc)
    throw std::invalid_argument(
        "extract_fusion_embeddings: model front end is joint-mlp (embedding not "
        "attribute-separable)");
  if (static_cast<int>(table.dim()) != cfg.n_static)
    throw std::invalid_argument("extract_fusion_embeddings: table width != training n_static");

  StaticTable out;
  out.kind = TableKind::FusionEmbedding;
  out.basins = table.basins;
  for (int j = 0; j < cfg.frontend_width; ++j) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "f%02d", j);
    out.columns.push_back(buf);
  }
  for (const auto& id : table.basins) {
    VectorXd x = standardize_vec(table.row(id), model.static_stats);
    VectorXd a = ((model.params.frontend_w * x + model.params.frontend_b).array().tanh()).matrix();
    out.values.emplace_back(a.data(), a.data() + a.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'P', 'F', 'M', 'O', 'D', 'L', '0', '1'};

void wr_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void wr_f64(std::ofstream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint64_t rd_u64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double rd_f64(std::ifstream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void wr_stats(std::ofstream& out, const ColumnStats& s) {
  wr_u64(out, s.mean.size());
  for (double v : s.mean) wr_f64(out, v);
  for (double v : s.sd) wr_f64(out, v);
}

ColumnStats rd_stats(std::ifstream& in) {
  ColumnStats s;
  const uint64_t n = rd_u64(in);
  s.mean.resize(n);
  s.sd.resize(n);
  for (auto& v : s.mean) v = rd_f64(in);
  for (auto& v : s.sd) v = rd_f64(in);
  return s;
}

void wr_vec(std::ofstream& out, const std::vector<double>& v) {
  wr_u64(out, v.size());
  for (double x : v) wr_f64(out, x);
}

std::vector<double> rd_vec(std::ifstream& in) {
  std::vector<double> v(rd_u64(in));
  for (auto& x : v) x = rd_f64(in);
  return v;
}

}  // namespace

void save_model(const TrainedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out.write(kMagic, 8);
  wr_u64(out, 1);  // format version
  const ModelConfig& c = model.config;
  wr_u64(out, static_cast<uint64_t>(c.n_dyn));
  wr_u64(out, static_cast<uint64_t>(c.n_static));
  wr_u64(out, c.mode == FrontendMode::JointMlp ? 0 : 1);
  wr_u64(out, static_cast<uint64_t>(c.frontend_width));
  wr_u64(out, static_cast<uint64_t>(c.hidden_size));
  wr_f64(out, c.dropout);
  wr_u64(out, static_cast<uint64_t>(c.sequence_length));
  wr_u64(out, static_cast<uint64_t>(c.batch_size));
  wr_f64(out, c.learning_rate);
  wr_u64(out, static_cast<uint64_t>(c.epochs));
  wr_u64(out, c.seed);
  wr_u64(out, static_cast<uint64_t>(c.max_windows_per_epoch));
  wr_u64(out, static_cast<uint64_t>(model.best_epoch));
  wr_stats(out, model.forcing_stats);
  wr_stats(out, model.static_stats);
  wr_stats(out, model.flow_stats);
  wr_u64(out, model.donors.size());
  for (const auto& id : model.donors) {
    wr_u64(out, id.size());
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  wr_vec(out, model.epoch_train_loss);
  wr_vec(out, model.epoch_val_nse);
  model.params.for_each_array([&](const auto& a) {
    wr_u64(out, static_cast<uint64_t>(a.rows()));
    wr_u64(out, static_cast<uint64_t>(a.cols()));
    out.write(reinterpret_cast<const char*>(a.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(a.size())));
  });
  out.flush();
  if (!out) throw std::runtime_error("model write failure: " + path);
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing model file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a model file");
  const uint64_t version = rd_u64(in);
  if (version != 1) throw std::runtime_error(path + ": unsupported model version");

  TrainedModel m;
  ModelConfig& c = m.config;
  c.n_dyn = static_cast<int>(rd_u64(in));
  c.n_static = static_cast<int>(rd_u64(in));
  c.mode = rd_u64(in) == 0 ? FrontendMode::JointMlp : FrontendMode::AttrFc;
  c.frontend_width = static_cast<int>(rd_u64(in));
  c.hidden_size = static_cast<int>(rd_u64(in));
  c.dropout = rd_f64(in);
  c.sequence_length = static_cast<int>(rd_u64(in));
  c.batch_size = static_cast<int>(rd_u64(in));
  c.learning_rate = rd_f64(in);
  c.epochs = static_cast<int>(rd_u64(in));
  c.seed = rd_u64(in);
  c.max_windows_per_epoch = static_cast<int>(rd_u64(in));
  m.best_epoch = static_cast<int>(rd_u64(in));
  m.forcing_stats = rd_stats(in);
  m.static_stats = rd_stats(in);
  m.flow_stats = rd_stats(in);
  const uint64_t nd = rd_u64(in);
  for (uint64_t i = 0; i < nd; ++i) {
    std::string id(rd_u64(in), '\0');
    in.read(id.data(), static_cast<std::streamsize>(id.size()));
    m.donors.push_back(std::move(id));
  }
  m.epoch_train_loss = rd_vec(in);
  m.epoch_val_nse = rd_vec(in);
  m.params = ParamSet::zeros(c);
  m.params.for_each_array([&](auto& a) {
    const auto rows = static_cast<Eigen::Index>(rd_u64(in));
    const auto cols = static_cast<Eigen::Index>(rd_u64(in));
    if (rows != a.rows() || cols != a.cols())
      throw std::runtime_error(path + ": parameter shape mismatch");
    in.read(reinterpret_cast<char*>(a.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(a.size())));
  });
  if (!in) throw std::runtime_error(path + ": truncated model file");
  return m;
}

}  // namespace pubflow
