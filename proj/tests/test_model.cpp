#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "pubflow/model.hpp"
#include "pubflow/rng.hpp"
#include "pubflow/synthetic.hpp"

using namespace pubflow;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Independent straight-line reimplementation of the network for one window:
/// plain loops over scalar doubles, no shared code with the Eigen path.
double ref_forward(const ModelConfig& cfg, const ParamSet& p,
                   const std::vector<std::vector<double>>& dyn,
                   const std::vector<double>& statics,
                   const std::vector<double>* mask = nullptr,
                   std::vector<std::vector<double>>* h_trace = nullptr) {
  const int H = cfg.hidden_size, F = cfg.frontend_width, nd = cfg.n_dyn;
  std::vector<double> h(static_cast<size_t>(H), 0.0), c(static_cast<size_t>(H), 0.0);

  std::vector<double> a_static(static_cast<size_t>(F), 0.0);
  if (cfg.mode == FrontendMode::AttrFc) {
    for (int f = 0; f < F; ++f) {
      double s = p.frontend_b(f);
      for (int j = 0; j < cfg.n_static; ++j)
        s += p.frontend_w(f, j) * statics[static_cast<size_t>(j)];
      a_static[static_cast<size_t>(f)] = std::tanh(s);
    }
  }

  for (int t = 0; t < cfg.sequence_length; ++t) {
    std::vector<double> x;
    if (cfg.mode == FrontendMode::JointMlp) {
      for (int f = 0; f < F; ++f) {
        double s = p.frontend_b(f);
        for (int j = 0; j < nd; ++j)
          s += p.frontend_w(f, j) * dyn[static_cast<size_t>(t)][static_cast<size_t>(j)];
        for (int j = 0; j < cfg.n_static; ++j)
          s += p.frontend_w(f, nd + j) * statics[static_cast<size_t>(j)];
        x.push_back(std::tanh(s));
      }
    } else {
      for (int j = 0; j < nd; ++j) x.push_back(dyn[static_cast<size_t>(t)][static_cast<size_t>(j)]);
      for (int f = 0; f < F; ++f) x.push_back(a_static[static_cast<size_t>(f)]);
    }
    std::vector<double> hn(static_cast<size_t>(H)), cn(static_cast<size_t>(H));
    for (int hh = 0; hh < H; ++hh) {
      auto gate_pre = [&](int g) {
        double s = p.lstm_b(g * H + hh);
        for (size_t j = 0; j < x.size(); ++j)
          s += p.lstm_w(g * H + hh, static_cast<Eigen::Index>(j)) * x[j];
        for (int j = 0; j < H; ++j) s += p.lstm_u(g * H + hh, j) * h[static_cast<size_t>(j)];
        return s;
      };
      const double gi = sigm(gate_pre(0));
      const double gf = sigm(gate_pre(1));
      const double gg = std::tanh(gate_pre(2));
      const double go = sigm(gate_pre(3));
      cn[static_cast<size_t>(hh)] = gf * c[static_cast<size_t>(hh)] + gi * gg;
      hn[static_cast<size_t>(hh)] = go * std::tanh(cn[static_cast<size_t>(hh)]);
    }
    h = hn;
    c = cn;
    if (h_trace) h_trace->push_back(h);
  }

  double y = p.head_b(0);
  for (int hh = 0; hh < H; ++hh) {
    const double m = mask ? (*mask)[static_cast<size_t>(hh)] : 1.0;
    y += p.head_w(hh) * h[static_cast<size_t>(hh)] * m;
  }
  return y;
}

ModelConfig tiny_config(int seq, int hidden, int front, FrontendMode mode, int n_static) {
  ModelConfig cfg;
  cfg.n_dyn = 7;
  cfg.n_static = n_static;
  cfg.mode = mode;
  cfg.frontend_width = front;
  cfg.hidden_size = hidden;
  cfg.dropout = 0.0;
  cfg.sequence_length = seq;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  return cfg;
}

Batch random_batch(const ModelConfig& cfg, int n, uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.dyn.resize(n, static_cast<Eigen::Index>(cfg.sequence_length) * cfg.n_dyn);
  b.statics.resize(n, cfg.n_static);
  b.targets.resize(n);
  for (int s = 0; s < n; ++s) {
    for (Eigen::Index j = 0; j < b.dyn.cols(); ++j) b.dyn(s, j) = rng.normal();
    for (int j = 0; j < cfg.n_static; ++j) b.statics(s, j) = rng.normal();
    b.targets(s) = rng.normal();
  }
  return b;
}

Eigen::MatrixXd window_of(const Batch& b, int row, const ModelConfig& cfg) {
  Eigen::MatrixXd w(cfg.sequence_length, cfg.n_dyn);
  for (int t = 0; t < cfg.sequence_length; ++t)
    w.row(t) = b.dyn.block(row, static_cast<Eigen::Index>(t) * cfg.n_dyn, 1, cfg.n_dyn);
  return w;
}

double batch_mse(const ModelConfig& cfg, const ParamSet& p, const Batch& b,
                 const Eigen::MatrixXd* masks) {
  const Eigen::VectorXd y = forward_batch(cfg, p, b, masks);
  return (y - b.targets).squaredNorm() / static_cast<double>(b.size());
}

/// Central finite differences over every coefficient; returns the max
/// relative error against the analytic gradient.
double max_grad_rel_error(const ModelConfig& cfg, ParamSet& p, const Batch& b,
                          const Eigen::MatrixXd* masks) {
  const auto [loss, grads] = loss_and_grad(cfg, p, b, masks);
  std::vector<double*> arrays;
  std::vector<const double*> grad_arrays;
  std::vector<Eigen::Index> sizes;
  p.for_each_array([&](auto& a) {
    arrays.push_back(a.data());
    sizes.push_back(a.size());
  });
  grads.for_each_array([&](const auto& a) { grad_arrays.push_back(a.data()); });

  const double eps = 1e-5;
  double worst = 0.0;
  for (size_t k = 0; k < arrays.size(); ++k)
    for (Eigen::Index i = 0; i < sizes[k]; ++i) {
      const double keep = arrays[k][i];
      arrays[k][i] = keep + eps;
      const double up = batch_mse(cfg, p, b, masks);
      arrays[k][i] = keep - eps;
      const double down = batch_mse(cfg, p, b, masks);
      arrays[k][i] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double an = grad_arrays[k][i];
      const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      worst = std::max(worst, rel);
    }
  return worst;
}

}  // namespace

TEST_CASE("init_params: determinism, shapes, forget-gate bias") {
  ModelConfig cfg;
  cfg.n_static = 64;
  cfg.mode = FrontendMode::JointMlp;
  const ParamSet a = init_params(cfg, 7);
  const ParamSet b = init_params(cfg, 7);
  std::vector<const double*> pa, pb;
  std::vector<Eigen::Index> sizes;
  a.for_each_array([&](const auto& arr) {
    pa.push_back(arr.data());
    sizes.push_back(arr.size());
  });
  b.for_each_array([&](const auto& arr) { pb.push_back(arr.data()); });
  bool identical = true;
  for (size_t k = 0; k < pa.size(); ++k)
    for (Eigen::Index i = 0; i < sizes[k]; ++i)
      if (pa[k][i] != pb[k][i]) identical = false;
  CHECK(identical);

  // hidden=128, n_static=64, joint-mlp: LSTM input weights are (4*128) x 32.
  CHECK(a.lstm_w.rows() == 512);
  CHECK(a.lstm_w.cols() == 32);
  CHECK(a.frontend_w.cols() == 7 + 64);

  for (int h = 0; h < cfg.hidden_size; ++h) CHECK(a.lstm_b(cfg.hidden_size + h) == 1.0);
}

TEST_CASE("init_params: uniform bound holds across 1000 seeds") {
  ModelConfig cfg = tiny_config(8, 6, 4, FrontendMode::JointMlp, 17);
  const double bf = 1.0 / std::sqrt(static_cast<double>(cfg.frontend_input()));
  const double bw = 1.0 / std::sqrt(static_cast<double>(cfg.lstm_input()));
  const double bh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const ParamSet p = init_params(cfg, seed);
    CHECK(p.frontend_w.cwiseAbs().maxCoeff() <= bf);
    CHECK(p.lstm_w.cwiseAbs().maxCoeff() <= bw);
    CHECK(p.lstm_u.cwiseAbs().maxCoeff() <= bh);
    CHECK(p.head_w.cwiseAbs().maxCoeff() <= bh);
  }
}

TEST_CASE("forward: zero weights collapse to the head bias") {
  for (FrontendMode mode : {FrontendMode::JointMlp, FrontendMode::AttrFc}) {
    ModelConfig cfg = tiny_config(9, 5, 3, mode, 17);
    ParamSet p = ParamSet::zeros(cfg);
    p.head_b(0) = 3.25;
    const Batch b = random_batch(cfg, 1, 5);
    const Eigen::MatrixXd w = window_of(b, 0, cfg);
    const Eigen::VectorXd s = b.statics.row(0).transpose();
    CHECK(forward(cfg, p, w, s) == 3.25);
  }
}

TEST_CASE("forward: purity and agreement with the straight-line oracle") {
  for (FrontendMode mode : {FrontendMode::JointMlp, FrontendMode::AttrFc}) {
    ModelConfig cfg = tiny_config(10, 8, 4, mode, mode == FrontendMode::JointMlp ? 17 : 64);
    const ParamSet p = init_params(cfg, 33);
    const Batch b = random_batch(cfg, 3, 17);
    for (int row = 0; row < b.size(); ++row) {
      const Eigen::MatrixXd w = window_of(b, row, cfg);
      const Eigen::VectorXd s = b.statics.row(row).transpose();
      const double y1 = forward(cfg, p, w, s);
      const double y2 = forward(cfg, p, w, s);
      CHECK(y1 == y2);

      std::vector<std::vector<double>> dyn(static_cast<size_t>(cfg.sequence_length),
                                           std::vector<double>(static_cast<size_t>(cfg.n_dyn)));
      for (int t = 0; t < cfg.sequence_length; ++t)
        for (int j = 0; j < cfg.n_dyn; ++j)
          dyn[static_cast<size_t>(t)][static_cast<size_t>(j)] = w(t, j);
      std::vector<double> statics(s.data(), s.data() + s.size());
      CHECK(y1 == doctest::Approx(ref_forward(cfg, p, dyn, statics)).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward: batched path matches the per-sample path") {
  ModelConfig cfg = tiny_config(12, 6, 4, FrontendMode::JointMlp, 17);
  const ParamSet p = init_params(cfg, 2);
  const Batch b = random_batch(cfg, 40, 3);  // spans multiple micro-batches
  const Eigen::VectorXd y = forward_batch(cfg, p, b);
  for (int row = 0; row < b.size(); ++row) {
    const Eigen::MatrixXd w = window_of(b, row, cfg);
    const Eigen::VectorXd s = b.statics.row(row).transpose();
    CHECK(y(row) == doctest::Approx(forward(cfg, p, w, s)).epsilon(1e-12));
  }
}

TEST_CASE("forward: missing forcing inside the window is an error") {
  ModelConfig cfg = tiny_config(8, 4, 3, FrontendMode::JointMlp, 17);
  const ParamSet p = init_params(cfg, 1);
  Batch b = random_batch(cfg, 1, 1);
  b.dyn(0, 10) = kMissing;
  const Eigen::MatrixXd w = window_of(b, 0, cfg);
  CHECK_THROWS(forward(cfg, p, w, b.statics.row(0).transpose()));
}

TEST_CASE("lstm hidden states stay inside (-1, 1)") {
  ModelConfig cfg = tiny_config(30, 8, 4, FrontendMode::JointMlp, 17);
  ParamSet p = init_params(cfg, 11);
  p.lstm_w *= 10.0;  // push the gates hard
  p.lstm_u *= 10.0;
  const Batch b = random_batch(cfg, 1, 9);
  const auto trace = lstm_hidden_trace(cfg, p, window_of(b, 0, cfg), b.statics.row(0).transpose());
  REQUIRE(trace.size() == 30);
  for (const auto& h : trace)
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      CHECK(h(i) > -1.0);
      CHECK(h(i) < 1.0);
    }
}

TEST_CASE("loss_and_grad: zero residual gives zero loss and gradients") {
  ModelConfig cfg = tiny_config(8, 4, 3, FrontendMode::JointMlp, 17);
  ParamSet p = ParamSet::zeros(cfg);
  p.head_b(0) = 1.5;
  Batch b = random_batch(cfg, 3, 21);
  b.targets.setConstant(1.5);  // predictions == targets
  const auto [loss, grads] = loss_and_grad(cfg, p, b);
  CHECK(loss == 0.0);
  grads.for_each_array([&](const auto& a) {
    if (a.size() > 0) CHECK(a.cwiseAbs().maxCoeff() == 0.0);
  });
}

TEST_CASE("loss_and_grad: finite-difference oracle on tiny configs") {
  struct Case {
    int seq, hidden, front, n_static;
    FrontendMode mode;
  };
  const std::vector<Case> cases = {
      {8, 4, 3, 17, FrontendMode::JointMlp},
      {10, 6, 4, 64, FrontendMode::JointMlp},
      {9, 5, 3, 17, FrontendMode::AttrFc},
      {12, 8, 5, 64, FrontendMode::AttrFc},
      {11, 7, 4, 17, FrontendMode::JointMlp},
  };
  int idx = 0;
  for (const auto& c : cases) {
    ModelConfig cfg = tiny_config(c.seq, c.hidden, c.front, c.mode, c.n_static);
    ParamSet p = init_params(cfg, 100 + static_cast<uint64_t>(idx));
    const Batch b = random_batch(cfg, 2, 200 + static_cast<uint64_t>(idx));
    CHECK(max_grad_rel_error(cfg, p, b, nullptr) < 1e-4);
    ++idx;
  }
}

TEST_CASE("loss_and_grad: gradients correct under a fixed dropout mask") {
  ModelConfig cfg = tiny_config(8, 6, 3, FrontendMode::JointMlp, 17);
  cfg.dropout = 0.5;
  ParamSet p = init_params(cfg, 4);
  const Batch b = random_batch(cfg, 2, 5);
  Rng rng(77);
  Eigen::MatrixXd masks(2, cfg.hidden_size);
  for (Eigen::Index i = 0; i < masks.size(); ++i)
    masks(i / cfg.hidden_size, i % cfg.hidden_size) = rng.unit() < 0.5 ? 2.0 : 0.0;
  CHECK(max_grad_rel_error(cfg, p, b, &masks) < 1e-4);
}

TEST_CASE("loss_and_grad: duplicating the batch leaves loss and grads unchanged") {
  ModelConfig cfg = tiny_config(8, 4, 3, FrontendMode::JointMlp, 17);
  ParamSet p = init_params(cfg, 8);
  const Batch b = random_batch(cfg, 3, 6);
  Batch dup;
  dup.dyn.resize(6, b.dyn.cols());
  dup.statics.resize(6, b.statics.cols());
  dup.targets.resize(6);
  dup.dyn << b.dyn, b.dyn;
  dup.statics << b.statics, b.statics;
  dup.targets << b.targets, b.targets;

  const auto [l1, g1] = loss_and_grad(cfg, p, b);
  const auto [l2, g2] = loss_and_grad(cfg, p, dup);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  std::vector<const double*> a1, a2;
  std::vector<Eigen::Index> sizes;
  g1.for_each_array([&](const auto& a) {
    a1.push_back(a.data());
    sizes.push_back(a.size());
  });
  g2.for_each_array([&](const auto& a) { a2.push_back(a.data()); });
  for (size_t k = 0; k < a1.size(); ++k)
    for (Eigen::Index i = 0; i < sizes[k]; ++i)
      CHECK(a1[k][i] == doctest::Approx(a2[k][i]).epsilon(1e-12));
}

TEST_CASE("dropout: inference equals the mask expectation for the linear head") {
  // With inverted dropout and a linear head over the masked layer, averaging
  // the training forward over all masks reproduces the inference forward.
  ModelConfig cfg = tiny_config(6, 4, 3, FrontendMode::JointMlp, 17);
  cfg.dropout = 0.5;
  const ParamSet p = init_params(cfg, 3);
  const Batch b = random_batch(cfg, 1, 4);
  const Eigen::MatrixXd w = window_of(b, 0, cfg);
  const Eigen::VectorXd s = b.statics.row(0).transpose();

  const double inference = forward(cfg, p, w, s);
  double expectation = 0.0;
  const int H = cfg.hidden_size;
  for (int bits = 0; bits < (1 << H); ++bits) {
    Eigen::VectorXd mask(H);
    for (int i = 0; i < H; ++i) mask(i) = (bits >> i) & 1 ? 2.0 : 0.0;  // 1/(1-p) = 2
    expectation += forward(cfg, p, w, s, &mask);
  }
  expectation /= static_cast<double>(1 << H);
  CHECK(expectation == doctest::Approx(inference).epsilon(1e-10));
}

TEST_CASE("adam_step: fixed point, determinism, saturated step size") {
  ModelConfig cfg = tiny_config(6, 4, 3, FrontendMode::JointMlp, 17);
  ParamSet p = init_params(cfg, 1);
  const ParamSet snapshot = p;
  AdamState st = AdamState::zeros(cfg);
  adam_step(p, st, ParamSet::zeros(cfg), 1e-3);
  CHECK((p.head_w.array() == snapshot.head_w.array()).all());
  CHECK((p.lstm_w.array() == snapshot.lstm_w.array()).all());
  CHECK(st.t == 1);

  // Two runs from identical state produce identical results.
  ParamSet p1 = init_params(cfg, 2), p2 = init_params(cfg, 2);
  AdamState s1 = AdamState::zeros(cfg), s2 = AdamState::zeros(cfg);
  ParamSet g = init_params(cfg, 3);
  adam_step(p1, s1, g, 1e-3);
  adam_step(p2, s2, g, 1e-3);
  CHECK((p1.lstm_w.array() == p2.lstm_w.array()).all());

  // Constant gradient: after moment saturation the step magnitude -> lr.
  ParamSet pc = ParamSet::zeros(cfg);
  AdamState sc = AdamState::zeros(cfg);
  ParamSet gc = ParamSet::zeros(cfg);
  gc.head_w.setConstant(0.37);
  const double lr = 1e-3;
  double prev = pc.head_w(0);
  for (int t = 0; t < 2000; ++t) {
    adam_step(pc, sc, gc, lr);
    if (t >= 1999) break;
    prev = pc.head_w(0);
  }
  const double step = std::fabs(pc.head_w(0) - prev);
  CHECK(step > 0.9 * lr);
  CHECK(step < 1.1 * lr);

  ParamSet bad = ParamSet::zeros(cfg);
  bad.head_w.resize(cfg.hidden_size + 1);
  bad.head_w.setZero();
  CHECK_THROWS(adam_step(p1, s1, bad, lr));
}

TEST_CASE("train: determinism and single-donor boundary on a synthetic fleet") {
  const BasinArchive archive = generate_synthetic_fleet(4, 900, 42);
  ModelConfig cfg;
  cfg.n_static = 17;
  cfg.mode = FrontendMode::JointMlp;
  cfg.frontend_width = 8;
  cfg.hidden_size = 8;
  cfg.dropout = 0.2;
  cfg.sequence_length = 40;
  cfg.batch_size = 64;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.max_windows_per_epoch = 200;
  const Period train_period = parse_period("1980-03-01..1981-08-31");

  const TrainedModel m1 = train(cfg, archive, archive.attributes, archive.basins(), train_period);
  const TrainedModel m2 = train(cfg, archive, archive.attributes, archive.basins(), train_period);
  CHECK(m1.best_epoch == m2.best_epoch);
  CHECK((m1.params.lstm_w.array() == m2.params.lstm_w.array()).all());
  CHECK((m1.params.frontend_w.array() == m2.params.frontend_w.array()).all());
  CHECK(m1.epoch_train_loss == m2.epoch_train_loss);
  CHECK(m1.epoch_val_nse == m2.epoch_val_nse);
  CHECK(m1.epoch_train_loss.size() == 2);
  CHECK(m1.best_epoch >= 1);
  CHECK(m1.flow_stats.sd[0] > 0.0);

  // One donor still trains; validation uses that basin's final slice.
  const TrainedModel solo =
      train(cfg, archive, archive.attributes, {archive.basins()[0]}, train_period);
  CHECK(solo.donors.size() == 1);

  CHECK_THROWS(train(cfg, archive, archive.attributes, {}, train_period));
}

TEST_CASE("predict: structure, purity, warm-up validation") {
  const BasinArchive archive = generate_synthetic_fleet(3, 900, 9);
  ModelConfig cfg;
  cfg.n_static = 17;
  cfg.mode = FrontendMode::JointMlp;
  cfg.frontend_width = 8;
  cfg.hidden_size = 8;
  cfg.sequence_length = 40;
  cfg.batch_size = 64;
  cfg.epochs = 1;
  cfg.seed = 3;
  cfg.max_windows_per_epoch = 100;
  const Period train_period = parse_period("1980-03-01..1981-05-31");
  const TrainedModel m = train(cfg, archive, archive.attributes, archive.basins(), train_period);

  const Period ten_days = parse_period("1981-09-01..1981-09-10");
  const TimeSeriesFrame sim = predict(m, archive, archive.attributes, archive.basins()[0], ten_days);
  CHECK(sim.size() == 10);
  CHECK(sim.start_date() == ten_days.start);

  const TimeSeriesFrame again =
      predict(m, archive, archive.attributes, archive.basins()[0], ten_days);
  for (size_t i = 0; i < sim.size(); ++i)
    CHECK(sim.column("q_sim_mm_day")[i] == again.column("q_sim_mm_day")[i]);

  // Warm-up reaches before the forcing record: must fail loudly.
  const Period too_early = parse_period("1980-01-20..1980-01-25");
  CHECK_THROWS(predict(m, archive, archive.attributes, archive.basins()[0], too_early));
}

TEST_CASE("model serialization: bit-exact round trip") {
  const BasinArchive archive = generate_synthetic_fleet(3, 900, 13);
  ModelConfig cfg;
  cfg.n_static = 17;
  cfg.mode = FrontendMode::AttrFc;
  cfg.frontend_width = 6;
  cfg.hidden_size = 5;
  cfg.sequence_length = 30;
  cfg.batch_size = 32;
  cfg.epochs = 1;
  cfg.seed = 8;
  cfg.max_windows_per_epoch = 60;
  const Period train_period = parse_period("1980-03-01..1981-02-28");
  const TrainedModel m = train(cfg, archive, archive.attributes, archive.basins(), train_period);

  const std::string path = "tmp_model.bin";
  save_model(m, path);
  const TrainedModel r = load_model(path);
  CHECK(r.config.hidden_size == cfg.hidden_size);
  CHECK(r.config.mode == FrontendMode::AttrFc);
  CHECK(r.best_epoch == m.best_epoch);
  CHECK(r.donors == m.donors);
  CHECK(r.forcing_stats.mean == m.forcing_stats.mean);
  CHECK(r.flow_stats.sd == m.flow_stats.sd);
  bool bit_exact = true;
  std::vector<const double*> pa, pb;
  std::vector<Eigen::Index> sizes;
  m.params.for_each_array([&](const auto& a) {
    pa.push_back(a.data());
    sizes.push_back(a.size());
  });
  r.params.for_each_array([&](const auto& a) { pb.push_back(a.data()); });
  for (size_t k = 0; k < pa.size(); ++k)
    for (Eigen::Index i = 0; i < sizes[k]; ++i)
      if (pa[k][i] != pb[k][i]) bit_exact = false;
  CHECK(bit_exact);

  // Predictions from the reloaded model are identical.
  const Period p10 = parse_period("1981-05-01..1981-05-10");
  const auto s1 = predict(m, archive, archive.attributes, archive.basins()[1], p10);
  const auto s2 = predict(r, archive, archive.attributes, archive.basins()[1], p10);
  for (size_t i = 0; i < s1.size(); ++i)
    CHECK(s1.column("q_sim_mm_day")[i] == s2.column("q_sim_mm_day")[i]);

  std::filesystem::remove(path);
  CHECK_THROWS(load_model("tmp_model_missing.bin"));
}

TEST_CASE("extract_fusion_embeddings: contract") {
  const BasinArchive archive = generate_synthetic_fleet(3, 900, 19);
  ModelConfig cfg;
  cfg.n_static = 17;
  cfg.mode = FrontendMode::AttrFc;
  cfg.frontend_width = 6;
  cfg.hidden_size = 4;
  cfg.sequence_length = 30;
  cfg.batch_size = 32;
  cfg.epochs = 1;
  cfg.seed = 2;
  cfg.max_windows_per_epoch = 50;
  const Period train_period = parse_period("1980-03-01..1981-02-28");
  TrainedModel m = train(cfg, archive, archive.attributes, archive.basins(), train_period);

  const StaticTable emb = extract_fusion_embeddings(m, archive.attributes);
  CHECK(emb.kind == TableKind::FusionEmbedding);
  CHECK(emb.dim() == 6);  // frontend width
  CHECK(emb.basins == archive.attributes.basins);

  // Identical attribute rows map to identical embeddings.
  StaticTable twin = archive.attributes;
  twin.values[1] = twin.values[0];
  const StaticTable emb2 = extract_fusion_embeddings(m, twin);
  CHECK(emb2.values[0] == emb2.values[1]);

  // Zero front end with bias beta: every embedding is tanh(beta).
  TrainedModel zeroed = m;
  zeroed.params.frontend_w.setZero();
  zeroed.params.frontend_b.setConstant(0.7);
  const StaticTable embz = extract_fusion_embeddings(zeroed, archive.attributes);
  for (const auto& row : embz.values)
    for (double v : row) CHECK(v == doctest::Approx(std::tanh(0.7)).epsilon(1e-15));

  // joint-mlp models cannot expose an attribute-only embedding.
  TrainedModel joint = m;
  joint.config.mode = FrontendMode::JointMlp;
  CHECK_THROWS(extract_fusion_embeddings(joint, archive.attributes));
}
