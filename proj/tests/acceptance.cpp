// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "conseq/cli.hpp"
#include "conseq/conv.hpp"
#include "conseq/experiments.hpp"
#include "conseq/linalg.hpp"
#include "conseq/nn.hpp"
#include "fixtures.hpp"

namespace conseq {
namespace {

namespace fs = std::filesystem;
using oracle::random_matrix;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = limit_s <= 0.0 || secs < limit_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("criterion %2d: %s  %s | %s | %.2f s%s\n", id, pass ? "PASS" : "FAIL", name,
              o.detail.c_str(), secs, in_time ? "" : " (over time limit)");
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Network single_linear(Matrix w) {
  Layer layer;
  layer.weights = std::move(w);
  return Network(std::vector<Layer>{layer});
}

Outcome gradient_oracle() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Loss loss = i % 2 ? Loss::kSoftmaxCrossEntropy : Loss::kMse;
    const auto p = oracle::random_problem(rng, loss);
    const GradBundle g = backward_bp(p.net, forward(p.net, p.x, p.t, loss), 1.0);
    const auto fd = oracle::finite_difference_grads(p.net, p.x, p.t, loss, 1e-6);
    for (std::size_t l = 0; l < fd.size(); ++l)
      worst = std::max(worst, oracle::max_relative_error(g.dw[l] * -1.0, fd[l], kGradCheckFloor));
  }
  return {worst <= 1e-5, "max rel err " + fmt("%.3g", worst) + " <= 1e-5"};
}

Outcome virtual_target_identity() {
  std::mt19937_64 rng(102);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Loss loss = i % 2 ? Loss::kSoftmaxCrossEntropy : Loss::kMse;
    const auto p = oracle::random_problem(rng, loss, i % 4 == 0);
    const ForwardCache c = forward(p.net, p.x, p.t, loss);
    const double mu = 0.1 + 0.04 * i;
    const GradBundle g = backward_bp(p.net, c, mu);
    for (std::size_t l = 0; l < p.net.depth(); ++l) {
      Matrix x = c.x[l];
      if (p.net.layer(l).bias) {
        Matrix aug(x.rows() + 1, x.cols(), 1.0);
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t k = 0; k < x.cols(); ++k) aug(r, k) = x(r, k);
        x = aug;
      }
      const Matrix lms = lms_update_from_virtual_targets(x, c.z[l], virtual_targets(c.z[l], g.dz[l]), mu);
      worst = std::max(worst, max_abs_diff(lms, g.dw[l]));
    }
  }
  return {worst <= 1e-12, "max abs diff " + fmt("%.3g", worst) + " <= 1e-12"};
}

Outcome nlms_reduction() {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = dim(rng), o = dim(rng);
    const Network net = single_linear(random_matrix(o, d, rng));
    const Matrix x = random_matrix(d, 1, rng);
    const Matrix t = random_matrix(o, 1, rng);
    const ForwardCache c = forward(net, x, t, Loss::kMse);
    const double mu = 0.01 * (i + 1);
    const Matrix dw = backward_consequentialism(net, c, mu, 0.0).dw[0];
    double sq = 0.0;
    for (double v : x.data()) sq += v * v;
    Matrix expected(o, d);
    for (std::size_t r = 0; r < o; ++r)
      for (std::size_t k = 0; k < d; ++k) expected(r, k) = mu * (t(r, 0) - c.z[0](r, 0)) * x(k, 0) / sq;
    worst = std::max(worst, max_abs_diff(dw, expected));
  }
  return {worst <= 1e-12, "max abs diff " + fmt("%.3g", worst) + " <= 1e-12"};
}

Outcome error_contraction() {
  std::mt19937_64 rng(104);
  double worst = 0.0;
  for (double mu : {0.1, 0.5, 0.7, 1.0}) {
    Network net = single_linear(random_matrix(5, 20, rng));
    const Matrix x = random_matrix(20, 10, rng);
    const Matrix t = random_matrix(5, 10, rng);
    const ForwardCache before = forward(net, x, t, Loss::kMse);
    net.apply(backward_consequentialism(net, before, mu, 0.0).dw);
    const double ratio = frobenius_norm(t - forward(net, x, t, Loss::kMse).z[0]) /
                         frobenius_norm(t - before.z[0]);
    worst = std::max(worst, std::abs(ratio - (1.0 - mu)));
  }
  return {worst <= 1e-8, "max |ratio - (1 - mu)| " + fmt("%.3g", worst) + " <= 1e-8"};
}

Outcome interference_modes() {
  using Kind = InterferenceMode::Kind;
  std::mt19937_64 rng(105);
  bool unit_diag = true;
  double ident_err = 0.0, plain_err = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Matrix x = random_matrix(20, 10, rng);
    const Matrix naive = interference_matrix(x, {Kind::kNaiveNormalized, 0.0});
    for (std::size_t n = 0; n < naive.rows(); ++n) unit_diag &= naive(n, n) == 1.0;
    ident_err = std::max(ident_err, max_abs_diff(interference_matrix(x, {Kind::kConsequentialism, 0.0}),
                                                 Matrix::identity(10)));
    Matrix xtx(10, 10);
    for (std::size_t a = 0; a < 10; ++a)
      for (std::size_t b = 0; b < 10; ++b)
        for (std::size_t r = 0; r < 20; ++r) xtx(a, b) += x(r, a) * x(r, b);
    plain_err = std::max(plain_err, max_abs_diff(interference_matrix(x, {Kind::kPlain, 0.0}), xtx));
  }
  return {unit_diag && ident_err <= 1e-8 && plain_err <= 1e-12,
          std::string("naive diag exactly 1: ") + (unit_diag ? "yes" : "no") +
              ", consequentialism vs I " + fmt("%.3g", ident_err) + " <= 1e-8, plain vs X'X " +
              fmt("%.3g", plain_err) + " <= 1e-12"};
}

Outcome toy_surface_checks() {
  double csgd = 0.0;
  for (double mu : {0.1, 0.9}) {
    ToySurfaceConfig cfg;
    cfg.mu_csgd = mu;
    csgd = std::max(csgd, straightness(toy_loss_surface(cfg).trajectories[2]));
  }
  const double sgd = straightness(toy_loss_surface(ToySurfaceConfig{}).trajectories[0]);
  ToySurfaceConfig one;
  one.mu_csgd = 1.0;
  const ToySurfaceResult r = toy_loss_surface(one);
  const auto& p = r.trajectories[2].points[1];
  const double step_err =
      std::max(std::abs(p[0] - r.optimum[0]), std::abs(p[1] - r.optimum[1]));
  return {csgd <= 1e-9 && sgd > 1e-3 && step_err <= 1e-10,
          "c-sgd straightness " + fmt("%.3g", csgd) + " <= 1e-9, sgd " + fmt("%.3g", sgd) +
              " > 1e-3, one-step error " + fmt("%.3g", step_err) + " <= 1e-10"};
}

Outcome toy_paths_checks() {
  const ToyPathsResult r = toy_output_paths(ToyPathsConfig{});
  const PathRun& csgd = r.runs.front();
  double straight = 0.0;
  for (std::size_t s = 0; s < 2; ++s) straight = std::max(straight, straightness(output_path(r, csgd, s)));
  const double e0 = frobenius_norm(csgd.outputs[0] - r.targets);
  double worst = 0.0;
  for (std::size_t k = 1; k < csgd.outputs.size(); ++k) {
    const double expected = std::pow(0.3, double(k)) * e0;
    worst = std::max(worst, std::abs(frobenius_norm(csgd.outputs[k] - r.targets) - expected) / expected);
  }
  return {straight <= 1e-6 && worst <= 1e-6 && csgd.outputs.size() == 21,
          "straightness " + fmt("%.3g", straight) + " <= 1e-6, contraction rel err " +
              fmt("%.3g", worst) + " <= 1e-6 over 20 steps"};
}

// Each rule runs at its own rate, picked from {0.001, 0.002, 0.005, 0.01, 0.02,
// 0.05, 0.1, 0.2, 0.5} by mean loss over epochs 1..10 on seeds 6..10, which are
// not used below. The two rates are not on a common scale: plain SGD sums the
// gradient over the batch and diverges above ~0.01.
constexpr double kSgdRate = 0.002;
constexpr double kCsgdRate = 0.2;

Outcome directional_training() {
  const fs::path root = fs::path(CONSEQ_DATA_DIR) / "fashion-mnist-1k";
  const Dataset ds = normalize(load_idx(root / "images-idx3-ubyte", root / "labels-idx1-ubyte"),
                               Normalization::kUnitRange);
  if (ds.size() != 1000) return {false, "expected 1000 samples, found " + std::to_string(ds.size())};
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.layer_sizes = {784, 64, 64, 10};
    cfg.batch_size = 32;
    cfg.epochs = 10;
    cfg.seed = seed;
    cfg.report_every = 1000000;
    cfg.rule = StepRule::sgd(kSgdRate);
    const TrainResult sgd = train(ds, cfg);
    cfg.rule = StepRule::sgd(kCsgdRate);
    cfg.transform = GradientTransform::consequentialism(1e-3);
    const TrainResult csgd = train(ds, cfg);
    bool win = true;
    for (std::size_t e = 2; e <= cfg.epochs; ++e) win &= csgd.epoch_loss[e] < sgd.epoch_loss[e];
    wins += win;
    per_seed += " " + std::to_string(seed) + ":" + (win ? "c" : "s") + "(" +
                fmt("%.3g", csgd.epoch_loss.back()) + "/" + fmt("%.3g", sgd.epoch_loss.back()) + ")";
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds with c-sgd below sgd at every epoch >= 2 "
                         "[seed:winner(final c-sgd/sgd)]" + per_seed};
}

Outcome conv_equivalence() {
  std::mt19937_64 rng(109);
  std::normal_distribution<double> dist;
  auto random_image = [&](ImageDims d) {
    ImageBatch img(d);
    for (double& v : img.data) v = dist(rng);
    return img;
  };
  double fwd = 0.0, adj = 0.0;
  for (std::size_t kh = 1; kh <= 3; ++kh)
    for (std::size_t kw = 1; kw <= 3; ++kw)
      for (std::size_t stride = 1; stride <= 2; ++stride)
        for (std::size_t pad = 0; pad <= 1; ++pad) {
          const ConvSpec spec{3, kh, kw, stride, pad};
          const ImageBatch img = random_image({2, 3, 5, 5});
          const Matrix w = random_matrix(3, 3 * kh * kw, rng);
          const ImageBatch a = conv_forward(img, w, spec), b = oracle::direct_conv(img, w, spec);
          for (std::size_t i = 0; i < a.data.size(); ++i) fwd = std::max(fwd, std::abs(a.data[i] - b.data[i]));
          const Matrix p = im2col(img, spec);
          const Matrix y = random_matrix(p.rows(), p.cols(), rng);
          const ImageBatch back = col2im(y, img.dims, spec);
          double rhs = 0.0;
          for (std::size_t i = 0; i < img.data.size(); ++i) rhs += img.data[i] * back.data[i];
          const double lhs = inner(p, y);
          adj = std::max(adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
        }
  const ImageBatch img = random_image({1, 8, 2, 3});
  const ConvSpec one{4, 1, 1, 1, 0};
  const Matrix w = random_matrix(4, 8, rng);
  const ImageBatch dz = random_image(conv_output_dims(img.dims, one));
  const Matrix conv_dw =
      conv_backward(img, w, one, dz, 0.6, GradientTransform::consequentialism(0.0)).dw;
  const Matrix x = image_to_columns(img);
  const Network net = single_linear(w);
  const Matrix t = gemm(w, x) - image_to_columns(dz);
  const Matrix fc_dw = backward_consequentialism(net, forward(net, x, t, Loss::kMse), 0.6, 0.0).dw[0];
  const double red = max_abs_diff(conv_dw, fc_dw);
  return {fwd <= 1e-10 && adj <= 1e-10 && red <= 1e-12,
          "forward vs loops " + fmt("%.3g", fwd) + " <= 1e-10, adjointness " + fmt("%.3g", adj) +
              " <= 1e-10, 1x1 vs dense " + fmt("%.3g", red) + " <= 1e-12"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / ("conseq_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path data = fs::path(CONSEQ_DATA_DIR) / "fashion-mnist-1k";
  const std::string train_cfg = "images = " + (data / "images-idx3-ubyte").string() +
                                "\nlabels = " + (data / "labels-idx1-ubyte").string() +
                                "\nlimit = 300\narch = 784, 32, 10\nepochs = 2\n"
                                "rule = momentum\nbeta = 0.9\nmu = 0.05\n"
                                "transform = consequentialism\nlambda = 1e-3\nreport_every = 3\n";
  const std::pair<const char*, std::string> runs[] = {
      {"toy-surface", ""}, {"toy-paths", "seed = 7\n"}, {"train", train_cfg}};
  std::size_t files = 0;
  std::string mismatched;
  for (const auto& [command, cfg_text] : runs) {
    const fs::path cfg = base / (std::string(command) + ".cfg");
    std::ofstream(cfg) << cfg_text;
    for (const char* tag : {"a", "b"}) {
      std::ostringstream out, err;
      const int code = dispatch({command, "--config", cfg.string(), "--out", (base / command / tag).string()},
                                out, err);
      if (code != 0) return {false, std::string(command) + " exited " + std::to_string(code) + ": " + err.str()};
    }
    for (const auto& entry : fs::directory_iterator(base / command / "a")) {
      ++files;
      const fs::path other = base / command / "b" / entry.path().filename();
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) mismatched += " " + entry.path().filename().string();
    }
  }
  fs::remove_all(base);
  return {mismatched.empty() && files > 0,
          std::to_string(files) + " CSV files from toy-surface, toy-paths and train compared byte for byte" +
              (mismatched.empty() ? "" : ", differing:" + mismatched)};
}

}  // namespace
}  // namespace conseq

int main() {
  using namespace conseq;
  criterion(1, "gradient oracle", 10, gradient_oracle);
  criterion(2, "virtual-target identity", 1, virtual_target_identity);
  criterion(3, "NLMS reduction", 1, nlms_reduction);
  criterion(4, "error contraction", 1, error_contraction);
  criterion(5, "interference matrices", 1, interference_modes);
  criterion(6, "toy loss surface", 1, toy_surface_checks);
  criterion(7, "toy output paths", 5, toy_paths_checks);
  criterion(8, "directional training", 300, directional_training);
  criterion(9, "conv equivalence", 30, conv_equivalence);
  criterion(10, "determinism", 0, determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
