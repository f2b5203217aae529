// SPDX-License-Identifier: Apache-2.0
#include "conseq/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <tuple>

#include "conseq/error.hpp"
#include "conseq/linalg.hpp"

namespace conseq {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

std::string mu_tag(double mu) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", mu);
  return buf;
}

// ----- training model: optional conv front end followed by an MLP ---------

struct Model {
  std::optional<ConvStage> conv;
  Matrix conv_weights;
  ImageShape image;
  Network mlp;
};

struct ModelPass {
  ImageBatch image;   // conv input
  ImageBatch conv_z;  // conv pre-activation
  ForwardCache cache;
};

ImageBatch columns_as_images(const Matrix& x, const ImageShape& shape) {
  ImageBatch img(ImageDims{x.cols(), shape.channels, shape.height, shape.width});
  const std::size_t d = shape.size();
  for (std::size_t n = 0; n < x.cols(); ++n)
    for (std::size_t p = 0; p < d; ++p) img.data[n * d + p] = x(p, n);
  return img;
}

Matrix images_as_columns(const ImageBatch& img) {
  const std::size_t d = img.dims.c * img.dims.h * img.dims.w;
  Matrix x(d, img.dims.n);
  for (std::size_t n = 0; n < img.dims.n; ++n)
    for (std::size_t p = 0; p < d; ++p) x(p, n) = img.data[n * d + p];
  return x;
}

Matrix mlp_input(const Model& model, const Matrix& x, ModelPass* pass) {
  if (!model.conv) return x;
  ImageBatch img = columns_as_images(x, model.image);
  ImageBatch z = conv_forward(img, model.conv_weights, model.conv->spec);
  ImageBatch act = z;
  const Matrix activated =
      apply_activation(model.conv->activation, Matrix(1, act.data.size(), act.data));
  act.data.assign(activated.data().begin(), activated.data().end());
  Matrix flat = images_as_columns(act);
  if (pass) {
    pass->image = std::move(img);
    pass->conv_z = std::move(z);
  }
  return flat;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const Model& model, const Dataset& ds, Loss loss) {
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    const std::size_t end = std::min(ds.size(), start + kChunk);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Batch b = make_batch(ds, idx);
    const ForwardCache cache = forward(model.mlp, mlp_input(model, b.x, nullptr), b.t, loss);
    total += cache.loss;
    const Matrix& out = cache.x.back();
    for (std::size_t n = 0; n < out.cols(); ++n) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < out.rows(); ++r)
        if (out(r, n) > out(best, n)) best = r;
      if (static_cast<int>(best) == ds.labels[idx[n]]) ++correct;
    }
  }
  const double m = static_cast<double>(ds.size());
  return {total / m, static_cast<double>(correct) / m};
}

Model build_model(const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.layer_sizes.size() < 2) throw ConfigError("arch needs at least two sizes");
  if (cfg.batch_size == 0 || cfg.batch_size > ds.size()) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " does not fit " +
                      std::to_string(ds.size()) + " samples");
  }
  if (cfg.layer_sizes.back() != ds.num_classes) {
    throw ConfigError("arch ends with " + std::to_string(cfg.layer_sizes.back()) +
                      " outputs but the dataset has " + std::to_string(ds.num_classes) +
                      " classes");
  }
  Model model;
  std::size_t mlp_in = ds.dim();
  if (cfg.conv) {
    if (cfg.transform.kind == GradientTransform::Kind::kConsequentialism &&
        cfg.transform.lambda <= 0.0) {
      throw ConfigError(
          "conv layers require lambda > 0: the patch Gram matrix is singular by construction "
          "when lambda = 0");
    }
    if (!ds.image) throw ConfigError("a conv layer needs an image dataset");
    model.conv = cfg.conv;
    model.image = *ds.image;
    const ImageDims in{1, ds.image->channels, ds.image->height, ds.image->width};
    const ImageDims out = conv_output_dims(in, cfg.conv->spec);
    mlp_in = out.c * out.h * out.w;
    const std::size_t fan_in = in.c * cfg.conv->spec.kernel_h * cfg.conv->spec.kernel_w;
    model.conv_weights = Matrix(cfg.conv->spec.out_channels, fan_in);
    std::mt19937_64 rng(cfg.seed ^ 0xC0117A5EULL);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& w : model.conv_weights.data()) w = dist(rng);
  }
  if (cfg.layer_sizes.front() != mlp_in) {
    throw ConfigError("arch starts with " + std::to_string(cfg.layer_sizes.front()) +
                      " inputs but the data provides " + std::to_string(mlp_in));
  }
  const Activation out_act =
      cfg.loss == Loss::kSoftmaxCrossEntropy ? Activation::kSoftmax : Activation::kLinear;
  model.mlp = Network::mlp(cfg.layer_sizes, cfg.hidden_activation, out_act, cfg.bias);
  init_weights(model.mlp, cfg.init, cfg.seed);
  return model;
}

}  // namespace

// ---------------------------------------------------------------------------

double straightness(const Trajectory& traj) {
  if (traj.points.size() < 2) throw DegenerateTrajectory("need at least two points");
  const std::vector<double>& start = traj.points.front();
  const std::vector<double>& end = traj.target ? *traj.target : traj.points.back();
  const std::size_t dim = start.size();
  if (end.size() != dim) throw DegenerateTrajectory("target dimension differs from the path");
  std::vector<double> dir(dim);
  double len_sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    dir[i] = end[i] - start[i];
    len_sq += dir[i] * dir[i];
  }
  if (len_sq == 0.0) throw DegenerateTrajectory("start and target coincide");
  double worst = 0.0;
  for (const auto& p : traj.points) {
    if (p.size() != dim) throw DegenerateTrajectory("points have different dimensions");
    double along = 0.0;
    for (std::size_t i = 0; i < dim; ++i) along += (p[i] - start[i]) * dir[i];
    along /= len_sq;
    double perp_sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double r = (p[i] - start[i]) - along * dir[i];
      perp_sq += r * r;
    }
    worst = std::max(worst, std::sqrt(perp_sq));
  }
  return worst / std::sqrt(len_sq);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t dim = traj.points.empty() ? 0 : traj.points.front().size();
  os << "step";
  for (std::size_t d = 0; d < dim; ++d) os << ",dim" << d;
  os << '\n';
  for (std::size_t s = 0; s < traj.points.size(); ++s) {
    os << s;
    for (double v : traj.points[s]) os << ',' << format_double(v);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------

double toy_loss(const ToySurfaceConfig& cfg, std::array<double, 2> w) {
  double loss = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double e = cfg.t[i] - w[i] * cfg.x[i];
    loss += 0.5 * e * e;
  }
  return loss;
}

ToySurfaceResult toy_loss_surface(const ToySurfaceConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (cfg.lambda == 0.0 && (cfg.x[0] == 0.0 || cfg.x[1] == 0.0)) {
    throw ConfigError("toy inputs must be nonzero when lambda = 0");
  }
  if (cfg.grid_points < 2) throw ConfigError("grid_points must be at least 2");
  ToySurfaceResult result;
  for (int i = 0; i < 2; ++i) {
    result.optimum[i] = cfg.x[i] != 0.0 ? cfg.t[i] / cfg.x[i] : cfg.w0[i];
  }

  const std::size_t g = cfg.grid_points;
  for (std::size_t i = 0; i < g; ++i) {
    const double w1 = cfg.grid_w1[0] + (cfg.grid_w1[1] - cfg.grid_w1[0]) * double(i) / double(g - 1);
    for (std::size_t j = 0; j < g; ++j) {
      const double w2 =
          cfg.grid_w2[0] + (cfg.grid_w2[1] - cfg.grid_w2[0]) * double(j) / double(g - 1);
      result.grid.push_back({w1, w2, toy_loss(cfg, {w1, w2})});
    }
  }

  struct Run {
    const char* name;
    StepRule rule;
    bool consequentialism;
  };
  const Run runs[] = {
      {"sgd", StepRule::sgd(cfg.mu_sgd), false},
      {"momentum", StepRule::momentum(cfg.mu_momentum, cfg.beta), false},
      {"c-sgd", StepRule::sgd(cfg.mu_csgd), true},
  };
  for (const Run& run : runs) {
    Trajectory traj;
    traj.rule = run.name;
    traj.mu = run.rule.mu;
    traj.lambda = run.consequentialism ? cfg.lambda : 0.0;
    traj.target = std::vector<double>{result.optimum[0], result.optimum[1]};
    OptState state;
    Matrix w = Matrix::row(cfg.w0);
    traj.points.push_back({w(0, 0), w(0, 1)});
    for (std::size_t s = 0; s < cfg.steps; ++s) {
      // Each weight is a 1x1 layer fed a single scalar input.
      Matrix grad(1, 2);
      for (std::size_t i = 0; i < 2; ++i) {
        const Matrix dz{{w(0, i) * cfg.x[i] - cfg.t[i]}};
        const Matrix x{{cfg.x[i]}};
        grad(0, i) = run.consequentialism ? ridge_right_pinv_apply(dz, x, cfg.lambda)(0, 0)
                                          : gemm(dz, x, Op::kNone, Op::kTranspose)(0, 0);
      }
      const std::vector<Matrix> grads{grad};
      w += step(run.rule, state, grads).front();
      traj.points.push_back({w(0, 0), w(0, 1)});
    }
    result.trajectories.push_back(std::move(traj));
  }
  return result;
}

std::vector<std::filesystem::path> write_toy_surface(const ToySurfaceResult& result,
                                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  {
    paths.push_back(dir / "toy_surface_grid.csv");
    auto os = open_csv(paths.back());
    os << "w1,w2,loss\n";
    for (const GridPoint& p : result.grid) {
      os << format_double(p.w1) << ',' << format_double(p.w2) << ',' << format_double(p.loss)
         << '\n';
    }
  }
  for (const Trajectory& traj : result.trajectories) {
    paths.push_back(dir / ("toy_surface_" + traj.rule + ".csv"));
    auto os = open_csv(paths.back());
    write_trajectory_csv(os, traj);
  }
  return paths;
}

// ---------------------------------------------------------------------------

ToyPathsResult toy_output_paths(const ToyPathsConfig& cfg) {
  if (cfg.d_in == 0 || cfg.d_out == 0 || cfg.samples == 0) {
    throw ConfigError("toy path dimensions must be positive");
  }
  ToyPathsResult result;
  result.lambda = cfg.lambda;
  result.seed = cfg.seed;
  std::tie(result.inputs, result.targets) =
      synthetic_gaussian(cfg.d_in, cfg.d_out, cfg.samples, cfg.seed);

  Layer layer;
  layer.weights = Matrix(cfg.d_out, cfg.d_in);
  Network initial(std::vector<Layer>{layer});
  init_weights(initial, InitScheme::kXavier, cfg.seed + 1);

  auto run_rule = [&](const std::string& rule, double mu, bool consequentialism) {
    PathRun run;
    run.rule = rule;
    run.mu = mu;
    Network net = initial;
    for (std::size_t s = 0;; ++s) {
      const ForwardCache cache = forward(net, result.inputs, result.targets, Loss::kMse);
      run.outputs.push_back(cache.z.back());
      if (s == cfg.steps) break;
      const GradBundle g = consequentialism
                               ? backward_consequentialism(net, cache, mu, cfg.lambda)
                               : backward_bp(net, cache, mu);
      net.apply(g.dw);
    }
    result.runs.push_back(std::move(run));
  };
  run_rule("c-sgd", cfg.mu_csgd, true);
  for (double mu : cfg.mu_sgd) run_rule("sgd", mu, false);
  return result;
}

Trajectory output_path(const ToyPathsResult& result, const PathRun& run, std::size_t sample) {
  if (sample >= result.targets.cols()) {
    throw InvalidArgument("sample " + std::to_string(sample) + " out of range");
  }
  Trajectory traj;
  traj.rule = run.rule;
  traj.mu = run.mu;
  traj.lambda = run.rule == "c-sgd" ? result.lambda : 0.0;
  traj.seed = result.seed;
  for (const Matrix& z : run.outputs) traj.points.push_back(z.column_values(sample));
  traj.target = result.targets.column_values(sample);
  return traj;
}

std::vector<std::filesystem::path> write_toy_paths(const ToyPathsResult& result,
                                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  auto flatten = [](const Matrix& z) {
    std::vector<double> flat;
    for (std::size_t s = 0; s < z.cols(); ++s)
      for (std::size_t d = 0; d < z.rows(); ++d) flat.push_back(z(d, s));
    return flat;
  };
  {
    paths.push_back(dir / "toy_paths_targets.csv");
    auto os = open_csv(paths.back());
    Trajectory t;
    t.points.push_back(flatten(result.targets));
    write_trajectory_csv(os, t);
  }
  for (const PathRun& run : result.runs) {
    paths.push_back(dir / ("toy_paths_" + run.rule + "_mu" + mu_tag(run.mu) + ".csv"));
    auto os = open_csv(paths.back());
    Trajectory t;
    for (const Matrix& z : run.outputs) t.points.push_back(flatten(z));
    write_trajectory_csv(os, t);
  }
  return paths;
}

// ---------------------------------------------------------------------------

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.rule.validate();
  if (cfg.report_every == 0) throw ConfigError("report_every must be positive");
  Model model = build_model(ds, cfg);
  OptState state;
  TrainResult result;

  const Evaluation start = evaluate(model, ds, cfg.loss);
  result.records.push_back({0, 0, 0.0, start.loss, start.accuracy});
  result.epoch_loss.push_back(start.loss);
  result.epoch_accuracy.push_back(start.accuracy);

  std::size_t iteration = 0;
  double wall_ms = 0.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const EpochBatches batches = batch_iter(ds, cfg.batch_size, cfg.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = batches[b];
      const auto t0 = std::chrono::steady_clock::now();

      ModelPass pass;
      const Matrix x1 = mlp_input(model, batch.x, &pass);
      pass.cache = forward(model.mlp, x1, batch.t, cfg.loss);
      Backprop bp = backprop(model.mlp, pass.cache, cfg.transform);

      std::vector<Matrix> grads;
      if (model.conv) {
        const Layer& first = model.mlp.layer(0);
        Matrix back = gemm(first.weights, bp.dz[0], Op::kTranspose, Op::kNone);
        ImageBatch dz_conv = pass.conv_z;
        const Matrix deriv = activation_derivative(
            model.conv->activation, Matrix(1, pass.conv_z.data.size(), pass.conv_z.data));
        const std::size_t d = x1.rows();
        for (std::size_t n = 0; n < x1.cols(); ++n)
          for (std::size_t p = 0; p < d; ++p)
            dz_conv.data[n * d + p] = back(p, n) * deriv(0, n * d + p);
        grads.push_back(conv_backprop(pass.image, model.conv_weights, model.conv->spec, dz_conv,
                                      cfg.transform)
                            .grad);
      }
      for (Matrix& g : bp.grad) grads.push_back(std::move(g));

      std::vector<Matrix> deltas = step(cfg.rule, state, grads);
      const std::size_t offset = model.conv ? 1 : 0;
      if (model.conv) {
        model.conv_weights += deltas[0];
        if (!model.conv_weights.all_finite()) throw InvalidArgument("conv weights diverged");
      }
      for (std::size_t l = 0; l < model.mlp.depth(); ++l) {
        deltas[l + offset] *= model.mlp.layer(l).lr_multiplier;
      }
      model.mlp.apply(std::span(deltas).subspan(offset));

      const auto t1 = std::chrono::steady_clock::now();
      if (cfg.wall_clock) {
        wall_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
      }
      ++iteration;
      const bool epoch_end = b + 1 == batches.size();
      if (iteration % cfg.report_every == 0 || epoch_end) {
        const Evaluation ev = evaluate(model, ds, cfg.loss);
        result.records.push_back({iteration, epoch, wall_ms, ev.loss, ev.accuracy});
        if (epoch_end) {
          result.epoch_loss.push_back(ev.loss);
          result.epoch_accuracy.push_back(ev.accuracy);
        }
      }
    }
  }
  return result;
}

void write_train_csv(std::ostream& os, const std::vector<TrainRecord>& records) {
  os << "iteration,epoch,wall_ms,train_loss,train_acc\n";
  for (const TrainRecord& r : records) {
    os << r.iteration << ',' << r.epoch << ',' << format_double(r.wall_ms) << ','
       << format_double(r.loss) << ',' << format_double(r.accuracy) << '\n';
  }
}

// ---------------------------------------------------------------------------

double grad_check(const GradCheckConfig& cfg, double h, std::uint64_t seed) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  const Activation out_act =
      cfg.loss == Loss::kSoftmaxCrossEntropy ? Activation::kSoftmax : Activation::kLinear;
  Network net = Network::mlp(cfg.layer_sizes, cfg.hidden_activation, out_act, cfg.bias);
  init_weights(net, InitScheme::kXavier, seed);
  if (cfg.bias) {
    // Nonzero biases so their gradients are exercised away from the default.
    std::mt19937_64 brng(seed ^ 0xB1A5ULL);
    std::uniform_real_distribution<double> bd(-0.5, 0.5);
    for (std::size_t l = 0; l < net.depth(); ++l) {
      Layer& layer = net.layer(l);
      for (std::size_t r = 0; r < layer.out_dim(); ++r) layer.weights(r, layer.in_dim()) = bd(brng);
    }
  }

  std::mt19937_64 rng(seed + 0x5EED);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d_in = cfg.layer_sizes.front();
  const std::size_t d_out = cfg.layer_sizes.back();
  Matrix x(d_in, cfg.batch);
  Matrix t(d_out, cfg.batch);
  if (cfg.loss == Loss::kMse) {
    for (double& v : t.data()) v = normal(rng);
  } else {
    std::uniform_int_distribution<std::size_t> cls(0, d_out - 1);
    for (std::size_t n = 0; n < cfg.batch; ++n) t(cls(rng), n) = 1.0;
  }

  auto off_kink = [&](const ForwardCache& cache) {
    for (std::size_t l = 0; l < net.depth(); ++l) {
      if (net.layer(l).activation != Activation::kRelu) continue;
      for (double z : cache.z[l].data())
        if (std::abs(z) < cfg.kink_margin) return false;
    }
    return true;
  };
  ForwardCache cache;
  for (int attempt = 0;; ++attempt) {
    for (double& v : x.data()) v = normal(rng);
    cache = forward(net, x, t, cfg.loss);
    if (off_kink(cache)) break;
    if (attempt == 10000) throw DegenerateInput("could not draw inputs away from ReLU kinks");
  }

  const GradBundle g = backward_bp(net, cache, 1.0);
  double worst = 0.0;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Matrix& w = net.layer(l).weights;
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + h;
        const double plus = forward(net, x, t, cfg.loss).loss;
        w(r, c) = saved - h;
        const double minus = forward(net, x, t, cfg.loss).loss;
        w(r, c) = saved;
        const double numeric = (plus - minus) / (2.0 * h);
        const double analytic = -g.dw[l](r, c) / net.layer(l).lr_multiplier;
        const double denom =
            std::max({std::abs(numeric), std::abs(analytic), kGradCheckFloor});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
      }
  }
  return worst;
}

}  // namespace conseq
