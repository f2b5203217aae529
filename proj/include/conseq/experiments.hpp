// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "conseq/conv.hpp"
#include "conseq/data.hpp"
#include "conseq/matrix.hpp"
#include "conseq/nn.hpp"
#include "conseq/optim.hpp"

namespace conseq {

// ---------------------------------------------------------------------------
// Trajectories and the straightness metric
// ---------------------------------------------------------------------------

struct Trajectory {
  std::vector<std::vector<double>> points;
  // Where the path is heading. When absent the last point is used.
  std::optional<std::vector<double>> target;
  std::string rule;
  double mu = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
};

// Largest perpendicular distance from any point to the line through the first
// point and the target, divided by the distance between those two. Throws
// DegenerateTrajectory for fewer than two points, ragged dimensions or a
// zero-length reference segment.
double straightness(const Trajectory& traj);

// %.17g, enough digits to round-trip a double.
std::string format_double(double v);

// `step,dim0,dim1,...` with one row per point.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

// ---------------------------------------------------------------------------
// Two-weight toy loss surface: outputs z_i = w_i x_i, MSE loss.
// ---------------------------------------------------------------------------

struct ToySurfaceConfig {
  // The defaults give an ellipse with axis ratio 9 (x2^2 / x1^2).
  std::array<double, 2> x{1.0, 3.0};
  std::array<double, 2> t{1.0, 1.0};
  std::array<double, 2> w0{0.0, 0.0};
  double mu_sgd = 0.2;
  double mu_momentum = 0.1;
  double beta = 0.6;
  double mu_csgd = 0.5;
  double lambda = 0.0;
  std::size_t steps = 30;
  std::array<double, 2> grid_w1{-0.5, 2.0};
  std::array<double, 2> grid_w2{-0.5, 1.0};
  std::size_t grid_points = 51;
};

struct GridPoint {
  double w1, w2, loss;
};

struct ToySurfaceResult {
  std::vector<GridPoint> grid;
  // sgd, momentum, c-sgd in that order.
  std::vector<Trajectory> trajectories;
  std::array<double, 2> optimum{};
};

// Throws ConfigError when an input is zero and lambda = 0.
ToySurfaceResult toy_loss_surface(const ToySurfaceConfig& cfg);

double toy_loss(const ToySurfaceConfig& cfg, std::array<double, 2> w);

// Writes toy_surface_grid.csv and toy_surface_<rule>.csv; returns the paths.
std::vector<std::filesystem::path> write_toy_surface(const ToySurfaceResult& result,
                                                     const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Output paths of a single linear layer trained on a Gaussian mini-batch.
// ---------------------------------------------------------------------------

struct ToyPathsConfig {
  std::size_t d_in = 20;
  std::size_t d_out = 2;
  std::size_t samples = 10;
  std::size_t steps = 20;
  double mu_csgd = 0.7;
  std::vector<double> mu_sgd{0.03, 0.01};
  double lambda = 0.0;
  std::uint64_t seed = 1;
};

struct PathRun {
  std::string rule;  // "sgd" or "c-sgd"
  double mu = 0.0;
  std::vector<Matrix> outputs;  // Z_0 .. Z_steps, each d_out x samples
};

struct ToyPathsResult {
  Matrix inputs;
  Matrix targets;
  std::vector<PathRun> runs;  // c-sgd first, then one per sgd rate
  double lambda = 0.0;
  std::uint64_t seed = 0;
};

ToyPathsResult toy_output_paths(const ToyPathsConfig& cfg);

// Path of one sample's output vector, targeted at its column of `targets`.
Trajectory output_path(const ToyPathsResult& result, const PathRun& run, std::size_t sample);

// Writes toy_paths_<rule>_mu<mu>.csv (dims sample-major: sample s, output d is
// dim(s*d_out + d)) and toy_paths_targets.csv; returns the paths.
std::vector<std::filesystem::path> write_toy_paths(const ToyPathsResult& result,
                                                   const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Mini-batch training
// ---------------------------------------------------------------------------

struct ConvStage {
  ConvSpec spec;
  Activation activation = Activation::kRelu;
};

struct TrainConfig {
  // Full chain {D0, ..., DL}. D0 must equal the dataset dimension (or the
  // flattened conv output) and DL the class count.
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::kRelu;
  Loss loss = Loss::kSoftmaxCrossEntropy;
  bool bias = false;
  InitScheme init = InitScheme::kKaiming;
  GradientTransform transform;
  StepRule rule;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t report_every = 10;
  // When false wall_ms is written as 0 so repeated runs give identical CSV.
  bool wall_clock = false;
  std::optional<ConvStage> conv;
};

struct TrainRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double wall_ms = 0.0;
  double loss = 0.0;      // mean per-sample loss over the whole split
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  // Index 0 is before training, index e after epoch e.
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

TrainResult train(const Dataset& ds, const TrainConfig& cfg);

void write_train_csv(std::ostream& os, const std::vector<TrainRecord>& records);

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckConfig {
  std::vector<std::size_t> layer_sizes{3, 4, 2};
  Activation hidden_activation = Activation::kRelu;
  Loss loss = Loss::kMse;
  std::size_t batch = 4;
  bool bias = false;
  // ReLU nets resample inputs until every pre-activation is at least this far from 0.
  double kink_margin = 1e-3;
};

// Relative error |a - b| / max(|a|, |b|, kGradCheckFloor) is reported; the
// floor keeps near-zero gradients from turning rounding noise into large ratios.
inline constexpr double kGradCheckFloor = 1e-4;

// Largest relative error between -dw/mu from backward_bp and central
// differences with step h, over every weight of a random network.
double grad_check(const GradCheckConfig& cfg, double h, std::uint64_t seed);

}  // namespace conseq
