// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conseq/data.hpp"
#include "conseq/experiments.hpp"

namespace conseq {

enum class DatasetFormat { kIdx, kCifar10 };

// Everything a run can be configured with. Keys not mentioned in a config file
// keep these defaults.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = ".";

  // toy-surface
  ToySurfaceConfig toy_surface;

  // toy-paths
  ToyPathsConfig toy_paths;

  // train
  DatasetFormat dataset_format = DatasetFormat::kIdx;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path cifar_dir;
  std::size_t limit = 0;  // 0 keeps every sample
  Normalization normalize = Normalization::kUnitRange;
  std::vector<std::size_t> arch;
  Activation activation = Activation::kRelu;
  Loss loss = Loss::kSoftmaxCrossEntropy;
  StepRule::Kind rule = StepRule::Kind::kSgd;
  GradientTransform::Kind transform = GradientTransform::Kind::kPlain;
  double mu = 0.01;
  double lambda = 0.0;
  double beta = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t report_every = 10;
  InitScheme init = InitScheme::kKaiming;
  bool bias = false;
  bool wall_clock = false;
  std::optional<ConvSpec> conv;

  // grad-check
  double h = 1e-6;
  double kink_margin = 1e-3;

  // interference
  std::filesystem::path batch;
  double epsilon = 0.0;
};

// Line-oriented `key = value` text; `#` starts a comment. Throws ConfigError
// naming the line and key for unknown keys or invalid values.
RunConfig parse_config(std::string_view text);

RunConfig load_config(const std::filesystem::path& path);

StepRule step_rule_of(const RunConfig& cfg);
TrainConfig train_config_of(const RunConfig& cfg);

// Whitespace/comma separated rows, one sample per column; `#` comments.
Matrix read_matrix_text(std::string_view text);

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand: toy-surface, toy-paths, train, grad-check or
// interference. Returns 0 on success, 1 on a runtime or domain error (one-line
// diagnostic on `err`), 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace conseq
