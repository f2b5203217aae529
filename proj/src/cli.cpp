// SPDX-License-Identifier: Apache-2.0
#include "conseq/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "conseq/error.hpp"

namespace conseq {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Value parsers throw std::invalid_argument; parse_config adds line and key.
double to_double(std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_uint(std::string_view v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto end = comma == std::string_view::npos ? v.size() : comma;
    const auto item = trim(v.substr(start, end - start));
    if (item.empty()) throw std::invalid_argument("empty list element");
    parts.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::vector<double> to_doubles(std::string_view v, std::size_t expected = 0) {
  std::vector<double> out;
  for (auto p : split_list(v)) out.push_back(to_double(p));
  if (expected && out.size() != expected) {
    throw std::invalid_argument("expected " + std::to_string(expected) + " values");
  }
  return out;
}

std::array<double, 2> to_pair(std::string_view v) {
  const auto d = to_doubles(v, 2);
  return {d[0], d[1]};
}

double positive(double v) {
  if (!(v > 0.0)) throw std::invalid_argument("must be > 0");
  return v;
}

double non_negative(double v) {
  if (!(v >= 0.0)) throw std::invalid_argument("must be >= 0");
  return v;
}

double unit_interval(double v) {
  if (!(v >= 0.0 && v < 1.0)) throw std::invalid_argument("must lie in [0, 1)");
  return v;
}

std::size_t at_least_one(std::uint64_t v) {
  if (v < 1) throw std::invalid_argument("must be >= 1");
  return static_cast<std::size_t>(v);
}

template <typename T>
T lookup(std::string_view v, std::initializer_list<std::pair<std::string_view, T>> choices) {
  std::string names;
  for (const auto& [name, value] : choices) {
    if (name == v) return value;
    names += (names.empty() ? "" : ", ") + std::string(name);
  }
  throw std::invalid_argument("expected one of " + names + ", got '" + std::string(v) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seed", [](RunConfig& c, std::string_view v) { c.seed = to_uint(v); }},
      {"out", [](RunConfig& c, std::string_view v) { c.out = std::string(v); }},
      // toy-surface
      {"x", [](RunConfig& c, std::string_view v) { c.toy_surface.x = to_pair(v); }},
      {"t", [](RunConfig& c, std::string_view v) { c.toy_surface.t = to_pair(v); }},
      {"w0", [](RunConfig& c, std::string_view v) { c.toy_surface.w0 = to_pair(v); }},
      {"mu_sgd", [](RunConfig& c, std::string_view v) { c.toy_surface.mu_sgd = positive(to_double(v)); }},
      {"mu_momentum",
       [](RunConfig& c, std::string_view v) { c.toy_surface.mu_momentum = positive(to_double(v)); }},
      {"mu_csgd",
       [](RunConfig& c, std::string_view v) {
         c.toy_surface.mu_csgd = c.toy_paths.mu_csgd = positive(to_double(v));
       }},
      {"steps",
       [](RunConfig& c, std::string_view v) {
         c.toy_surface.steps = c.toy_paths.steps = at_least_one(to_uint(v));
       }},
      {"grid_w1", [](RunConfig& c, std::string_view v) { c.toy_surface.grid_w1 = to_pair(v); }},
      {"grid_w2", [](RunConfig& c, std::string_view v) { c.toy_surface.grid_w2 = to_pair(v); }},
      {"grid_points",
       [](RunConfig& c, std::string_view v) {
         const auto n = to_uint(v);
         if (n < 2) throw std::invalid_argument("must be >= 2");
         c.toy_surface.grid_points = n;
       }},
      // toy-paths
      {"d_in", [](RunConfig& c, std::string_view v) { c.toy_paths.d_in = at_least_one(to_uint(v)); }},
      {"d_out", [](RunConfig& c, std::string_view v) { c.toy_paths.d_out = at_least_one(to_uint(v)); }},
      {"samples",
       [](RunConfig& c, std::string_view v) { c.toy_paths.samples = at_least_one(to_uint(v)); }},
      {"sgd_rates",
       [](RunConfig& c, std::string_view v) {
         auto rates = to_doubles(v);
         for (double r : rates) positive(r);
         c.toy_paths.mu_sgd = std::move(rates);
       }},
      // train
      {"dataset",
       [](RunConfig& c, std::string_view v) {
         c.dataset_format =
             lookup<DatasetFormat>(v, {{"idx", DatasetFormat::kIdx}, {"cifar10", DatasetFormat::kCifar10}});
       }},
      {"images", [](RunConfig& c, std::string_view v) { c.images = std::string(v); }},
      {"labels", [](RunConfig& c, std::string_view v) { c.labels = std::string(v); }},
      {"cifar_dir", [](RunConfig& c, std::string_view v) { c.cifar_dir = std::string(v); }},
      {"limit", [](RunConfig& c, std::string_view v) { c.limit = to_uint(v); }},
      {"normalize",
       [](RunConfig& c, std::string_view v) {
         c.normalize = lookup<Normalization>(
             v, {{"none", Normalization::kNone},
                 {"unit_range", Normalization::kUnitRange},
                 {"centered_half", Normalization::kCenteredHalf},
                 {"standardize_features", Normalization::kStandardizeFeatures}});
       }},
      {"arch",
       [](RunConfig& c, std::string_view v) {
         std::vector<std::size_t> sizes;
         for (auto p : split_list(v)) sizes.push_back(at_least_one(to_uint(p)));
         if (sizes.size() < 2) throw std::invalid_argument("needs at least input and output sizes");
         c.arch = std::move(sizes);
       }},
      {"activation",
       [](RunConfig& c, std::string_view v) {
         c.activation =
             lookup<Activation>(v, {{"relu", Activation::kRelu}, {"linear", Activation::kLinear}});
       }},
      {"loss",
       [](RunConfig& c, std::string_view v) {
         c.loss = lookup<Loss>(
             v, {{"mse", Loss::kMse}, {"cross_entropy", Loss::kSoftmaxCrossEntropy}});
       }},
      {"rule",
       [](RunConfig& c, std::string_view v) {
         c.rule = lookup<StepRule::Kind>(v, {{"sgd", StepRule::Kind::kSgd},
                                             {"momentum", StepRule::Kind::kMomentum},
                                             {"nesterov", StepRule::Kind::kNesterov},
                                             {"adam", StepRule::Kind::kAdam}});
       }},
      {"transform",
       [](RunConfig& c, std::string_view v) {
         c.transform = lookup<GradientTransform::Kind>(
             v, {{"plain", GradientTransform::Kind::kPlain},
                 {"consequentialism", GradientTransform::Kind::kConsequentialism}});
       }},
      {"mu", [](RunConfig& c, std::string_view v) { c.mu = positive(to_double(v)); }},
      {"lambda",
       [](RunConfig& c, std::string_view v) {
         c.lambda = c.toy_surface.lambda = c.toy_paths.lambda = non_negative(to_double(v));
       }},
      {"beta",
       [](RunConfig& c, std::string_view v) { c.beta = c.toy_surface.beta = unit_interval(to_double(v)); }},
      {"adam_beta1", [](RunConfig& c, std::string_view v) { c.adam_beta1 = unit_interval(to_double(v)); }},
      {"adam_beta2", [](RunConfig& c, std::string_view v) { c.adam_beta2 = unit_interval(to_double(v)); }},
      {"adam_eps", [](RunConfig& c, std::string_view v) { c.adam_eps = positive(to_double(v)); }},
      {"epochs", [](RunConfig& c, std::string_view v) { c.epochs = at_least_one(to_uint(v)); }},
      {"batch_size", [](RunConfig& c, std::string_view v) { c.batch_size = at_least_one(to_uint(v)); }},
      {"report_every",
       [](RunConfig& c, std::string_view v) { c.report_every = at_least_one(to_uint(v)); }},
      {"init",
       [](RunConfig& c, std::string_view v) {
         c.init = lookup<InitScheme>(v, {{"kaiming", InitScheme::kKaiming}, {"xavier", InitScheme::kXavier}});
       }},
      {"bias", [](RunConfig& c, std::string_view v) { c.bias = to_bool(v); }},
      {"wall_clock", [](RunConfig& c, std::string_view v) { c.wall_clock = to_bool(v); }},
      {"conv",
       [](RunConfig& c, std::string_view v) {
         const auto parts = split_list(v);
         if (parts.size() != 5) {
           throw std::invalid_argument("expected out_channels,kernel_h,kernel_w,stride,pad");
         }
         ConvSpec spec;
         spec.out_channels = at_least_one(to_uint(parts[0]));
         spec.kernel_h = at_least_one(to_uint(parts[1]));
         spec.kernel_w = at_least_one(to_uint(parts[2]));
         spec.stride = at_least_one(to_uint(parts[3]));
         spec.pad = to_uint(parts[4]);
         c.conv = spec;
       }},
      // grad-check
      {"h", [](RunConfig& c, std::string_view v) { c.h = positive(to_double(v)); }},
      {"kink_margin", [](RunConfig& c, std::string_view v) { c.kink_margin = non_negative(to_double(v)); }},
      // interference
      {"batch", [](RunConfig& c, std::string_view v) { c.batch = std::string(v); }},
      {"epsilon", [](RunConfig& c, std::string_view v) { c.epsilon = non_negative(to_double(v)); }},
  };
  return table;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_matrix(std::ostream& os, const std::string& title, const Matrix& m) {
  os << title << " (" << m.shape_string() << ")\n";
  char buf[40];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%s%.10g", c ? " " : "", m(r, c));
      os << buf;
    }
    os << '\n';
  }
}

Dataset load_training_data(const RunConfig& cfg) {
  Dataset ds;
  if (cfg.dataset_format == DatasetFormat::kIdx) {
    if (cfg.images.empty() || cfg.labels.empty()) {
      throw ConfigError("train with dataset = idx needs `images` and `labels`");
    }
    ds = load_idx(cfg.images, cfg.labels);
  } else {
    if (cfg.cifar_dir.empty()) throw ConfigError("train with dataset = cifar10 needs `cifar_dir`");
    ds = load_cifar10(cfg.cifar_dir);
  }
  if (cfg.limit) ds = take(ds, cfg.limit);
  return normalize(ds, cfg.normalize);
}

int run_toy_surface(const RunConfig& cfg, std::ostream& out) {
  const ToySurfaceResult result = toy_loss_surface(cfg.toy_surface);
  for (const auto& p : write_toy_surface(result, cfg.out)) out << "wrote " << p.string() << '\n';
  for (const auto& traj : result.trajectories) {
    out << traj.rule << " straightness " << format_double(straightness(traj)) << '\n';
  }
  return kExitOk;
}

int run_toy_paths(const RunConfig& cfg, std::ostream& out) {
  ToyPathsConfig pc = cfg.toy_paths;
  pc.seed = cfg.seed;
  const ToyPathsResult result = toy_output_paths(pc);
  for (const auto& p : write_toy_paths(result, cfg.out)) out << "wrote " << p.string() << '\n';
  for (const auto& run : result.runs) {
    for (std::size_t s = 0; s < std::min<std::size_t>(2, pc.samples); ++s) {
      out << run.rule << " mu " << format_double(run.mu) << " sample " << s << " straightness "
          << format_double(straightness(output_path(result, run, s))) << '\n';
    }
  }
  return kExitOk;
}

int run_train(const RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_training_data(cfg);
  const TrainResult result = train(ds, train_config_of(cfg));
  std::filesystem::create_directories(cfg.out);
  const auto path = cfg.out / "train.csv";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_train_csv(os, result.records);
  out << "wrote " << path.string() << '\n';
  out << "final train_loss " << format_double(result.epoch_loss.back()) << " train_acc "
      << format_double(result.epoch_accuracy.back()) << '\n';
  return kExitOk;
}

int run_grad_check(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  GradCheckConfig gc;
  if (!cfg.arch.empty()) gc.layer_sizes = cfg.arch;
  gc.hidden_activation = cfg.activation;
  gc.loss = cfg.loss;
  gc.batch = cfg.batch_size;
  gc.bias = cfg.bias;
  gc.kink_margin = cfg.kink_margin;
  const double worst = grad_check(gc, cfg.h, cfg.seed);
  out << "max_relative_error " << format_double(worst) << '\n';
  if (worst > 1e-5) {
    err << "gradient check failed: max relative error " << format_double(worst)
        << " exceeds 1e-05\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int run_interference(const RunConfig& cfg, std::ostream& out) {
  if (cfg.batch.empty()) throw ConfigError("interference needs a batch file (--batch or `batch`)");
  const Matrix x = read_matrix_text(read_text(cfg.batch));
  using Kind = InterferenceMode::Kind;
  print_matrix(out, "plain X'X", interference_matrix(x, {Kind::kPlain, 0.0}));
  print_matrix(out, "naive_normalized Xhat'X, epsilon = " + format_double(cfg.epsilon),
               interference_matrix(x, {Kind::kNaiveNormalized, 0.0, cfg.epsilon}));
  print_matrix(out, "consequentialism (X'X + lambda I)^-1 X'X, lambda = " + format_double(cfg.lambda),
               interference_matrix(x, {Kind::kConsequentialism, cfg.lambda}));
  return kExitOk;
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  const auto& table = setters();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected `key = value`");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(where + ": unknown key `" + std::string(key) + "`");
    if (value.empty()) throw ConfigError(where + ": key `" + std::string(key) + "` has no value");
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": key `" + std::string(key) + "`: " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

StepRule step_rule_of(const RunConfig& cfg) {
  switch (cfg.rule) {
    case StepRule::Kind::kSgd:
      return StepRule::sgd(cfg.mu);
    case StepRule::Kind::kMomentum:
      return StepRule::momentum(cfg.mu, cfg.beta);
    case StepRule::Kind::kNesterov:
      return StepRule::nesterov(cfg.mu, cfg.beta);
    case StepRule::Kind::kAdam:
      return StepRule::adam(cfg.mu, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  }
  return StepRule::sgd(cfg.mu);
}

TrainConfig train_config_of(const RunConfig& cfg) {
  if (cfg.arch.empty()) throw ConfigError("train needs `arch`");
  TrainConfig tc;
  tc.layer_sizes = cfg.arch;
  tc.hidden_activation = cfg.activation;
  tc.loss = cfg.loss;
  tc.bias = cfg.bias;
  tc.init = cfg.init;
  tc.transform = {cfg.transform, cfg.lambda};
  tc.rule = step_rule_of(cfg);
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  tc.report_every = cfg.report_every;
  tc.wall_clock = cfg.wall_clock;
  if (cfg.conv) tc.conv = ConvStage{*cfg.conv, Activation::kRelu};
  return tc;
}

Matrix read_matrix_text(std::string_view text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string cleaned(line);
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream ss(cleaned);
    std::string tok;
    std::size_t count = 0;
    while (ss >> tok) {
      try {
        values.push_back(to_double(tok));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("batch row " + std::to_string(rows + 1) + ": " + e.what());
      }
      ++count;
    }
    if (count == 0) continue;
    if (rows == 0) cols = count;
    if (count != cols) {
      throw DimensionMismatch("batch row " + std::to_string(rows + 1) + " has " +
                              std::to_string(count) + " values, expected " + std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw ConfigError("batch file holds no numbers");
  return Matrix(rows, cols, std::move(values));
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Consequentialism weight-update experiments", "conseq"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> batch;
  const std::pair<const char*, const char*> commands[] = {
      {"toy-surface", "Two-weight loss surface and SGD / momentum / C-SGD trajectories"},
      {"toy-paths", "Output paths of a 20->2 linear layer under SGD and C-SGD"},
      {"train", "Mini-batch MLP training, one CSV row per report interval"},
      {"grad-check", "Finite-difference check of the backward pass"},
      {"interference", "Print the interference matrices of a batch file"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "Config file (key = value lines)");
    sub->add_option("--seed", seed, "Seed, overrides the config");
    sub->add_option("--out", out_dir, "Output directory, overrides the config");
    if (std::string_view(name) == "interference") {
      sub->add_option("--batch", batch, "Matrix file, one sample per column");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (batch) cfg.batch = *batch;
    if (command == "toy-surface") return run_toy_surface(cfg, out);
    if (command == "toy-paths") return run_toy_paths(cfg, out);
    if (command == "train") return run_train(cfg, out);
    if (command == "grad-check") return run_grad_check(cfg, out, err);
    return run_interference(cfg, out);
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace conseq
