// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vfc/dataset.hpp"
#include "vfc/model.hpp"

namespace vfc {

// ---------------------------------------------------------------------------
// configuration

enum class TrainMode { variable_rate, fixed_rate, baseline };

struct TrainConfig {
  double lambda_min = 0.0001;
  double lambda_max = 5.12;
  int epochs = 15;
  int batch_size = 32;
  double lr0 = 0.01;
  uint64_t seed = 1;
  int config_k = 1;
  TrainMode mode = TrainMode::variable_rate;
  double fixed_lambda = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double grad_clip = 5.0; // global-norm clip; 0 disables
  int64_t n_train = 8000;
  int64_t n_test = 2000;
  int64_t bottleneck_total = 4096;
  ClassifierSpec cls_override; // defaulted; tests shrink it

  void validate() const {
    if (!(lambda_min > 0) || lambda_min > lambda_max)
      throw ConfigError("require 0 < lambda_min <= lambda_max");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs/batch_size must be >= 1");
    if (lr0 <= 0) throw ConfigError("lr0 must be > 0");
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.config_k = config_k;
    mc.lambda_min = static_cast<float>(lambda_min);
    mc.lambda_max = static_cast<float>(lambda_max);
    mc.bottleneck_total = bottleneck_total;
    mc.cls = cls_override;
    return mc;
  }
};

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "variable_rate") return TrainMode::variable_rate;
  if (s == "fixed_rate") return TrainMode::fixed_rate;
  if (s == "baseline") return TrainMode::baseline;
  throw ConfigError("unknown mode '" + s +
                    "' (expected variable_rate, fixed_rate or baseline)");
}

// Line-oriented `key = value` file; '#' starts a comment.
inline TrainConfig parse_train_config(std::istream& is) {
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "lambda_min") c.lambda_min = std::stod(val);
      else if (key == "lambda_max") c.lambda_max = std::stod(val);
      else if (key == "epochs") c.epochs = std::stoi(val);
      else if (key == "batch_size") c.batch_size = std::stoi(val);
      else if (key == "lr0") c.lr0 = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "config_k") c.config_k = std::stoi(val);
      else if (key == "mode") c.mode = parse_train_mode(val);
      else if (key == "fixed_lambda") c.fixed_lambda = std::stod(val);
      else if (key == "momentum") c.momentum = std::stod(val);
      else if (key == "weight_decay") c.weight_decay = std::stod(val);
      else if (key == "grad_clip") c.grad_clip = std::stod(val);
      else if (key == "n_train") c.n_train = std::stoll(val);
      else if (key == "n_test") c.n_test = std::stoll(val);
      else if (key == "bottleneck_total") c.bottleneck_total = std::stoll(val);
      else throw ConfigError("config line " + std::to_string(lineno) +
                             ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  c.validate();
  return c;
}

inline TrainConfig parse_train_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  return parse_train_config(is);
}

// ---------------------------------------------------------------------------
// lambda sampling: log-uniform over [lambda_min, lambda_max]

inline double sample_lambda(Rng& rng, double lmin, double lmax) {
  if (!(lmin > 0) || lmin > lmax) throw ConfigError("sample_lambda: bad range");
  return std::exp(rng.uniform(std::log(lmin), std::log(lmax)));
}

// ---------------------------------------------------------------------------
// losses

template <class T>
struct LossParts {
  Tensor<T> total;
  double ce = 0;
  double rate_bits_per_image = 0;
  double rate_bpp = 0;
};

// L = mean CE + lambda * mean bpp; the rate term shares the single forward's
// noise realization with the CE path.
template <class T>
LossParts<T> loss_variable(const SplitModel<T>& m, const Tensor<T>& images,
                           const std::vector<int>& labels, double lambda,
                           uint64_t noise_seed) {
  const double l = SplitModel<T>::snap_lambda(lambda);
  auto feature = forward_edge(m.classifier, m.sc, images);
  auto lemb = m.embed.forward(l);
  auto z = m.ae.encode(feature, lemb);
  auto zt = add_uniform_noise(z, noise_seed);
  auto bits = rate_loss_bits(zt, m.density);
  auto xhat = m.ae.decode(zt, lemb);
  auto logits = forward_cloud(m.classifier, m.sc, xhat);
  auto ce = cross_entropy(logits, labels);

  const double n = static_cast<double>(images.dim(0));
  const double pixels = static_cast<double>(images.dim(1) * images.dim(2));
  LossParts<T> parts;
  parts.ce = static_cast<double>(ce.item());
  parts.rate_bits_per_image = static_cast<double>(bits.item()) / n;
  parts.rate_bpp = parts.rate_bits_per_image / pixels;
  parts.total = add(ce, scale(bits, static_cast<T>(l / (n * pixels))));
  return parts;
}

// ---------------------------------------------------------------------------
// evaluation helpers

inline double accuracy_bypass(const SplitModel<float>& m, const Dataset& ds,
                              int64_t limit = -1, int64_t batch = 64) {
  NoGradGuard ng;
  const int64_t n = limit < 0 ? ds.size() : std::min<int64_t>(limit, ds.size());
  int64_t correct = 0;
  for (int64_t at = 0; at < n; at += batch) {
    std::vector<int64_t> idx;
    for (int64_t i = at; i < std::min(n, at + batch); ++i) idx.push_back(i);
    auto logits = forward_bypass(m, gather_images(ds, idx));
    for (size_t r = 0; r < idx.size(); ++r) {
      const float* row = logits.data() + static_cast<int64_t>(r) * m.cfg.cls.num_classes;
      int best = 0;
      for (int k = 1; k < m.cfg.cls.num_classes; ++k)
        if (row[k] > row[best]) best = k;
      if (best == ds.labels[static_cast<size_t>(idx[r])]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

// Accuracy through the real quantized pipeline (rounding, no entropy coding).
inline double accuracy_compressed(const SplitModel<float>& m, const Dataset& ds,
                                  double lambda, int64_t limit = -1,
                                  int64_t batch = 64) {
  NoGradGuard ng;
  const int64_t n = limit < 0 ? ds.size() : std::min<int64_t>(limit, ds.size());
  auto lemb = m.lambda_embedding(lambda);
  int64_t correct = 0;
  for (int64_t at = 0; at < n; at += batch) {
    std::vector<int64_t> idx;
    for (int64_t i = at; i < std::min(n, at + batch); ++i) idx.push_back(i);
    auto f = forward_edge(m.classifier, m.sc, gather_images(ds, idx));
    auto z = m.ae.encode(f, lemb);
    auto q = quantize(z, m.grid);
    auto zhat = dequantize(q.symbols, z.shape());
    auto logits = forward_cloud(m.classifier, m.sc, m.ae.decode(zhat, lemb));
    for (size_t r = 0; r < idx.size(); ++r) {
      const float* row = logits.data() + static_cast<int64_t>(r) * m.cfg.cls.num_classes;
      int best = 0;
      for (int k = 1; k < m.cfg.cls.num_classes; ++k)
        if (row[k] > row[best]) best = k;
      if (best == ds.labels[static_cast<size_t>(idx[r])]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// training loop

struct EpochLog {
  int epoch = 0;
  double lr = 0, mean_ce = 0, mean_rate_bpp = 0, probe_top1 = 0;
};

struct TrainResult {
  SplitModel<float> model;
  std::vector<EpochLog> log;
  std::string log_csv;
};

namespace detail {

inline std::string format_log_csv(const std::vector<EpochLog>& rows) {
  std::string out = "epoch,lr,mean_ce,mean_rate_bpp,probe_top1\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.8g,%.6f,%.6f,%.2f\n", r.epoch, r.lr,
                  r.mean_ce, r.mean_rate_bpp, r.probe_top1);
    out += buf;
  }
  return out;
}

template <class T>
void clip_gradients(const ParamList<T>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    const T* g = p.tensor.grad();
    for (int64_t i = 0; i < p.tensor.numel(); ++i)
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const T s = static_cast<T>(max_norm / norm);
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    T* g = p.tensor.grad();
    for (int64_t i = 0; i < p.tensor.numel(); ++i) g[i] *= s;
  }
}

inline std::vector<int64_t> shuffled_indices(int64_t n, Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

} // namespace detail

// Joint optimization of classifier, autoencoder and entropy model. Fully
// reproducible given the seed; thread count does not change the math.
// mode == baseline trains the split classifier alone (no compression), used
// as the accuracy-retention reference.
inline TrainResult fit(const TrainConfig& cfg, const DataBundle& data,
                       const std::string& out_dir = "", bool verbose = false) {
  cfg.validate();
  TrainResult res;
  res.model = SplitModel<float>::make(cfg.model_config(), cfg.seed);
  auto& m = res.model;

  ParamList<float> params;
  if (cfg.mode == TrainMode::baseline) {
    m.classifier.collect("cls.", params);
  } else {
    params = m.parameters();
  }
  SgdOptimizer<float> opt(params, cfg.momentum, cfg.weight_decay);

  Rng order_rng(splitmix64(cfg.seed ^ 0x4f524445ull));  // "ORDE"
  Rng lambda_rng(splitmix64(cfg.seed ^ 0x4c414d42ull)); // "LAMB"
  const uint64_t noise_base = splitmix64(cfg.seed ^ 0x4e4f495345ull); // "NOISE"

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  const int64_t n = data.train.size();
  double initial_loss = 0;
  bool have_initial = false;
  int diverged_epochs = 0;
  uint64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
    auto order = detail::shuffled_indices(n, order_rng);
    double sum_loss = 0, sum_ce = 0, sum_bpp = 0;
    int64_t batches = 0;

    for (int64_t at = 0; at < n; at += cfg.batch_size) {
      double lambda = cfg.fixed_lambda;
      if (cfg.mode == TrainMode::variable_rate)
        lambda = sample_lambda(lambda_rng, cfg.lambda_min, cfg.lambda_max);

      std::vector<int64_t> idx(order.begin() + at,
                               order.begin() + std::min(n, at + cfg.batch_size));
      auto images = gather_images(data.train, idx);
      auto labels = gather_labels(data.train, idx);

      double loss_val = 0;
      opt.zero_grad();
      if (cfg.mode == TrainMode::baseline) {
        auto logits = forward_bypass(m, images);
        auto ce = cross_entropy(logits, labels);
        loss_val = static_cast<double>(ce.item());
        sum_ce += loss_val;
        if (!std::isfinite(loss_val))
          throw NumericError("NaN loss at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(step) +
                             " (lr=" + std::to_string(lr) + ")");
        ce.backward();
      } else {
        auto parts = loss_variable(m, images, labels, lambda, noise_base + step);
        loss_val = static_cast<double>(parts.total.item());
        if (!std::isfinite(loss_val))
          throw NumericError("NaN loss at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(step) + " (lambda=" +
                             std::to_string(lambda) + ", lr=" + std::to_string(lr) + ")");
        sum_ce += parts.ce;
        sum_bpp += parts.rate_bpp;
        parts.total.backward();
      }
      detail::clip_gradients(opt.params(), cfg.grad_clip);
      opt.step(lr);
      sum_loss += loss_val;
      ++batches;
      ++step;
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.mean_ce = sum_ce / static_cast<double>(batches);
    row.mean_rate_bpp = sum_bpp / static_cast<double>(batches);
    row.probe_top1 =
        cfg.mode == TrainMode::baseline
            ? accuracy_bypass(m, data.test, 256)
            : accuracy_compressed(m, data.test, cfg.lambda_min, 256);
    res.log.push_back(row);
    if (verbose)
      std::fprintf(stderr, "epoch %d lr %.5f ce %.4f bpp %.4f probe %.2f%%\n",
                   epoch, lr, row.mean_ce, row.mean_rate_bpp, row.probe_top1);

    if (!out_dir.empty()) {
      if (cfg.mode != TrainMode::baseline) m.rebuild_tables();
      save_model(out_dir + "/checkpoint.fwt", m);
    }

    const double mean_loss = sum_loss / static_cast<double>(batches);
    if (!have_initial) {
      initial_loss = mean_loss;
      have_initial = true;
    }
    diverged_epochs = mean_loss > 10.0 * initial_loss ? diverged_epochs + 1 : 0;
    if (diverged_epochs >= 3)
      throw NumericError("training diverged: loss " + std::to_string(mean_loss) +
                         " > 10x initial " + std::to_string(initial_loss) +
                         " for 3 epochs");
  }

  if (cfg.mode != TrainMode::baseline) m.rebuild_tables();
  res.log_csv = detail::format_log_csv(res.log);
  if (!out_dir.empty()) {
    save_model(out_dir + "/model.fwt", m);
    std::ofstream os(out_dir + "/train_log.csv", std::ios::binary);
    os << res.log_csv;
  }
  return res;
}

} // namespace vfc
