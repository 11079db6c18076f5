// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <unordered_map>
#include <vector>

#include "vfc/autoencoder.hpp"
#include "vfc/classifier.hpp"
#include "vfc/entropy.hpp"
#include "vfc/rans.hpp"
#include "vfc/serial.hpp"

namespace vfc {

struct ModelConfig {
  int config_k = 1;
  float lambda_min = 1e-4f; // f32 so edge and cloud agree bit-exactly
  float lambda_max = 5.12f;
  int64_t bottleneck_total = 4096;
  int embed_dim = 64;
  ClassifierSpec cls;
};

// Everything one deployment needs: classifier split at Config.k, the
// lambda-conditioned autoencoder at the split point, the factorized entropy
// model over the bottleneck, and (after training) the shared coder tables.
template <class T>
struct SplitModel {
  ModelConfig cfg;
  Classifier<T> classifier;
  PartitionPlan plan;
  SplitConfig sc;
  LambdaEmbedding<T> embed;
  Autoencoder<T> ae;
  FactorizedDensity<T> density;
  QuantGrid grid;
  EntropyTables tables;
  bool has_tables = false;

  static SplitModel make(const ModelConfig& cfg, uint64_t seed) {
    SplitModel m;
    m.cfg = cfg;
    Rng rng(splitmix64(seed ^ 0x4d4f44ull)); // "MOD"
    m.classifier.init(cfg.cls, rng);
    m.plan = partition(m.classifier);
    m.sc = split(m.plan, cfg.config_k);
    m.embed.init(cfg.lambda_min, cfg.lambda_max, rng, cfg.embed_dim);
    auto aspec = AutoencoderSpec::make(m.sc.channels, m.sc.height, m.sc.width,
                                       cfg.bottleneck_total);
    m.ae.init(aspec, cfg.embed_dim, rng);
    m.density.init(static_cast<int>(aspec.beta), rng);
    return m;
  }

  // f32-snapped rate parameter: the wire carries f32, so every consumer of
  // lambda quantizes through f32 first and both ends compute identically.
  static double snap_lambda(double lambda) {
    return static_cast<double>(static_cast<float>(lambda));
  }

  Tensor<T> lambda_embedding(double lambda) const {
    return embed.forward(snap_lambda(lambda));
  }

  void rebuild_tables() {
    if constexpr (std::is_same_v<T, float>) {
      tables = build_tables(density, grid);
      has_tables = true;
    } else {
      throw ConfigError("tables are built on the f32 model");
    }
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    classifier.collect("cls.", out);
    embed.collect("embed.", out);
    ae.collect("ae.", out);
    density.collect("entropy.", out);
    check_unique_names(out);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }
};

// ---------------------------------------------------------------------------
// model file (FWT1): meta entry + named parameters + coder tables

inline Tensor<float> encode_model_meta(const ModelConfig& cfg) {
  std::vector<float> v{1.f,
                       static_cast<float>(cfg.config_k),
                       cfg.lambda_min,
                       cfg.lambda_max,
                       static_cast<float>(cfg.bottleneck_total),
                       static_cast<float>(cfg.embed_dim),
                       static_cast<float>(cfg.cls.num_classes),
                       static_cast<float>(cfg.cls.image_hw),
                       static_cast<float>(cfg.cls.in_channels),
                       static_cast<float>(cfg.cls.stages.size())};
  for (const auto& st : cfg.cls.stages) {
    v.push_back(static_cast<float>(st.blocks));
    v.push_back(static_cast<float>(st.channels));
    v.push_back(static_cast<float>(st.stride));
  }
  const int64_t n = static_cast<int64_t>(v.size());
  return Tensor<float>::from({n}, std::move(v));
}

inline ModelConfig decode_model_meta(const Tensor<float>& t) {
  if (t.numel() < 10 || t.data()[0] != 1.f)
    throw FormatError("model meta: unsupported layout");
  ModelConfig cfg;
  const float* v = t.data();
  cfg.config_k = static_cast<int>(v[1]);
  cfg.lambda_min = v[2];
  cfg.lambda_max = v[3];
  cfg.bottleneck_total = static_cast<int64_t>(v[4]);
  cfg.embed_dim = static_cast<int>(v[5]);
  cfg.cls.num_classes = static_cast<int>(v[6]);
  cfg.cls.image_hw = static_cast<int>(v[7]);
  cfg.cls.in_channels = static_cast<int>(v[8]);
  const int nstages = static_cast<int>(v[9]);
  if (t.numel() != 10 + 3 * nstages) throw FormatError("model meta: truncated stages");
  cfg.cls.stages.clear();
  for (int i = 0; i < nstages; ++i)
    cfg.cls.stages.push_back({static_cast<int>(v[10 + 3 * i]),
                              static_cast<int>(v[10 + 3 * i + 1]),
                              static_cast<int>(v[10 + 3 * i + 2])});
  return cfg;
}

inline void save_model(const std::string& path, const SplitModel<float>& m) {
  ParamList<float> entries;
  entries.push_back({"meta.config", encode_model_meta(m.cfg)});
  auto params = m.parameters();
  entries.insert(entries.end(), params.begin(), params.end());
  if (m.has_tables) tables_to_entries(m.tables, "entropy.tables.", entries);
  save_fwt_file(path, entries);
}

inline SplitModel<float> load_model(const std::string& path) {
  auto entries = load_fwt_file(path);
  std::unordered_map<std::string, Tensor<float>> by_name;
  for (auto& e : entries) by_name.emplace(e.name, e.tensor);

  auto meta_it = by_name.find("meta.config");
  if (meta_it == by_name.end()) throw FormatError("model file: missing meta.config");
  auto m = SplitModel<float>::make(decode_model_meta(meta_it->second), 0);

  for (auto& p : m.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw FormatError("model file: missing parameter " + p.name);
    if (it->second.shape() != p.tensor.shape())
      throw FormatError("model file: shape mismatch for " + p.name + ": file " +
                        shape_str(it->second.shape()) + " vs model " +
                        shape_str(p.tensor.shape()));
    std::copy(it->second.data(), it->second.data() + it->second.numel(),
              p.tensor.data());
  }
  auto tm = by_name.find("entropy.tables.meta");
  auto tf = by_name.find("entropy.tables.freq");
  if (tm != by_name.end() && tf != by_name.end()) {
    m.tables = tables_from_entries(tm->second, tf->second);
    m.has_tables = true;
  }
  return m;
}

// ---------------------------------------------------------------------------
// inference pipeline pieces (used locally, by the CLI and by the server)

struct TimingRecord {
  double classifier_ms = 0; // edge front-end forward
  double compression_ms = 0; // quantize + rANS encode + pack
  double encoding_ms = 0;    // total edge time
};

struct EdgeResult {
  Bitstream stream;
  int64_t clamped = 0;
  TimingRecord timing;
};

struct CloudResult {
  int pred = 0;
  std::vector<float> probs;
  double decode_ms = 0; // unpack + rANS + feature decode
  double task_ms = 0;   // cloud classifier forward
};

inline std::vector<float> softmax(const Tensor<float>& logits_row) {
  const float* v = logits_row.data();
  const int64_t k = logits_row.numel();
  float m = v[0];
  for (int64_t i = 1; i < k; ++i) m = std::max(m, v[i]);
  double s = 0;
  std::vector<float> p(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    p[static_cast<size_t>(i)] = std::exp(v[i] - m);
    s += p[static_cast<size_t>(i)];
  }
  for (auto& x : p) x = static_cast<float>(x / s);
  return p;
}

inline int argmax(const std::vector<float>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

namespace detail {
inline double ms_between(std::chrono::steady_clock::time_point a,
                         std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}
} // namespace detail

// Edge side: front-end forward, conditional encode, quantize, entropy-code.
inline EdgeResult edge_encode(const SplitModel<float>& m, const Tensor<float>& image,
                              double lambda) {
  if (!m.has_tables)
    throw ConfigError("model has no entropy tables; train or rebuild first");
  NoGradGuard ng;
  using clock = std::chrono::steady_clock;
  EdgeResult r;
  const auto t0 = clock::now();
  auto feature = forward_edge(m.classifier, m.sc, image);
  const auto t1 = clock::now();
  auto lemb = m.lambda_embedding(lambda);
  auto z = m.ae.encode(feature, lemb);
  const auto t2 = clock::now();
  auto q = quantize(z, m.grid);
  r.clamped = q.clamped;
  r.stream = pack_bitstream(q.symbols, m.ae.spec.beta, m.ae.spec.height / 2,
                            m.ae.spec.width / 2,
                            SplitModel<float>::snap_lambda(lambda), m.cfg.config_k,
                            m.tables);
  const auto t3 = clock::now();
  r.timing.classifier_ms = detail::ms_between(t0, t1);
  r.timing.compression_ms = detail::ms_between(t2, t3);
  r.timing.encoding_ms = detail::ms_between(t0, t3);
  return r;
}

// Cloud side: entropy-decode, conditional decode, back-end forward.
inline CloudResult cloud_decode(const SplitModel<float>& m, const uint8_t* data,
                                size_t len) {
  if (!m.has_tables)
    throw ConfigError("model has no entropy tables; train or rebuild first");
  NoGradGuard ng;
  using clock = std::chrono::steady_clock;
  CloudResult r;
  const auto t0 = clock::now();
  auto u = unpack_bitstream(data, len, m.tables);
  if (u.C != m.ae.spec.beta || u.H != m.ae.spec.height / 2 ||
      u.W != m.ae.spec.width / 2)
    throw CorruptionError("latent dims do not match this model configuration");
  auto zhat = dequantize(u.symbols, {1, u.H, u.W, u.C});
  auto lemb = m.lambda_embedding(u.lambda);
  auto xhat = m.ae.decode(zhat, lemb);
  const auto t1 = clock::now();
  auto logits = forward_cloud(m.classifier, m.sc, xhat);
  r.probs = softmax(logits);
  r.pred = argmax(r.probs);
  const auto t2 = clock::now();
  r.decode_ms = detail::ms_between(t0, t1);
  r.task_ms = detail::ms_between(t1, t2);
  return r;
}

struct LocalInference {
  int pred = 0;
  std::vector<float> probs;
  EdgeResult edge;
  CloudResult cloud;
  double bpp = 0; // from real coded bytes, header included
};

inline LocalInference infer_local(const SplitModel<float>& m,
                                  const Tensor<float>& image, double lambda) {
  LocalInference r;
  r.edge = edge_encode(m, image, lambda);
  auto bytes = r.edge.stream.serialize();
  r.cloud = cloud_decode(m, bytes.data(), bytes.size());
  r.pred = r.cloud.pred;
  r.probs = r.cloud.probs;
  const double pixels =
      static_cast<double>(m.cfg.cls.image_hw) * static_cast<double>(m.cfg.cls.image_hw);
  r.bpp = 8.0 * static_cast<double>(bytes.size()) / pixels;
  return r;
}

// Split classifier with the compression path bypassed (identity autoencoder).
template <class T>
Tensor<T> forward_bypass(const SplitModel<T>& m, const Tensor<T>& image) {
  return forward_cloud(m.classifier, m.sc, forward_edge(m.classifier, m.sc, image));
}

} // namespace vfc
