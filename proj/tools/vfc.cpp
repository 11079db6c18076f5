// SPDX-License-Identifier: Apache-2.0
// vfc: variable-rate feature compression workbench.
//
// Subcommands: train, sweep, bd, encode, decode, serve, infer, bench-latency,
// dataset-gen, report. Exit codes: 0 ok, 2 config error, 3 model/format
// error, 4 network error, 1 unexpected runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "vfc/bench.hpp"
#include "vfc/net.hpp"
#include "vfc/trainer.hpp"

namespace {

struct CommonOpts {
  int threads = 1;
};

vfc::DataBundle load_or_generate(const std::string& dataset_path, uint64_t seed,
                                 int64_t n_train, int64_t n_test) {
  if (!dataset_path.empty()) return vfc::load_dataset_cache(dataset_path);
  return vfc::make_default_dataset(seed, n_train, n_test);
}

// deterministic data columns only (no wall-clock); the reproducibility
// surface for repeated sweeps
std::string sweep_csv(const vfc::RACurve& c) {
  std::string out = "config_k,lambda,bpp,est_bpp,top1,clamp_rate\n";
  char buf[192];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.4f,%.8g\n", p.config_k,
                  p.lambda, p.bpp, p.est_bpp, p.top1, p.clamp_rate);
    out += buf;
  }
  return out;
}

vfc::Tensor<float> fetch_image(const std::string& dataset_path, uint64_t gen_seed,
                               int64_t index) {
  if (!dataset_path.empty()) {
    auto b = vfc::load_dataset_cache(dataset_path);
    if (index < 0 || index >= b.test.size())
      throw vfc::ConfigError("--index out of range for test split of " + dataset_path);
    return vfc::gather_images(b.test, {index});
  }
  auto ds = vfc::make_synthetic_dataset(index + 1, gen_seed, 0x54455354ull);
  return vfc::gather_images(ds, {index});
}

int run(int argc, char** argv) {
  CLI::App app{"variable-rate split-inference feature compression workbench"};
  app.require_subcommand(1);
  CommonOpts common;
  app.add_option("--threads", common.threads, "worker threads (1 = deterministic reference mode)")
      ->capture_default_str();

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "train a model");
  std::string train_config, train_out = "run", train_dataset, train_mode;
  vfc::TrainConfig tc;
  bool verbose = false;
  cmd_train->add_option("--config", train_config, "key = value config file");
  cmd_train->add_option("--out", train_out, "output directory")->capture_default_str();
  cmd_train->add_option("--dataset", train_dataset, "dataset cache file (else generated)");
  cmd_train->add_option("--epochs", tc.epochs)->capture_default_str();
  cmd_train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  cmd_train->add_option("--seed", tc.seed)->capture_default_str();
  cmd_train->add_option("--config-k", tc.config_k)->capture_default_str();
  cmd_train->add_option("--mode", train_mode, "variable_rate | fixed_rate | baseline");
  cmd_train->add_option("--fixed-lambda", tc.fixed_lambda)->capture_default_str();
  cmd_train->add_option("--lr0", tc.lr0)->capture_default_str();
  cmd_train->add_flag("--verbose", verbose, "per-epoch progress on stderr");

  // ---- sweep ----
  auto* cmd_sweep = app.add_subcommand("sweep", "rate-accuracy sweep over lambda");
  std::string sweep_model, sweep_out = "sweep_out", sweep_dataset;
  int sweep_points = 12;
  int64_t sweep_limit = -1;
  uint64_t sweep_eval_seed = 1;
  cmd_sweep->add_option("--model", sweep_model, "trained model file")->required();
  cmd_sweep->add_option("--out", sweep_out, "output directory")->capture_default_str();
  cmd_sweep->add_option("--dataset", sweep_dataset, "dataset cache (else generated)");
  cmd_sweep->add_option("--points", sweep_points, "log-spaced lambda count")
      ->capture_default_str();
  cmd_sweep->add_option("--eval-limit", sweep_limit, "cap on eval images (-1 = all)");
  cmd_sweep->add_option("--eval-seed", sweep_eval_seed)->capture_default_str();

  // ---- bd ----
  auto* cmd_bd = app.add_subcommand("bd", "delta-accuracy between two curve CSVs");
  std::string bd_a, bd_b;
  cmd_bd->add_option("--a", bd_a, "curve A csv")->required();
  cmd_bd->add_option("--b", bd_b, "curve B csv (baseline)")->required();

  // ---- encode ----
  auto* cmd_encode = app.add_subcommand("encode", "encode an image or feature to a .vfcb file");
  std::string enc_model, enc_out = "out.vfcb", enc_input, enc_dataset;
  double enc_lambda = 0.01;
  int64_t enc_index = 0;
  uint64_t enc_seed = 1;
  cmd_encode->add_option("--model", enc_model)->required();
  cmd_encode->add_option("--lambda", enc_lambda)->capture_default_str();
  cmd_encode->add_option("--out", enc_out)->capture_default_str();
  cmd_encode->add_option("--input", enc_input, "FWT1 tensor file (image or split feature)");
  cmd_encode->add_option("--dataset", enc_dataset, "dataset cache; uses test split");
  cmd_encode->add_option("--index", enc_index, "image index")->capture_default_str();
  cmd_encode->add_option("--gen-seed", enc_seed, "generator seed when no dataset given")
      ->capture_default_str();

  // ---- decode ----
  auto* cmd_decode = app.add_subcommand("decode", "decode a .vfcb file and classify");
  std::string dec_model, dec_in;
  cmd_decode->add_option("--model", dec_model)->required();
  cmd_decode->add_option("--in", dec_in)->required();

  // ---- serve ----
  auto* cmd_serve = app.add_subcommand("serve", "run the cloud inference server");
  std::string srv_model, srv_addr = "127.0.0.1:5555";
  cmd_serve->add_option("--model", srv_model)->required();
  cmd_serve->add_option("--addr", srv_addr, "host:port")->capture_default_str();

  // ---- infer ----
  auto* cmd_infer = app.add_subcommand("infer", "remote inference against a server");
  std::string inf_model, inf_addr = "127.0.0.1:5555", inf_dataset;
  double inf_lambda = 0.01;
  int64_t inf_index = 0;
  uint64_t inf_seed = 1;
  cmd_infer->add_option("--model", inf_model)->required();
  cmd_infer->add_option("--addr", inf_addr)->capture_default_str();
  cmd_infer->add_option("--lambda", inf_lambda)->capture_default_str();
  cmd_infer->add_option("--dataset", inf_dataset);
  cmd_infer->add_option("--index", inf_index)->capture_default_str();
  cmd_infer->add_option("--gen-seed", inf_seed)->capture_default_str();

  // ---- bench-latency ----
  auto* cmd_lat = app.add_subcommand("bench-latency", "edge latency decomposition");
  std::string lat_model;
  std::vector<int> lat_ks{1, 2, 3};
  int lat_runs = 100, lat_warmup = 10;
  uint64_t lat_seed = 1;
  cmd_lat->add_option("--model", lat_model, "trained model (else seeded untrained models)");
  cmd_lat->add_option("--config-k", lat_ks, "configs to measure")->capture_default_str();
  cmd_lat->add_option("--runs", lat_runs)->capture_default_str();
  cmd_lat->add_option("--warmup", lat_warmup)->capture_default_str();
  cmd_lat->add_option("--seed", lat_seed)->capture_default_str();

  // ---- dataset-gen ----
  auto* cmd_data = app.add_subcommand("dataset-gen", "generate the synthetic dataset cache");
  std::string data_out = "dataset.bin";
  uint64_t data_seed = 1;
  int64_t data_train = 8000, data_test = 2000;
  cmd_data->add_option("--seed", data_seed)->capture_default_str();
  cmd_data->add_option("--out", data_out)->capture_default_str();
  cmd_data->add_option("--n-train", data_train)->capture_default_str();
  cmd_data->add_option("--n-test", data_test)->capture_default_str();

  // ---- report ----
  auto* cmd_report = app.add_subcommand("report", "merge curve CSVs into CSV + SVG report");
  std::vector<std::string> rep_curves;
  std::string rep_out = "report_out";
  cmd_report->add_option("--curves", rep_curves, "curve CSV files (first = baseline)")
      ->required();
  cmd_report->add_option("--out", rep_out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  vfc::set_threads(common.threads);

  if (*cmd_train) {
    vfc::TrainConfig cfg = train_config.empty()
                               ? vfc::TrainConfig{}
                               : vfc::parse_train_config_file(train_config);
    // flag overrides beat the file
    for (const auto* opt : cmd_train->get_options()) (void)opt;
    if (cmd_train->count("--epochs")) cfg.epochs = tc.epochs;
    if (cmd_train->count("--batch-size")) cfg.batch_size = tc.batch_size;
    if (cmd_train->count("--seed")) cfg.seed = tc.seed;
    if (cmd_train->count("--config-k")) cfg.config_k = tc.config_k;
    if (cmd_train->count("--fixed-lambda")) cfg.fixed_lambda = tc.fixed_lambda;
    if (cmd_train->count("--lr0")) cfg.lr0 = tc.lr0;
    if (!train_mode.empty()) cfg.mode = vfc::parse_train_mode(train_mode);
    cfg.validate();
    auto data = load_or_generate(train_dataset, cfg.seed, cfg.n_train, cfg.n_test);
    auto res = vfc::fit(cfg, data, train_out, verbose);
    std::printf("trained %d epochs; final probe top1 %.2f%%; model at %s/model.fwt\n",
                cfg.epochs, res.log.back().probe_top1, train_out.c_str());
    return 0;
  }

  if (*cmd_sweep) {
    auto model = vfc::load_model(sweep_model);
    auto data = load_or_generate(sweep_dataset, sweep_eval_seed, 8, 2000);
    auto grid = vfc::log_lambda_grid(model.cfg.lambda_min, model.cfg.lambda_max,
                                     sweep_points);
    vfc::SweepOptions opt;
    opt.eval_limit = sweep_limit;
    auto curve = vfc::sweep(model, data.test, grid, opt);
    std::filesystem::create_directories(sweep_out);
    {
      std::ofstream os(sweep_out + "/sweep.csv", std::ios::binary);
      os << sweep_csv(curve);
    }
    vfc::write_report(sweep_out, {curve});
    for (const auto& w : curve.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("%s", vfc::summary_table({curve}).c_str());
    std::printf("wrote %s/sweep.csv, report.csv, rate_accuracy.svg, delta_latency.svg\n",
                sweep_out.c_str());
    return 0;
  }

  if (*cmd_bd) {
    auto a = vfc::curve_from_csv_file(bd_a, "A");
    auto b = vfc::curve_from_csv_file(bd_b, "B");
    std::printf("delta_accuracy(A, B) = %+.4f %%\n", vfc::delta_accuracy(a, b));
    return 0;
  }

  if (*cmd_encode) {
    auto model = vfc::load_model(enc_model);
    vfc::Tensor<float> input;
    if (!enc_input.empty()) {
      auto entries = vfc::load_fwt_file(enc_input);
      if (entries.empty()) throw vfc::FormatError("no tensors in " + enc_input);
      input = entries[0].tensor;
      if (input.ndim() == 3)
        input = vfc::reshape(input, {1, input.dim(0), input.dim(1), input.dim(2)});
    } else {
      input = fetch_image(enc_dataset, enc_seed, enc_index);
    }
    vfc::EdgeResult r;
    const auto hw = model.cfg.cls.image_hw;
    if (input.ndim() == 4 && input.dim(3) == model.cfg.cls.in_channels &&
        input.dim(1) == hw && input.dim(2) == hw) {
      r = vfc::edge_encode(model, input, enc_lambda);
    } else if (input.ndim() == 4 && input.dim(1) == model.sc.height &&
               input.dim(2) == model.sc.width && input.dim(3) == model.sc.channels) {
      // already a split-point feature: run the conditional encoder only
      vfc::NoGradGuard ng;
      auto lemb = model.lambda_embedding(enc_lambda);
      auto z = model.ae.encode(input, lemb);
      auto q = vfc::quantize(z, model.grid);
      r.clamped = q.clamped;
      r.stream = vfc::pack_bitstream(
          q.symbols, model.ae.spec.beta, model.ae.spec.height / 2,
          model.ae.spec.width / 2, vfc::SplitModel<float>::snap_lambda(enc_lambda),
          model.cfg.config_k, model.tables);
    } else {
      throw vfc::ShapeError("input is neither an image nor a split feature: " +
                            vfc::shape_str(input.shape()));
    }
    auto bytes = r.stream.serialize();
    std::ofstream os(enc_out, std::ios::binary);
    if (!os) throw vfc::FormatError("cannot write " + enc_out);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    os.close();
    std::printf("wrote %s: %zu bytes (%zu header + %zu payload), %.4f bpp\n",
                enc_out.c_str(), bytes.size(), r.stream.header_bytes(),
                r.stream.payload.size(),
                8.0 * static_cast<double>(bytes.size()) / (hw * hw));
    return 0;
  }

  if (*cmd_decode) {
    auto model = vfc::load_model(dec_model);
    std::ifstream is(dec_in, std::ios::binary);
    if (!is) throw vfc::FormatError("cannot open " + dec_in);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                               std::istreambuf_iterator<char>());
    auto res = vfc::cloud_decode(model, bytes.data(), bytes.size());
    std::printf("class %d\n", res.pred);
    for (size_t i = 0; i < res.probs.size(); ++i)
      std::printf("p[%zu] = %.6f\n", i, res.probs[i]);
    return 0;
  }

  if (*cmd_serve) {
    auto model = vfc::load_model(srv_model);
    vfc::serve_forever(std::move(model), srv_addr);
    return 0;
  }

  if (*cmd_infer) {
    auto model = vfc::load_model(inf_model);
    auto img = fetch_image(inf_dataset, inf_seed, inf_index);
    auto r = vfc::infer_remote(model, img, inf_lambda, inf_addr);
    std::printf("class %d\n", r.pred);
    std::printf("bpp %.4f (%zu bytes)\n", r.bpp, r.wire_bytes);
    std::printf("edge: classifier %.3f ms, compression %.3f ms, encoding %.3f ms\n",
                r.edge_timing.classifier_ms, r.edge_timing.compression_ms,
                r.edge_timing.encoding_ms);
    std::printf("server: decode %u us, task %u us\n", r.server_decode_us,
                r.server_task_us);
    return 0;
  }

  if (*cmd_lat) {
    auto ds = vfc::make_synthetic_dataset(1, lat_seed, 0x54455354ull);
    auto img = vfc::gather_images(ds, {0});
    std::vector<std::string> names;
    std::vector<vfc::TimingRecord> recs;
    if (!lat_model.empty()) {
      auto model = vfc::load_model(lat_model);
      recs.push_back(vfc::measure_latency(model, img, lat_warmup, lat_runs));
      names.push_back("config" + std::to_string(model.cfg.config_k));
    } else {
      for (int k : lat_ks) {
        vfc::ModelConfig mc;
        mc.config_k = k;
        auto model = vfc::SplitModel<float>::make(mc, lat_seed);
        model.rebuild_tables();
        recs.push_back(vfc::measure_latency(model, img, lat_warmup, lat_runs));
        names.push_back("config" + std::to_string(k));
      }
    }
    std::printf("%-24s", "Metric");
    for (const auto& n : names) std::printf(" %12s", n.c_str());
    std::printf("\n%-24s", "Classifier Latency (ms)");
    for (const auto& r : recs) std::printf(" %12.3f", r.classifier_ms);
    std::printf("\n%-24s", "Compression Time (ms)");
    for (const auto& r : recs) std::printf(" %12.3f", r.compression_ms);
    std::printf("\n%-24s", "Encoding Latency (ms)");
    for (const auto& r : recs) std::printf(" %12.3f", r.encoding_ms);
    std::printf("\n");
    return 0;
  }

  if (*cmd_data) {
    auto b = vfc::make_default_dataset(data_seed, data_train, data_test);
    vfc::save_dataset_cache(data_out, b);
    std::printf("wrote %s: %lld train + %lld test images\n", data_out.c_str(),
                static_cast<long long>(data_train), static_cast<long long>(data_test));
    return 0;
  }

  if (*cmd_report) {
    std::vector<vfc::RACurve> curves;
    for (size_t i = 0; i < rep_curves.size(); ++i)
      curves.push_back(vfc::curve_from_csv_file(
          rep_curves[i], "curve" + std::to_string(i + 1)));
    vfc::write_report(rep_out, curves);
    std::printf("%s", vfc::summary_table(curves).c_str());
    std::printf("wrote %s/report.csv and SVG plots\n", rep_out.c_str());
    return 0;
  }

  return 0;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const vfc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const vfc::NetError& e) {
    std::fprintf(stderr, "network error: %s\n", e.what());
    return 4;
  } catch (const vfc::RemoteError& e) {
    std::fprintf(stderr, "network error: %s\n", e.what());
    return 4;
  } catch (const vfc::FormatError& e) {
    std::fprintf(stderr, "model/format error: %s\n", e.what());
    return 3;
  } catch (const vfc::ShapeError& e) {
    std::fprintf(stderr, "model/format error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
