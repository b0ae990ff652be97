// Copyright (c) the shallowcodec project authors.
//
// Use of this source code is governed by the Apache License, Version 2.0,
// which can be found in the LICENSE file.
//
// shallowc: command-line front end for the shallow codec library.
// Subcommands: train, encode, decode, eval, flops, traverse, probe.
// Machine-readable output is one JSON object per line on stdout; human
// logs and the resolved configuration go to stderr.
// Exit codes: 0 ok, 1 usage, 2 missing input, 3 integrity, 4 numeric.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "shallow/analysis.hpp"
#include "shallow/bitstream.hpp"
#include "shallow/checkpoint.hpp"
#include "shallow/common.hpp"
#include "shallow/encoder.hpp"
#include "shallow/image.hpp"
#include "shallow/models.hpp"
#include "shallow/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shallow;

namespace {

std::vector<std::string> ListPpm(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw MissingInputError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw MissingInputError("no .ppm files in " + dir);
  return files;
}

std::vector<Image> LoadDir(const std::string& dir, bool real) {
  std::vector<Image> images;
  for (const std::string& f : ListPpm(dir)) {
    Image img = LoadImage(f);
    images.push_back(real ? ToReal(img) : std::move(img));
  }
  return images;
}

EncodeMode ParseMode(const std::string& s) {
  if (s == "oneshot") return EncodeMode::kOneshot;
  if (s == "iterative") return EncodeMode::kIterative;
  if (s == "sga") return EncodeMode::kSga;
  throw UsageError("unknown mode: " + s);
}

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void PrintResolved(const CLI::App& sub, uint64_t seed) {
  std::cerr << "# resolved config for '" << sub.get_name() << "' (seed=" << seed
            << ")\n";
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    std::cerr << "#   " << opt->get_lnames()[0] << " = "
              << (opt->count() || !opt->get_default_str().empty()
                      ? (opt->count() ? opt->results()[0]
                                      : opt->get_default_str())
                      : std::string("<unset>"))
              << "\n";
  }
}

struct RDRow {
  std::string label;
  double bpp, psnr;
};

std::vector<RDRow> ReadCurveCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open curve CSV: " + path);
  std::vector<RDRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("label", 0) == 0) continue;
    std::stringstream ss(line);
    RDRow r;
    std::string bpp, psnr;
    if (!std::getline(ss, r.label, ',') || !std::getline(ss, bpp, ',') ||
        !std::getline(ss, psnr, ','))
      throw IntegrityError("malformed curve CSV row: " + line);
    r.bpp = std::stod(bpp);
    r.psnr = std::stod(psnr);
    rows.push_back(std::move(r));
  }
  return rows;
}

RDCurve ToCurve(const std::vector<RDRow>& rows, const std::string& label) {
  RDCurve c;
  c.label = label;
  for (const RDRow& r : rows) c.points.push_back({r.bpp, r.psnr});
  std::sort(c.points.begin(), c.points.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
  return c;
}

int Run(int argc, char** argv) {
  CLI::App app{"shallowc: shallow-decoder image codec"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "train a codec on a PPM dataset");
  std::string tr_dataset, tr_out, tr_arch = "jpeg-like", tr_log;
  double tr_lambda = 0.01, tr_lr = 1e-4, tr_lr_final = 1e-5;
  int tr_steps = 2000;
  uint64_t tr_seed = 1;
  size_t tr_batch = 4, tr_patch = 64;
  unsigned tr_C = 192, tr_k = 18, tr_s = 16, tr_N = 12, tr_k1 = 13, tr_s1 = 8,
           tr_k2 = 5, tr_s2 = 2, tr_F = 64, tr_ka = 5, tr_Ch = 64;
  bool tr_analysis = false, tr_dct_init = false, tr_hyper = false,
       tr_freeze_synthesis = false;
  train->add_option("--dataset", tr_dataset, "training image directory")
      ->required();
  train->add_option("--out", tr_out, "output checkpoint path")->required();
  train->add_option("--arch", tr_arch)->check(CLI::IsMember({"jpeg-like", "two-layer"}));
  train->add_option("--lambda", tr_lambda);
  train->add_option("--steps", tr_steps);
  train->add_option("--batch", tr_batch);
  train->add_option("--patch", tr_patch);
  train->add_option("--lr", tr_lr);
  train->add_option("--lr-final", tr_lr_final);
  train->add_option("--seed", tr_seed);
  train->add_option("--log", tr_log, "CSV loss log path");
  train->add_option("--C", tr_C);
  train->add_option("--k", tr_k);
  train->add_option("--s", tr_s);
  train->add_option("--N", tr_N);
  train->add_option("--k1", tr_k1);
  train->add_option("--s1", tr_s1);
  train->add_option("--k2", tr_k2);
  train->add_option("--s2", tr_s2);
  train->add_option("--F", tr_F, "analysis filters");
  train->add_option("--ka", tr_ka, "analysis kernel");
  train->add_option("--Ch", tr_Ch, "hyper channels");
  train->add_flag("--analysis", tr_analysis, "use a CNN analysis transform");
  train->add_flag("--dct-init", tr_dct_init, "initialize kernels from DCT bases");
  train->add_flag("--hyper", tr_hyper, "attach a one-layer hyperprior");
  train->add_flag("--freeze-synthesis", tr_freeze_synthesis,
                  "train the entropy model only");

  // ---- encode ----
  auto* encode = app.add_subcommand("encode", "compress a PPM to a bitstream");
  std::string en_input, en_ckpt, en_out, en_mode = "oneshot";
  double en_lambda = 0.01, en_lr = 5e-3;
  int en_steps = 3000;
  uint64_t en_seed = 1;
  encode->add_option("--input", en_input)->required();
  encode->add_option("--checkpoint", en_ckpt)->required();
  encode->add_option("--out", en_out)->required();
  encode->add_option("--mode", en_mode)
      ->check(CLI::IsMember({"oneshot", "iterative", "sga"}));
  encode->add_option("--lambda", en_lambda);
  encode->add_option("--steps", en_steps);
  encode->add_option("--lr", en_lr);
  encode->add_option("--seed", en_seed);

  // ---- decode ----
  auto* decode = app.add_subcommand("decode", "decompress a bitstream");
  std::string de_input, de_ckpt, de_out;
  decode->add_option("--input", de_input)->required();
  decode->add_option("--checkpoint", de_ckpt)->required();
  decode->add_option("--out", de_out)->required();

  // ---- eval ----
  auto* eval = app.add_subcommand(
      "eval", "rate-distortion points over a directory, or BD-rate of curves");
  std::string ev_ckpt, ev_images, ev_out, ev_mode = "oneshot", ev_label = "rd";
  double ev_lambda = 0.01;
  int ev_steps = 3000;
  uint64_t ev_seed = 1;
  std::vector<std::string> ev_bd;
  eval->add_option("--checkpoint", ev_ckpt);
  eval->add_option("--images", ev_images);
  eval->add_option("--out", ev_out, "RD points CSV (label,bpp,psnr)");
  eval->add_option("--mode", ev_mode)
      ->check(CLI::IsMember({"oneshot", "iterative", "sga"}));
  eval->add_option("--lambda", ev_lambda);
  eval->add_option("--steps", ev_steps);
  eval->add_option("--seed", ev_seed);
  eval->add_option("--label", ev_label);
  eval->add_option("--bd", ev_bd, "two curve CSVs: report BD-rate of A vs B")
      ->expected(2);

  // ---- flops ----
  auto* flops = app.add_subcommand("flops", "MAC accounting for an architecture");
  std::string fl_arch = "jpeg-like";
  unsigned fl_C = 320, fl_k = 18, fl_s = 16, fl_N = 12, fl_k1 = 13, fl_s1 = 8,
           fl_k2 = 5, fl_s2 = 2, fl_Ch = 64, fl_H = 512, fl_W = 768;
  flops->add_option("--arch", fl_arch)
      ->check(CLI::IsMember({"jpeg-like", "two-layer", "hyper"}));
  flops->add_option("--C", fl_C);
  flops->add_option("--k", fl_k);
  flops->add_option("--s", fl_s);
  flops->add_option("--N", fl_N);
  flops->add_option("--k1", fl_k1);
  flops->add_option("--s1", fl_s1);
  flops->add_option("--k2", fl_k2);
  flops->add_option("--s2", fl_s2);
  flops->add_option("--Ch", fl_Ch);
  flops->add_option("--H", fl_H);
  flops->add_option("--W", fl_W);

  // ---- traverse ----
  auto* traverse = app.add_subcommand("traverse", "latent-space interpolation");
  std::string tv_ckpt, tv_a, tv_b, tv_out;
  int tv_T = 100;
  traverse->add_option("--checkpoint", tv_ckpt)->required();
  traverse->add_option("--image-a", tv_a)->required();
  traverse->add_option("--image-b", tv_b)->required();
  traverse->add_option("--T", tv_T);
  traverse->add_option("--out", tv_out, "CSV: t,mse_recon,mse_gt");

  // ---- probe ----
  auto* probe = app.add_subcommand("probe", "encoder inference-gap probe");
  std::string pr_ckpt, pr_images, pr_out;
  double pr_lambda = 0.01;
  int pr_steps = 3000;
  uint64_t pr_seed = 1;
  probe->add_option("--checkpoint", pr_ckpt)->required();
  probe->add_option("--images", pr_images)->required();
  probe->add_option("--lambda", pr_lambda);
  probe->add_option("--steps", pr_steps);
  probe->add_option("--seed", pr_seed);
  probe->add_option("--out", pr_out, "CSV per-image cost table");

  for (CLI::App* sub : {train, encode, eval, traverse, probe, decode, flops}) {
    sub->set_config("--config", "", "key=value config file ('#' comments)");
    sub->allow_config_extras(false);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // all parse problems are usage errors
  }
  const auto t0 = std::chrono::steady_clock::now();

  if (train->parsed()) {
    PrintResolved(*train, tr_seed);
    ModelConfig mc;
    mc.arch = tr_arch == "two-layer" ? ArchTag::kTwoLayer : ArchTag::kJpegLike;
    mc.hp.C = static_cast<uint16_t>(tr_C);
    mc.hp.s = static_cast<uint16_t>(tr_s);
    mc.hp.k = static_cast<uint16_t>(tr_k);
    mc.hp.N = static_cast<uint16_t>(tr_N);
    mc.hp.k1 = static_cast<uint16_t>(tr_k1);
    mc.hp.s1 = static_cast<uint16_t>(tr_s1);
    mc.hp.k2 = static_cast<uint16_t>(tr_k2);
    mc.hp.s2 = static_cast<uint16_t>(tr_s2);
    mc.with_analysis = tr_analysis;
    mc.analysis_filters = tr_F;
    mc.analysis_kernel = tr_ka;
    mc.with_hyper = tr_hyper;
    mc.hyper_channels = tr_Ch;
    mc.dct_init = tr_dct_init;
    mc.seed = tr_seed;
    CodecModel model = BuildModel(mc);
    std::vector<Image> dataset = LoadDir(tr_dataset, true);
    TrainConfig tc;
    tc.lambda = tr_lambda;
    tc.batch_size = tr_batch;
    tc.patch_size = tr_patch;
    tc.max_steps = tr_steps;
    tc.lr_initial = tr_lr;
    tc.lr_final = tr_lr_final;
    tc.seed = tr_seed;
    std::set<std::string> frozen_mask = {"prior.mu", "prior.sigma_raw"};
    std::ofstream log;
    if (!tr_log.empty()) log.open(tr_log);
    TrainResult res =
        Train(&model, dataset, tc,
              tr_freeze_synthesis ? &frozen_mask : nullptr,
              tr_log.empty() ? nullptr : &log);
    SaveModel(model, tr_out);
    json j{{"checkpoint", tr_out},
           {"first_loss", res.first_loss},
           {"final_loss", res.final_loss},
           {"steps", res.steps},
           {"seconds", Seconds(t0)}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (encode->parsed()) {
    PrintResolved(*encode, en_seed);
    LoadedModel lm = LoadModel(en_ckpt);
    Image input = LoadImage(en_input);
    EncodeConfig cfg;
    cfg.mode = ParseMode(en_mode);
    cfg.lambda = en_lambda;
    cfg.steps = en_steps;
    cfg.lr = en_lr;
    cfg.seed = en_seed;
    TransmitResult res = Transmit(input, lm.model, lm.file_hash, cfg);
    WriteFileBytes(en_out, res.bytes);
    json j{{"bpp", res.stats.bpp},     {"psnr", res.stats.psnr},
           {"cost", res.stats.cost_pp}, {"mode", en_mode},
           {"seconds", Seconds(t0)}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (decode->parsed()) {
    PrintResolved(*decode, 0);
    LoadedModel lm = LoadModel(de_ckpt);
    Bitstream b = UnpackBitstream(ReadFileBytes(de_input));
    Image out = DecodeBitstream(b, lm.model, lm.file_hash);
    SaveImage(out, de_out);
    json j{{"out", de_out},
           {"height", out.height},
           {"width", out.width},
           {"seconds", Seconds(t0)}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (eval->parsed()) {
    PrintResolved(*eval, ev_seed);
    if (!ev_bd.empty()) {
      RDCurve a = ToCurve(ReadCurveCsv(ev_bd[0]), "a");
      RDCurve b = ToCurve(ReadCurveCsv(ev_bd[1]), "b");
      const double bd = BdRate(a, b);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2f%%", bd);
      std::cerr << "BD-rate: " << buf << "\n";
      json j{{"bd_rate_percent", bd}};
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (ev_ckpt.empty() || ev_images.empty())
      throw UsageError("eval needs --checkpoint and --images (or --bd)");
    LoadedModel lm = LoadModel(ev_ckpt);
    EncodeConfig cfg;
    cfg.mode = ParseMode(ev_mode);
    cfg.lambda = ev_lambda;
    cfg.steps = ev_steps;
    cfg.seed = ev_seed;
    std::ofstream csv;
    if (!ev_out.empty()) {
      csv.open(ev_out);
      csv << "label,bpp,psnr\n";
    }
    double sum_bpp = 0, sum_psnr = 0, sum_cost = 0;
    std::vector<std::string> files = ListPpm(ev_images);
    for (const std::string& f : files) {
      TransmitResult r = Transmit(LoadImage(f), lm.model, lm.file_hash, cfg);
      if (csv.is_open())
        csv << ev_label << "," << r.stats.bpp << "," << r.stats.psnr << "\n";
      json j{{"image", f},
             {"bpp", r.stats.bpp},
             {"psnr", r.stats.psnr},
             {"cost", r.stats.cost_pp}};
      std::cout << j.dump() << "\n";
      sum_bpp += r.stats.bpp;
      sum_psnr += r.stats.psnr;
      sum_cost += r.stats.cost_pp;
    }
    const double n = static_cast<double>(files.size());
    json j{{"mean_bpp", sum_bpp / n},
           {"mean_psnr", sum_psnr / n},
           {"mean_cost", sum_cost / n},
           {"images", files.size()},
           {"seconds", Seconds(t0)}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (flops->parsed()) {
    PrintResolved(*flops, 0);
    MacReport rep;
    if (fl_arch == "jpeg-like") {
      rep = MacCountJpegLike(fl_C, fl_k, fl_s, fl_H, fl_W);
    } else if (fl_arch == "two-layer") {
      rep = MacCountTwoLayer(fl_C, fl_k1, fl_s1, fl_N, fl_k2, fl_s2, fl_H, fl_W);
    } else {
      rep = MacCountHyperSynthesis(fl_Ch, fl_C, fl_s, fl_H, fl_W);
    }
    json layers = json::array();
    for (const LayerMacs& l : rep.layers) {
      const double kmac = static_cast<double>(l.macs) /
                          (static_cast<double>(fl_H) * fl_W) / 1000.0;
      std::cerr << l.name << ": " << kmac << " KMAC/px\n";
      layers.push_back({{"name", l.name}, {"kmac_per_pixel", kmac}});
    }
    std::cerr << "total: " << rep.kmac_per_pixel << " KMAC/px\n";
    json j{{"arch", fl_arch},
           {"kmac_per_pixel", rep.kmac_per_pixel},
           {"macs_total", rep.total},
           {"layers", layers}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (traverse->parsed()) {
    PrintResolved(*traverse, 0);
    LoadedModel lm = LoadModel(tv_ckpt);
    Image a = LoadImage(tv_a), b = LoadImage(tv_b);
    TraversalReport rep = Traverse(lm.model, a, b, tv_T);
    if (!tv_out.empty()) {
      std::ofstream csv(tv_out);
      csv << "t,mse_recon,mse_gt\n";
      for (int i = 0; i <= rep.T; ++i)
        csv << static_cast<double>(i) / rep.T << "," << rep.mse_recon[i] << ","
            << rep.mse_gt[i] << "\n";
    }
    json j{{"eta", rep.lengths.eta},
           {"length", rep.lengths.length},
           {"straight", rep.lengths.straight},
           {"T", rep.T},
           {"seconds", Seconds(t0)}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (probe->parsed()) {
    PrintResolved(*probe, pr_seed);
    LoadedModel lm = LoadModel(pr_ckpt);
    std::vector<Image> images = LoadDir(pr_images, false);
    EncodeConfig cfg;
    cfg.lambda = pr_lambda;
    cfg.steps = pr_steps;
    cfg.seed = pr_seed;
    ProbeReport rep = InferenceGapProbe(images, lm.model, lm.file_hash, cfg);
    if (!pr_out.empty()) {
      std::ofstream csv(pr_out);
      csv << "image,cost_oneshot,cost_iter,cost_sga\n";
      for (const ProbeRow& r : rep.rows)
        csv << r.name << "," << r.cost_oneshot << "," << r.cost_iterative
            << "," << r.cost_sga << "\n";
    }
    json j{{"median_delta_sga", rep.median_delta_sga},
           {"median_delta_iterative", rep.median_delta_iterative},
           {"frac_sga_improves", rep.frac_sga_improves},
           {"images", rep.rows.size()},
           {"seconds", Seconds(t0)}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  throw UsageError("no subcommand");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return Run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
