// pgr: prior-guided ROI segmentation pipeline driver.
// Subcommands: extract-priors, gen-guidance, gen-synth, train, infer, evaluate.
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "pgr/checkpoint.hpp"
#include "pgr/htk.hpp"
#include "pgr/image_io.hpp"
#include "pgr/metrics.hpp"
#include "pgr/network.hpp"
#include "pgr/prior.hpp"
#include "pgr/synth.hpp"
#include "pgr/wings.hpp"

namespace fs = std::filesystem;
using namespace pgr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<fs::path> pgm_files_sorted(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_extract_priors(const std::string& masks_dir, const std::string& out_path, PriorParams params) {
  if (!fs::is_directory(masks_dir)) {
    std::cerr << "extract-priors: not a directory: " << masks_dir << "\n";
    return kExitUsage;
  }
  std::vector<fs::path> files = pgm_files_sorted(masks_dir);
  if (files.empty()) {
    std::cerr << "extract-priors: no .pgm masks in " << masks_dir << "\n";
    return kExitUsage;
  }
  std::vector<LabelGrid> corpus;
  corpus.reserve(files.size());
  for (const fs::path& f : files) corpus.push_back(read_pgm_mask(f.string()));
  params.height = corpus.front().height;
  params.width = corpus.front().width;
  for (const LabelGrid& m : corpus)
    if (m.height != params.height || m.width != params.width)
      throw std::runtime_error("extract-priors: mask extents differ across the corpus");

  ExtractStatus status = extract_priors(corpus, params);
  if (!status.ok) {
    std::cerr << "extract-priors: no valid components in " << files.size() << " masks\n";
    return kExitRuntime;
  }
  save_priors(status.set, out_path);

  std::cout << "priors from " << files.size() << " masks (" << params.height << "x" << params.width
            << ")\n";
  std::cout << "  peak_size      r     cx     cy  support\n";
  for (const RoiPrior& p : status.set.priors) {
    std::printf("  %9d  %5.3f  %5.3f  %5.3f  %7d\n", p.peak_size, double(p.r), double(p.cx),
                double(p.cy), p.support);
  }
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

std::vector<std::uint8_t> scale_to_u8(const Tensor& map, real max_value) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(map.numel()));
  for (int i = 0; i < map.numel(); ++i) {
    real v = max_value > 0 ? map.data()[static_cast<std::size_t>(i)] * 255 / max_value : 0;
    bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(std::clamp(v, real(0), real(255))));
  }
  return bytes;
}

int cmd_gen_guidance(const std::string& priors_path, int layer_size, const std::string& out_dir,
                     real sigma_ratio, real tau_ratio, real lambda, const std::string& image_path) {
  PriorTemplateSet set = load_priors(priors_path);
  if (set.priors.empty()) {
    std::cerr << "gen-guidance: prior set is empty\n";
    return kExitRuntime;
  }
  fs::create_directories(out_dir);

  std::vector<RoiInstance> instances;
  for (std::size_t i = 0; i < set.priors.size(); ++i)
    instances.push_back(make_roi_instance(set.priors[i], layer_size, layer_size, sigma_ratio, 1.0,
                                          static_cast<int>(i)));

  nlohmann::ordered_json sidecar;
  sidecar["layer_size"] = layer_size;
  sidecar["sigma_ratio"] = sigma_ratio;
  sidecar["tau_ratio"] = tau_ratio;
  sidecar["lambda"] = lambda;
  nlohmann::ordered_json maxes;

  for (std::size_t i = 0; i < instances.size(); ++i) {
    real tau = tau_ratio * instances[i].radius;
    Tensor field = apply_spatial_decay(gaussian_template(instances[i], layer_size, layer_size),
                                       instances[i], layer_size, layer_size, tau);
    real mx = 0;
    for (real v : field.data()) mx = std::max(mx, v);
    char name[32];
    std::snprintf(name, sizeof(name), "prior_%02zu", i);
    write_pgm_bytes(layer_size, layer_size, scale_to_u8(field, mx),
                    (fs::path(out_dir) / (std::string(name) + ".pgm")).string());
    maxes[name] = mx;
  }

  GuidanceMap agg = aggregate_guidance(instances, layer_size, layer_size, 1e-6, tau_ratio);
  real agg_max = 0;
  for (real v : agg.values.data()) agg_max = std::max(agg_max, v);
  write_pgm_bytes(layer_size, layer_size, scale_to_u8(agg.values, agg_max),
                  (fs::path(out_dir) / "aggregate.pgm").string());
  maxes["aggregate"] = agg_max;

  if (!image_path.empty()) {
    ImageGrid img = read_pgm_image(image_path);
    if (img.height != layer_size || img.width != layer_size)
      throw std::runtime_error("gen-guidance: --image extents must match --layer-size");
    Tensor f = Tensor::from({1, img.height, img.width},
                            std::vector<real>(img.values.begin(), img.values.end()));
    Tensor modulated = modulate(f, agg.values, lambda);
    real mx = 0;
    for (real v : modulated.data()) mx = std::max(mx, v);
    write_pgm_bytes(layer_size, layer_size, scale_to_u8(reshape(modulated, {layer_size, layer_size}), mx),
                    (fs::path(out_dir) / "modulated.pgm").string());
    maxes["modulated"] = mx;
  }

  sidecar["maxes"] = maxes;
  atomic_write_file((fs::path(out_dir) / "guidance.json").string(), sidecar.dump(2) + "\n");
  std::cout << "wrote " << instances.size() << " prior maps + aggregate to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& priors_path,
              const std::string& config_path, const std::string& out_path,
              const std::vector<std::string>& overrides) {
  NetConfig net_cfg;
  TrainConfig train_cfg;
  if (!config_path.empty()) load_config_file(config_path, net_cfg, train_cfg);
  for (const std::string& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value, got " + kv);
    apply_config_kv(net_cfg, train_cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  net_cfg.validate();

  PriorTemplateSet priors = load_priors(priors_path);
  std::vector<Sample> samples = load_dataset(data_dir);
  std::cout << "training on " << samples.size() << " cases from " << data_dir << " with "
            << priors.priors.size() << " priors\n";

  PgrNet net(net_cfg, priors);
  TrainResult result = train(net, samples, train_cfg, [](const EpochRow& row) {
    std::printf("epoch %3d  loss %.4f  val_dice %.4f  val_hd95 %.3f  fallback %.2f\n", row.epoch,
                double(row.train_loss), double(row.val_dice), double(row.val_hd95),
                double(row.fallback_rate));
    return true;
  });

  NamedParams params = net.parameters();
  save_checkpoint(out_path, params);
  nlohmann::ordered_json meta;
  meta["net"] = nlohmann::ordered_json::parse(net_config_to_json(net_cfg));
  meta["priors"] = nlohmann::ordered_json::parse(priors_to_json(priors));
  meta["best_epoch"] = result.best_epoch;
  meta["best_val_dice"] = result.best_val_dice;
  atomic_write_file(out_path + ".meta.json", meta.dump(2) + "\n");
  atomic_write_file(out_path + ".csv", history_csv(result.history));

  std::cout << "best val dice " << result.best_val_dice << " at epoch " << result.best_epoch
            << (result.stopped_early ? " (early stop)" : "") << "\n";
  std::cout << "wrote " << out_path << ", " << out_path << ".meta.json, " << out_path << ".csv\n";
  return kExitOk;
}

PgrNet load_net(const std::string& ckpt_path) {
  std::ifstream meta_in(ckpt_path + ".meta.json");
  if (!meta_in) throw std::runtime_error("missing checkpoint sidecar: " + ckpt_path + ".meta.json");
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  NetConfig cfg = net_config_from_json(meta.at("net").dump());
  PriorTemplateSet priors = priors_from_json(meta.at("priors").dump());
  PgrNet net(cfg, priors);
  NamedParams params = net.parameters();
  load_checkpoint(ckpt_path, params);
  return net;
}

int cmd_infer(const std::string& ckpt_path, const std::string& input_path,
              const std::string& out_path, bool emit_decision) {
  PgrNet net = load_net(ckpt_path);
  ImageGrid img = read_pgm_image(input_path);
  Tensor input = image_to_tensor(img);
  PgrNet::Output out = net.forward(input, ForwardMode::Auto);
  write_pgm(net.logits_to_mask(out.logits), out_path);
  if (emit_decision) {
    fs::path sidecar(out_path);
    sidecar.replace_extension(".decision.json");
    std::string payload = out.record
                              ? record_to_json(*out.record)
                              : std::string("{\"fallback\": true, \"locked\": false, \"r_star\": -1}\n");
    atomic_write_file(sidecar.string(), payload);
  }
  std::cout << "wrote " << out_path << (out.fallback_used ? " (fallback mode)" : "")
            << (out.locked_used ? " (locked)" : "") << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_path) {
  if (!fs::is_directory(pred_dir) || !fs::is_directory(gt_dir)) {
    std::cerr << "evaluate: --pred and --gt must be directories\n";
    return kExitUsage;
  }
  EvaluateResult result = evaluate_dirs(pred_dir, gt_dir);
  for (const std::string& id : result.skipped) std::cerr << "evaluate: skipping unmatched case " << id << "\n";
  atomic_write_file(out_path, evaluate_csv(result));
  for (std::size_t i = 0; i < result.regions.size(); ++i)
    std::printf("%s  dice %.4f  hd95 %.4f\n", result.regions[i].c_str(), result.mean_dice[i],
                result.mean_hd95[i]);
  if (result.has_fallback) std::printf("fallback_rate %.4f\n", result.fallback_rate);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prior-guided ROI segmentation pipeline"};
  app.require_subcommand(1);

  // extract-priors
  auto* extract = app.add_subcommand("extract-priors", "build the ROI prior set from training masks");
  std::string masks_dir, priors_out;
  PriorParams pparams;
  extract->add_option("--masks", masks_dir, "directory of PGM masks")->required();
  extract->add_option("--out", priors_out, "output priors JSON")->required();
  extract->add_option("--s-min", pparams.s_min, "minimum component side");
  extract->add_option("--s-valid", pparams.s_valid, "minimum valid size for the distribution");
  extract->add_option("--d-min", pparams.d_min, "minimum peak spacing");
  extract->add_option("--radius", pparams.neighbor_radius, "center clustering radius (px)");
  extract->add_option("--n", pparams.n_priors, "maximum number of priors");
  extract->add_option("--min-support", pparams.min_support_frac, "min cluster support fraction");

  // gen-guidance
  auto* guidance = app.add_subcommand("gen-guidance", "render guidance maps from a prior set");
  std::string gpriors, gout, gimage;
  int layer_size = 160;
  real sigma_ratio = 0.5, tau_ratio = 0.25, lambda = 1.0;
  guidance->add_option("--priors", gpriors, "priors JSON")->required();
  guidance->add_option("--layer-size", layer_size, "map resolution");
  guidance->add_option("--out", gout, "output directory")->required();
  guidance->add_option("--sigma-ratio", sigma_ratio, "sigma as a fraction of R");
  guidance->add_option("--tau-ratio", tau_ratio, "decay tau as a fraction of R");
  guidance->add_option("--lambda", lambda, "modulation strength");
  guidance->add_option("--image", gimage, "optional image to modulate");

  // gen-synth
  auto* synth = app.add_subcommand("gen-synth", "generate the synthetic lesion dataset");
  std::string synth_out;
  SynthConfig synth_cfg;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--cases", synth_cfg.cases, "number of cases");
  synth->add_option("--size", synth_cfg.size, "image side length");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");

  // train
  auto* tr = app.add_subcommand("train", "train the network");
  std::string data_dir, train_priors, config_path, ckpt_out;
  std::vector<std::string> overrides;
  tr->add_option("--data", data_dir, "dataset directory (images/ + masks/)")->required();
  tr->add_option("--priors", train_priors, "priors JSON")->required();
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--out", ckpt_out, "output checkpoint path")->required();
  tr->add_option("--set", overrides, "config override key=value (repeatable)");

  // infer
  auto* inf = app.add_subcommand("infer", "run inference on one image");
  std::string ckpt_path, input_path, mask_out;
  bool emit_decision = false;
  inf->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  inf->add_option("--input", input_path, "input PGM image")->required();
  inf->add_option("--out", mask_out, "output PGM mask")->required();
  inf->add_flag("--emit-decision", emit_decision, "write the ROI decision sidecar JSON");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
  std::string pred_dir, gt_dir, csv_out;
  ev->add_option("--pred", pred_dir, "predictions directory")->required();
  ev->add_option("--gt", gt_dir, "ground-truth directory")->required();
  ev->add_option("--out", csv_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (extract->parsed()) return cmd_extract_priors(masks_dir, priors_out, pparams);
    if (guidance->parsed())
      return cmd_gen_guidance(gpriors, layer_size, gout, sigma_ratio, tau_ratio, lambda, gimage);
    if (synth->parsed()) {
      generate_synth_dataset(synth_out, synth_cfg);
      std::cout << "wrote " << synth_cfg.cases << " cases to " << synth_out << "\n";
      return kExitOk;
    }
    if (tr->parsed()) return cmd_train(data_dir, train_priors, config_path, ckpt_out, overrides);
    if (inf->parsed()) return cmd_infer(ckpt_path, input_path, mask_out, emit_decision);
    if (ev->parsed()) return cmd_evaluate(pred_dir, gt_dir, csv_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
