#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bafdet/checkpoint.hpp"
#include "bafdet/image_io.hpp"
#include "bafdet/metrics.hpp"
#include "bafdet/model.hpp"
#include "bafdet/synth.hpp"
#include "bafdet/trainer.hpp"
#include "bafdet/voc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bafdet;

namespace {

constexpr const char* kCodeVersion = "bafdet 1.0.0";

struct AppConfig {
  int image_size = 128;
  int stem_channels = 32;
  std::vector<int> stage_widths = {32, 64, 128, 256};
  int blocks_per_stage = 2;
  int bafpn_width = 64;
  std::string variant = "bidirectional";  // topdown | bidirectional
  std::string attention = "cosine";       // none | dot | cosine
  int roi_size = 7;
  int fc_hidden = 256;
  double score_threshold = 0.3;
  double nms_iou_threshold = 0.5;
  double rpn_n_reg = 0;  // 0 = derive from the anchor grid at image_size
  TrainConfig train;
};

PyramidVariant parse_variant(const std::string& s) {
  if (s == "topdown") return PyramidVariant::kTopDownOnly;
  if (s == "bidirectional") return PyramidVariant::kBidirectional;
  throw CLI::ValidationError("variant must be 'topdown' or 'bidirectional', got " + s);
}

AttentionKind parse_attention(const std::string& s) {
  if (s == "none") return AttentionKind::kNone;
  if (s == "dot") return AttentionKind::kDotProduct;
  if (s == "cosine") return AttentionKind::kCosine;
  throw CLI::ValidationError("attention must be 'none', 'dot' or 'cosine', got " + s);
}

/// Number of anchor cells in the B2..B6 grids for a square input.
double anchor_cells(int image_size) {
  double total = 0;
  for (int stride : {4, 8, 16, 32, 64}) {
    const int n = (image_size + stride - 1) / stride;
    total += static_cast<double>(n) * n;
  }
  return total;
}

DetectorConfig make_detector_config(const AppConfig& app) {
  DetectorConfig cfg;
  cfg.backbone.in_channels = 1;
  cfg.backbone.stem_channels = app.stem_channels;
  if (app.stage_widths.size() != 4)
    throw CLI::ValidationError("stage_widths must have exactly 4 entries");
  for (int i = 0; i < 4; ++i) cfg.backbone.stage_widths[i] = app.stage_widths[i];
  cfg.backbone.blocks_per_stage = app.blocks_per_stage;
  cfg.backbone.input_size = app.image_size;
  cfg.bafpn.width = app.bafpn_width;
  cfg.bafpn.variant = parse_variant(app.variant);
  cfg.bafpn.attention = parse_attention(app.attention);
  cfg.roi_size = app.roi_size;
  cfg.fc_hidden = app.fc_hidden;
  cfg.score_threshold = app.score_threshold;
  cfg.nms_iou_threshold = app.nms_iou_threshold;
  cfg.rpn.n_reg = app.rpn_n_reg > 0 ? app.rpn_n_reg : anchor_cells(app.image_size);
  return cfg;
}

json config_json(const AppConfig& app) {
  return json{{"image_size", app.image_size},
              {"stem_channels", app.stem_channels},
              {"stage_widths", app.stage_widths},
              {"blocks_per_stage", app.blocks_per_stage},
              {"bafpn_width", app.bafpn_width},
              {"variant", app.variant},
              {"attention", app.attention},
              {"roi_size", app.roi_size},
              {"fc_hidden", app.fc_hidden},
              {"score_threshold", app.score_threshold},
              {"nms_iou_threshold", app.nms_iou_threshold},
              {"rpn_n_reg",
               app.rpn_n_reg > 0 ? app.rpn_n_reg : anchor_cells(app.image_size)},
              {"train",
               {{"lr", app.train.lr},
                {"momentum", app.train.momentum},
                {"weight_decay", app.train.weight_decay},
                {"decay_steps", app.train.decay_steps},
                {"decay_factor", app.train.decay_factor},
                {"max_iterations", app.train.max_iterations},
                {"seed", app.train.seed}}}};
}

void load_config_file(AppConfig& app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CLI::ValidationError(std::string("bad config JSON: ") + e.what());
  }
  auto get = [&j](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  get("image_size", app.image_size);
  get("stem_channels", app.stem_channels);
  get("stage_widths", app.stage_widths);
  get("blocks_per_stage", app.blocks_per_stage);
  get("bafpn_width", app.bafpn_width);
  get("variant", app.variant);
  get("attention", app.attention);
  get("roi_size", app.roi_size);
  get("fc_hidden", app.fc_hidden);
  get("score_threshold", app.score_threshold);
  get("nms_iou_threshold", app.nms_iou_threshold);
  get("rpn_n_reg", app.rpn_n_reg);
  if (j.contains("train")) {
    const json& t = j.at("train");
    auto gt = [&t](const char* key, auto& out) {
      if (t.contains(key)) t.at(key).get_to(out);
    };
    gt("lr", app.train.lr);
    gt("momentum", app.train.momentum);
    gt("weight_decay", app.train.weight_decay);
    gt("decay_steps", app.train.decay_steps);
    gt("decay_factor", app.train.decay_factor);
    gt("max_iterations", app.train.max_iterations);
    gt("seed", app.train.seed);
  }
}

void validate(const AppConfig& app) {
  if (app.image_size <= 0 || app.image_size % 32 != 0)
    throw CLI::ValidationError("image_size must be a positive multiple of 32");
  if (app.train.lr <= 0 || app.train.momentum < 0 || app.train.weight_decay < 0)
    throw CLI::ValidationError("train rates must be positive");
  if (!std::is_sorted(app.train.decay_steps.begin(), app.train.decay_steps.end()))
    throw CLI::ValidationError("decay_steps must be ascending");
  parse_variant(app.variant);
  parse_attention(app.attention);
}

void write_metadata(const std::string& path, const AppConfig& app, json extra) {
  extra["config"] = config_json(app);
  extra["code_version"] = kCodeVersion;
  extra["threads"] = 1;
  std::ofstream out(path);
  out << extra.dump(2) << "\n";
}

void checkpoint_meta_from_config(Checkpoint& ckpt, const AppConfig& app) {
  ckpt.meta["image_size"] = std::to_string(app.image_size);
  ckpt.meta["stem_channels"] = std::to_string(app.stem_channels);
  std::ostringstream ws;
  for (std::size_t i = 0; i < app.stage_widths.size(); ++i)
    ws << (i ? " " : "") << app.stage_widths[i];
  ckpt.meta["stage_widths"] = ws.str();
  ckpt.meta["blocks_per_stage"] = std::to_string(app.blocks_per_stage);
  ckpt.meta["bafpn_width"] = std::to_string(app.bafpn_width);
  ckpt.meta["variant"] = app.variant;
  ckpt.meta["attention"] = app.attention;
  ckpt.meta["roi_size"] = std::to_string(app.roi_size);
  ckpt.meta["fc_hidden"] = std::to_string(app.fc_hidden);
}

AppConfig config_from_checkpoint(const Checkpoint& ckpt, AppConfig app) {
  auto get_long = [&ckpt](const char* key, int& out) {
    const auto it = ckpt.meta.find(key);
    if (it != ckpt.meta.end()) out = static_cast<int>(std::stol(it->second));
  };
  get_long("image_size", app.image_size);
  get_long("stem_channels", app.stem_channels);
  get_long("blocks_per_stage", app.blocks_per_stage);
  get_long("bafpn_width", app.bafpn_width);
  get_long("roi_size", app.roi_size);
  get_long("fc_hidden", app.fc_hidden);
  if (const auto it = ckpt.meta.find("stage_widths"); it != ckpt.meta.end()) {
    std::istringstream ss(it->second);
    app.stage_widths.clear();
    int v;
    while (ss >> v) app.stage_widths.push_back(v);
  }
  if (const auto it = ckpt.meta.find("variant"); it != ckpt.meta.end())
    app.variant = it->second;
  if (const auto it = ckpt.meta.find("attention"); it != ckpt.meta.end())
    app.attention = it->second;
  return app;
}

void apply_checkpoint(BafDetector& model, const Checkpoint& ckpt) {
  for (auto& p : model.parameters()) {
    const auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint missing parameter " + p.name);
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    p.tensor.data() = it->second.data();
  }
}

GrayImage resize_square(const GrayImage& img, int side) {
  if (img.width == side && img.height == side) return img;
  GrayImage out;
  out.width = out.height = side;
  out.pixels.resize(static_cast<std::size_t>(side) * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      out.at(x, y) = img.at(std::min(img.width - 1, x * img.width / side),
                            std::min(img.height - 1, y * img.height / side));
  return out;
}

std::vector<ImageGroundTruth> gts_from_manifest(const std::string& manifest_file) {
  const DatasetManifest manifest = read_manifest(manifest_file);
  std::vector<ImageGroundTruth> out;
  for (const auto& e : manifest.entries) {
    ImageGroundTruth g;
    g.image_id = fs::path(e.image_path).stem().string();
    g.gts = read_voc_file(e.xml_path).ground_truth();
    out.push_back(std::move(g));
  }
  return out;
}

void write_detections_csv(const std::string& path,
                          const std::vector<ImageDetections>& dets) {
  std::ofstream out(path);
  out << "image_id,class,score,x_min,y_min,x_max,y_max\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& im : dets)
    for (const auto& d : im.dets)
      out << im.image_id << "," << kClassNames[d.class_id] << "," << d.score << ","
          << d.box.x1() << "," << d.box.y1() << "," << d.box.x2() << "," << d.box.y2()
          << "\n";
}

std::vector<ImageDetections> read_detections_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file " + path);
  std::map<std::string, std::vector<Detection>> by_image;
  std::string line;
  std::getline(in, line);  // header
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, cls, f[5];
    std::getline(ss, id, ',');
    std::getline(ss, cls, ',');
    for (auto& v : f) std::getline(ss, v, ',');
    const int class_id = class_id_from_name(cls);
    if (class_id < 0)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unknown class '" + cls + "'");
    Detection d;
    d.class_id = class_id;
    d.score = std::stod(f[0]);
    d.box = BBox::from_corners(std::stod(f[1]), std::stod(f[2]), std::stod(f[3]),
                               std::stod(f[4]));
    by_image[id].push_back(d);
  }
  std::vector<ImageDetections> out;
  for (auto& [id, dets] : by_image) out.push_back({id, std::move(dets)});
  return out;
}

/// Fixed-threshold P/R/F per class by greedy best-IoU matching.
std::array<PRF, kNumClasses> prf_at_threshold(const std::vector<ImageDetections>& dets,
                                              const std::vector<ImageGroundTruth>& gts,
                                              double score_thr, double iou_thr) {
  std::array<ClassificationCounts, kNumClasses> counts{};
  std::map<std::string, const ImageGroundTruth*> gt_by_id;
  for (const auto& g : gts) gt_by_id[g.image_id] = &g;
  std::map<std::string, std::vector<bool>> used;
  for (const auto& g : gts) used[g.image_id].assign(g.gts.size(), false);

  for (const auto& im : dets) {
    const auto it = gt_by_id.find(im.image_id);
    std::vector<Detection> kept;
    for (const auto& d : im.dets)
      if (d.score >= score_thr) kept.push_back(d);
    std::sort(kept.begin(), kept.end(),
              [](const Detection& a, const Detection& b) { return a.score > b.score; });
    for (const auto& d : kept) {
      int best = -1;
      double best_iou = iou_thr;
      if (it != gt_by_id.end()) {
        auto& used_flags = used[im.image_id];
        for (std::size_t k = 0; k < it->second->gts.size(); ++k) {
          if (used_flags[k] || it->second->gts[k].class_id != d.class_id) continue;
          const double v = iou(d.box, it->second->gts[k].box);
          if (v >= best_iou) {
            best_iou = v;
            best = static_cast<int>(k);
          }
        }
      }
      if (best >= 0) {
        used[im.image_id][static_cast<std::size_t>(best)] = true;
        counts[d.class_id].tp++;
      } else {
        counts[d.class_id].fp++;
      }
    }
  }
  for (const auto& g : gts) {
    const auto& flags = used[g.image_id];
    for (std::size_t k = 0; k < g.gts.size(); ++k)
      if (!flags[k]) counts[g.gts[k].class_id].fn++;
  }
  std::array<PRF, kNumClasses> out;
  for (int k = 0; k < kNumClasses; ++k) out[k] = precision_recall_f(counts[k]);
  return out;
}

json eval_json(const EvalResult& ev, const std::array<PRF, kNumClasses>& prf) {
  json per_class = json::object();
  double mean_f = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    per_class[kClassNames[k]] = {{"ap", ev.ap[k]},
                                 {"precision", prf[k].precision},
                                 {"recall", prf[k].recall},
                                 {"f_measure", prf[k].f_measure}};
    mean_f += prf[k].f_measure / kNumClasses;
  }
  return json{{"map", ev.map},
              {"miou", ev.miou},
              {"mean_f_measure", mean_f},
              {"matched_true_positives", ev.matches},
              {"per_class", per_class}};
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

// ---- verbs ----------------------------------------------------------------

int run_synth(const AppConfig& app, const std::string& out_dir, int n_train,
              int n_test, std::uint64_t seed) {
  Timer timer;
  emit_dataset(n_train, "train", out_dir, seed, app.image_size);
  if (n_test > 0)
    emit_dataset(n_test, "test", out_dir, mix_seed(seed, 0x7e57), app.image_size);
  json extra{{"verb", "synth"},
             {"train_count", n_train},
             {"test_count", n_test},
             {"seed", seed},
             {"train_manifest_hash", hash_file(manifest_path(out_dir, "train"))},
             {"wall_clock_sec", timer.seconds()}};
  if (n_test > 0)
    extra["test_manifest_hash"] = hash_file(manifest_path(out_dir, "test"));
  write_metadata(out_dir + "/synth_metadata.json", app, extra);
  std::cout << "wrote " << n_train << " train + " << n_test << " test images to "
            << out_dir << "\n";
  return 0;
}

int run_train(AppConfig app, const std::string& data_manifest,
              const std::string& out_dir, const std::string& resume_path) {
  Timer timer;
  fs::create_directories(out_dir);
  const Dataset data = Dataset::load(data_manifest);
  BafDetector model = BafDetector::create(make_detector_config(app), app.train.seed);

  TrainConfig tc = app.train;
  if (tc.checkpoint_dir.empty()) tc.checkpoint_dir = out_dir;
  Trainer trainer(model, tc);
  if (!resume_path.empty()) trainer.restore(load_checkpoint(resume_path));

  const auto entries = trainer.run(data, &std::cout);

  Checkpoint final_ckpt = trainer.make_checkpoint();
  checkpoint_meta_from_config(final_ckpt, app);
  save_checkpoint(out_dir + "/checkpoint.bin", final_ckpt);

  std::ofstream loss_log(out_dir + "/loss_log.csv");
  loss_log << "iteration,lr,loss,rpn_cls,rpn_reg,roi_cls,roi_reg\n";
  json loss_json = json::array();
  for (const auto& e : entries) {
    loss_log << e.iteration << "," << e.lr << "," << e.loss << "," << e.rpn_cls << ","
             << e.rpn_reg << "," << e.roi_cls << "," << e.roi_reg << "\n";
    loss_json.push_back({{"iteration", e.iteration}, {"loss", e.loss}, {"lr", e.lr}});
  }
  write_metadata(out_dir + "/train_metadata.json", app,
                 json{{"verb", "train"},
                      {"dataset_manifest", data_manifest},
                      {"dataset_manifest_hash", hash_file(data_manifest)},
                      {"resumed_from", resume_path},
                      {"iterations", trainer.iteration()},
                      {"parameter_count", model.parameter_count()},
                      {"loss_log", loss_json},
                      {"wall_clock_sec", timer.seconds()}});
  std::cout << "trained " << trainer.iteration() << " iterations; checkpoint at "
            << out_dir << "/checkpoint.bin\n";
  return 0;
}

int run_detect(AppConfig app, const std::string& ckpt_path, const std::string& input,
               const std::string& out_dir, bool overlays) {
  Timer timer;
  fs::create_directories(out_dir);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  app = config_from_checkpoint(ckpt, app);
  BafDetector model = BafDetector::create(make_detector_config(app), 0);
  apply_checkpoint(model, ckpt);

  std::vector<std::string> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.path().extension() == ".pgm") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  if (files.empty()) throw std::runtime_error("no .pgm images found in " + input);

  std::vector<ImageDetections> all;
  int failures = 0;
  for (const auto& path : files) {
    ImageDetections im;
    im.image_id = fs::path(path).stem().string();
    GrayImage img;
    try {
      img = resize_square(read_pgm(path), app.image_size);
    } catch (const std::exception& e) {
      std::cerr << "skipping " << path << ": " << e.what() << "\n";
      ++failures;
      continue;
    }
    im.dets = model.detect(image_to_tensor(img), app.score_threshold,
                           app.nms_iou_threshold);
    if (overlays) {
      GrayImage overlay = img;
      for (const auto& d : im.dets)
        draw_rect(overlay, static_cast<int>(d.box.x1()), static_cast<int>(d.box.y1()),
                  static_cast<int>(d.box.x2()), static_cast<int>(d.box.y2()), 255);
      write_pgm(out_dir + "/" + im.image_id + "_overlay.pgm", overlay);
    }
    all.push_back(std::move(im));
  }
  write_detections_csv(out_dir + "/detections.csv", all);
  write_metadata(out_dir + "/detect_metadata.json", app,
                 json{{"verb", "detect"},
                      {"checkpoint", ckpt_path},
                      {"input", input},
                      {"images", all.size()},
                      {"unreadable_images", failures},
                      {"wall_clock_sec", timer.seconds()}});
  std::cout << "wrote detections for " << all.size() << " images to " << out_dir
            << "/detections.csv\n";
  return 0;
}

int run_eval(const AppConfig& app, const std::string& det_csv,
             const std::string& manifest_file, const std::string& out_dir,
             double iou_thr) {
  Timer timer;
  fs::create_directories(out_dir);
  auto dets = read_detections_csv(det_csv);
  const auto gts = gts_from_manifest(manifest_file);
  // keep only detections for images the manifest covers
  std::map<std::string, bool> known;
  for (const auto& g : gts) known[g.image_id] = true;
  const std::size_t before = dets.size();
  std::erase_if(dets, [&known](const ImageDetections& d) {
    return known.find(d.image_id) == known.end();
  });
  if (dets.size() != before)
    std::cerr << "note: ignored detections for " << before - dets.size()
              << " images not in the manifest\n";
  const EvalResult ev = evaluate_detections(dets, gts, iou_thr);
  const auto prf = prf_at_threshold(dets, gts, app.score_threshold, iou_thr);
  const ConfusionMatrix cm = confusion(dets, gts, app.score_threshold, iou_thr);

  json j = eval_json(ev, prf);
  json cm_rows = json::array();
  for (int r = 0; r <= kNumClasses; ++r) {
    json row = json::array();
    for (int c = 0; c <= kNumClasses; ++c) row.push_back(cm.counts[r][c]);
    cm_rows.push_back(row);
  }
  j["confusion"] = cm_rows;
  for (int k = 0; k < kNumClasses; ++k)
    j["miss_rate_pct"][kClassNames[k]] = cm.miss_rate_pct[k];
  std::ofstream(out_dir + "/metrics.json") << j.dump(2) << "\n";
  write_metadata(out_dir + "/eval_metadata.json", app,
                 json{{"verb", "eval"},
                      {"detections", det_csv},
                      {"dataset_manifest", manifest_file},
                      {"dataset_manifest_hash", hash_file(manifest_file)},
                      {"iou_threshold", iou_thr},
                      {"wall_clock_sec", timer.seconds()}});
  std::cout << "mAP@" << iou_thr << " = " << ev.map << "  MIoU = " << ev.miou << "\n";
  return 0;
}

int run_viz_attn(AppConfig app, const std::string& ckpt_path,
                 const std::string& image_path, const std::string& out_dir) {
  Timer timer;
  fs::create_directories(out_dir);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  app = config_from_checkpoint(ckpt, app);
  if (app.attention == "none")
    throw std::runtime_error("no attention in this variant (attention = none)");
  BafDetector model = BafDetector::create(make_detector_config(app), 0);
  apply_checkpoint(model, ckpt);

  const GrayImage img = resize_square(read_pgm(image_path), app.image_size);
  const BafpnOutput out = model.feature_pyramid(image_to_tensor(img));
  if (!out.has_maps)
    throw std::runtime_error("no attention in this variant (no maps produced)");

  json stats = json::object();
  const std::pair<const char*, const SimilarityMap*> maps[] = {{"b3", &out.map3},
                                                               {"b4", &out.map4}};
  for (const auto& [name, map] : maps) {
    write_pgm(out_dir + "/attention_" + name + ".pgm", tensor_to_image(map->attention));
    const MapStatistics ms = map_statistics(map->attention);
    json hist = json::array();
    for (const auto v : ms.histogram) hist.push_back(v);
    stats[name] = {{"brightness", ms.brightness},
                   {"contrast", ms.contrast},
                   {"histogram", hist}};
  }
  std::ofstream(out_dir + "/attention_stats.json") << stats.dump(2) << "\n";
  write_metadata(out_dir + "/viz_attn_metadata.json", app,
                 json{{"verb", "viz-attn"},
                      {"checkpoint", ckpt_path},
                      {"image", image_path},
                      {"wall_clock_sec", timer.seconds()}});
  std::cout << "wrote attention maps and stats to " << out_dir << "\n";
  return 0;
}

int run_ablate(AppConfig app, const std::string& train_manifest,
               const std::string& test_manifest, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds) {
  Timer timer;
  fs::create_directories(out_dir);
  const Dataset train_data = Dataset::load(train_manifest);
  const Dataset test_data = Dataset::load(test_manifest);
  std::vector<ImageGroundTruth> gts = gts_from_manifest(test_manifest);

  const std::pair<std::string, std::string> variants[] = {
      {"topdown", "none"},     {"topdown", "dot"},     {"topdown", "cosine"},
      {"bidirectional", "none"}, {"bidirectional", "dot"}, {"bidirectional", "cosine"}};

  std::ofstream report(out_dir + "/ablation.csv");
  report << "variant,attention,parameter_count,seeds,precision,recall,f_measure,map,"
            "miou\n";
  std::ofstream detail(out_dir + "/ablation_per_seed.csv");
  detail << "variant,attention,seed,map,miou\n";
  json summary = json::array();

  for (const auto& [variant, attention] : variants) {
    AppConfig vc = app;
    vc.variant = variant;
    vc.attention = attention;
    const DetectorConfig dc = make_detector_config(vc);

    double sum_p = 0, sum_r = 0, sum_f = 0, sum_map = 0, sum_miou = 0;
    std::size_t param_count = 0;
    for (std::uint64_t seed : seeds) {
      BafDetector model = BafDetector::create(dc, seed);
      param_count = model.parameter_count();
      TrainConfig tc = vc.train;
      tc.seed = seed;
      Trainer trainer(model, tc);
      trainer.run(train_data);

      std::vector<ImageDetections> dets;
      for (const auto& s : test_data.samples)
        dets.push_back({s.id, model.detect(s.image, 0.05, vc.nms_iou_threshold)});
      const EvalResult ev = evaluate_detections(dets, gts, 0.5);
      const auto prf = prf_at_threshold(dets, gts, vc.score_threshold, 0.5);
      double p = 0, r = 0, f = 0;
      for (int k = 0; k < kNumClasses; ++k) {
        p += prf[k].precision / kNumClasses;
        r += prf[k].recall / kNumClasses;
        f += prf[k].f_measure / kNumClasses;
      }
      sum_p += p;
      sum_r += r;
      sum_f += f;
      sum_map += ev.map;
      sum_miou += ev.miou;
      detail << variant << "," << attention << "," << seed << "," << ev.map << ","
             << ev.miou << "\n"
             << std::flush;
      std::cout << variant << "+" << attention << " seed " << seed
                << ": mAP = " << ev.map << "\n";
    }
    const double n = static_cast<double>(seeds.size());
    report << variant << "," << attention << "," << param_count << "," << seeds.size()
           << "," << sum_p / n << "," << sum_r / n << "," << sum_f / n << ","
           << sum_map / n << "," << sum_miou / n << "\n"
           << std::flush;
    summary.push_back({{"variant", variant},
                       {"attention", attention},
                       {"parameter_count", param_count},
                       {"mean_map", sum_map / n},
                       {"mean_miou", sum_miou / n}});
  }
  write_metadata(out_dir + "/ablate_metadata.json", app,
                 json{{"verb", "ablate"},
                      {"train_manifest_hash", hash_file(train_manifest)},
                      {"test_manifest_hash", hash_file(test_manifest)},
                      {"seeds", seeds},
                      {"results", summary},
                      {"wall_clock_sec", timer.seconds()}});
  std::cout << "ablation report at " << out_dir << "/ablation.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"EL-cell defect detector: synthesis, training and evaluation"};
  cli.require_subcommand(1);

  AppConfig app;
  std::string config_file;
  cli.add_option("--config", config_file, "JSON config file (flags override it)");

  // shared overrides
  auto add_model_flags = [&app](CLI::App* sub) {
    sub->add_option("--image-size", app.image_size, "square input side (multiple of 32)");
    sub->add_option("--variant", app.variant, "pyramid variant: topdown|bidirectional");
    sub->add_option("--attention", app.attention, "attention kind: none|dot|cosine");
    sub->add_option("--bafpn-width", app.bafpn_width, "pyramid channel width");
    sub->add_option("--score-threshold", app.score_threshold, "detection score cutoff");
    sub->add_option("--nms-iou", app.nms_iou_threshold, "final NMS IoU threshold");
  };

  // synth
  auto* synth = cli.add_subcommand("synth", "generate a synthetic dataset");
  std::string out_dir;
  int n_train = 200, n_test = 50;
  std::uint64_t seed = 0;
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--train-count", n_train, "training images");
  synth->add_option("--test-count", n_test, "test images");
  synth->add_option("--seed", seed, "master seed");
  synth->add_option("--image-size", app.image_size, "square image side");

  // train
  auto* train = cli.add_subcommand("train", "train a detector");
  std::string data_manifest, resume_path;
  train->add_option("--data", data_manifest, "training manifest CSV")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--iterations", app.train.max_iterations, "max iterations");
  train->add_option("--lr", app.train.lr, "learning rate");
  train->add_option("--momentum", app.train.momentum, "momentum");
  train->add_option("--weight-decay", app.train.weight_decay, "weight decay");
  train->add_option("--decay-steps", app.train.decay_steps, "lr decay iterations");
  train->add_option("--seed", app.train.seed, "training seed");
  train->add_option("--checkpoint-interval", app.train.checkpoint_interval,
                    "iterations between checkpoints");
  add_model_flags(train);

  // detect
  auto* detect = cli.add_subcommand("detect", "run detection on images");
  std::string ckpt_path, input_path;
  bool overlays = false;
  detect->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  detect->add_option("--input", input_path, "PGM file or directory")->required();
  detect->add_option("--out", out_dir, "output directory")->required();
  detect->add_flag("--overlays", overlays, "write annotated PGM overlays");
  detect->add_option("--score-threshold", app.score_threshold, "detection score cutoff");
  detect->add_option("--nms-iou", app.nms_iou_threshold, "final NMS IoU threshold");

  // eval
  auto* eval = cli.add_subcommand("eval", "score detections against ground truth");
  std::string det_csv;
  double iou_thr = 0.5;
  eval->add_option("--detections", det_csv, "detections CSV")->required();
  eval->add_option("--data", data_manifest, "dataset manifest CSV")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--iou", iou_thr, "matching IoU threshold");
  eval->add_option("--score-threshold", app.score_threshold, "P/R/F score cutoff");

  // viz-attn
  auto* viz = cli.add_subcommand("viz-attn", "export attention similarity maps");
  std::string image_path;
  viz->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  viz->add_option("--image", image_path, "input PGM image")->required();
  viz->add_option("--out", out_dir, "output directory")->required();

  // ablate
  auto* ablate = cli.add_subcommand("ablate", "train and compare all six variants");
  std::string test_manifest;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ablate->add_option("--data", data_manifest, "training manifest CSV")->required();
  ablate->add_option("--test", test_manifest, "test manifest CSV")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--seeds", seeds, "training seeds");
  ablate->add_option("--iterations", app.train.max_iterations, "iterations per run");
  ablate->add_option("--image-size", app.image_size, "square input side");

  // Parse twice so a --config file provides defaults that flags then override.
  try {
    cli.parse(argc, argv);
    if (!config_file.empty()) {
      AppConfig fresh;
      load_config_file(fresh, config_file);
      app = fresh;
      cli.clear();
      cli.parse(argc, argv);
    }
    validate(app);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*synth) return run_synth(app, out_dir, n_train, n_test, seed);
    if (*train) return run_train(app, data_manifest, out_dir, resume_path);
    if (*detect) return run_detect(app, ckpt_path, input_path, out_dir, overlays);
    if (*eval) return run_eval(app, det_csv, data_manifest, out_dir, iou_thr);
    if (*viz) return run_viz_attn(app, ckpt_path, image_path, out_dir);
    if (*ablate) return run_ablate(app, data_manifest, test_manifest, out_dir, seeds);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
