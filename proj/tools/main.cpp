// SPDX-License-Identifier: Apache-2.0
//
// soar: command-line entry point.
//
// Exit codes: 0 ok, 1 selftest failure, 2 I/O, 3 parse, 4 schema, 5 detector.

#include <chrono>
#include <csignal>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "exec_detector.hpp"
#include "soar/acceptance.hpp"
#include "soar/dota.hpp"
#include "soar/encoder.hpp"
#include "soar/errors.hpp"
#include "soar/image.hpp"
#include "soar/io.hpp"
#include "soar/metrics.hpp"
#include "soar/parallel.hpp"
#include "soar/slicing.hpp"
#include "soar/ssm.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kSelftestFailed = 1, kIo = 2, kParse = 3, kSchema = 4, kDetector = 5 };

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  ordered_json config = ordered_json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::optional<std::uint64_t> seed;
  ordered_json timings = ordered_json::object();

  ordered_json to_json() const {
    ordered_json j;
    j["tool"] = "soar";
    j["version"] = kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed ? ordered_json(*seed) : ordered_json(nullptr);
    j["timings"] = timings;
    return j;
  }

  void write(const fs::path& path) const { soar::write_file_atomic(path, to_json().dump(2) + "\n"); }
};

ordered_json read_json(const fs::path& path) {
  const std::string text = soar::read_file(path);
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw soar::ParseError(e.what(), 0, path.string());
  }
}

void write_json(const fs::path& path, const ordered_json& doc) {
  soar::write_file_atomic(path, doc.dump(2) + "\n");
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw soar::IoError("cannot create directory " + dir.string());
}

ordered_json slice_config_json(const soar::slicing::SliceConfig& c) {
  ordered_json j;
  j["slice_w"] = c.width_range.max;
  j["slice_h"] = c.height_range.max;
  j["overlap_ratio"] = c.overlap_ratio;
  j["resize_long_side"] = c.resize_long_side ? ordered_json(*c.resize_long_side) : ordered_json(nullptr);
  j["include_full_image"] = c.include_full_image;
  return j;
}

struct SliceArgs {
  int slice_w{512};
  int slice_h{512};
  double overlap{0.2};
  std::optional<int> resize;
  bool full_image{false};

  void add(CLI::App* app) {
    app->add_option("--slice-w", slice_w, "Tile width in pixels")->check(CLI::PositiveNumber);
    app->add_option("--slice-h", slice_h, "Tile height in pixels")->check(CLI::PositiveNumber);
    app->add_option("--overlap", overlap, "Overlap ratio in [0, 1)")->check(CLI::Range(0.0, 0.999999));
    app->add_option("--resize", resize, "Resize each tile so its long side has this length")
        ->check(CLI::PositiveNumber);
  }

  soar::slicing::SliceConfig config() const {
    soar::slicing::SliceConfig c;
    c.width_range = {slice_w, slice_w};
    c.height_range = {slice_h, slice_h};
    c.overlap_ratio = overlap;
    c.resize_long_side = resize;
    c.include_full_image = full_image;
    c.validate();
    return c;
  }
};

// ---- slice ----------------------------------------------------------------

struct SliceCommand {
  std::string input;
  std::string out;
  SliceArgs tiles;

  int run(RunManifest& m) {
    Stopwatch clock;
    const fs::path in(input);
    std::vector<fs::path> files;
    if (fs::is_directory(in)) {
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
    } else if (fs::is_regular_file(in)) {
      files.push_back(in);
    } else {
      throw soar::IoError("no such file or directory: " + input);
    }
    const auto cfg = tiles.config();

    std::vector<std::pair<std::string, soar::Image>> patches;
    auto images = ordered_json::array();
    for (const auto& file : files) {
      const auto image = soar::read_png(file);
      m.inputs.push_back(file.string());
      const auto plan = soar::slicing::plan_slices(image.width, image.height, cfg.width_range.max,
                                                   cfg.height_range.max, cfg.overlap_ratio);
      auto entry = soar::slicing::plan_to_json(plan);
      entry["file"] = file.filename().string();
      auto names = ordered_json::array();
      for (auto& p : soar::slicing::extract_and_resize(image, plan, cfg.resize_long_side)) {
        const auto& r = p.rect;
        std::string name = file.stem().string() + "_" + std::to_string(r.x) + "_" +
                           std::to_string(r.y) + "_" + std::to_string(r.w) + "_" +
                           std::to_string(r.h) + ".png";
        names.push_back(name);
        patches.emplace_back(std::move(name), std::move(p.image));
      }
      entry["patches"] = std::move(names);
      images.push_back(std::move(entry));
    }
    m.timings["plan_and_extract"] = clock.lap();

    ensure_directory(out);
    for (const auto& [name, image] : patches) {
      const fs::path target = fs::path(out) / name;
      soar::write_atomic(target, [&](const fs::path& tmp) { soar::write_png(tmp, image); });
      m.outputs.push_back(target.string());
    }
    ordered_json plan;
    plan["config"] = slice_config_json(cfg);
    plan["images"] = std::move(images);
    write_json(fs::path(out) / "plan.json", plan);
    m.outputs.push_back((fs::path(out) / "plan.json").string());
    m.timings["write"] = clock.lap();
    m.config = slice_config_json(cfg);
    m.write(fs::path(out) / "manifest.json");
    std::cout << patches.size() << " patches from " << files.size() << " image(s) -> " << out << "\n";
    return kOk;
  }
};

// ---- convert --------------------------------------------------------------

struct ConvertCommand {
  std::string images;
  std::string labels;
  std::string out;
  std::string list;

  int run(RunManifest& m) {
    Stopwatch clock;
    std::optional<std::vector<std::string>> stems;
    if (!list.empty()) {
      std::istringstream in(soar::read_file(list));
      stems.emplace();
      for (std::string line; std::getline(in, line);) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) stems->push_back(line);
      }
      m.inputs.push_back(list);
    }
    if (!fs::is_directory(images)) throw soar::IoError("no such directory: " + images);
    if (!fs::is_directory(labels)) throw soar::IoError("no such directory: " + labels);
    const auto ds = soar::dota::convert_directory(images, labels, stems);
    m.timings["convert"] = clock.lap();
    write_json(out, ds.to_json());
    m.inputs.push_back(images);
    m.inputs.push_back(labels);
    m.outputs.push_back(out);
    m.config = {{"format", "dota2coco"}};
    m.write(out + ".manifest.json");
    std::cout << ds.images.size() << " images, " << ds.annotations.size() << " annotations -> "
              << out << "\n";
    return kOk;
  }
};

// ---- eval -----------------------------------------------------------------

struct EvalCommand {
  std::string pred;
  std::string gt;
  std::string out{"."};
  double iou{0.5};
  bool per_class{false};
  bool size_buckets{false};
  bool keep_difficult{false};

  int run(RunManifest& m) {
    Stopwatch clock;
    const auto dataset = soar::dota::CocoDataset::from_json(read_json(gt));
    const auto predictions = soar::detections_from_json(read_json(pred));
    m.inputs = {pred, gt};

    std::vector<int> class_ids;
    std::vector<std::string> names;
    for (const auto& c : dataset.categories) {
      class_ids.push_back(c.id);
      names.push_back(c.name);
    }
    std::map<std::int64_t, std::size_t> slot;
    std::vector<soar::metrics::ImageSample> samples(dataset.images.size());
    for (std::size_t i = 0; i < dataset.images.size(); ++i) slot[dataset.images[i].id] = i;
    auto known_class = [&](int id) {
      return std::find(class_ids.begin(), class_ids.end(), id) != class_ids.end();
    };
    for (const auto& a : dataset.annotations) {
      samples[slot.at(a.image_id)].ground_truth.push_back(
          {a.category_id, a.hbb(), a.difficult != 0, a.area});
    }
    for (const auto& p : predictions) {
      const auto it = slot.find(p.image_id);
      if (it == slot.end()) {
        throw soar::SchemaError(pred + ": prediction for unknown image_id " + std::to_string(p.image_id));
      }
      if (!known_class(p.detection.class_id)) {
        throw soar::SchemaError(pred + ": unknown class_id " + std::to_string(p.detection.class_id));
      }
      samples[it->second].predictions.push_back(p.detection);
    }
    m.timings["load"] = clock.lap();

    soar::metrics::EvalOptions opts;
    opts.match.iou_threshold = iou;
    opts.match.ignore_difficult = !keep_difficult;
    opts.per_class = per_class;
    opts.size_buckets = size_buckets;
    const auto report = soar::metrics::evaluate(samples, class_ids, names, opts);
    m.timings["evaluate"] = clock.lap();

    ensure_directory(out);
    const fs::path dir(out);
    ordered_json doc;
    doc["iou_threshold"] = iou;
    doc["images"] = dataset.images.size();
    doc["predictions"] = predictions.size();
    const auto summary = report.to_json();
    for (const auto& [k, v] : summary.items()) doc[k] = v;
    write_json(dir / "report.json", doc);
    soar::write_file_atomic(dir / "confusion.csv", report.confusion.to_csv());
    soar::write_file_atomic(dir / "curves.csv", report.curves.rows_csv());
    soar::write_file_atomic(dir / "pr.csv", report.curves.pr_csv());
    for (const char* f : {"report.json", "confusion.csv", "curves.csv", "pr.csv"}) {
      m.outputs.push_back((dir / f).string());
    }
    m.config = {{"iou", iou}, {"per_class", per_class}, {"size_buckets", size_buckets},
                {"ignore_difficult", !keep_difficult}};
    m.write(dir / "manifest.json");
    std::cout << doc.dump(2) << "\n";
    return kOk;
  }
};

// ---- infer ----------------------------------------------------------------

struct InferCommand {
  std::string image;
  std::string detector;
  std::string gt;
  std::string out;
  std::optional<std::int64_t> image_id;
  double iou{0.5};
  double jitter{0.0};
  std::uint64_t seed{0};
  SliceArgs tiles;

  int run(RunManifest& m) {
    Stopwatch clock;
    const auto img = soar::read_png(image);
    m.inputs.push_back(image);
    const auto cfg = tiles.config();

    std::optional<soar::dota::CocoDataset> dataset;
    if (!gt.empty()) {
      dataset = soar::dota::CocoDataset::from_json(read_json(gt));
      m.inputs.push_back(gt);
    }
    std::int64_t id = image_id.value_or(0);
    if (!image_id && dataset) {
      const auto name = fs::path(image).filename().string();
      for (const auto& i : dataset->images) {
        if (i.file_name == name) id = i.id;
      }
    }

    std::vector<soar::Detection> merged;
    if (detector == "mock-oracle") {
      if (!dataset) throw soar::SchemaError("--detector mock-oracle needs --gt");
      std::vector<soar::Detection> truth;
      for (const auto& a : dataset->annotations) {
        if (a.image_id == id) truth.push_back({a.category_id, 1.0, a.hbb()});
      }
      soar::slicing::MockOracleDetector oracle(std::move(truth), {0.5, jitter, seed});
      merged = soar::slicing::sliced_inference(img, oracle, cfg, iou, soar::worker_count());
    } else if (detector.starts_with("exec:")) {
      soar::cli::ExecDetector exec(detector.substr(5));
      merged = soar::slicing::sliced_inference(img, exec, cfg, iou, 1);
      exec.finish();
    } else {
      throw soar::SchemaError("unknown detector '" + detector + "' (mock-oracle or exec:<path>)");
    }
    m.timings["inference"] = clock.lap();

    std::vector<soar::ImageDetection> tagged;
    for (const auto& d : merged) tagged.push_back({id, d});
    write_json(out, soar::detections_to_json(tagged));
    m.outputs.push_back(out);
    m.config = slice_config_json(cfg);
    m.config["detector"] = detector;
    m.config["iou"] = iou;
    m.config["jitter"] = jitter;
    m.config["image_id"] = id;
    m.seed = seed;
    m.write(out + ".manifest.json");
    std::cout << merged.size() << " detection(s) -> " << out << "\n";
    return kOk;
  }
};

// ---- bench ----------------------------------------------------------------

struct BenchCommand {
  std::vector<std::string> sizes{"64x8x16", "128x8x16", "256x8x16"};
  int repeat{3};
  std::uint64_t seed{0};
  std::string config;
  std::string json_out;

  int run(RunManifest& m) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1), e(-2, -0.1), d(0.01, 0.5);
    auto rows = ordered_json::array();
    std::printf("%8s %4s %8s %12s %16s %14s\n", "M", "N", "channels", "seconds", "elements/s",
                "flops");
    for (const auto& spec : sizes) {
      std::size_t mm = 0, n = 0, c = 0;
      char x1 = 0, x2 = 0;
      std::istringstream in(spec);
      if (!(in >> mm >> x1 >> n >> x2 >> c) || x1 != 'x' || x2 != 'x' || mm == 0 || n == 0 || c == 0) {
        throw soar::ParseError("size must be MxNxC with positive entries, got '" + spec + "'", 0);
      }
      soar::ssm::SelectiveParams sel;
      for (std::size_t k = 0; k < n; ++k) sel.evolution.push_back(e(rng));
      for (std::size_t t = 0; t < mm; ++t) sel.delta.push_back(d(rng));
      for (std::size_t k = 0; k < mm * n; ++k) {
        sel.input_proj.push_back(u(rng));
        sel.output_proj.push_back(u(rng));
      }
      std::vector<std::vector<double>> inputs(c, std::vector<double>(mm));
      for (auto& v : inputs)
        for (auto& x : v) x = u(rng);
      const std::vector<double> z0(n, 0.0);
      double best = 1e300, sink = 0;
      for (int r = 0; r < std::max(1, repeat); ++r) {
        Stopwatch clock;
        for (const auto& v : inputs) sink += soar::ssm::selective_scan(sel, v, z0).output.back();
        best = std::min(best, clock.lap());
      }
      best = std::max(best, 1e-9);
      const double flops = 2.0 * static_cast<double>(soar::ssm::scan_macs(mm, n, c));
      const double throughput = static_cast<double>(mm * c) / best;
      std::printf("%8zu %4zu %8zu %12.6f %16.4g %14.0f\n", mm, n, c, best, throughput, flops);
      rows.push_back({{"M", mm}, {"N", n}, {"channels", c}, {"seconds", best},
                      {"elements_per_s", throughput}, {"flops", flops}, {"checksum", sink}});
    }
    ordered_json doc;
    doc["scans"] = rows;

    if (!config.empty()) {
      const auto cfg = soar::encoder::EncoderConfig::load(config);
      m.inputs.push_back(config);
      const auto budget = soar::encoder::count_params_gflops(cfg);
      std::uint64_t macs = 0;
      auto items = ordered_json::array();
      std::printf("\n%-32s %12s %16s\n", "layer", "params", "multiply-adds");
      for (const auto& item : budget.items) {
        std::printf("%-32s %12llu %16llu\n", item.name.c_str(),
                    static_cast<unsigned long long>(item.params),
                    static_cast<unsigned long long>(item.macs));
        items.push_back({{"name", item.name}, {"params", item.params}, {"macs", item.macs}});
        macs += item.macs;
      }
      const double itemized = 2.0 * static_cast<double>(macs) / 1e9;
      const soar::encoder::Encoder enc(cfg);
      std::mt19937_64 img_rng(cfg.seed);
      std::uniform_real_distribution<double> px(0, 1);
      soar::encoder::ImageTensor img{cfg.image_h, cfg.image_w, cfg.channels,
                                     std::vector<double>(static_cast<std::size_t>(cfg.image_h) *
                                                         cfg.image_w * cfg.channels)};
      for (auto& v : img.data) v = px(img_rng);
      Stopwatch clock;
      enc.encode(img);
      const double forward = clock.lap();
      std::printf("total params %llu (%.4f M), GFLOPs %.6f (itemized %.6f), forward %.4f s\n",
                  static_cast<unsigned long long>(budget.params), budget.params_millions(),
                  budget.gflops, itemized, forward);
      doc["encoder"] = {{"params", budget.params}, {"gflops", budget.gflops},
                        {"gflops_itemized", itemized}, {"forward_seconds", forward},
                        {"items", items}};
    }
    if (!json_out.empty()) {
      write_json(json_out, doc);
      m.outputs.push_back(json_out);
      m.seed = seed;
      m.config = {{"sizes", sizes}, {"repeat", repeat}};
      m.write(json_out + ".manifest.json");
    }
    return kOk;
  }
};

// ---- encode ---------------------------------------------------------------

struct EncodeCommand {
  std::string config;
  std::string weights;
  std::string image;
  std::string out;
  std::string save_weights;
  std::optional<std::uint64_t> seed;
  bool budget{false};

  int run(RunManifest& m) {
    Stopwatch clock;
    auto cfg = config.empty() ? soar::encoder::EncoderConfig{} : soar::encoder::EncoderConfig::load(config);
    if (!config.empty()) m.inputs.push_back(config);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    const soar::encoder::Encoder enc =
        weights.empty() ? soar::encoder::Encoder(cfg)
                        : soar::encoder::Encoder(cfg, soar::encoder::load_weights(weights, cfg));
    if (!weights.empty()) m.inputs.push_back(weights);

    soar::encoder::ImageTensor tensor{cfg.image_h, cfg.image_w, cfg.channels, {}};
    if (!image.empty()) {
      const auto png = soar::read_png(image);
      m.inputs.push_back(image);
      if (png.width != cfg.image_w || png.height != cfg.image_h || png.channels != cfg.channels) {
        throw soar::SchemaError(image + ": expected " + std::to_string(cfg.image_w) + "x" +
                                std::to_string(cfg.image_h) + "x" + std::to_string(cfg.channels));
      }
      for (auto v : png.pixels) tensor.data.push_back(v / 255.0);
    } else {
      std::mt19937_64 rng(cfg.seed);
      std::uniform_real_distribution<double> px(0, 1);
      tensor.data.resize(static_cast<std::size_t>(cfg.image_h) * cfg.image_w * cfg.channels);
      for (auto& v : tensor.data) v = px(rng);
    }
    const auto scores = enc.encode(tensor);
    m.timings["encode"] = clock.lap();

    const auto b = soar::encoder::count_params_gflops(cfg);
    ordered_json doc;
    doc["scores"] = std::vector<double>(scores.data(), scores.data() + scores.size());
    doc["tokens"] = cfg.token_count() + 1;
    doc["params"] = b.params;
    doc["gflops"] = b.gflops;
    if (budget) {
      auto items = ordered_json::array();
      for (const auto& item : b.items) {
        items.push_back({{"name", item.name}, {"params", item.params}, {"macs", item.macs}});
      }
      doc["budget"] = std::move(items);
    }
    std::cout << doc.dump(2) << "\n";
    m.config = nlohmann::ordered_json::object();
    std::istringstream text(cfg.to_text());
    for (std::string line; std::getline(text, line);) {
      const auto eq = line.find(" = ");
      m.config[line.substr(0, eq)] = line.substr(eq + 3);
    }
    m.seed = cfg.seed;
    if (!save_weights.empty()) {
      soar::encoder::save_weights(save_weights, enc.weights());
      m.outputs.push_back(save_weights);
    }
    if (!out.empty()) {
      write_json(out, doc);
      m.outputs.push_back(out);
    }
    if (!out.empty() || !save_weights.empty()) {
      m.write((out.empty() ? save_weights : out) + ".manifest.json");
    }
    return kOk;
  }
};

// ---- selftest -------------------------------------------------------------

struct SelftestCommand {
  std::string suite;
  int inject_failure{0};

  int run(RunManifest&) {
    soar::acceptance::Options opts;
    opts.inject_failure = inject_failure;
    Stopwatch clock;
    const auto results = suite == "info" ? soar::acceptance::run_info(opts) : soar::acceptance::run(opts);
    const double total = clock.lap();
    bool ok = true;
    for (const auto& r : results) {
      std::cout << soar::acceptance::format(r) << "\n";
      if (!r.passed) {
        ok = false;
        std::cerr << "selftest: criterion " << r.id << " (" << r.name << ") failed\n";
      }
    }
    if (suite.empty() && total >= soar::acceptance::kSuiteBudgetSeconds) {
      ok = false;
      std::cerr << "selftest: suite exceeded " << soar::acceptance::kSuiteBudgetSeconds << " s\n";
    }
    std::cout << (ok ? "all criteria passed" : "FAILED") << " in " << total << " s\n";
    return ok ? kOk : kSelftestFailed;
  }
};

int exit_for(const std::exception& e) {
  if (dynamic_cast<const soar::DetectorError*>(&e)) return kDetector;
  if (dynamic_cast<const soar::IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kIo;
  }
  if (dynamic_cast<const soar::ParseError*>(&e) || dynamic_cast<const soar::ConversionError*>(&e) ||
      dynamic_cast<const soar::DegenerateBoxError*>(&e) ||
      dynamic_cast<const nlohmann::json::parse_error*>(&e)) {
    return kParse;
  }
  return kSchema;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Small-object detection toolkit: slicing, conversion, evaluation, encoder, checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SliceCommand slice;
  auto* slice_cmd = app.add_subcommand("slice", "Cut images into overlapping tiles");
  slice_cmd->add_option("--input", slice.input, "PNG file or directory of PNG files")->required();
  slice_cmd->add_option("--out", slice.out, "Output directory")->required();
  slice.tiles.add(slice_cmd);

  ConvertCommand convert;
  auto* convert_cmd = app.add_subcommand("convert", "Dataset conversion");
  convert_cmd->require_subcommand(1);
  auto* dota_cmd = convert_cmd->add_subcommand("dota2coco", "DOTA labels to COCO JSON");
  dota_cmd->add_option("--images", convert.images, "Image directory")->required();
  dota_cmd->add_option("--labels", convert.labels, "Label directory")->required();
  dota_cmd->add_option("--out", convert.out, "Output JSON file")->required();
  dota_cmd->add_option("--list", convert.list, "File listing the stems to convert");

  EvalCommand eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate detections against COCO ground truth");
  eval_cmd->add_option("--pred", eval.pred, "Detections JSON")->required();
  eval_cmd->add_option("--gt", eval.gt, "COCO ground truth JSON")->required();
  eval_cmd->add_option("--iou", eval.iou, "Matching IoU threshold")->check(CLI::Range(1e-9, 1.0));
  eval_cmd->add_option("--out", eval.out, "Output directory");
  eval_cmd->add_flag("--per-class", eval.per_class, "Add per-class counts");
  eval_cmd->add_flag("--size-buckets", eval.size_buckets, "Add small/medium/large counts");
  eval_cmd->add_flag("--keep-difficult", eval.keep_difficult, "Count difficult objects");

  InferCommand infer;
  auto* infer_cmd = app.add_subcommand("infer", "Sliced inference over one image");
  infer_cmd->add_option("--image", infer.image, "PNG image")->required();
  infer_cmd->add_option("--detector", infer.detector, "mock-oracle or exec:<path>")->required();
  infer_cmd->add_option("--gt", infer.gt, "COCO JSON (mock-oracle ground truth, image ids)");
  infer_cmd->add_option("--image-id", infer.image_id, "Image id for the output detections");
  infer_cmd->add_option("--out", infer.out, "Output detections JSON")->required();
  infer_cmd->add_option("--iou", infer.iou, "NMS IoU threshold")->check(CLI::Range(1e-9, 1.0));
  infer_cmd->add_option("--jitter", infer.jitter, "Mock oracle box jitter in pixels")->check(CLI::NonNegativeNumber);
  infer_cmd->add_option("--seed", infer.seed, "Seed for the jitter");
  infer_cmd->add_flag("--full-image", infer.tiles.full_image, "Also run on the whole image");
  infer.tiles.add(infer_cmd);

  BenchCommand bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time the selective scan");
  bench_cmd->add_option("--sizes", bench.sizes, "MxNxC triples")->delimiter(',');
  bench_cmd->add_option("--repeat", bench.repeat, "Repetitions (best is reported)");
  bench_cmd->add_option("--seed", bench.seed, "Seed for the random operands");
  bench_cmd->add_option("--config", bench.config, "Encoder config to itemize and time");
  bench_cmd->add_option("--json", bench.json_out, "Write results as JSON");

  EncodeCommand encode;
  auto* encode_cmd = app.add_subcommand("encode", "Run the encoder on one image");
  encode_cmd->add_option("--config", encode.config, "key = value config file");
  encode_cmd->add_option("--weights", encode.weights, "Weight file (default: seeded init)");
  encode_cmd->add_option("--image", encode.image, "PNG image (default: seeded random input)");
  encode_cmd->add_option("--out", encode.out, "Write scores JSON");
  encode_cmd->add_option("--save-weights", encode.save_weights, "Write the weights used");
  encode_cmd->add_option("--seed", encode.seed, "Override the config seed");
  encode_cmd->add_flag("--budget", encode.budget, "Include the itemized parameter/FLOP budget");

  SelftestCommand selftest;
  auto* selftest_cmd = app.add_subcommand("selftest", "Run the acceptance criteria");
  selftest_cmd->add_option("suite", selftest.suite, "Optional suite: info")->check(CLI::IsMember({"info"}));
  selftest_cmd->add_option("--inject-failure", selftest.inject_failure)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParse;
  }

  RunManifest manifest;
  manifest.argv.assign(argv, argv + argc);
  try {
    if (*slice_cmd) return manifest.command = "slice", slice.run(manifest);
    if (*convert_cmd) return manifest.command = "convert dota2coco", convert.run(manifest);
    if (*eval_cmd) return manifest.command = "eval", eval.run(manifest);
    if (*infer_cmd) return manifest.command = "infer", infer.run(manifest);
    if (*bench_cmd) return manifest.command = "bench", bench.run(manifest);
    if (*encode_cmd) return manifest.command = "encode", encode.run(manifest);
    if (*selftest_cmd) return manifest.command = "selftest", selftest.run(manifest);
  } catch (const std::exception& e) {
    std::cerr << "soar: " << e.what() << "\n";
    return exit_for(e);
  }
  return kOk;
}
