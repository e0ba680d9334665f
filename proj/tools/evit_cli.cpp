// evit: command-line front end for the backbone, its diagnostics, detection
// evaluation and GTSDB ingestion.
//
// Exit codes: 0 success, 1 unexpected failure, 2 config/usage error,
// 3 data/input error, 4 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "evit/evit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evit;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Backbone config JSON (default: built-in tiny config)");
  sub->add_option("--seed", c.seed, "Seed for parameter init and data generation");
  sub->add_option("--out", c.out, "Output directory");
}

BackboneConfig load_config(const std::string& path) {
  if (path.empty()) return BackboneConfig::tiny();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return backbone_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

/// Run record written next to a command's outputs.
struct Manifest {
  std::string command;
  const Common& common;
  std::vector<std::string> inputs, outputs;
  json extra = json::object();

  fs::path dir() const { return fs::path(common.out); }

  std::string output(const std::string& name) {
    const auto p = (dir() / name).string();
    outputs.push_back(p);
    return p;
  }

  void write() const {
    json j{{"command", command},
           {"config", common.config.empty() ? "builtin:tiny" : common.config},
           {"seed", common.seed},
           {"inputs", inputs},
           {"outputs", outputs},
           {"timestamp", utc_timestamp()}};
    if (!extra.empty()) j["details"] = extra;
    write_json(dir() / (command + ".manifest.json"), j);
  }
};

Manifest start(const std::string& command, const Common& c) {
  fs::create_directories(c.out);
  return Manifest{command, c, {}, {}, json::object()};
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list '" + s + "'");
    }
  }
  return out;
}

std::string shape_text(const Shape& s) { return shape_str(s); }

// --- describe ---------------------------------------------------------------

int cmd_describe(const Common& c, std::size_t size) {
  const auto cfg = load_config(c.config);
  auto m = start("describe", c);
  const auto params = accounting::param_report(cfg);
  const auto flops = accounting::count_flops(cfg, size, size);

  std::cout << "input " << cfg.image_channels << "x" << size << "x" << size << "\n\nstage outputs\n";
  json stages = json::array();
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::size_t side = size / BackboneConfig::cumulative_reduction(i);
    std::cout << "  stage" << i + 1 << "  [" << cfg.stage_widths[i] << ", " << side << ", " << side << "]  depth "
              << cfg.stage_depths[i] << "  heads " << cfg.stage_heads[i] << "\n";
    stages.push_back({{"stage", i + 1}, {"shape", {cfg.stage_widths[i], side, side}}});
  }

  json blocks = json::array();
  std::cout << "\nparameters\n";
  for (const auto& b : params.blocks) {
    std::cout << "  " << b.name << "  " << b.total() << "\n";
    json terms = json::object();
    for (const auto& t : b.terms) terms[t.name] = t.value;
    blocks.push_back({{"block", b.name}, {"params", b.total()}, {"terms", terms}});
  }
  std::cout << "  total  " << params.total() << "\n\nmultiply-accumulates at " << size << "x" << size << "\n";
  json fl = json::array();
  for (const auto& b : flops.blocks) {
    std::cout << "  " << b.name << " (" << b.kind << ", " << b.lattice_h << "x" << b.lattice_w << ")  " << b.total()
              << "\n";
    json terms = json::object();
    for (const auto& t : b.terms) terms[t.name] = t.value;
    fl.push_back({{"block", b.name}, {"kind", b.kind}, {"macs", b.total()}, {"terms", terms}});
  }
  std::cout << "  total  " << flops.total() << "\n";

  write_json(m.output("describe.json"), {{"config", to_json(cfg)},
                                         {"input", {cfg.image_channels, size, size}},
                                         {"stages", stages},
                                         {"params", blocks},
                                         {"total_params", params.total()},
                                         {"macs", fl},
                                         {"total_macs", flops.total()}});
  m.write();
  return kOk;
}

// --- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const Common& c, std::size_t samples, std::size_t size, double tol, const std::string& fault_op,
                  double fault_factor) {
  const auto cfg = load_config(c.config);
  auto m = start("gradcheck", c);
  diagnostics::SuiteOptions o;
  o.check.max_samples_per_input = samples;
  o.check.seed = c.seed;
  o.check.fault_op = fault_op;
  o.check.fault_factor = fault_factor;
  o.end_to_end_size = size;
  const auto rows = diagnostics::gradient_suite(cfg, c.seed, o);

  bool ok = true;
  json out = json::array();
  std::printf("%-12s %14s %10s %8s  %s\n", "block", "max_rel_err", "checked", "seconds", "status");
  for (const auto& r : rows) {
    const bool pass = r.report.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%-12s %14.3e %10zu %8.2f  %s\n", r.block.c_str(), r.report.max_rel_error, r.report.checked, r.seconds,
                pass ? "ok" : "FAIL");
    out.push_back({{"block", r.block},
                   {"max_rel_error", r.report.max_rel_error},
                   {"worst_input", r.report.worst_input},
                   {"worst_index", r.report.worst_index},
                   {"checked", r.report.checked},
                   {"seconds", r.seconds},
                   {"pass", pass}});
  }
  m.extra = {{"tolerance", tol}, {"samples_per_input", samples}, {"fault_op", fault_op}, {"fault_factor", fault_factor}};
  write_json(m.output("gradcheck.json"), {{"tolerance", tol}, {"rows", out}, {"pass", ok}});
  m.write();
  if (!ok) std::cerr << "gradient check failed (tolerance " << tol << ")\n";
  return ok ? kOk : kNumeric;
}

// --- forward ----------------------------------------------------------------

Tensor<float> center_crop32(const Tensor<float>& img) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const std::size_t ch = h / 32 * 32, cw = w / 32 * 32;
  if (ch == 0 || cw == 0) throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than 32");
  const std::size_t oy = (h - ch) / 2, ox = (w - cw) / 2;
  Tensor<float> out(Shape{img.dim(0), ch, cw});
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x) out.at({c, y, x}) = img.at({c, oy + y, ox + x});
  return out;
}

void check_checkpoint(const ParamStore<float>& ckpt, const ParamStore<float>& expected) {
  for (const auto& e : expected.entries()) {
    if (!ckpt.contains(e.name)) throw ConfigError("checkpoint does not match config: missing '" + e.name + "'");
    const auto& got = ckpt.value(e.name).shape();
    if (got != e.value.shape()) {
      throw ConfigError("checkpoint does not match config: '" + e.name + "' has shape " + shape_text(got) +
                        ", config expects " + shape_text(e.value.shape()));
    }
  }
  for (const auto& e : ckpt.entries()) {
    if (!expected.contains(e.name) && e.name.rfind("head.", 0) != 0) {
      throw ConfigError("checkpoint does not match config: unexpected tensor '" + e.name + "'");
    }
  }
}

int cmd_forward(const Common& c, const std::string& image, const std::string& checkpoint, bool crop, bool zero) {
  const auto cfg = load_config(c.config);
  auto m = start("forward", c);
  m.inputs.push_back(image);
  Tensor<float> img = gtsdb::load_ppm<float>(image);
  if (cfg.image_channels != 3) throw ConfigError("forward: PPM input has 3 channels, config expects " + std::to_string(cfg.image_channels));
  if (crop) img = center_crop32(img);

  ParamStore<float> store = backbone::init_backbone<float>(cfg, c.seed);
  if (!checkpoint.empty()) {
    m.inputs.push_back(checkpoint);
    const auto ckpt = io::load_checkpoint<float>(checkpoint);
    check_checkpoint(ckpt, store);
    for (auto& e : store.entries()) e.value = ckpt.value(e.name);
  }
  if (zero) store.zero_values();

  const auto pyr = backbone::backbone_forward(img, cfg, store);
  json stages = json::array();
  for (std::size_t i = 0; i < kStages; ++i) {
    const auto path = m.output("stage" + std::to_string(i + 1) + ".evt");
    io::save_tensor(pyr[i], path);
    double sq = 0;
    for (float v : pyr[i].data()) sq += double(v) * double(v);
    stages.push_back({{"stage", i + 1}, {"shape", pyr[i].shape()}, {"l2_norm", std::sqrt(sq)}, {"file", path}});
    std::cout << "stage" << i + 1 << " " << shape_text(pyr[i].shape()) << " norm " << std::sqrt(sq) << "\n";
  }
  m.extra = {{"input_shape", img.shape()}, {"center_crop", crop}, {"zero_init", zero}};
  write_json(m.output("forward.json"), {{"input_shape", img.shape()}, {"stages", stages}});
  m.write();
  return kOk;
}

int cmd_init(const Common& c) {
  const auto cfg = load_config(c.config);
  auto m = start("init", c);
  const auto store = backbone::init_backbone<float>(cfg, c.seed);
  io::save_checkpoint(store, m.output("params.ckpt"));
  std::cout << store.entries().size() << " tensors, " << store.total_params() << " parameters\n";
  m.write();
  return kOk;
}

// --- bench ------------------------------------------------------------------

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_bench(const Common& c, const std::string& resolutions, const std::string& strides, std::size_t reps) {
  const auto cfg = load_config(c.config);
  if (reps < 5) throw ConfigError("bench: --reps must be at least 5");
  auto m = start("bench", c);
  json rows = json::array();
  std::printf("%6s %6s %8s %6s %16s %16s %12s\n", "res", "stage", "tokens", "s", "attn_macs", "attn_macs_s1",
              "median_ms");
  for (double rd : parse_list(resolutions)) {
    const auto res = static_cast<std::size_t>(rd);
    if (rd != double(res) || res == 0 || res % 32) throw ConfigError("bench: resolution must be a positive multiple of 32");
    for (std::size_t st = 0; st < kStages; ++st) {
      if (!cfg.stage_has_ltb(st)) continue;
      const std::size_t side = res / BackboneConfig::cumulative_reduction(st);
      const std::size_t d = cfg.stage_widths[st] / 2, heads = cfg.stage_heads[st];
      ParamStore<float> store;
      ParamInit<float> init(c.seed);
      backbone::init_esa(store, init, "esa", d);
      std::mt19937_64 rng(c.seed + 1);
      const auto x = Tensor<float>::uniform({side * side, d}, -1.0f, 1.0f, rng);
      std::vector<double> list = parse_list(strides);
      list.push_back(double(cfg.esa_strides[st]));
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
      for (double sd : list) {
        const auto s = static_cast<std::size_t>(sd);
        if (s == 0 || side % s) continue;
        std::vector<double> ms;
        for (std::size_t r = 0; r < reps; ++r) {
          Graph<float> g;
          ParamBinder<float> p(g, store);
          const auto t0 = std::chrono::steady_clock::now();
          backbone::esa(g.constant(x), side, side, p, "esa", heads, s);
          ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        const auto macs = accounting::esa_attention_macs(side, side, d, s);
        const auto macs1 = accounting::esa_attention_macs(side, side, d, 1);
        const double med = median(ms);
        std::printf("%6zu %6zu %8zu %6zu %16llu %16llu %12.3f%s\n", res, st + 1, side * side, s,
                    static_cast<unsigned long long>(macs), static_cast<unsigned long long>(macs1), med,
                    s == cfg.esa_strides[st] ? "  (configured)" : "");
        rows.push_back({{"resolution", res},
                        {"stage", st + 1},
                        {"tokens", side * side},
                        {"kv_tokens", side * side / (s * s)},
                        {"stride", s},
                        {"configured", s == cfg.esa_strides[st]},
                        {"attention_macs", macs},
                        {"attention_macs_s1", macs1},
                        {"median_ms", med},
                        {"times_ms", ms}});
      }
    }
  }
  m.extra = {{"reps", reps}};
  write_json(m.output("bench.json"), {{"reps", reps}, {"rows", rows}});
  m.write();
  return kOk;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const Common& c, const std::string& gt_path, const std::string& det_path, bool superclasses,
             const std::string& map_path, const std::string& thresholds) {
  auto m = start("eval", c);
  m.inputs = {gt_path, det_path};
  auto gts = gtsdb::to_ground_truth(gtsdb::load_gt(gt_path));
  std::vector<eval::Detection> dets;
  try {
    dets = eval::parse_detections(gtsdb::read_text(det_path));
  } catch (const DataError& e) {
    throw DataError(det_path + ": " + e.what());
  }
  std::string grouping = "fine";
  if (superclasses || !map_path.empty()) {
    const auto map = map_path.empty() ? gtsdb::SuperclassMap::gtsdb_default() : gtsdb::SuperclassMap::load(map_path);
    if (!map_path.empty()) m.inputs.push_back(map_path);
    gts = gtsdb::relabel(std::move(gts), map);
    dets = gtsdb::relabel(std::move(dets), map);
    grouping = "superclass";
  }
  const auto rep = eval::evaluate(dets, gts, parse_list(thresholds));
  json j = eval::to_json(rep);
  j["grouping"] = grouping;
  std::printf("AP %.6f  AP50 %.6f  AP75 %.6f  (%zu classes, %s)\n", rep.ap, rep.ap50, rep.ap75, rep.per_class.size(),
              grouping.c_str());
  write_json(m.output("eval.json"), j);
  m.write();
  return kOk;
}

// --- train-toy --------------------------------------------------------------

int cmd_train_toy(const Common& c, std::size_t steps, float lr, std::size_t classes, std::size_t images) {
  const auto cfg = load_config(c.config);
  auto m = start("train-toy", c);
  toy::ToyOptions o;
  o.steps = steps;
  o.learning_rate = lr;
  o.num_classes = classes;
  o.num_images = images;
  const auto ds = toy::make_dataset(o, c.seed);
  auto store = toy::init_classifier(cfg, o.num_classes, c.seed);
  const auto losses = toy::train(store, cfg, ds, o.steps, o.learning_rate);
  {
    std::ofstream out(m.output("loss.csv"));
    out << "step,loss\n";
    out.precision(9);
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  }
  io::save_checkpoint(store, m.output("toy.ckpt"));
  std::printf("initial loss %.6f  final loss %.6f  ratio %.4f\n", losses.front(), losses.back(),
              losses.back() / losses.front());
  m.extra = {{"steps", steps}, {"learning_rate", lr}, {"classes", classes}, {"images", images}};
  m.write();
  return kOk;
}

// --- gtsdb-stats ------------------------------------------------------------

int cmd_gtsdb_stats(const Common& c, const std::string& gt_path, const std::string& manifest_path) {
  auto m = start("gtsdb-stats", c);
  m.inputs.push_back(gt_path);
  const auto recs = gtsdb::load_gt(gt_path);
  std::optional<gtsdb::SplitManifest> man;
  if (!manifest_path.empty()) {
    m.inputs.push_back(manifest_path);
    man = gtsdb::SplitManifest::parse(gtsdb::read_text(manifest_path));
  }
  json j;
  json warnings = json::array();
  const auto all = gtsdb::split_stats(recs, gtsdb::Split::all);
  j["all"] = gtsdb::to_json(all);
  auto warn = [&](const std::string& what, std::size_t got, std::size_t ref) {
    if (got == ref) return;
    const std::string msg = what + " is " + std::to_string(got) + ", reference count is " + std::to_string(ref);
    warnings.push_back(msg);
    std::cerr << "warning: " << msg << "\n";
  };
  warn("total signs", all.n_signs, gtsdb::kReferenceSigns);
  try {
    const auto tr = gtsdb::split_stats(recs, gtsdb::Split::train, man);
    const auto te = gtsdb::split_stats(recs, gtsdb::Split::test, man);
    j["train"] = gtsdb::to_json(tr);
    j["test"] = gtsdb::to_json(te);
    j["split_rule"] = man ? "manifest" : "numeric stem < 600 is train";
    warn("train images", tr.n_images_with_signs, gtsdb::kReferenceTrainImages);
    warn("train signs", tr.n_signs, gtsdb::kReferenceTrainSigns);
    warn("test images", te.n_images_with_signs, gtsdb::kReferenceTestImages);
    warn("test signs", te.n_signs, gtsdb::kReferenceTestSigns);
  } catch (const DataError& e) {
    if (man) throw;
    warnings.push_back(std::string("train/test split skipped: ") + e.what());
    std::cerr << "warning: train/test split skipped: " << e.what() << "\n";
  }
  j["warnings"] = warnings;
  j["caveat"] = "images without any sign do not appear in gt.txt and are not counted";
  std::printf("signs %zu  images with signs %zu\n", all.n_signs, all.n_images_with_signs);
  write_json(m.output("gtsdb_stats.json"), j);
  m.write();
  return kOk;
}

// --- tensor dump / load -----------------------------------------------------

int cmd_tensor_dump(const Common& c, const std::string& in, const std::string& out_file) {
  const auto header = io::read_tensor_header(in);
  const auto t = io::load_tensor<double>(in);
  json j{{"dtype", header.at("dtype")}, {"shape", t.shape()}, {"data", t.vec()}};
  if (out_file.empty()) {
    std::cout << j.dump() << "\n";
    return kOk;
  }
  auto m = start("tensor-dump", c);
  m.inputs.push_back(in);
  write_json(m.output(out_file), j);
  m.write();
  return kOk;
}

int cmd_tensor_load(const Common& c, const std::string& in, const std::string& out_file) {
  auto m = start("tensor-load", c);
  m.inputs.push_back(in);
  json j;
  try {
    j = json::parse(gtsdb::read_text(in));
    Shape shape;
    for (const auto& v : j.at("shape")) shape.push_back(v.get<std::size_t>());
    const auto data = j.at("data").get<std::vector<double>>();
    const std::string dtype = j.value("dtype", "f32");
    Tensor<double> t(shape, data);
    if (dtype == "f64") {
      io::save_tensor(t, m.output(out_file));
    } else if (dtype == "f32") {
      io::save_tensor(t.cast<float>(), m.output(out_file));
    } else {
      throw DataError("unknown dtype '" + dtype + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(in + ": " + e.what());
  } catch (const ShapeError& e) {
    throw DataError(in + ": " + e.what());
  }
  m.write();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Efficient vision-transformer backbone toolkit"};
  app.require_subcommand(1);
  Common common;
  int rc = kOk;

  auto* describe = app.add_subcommand("describe", "Stage shapes, parameter and MAC accounting");
  add_common(describe, common);
  std::size_t describe_size = 224;
  describe->add_option("--size", describe_size, "Square input side");
  describe->callback([&] { rc = cmd_describe(common, describe_size); });

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every block type");
  add_common(gradcheck, common);
  std::size_t gc_samples = 16, gc_size = 32;
  double gc_tol = 1e-5, gc_factor = 1.0;
  std::string gc_fault;
  gradcheck->add_option("--samples", gc_samples, "Sampled elements per input (0 = all)");
  gradcheck->add_option("--size", gc_size, "End-to-end input side");
  gradcheck->add_option("--tolerance", gc_tol, "Fail at or above this relative error");
  gradcheck->add_option("--fault-op", gc_fault, "Scale the gradient rule of this op (harness self-test)");
  gradcheck->add_option("--fault-factor", gc_factor, "Scale factor for --fault-op");
  gradcheck->callback([&] { rc = cmd_gradcheck(common, gc_samples, gc_size, gc_tol, gc_fault, gc_factor); });

  auto* forward = app.add_subcommand("forward", "Run the backbone on a PPM image, write four feature maps");
  add_common(forward, common);
  std::string fw_image, fw_ckpt;
  bool fw_crop = false, fw_zero = false;
  forward->add_option("--image", fw_image, "P6 PPM input")->required();
  forward->add_option("--checkpoint", fw_ckpt, "Parameter checkpoint (default: seeded init)");
  forward->add_flag("--center-crop", fw_crop, "Crop to the largest centered 32-divisible window");
  forward->add_flag("--zero-init", fw_zero, "Zero every parameter");
  forward->callback([&] { rc = cmd_forward(common, fw_image, fw_ckpt, fw_crop, fw_zero); });

  auto* init = app.add_subcommand("init", "Write a seeded parameter checkpoint");
  add_common(init, common);
  init->callback([&] { rc = cmd_init(common); });

  auto* bench = app.add_subcommand("bench", "Attention MACs and timings, pooled vs full");
  add_common(bench, common);
  std::string bench_res = "64,128,224", bench_strides = "1,2,4,8";
  std::size_t bench_reps = 5;
  bench->add_option("--resolutions", bench_res, "Comma-separated square input sides");
  bench->add_option("--strides", bench_strides, "Comma-separated pooling strides to compare");
  bench->add_option("--reps", bench_reps, "Repetitions per measurement (>= 5)");
  bench->callback([&] { rc = cmd_bench(common, bench_res, bench_strides, bench_reps); });

  auto* ev = app.add_subcommand("eval", "AP / AP50 / AP75 of detections against GTSDB-format ground truth");
  add_common(ev, common);
  std::string ev_gt, ev_dets, ev_map, ev_thr;
  bool ev_super = false;
  ev->add_option("--gt", ev_gt, "Ground truth (NAME;left;top;right;bottom;classId)")->required();
  ev->add_option("--dets", ev_dets, "Detections (image;x1;y1;x2;y2;class;score)")->required();
  ev->add_flag("--superclasses", ev_super, "Score the four superclasses using the built-in map");
  ev->add_option("--superclass-map", ev_map, "Superclass map JSON (implies --superclasses)");
  ev->add_option("--thresholds", ev_thr, "Extra comma-separated IoU thresholds to report");
  ev->callback([&] { rc = cmd_eval(common, ev_gt, ev_dets, ev_super, ev_map, ev_thr); });

  auto* train = app.add_subcommand("train-toy", "Gradient descent on the synthetic shapes task");
  add_common(train, common);
  std::size_t tr_steps = 200, tr_classes = 3, tr_images = 32;
  float tr_lr = 0.1f;
  train->add_option("--steps", tr_steps, "Update steps");
  train->add_option("--lr", tr_lr, "Step size");
  train->add_option("--classes", tr_classes, "Number of shape classes (2-4)");
  train->add_option("--images", tr_images, "Training images");
  train->callback([&] { rc = cmd_train_toy(common, tr_steps, tr_lr, tr_classes, tr_images); });

  auto* stats = app.add_subcommand("gtsdb-stats", "Annotation counts per split");
  add_common(stats, common);
  std::string st_gt, st_manifest;
  stats->add_option("--gt", st_gt, "gt.txt")->required();
  stats->add_option("--split-manifest", st_manifest, "[train]/[test] file list");
  stats->callback([&] { rc = cmd_gtsdb_stats(common, st_gt, st_manifest); });

  auto* tensor = app.add_subcommand("tensor", "Convert between the binary tensor format and JSON");
  tensor->require_subcommand(1);
  std::string t_in, t_out;
  auto* dump = tensor->add_subcommand("dump", "Binary tensor to JSON");
  add_common(dump, common);
  dump->add_option("--in", t_in, "Tensor file")->required();
  dump->add_option("--out-file", t_out, "JSON file name inside --out (default: stdout)");
  dump->callback([&] { rc = cmd_tensor_dump(common, t_in, t_out); });
  auto* load = tensor->add_subcommand("load", "JSON to binary tensor");
  add_common(load, common);
  load->add_option("--in", t_in, "JSON file with dtype, shape and data")->required();
  load->add_option("--out-file", t_out, "Tensor file name inside --out")->required();
  load->callback([&] { rc = cmd_tensor_load(common, t_in, t_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return rc;
}
