// veca: command-line driver for the core-periphery encoder toolkit.
//
// Exit codes: 0 success, 1 verification/numeric failure, 2 usage error,
// 3 I/O error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "veca/veca.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct UsageError : veca::Error {
  using Error::Error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(std::string("invalid ") + what + " entry '" + item + "'");
    }
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string("invalid ") + what + " entry '" + item + "'");
    }
  }
  return out;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("VECA_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("VECA_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

// Flags given on the command line win over values from --config.
struct Resolver {
  json resolved;

  explicit Resolver(json defaults) : resolved(std::move(defaults)) {}

  void merge_file(const std::string& path) {
    if (path.empty()) return;
    std::ifstream is(path);
    if (!is) throw veca::IoError("cannot read config file " + path);
    json file;
    try {
      file = json::parse(is);
    } catch (const json::exception& e) {
      throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
    for (auto it = file.begin(); it != file.end(); ++it) {
      if (!resolved.contains(it.key())) throw UsageError("config file " + path + ": unknown key '" + it.key() + "'");
      resolved[it.key()] = it.value();
    }
  }

  template <typename V>
  void flag(CLI::Option* opt, const std::string& key, const V& value) {
    if (opt->count() > 0) resolved[key] = value;
  }
};

std::string config_comment(const json& j) { return "config: " + j.dump(); }

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw veca::IoError("cannot write " + p.string());
  return os;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& suite, bool inject_fault, std::uint64_t seed) {
  veca::VerifyOptions opt{seed, inject_fault};
  const auto results = veca::run_verify_suite(suite, opt);
  std::cout << "# " << config_comment({{"suite", suite}, {"seed", seed}, {"inject_fault", inject_fault}}) << '\n';
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  [" << r.suite << "] " << r.name;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << '\n';
    all = all && r.pass;
  }
  std::cout << (all ? "all properties passed" : "verification FAILED") << '\n';
  return all ? kExitOk : kExitFailed;
}

int cmd_bench_flops(const json& cfg, bool microbench) {
  const auto model = veca::preset(cfg["preset"].get<std::string>());
  const auto res = cfg["resolutions"].get<std::vector<std::size_t>>();
  const auto rows = veca::flop_sweep(model, res, cfg["budget"].get<std::size_t>());
  std::ostringstream os;
  os << "# " << config_comment(cfg) << '\n';
  veca::write_cost_csv(os, rows);
  if (microbench) {
    for (auto r : res) {
      const auto n = veca::patch_count(r, model.patch_size);
      const auto mb = veca::microbench_attention<float>(model.dim, model.heads, n, cfg["budget"].get<std::size_t>(), 1);
      os << "# microbench res=" << r << " core_ms=" << mb.core_ms << " dense_ms=" << mb.dense_ms << '\n';
    }
  }
  const auto out = cfg["out"].get<std::string>();
  if (out.empty()) {
    std::cout << os.str();
  } else {
    auto f = open_out(out);
    f << os.str();
  }
  return kExitOk;
}

int cmd_param_count(const std::string& name) {
  std::cout << "# " << config_comment({{"preset", name.empty() ? "all" : name}}) << '\n' << "preset,params\n";
  const std::vector<std::string> names = name.empty() ? veca::preset_names() : std::vector<std::string>{name};
  for (const auto& n : names) std::cout << n << ',' << veca::param_count(veca::preset(n)) << '\n';
  return kExitOk;
}

veca::DistillConfig distill_config(const json& cfg) {
  veca::DistillConfig d;
  d.lr = cfg["lr"];
  d.min_lr = cfg["min_lr"];
  d.warmup_steps = cfg["warmup_steps"];
  d.total_steps = cfg["steps"];
  d.weight_decay = cfg["weight_decay"];
  d.batch_size = cfg["batch_size"];
  d.resolution = cfg["resolution"];
  d.lambda_dense = cfg["lambda_dense"];
  d.beta_mse = cfg["beta_mse"];
  d.validate();
  return d;
}

int cmd_train_toy(const json& cfg) {
  const fs::path out = cfg["out"].get<std::string>();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw veca::IoError("cannot create output directory " + out.string());

  auto mcfg = veca::preset(cfg["preset"].get<std::string>());
  mcfg.layers = cfg["layers"];
  mcfg.validate();
  const auto dcfg = distill_config(cfg);
  const auto weights = cfg["budget_weights"].get<std::vector<double>>();
  const veca::BudgetDistribution dist(mcfg.budgets, weights);

  auto student = veca::VecaEncoder<double>::init(mcfg, cfg["weight_seed"].get<std::uint64_t>());
  const auto teacher = veca::DenseTeacher<double>::init(mcfg, cfg["teacher_seed"].get<std::uint64_t>());

  veca::BatchSource<double> batches;
  const std::string targets = cfg["targets"];
  if (targets.empty()) {
    batches = veca::synthetic_batches<double>(teacher, dcfg, cfg["data_seed"].get<std::uint64_t>());
  } else {
    auto [images, tgt] = veca::load_targets<double>(targets);
    const std::size_t count = images.dim(0), bs = dcfg.batch_size;
    const auto img_flat = veca::reshape(images, {count, images.size() / count});
    const auto z_flat = veca::reshape(tgt.z_star, {count, tgt.z_star.size() / count});
    batches = [=](std::size_t step) {
      std::vector<veca::Tensor<double>> im, ys, zs;
      for (std::size_t k = 0; k < bs; ++k) {
        const std::size_t i = ((step - 1) * bs + k) % count;
        im.push_back(veca::slice_rows(img_flat, i, 1));
        ys.push_back(veca::slice_rows(tgt.y_star, i, 1));
        zs.push_back(veca::slice_rows(z_flat, i, 1));
      }
      return veca::Batch<double>{
          veca::reshape(veca::concat_rows(im), {bs, images.dim(1), images.dim(2), images.dim(3)}),
          {veca::concat_rows(ys), veca::reshape(veca::concat_rows(zs), {bs, tgt.z_star.dim(1), tgt.z_star.dim(2)})}};
    };
  }

  veca::Rng budget_rng(cfg["budget_seed"].get<std::uint64_t>(), "budget");
  const auto log = veca::train<double>(student, batches, [&] { return dist.sample(budget_rng); }, dcfg);

  // Output paths are not part of the model's identity.
  json embedded = cfg;
  embedded.erase("out");
  veca::save_checkpoint((out / "checkpoint.veca").string(), student, {{"run", embedded}});
  {
    auto f = open_out(out / "train_log.csv");
    log.write_csv(f, config_comment(cfg));
  }
  veca::save_schedule((out / "budgets.txt").string(), log.schedule(), config_comment(cfg));
  {
    auto f = open_out(out / "run_config.json");
    f << cfg.dump(2) << '\n';
  }
  const double early = log.mean_loss(0, std::min<std::size_t>(10, log.records.size()));
  const std::size_t tail = std::min<std::size_t>(10, log.records.size());
  const double late = log.mean_loss(log.records.size() - tail, tail);
  std::cout << "# " << config_comment(cfg) << '\n'
            << "steps=" << log.records.size() << " early_loss=" << early << " final_loss=" << late
            << " checkpoint=" << (out / "checkpoint.veca").string() << '\n';
  return kExitOk;
}

struct EvalSet {
  veca::Tensor<double> images;
  veca::TeacherTargets<double> targets;
};

EvalSet eval_set(const json& cfg, const veca::ModelConfig& mcfg, const json& run) {
  const std::string targets = cfg["targets"];
  if (!targets.empty()) {
    auto [images, tgt] = veca::load_targets<double>(targets);
    return {std::move(images), std::move(tgt)};
  }
  const std::uint64_t teacher_seed = run.value("teacher_seed", cfg["seed"].get<std::uint64_t>());
  const auto teacher = veca::DenseTeacher<double>::init(mcfg, teacher_seed);
  veca::Rng rng(cfg["seed"].get<std::uint64_t>(), "eval");
  const std::size_t res = cfg["resolution"];
  auto images = veca::synthetic_batch<double>(cfg["eval_count"].get<std::size_t>(), res, res, rng);
  auto tgt = teacher(images);
  return {std::move(images), std::move(tgt)};
}

int cmd_eval_budgets(const json& cfg) {
  const auto loaded = veca::load_checkpoint<double>(cfg["checkpoint"].get<std::string>());
  const auto& model = loaded.model;
  const json run = loaded.header.value("run", json::object());
  auto budgets = cfg["budgets"].get<std::vector<std::size_t>>();
  if (budgets.empty()) budgets = model.config.budgets;
  for (auto c : budgets) model.check_budget(c);
  const auto set = eval_set(cfg, model.config, run);
  veca::DistillConfig d;
  d.lambda_dense = run.value("lambda_dense", d.lambda_dense);
  d.beta_mse = run.value("beta_mse", d.beta_mse);
  const auto rows = veca::eval_budgets(model, set.images, set.targets, budgets, d);

  std::ostringstream os;
  os << "# " << config_comment(cfg) << '\n' << "budget,global_loss,dense_loss,total\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.budget, r.global_loss, r.dense_loss, r.total);
    os << buf;
  }
  const std::string out = cfg["out"];
  if (out.empty()) {
    std::cout << os.str();
  } else {
    auto f = open_out(out);
    f << os.str();
  }
  return kExitOk;
}

int cmd_export_maps(const json& cfg) {
  const auto loaded = veca::load_checkpoint<double>(cfg["checkpoint"].get<std::string>());
  const auto& model = loaded.model;
  const std::size_t c = cfg["budget"];
  model.check_budget(c);

  veca::RgbImage img;
  std::string label;
  const std::string image_path = cfg["image"];
  if (!image_path.empty()) {
    img = veca::read_ppm(image_path);
    label = image_path;
  } else {
    const std::size_t res = cfg["resolution"];
    const std::uint64_t id = cfg["synthetic_id"];
    img = veca::synthetic_image_by_id(cfg["seed"].get<std::uint64_t>(), id, res, res);
    label = "synthetic:" + std::to_string(id);
  }
  const auto batch = veca::to_batch<double>({img});
  const auto maps = veca::export_core_maps(model, batch, c, cfg["layers"].get<std::vector<std::size_t>>());

  const fs::path out = cfg["out"].get<std::string>();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw veca::IoError("cannot create output directory " + out.string());
  std::cout << "# " << config_comment(cfg) << '\n';
  for (const auto& m : maps) {
    const fs::path p = out / ("core_map_layer" + std::to_string(m.layer) + ".csv");
    auto f = open_out(p);
    f << "# " << config_comment(cfg) << '\n';
    veca::write_core_map_csv(f, m, label);
    if (!f) throw veca::IoError("failed writing " + p.string());
    std::cout << p.string() << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"veca: core-periphery vision encoder toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config_path, out, preset, res, budget, budget_weights, checkpoint, image, layers, targets, suite = "all";
  std::size_t steps = 500, synthetic_id = 0, eval_count = 16;
  bool inject_fault = false, microbench = false;

  auto add_seed = [&](CLI::App* sc) { return sc->add_option("--seed", seed, "Global seed (default: $VECA_SEED or 0)"); };
  auto add_config = [&](CLI::App* sc) { return sc->add_option("--config", config_path, "JSON file of parameters"); };

  auto* verify = app.add_subcommand("verify", "Run fixed-seed property suites");
  verify->add_option("--suite", suite, "attention, rope, gradients, elastic, diameter or all");
  verify->add_flag("--inject-fault", inject_fault, "Corrupt weights on the checked side (negative control)");
  auto* verify_seed = add_seed(verify);

  auto* bench = app.add_subcommand("bench-flops", "Analytic attention-path FLOPs vs the dense baseline");
  auto* b_preset = bench->add_option("--preset", preset, "Model preset");
  auto* b_res = bench->add_option("--res", res, "Comma-separated resolutions");
  auto* b_budget = bench->add_option("--budget", budget, "Active core budget");
  auto* b_out = bench->add_option("--out", out, "CSV output file (default stdout)");
  bench->add_flag("--microbench", microbench, "Append an optional CPU timing comment");
  auto* b_config = add_config(bench);

  auto* pcount = app.add_subcommand("param-count", "Exact learnable parameter counts");
  pcount->add_option("--preset", preset, "Model preset (default: all)");

  auto* train = app.add_subcommand("train-toy", "Elastic distillation of a small encoder against a synthetic teacher");
  auto* t_preset = train->add_option("--preset", preset, "Model preset");
  auto* t_res = train->add_option("--res", res, "Training resolution");
  auto* t_steps = train->add_option("--steps", steps, "Optimizer steps");
  auto* t_weights = train->add_option("--budget-weights", budget_weights, "Comma-separated sampling weights");
  auto* t_out = train->add_option("--out", out, "Output directory");
  auto* t_targets = train->add_option("--targets", targets, "Precomputed teacher-targets container");
  auto* t_seed = add_seed(train);
  auto* t_config = add_config(train);

  auto* eval = app.add_subcommand("eval-budgets", "Distillation loss of a checkpoint at each budget");
  auto* e_ckpt = eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  auto* e_budget = eval->add_option("--budget", budget, "Comma-separated budgets (default: all)");
  auto* e_res = eval->add_option("--res", res, "Evaluation resolution");
  auto* e_count = eval->add_option("--eval-count", eval_count, "Number of synthetic evaluation images");
  auto* e_targets = eval->add_option("--targets", targets, "Precomputed teacher-targets container");
  auto* e_out = eval->add_option("--out", out, "CSV output file (default stdout)");
  auto* e_seed = add_seed(eval);
  auto* e_config = add_config(eval);

  auto* exportm = app.add_subcommand("export-maps", "Per-layer patch-over-core contribution maps as CSV");
  auto* x_ckpt = exportm->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  auto* x_image = exportm->add_option("--image", image, "Binary PPM image");
  auto* x_sid = exportm->add_option("--synthetic-id", synthetic_id, "Synthetic image id (when no --image)");
  auto* x_budget = exportm->add_option("--budget", budget, "Active core budget");
  auto* x_layers = exportm->add_option("--layers", layers, "Comma-separated layer indices (default: all but 0)");
  auto* x_res = exportm->add_option("--res", res, "Synthetic image resolution");
  auto* x_out = exportm->add_option("--out", out, "Output directory");
  auto* x_seed = add_seed(exportm);
  auto* x_config = add_config(exportm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const std::uint64_t env_seed = default_seed();
    auto seed_or_env = [&](CLI::Option* o) { return o->count() ? seed : env_seed; };

    if (verify->parsed()) return cmd_verify(suite, inject_fault, seed_or_env(verify_seed));

    if (pcount->parsed()) return cmd_param_count(preset);

    if (bench->parsed()) {
      Resolver r({{"preset", "small"}, {"resolutions", {256, 512, 1024}}, {"budget", 64}, {"out", ""}});
      r.merge_file(config_path);
      (void)b_config;
      r.flag(b_preset, "preset", preset);
      if (b_res->count()) r.resolved["resolutions"] = parse_sizes(res, "resolution");
      if (b_budget->count()) r.resolved["budget"] = parse_sizes(budget, "budget").at(0);
      r.flag(b_out, "out", out);
      return cmd_bench_flops(r.resolved, microbench);
    }

    if (train->parsed()) {
      const std::uint64_t s = seed_or_env(t_seed);
      Resolver r({{"preset", "tiny-test"},
                  {"resolution", 64},
                  {"steps", 500},
                  {"warmup_steps", nullptr},
                  {"lr", 4e-3},
                  {"min_lr", 5e-5},
                  {"weight_decay", 0.015},
                  {"batch_size", 4},
                  {"lambda_dense", 1.0},
                  {"beta_mse", 1.0},
                  {"budget_weights", {1, 1, 2, 2, 3, 3, 4, 4}},
                  {"seed", s},
                  {"weight_seed", s},
                  {"data_seed", s},
                  {"budget_seed", s},
                  {"teacher_seed", s},
                  {"layers", 0},
                  {"targets", ""},
                  {"out", "veca_run"}});
      r.merge_file(config_path);
      (void)t_config;
      // An explicit --seed re-derives every stream seed.
      if (t_seed->count())
        for (const char* k : {"seed", "weight_seed", "data_seed", "budget_seed", "teacher_seed"}) r.resolved[k] = s;
      r.flag(t_preset, "preset", preset);
      if (t_res->count()) r.resolved["resolution"] = parse_sizes(res, "resolution").at(0);
      r.flag(t_steps, "steps", steps);
      if (t_weights->count()) r.resolved["budget_weights"] = parse_doubles(budget_weights, "budget weight");
      r.flag(t_out, "out", out);
      r.flag(t_targets, "targets", targets);
      if (r.resolved["warmup_steps"].is_null())
        r.resolved["warmup_steps"] = std::min<std::size_t>(25, r.resolved["steps"].get<std::size_t>());
      if (r.resolved["layers"] == 0) r.resolved["layers"] = veca::preset(r.resolved["preset"].get<std::string>()).layers;
      return cmd_train_toy(r.resolved);
    }

    if (eval->parsed()) {
      Resolver r({{"checkpoint", ""}, {"budgets", json::array()}, {"resolution", 64}, {"eval_count", 16},
                  {"seed", seed_or_env(e_seed)}, {"targets", ""}, {"out", ""}});
      r.merge_file(config_path);
      (void)e_config;
      r.flag(e_ckpt, "checkpoint", checkpoint);
      if (e_budget->count()) r.resolved["budgets"] = parse_sizes(budget, "budget");
      if (e_res->count()) r.resolved["resolution"] = parse_sizes(res, "resolution").at(0);
      r.flag(e_count, "eval_count", eval_count);
      r.flag(e_targets, "targets", targets);
      r.flag(e_out, "out", out);
      if (e_seed->count()) r.resolved["seed"] = seed;
      return cmd_eval_budgets(r.resolved);
    }

    if (exportm->parsed()) {
      Resolver r({{"checkpoint", ""}, {"image", ""}, {"synthetic_id", 0}, {"budget", 64}, {"layers", json::array()},
                  {"resolution", 64}, {"seed", seed_or_env(x_seed)}, {"out", "veca_maps"}});
      r.merge_file(config_path);
      (void)x_config;
      r.flag(x_ckpt, "checkpoint", checkpoint);
      r.flag(x_image, "image", image);
      r.flag(x_sid, "synthetic_id", synthetic_id);
      if (x_budget->count()) r.resolved["budget"] = parse_sizes(budget, "budget").at(0);
      if (x_layers->count()) r.resolved["layers"] = parse_sizes(layers, "layer");
      if (x_res->count()) r.resolved["resolution"] = parse_sizes(res, "resolution").at(0);
      r.flag(x_out, "out", out);
      if (x_seed->count()) r.resolved["seed"] = seed;
      return cmd_export_maps(r.resolved);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const veca::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const veca::FormatError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const veca::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitFailed;
  } catch (const veca::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "usage error: bad configuration value: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitUsage;
}
