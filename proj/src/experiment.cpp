#include "flux/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "flux/checkpoint.hpp"
#include "flux/gradcheck.hpp"
#include "flux/rng.hpp"
#include "flux/train.hpp"

namespace flux {

namespace fs = std::filesystem;

Json default_config() {
  return Json{
      {"seed", 0},
      {"mode", "finetune"},
      {"paths",
       {{"data_dir", ""}, {"checkpoint_in", ""}, {"checkpoint_out", ""},
        {"out_dir", ""}}},
      {"sampler",
       {{"f_min", 4}, {"f_max", 16}, {"t_step", 2}, {"r_min", 28},
        {"r_max", 56}, {"r_step", 14}, {"pool_min", 64}, {"pool_max", 256},
        {"patch_t", 1}, {"patch_h", 14}, {"patch_w", 14}}},
      {"model",
       {{"d_model", 64}, {"heads", 4}, {"depth", 4}, {"mlp_ratio", 4},
        {"pe_t", 16}, {"pe_h", 4}, {"pe_w", 4}, {"dw_kernel", 3},
        {"num_classes", 4}, {"proj_dim", 64}, {"use_lpe", true},
        {"use_dw", true}, {"use_pre_ln", true}}},
      {"teacher",
       {{"d_model", 128}, {"heads", 4}, {"depth", 4}, {"mlp_ratio", 4},
        {"pretrain_steps", 0}}},
      {"train",
       {{"steps", 300}, {"batch_size", 4}, {"lr", 1e-3}, {"warmup_frac", 0.1},
        {"weight_decay", 0.05}, {"beta1", 0.9}, {"beta2", 0.98},
        {"k1", 64}, {"k2", 32}, {"k3", 16}, {"k_teacher", 64}, {"groups", 4},
        {"norm_p", 2}, {"sl1_beta", 1.0}, {"lambda", 1.0}, {"eval_every", 50},
        {"raw_patch_scores", false}}},
      {"gen",
       {{"num_classes", 4}, {"frames", 16}, {"height", 56}, {"width", 56},
        {"channels", 3}, {"sprites_min", 1}, {"sprites_max", 3},
        {"sprite_size_min", 8}, {"sprite_size_max", 14}, {"speed_min", 1.0},
        {"speed_max", 4.0}, {"noise_amplitude", 0.1}, {"semantics", "motion"}}},
      {"data", {{"train_count", 64}, {"eval_count", 64}}},
      {"eval", {{"counts", Json::array({16, 32, 64})}}},
      {"tokenopt",
       {{"k_budget", 64}, {"plateau_eps", 0.002}, {"eval_count", 16}}},
      {"flops", {{"tokens", 2048}}},
      {"gradcheck",
       {{"eps", 1e-5}, {"d_model", 32}, {"heads", 2}, {"depth", 2},
        {"grid_t", 10}, {"grid_h", 2}, {"grid_w", 2}}},
  };
}

Json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  return Json::parse(f);
}

void apply_override(Json& cfg, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key=value, got '" + kv + "'");
  std::string key = kv.substr(0, eq);
  std::string value = kv.substr(eq + 1);
  Json* node = &cfg;
  std::size_t pos = 0;
  for (;;) {
    auto dot = key.find('.', pos);
    std::string part = key.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      Json parsed;
      try {
        parsed = Json::parse(value);
      } catch (...) {
        parsed = value;  // bare string
      }
      (*node)[part] = parsed;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

namespace {

const std::map<std::string, std::vector<std::string>>& schema() {
  static const std::map<std::string, std::vector<std::string>> s = {
      {"", {"seed", "mode", "paths", "sampler", "model", "teacher", "train",
            "gen", "data", "eval", "tokenopt", "flops", "gradcheck"}},
      {"paths", {"data_dir", "checkpoint_in", "checkpoint_out", "out_dir"}},
      {"sampler",
       {"f_min", "f_max", "t_step", "r_min", "r_max", "r_step", "pool_min",
        "pool_max", "patch_t", "patch_h", "patch_w"}},
      {"model",
       {"d_model", "heads", "depth", "mlp_ratio", "pe_t", "pe_h", "pe_w",
        "dw_kernel", "num_classes", "proj_dim", "use_lpe", "use_dw",
        "use_pre_ln"}},
      {"teacher", {"d_model", "heads", "depth", "mlp_ratio", "pretrain_steps"}},
      {"train",
       {"steps", "batch_size", "lr", "warmup_frac", "weight_decay", "beta1",
        "beta2", "k1", "k2", "k3", "k_teacher", "groups", "norm_p", "sl1_beta",
        "lambda", "eval_every", "raw_patch_scores"}},
      {"gen",
       {"num_classes", "frames", "height", "width", "channels", "sprites_min",
        "sprites_max", "sprite_size_min", "sprite_size_max", "speed_min",
        "speed_max", "noise_amplitude", "semantics"}},
      {"data", {"train_count", "eval_count"}},
      {"eval", {"counts"}},
      {"tokenopt", {"k_budget", "plateau_eps", "eval_count"}},
      {"flops", {"tokens"}},
      {"gradcheck",
       {"eps", "d_model", "heads", "depth", "grid_t", "grid_h", "grid_w"}},
  };
  return s;
}

SamplerConfig sampler_from(const Json& j) {
  SamplerConfig c;
  c.f_min = j["f_min"];
  c.f_max = j["f_max"];
  c.t_step = j["t_step"];
  c.r_min = j["r_min"];
  c.r_max = j["r_max"];
  c.r_step = j["r_step"];
  c.pool_min = j["pool_min"];
  c.pool_max = j["pool_max"];
  c.patch_t = j["patch_t"];
  c.patch_h = j["patch_h"];
  c.patch_w = j["patch_w"];
  return c;
}

FluxViTConfig model_from(const Json& cfg, bool teacher) {
  const Json& j = teacher ? cfg["teacher"] : cfg["model"];
  const Json& m = cfg["model"];
  FluxViTConfig c;
  c.d_model = j["d_model"];
  c.heads = j.contains("heads") ? Index(j["heads"]) : Index(m["heads"]);
  c.depth = j["depth"];
  c.mlp_ratio = j.contains("mlp_ratio") ? Index(j["mlp_ratio"])
                                        : Index(m["mlp_ratio"]);
  c.pe_t = m["pe_t"];
  c.pe_h = m["pe_h"];
  c.pe_w = m["pe_w"];
  c.dw_kernel = m["dw_kernel"];
  c.num_classes = m["num_classes"];
  c.proj_dim = m["proj_dim"];
  c.use_lpe = m["use_lpe"];
  c.use_dw = m["use_dw"];
  c.use_pre_ln = m["use_pre_ln"];
  const Json& s = cfg["sampler"];
  c.patch_t = s["patch_t"];
  c.patch_h = s["patch_h"];
  c.patch_w = s["patch_w"];
  c.channels = cfg["gen"]["channels"];
  if (teacher) c.proj_dim = c.d_model;  // teacher never projects
  return c;
}

TrainConfig train_from(const Json& cfg) {
  const Json& j = cfg["train"];
  TrainConfig c;
  c.steps = j["steps"];
  c.batch_size = j["batch_size"];
  c.lr = j["lr"];
  c.warmup_frac = j["warmup_frac"];
  c.weight_decay = j["weight_decay"];
  c.beta1 = j["beta1"];
  c.beta2 = j["beta2"];
  c.k1 = j["k1"];
  c.k2 = j["k2"];
  c.k3 = j["k3"];
  c.k_teacher = j["k_teacher"];
  c.groups = j["groups"];
  c.norm_p = j["norm_p"];
  c.sl1_beta = j["sl1_beta"];
  c.lambda_sd = j["lambda"];
  c.eval_every = j["eval_every"];
  c.raw_patch_scores = j["raw_patch_scores"];
  c.seed = cfg["seed"];
  return c;
}

GenSpec gen_from(const Json& cfg) {
  const Json& j = cfg["gen"];
  GenSpec g;
  g.num_classes = j["num_classes"];
  g.frames = j["frames"];
  g.height = j["height"];
  g.width = j["width"];
  g.channels = j["channels"];
  g.sprites_min = j["sprites_min"];
  g.sprites_max = j["sprites_max"];
  g.sprite_size_min = j["sprite_size_min"];
  g.sprite_size_max = j["sprite_size_max"];
  g.speed_min = j["speed_min"];
  g.speed_max = j["speed_max"];
  g.noise_amplitude = j["noise_amplitude"];
  std::string sem = j["semantics"];
  if (sem == "motion")
    g.semantics = GenSpec::Semantics::kMotionDirection;
  else if (sem == "texture")
    g.semantics = GenSpec::Semantics::kTexture;
  else
    throw std::invalid_argument("gen.semantics must be motion or texture");
  return g;
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  f << content;
}

std::string timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", std::localtime(&t));
  return buf;
}

}  // namespace

void validate_config(const Json& cfg) {
  std::vector<std::string> unknown;
  const auto& sch = schema();
  auto check = [&](const Json& node, const std::string& section) {
    auto it = sch.find(section);
    if (it == sch.end()) return;
    for (auto& [key, val] : node.items()) {
      bool ok = false;
      for (const auto& k : it->second)
        if (k == key) ok = true;
      if (!ok) unknown.push_back(section.empty() ? key : section + "." + key);
    }
  };
  check(cfg, "");
  for (auto& [key, val] : cfg.items())
    if (val.is_object()) check(val, key);
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
  const std::string mode = cfg["mode"];
  if (mode != "gen-data" && mode != "pretrain" && mode != "finetune" &&
      mode != "eval" && mode != "tokenopt" && mode != "flops" &&
      mode != "grad-check")
    throw std::invalid_argument("config: unknown mode '" + mode + "'");

  sampler_from(cfg["sampler"]).validate();
  model_from(cfg, false).validate();
  gen_from(cfg).validate();
  if (mode == "pretrain" || mode == "finetune") train_from(cfg).validate();

  // the PE table must cover every candidate grid
  SamplerConfig sc = sampler_from(cfg["sampler"]);
  FluxViTConfig mc = model_from(cfg, false);
  for (const auto& g : candidates(sc))
    if (g.gt > mc.pe_t || g.gh > mc.pe_h || g.gw > mc.pe_w)
      throw std::invalid_argument(
          "config: candidate grid " + std::to_string(g.gt) + "x" +
          std::to_string(g.gh) + "x" + std::to_string(g.gw) +
          " exceeds model PE grid");
  if (mode == "eval" || mode == "tokenopt")
    if (cfg["paths"]["checkpoint_in"].get<std::string>().empty())
      throw std::invalid_argument("config: mode '" + mode +
                                  "' requires paths.checkpoint_in");
}

std::string config_hash(const Json& cfg) {
  std::string dump = cfg.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : dump) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace {

int run_validated(const Json& cfg, const fs::path& out_dir) {
  const std::string mode = cfg["mode"];
  const std::uint64_t seed = cfg["seed"];
  SamplerConfig sampler = sampler_from(cfg["sampler"]);
  FluxViTConfig model_cfg = model_from(cfg, false);
  GenSpec gen = gen_from(cfg);

  if (mode == "flops") {
    FlopReport r = flops(model_cfg, cfg["flops"]["tokens"].get<std::int64_t>());
    std::cout << r.to_json() << "\n";
    write_file(out_dir / "flops.json", r.to_json() + "\n");
    return 0;
  }

  if (mode == "grad-check") {
    const Json& gc = cfg["gradcheck"];
    FluxViTConfig c = model_cfg;
    c.d_model = gc["d_model"].get<Index>();
    c.heads = gc["heads"].get<Index>();
    c.depth = gc["depth"].get<Index>();
    c.pe_t = gc["grid_t"].get<Index>();
    c.pe_h = gc["grid_h"].get<Index>();
    c.pe_w = gc["grid_w"].get<Index>();
    c.proj_dim = c.d_model;
    c.validate();
    FluxViTParams p = init_params(c, seed);
    // flow gradients through head and LPE paths
    Rng rng(derive_seed(seed, "gradcheck-jitter"));
    for (auto* t : {&p.w_head, &p.b_head})
      for (Index i = 0; i < t->size(); ++i) t->value()[i] = rng.normal() * 0.05;
    for (auto& b : p.blocks)
      for (auto& w : b.w_lpe)
        for (Index i = 0; i < w.size(); ++i) w.value()[i] = rng.normal() * 0.05;

    SamplingGrid grid;
    grid.gt = static_cast<int>(c.pe_t);
    grid.gh = static_cast<int>(c.pe_h);
    grid.gw = static_cast<int>(c.pe_w);
    grid.frames = grid.gt * static_cast<int>(c.patch_t);
    grid.resolution = grid.gh * static_cast<int>(c.patch_h);
    TokenPool pool;
    pool.grid = grid;
    pool.channels = static_cast<int>(c.channels);
    pool.features.resize(grid.pool(), c.c_patch());
    for (Index r = 0; r < pool.features.rows(); ++r)
      for (Index cc = 0; cc < pool.features.cols(); ++cc)
        pool.features(r, cc) = rng.uniform();
    pool.coords.resize(static_cast<std::size_t>(grid.pool()));
    std::size_t i = 0;
    for (int t = 0; t < grid.gt; ++t)
      for (int h = 0; h < grid.gh; ++h)
        for (int w = 0; w < grid.gw; ++w) pool.coords[i++] = {t, h, w};
    SelectionMask full;
    full.indices.resize(static_cast<std::size_t>(grid.pool()));
    std::iota(full.indices.begin(), full.indices.end(), 0);
    full.group_of.assign(full.indices.size(), 0);
    full.quota = {grid.pool()};

    std::vector<Index> label = {0};
    auto loss_fn = [&]() {
      return cross_entropy(forward(p, c, pool, full).logits, label);
    };
    double err = grad_check<double>(loss_fn, p.tensors(),
                                    cfg["gradcheck"]["eps"].get<double>());
    Json out = {{"max_relative_error", err}};
    std::cout << out.dump() << "\n";
    write_file(out_dir / "gradcheck.json", out.dump() + "\n");
    return 0;
  }

  if (mode == "gen-data") {
    std::string data_dir = cfg["paths"]["data_dir"];
    if (data_dir.empty()) data_dir = (out_dir / "data").string();
    auto data = gen_dataset(derive_seed(seed, "train-data"), gen,
                            cfg["data"]["train_count"].get<int>());
    export_dataset(data, gen, data_dir);
    std::cout << "wrote " << data.size() << " samples to " << data_dir << "\n";
    return 0;
  }

  TrainConfig tc = train_from(cfg);
  auto eval_data = gen_dataset(derive_seed(seed, "eval-data"), gen,
                               cfg["data"]["eval_count"].get<int>());

  if (mode == "eval") {
    FluxViTParams p = init_params(model_cfg, 0);
    load_checkpoint(p.named(), cfg["paths"]["checkpoint_in"]);
    std::ostringstream csv;
    csv << "count,accuracy\n";
    csv.precision(17);
    for (const auto& kj : cfg["eval"]["counts"]) {
      Index k = kj.get<Index>();
      csv << k << "," << eval_accuracy(p, model_cfg, sampler, tc, eval_data, k)
          << "\n";
    }
    write_file(out_dir / "eval.csv", csv.str());
    std::cout << csv.str();
    return 0;
  }

  if (mode == "tokenopt") {
    FluxViTParams p = init_params(model_cfg, 0);
    load_checkpoint(p.named(), cfg["paths"]["checkpoint_in"]);
    const std::int64_t budget = cfg["tokenopt"]["k_budget"];
    int subset = cfg["tokenopt"]["eval_count"];
    subset = std::min<int>(subset, static_cast<int>(eval_data.size()));
    Evaluator ev = [&](int frames, int resolution) {
      SamplingGrid grid = make_grid(frames, resolution, sampler);
      NoGradGuard ng;
      int correct = 0;
      for (int i = 0; i < subset; ++i) {
        TokenPool pool = patchify(eval_data[static_cast<std::size_t>(i)], grid,
                                  sampler);
        DynamicScores sc =
            pool_scores(p, model_cfg, pool, tc.norm_p, tc.raw_patch_scores);
        SelectionMask mask = select_group_dynamic(sc, pool.coords, pool.grid,
                                                  budget, tc.groups);
        ForwardResult r = forward(p, model_cfg, pool, mask);
        Index best = 0;
        for (Index c = 1; c < model_cfg.num_classes; ++c)
          if (r.logits.value()[c] > r.logits.value()[best]) best = c;
        if (best == eval_data[static_cast<std::size_t>(i)].label) ++correct;
      }
      return static_cast<double>(correct) / subset;
    };
    BudgetPlan plan = heuristic_search(
        ev, budget, sampler, cfg["tokenopt"]["plateau_eps"].get<double>());
    std::string csv = plan.to_csv(flops(model_cfg, budget).total);
    write_file(out_dir / "tokenopt.csv", csv);
    std::cout << "chosen F=" << plan.chosen_frames
              << " R=" << plan.chosen_resolution
              << " score=" << plan.chosen_score << "\n";
    return 0;
  }

  // pretrain / finetune
  auto train_data = gen_dataset(derive_seed(seed, "train-data"), gen,
                                cfg["data"]["train_count"].get<int>());
  FluxViTConfig t_cfg = model_from(cfg, true);
  if (mode == "pretrain") model_cfg.proj_dim = t_cfg.d_model;
  FluxViTParams params = init_params(model_cfg, derive_seed(seed, "student"));
  if (!cfg["paths"]["checkpoint_in"].get<std::string>().empty())
    load_checkpoint(params.named(), cfg["paths"]["checkpoint_in"]);

  TrainResult result;
  if (mode == "finetune") {
    result = train(TrainMode::kFinetune, params, model_cfg, nullptr, nullptr,
                   sampler, tc, train_data, eval_data);
  } else {
    FluxViTParams teacher = init_params(t_cfg, derive_seed(seed, "teacher"));
    int pre_steps = cfg["teacher"]["pretrain_steps"];
    if (pre_steps > 0) {
      TrainConfig ttc = tc;
      ttc.steps = pre_steps;
      ttc.k1 = ttc.k2 = ttc.k3 = tc.k_teacher;
      ttc.lambda_sd = 0.0;
      ttc.seed = derive_seed(seed, "teacher-pretrain");
      train(TrainMode::kFinetune, teacher, t_cfg, nullptr, nullptr, sampler,
            ttc, train_data, eval_data);
    }
    teacher.set_requires_grad(false);
    result = train(TrainMode::kPretrain, params, model_cfg, &teacher, &t_cfg,
                   sampler, tc, train_data, eval_data);
  }

  write_file(out_dir / "metrics.csv", metrics_to_csv(result.log));
  write_file(out_dir / "metrics.jsonl",
             metrics_to_jsonl(result.log, seed, config_hash(cfg)));
  std::string ckpt = cfg["paths"]["checkpoint_out"];
  if (ckpt.empty()) ckpt = (out_dir / "checkpoint").string();
  save_checkpoint(params.named(), ckpt);
  if (result.aborted) {
    std::cerr << "training aborted on non-finite loss; last good checkpoint "
                 "written to " << ckpt << "\n";
    return 2;
  }
  std::cout << "done; metrics and checkpoint under " << out_dir << "\n";
  return 0;
}

}  // namespace

int run_experiment(Json cfg, std::string* out_dir_used) {
  Json full = default_config();
  full.merge_patch(cfg);
  try {
    validate_config(full);
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  }
  try {
    std::string hash = config_hash(full);
    std::string out = full["paths"]["out_dir"];
    fs::path out_dir =
        out.empty() ? fs::path("runs") / (timestamp() + "_" + hash.substr(0, 8))
                    : fs::path(out);
    fs::create_directories(out_dir);
    if (out_dir_used) *out_dir_used = out_dir.string();
    write_file(out_dir / "config.resolved.json", full.dump(2) + "\n");
    Json manifest = {{"seed", full["seed"]},
                     {"config_hash", hash},
                     {"mode", full["mode"]},
                     {"version", "0.1.0"}};
    const char* threads = std::getenv("FLUX_NUM_THREADS");
    manifest["num_threads"] = threads ? std::atoi(threads) : 1;
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return run_validated(full, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace flux
