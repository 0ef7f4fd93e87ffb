#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flux/experiment.hpp"
#include "flux/train.hpp"

namespace {

void on_sigint(int) { flux::stop_requested.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flux: deterministic video-transformer training sandbox"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  long seed = -1;
  app.add_option("-c,--config", config_path, "JSON config file");
  app.add_option("-s,--set", overrides, "dotted override, e.g. train.steps=50");
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--seed", seed, "global seed");

  long d_model = -1, depth = -1, tokens = -1;
  std::vector<long> counts;
  app.add_option("--d-model", d_model, "model width");
  app.add_option("--depth", depth, "transformer depth");
  app.add_option("--tokens", tokens, "token count for flops / budget");
  app.add_option("--counts", counts, "student token counts k1 k2 k3")
      ->expected(3);

  const std::vector<std::pair<std::string, std::string>> modes = {
      {"gen-data", "write a synthetic video dataset"},
      {"pretrain", "teacher-student token alignment"},
      {"finetune", "multi-count supervised training"},
      {"eval", "accuracy of a checkpoint at several token counts"},
      {"tokenopt", "budgeted frame/resolution search"},
      {"flops", "analytic cost model"},
      {"grad-check", "finite-difference gradient audit"},
  };
  for (const auto& [name, desc] : modes)
    app.add_subcommand(name, desc)->fallthrough();

  CLI11_PARSE(app, argc, argv);

  flux::Json cfg = flux::Json::object();
  try {
    if (!config_path.empty()) cfg = flux::load_config(config_path);
    cfg["mode"] = app.get_subcommands().front()->get_name();
    for (const auto& kv : overrides) flux::apply_override(cfg, kv);
    if (seed >= 0) cfg["seed"] = seed;
    if (!out_dir.empty()) cfg["paths"]["out_dir"] = out_dir;
    if (d_model > 0) cfg["model"]["d_model"] = d_model;
    if (depth > 0) cfg["model"]["depth"] = depth;
    if (tokens > 0) {
      cfg["flops"]["tokens"] = tokens;
      cfg["tokenopt"]["k_budget"] = tokens;
    }
    if (!counts.empty()) {
      cfg["train"]["k1"] = counts[0];
      cfg["train"]["k2"] = counts[1];
      cfg["train"]["k3"] = counts[2];
    }
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  }

  std::signal(SIGINT, on_sigint);
  return flux::run_experiment(cfg);
}
