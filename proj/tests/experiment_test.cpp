#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "flux/experiment.hpp"

using namespace flux;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const char* leaf) {
  fs::path p = fs::temp_directory_path() / leaf;
  fs::remove_all(p);
  return p.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("overrides parse JSON values and fall back to strings") {
  Json cfg = default_config();

  apply_override(cfg, "train.steps=200");
  CHECK(cfg["train"]["steps"] == 200);
  CHECK(cfg["train"]["steps"].is_number_integer());

  apply_override(cfg, "train.lr_max=0.5");
  CHECK(cfg["train"]["lr_max"] == 0.5);

  apply_override(cfg, "mode=eval");
  CHECK(cfg["mode"] == "eval");  // bare word, not valid JSON, kept as string

  apply_override(cfg, "eval.counts=[8,16]");
  CHECK(cfg["eval"]["counts"] == Json::array({8, 16}));

  apply_override(cfg, "paths.data_dir=/tmp/x=y");
  CHECK(cfg["paths"]["data_dir"] == "/tmp/x=y");  // split on the first '='

  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"),
                  std::invalid_argument);
}

TEST_CASE("unknown keys are rejected by name") {
  Json cfg = default_config();
  cfg["train"]["stepz"] = 10;
  cfg["bogus_section"] = Json::object();
  try {
    validate_config(cfg);
    FAIL("expected validation to fail");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("stepz") != std::string::npos);
    CHECK(msg.find("bogus_section") != std::string::npos);
  }
}

TEST_CASE("the default config validates for self-contained modes") {
  for (const char* mode : {"gen-data", "pretrain", "finetune", "flops",
                           "grad-check", "tokenopt"}) {
    Json cfg = default_config();
    cfg["mode"] = mode;
    if (std::string(mode) == "tokenopt" || std::string(mode) == "eval")
      cfg["paths"]["checkpoint_in"] = "somewhere";
    CHECK_NOTHROW(validate_config(cfg));
  }

  Json cfg = default_config();
  cfg["mode"] = "eval";
  CHECK_THROWS_AS(validate_config(cfg), std::invalid_argument);  // no checkpoint
  cfg["mode"] = "transcend";
  CHECK_THROWS_AS(validate_config(cfg), std::invalid_argument);
}

TEST_CASE("the config hash is stable and value-sensitive") {
  Json a = default_config();
  Json b = default_config();
  CHECK(config_hash(a) == config_hash(b));
  apply_override(b, "seed=123456");
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 16);  // fixed-width hex
}

TEST_CASE("run_experiment maps validation errors to exit code 1") {
  Json cfg;
  cfg["mode"] = "eval";  // eval without checkpoint_in
  cfg["paths"] = {{"out_dir", tmp_dir("exp_invalid")}};
  CHECK(run_experiment(cfg) == 1);

  Json bad;
  bad["train"] = {{"no_such_key", 1}};
  bad["paths"] = {{"out_dir", tmp_dir("exp_invalid2")}};
  CHECK(run_experiment(bad) == 1);
}

TEST_CASE("run_experiment writes a manifest and resolved config") {
  std::string out = tmp_dir("exp_flops");
  Json cfg;
  cfg["mode"] = "flops";
  cfg["paths"] = {{"out_dir", out}};
  std::string used;
  REQUIRE(run_experiment(cfg, &used) == 0);
  CHECK(used == out);

  Json manifest = Json::parse(slurp(fs::path(out) / "manifest.json"));
  CHECK(manifest["mode"] == "flops");
  CHECK(manifest.contains("seed"));
  CHECK(manifest.contains("config_hash"));

  Json resolved = Json::parse(slurp(fs::path(out) / "config.resolved.json"));
  CHECK(resolved["mode"] == "flops");
  CHECK(resolved.contains("train"));  // defaults merged in
  CHECK(config_hash(resolved) == manifest["config_hash"]);

  Json report = Json::parse(slurp(fs::path(out) / "flops.json"));
  CHECK(report["n_tokens"] == cfg.value("/flops/tokens"_json_pointer,
                                        resolved["flops"]["tokens"].get<int>()));
}

TEST_CASE("flops output is byte-identical across reruns") {
  std::string o1 = tmp_dir("exp_rerun_a");
  std::string o2 = tmp_dir("exp_rerun_b");
  for (const std::string& out : {o1, o2}) {
    Json cfg;
    cfg["mode"] = "flops";
    cfg["paths"] = {{"out_dir", out}};
    REQUIRE(run_experiment(cfg) == 0);
  }
  CHECK(slurp(fs::path(o1) / "flops.json") == slurp(fs::path(o2) / "flops.json"));
  // resolved configs match apart from the differing output directories
  Json r1 = Json::parse(slurp(fs::path(o1) / "config.resolved.json"));
  Json r2 = Json::parse(slurp(fs::path(o2) / "config.resolved.json"));
  r1["paths"].erase("out_dir");
  r2["paths"].erase("out_dir");
  CHECK(r1 == r2);
}

TEST_CASE("load_config round-trips through a file and rejects bad paths") {
  fs::path p = fs::temp_directory_path() / "exp_cfg.json";
  {
    std::ofstream f(p);
    f << R"({"mode": "flops", "seed": 9})" << "\n";
  }
  Json cfg = load_config(p.string());
  CHECK(cfg["mode"] == "flops");
  CHECK(cfg["seed"] == 9);
  CHECK_THROWS(load_config((fs::temp_directory_path() / "nope.json").string()));
}
