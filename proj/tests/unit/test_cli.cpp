#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "bimanual/checkpoint.hpp"
#include "bimanual/cli.hpp"
#include "bimanual/dataset_io.hpp"
#include "bimanual/report.hpp"
#include "doctest.h"

using namespace bimanual;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bimanual_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTiny = R"({"denoiser":{"layers":1,"latent_dim":32,"heads":2,"ff_dim":64},
                        "train":{"epochs":1,"batch_size":8}})";

}  // namespace

TEST_CASE("gen-data is deterministic and honours flags") {
  const fs::path d = scratch("gen");
  const std::string a = (d / "a").string(), b = (d / "b").string(), c = (d / "c").string();
  REQUIRE(run({"gen-data", "--count", "5", "--seed", "3", "--out", a}).code == 0);
  REQUIRE(run({"gen-data", "--count", "5", "--seed", "3", "--out", b}).code == 0);
  CHECK(read_file(a + "/data.jsonl") == read_file(b + "/data.jsonl"));
  REQUIRE(run({"gen-data", "--count", "4", "--seed", "3", "--tier", "kp2d_only", "--domain", "held-out-domain",
               "--format", "bin", "--out", c})
              .code == 0);
  const auto recs = read_dataset(c + "/data.bin");
  REQUIRE(recs.size() == 4);
  for (const auto& r : recs) {
    CHECK(r.tier == Tier::Kp2dOnly);
    CHECK(r.domain == Domain::HeldOut);
  }
  const json m = json::parse(read_file(a + "/manifest.json"));
  CHECK(m["command"] == "gen-data");
  CHECK(m["config"]["generator"]["seed"] == 3);
  CHECK(m["metrics"]["records"] == 5);
  CHECK(m["outputs"].size() == 2);
  CHECK(json::parse(read_file(a + "/metrics.json")) == m["metrics"]);
}

TEST_CASE("usage errors exit 2 and runtime errors exit 1 with a JSON line") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  const Run bad = run({"gen-data", "--count", "2", "--bogus"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("--bogus") != std::string::npos);
  CHECK(run({"gen-data", "--scale", "galactic", "--out", "x"}).code == 2);
  CHECK(run({"baseline", "--kind", "magic", "--data", "x"}).code == 2);
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("train-lift") != std::string::npos);

  const fs::path d = scratch("errors");
  const std::string cfg = (d / "cfg.json").string();
  write_file(cfg, R"({"frames": 3})");
  const Run r = run({"gen-data", "--config", cfg, "--out", (d / "o").string()});
  CHECK(r.code == 1);
  const json e = json::parse(r.err);
  CHECK(e["command"] == "gen-data");
  CHECK(e["error"].get<std::string>().find("frames") != std::string::npos);
  CHECK(run({"gen-data", "--count", "1"}).code == 1);
}

TEST_CASE("pipeline commands chain and replay from manifests") {
  const fs::path d = scratch("chain");
  const auto p = [&](const std::string& s) { return (d / s).string(); };
  write_file(p("tiny.json"), kTiny);
  write_file(p("eval.json"), std::string(R"({"sample":{"stride":25},"refine":{"iters":5}})"));
  REQUIRE(run({"gen-data", "--count", "8", "--seed", "1", "--out", p("train")}).code == 0);
  REQUIRE(run({"gen-data", "--count", "3", "--seed", "2", "--tier", "kp2d_only", "--out", p("raw")}).code == 0);
  REQUIRE(run({"train-lift", "--data", p("train/data.jsonl"), "--config", p("tiny.json"), "--condition", "plucker",
               "--out", p("lift")})
              .code == 0);
  const json lm = json::parse(read_file(p("lift/manifest.json")));
  CHECK(lm["config"]["denoiser"]["lift_condition"] == "plucker");
  CHECK(fs::exists(p("lift/train_log.jsonl")));

  const Run ev = run({"eval-lift", "--model", p("lift/model.ckpt"), "--data", p("train/data.jsonl"), "--config",
                      p("eval.json"), "--refine", "--out", p("eval")});
  REQUIRE(ev.code == 0);
  const json em = json::parse(read_file(p("eval/metrics.json")));
  CHECK(em["method"] == "lift/plucker");
  CHECK(em.contains("refined"));
  CHECK(run({"eval-lift", "--model", p("lift/model.ckpt"), "--data", p("train/data.jsonl"), "--condition", "none",
             "--out", p("eval2")})
            .code == 1);

  write_file(p("imp.json"), std::string(R"({"impute":{"refine":{"iters":5},"sample_stride":25}})"));
  REQUIRE(run({"impute", "--model", p("lift/model.ckpt"), "--data", p("raw/data.jsonl"), "--config", p("imp.json"),
               "--out", p("imp")})
              .code == 0);
  const auto imputed = read_dataset(p("imp/imputed.jsonl"));
  CHECK(imputed.size() == 3);
  CHECK(imputed[0].tier == Tier::Imputed);

  REQUIRE(run({"train-forecast", "--data", p("train/data.jsonl"), "--data", p("imp/imputed.jsonl"), "--supervision",
               "3d_plus_2d", "--config", p("tiny.json"), "--out", p("fc")})
              .code == 0);
  CHECK(json::parse(read_file(p("fc/metrics.json")))["records"] == 11);
  write_file(p("fe.json"), std::string(R"({"sample":{"stride":25}})"));
  REQUIRE(run({"eval-forecast", "--model", p("fc/model.ckpt"), "--data", p("train/data.jsonl"), "--k", "2", "--config",
               p("fe.json"), "--label", "ours", "--out", p("fe")})
              .code == 0);
  const json fm = json::parse(read_file(p("fe/metrics.json")));
  CHECK(fm.contains("diversity"));
  CHECK(fm.contains("multimodality"));

  write_file(p("bl.json"), std::string(R"({"denoiser":{"layers":1,"latent_dim":32,"heads":2,"ff_dim":64},
                                         "train":{"epochs":1,"batch_size":8},"hidden":16})"));
  REQUIRE(run({"baseline", "--kind", "static", "--train-data", p("train/data.jsonl"), "--data", p("train/data.jsonl"),
               "--config", p("bl.json"), "--out", p("bs")})
              .code == 0);
  REQUIRE(run({"baseline", "--kind", "static", "--oracle", "--data", p("train/data.jsonl"), "--out", p("bo")}).code == 0);
  CHECK(json::parse(read_file(p("bo/metrics.json")))["fa_mpjpe_curve"][0].get<double>() < 1e-6);

  REQUIRE(run({"report", "--manifests", p("fe/manifest.json"), p("bs/manifest.json"), p("eval/manifest.json"), "--out",
               p("rep")})
              .code == 0);
  const std::string csv = read_file(p("rep/table.csv"));
  CHECK(csv.rfind("method,command,records,mpjpe", 0) == 0);
  CHECK(csv.find("\r\nours,eval-forecast,") != std::string::npos);
  CHECK(csv.find("NA") != std::string::npos);
  CHECK(read_file(p("rep/mpjpe_curve.svg")).find("<svg") == 0);

  // Replays reproduce metrics byte for byte.
  REQUIRE(run({"--from-manifest", p("fe/manifest.json"), "--out", p("fe_replay")}).code == 0);
  CHECK(read_file(p("fe/metrics.json")) == read_file(p("fe_replay/metrics.json")));
  REQUIRE(run({"--from-manifest", p("lift/manifest.json"), "--out", p("lift_replay")}).code == 0);
  CHECK(read_file(p("lift/model.ckpt")) == read_file(p("lift_replay/model.ckpt")));

  // A changed input is refused.
  write_file(p("train/data.jsonl"), read_file(p("raw/data.jsonl")));
  const Run stale = run({"--from-manifest", p("lift/manifest.json"), "--out", p("lift_replay2")});
  CHECK(stale.code == 1);
  CHECK(stale.err.find("changed") != std::string::npos);
}

TEST_CASE("csv quoting and method labels") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_field("two\nlines") == "\"two\nlines\"");
  CHECK(method_label({{"label", "x"}, {"command", "c"}}) == "x");
  CHECK(method_label({{"label", ""}, {"command", "c"}, {"metrics", {{"method", "m"}}}}) == "m");
  CHECK(method_label({{"command", "c"}}) == "c");
}
