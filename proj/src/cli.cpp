#include "bimanual/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "bimanual/checkpoint.hpp"
#include "bimanual/dataset_io.hpp"
#include "bimanual/pipeline.hpp"
#include "bimanual/report.hpp"

namespace bimanual {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kCommands{"gen-data",       "train-lift",    "eval-lift", "impute",
                                         "train-forecast", "eval-forecast", "baseline",  "report"};

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::string scale = "desk";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string label;
  std::vector<std::string> data, train_data, manifests;
  std::string model, condition, supervision = "3d_only", kind, tier, domain, format;
  int count = -1, k = -1;
  bool bimodal = false, oracle = false, refine = false;

  json to_json() const {
    json j{{"command", command}, {"config_path", config_path}, {"out", out_dir},        {"scale", scale},
           {"threads", threads}, {"label", label},             {"data", data},          {"train_data", train_data},
           {"manifests", manifests}, {"model", model},         {"condition", condition}, {"supervision", supervision},
           {"kind", kind},       {"tier", tier},               {"domain", domain},      {"format", format},
           {"count", count},     {"k", k},                     {"bimodal", bimodal},    {"oracle", oracle},
           {"refine", refine}};
    j["seed"] = seed ? json(*seed) : json(nullptr);
    return j;
  }

  static Options from_json(const json& j) {
    Options o;
    o.command = j.at("command");
    o.config_path = j.value("config_path", "");
    o.out_dir = j.value("out", "");
    o.scale = j.value("scale", "desk");
    o.threads = j.value("threads", 0);
    o.label = j.value("label", "");
    o.data = j.value("data", std::vector<std::string>{});
    o.train_data = j.value("train_data", std::vector<std::string>{});
    o.manifests = j.value("manifests", std::vector<std::string>{});
    o.model = j.value("model", "");
    o.condition = j.value("condition", "");
    o.supervision = j.value("supervision", "3d_only");
    o.kind = j.value("kind", "");
    o.tier = j.value("tier", "");
    o.domain = j.value("domain", "");
    o.format = j.value("format", "");
    o.count = j.value("count", -1);
    o.k = j.value("k", -1);
    o.bimodal = j.value("bimodal", false);
    o.oracle = j.value("oracle", false);
    o.refine = j.value("refine", false);
    if (j.contains("seed") && !j["seed"].is_null()) o.seed = j["seed"].get<std::uint64_t>();
    return o;
  }
};

struct Context {
  Options opt;
  json config;
  json inputs = json::array();
  json outputs = json::array();
  json metrics = json::object();
  std::ostream* out = nullptr;

  int threads() const { return opt.threads > 0 ? opt.threads : default_threads(); }

  fs::path out_path(const std::string& name) const { return fs::path(opt.out_dir) / name; }

  void note_input(const std::string& path) {
    inputs.push_back({{"path", path}, {"fnv1a", fnv1a_hex(read_file(path))}});
  }

  void note_output(const fs::path& path) {
    outputs.push_back({{"path", path.string()}, {"fnv1a", fnv1a_hex(read_file(path.string()))}});
  }

  std::vector<TrajectoryRecord> load(const std::vector<std::string>& paths, const std::string& what) {
    if (paths.empty()) throw std::invalid_argument(opt.command + ": " + what + " is required");
    std::vector<TrajectoryRecord> all;
    for (const auto& p : paths) {
      note_input(p);
      auto recs = read_dataset(p);
      all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    }
    return all;
  }

  void write_text(const std::string& name, const std::string& text) {
    const fs::path p = out_path(name);
    write_file(p.string(), text);
    note_output(p);
  }
};

json merge_object(json base, const json& over, const std::string& where) {
  if (!over.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [k, v] : over.items()) {
    if (!base.contains(k)) throw std::invalid_argument("unknown " + where + " key '" + k + "'");
    base[k] = v;
  }
  return base;
}

json sample_defaults(int n) { return {{"n_samples", n}, {"seed", 0}, {"stride", 1}, {"batch", 64}}; }

SampleConfig sample_config(const json& j) {
  SampleConfig s;
  s.n_samples = j.at("n_samples");
  s.seed = j.at("seed");
  s.options.stride = j.at("stride");
  s.batch = j.at("batch");
  if (s.n_samples < 1 || s.options.stride < 1 || s.batch < 1) throw std::invalid_argument("sample settings must be positive");
  return s;
}

// Defaults for each command; the config file may only override known keys.
json default_config(const Options& o) {
  const auto denoiser = [&](DenoiserMode m) { return denoiser_preset(o.scale, m).to_json(); };
  TrainConfig t;
  t.scale = o.scale;
  if (o.command == "gen-data") {
    return {{"generator", MotionGeneratorConfig{}.to_json()},
            {"count", 100},
            {"first_index", 0},
            {"tier", "full3d"},
            {"degrade", {{"jitter_sigma", 1.0}, {"scale_jitter", 0.02}}},
            {"format", "jsonl"}};
  }
  if (o.command == "train-lift") return {{"denoiser", denoiser(DenoiserMode::Lifting)}, {"train", t.to_json()}};
  if (o.command == "eval-lift") {
    return {{"denoiser", denoiser(DenoiserMode::Lifting)},
            {"train", t.to_json()},
            {"sample", sample_defaults(1)},
            {"refine", RefineConfig{}.to_json()}};
  }
  if (o.command == "impute") return {{"impute", ImputeConfig{}.to_json()}, {"sample_batch", 64}};
  if (o.command == "train-forecast") return {{"denoiser", denoiser(DenoiserMode::Forecasting)}, {"train", t.to_json()}};
  if (o.command == "eval-forecast") return {{"sample", sample_defaults(5)}};
  if (o.command == "baseline") {
    return {{"denoiser", denoiser(DenoiserMode::Forecasting)},
            {"train", t.to_json()},
            {"hidden", 256},
            {"sample", sample_defaults(5)}};
  }
  return json::object();
}

json resolve_config(const Options& o) {
  json cfg = default_config(o);
  if (!o.config_path.empty()) {
    const json file = json::parse(read_file(o.config_path));
    if (!file.is_object()) throw std::invalid_argument("config file must hold a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (!cfg.contains(k)) throw std::invalid_argument("unknown config key '" + k + "' for " + o.command);
      if (k == "generator") {
        json g = v;
        cfg[k] = MotionGeneratorConfig::from_json(g).to_json();
      } else if (cfg[k].is_object()) {
        cfg[k] = merge_object(cfg[k], v, k);
      } else {
        cfg[k] = v;
      }
    }
  }
  if (o.command == "gen-data") {
    json g = cfg["generator"];
    if (!o.domain.empty()) {
      g = {{"domain", o.domain}};
      for (const auto& [k, v] : cfg["generator"].items()) {
        if (k != "domain" && k != "ranges") g[k] = v;
      }
    }
    if (o.bimodal) g["bimodal"] = true;
    if (o.seed) g["seed"] = *o.seed;
    cfg["generator"] = MotionGeneratorConfig::from_json(g).to_json();
    if (o.count >= 0) cfg["count"] = o.count;
    if (!o.tier.empty()) cfg["tier"] = o.tier;
    if (!o.format.empty()) cfg["format"] = o.format;
  }
  if (cfg.contains("denoiser")) {
    if (!o.condition.empty()) cfg["denoiser"]["lift_condition"] = o.condition;
    cfg["denoiser"] = DenoiserConfig::from_json(cfg["denoiser"]).to_json();
  }
  if (cfg.contains("train")) {
    if (o.seed) cfg["train"]["seed"] = *o.seed;
    cfg["train"] = TrainConfig::from_json(cfg["train"]).to_json();
  }
  if (cfg.contains("sample")) {
    if (o.seed) cfg["sample"]["seed"] = *o.seed;
    if (o.k > 0) cfg["sample"]["n_samples"] = o.k;
    sample_config(cfg["sample"]);
  }
  if (cfg.contains("refine")) cfg["refine"] = RefineConfig::from_json(cfg["refine"]).to_json();
  if (cfg.contains("impute")) {
    if (o.seed) cfg["impute"]["seed"] = *o.seed;
    cfg["impute"] = ImputeConfig::from_json(cfg["impute"]).to_json();
  }
  return cfg;
}

void write_log(Context& c, const TrainLog& log) {
  std::string lines;
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    lines += json{{"event", "epoch"}, {"epoch", e}, {"loss", log.epoch_loss[e]}}.dump() + "\n";
  }
  c.write_text("train_log.jsonl", lines);
}

json train_metrics(const TrainLog& log, const std::string& hash) {
  return {{"first_epoch_loss", log.epoch_loss.front()},
          {"final_epoch_loss", log.epoch_loss.back()},
          {"epochs", log.epoch_loss.size()},
          {"steps", log.steps},
          {"model_hash", hash}};
}

std::vector<TrajectoryRecord> with_motion(const std::vector<TrajectoryRecord>& recs, const std::string& what) {
  std::vector<TrajectoryRecord> out;
  for (const auto& r : recs) {
    if (r.motion) out.push_back(r);
  }
  if (out.empty()) throw std::invalid_argument(what + ": no records carry ground-truth motion");
  return out;
}

// Accuracy of the first sample plus diversity and multimodality over all samples.
json forecast_metrics(const std::vector<std::vector<MotionSequence>>& samples, const std::vector<TrajectoryRecord>& recs,
                      const NormStats& norm) {
  std::vector<MotionSequence> first;
  for (const auto& s : samples) first.push_back(s.front());
  json m = evaluate_motions(first, recs).to_json();
  std::vector<MaskedTokens> pred, gt;
  std::vector<std::vector<MaskedTokens>> per;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    MaskedTokens p = normalized_tokens(first[i], norm);
    p.valid = recs[i].motion->valid;
    pred.push_back(std::move(p));
    gt.push_back(normalized_tokens(*recs[i].motion, norm));
    std::vector<MaskedTokens> ks;
    for (const auto& s : samples[i]) {
      MaskedTokens t = normalized_tokens(s, norm);
      t.valid = recs[i].motion->valid;
      ks.push_back(std::move(t));
    }
    per.push_back(std::move(ks));
  }
  if (recs.size() >= 2) {
    m["diversity"] = diversity(pred);
    m["gt_diversity"] = diversity(gt);
  }
  if (samples.front().size() >= 2) {
    const auto mm = multimodality(per);
    m["multimodality"] = mm.value;
    m["deterministic"] = mm.deterministic;
  }
  return m;
}

void cmd_gen_data(Context& c) {
  const json& cfg = c.config;
  const MotionGeneratorConfig g = MotionGeneratorConfig::from_json(cfg["generator"]);
  auto recs = generate_dataset(g, cfg["count"].get<std::size_t>(), cfg["first_index"].get<std::size_t>());
  const Tier tier = parse_tier(cfg["tier"]);
  if (tier != Tier::Full3d) {
    DegradeConfig d;
    d.jitter_sigma = cfg["degrade"].at("jitter_sigma");
    d.scale_jitter = cfg["degrade"].at("scale_jitter");
    for (auto& r : recs) {
      Rng rng = Rng(g.seed).derive(7).derive(fnv1a64(r.id));
      r = degrade_tier(r, tier, d, rng);
    }
  }
  const std::string fmt = cfg["format"];
  if (fmt != "jsonl" && fmt != "bin") throw std::invalid_argument("gen-data: format must be jsonl or bin");
  const fs::path p = c.out_path("data." + fmt);
  write_dataset(p.string(), recs);
  c.note_output(p);
  std::size_t frames = 0;
  for (const auto& r : recs) frames += r.valid_frames();
  c.metrics = {{"method", "gen-data"}, {"records", recs.size()}, {"valid_frames", frames}, {"tier", to_string(tier)},
               {"dataset_hash", fnv1a_hex(read_file(p.string()))}};
}

MotionModel train_lift_model(Context& c, const std::vector<std::string>& paths) {
  const auto train = c.load(paths, "--data");
  auto tr = train_lifting(train, DenoiserConfig::from_json(c.config["denoiser"]), TrainConfig::from_json(c.config["train"]));
  const fs::path p = c.out_path("model.ckpt");
  tr.model.save(p.string());
  c.note_output(p);
  write_log(c, tr.log);
  c.metrics["train"] = train_metrics(tr.log, tr.model.hash());
  return std::move(tr.model);
}

void cmd_train_lift(Context& c) {
  const MotionModel m = train_lift_model(c, c.opt.data);
  c.metrics["method"] = "train-lift/" + to_string(m.config.lift_condition);
}

void cmd_eval_lift(Context& c) {
  MotionModel model;
  if (!c.opt.model.empty()) {
    c.note_input(c.opt.model);
    model = MotionModel::load(c.opt.model);
  } else {
    model = train_lift_model(c, c.opt.train_data);
  }
  if (!c.opt.condition.empty() && parse_lift_condition(c.opt.condition) != model.config.lift_condition) {
    throw std::invalid_argument("eval-lift: model was trained with condition " + to_string(model.config.lift_condition));
  }
  const auto recs = with_motion(c.load(c.opt.data, "--data"), "eval-lift");
  const auto samples = lift(model, recs, sample_config(c.config["sample"]));
  std::vector<MotionSequence> first;
  for (const auto& s : samples) first.push_back(s.front());
  json m = evaluate_motions(first, recs).to_json();
  if (c.opt.refine) {
    const RefineConfig rc = RefineConfig::from_json(c.config["refine"]);
    std::vector<MotionSequence> refined(recs.size());
    std::vector<double> px(recs.size());
    parallel_for(recs.size(), c.threads(), [&](std::size_t i) {
      const auto r = refine_reprojection(first[i], RefineTargets::from_record(recs[i], false), rc);
      refined[i] = r.motion;
      px[i] = r.final_pixel_error;
    });
    json rm = evaluate_motions(refined, recs).to_json();
    double mean_px = 0.0;
    for (double v : px) mean_px += v / static_cast<double>(px.size());
    rm["final_pixel_error"] = mean_px;
    m["refined"] = rm;
  }
  for (auto& [k, v] : m.items()) c.metrics[k] = v;
  c.metrics["method"] = "lift/" + to_string(model.config.lift_condition);
  c.metrics["model_hash"] = model.hash();
}

void cmd_impute(Context& c) {
  if (c.opt.model.empty()) throw std::invalid_argument("impute: --model is required");
  c.note_input(c.opt.model);
  const MotionModel model = MotionModel::load(c.opt.model);
  const auto recs = c.load(c.opt.data, "--data");
  ImputeConfig ic = ImputeConfig::from_json(c.config["impute"]);
  ic.threads = c.threads();
  const ImputeResult res = impute_labels(model, recs, ic);
  const fs::path p = c.out_path("imputed.jsonl");
  write_dataset(p.string(), res.records);
  c.note_output(p);
  double init_px = 0.0, final_px = 0.0;
  for (const auto& r : res.records) {
    init_px += r.provenance["initial_pixel_error"].get<double>();
    final_px += r.provenance["final_pixel_error"].get<double>();
  }
  const double n = std::max<double>(1.0, static_cast<double>(res.records.size()));
  json skipped = json::array();
  for (const auto& [id, why] : res.skipped) skipped.push_back({{"id", id}, {"reason", why}});
  c.metrics = {{"method", "impute"},
               {"records_in", recs.size()},
               {"imputed", res.records.size()},
               {"skipped", skipped},
               {"mean_initial_pixel_error", init_px / n},
               {"mean_final_pixel_error", final_px / n},
               {"model_hash", model.hash()}};
}

void cmd_train_forecast(Context& c) {
  const auto train = c.load(c.opt.data, "--data");
  const Supervision sup = parse_supervision(c.opt.supervision);
  auto tr = train_forecaster(train, DenoiserConfig::from_json(c.config["denoiser"]),
                             TrainConfig::from_json(c.config["train"]), sup);
  const fs::path p = c.out_path("model.ckpt");
  tr.model.save(p.string());
  c.note_output(p);
  write_log(c, tr.log);
  c.metrics = train_metrics(tr.log, tr.model.hash());
  c.metrics["method"] = "train-forecast/" + to_string(sup);
  c.metrics["records"] = tr.model.train_info["records"];
}

void cmd_eval_forecast(Context& c) {
  if (c.opt.model.empty()) throw std::invalid_argument("eval-forecast: --model is required");
  c.note_input(c.opt.model);
  const MotionModel model = MotionModel::load(c.opt.model);
  const auto recs = with_motion(c.load(c.opt.data, "--data"), "eval-forecast");
  const auto samples = forecast(model, recs, sample_config(c.config["sample"]));
  c.metrics = forecast_metrics(samples, recs, model.norm);
  std::string method = "forecast/" + model.kind;
  if (model.train_info.contains("supervision")) method += "/" + model.train_info["supervision"].get<std::string>();
  c.metrics["method"] = method;
  c.metrics["model_hash"] = model.hash();
}

void cmd_baseline(Context& c) {
  if (c.opt.kind != "static" && c.opt.kind != "regressor") {
    throw std::invalid_argument("baseline: --kind must be static or regressor");
  }
  const auto recs = with_motion(c.load(c.opt.data, "--data"), "baseline");
  const DenoiserConfig dc = DenoiserConfig::from_json(c.config["denoiser"]);
  const TrainConfig tc = TrainConfig::from_json(c.config["train"]);
  const SampleConfig sc = sample_config(c.config["sample"]);
  std::vector<std::vector<MotionSequence>> samples;
  NormStats norm;
  if (c.opt.kind == "static") {
    std::optional<StaticPoseModel> head;
    if (!c.opt.oracle) {
      const auto train = c.load(c.opt.train_data, "--train-data");
      auto tr = train_static_pose(train, dc, tc, c.config["hidden"].get<int>());
      const fs::path p = c.out_path("model.ckpt");
      tr.model.save(p.string());
      c.note_output(p);
      write_log(c, tr.log);
      head = std::move(tr.model);
      norm = head->norm;
    } else {
      norm = norm_stats(recs);
    }
    for (const auto& r : recs) {
      samples.push_back(std::vector<MotionSequence>(
          static_cast<std::size_t>(sc.n_samples), static_pose_baseline(head ? &*head : nullptr, r, dc.horizon, c.opt.oracle)));
    }
  } else {
    const auto train = c.load(c.opt.train_data, "--train-data");
    auto tr = train_regressor(train, dc, tc);
    const fs::path p = c.out_path("model.ckpt");
    tr.model.save(p.string());
    c.note_output(p);
    write_log(c, tr.log);
    norm = tr.model.norm;
    samples = forecast(tr.model, recs, sc);
  }
  c.metrics = forecast_metrics(samples, recs, norm);
  c.metrics["method"] = "baseline/" + c.opt.kind + (c.opt.oracle ? "/oracle" : "");
}

void cmd_report(Context& c) {
  std::vector<json> manifests;
  for (const auto& p : c.opt.manifests) {
    c.note_input(p);
    manifests.push_back(json::parse(read_file(p)));
  }
  const ReportFiles f = build_report(manifests);
  c.write_text("table.csv", f.table_csv);
  c.write_text("mpjpe_curve.svg", f.mpjpe_svg);
  c.write_text("fa_mpjpe_curve.svg", f.fa_mpjpe_svg);
  c.metrics = {{"method", "report"}, {"rows", manifests.size()}};
}

void execute(Context& c) {
  if (c.opt.out_dir.empty()) throw std::invalid_argument(c.opt.command + ": --out is required");
  fs::create_directories(c.opt.out_dir);
  const std::string& cmd = c.opt.command;
  if (cmd == "gen-data") cmd_gen_data(c);
  else if (cmd == "train-lift") cmd_train_lift(c);
  else if (cmd == "eval-lift") cmd_eval_lift(c);
  else if (cmd == "impute") cmd_impute(c);
  else if (cmd == "train-forecast") cmd_train_forecast(c);
  else if (cmd == "eval-forecast") cmd_eval_forecast(c);
  else if (cmd == "baseline") cmd_baseline(c);
  else if (cmd == "report") cmd_report(c);
  else throw std::invalid_argument("unknown command " + cmd);

  const std::string metrics_text = c.metrics.dump(2) + "\n";
  c.write_text("metrics.json", metrics_text);
  json manifest{{"format", "bimanual-manifest"},
                {"version", 1},
                {"command", cmd},
                {"label", c.opt.label},
                {"options", c.opt.to_json()},
                {"config", c.config},
                {"inputs", c.inputs},
                {"outputs", c.outputs},
                {"metrics", c.metrics}};
  write_file(c.out_path("manifest.json").string(), manifest.dump(2) + "\n");
  *c.out << json{{"command", cmd}, {"status", "ok"}, {"out", c.opt.out_dir}}.dump() << "\n";
}

void replay(Context& c, const std::string& manifest_path, const std::string& out_override) {
  const json m = json::parse(read_file(manifest_path));
  if (m.value("format", "") != "bimanual-manifest") throw std::invalid_argument(manifest_path + " is not a run manifest");
  c.opt = Options::from_json(m.at("options"));
  if (!out_override.empty()) c.opt.out_dir = out_override;
  c.config = m.at("config");
  for (const auto& in : m.at("inputs")) {
    const std::string path = in.at("path");
    if (fnv1a_hex(read_file(path)) != in.at("fnv1a").get<std::string>()) {
      throw std::runtime_error("input " + path + " changed since the manifest was written");
    }
  }
  execute(c);
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bimanual hand motion lifting and forecasting experiments", "bimanual"};
  app.require_subcommand(0, 1);
  Options o;
  std::string from_manifest;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    s->add_option("--seed", seed, "global seed");
    s->add_option("--out", o.out_dir, "output directory");
    s->add_option("--threads", o.threads, "worker threads (default: BIMANUAL_THREADS or 1)")->check(CLI::PositiveNumber);
    s->add_option("--scale", o.scale, "model preset")->check(CLI::IsMember({"desk", "paper"}));
    s->add_option("--label", o.label, "method name in reports");
  };
  app.add_option("--from-manifest", from_manifest, "rerun the command recorded in a manifest")->check(CLI::ExistingFile);
  app.add_option("--out", o.out_dir, "output directory override for --from-manifest");

  const auto conditions = CLI::IsMember({"none", "ext_kpe", "plucker", "all"});
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--count", o.count, "number of records")->check(CLI::NonNegativeNumber);
  gen->add_option("--tier", o.tier, "label tier")->check(CLI::IsMember({"full3d", "kp3d_only", "kp2d_only"}));
  gen->add_option("--domain", o.domain, "parameter preset")->check(CLI::IsMember({"in-domain", "held-out-domain"}));
  gen->add_flag("--bimodal", o.bimodal, "fixed t=0 state with two futures");
  gen->add_option("--format", o.format, "jsonl or bin")->check(CLI::IsMember({"jsonl", "bin"}));

  auto* tl = app.add_subcommand("train-lift", "train the lifting model on full3d records");
  add_common(tl);
  tl->add_option("--data", o.data, "training datasets")->required();
  tl->add_option("--condition", o.condition, "lifting condition variant")->check(conditions);

  auto* el = app.add_subcommand("eval-lift", "evaluate (and optionally train) a lifting model");
  add_common(el);
  el->add_option("--model", o.model, "lifting checkpoint")->check(CLI::ExistingFile);
  el->add_option("--train-data", o.train_data, "train a model first on these datasets");
  el->add_option("--data", o.data, "evaluation datasets")->required();
  el->add_option("--condition", o.condition, "lifting condition variant")->check(conditions);
  el->add_flag("--refine", o.refine, "also report reprojection-refined metrics");

  auto* im = app.add_subcommand("impute", "impute 3D labels for 2D-only records");
  add_common(im);
  im->add_option("--model", o.model, "lifting checkpoint")->required()->check(CLI::ExistingFile);
  im->add_option("--data", o.data, "kp2d_only datasets")->required();

  auto* tf = app.add_subcommand("train-forecast", "train the forecasting model");
  add_common(tf);
  tf->add_option("--data", o.data, "training datasets (full3d and imputed)")->required();
  tf->add_option("--supervision", o.supervision, "3d_only or 3d_plus_2d")->check(CLI::IsMember({"3d_only", "3d_plus_2d"}));

  auto* ef = app.add_subcommand("eval-forecast", "evaluate a forecasting model");
  add_common(ef);
  ef->add_option("--model", o.model, "forecasting checkpoint")->required()->check(CLI::ExistingFile);
  ef->add_option("--data", o.data, "evaluation datasets")->required();
  ef->add_option("--k", o.k, "samples per record for multimodality")->check(CLI::PositiveNumber);

  auto* bl = app.add_subcommand("baseline", "train and evaluate a baseline");
  add_common(bl);
  bl->add_option("--kind", o.kind, "static or regressor")->required()->check(CLI::IsMember({"static", "regressor"}));
  bl->add_option("--train-data", o.train_data, "training datasets");
  bl->add_option("--data", o.data, "evaluation datasets")->required();
  bl->add_flag("--oracle", o.oracle, "static baseline: use the true t=0 pose");
  bl->add_option("--k", o.k, "samples per record for multimodality")->check(CLI::PositiveNumber);

  auto* rp = app.add_subcommand("report", "tabulate manifests and plot per-timestep curves");
  add_common(rp);
  rp->add_option("--manifests", o.manifests, "run manifests")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  Context c;
  c.out = &out;
  try {
    if (!from_manifest.empty()) {
      if (!app.get_subcommands().empty()) {
        err << "error: --from-manifest takes no subcommand\n" << app.help();
        return 2;
      }
      replay(c, from_manifest, o.out_dir);
      return 0;
    }
    if (app.get_subcommands().empty()) {
      err << "error: a subcommand is required\n" << app.help();
      return 2;
    }
    o.command = app.get_subcommands().front()->get_name();
    for (auto* s : app.get_subcommands()) {
      if (s->count("--seed")) o.seed = seed;
    }
    c.opt = o;
    c.config = resolve_config(o);
    execute(c);
    return 0;
  } catch (const std::exception& e) {
    err << json{{"error", e.what()}, {"command", c.opt.command.empty() ? o.command : c.opt.command}}.dump() << "\n";
    return 1;
  }
}

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, out, err);
}

}  // namespace bimanual
