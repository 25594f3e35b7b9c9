#include "bimanual/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "bimanual/checkpoint.hpp"
#include "bimanual/dataset_io.hpp"
#include "bimanual/ops.hpp"
#include "bimanual/optim.hpp"
#include "pipeline_detail.hpp"

namespace bimanual {

using nlohmann::json;

void NormStats::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(std[a] > 0.0) || !std::isfinite(std[a]) || !std::isfinite(mean[a])) {
      throw std::invalid_argument("NormStats: translation axis " + std::to_string(a) + " has zero or non-finite spread");
    }
  }
}

void NormStats::apply(TokenMatrix& tokens) const {
  for (int h = 0; h < kHands; ++h) {
    const int off = token_translation_offset(h);
    for (int a = 0; a < 3; ++a) tokens.col(off + a) = (tokens.col(off + a).array() - mean[a]) / std[a];
  }
}

void NormStats::invert(TokenMatrix& tokens) const {
  for (int h = 0; h < kHands; ++h) {
    const int off = token_translation_offset(h);
    for (int a = 0; a < 3; ++a) tokens.col(off + a) = tokens.col(off + a).array() * std[a] + mean[a];
  }
}

json NormStats::to_json() const {
  return {{"mean", {mean.x(), mean.y(), mean.z()}}, {"std", {std.x(), std.y(), std.z()}}};
}

NormStats NormStats::from_json(const json& j) {
  NormStats n;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != 3 || s.size() != 3) throw std::invalid_argument("NormStats: expected 3 values per field");
  n.mean = Vec3(m[0], m[1], m[2]);
  n.std = Vec3(s[0], s[1], s[2]);
  n.validate();
  return n;
}

NormStats norm_stats(const std::vector<TrajectoryRecord>& train) {
  if (train.empty()) throw std::invalid_argument("norm_stats: empty training set");
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (const auto& r : train) {
    if (!r.motion) throw std::invalid_argument("norm_stats: record " + r.id + " has no motion");
    for (std::size_t t = 0; t < r.motion->size(); ++t) {
      if (!r.motion->is_valid(t)) continue;
      for (int h = 0; h < kHands; ++h) sum += r.motion->frames[t][h].wrist;
      n += kHands;
    }
  }
  if (n == 0) throw std::invalid_argument("norm_stats: no valid frames");
  NormStats s;
  s.mean = sum / static_cast<double>(n);
  Vec3 sq = Vec3::Zero();
  for (const auto& r : train) {
    for (std::size_t t = 0; t < r.motion->size(); ++t) {
      if (!r.motion->is_valid(t)) continue;
      for (int h = 0; h < kHands; ++h) sq += (r.motion->frames[t][h].wrist - s.mean).cwiseAbs2();
    }
  }
  s.std = (sq / static_cast<double>(n)).cwiseSqrt();
  s.validate();
  return s;
}

std::string to_string(Supervision s) { return s == Supervision::ThreeDOnly ? "3d_only" : "3d_plus_2d"; }

Supervision parse_supervision(const std::string& s) {
  if (s == "3d_only") return Supervision::ThreeDOnly;
  if (s == "3d_plus_2d") return Supervision::ThreeDPlus2D;
  throw std::invalid_argument("unknown supervision '" + s + "' (expected 3d_only or 3d_plus_2d)");
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: epochs and batch_size must be positive");
  if (!(lr > 0.0) || !(grad_clip > 0.0) || weight_decay < 0.0) {
    throw std::invalid_argument("TrainConfig: lr and grad_clip must be positive, weight_decay >= 0");
  }
  if (optimizer != "adam") throw std::invalid_argument("TrainConfig: unsupported optimizer '" + optimizer + "'");
  if (scale != "desk" && scale != "paper") throw std::invalid_argument("TrainConfig: scale must be desk or paper");
  if (keypoint_noise.jitter_sigma < 0.0 || keypoint_noise.scale_jitter < 0.0 || !(loss_weight_cap >= 1.0)) {
    throw std::invalid_argument("TrainConfig: keypoint noise must be >= 0 and loss_weight_cap >= 1");
  }
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"optimizer", optimizer},
          {"weight_decay", weight_decay},
          {"grad_clip", grad_clip},
          {"cosine_decay", cosine_decay},
          {"camera_augment", camera_augment},
          {"augment",
           {{"orbit_deg", augment.orbit_deg},
            {"drift_deg", augment.drift_deg},
            {"focal_scale", augment.focal_scale},
            {"max_retries", augment.max_retries},
            {"shift_xy", augment.shift_xy},
            {"shift_z", augment.shift_z},
            {"drift_xy", augment.drift_xy},
            {"drift_z", augment.drift_z}}},
          {"keypoint_noise", {{"jitter_sigma", keypoint_noise.jitter_sigma}, {"scale_jitter", keypoint_noise.scale_jitter}}},
          {"loss_weight_cap", loss_weight_cap},
          {"seed", seed},
          {"scale", scale}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  static const std::set<std::string> known{"epochs",         "batch_size", "lr",      "optimizer", "weight_decay", "grad_clip",
                                           "cosine_decay",   "camera_augment", "augment", "seed",   "scale",
                                           "keypoint_noise", "loss_weight_cap"};
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw std::invalid_argument("unknown train config key '" + k + "'");
  }
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
  c.camera_augment = j.value("camera_augment", c.camera_augment);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    for (const auto& [k, v] : a.items()) {
      if (k != "orbit_deg" && k != "drift_deg" && k != "focal_scale" && k != "max_retries" && k != "shift_xy" &&
          k != "shift_z" && k != "drift_xy" && k != "drift_z") {
        throw std::invalid_argument("unknown augment key '" + k + "'");
      }
    }
    c.augment.orbit_deg = a.value("orbit_deg", c.augment.orbit_deg);
    c.augment.drift_deg = a.value("drift_deg", c.augment.drift_deg);
    c.augment.focal_scale = a.value("focal_scale", c.augment.focal_scale);
    c.augment.max_retries = a.value("max_retries", c.augment.max_retries);
    c.augment.shift_xy = a.value("shift_xy", c.augment.shift_xy);
    c.augment.shift_z = a.value("shift_z", c.augment.shift_z);
    c.augment.drift_xy = a.value("drift_xy", c.augment.drift_xy);
    c.augment.drift_z = a.value("drift_z", c.augment.drift_z);
  }
  if (j.contains("keypoint_noise")) {
    const json& a = j.at("keypoint_noise");
    for (const auto& [k, v] : a.items()) {
      if (k != "jitter_sigma" && k != "scale_jitter") throw std::invalid_argument("unknown keypoint_noise key '" + k + "'");
    }
    c.keypoint_noise.jitter_sigma = a.value("jitter_sigma", c.keypoint_noise.jitter_sigma);
    c.keypoint_noise.scale_jitter = a.value("scale_jitter", c.keypoint_noise.scale_jitter);
  }
  c.loss_weight_cap = j.value("loss_weight_cap", c.loss_weight_cap);
  c.seed = j.value("seed", c.seed);
  c.scale = j.value("scale", c.scale);
  c.validate();
  return c;
}

DenoiserConfig denoiser_preset(const std::string& scale, DenoiserMode mode) {
  DenoiserConfig c;
  c.mode = mode;
  if (scale == "paper") {
    c.layers = 16;
    c.latent_dim = 1024;
    c.heads = 4;
    c.ff_dim = 4096;
    c.horizon = 256;
    c.diffusion_T = 1000;
  } else if (scale != "desk") {
    throw std::invalid_argument("unknown scale '" + scale + "' (expected desk or paper)");
  }
  c.validate();
  return c;
}

std::string MotionModel::serialize() const {
  const json header{{"kind", kind}, {"config", config.to_json()}, {"norm", norm.to_json()}, {"train", train_info}};
  return serialize_checkpoint(header, net);
}

MotionModel MotionModel::deserialize(const std::string& bytes) {
  const json header = checkpoint_header(bytes);
  MotionModel m;
  m.kind = header.at("kind").get<std::string>();
  if (m.kind != "lifting" && m.kind != "forecasting" && m.kind != "regressor") {
    throw std::runtime_error("checkpoint kind '" + m.kind + "' is not a motion model");
  }
  m.config = DenoiserConfig::from_json(header.at("config"));
  m.norm = NormStats::from_json(header.at("norm"));
  m.train_info = header.value("train", json::object());
  Rng rng(0);
  m.net = Denoiser(m.config, rng);
  deserialize_checkpoint(bytes, m.net);
  m.schedule = cosine_schedule(m.config.diffusion_T);
  return m;
}

void MotionModel::save(const std::string& path) const { write_file(path, serialize()); }

MotionModel MotionModel::load(const std::string& path) { return deserialize(read_file(path)); }

std::string MotionModel::hash() const { return fnv1a_hex(serialize()); }

json TrainLog::to_json() const { return {{"epoch_loss", epoch_loss}, {"steps", steps}}; }

namespace detail {

std::vector<double> record_tokens(const TrajectoryRecord& r, const NormStats& norm, int horizon,
                                  std::vector<std::uint8_t>& valid) {
  if (!r.motion) throw std::invalid_argument("record " + r.id + " has no motion labels");
  if (r.frames() != static_cast<std::size_t>(horizon)) {
    throw std::invalid_argument("record " + r.id + " has " + std::to_string(r.frames()) + " frames, model horizon is " +
                                std::to_string(horizon));
  }
  TokenMatrix tok = pack_tokens(*r.motion);
  norm.apply(tok);
  valid.resize(r.frames());
  for (std::size_t t = 0; t < r.frames(); ++t) valid[t] = r.motion->valid[t] && r.frame_valid[t];
  return std::vector<double>(tok.data(), tok.data() + tok.size());
}

std::string dataset_hash(const std::vector<TrajectoryRecord>& records) {
  return fnv1a_hex(encode_dataset(records, DatasetFormat::JsonLines));
}

void round_to_checkpoint(const nn::Module& net) { deserialize_checkpoint(serialize_checkpoint(json::object(), net), net); }

TrainLog fit(const std::vector<Tensor>& params, std::size_t n_items, const TrainConfig& tcfg,
             const std::function<void(int epoch)>& on_epoch,
             const std::function<Tensor(const std::vector<std::size_t>& batch, Rng& rng)>& batch_loss) {
  tcfg.validate();
  if (n_items == 0) throw std::invalid_argument("training set is empty");
  optim::AdamOptions opts;
  opts.lr = tcfg.lr;
  opts.weight_decay = tcfg.weight_decay;
  optim::Adam adam(params, opts);
  std::vector<Tensor> ps = params;
  Rng rng = Rng(tcfg.seed).derive(2);
  const std::size_t B = static_cast<std::size_t>(tcfg.batch_size);
  const std::size_t per_epoch = (n_items + B - 1) / B;
  const double total = static_cast<double>(per_epoch * static_cast<std::size_t>(tcfg.epochs));
  std::vector<std::size_t> order(n_items);
  TrainLog log;
  for (int e = 0; e < tcfg.epochs; ++e) {
    if (on_epoch) on_epoch(e);
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    for (std::size_t i = n_items; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<long>(b * B),
                                           order.begin() + static_cast<long>(std::min(n_items, (b + 1) * B)));
      if (tcfg.cosine_decay) {
        const double progress = static_cast<double>(log.steps) / total;
        adam.set_lr(tcfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846))));
      }
      try {
        optim::zero_grad(ps);
        const Tensor loss = batch_loss(batch, rng);
        const double v = loss.item();
        if (!std::isfinite(v)) throw NumericError("non-finite loss");
        backward(loss);
        optim::clip_grad_norm(ps, tcfg.grad_clip);
        adam.step();
        epoch_sum += v;
      } catch (const NumericError& err) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(e) + " step " + std::to_string(b) + ": " +
                                 err.what());
      }
      ++log.steps;
    }
    log.epoch_loss.push_back(epoch_sum / static_cast<double>(per_epoch));
  }
  return log;
}

}  // namespace detail

namespace {

using detail::record_tokens;

Tensor batch_tokens(const std::vector<std::vector<double>>& x0, const std::vector<std::size_t>& idx, int horizon) {
  std::vector<double> v;
  v.reserve(idx.size() * x0[0].size());
  for (auto i : idx) v.insert(v.end(), x0[i].begin(), x0[i].end());
  return Tensor::from({idx.size(), static_cast<std::size_t>(horizon), static_cast<std::size_t>(kTokenDim)}, std::move(v));
}

Tensor batch_mask(const std::vector<std::vector<std::uint8_t>>& valid, const std::vector<std::size_t>& idx, int horizon) {
  std::vector<const std::vector<std::uint8_t>*> ptrs;
  for (auto i : idx) ptrs.push_back(&valid[i]);
  return frame_mask_tensor(ptrs, static_cast<std::size_t>(horizon));
}

// Valid frames of the normalized training tokens, one row each.
TokenMatrix frame_rows(const std::vector<std::vector<double>>& x0, const std::vector<std::vector<std::uint8_t>>& valid) {
  std::size_t n = 0;
  for (const auto& v : valid) n += static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
  TokenMatrix rows(static_cast<Eigen::Index>(n), kTokenDim);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    for (std::size_t t = 0; t < valid[i].size(); ++t) {
      if (!valid[i][t]) continue;
      for (int c = 0; c < kTokenDim; ++c) rows(r, c) = x0[i][t * kTokenDim + static_cast<std::size_t>(c)];
      ++r;
    }
  }
  return rows;
}

json train_info(const std::vector<TrajectoryRecord>& train, const TrainConfig& tcfg, const TrainLog& log) {
  return {{"train_config", tcfg.to_json()},
          {"records", train.size()},
          {"data_hash", detail::dataset_hash(train)},
          {"log", log.to_json()}};
}

// Shared by the forecasting diffusion model and the regressor.
Trained<MotionModel> train_forecast_like(const std::vector<TrajectoryRecord>& train, DenoiserConfig cfg,
                                         const TrainConfig& tcfg, const std::string& kind) {
  cfg.mode = DenoiserMode::Forecasting;
  cfg.diffusion = kind != "regressor";
  cfg.validate();
  Trained<MotionModel> out;
  MotionModel& m = out.model;
  m.kind = kind;
  m.config = cfg;
  m.norm = norm_stats(train);
  m.schedule = cosine_schedule(cfg.diffusion_T);
  Rng init = Rng(tcfg.seed).derive(1);
  m.net = Denoiser(cfg, init);

  std::vector<std::vector<double>> x0(train.size()), obs(train.size());
  std::vector<std::vector<std::uint8_t>> valid(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    x0[i] = record_tokens(train[i], m.norm, cfg.horizon, valid[i]);
    obs[i] = observation_features(train[i], cfg);
  }
  if (cfg.diffusion) m.net.init_skip(frame_rows(x0, valid));
  const auto params = m.net.parameters();
  out.log = detail::fit(params, train.size(), tcfg, nullptr, [&](const std::vector<std::size_t>& idx, Rng& rng) {
    std::vector<std::vector<double>> o;
    for (auto i : idx) o.push_back(obs[i]);
    const ConditionBatch cond = stack_observations(o);
    const Tensor x = batch_tokens(x0, idx, cfg.horizon);
    const Tensor mask = batch_mask(valid, idx, cfg.horizon);
    const nn::ForwardContext ctx{true, cfg.dropout, &rng};
    if (!cfg.diffusion) return masked_mse(m.net.regress(cond, mask, ctx), x, mask);
    return training_loss(m.schedule, m.net.bind(cond, mask, ctx), x, mask, cfg.cond_drop, rng, tcfg.loss_weight_cap);
  });
  detail::round_to_checkpoint(m.net);
  m.train_info = train_info(train, tcfg, out.log);
  return out;
}

std::vector<TrajectoryRecord> select_supervision(const std::vector<TrajectoryRecord>& train, Supervision s) {
  std::vector<TrajectoryRecord> out;
  for (const auto& r : train) {
    if (r.tier == Tier::Full3d || (s == Supervision::ThreeDPlus2D && r.tier == Tier::Imputed)) out.push_back(r);
  }
  return out;
}

Rng record_stream(std::uint64_t seed, const std::string& id, int sample) {
  return Rng(seed).derive(fnv1a64(id)).derive(static_cast<std::uint64_t>(sample));
}

// Shared sampling loop: cond(items) builds the batched condition for (record, sample) items.
std::vector<std::vector<MotionSequence>> sample_motions(
    const MotionModel& model, const std::vector<TrajectoryRecord>& records, const SampleConfig& cfg,
    const std::function<ConditionBatch(const std::vector<std::size_t>& record_idx)>& cond) {
  if (cfg.n_samples < 1) throw std::invalid_argument("sampling: n_samples must be >= 1");
  const int H = model.config.horizon;
  std::vector<std::vector<MotionSequence>> out(records.size());
  std::vector<std::pair<std::size_t, int>> items;
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].frames() != static_cast<std::size_t>(H)) {
      throw std::invalid_argument("record " + records[r].id + " length differs from model horizon");
    }
    out[r].resize(static_cast<std::size_t>(cfg.n_samples));
    for (int s = 0; s < cfg.n_samples; ++s) items.emplace_back(r, s);
  }
  const std::size_t chunk = std::max<std::size_t>(1, cfg.batch);
  const nn::ForwardContext ctx{};
  for (std::size_t begin = 0; begin < items.size(); begin += chunk) {
    const std::size_t end = std::min(items.size(), begin + chunk);
    std::vector<std::size_t> ridx;
    std::vector<Rng> rngs;
    std::vector<const std::vector<std::uint8_t>*> masks;
    std::vector<std::vector<std::uint8_t>> all_valid(end - begin, std::vector<std::uint8_t>(static_cast<std::size_t>(H), 1));
    for (std::size_t k = begin; k < end; ++k) {
      ridx.push_back(items[k].first);
      rngs.push_back(record_stream(cfg.seed, records[items[k].first].id, items[k].second));
      masks.push_back(model.kind == "lifting" ? &records[items[k].first].frame_valid : &all_valid[k - begin]);
    }
    const ConditionBatch c = cond(ridx);
    const Tensor mask = frame_mask_tensor(masks, static_cast<std::size_t>(H));
    const Shape shape{ridx.size(), static_cast<std::size_t>(H), static_cast<std::size_t>(kTokenDim)};
    Tensor x;
    try {
      if (model.config.diffusion) {
        x = sample(model.schedule, model.net.bind(c, mask, ctx), shape, rngs, cfg.options);
      } else {
        NoGradGuard guard;
        x = model.net.regress(c, mask, ctx);
      }
    } catch (const NumericError& e) {
      throw NumericError(std::string("sampling produced non-finite values: ") + e.what());
    }
    const auto data = x.data();
    const std::size_t per = static_cast<std::size_t>(H) * kTokenDim;
    for (std::size_t k = begin; k < end; ++k) {
      TokenMatrix tok(H, kTokenDim);
      std::copy(data.begin() + static_cast<long>((k - begin) * per), data.begin() + static_cast<long>((k - begin + 1) * per),
                tok.data());
      model.norm.invert(tok);
      out[items[k].first][static_cast<std::size_t>(items[k].second)] = unpack_tokens(tok, *masks[k - begin]);
    }
  }
  return out;
}

}  // namespace

Trained<MotionModel> train_lifting(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg_in,
                                   const TrainConfig& tcfg) {
  DenoiserConfig cfg = cfg_in;
  cfg.mode = DenoiserMode::Lifting;
  cfg.diffusion = true;
  cfg.validate();
  for (const auto& r : train) {
    if (r.tier != Tier::Full3d) throw std::invalid_argument("train_lifting: record " + r.id + " is not full3d");
  }
  Trained<MotionModel> out;
  MotionModel& m = out.model;
  m.kind = "lifting";
  m.config = cfg;
  m.norm = norm_stats(train);
  m.schedule = cosine_schedule(cfg.diffusion_T);
  Rng init = Rng(tcfg.seed).derive(1);
  m.net = Denoiser(cfg, init);

  std::vector<std::vector<double>> x0(train.size());
  std::vector<std::vector<std::uint8_t>> valid(train.size());
  std::vector<LiftFeatures> feats(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) x0[i] = record_tokens(train[i], m.norm, cfg.horizon, valid[i]);
  m.net.init_skip(frame_rows(x0, valid));

  const bool noisy = tcfg.keypoint_noise.jitter_sigma > 0.0 || tcfg.keypoint_noise.scale_jitter > 0.0;
  const auto on_epoch = [&](int epoch) {
    if (epoch > 0 && !tcfg.camera_augment && !noisy) return;
    for (std::size_t i = 0; i < train.size(); ++i) {
      TrajectoryRecord aug = train[i];
      if (tcfg.camera_augment) {
        Rng rng = Rng(tcfg.seed).derive(3).derive(static_cast<std::uint64_t>(epoch)).derive(i);
        try {
          aug = camera_augment(train[i], tcfg.augment, rng);
        } catch (const std::runtime_error&) {
        }
        x0[i] = record_tokens(aug, m.norm, cfg.horizon, valid[i]);
      }
      if (noisy) {
        Rng rng = Rng(tcfg.seed).derive(4).derive(static_cast<std::uint64_t>(epoch)).derive(i);
        aug.keypoints2d = degrade_tier(aug, Tier::Kp2dOnly, tcfg.keypoint_noise, rng).keypoints2d;
      }
      feats[i] = build_lifting_features(aug.keypoints2d, aug.keypoint_valid, aug.cameras, cfg);
    }
  };
  const auto params = m.net.parameters();
  out.log = detail::fit(params, train.size(), tcfg, on_epoch, [&](const std::vector<std::size_t>& idx, Rng& rng) {
    std::vector<const LiftFeatures*> f;
    for (auto i : idx) f.push_back(&feats[i]);
    const ConditionBatch cond = stack_lift_features(f, cfg);
    const Tensor x = batch_tokens(x0, idx, cfg.horizon);
    const Tensor mask = batch_mask(valid, idx, cfg.horizon);
    const nn::ForwardContext ctx{true, cfg.dropout, &rng};
    return training_loss(m.schedule, m.net.bind(cond, mask, ctx), x, mask, cfg.cond_drop, rng, tcfg.loss_weight_cap);
  });
  detail::round_to_checkpoint(m.net);
  m.train_info = train_info(train, tcfg, out.log);
  return out;
}

Trained<MotionModel> train_forecaster(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg,
                                      const TrainConfig& tcfg, Supervision supervision) {
  const auto selected = select_supervision(train, supervision);
  if (selected.empty()) throw std::invalid_argument("train_forecaster: no records match supervision " + to_string(supervision));
  auto out = train_forecast_like(selected, cfg, tcfg, "forecasting");
  out.model.train_info["supervision"] = to_string(supervision);
  return out;
}

Trained<MotionModel> train_regressor(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg,
                                     const TrainConfig& tcfg) {
  return train_forecast_like(select_supervision(train, Supervision::ThreeDOnly), cfg, tcfg, "regressor");
}

std::vector<std::vector<MotionSequence>> lift(const MotionModel& model, const std::vector<TrajectoryRecord>& records,
                                              const SampleConfig& cfg) {
  if (model.kind != "lifting") throw std::invalid_argument("lift: model kind is " + model.kind);
  std::vector<LiftFeatures> feats;
  feats.reserve(records.size());
  for (const auto& r : records) feats.push_back(build_lifting_features(r.keypoints2d, r.keypoint_valid, r.cameras, model.config));
  return sample_motions(model, records, cfg, [&](const std::vector<std::size_t>& idx) {
    std::vector<const LiftFeatures*> f;
    for (auto i : idx) f.push_back(&feats[i]);
    return stack_lift_features(f, model.config);
  });
}

std::vector<std::vector<MotionSequence>> forecast(const MotionModel& model,
                                                  const std::vector<TrajectoryRecord>& records,
                                                  const SampleConfig& cfg) {
  if (model.kind != "forecasting" && model.kind != "regressor") {
    throw std::invalid_argument("forecast: model kind is " + model.kind);
  }
  std::vector<std::vector<double>> obs;
  obs.reserve(records.size());
  for (const auto& r : records) obs.push_back(observation_features(r, model.config));
  if (!model.config.diffusion) {
    SampleConfig one = cfg;
    const int n = cfg.n_samples;
    one.n_samples = 1;
    auto out = sample_motions(model, records, one, [&](const std::vector<std::size_t>& idx) {
      std::vector<std::vector<double>> o;
      for (auto i : idx) o.push_back(obs[i]);
      return stack_observations(o);
    });
    for (auto& s : out) s.resize(static_cast<std::size_t>(n), s.front());
    return out;
  }
  return sample_motions(model, records, cfg, [&](const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> o;
    for (auto i : idx) o.push_back(obs[i]);
    return stack_observations(o);
  });
}

json ImputeConfig::to_json() const {
  return {{"seed", seed}, {"refine", refine.to_json()}, {"n_samples", n_samples}, {"sample_stride", options.stride}};
}

ImputeConfig ImputeConfig::from_json(const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k != "seed" && k != "refine" && k != "n_samples" && k != "sample_stride") {
      throw std::invalid_argument("unknown impute config key '" + k + "'");
    }
  }
  ImputeConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("refine")) c.refine = RefineConfig::from_json(j.at("refine"));
  c.n_samples = j.value("n_samples", c.n_samples);
  c.options.stride = j.value("sample_stride", c.options.stride);
  if (c.n_samples < 1) throw std::invalid_argument("impute: n_samples must be >= 1");
  return c;
}

ImputeResult impute_labels(const MotionModel& model, const std::vector<TrajectoryRecord>& records,
                           const ImputeConfig& cfg) {
  cfg.refine.validate();
  SampleConfig sc;
  sc.n_samples = cfg.n_samples;
  sc.seed = cfg.seed;
  sc.options = cfg.options;
  const auto lifted = lift(model, records, sc);
  const std::string model_hash = model.hash();

  struct Slot {
    bool ok = false;
    std::string reason;
    TrajectoryRecord record;
    MotionSequence lifted;
  };
  std::vector<Slot> slots(records.size());
  parallel_for(records.size(), cfg.threads, [&](std::size_t i) {
    const TrajectoryRecord& src = records[i];
    Slot& slot = slots[i];
    try {
      const RefineTargets targets = RefineTargets::from_record(src, true);
      RefineResult best;
      int best_s = -1;
      for (int s = 0; s < cfg.n_samples; ++s) {
        RefineResult r = refine_reprojection(lifted[i][static_cast<std::size_t>(s)], targets, cfg.refine);
        if (best_s < 0 || r.best_loss < best.best_loss) {
          best = std::move(r);
          best_s = s;
        }
      }
      TrajectoryRecord out = src;
      out.tier = Tier::Imputed;
      out.motion = best.motion;
      out.keypoints3d.reset();
      out.provenance = {{"stage", "impute"},
                        {"source_tier", to_string(src.tier)},
                        {"model_hash", model_hash},
                        {"lift_seed", cfg.seed},
                        {"sample_index", best_s},
                        {"refine", cfg.refine.to_json()},
                        {"initial_loss", best.initial_loss},
                        {"final_loss", best.best_loss},
                        {"best_iter", best.best_iter},
                        {"initial_pixel_error", best.initial_pixel_error},
                        {"final_pixel_error", best.final_pixel_error}};
      out.validate();
      slot.record = std::move(out);
      slot.lifted = lifted[i][static_cast<std::size_t>(best_s)];
      slot.ok = true;
    } catch (const std::exception& e) {
      slot.reason = e.what();
    }
  });
  ImputeResult res;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].ok) {
      res.records.push_back(std::move(slots[i].record));
      res.lifted.push_back(std::move(slots[i].lifted));
    } else {
      res.skipped.emplace_back(records[i].id, slots[i].reason);
    }
  }
  return res;
}

json MotionMetrics::to_json() const {
  const auto curve = [](const std::vector<double>& c) {
    json a = json::array();
    for (double v : c) a.push_back(std::isnan(v) ? json(nullptr) : json(v));
    return a;
  };
  return {{"records", records},       {"mpjpe", mpjpe},          {"pa_mpjpe", pa_mpjpe},
          {"fa_mpjpe", fa_mpjpe},     {"mrrpe", mrrpe},          {"mpjpe_curve", curve(mpjpe_curve)},
          {"fa_mpjpe_curve", curve(fa_mpjpe_curve)}};
}

MotionMetrics evaluate_motions(const std::vector<MotionSequence>& predictions,
                               const std::vector<TrajectoryRecord>& records) {
  if (predictions.size() != records.size()) throw std::invalid_argument("evaluate: prediction count differs from records");
  if (records.empty()) throw std::invalid_argument("evaluate: no records");
  const BimanualSkeleton skel = BimanualSkeleton::default_template();
  MotionMetrics m;
  TimestepCurve mp, fa;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].motion) throw std::invalid_argument("evaluate: record " + records[i].id + " has no ground-truth motion");
    const MotionSequence& gt = *records[i].motion;
    const auto kp_p = forward_kinematics(skel, predictions[i]);
    const auto kp_g = forward_kinematics(skel, gt);
    m.mpjpe += bimanual::mpjpe(kp_p, kp_g, gt.valid);
    m.pa_mpjpe += bimanual::pa_mpjpe(kp_p, kp_g, gt.valid);
    m.fa_mpjpe += bimanual::fa_mpjpe(kp_p, kp_g, gt.valid);
    m.mrrpe += bimanual::mrrpe(kp_p, kp_g, gt.valid);
    mp.add(mpjpe_per_frame(kp_p, kp_g, gt.valid));
    fa.add(fa_mpjpe_per_frame(kp_p, kp_g, gt.valid));
  }
  const double n = static_cast<double>(records.size());
  m.records = records.size();
  m.mpjpe /= n;
  m.pa_mpjpe /= n;
  m.fa_mpjpe /= n;
  m.mrrpe /= n;
  m.mpjpe_curve = mp.mean();
  m.fa_mpjpe_curve = fa.mean();
  return m;
}

MaskedTokens normalized_tokens(const MotionSequence& m, const NormStats& norm) {
  MaskedTokens t{pack_tokens(m), m.valid};
  norm.apply(t.tokens);
  return t;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int default_threads() {
  if (const char* v = std::getenv("BIMANUAL_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return 1;
}

}  // namespace bimanual
