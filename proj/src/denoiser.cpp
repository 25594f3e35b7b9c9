#include "bimanual/denoiser.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "bimanual/ops.hpp"

namespace bimanual {

using nlohmann::json;

std::string to_string(DenoiserMode mode) { return mode == DenoiserMode::Lifting ? "lifting" : "forecasting"; }

std::string to_string(LiftCondition c) {
  switch (c) {
    case LiftCondition::None: return "none";
    case LiftCondition::ExtKpe: return "ext_kpe";
    case LiftCondition::Plucker: return "plucker";
    case LiftCondition::All: return "all";
  }
  return "?";
}

DenoiserMode parse_mode(const std::string& s) {
  if (s == "lifting") return DenoiserMode::Lifting;
  if (s == "forecasting") return DenoiserMode::Forecasting;
  throw std::invalid_argument("unknown denoiser mode '" + s + "'");
}

LiftCondition parse_lift_condition(const std::string& s) {
  if (s == "none") return LiftCondition::None;
  if (s == "ext_kpe") return LiftCondition::ExtKpe;
  if (s == "plucker") return LiftCondition::Plucker;
  if (s == "all") return LiftCondition::All;
  throw std::invalid_argument("unknown lifting condition '" + s + "' (expected none|ext_kpe|plucker|all)");
}

void DenoiserConfig::validate() const {
  if (layers < 1 || heads < 1 || latent_dim < 1 || ff_dim < 1 || horizon < 1 || diffusion_T < 1) {
    throw std::invalid_argument("DenoiserConfig: sizes must be positive");
  }
  if (latent_dim % heads != 0) throw std::invalid_argument("DenoiserConfig: latent_dim must be divisible by heads");
  if (token_dim != kTokenDim) throw std::invalid_argument("DenoiserConfig: token_dim must be 198");
  if (dropout < 0.0 || dropout >= 1.0 || cond_drop < 0.0 || cond_drop > 1.0) {
    throw std::invalid_argument("DenoiserConfig: probabilities out of range");
  }
  if (kpe_frequencies < 0) throw std::invalid_argument("DenoiserConfig: kpe_frequencies must be >= 0");
}

json DenoiserConfig::to_json() const {
  return {{"layers", layers},
          {"heads", heads},
          {"latent_dim", latent_dim},
          {"ff_dim", ff_dim},
          {"dropout", dropout},
          {"horizon", horizon},
          {"token_dim", token_dim},
          {"diffusion_T", diffusion_T},
          {"cond_drop", cond_drop},
          {"kpe_frequencies", kpe_frequencies},
          {"zero_init_output", zero_init_output},
          {"diffusion", diffusion},
          {"mode", to_string(mode)},
          {"lift_condition", to_string(lift_condition)},
          {"image_width", image_width},
          {"image_height", image_height}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
  static const std::set<std::string> known = {"layers",          "heads",     "latent_dim",       "ff_dim",
                                              "dropout",         "horizon",   "token_dim",        "diffusion_T",
                                              "cond_drop",       "kpe_frequencies", "zero_init_output", "diffusion",
                                              "mode",            "lift_condition",  "image_width",      "image_height"};
  if (!j.is_object()) throw std::invalid_argument("denoiser config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown denoiser config key '" + key + "'");
  }
  DenoiserConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.horizon = j.value("horizon", c.horizon);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.diffusion_T = j.value("diffusion_T", c.diffusion_T);
  c.cond_drop = j.value("cond_drop", c.cond_drop);
  c.kpe_frequencies = j.value("kpe_frequencies", c.kpe_frequencies);
  c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
  c.diffusion = j.value("diffusion", c.diffusion);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("lift_condition")) c.lift_condition = parse_lift_condition(j.at("lift_condition").get<std::string>());
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  c.validate();
  return c;
}

namespace {

constexpr std::size_t kCondKeypoints = kHands * kKeypoints;  // 42

bool uses_plucker(LiftCondition c) { return c == LiftCondition::Plucker || c == LiftCondition::All; }
bool uses_kpe(LiftCondition c) { return c == LiftCondition::ExtKpe || c == LiftCondition::All; }

constexpr double kMaskBias = -1e9;

}  // namespace

std::size_t lift_keypoint_width(const DenoiserConfig& cfg) {
  if (cfg.lift_condition == LiftCondition::None) return 2;
  std::size_t w = 0;
  if (uses_plucker(cfg.lift_condition)) w += 6;
  if (uses_kpe(cfg.lift_condition)) w += kpe_width(cfg.kpe_frequencies);
  return w;
}

std::size_t lift_frame_width(const DenoiserConfig& cfg) { return uses_kpe(cfg.lift_condition) ? 9 : 0; }

std::size_t observation_width(const DenoiserConfig& cfg) {
  return kCondKeypoints * (kpe_width(cfg.kpe_frequencies) + 3) + 4;
}

LiftFeatures build_lifting_features(const Keypoints2D& keypoints2d, const std::vector<KeypointFlags>& valid,
                                    const std::vector<Camera>& cameras, const DenoiserConfig& cfg) {
  const std::size_t T = cameras.size();
  if (keypoints2d.size() != T || valid.size() != T) {
    throw std::invalid_argument("build_lifting_features: keypoints, flags and cameras differ in frame count");
  }
  const std::size_t kw = lift_keypoint_width(cfg), fw = lift_frame_width(cfg);
  LiftFeatures f;
  f.frames = T;
  f.keypoint.assign(T * kCondKeypoints * kw, 0.0);
  f.keypoint_mask.assign(T * kCondKeypoints, 0.0);
  f.frame.assign(T * fw, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const Camera& cam = cameras[t];
    cam.validate();
    if (fw > 0) {
      const auto e = extrinsics_encode(cam);
      std::copy(e.begin(), e.end(), f.frame.begin() + static_cast<long>(t * fw));
    }
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        const std::size_t slot = t * kCondKeypoints + static_cast<std::size_t>(h * kKeypoints + k);
        if (!valid[t][h][k]) continue;
        f.keypoint_mask[slot] = 1.0;
        const Vec2& x = keypoints2d[t][h][k];
        double* out = f.keypoint.data() + slot * kw;
        if (cfg.lift_condition == LiftCondition::None) {
          out[0] = 2.0 * x.x() / cfg.image_width - 1.0;
          out[1] = 2.0 * x.y() / cfg.image_height - 1.0;
          continue;
        }
        if (uses_plucker(cfg.lift_condition)) {
          const PluckerRay r = backproject_ray(cam, x);
          for (int c = 0; c < 3; ++c) {
            *out++ = r.d[c];
          }
          for (int c = 0; c < 3; ++c) *out++ = r.m[c];
        }
        if (uses_kpe(cfg.lift_condition)) {
          for (double v : kpe_encode(x, cam.K, cfg.kpe_frequencies)) *out++ = v;
        }
      }
    }
  }
  return f;
}

std::vector<double> observation_features(const TrajectoryRecord& record, const DenoiserConfig& cfg) {
  if (record.frames() == 0) throw std::invalid_argument("observation_features: record has no frames");
  const Intrinsics& K = record.cameras[0].K;
  const std::size_t kw = kpe_width(cfg.kpe_frequencies);
  std::vector<double> out;
  out.reserve(observation_width(cfg));
  for (int h = 0; h < kHands; ++h) {
    for (int k = 0; k < kKeypoints; ++k) {
      if (!record.keypoint_valid[0][h][k]) {
        out.insert(out.end(), kw + 3, 0.0);
        continue;
      }
      const Vec2& x = record.keypoints2d[0][h][k];
      const auto e = kpe_encode(x, K, cfg.kpe_frequencies);
      out.insert(out.end(), e.begin(), e.end());
      out.push_back(2.0 * x.x() / record.image_width - 1.0);
      out.push_back(2.0 * x.y() / record.image_height - 1.0);
      out.push_back(1.0);
    }
  }
  out.push_back(K.fx / 1000.0);
  out.push_back(K.fy / 1000.0);
  out.push_back(K.px / record.image_width);
  out.push_back(K.py / record.image_height);
  return out;
}

ConditionBatch stack_lift_features(const std::vector<const LiftFeatures*>& items, const DenoiserConfig& cfg) {
  if (items.empty()) throw std::invalid_argument("stack_lift_features: empty batch");
  const std::size_t B = items.size(), T = items[0]->frames;
  const std::size_t kw = lift_keypoint_width(cfg), fw = lift_frame_width(cfg);
  std::vector<double> kp, mask, frame;
  kp.reserve(B * T * kCondKeypoints * kw);
  mask.reserve(B * T * kCondKeypoints);
  frame.reserve(B * T * fw);
  for (const LiftFeatures* f : items) {
    if (f->frames != T || f->keypoint.size() != T * kCondKeypoints * kw || f->frame.size() != T * fw) {
      throw std::invalid_argument("stack_lift_features: items differ in shape or variant");
    }
    kp.insert(kp.end(), f->keypoint.begin(), f->keypoint.end());
    mask.insert(mask.end(), f->keypoint_mask.begin(), f->keypoint_mask.end());
    frame.insert(frame.end(), f->frame.begin(), f->frame.end());
  }
  ConditionBatch c;
  c.keypoint = Tensor::from({B, T, kCondKeypoints, kw}, std::move(kp));
  c.keypoint_mask = Tensor::from({B, T, kCondKeypoints, 1}, std::move(mask));
  if (fw > 0) c.frame = Tensor::from({B, T, fw}, std::move(frame));
  return c;
}

ConditionBatch stack_observations(const std::vector<std::vector<double>>& items) {
  if (items.empty()) throw std::invalid_argument("stack_observations: empty batch");
  const std::size_t F = items[0].size();
  std::vector<double> all;
  all.reserve(items.size() * F);
  for (const auto& v : items) {
    if (v.size() != F) throw std::invalid_argument("stack_observations: items differ in width");
    all.insert(all.end(), v.begin(), v.end());
  }
  ConditionBatch c;
  c.obs = Tensor::from({items.size(), F}, std::move(all));
  return c;
}

Tensor frame_mask_tensor(const std::vector<const std::vector<std::uint8_t>*>& valid, std::size_t frames) {
  std::vector<double> m;
  m.reserve(valid.size() * frames);
  for (const auto* v : valid) {
    if (v->size() != frames) throw std::invalid_argument("frame_mask_tensor: mask length mismatch");
    for (auto f : *v) m.push_back(f ? 1.0 : 0.0);
  }
  return Tensor::from({valid.size(), frames}, std::move(m));
}

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.latent_dim);
  input_ = nn::Linear(kTokenDim, d, rng);
  if (cfg_.diffusion) {
    step1_ = nn::Linear(d, d, rng);
    step2_ = nn::Linear(d, d, rng);
    skip_ = nn::Linear(kTokenDim, kTokenDim, rng);
    skip_.zero_weights();
  }
  if (cfg_.mode == DenoiserMode::Forecasting) {
    obs_mlp_ = nn::Mlp(observation_width(cfg_), d, d, rng, nn::Activation::Silu);
  } else {
    const std::size_t kw = lift_keypoint_width(cfg_);
    lift_proj_ = nn::Linear(kCondKeypoints * kw + lift_frame_width(cfg_), d, rng);
    std::vector<double> miss = rng.normal_vector(kw);
    for (double& v : miss) v *= 0.02;
    missing_keypoint_ = Tensor::from({kw}, std::move(miss), true);
  }
  std::vector<double> null = rng.normal_vector(d);
  for (double& v : null) v *= 0.02;
  null_condition_ = Tensor::from({d}, std::move(null), true);
  for (int l = 0; l < cfg_.layers; ++l) {
    layers_.emplace_back(d, static_cast<std::size_t>(cfg_.heads), static_cast<std::size_t>(cfg_.ff_dim), rng);
  }
  final_norm_ = nn::LayerNorm(d);
  output_ = nn::Linear(d, kTokenDim, rng);
  if (cfg_.zero_init_output) output_.zero_weights();
  if (cfg_.diffusion) schedule_ = cosine_schedule(cfg_.diffusion_T);
  std::vector<double> pos(static_cast<std::size_t>(cfg_.horizon));
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<double>(i);
  positions_ = nn::sinusoidal_table(pos, d);
}

Tensor Denoiser::condition_tokens(const ConditionBatch& cond, const std::vector<std::uint8_t>& cond_keep) const {
  const auto d = static_cast<std::size_t>(cfg_.latent_dim);
  Tensor c;
  std::size_t B = 0;
  if (cfg_.mode == DenoiserMode::Forecasting) {
    if (!cond.obs.defined() || cond.obs.dim() != 2 || cond.obs.size(1) != observation_width(cfg_)) {
      throw std::invalid_argument("Denoiser: forecasting condition must be [B, " +
                                  std::to_string(observation_width(cfg_)) + "]");
    }
    B = cond.obs.size(0);
    c = reshape(obs_mlp_.forward(cond.obs), {B, 1, d});
  } else {
    const std::size_t kw = lift_keypoint_width(cfg_), fw = lift_frame_width(cfg_);
    if (!cond.keypoint.defined() || cond.keypoint.dim() != 4 || cond.keypoint.size(2) != kCondKeypoints ||
        cond.keypoint.size(3) != kw) {
      throw std::invalid_argument("Denoiser: lifting keypoint features must be [B, T, 42, " + std::to_string(kw) + "]");
    }
    B = cond.keypoint.size(0);
    const std::size_t T = cond.keypoint.size(1);
    const Tensor filled = cond.keypoint + (1.0 - cond.keypoint_mask) * missing_keypoint_;
    Tensor flat = reshape(filled, {B, T, kCondKeypoints * kw});
    if (fw > 0) {
      if (!cond.frame.defined() || cond.frame.shape() != Shape{B, T, fw}) {
        throw std::invalid_argument("Denoiser: lifting frame features must be [B, T, " + std::to_string(fw) + "]");
      }
      flat = concat({flat, cond.frame}, 2);
    }
    c = lift_proj_.forward(flat);
  }
  if (cond_keep.size() != B) throw std::invalid_argument("Denoiser: one condition-keep flag per item required");
  bool all_kept = true;
  std::vector<double> keep(B);
  for (std::size_t i = 0; i < B; ++i) {
    keep[i] = cond_keep[i] ? 1.0 : 0.0;
    all_kept = all_kept && cond_keep[i];
  }
  if (all_kept) return c;
  const Tensor k = Tensor::from({B, 1, 1}, keep);
  return c * k + (1.0 - k) * null_condition_;
}

Tensor Denoiser::forward(const Tensor& x, const std::vector<int>& steps, const ConditionBatch& cond,
                         const std::vector<std::uint8_t>& cond_keep, const Tensor& frame_mask,
                         const nn::ForwardContext& ctx) const {
  if (x.dim() != 3 || x.size(2) != kTokenDim) {
    throw std::invalid_argument("Denoiser: tokens must be [B, T, 198], got " + shape_str(x.shape()));
  }
  const std::size_t B = x.size(0), T = x.size(1), d = static_cast<std::size_t>(cfg_.latent_dim);
  if (T > static_cast<std::size_t>(cfg_.horizon)) {
    throw std::invalid_argument("Denoiser: " + std::to_string(T) + " frames exceed horizon " +
                                std::to_string(cfg_.horizon));
  }
  if (frame_mask.shape() != Shape{B, T}) {
    throw std::invalid_argument("Denoiser: frame mask must be [B, T], got " + shape_str(frame_mask.shape()));
  }
  std::vector<Tensor> parts;
  Tensor h;
  if (cfg_.diffusion) {
    if (steps.size() != B) throw std::invalid_argument("Denoiser: one diffusion step per item required");
    // Input scaled by sqrt(alpha_bar_t).
    std::vector<double> gain(B);
    for (std::size_t b = 0; b < B; ++b) gain[b] = std::sqrt(schedule_.alpha_bar.at(static_cast<std::size_t>(steps[b])));
    h = input_.forward(x * Tensor::from({B, 1, 1}, gain)) + slice(positions_, 0, 0, T);
    std::vector<double> s(steps.begin(), steps.end());
    const Tensor e = step2_.forward(silu(step1_.forward(nn::sinusoidal_table(s, d))));
    parts.push_back(reshape(e, {B, 1, d}));
  } else {
    h = input_.forward(x) + slice(positions_, 0, 0, T);
  }
  const Tensor c = condition_tokens(cond, cond_keep);
  if (c.size(0) != B) throw std::invalid_argument("Denoiser: condition batch size differs from tokens");
  if (cfg_.mode == DenoiserMode::Forecasting) {
    parts.push_back(c);
  } else {
    if (c.size(1) != T) throw std::invalid_argument("Denoiser: lifting condition frame count differs from tokens");
    h = h + c;
  }
  const std::size_t prefix = parts.size();
  parts.push_back(h);
  Tensor seq = prefix > 0 ? concat(parts, 1) : h;
  const std::size_t S = prefix + T;

  std::vector<double> bias(B * S, 0.0);
  const auto m = frame_mask.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      if (m[b * T + t] == 0.0) bias[b * S + prefix + t] = kMaskBias;
    }
  }
  const Tensor key_bias = Tensor::from({B, 1, 1, S}, std::move(bias));
  for (const auto& layer : layers_) seq = layer.forward(seq, key_bias, ctx);
  seq = final_norm_.forward(seq);
  if (prefix > 0) seq = slice(seq, 1, prefix, S);
  return output_.forward(seq);
}

EpsFn Denoiser::bind(const ConditionBatch& cond, const Tensor& frame_mask, const nn::ForwardContext& ctx) const {
  return [this, cond, frame_mask, ctx](const Tensor& xt, const std::vector<int>& steps,
                                       const std::vector<std::uint8_t>& keep) {
    const Tensor f = forward(xt, steps, cond, keep, frame_mask, ctx);
    std::vector<double> sigma(steps.size()), alpha(steps.size()), ratio(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const double ab = schedule_.alpha_bar.at(static_cast<std::size_t>(steps[i]));
      sigma[i] = std::sqrt(1.0 - ab);
      alpha[i] = std::sqrt(ab);
      ratio[i] = alpha[i] / sigma[i];
    }
    const Shape s{steps.size(), 1, 1};
    const Tensor v = f + skip_.forward(xt) * Tensor::from(s, ratio);
    return xt * Tensor::from(s, sigma) + v * Tensor::from(s, alpha);
  };
}

void Denoiser::init_skip(const TokenMatrix& frames, double rel_threshold) {
  if (!cfg_.diffusion) throw std::logic_error("init_skip: regressor has no skip map");
  if (frames.cols() != kTokenDim || frames.rows() < 2) throw std::invalid_argument("init_skip: need >= 2 rows of 198 tokens");
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  const Eigen::MatrixXd centered = frames.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(frames.rows());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double cut = rel_threshold * ev.sum();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(kTokenDim, kTokenDim);
  for (int i = 0; i < kTokenDim; ++i) {
    if (ev[i] < cut) P += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
  }
  std::vector<double> w(static_cast<std::size_t>(kTokenDim * kTokenDim)), b(kTokenDim);
  for (int i = 0; i < kTokenDim; ++i) {
    for (int j = 0; j < kTokenDim; ++j) w[static_cast<std::size_t>(i * kTokenDim + j)] = P(i, j);
  }
  const Eigen::VectorXd pb = -(P * mean.transpose());
  for (int j = 0; j < kTokenDim; ++j) b[static_cast<std::size_t>(j)] = pb[j];
  skip_.assign(w, b);
}

Tensor Denoiser::regress(const ConditionBatch& cond, const Tensor& frame_mask, const nn::ForwardContext& ctx) const {
  const std::size_t B = frame_mask.size(0), T = frame_mask.size(1);
  return forward(Tensor::zeros({B, T, kTokenDim}), {}, cond, std::vector<std::uint8_t>(B, 1), frame_mask, ctx);
}

void Denoiser::collect_parameters(std::string_view prefix, std::vector<nn::NamedTensor>& out) const {
  input_.collect_parameters(nn::join_name(prefix, "input"), out);
  if (cfg_.diffusion) {
    step1_.collect_parameters(nn::join_name(prefix, "step.0"), out);
    step2_.collect_parameters(nn::join_name(prefix, "step.1"), out);
    skip_.collect_parameters(nn::join_name(prefix, "skip"), out);
  }
  if (cfg_.mode == DenoiserMode::Forecasting) {
    obs_mlp_.collect_parameters(nn::join_name(prefix, "obs"), out);
  } else {
    lift_proj_.collect_parameters(nn::join_name(prefix, "lift_proj"), out);
    out.push_back({nn::join_name(prefix, "missing_keypoint"), missing_keypoint_});
  }
  out.push_back({nn::join_name(prefix, "null_condition"), null_condition_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].collect_parameters(nn::join_name(prefix, "layers." + std::to_string(l)), out);
  }
  final_norm_.collect_parameters(nn::join_name(prefix, "final_norm"), out);
  output_.collect_parameters(nn::join_name(prefix, "output"), out);
}

}  // namespace bimanual
