#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bimanual/diffusion.hpp"
#include "bimanual/nn.hpp"
#include "bimanual/record.hpp"

namespace bimanual {

enum class DenoiserMode { Lifting, Forecasting };

/// Lifting condition variants: raw normalized 2D only, extrinsics + KPE, Plücker rays, all three.
enum class LiftCondition { None, ExtKpe, Plucker, All };

std::string to_string(DenoiserMode mode);
std::string to_string(LiftCondition c);
DenoiserMode parse_mode(const std::string& s);
LiftCondition parse_lift_condition(const std::string& s);

struct DenoiserConfig {
  int layers = 2;
  int heads = 4;
  int latent_dim = 64;
  int ff_dim = 128;
  double dropout = 0.1;
  int horizon = 32;
  int token_dim = kTokenDim;
  int diffusion_T = 100;
  double cond_drop = 0.1;
  int kpe_frequencies = kDefaultKpeFrequencies;
  bool zero_init_output = false;
  bool diffusion = true;  // false: direct regressor without a step token
  DenoiserMode mode = DenoiserMode::Lifting;
  LiftCondition lift_condition = LiftCondition::All;
  int image_width = 640;
  int image_height = 480;

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

/// Per-keypoint feature width of the lifting condition (before the learned projection).
std::size_t lift_keypoint_width(const DenoiserConfig& cfg);
/// Per-frame feature width (extrinsics) of the lifting condition, possibly 0.
std::size_t lift_frame_width(const DenoiserConfig& cfg);
/// Width of the raw t=0 observation vector.
std::size_t observation_width(const DenoiserConfig& cfg);

/// Unlearned inputs to the lifting condition for one sequence.
struct LiftFeatures {
  std::size_t frames = 0;
  std::vector<double> keypoint;   // frames x 42 x lift_keypoint_width
  std::vector<double> keypoint_mask;  // frames x 42 (1 = observed)
  std::vector<double> frame;      // frames x lift_frame_width
};

/// Assembles extrinsics, Plücker rays and KPE (or raw normalized 2D for the "none" variant)
/// for every frame and keypoint. Rays are in the world frame of the cameras, which the
/// synthetic data fixes to the first camera. Invalid keypoints are zero-filled and masked.
LiftFeatures build_lifting_features(const Keypoints2D& keypoints2d, const std::vector<KeypointFlags>& valid,
                                    const std::vector<Camera>& cameras, const DenoiserConfig& cfg);

/// Raw t=0 observation: per keypoint KPE and normalized pixel coordinates with a validity
/// flag, then fx/1000, fy/1000, px/W, py/H. Reads frame 0 only.
std::vector<double> observation_features(const TrajectoryRecord& record, const DenoiserConfig& cfg);

/// Batched conditioning inputs. Lifting uses keypoint/keypoint_mask/frame, forecasting uses obs.
struct ConditionBatch {
  Tensor keypoint;       // [B, T, 42, f]
  Tensor keypoint_mask;  // [B, T, 42, 1]
  Tensor frame;          // [B, T, g] or undefined when g = 0
  Tensor obs;            // [B, F]
};

ConditionBatch stack_lift_features(const std::vector<const LiftFeatures*>& items, const DenoiserConfig& cfg);
ConditionBatch stack_observations(const std::vector<std::vector<double>>& items);

/// Transformer-encoder denoiser. Sequence: [step token] [observation token (forecasting)] then
/// one token per frame; lifting adds a per-frame condition token to the frame tokens.
class Denoiser : public nn::Module {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, Rng& rng);

  const DenoiserConfig& config() const { return cfg_; }

  /// x [B, T, 198] -> [B, T, 198]. steps is ignored (may be empty) for the regressor.
  Tensor forward(const Tensor& x, const std::vector<int>& steps, const ConditionBatch& cond,
                 const std::vector<std::uint8_t>& cond_keep, const Tensor& frame_mask,
                 const nn::ForwardContext& ctx) const;

  /// Condition embedding in latent width: lifting [B, T, d], forecasting [B, 1, d].
  Tensor condition_tokens(const ConditionBatch& cond, const std::vector<std::uint8_t>& cond_keep) const;

  /// Noise estimate sigma_t x_t + a_t (F(x_t) + (a_t / sigma_t) S x_t) on the model's cosine
  /// schedule, a_t = sqrt(alpha_bar_t), F the raw forward output and S a learned per-frame
  /// linear map (zero at init) that carries the full token rank past the latent width.
  EpsFn bind(const ConditionBatch& cond, const Tensor& frame_mask, const nn::ForwardContext& ctx) const;

  /// Starts the skip map as the projector onto the low-variance principal directions of
  /// training frames (rows of 198 normalized tokens), with b = -P mean. Eigenvalues below
  /// rel_threshold times the total variance count as low-variance.
  void init_skip(const TokenMatrix& frames, double rel_threshold = 1e-4);

  /// Regressor output for a zero input sequence.
  Tensor regress(const ConditionBatch& cond, const Tensor& frame_mask, const nn::ForwardContext& ctx) const;

  void collect_parameters(std::string_view prefix, std::vector<nn::NamedTensor>& out) const override;

 private:
  DenoiserConfig cfg_;
  nn::Linear input_, output_;
  nn::Linear skip_;  // diffusion only
  nn::Linear step1_, step2_;
  nn::Mlp obs_mlp_;
  nn::Linear lift_proj_;
  Tensor missing_keypoint_;
  Tensor null_condition_;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm final_norm_;
  Tensor positions_;  // [horizon, d], constant
  NoiseSchedule schedule_;
};

/// Frame mask [B, T] from per-item valid flags.
Tensor frame_mask_tensor(const std::vector<const std::vector<std::uint8_t>*>& valid, std::size_t frames);

}  // namespace bimanual
