#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "bimanual/denoiser.hpp"
#include "bimanual/metrics.hpp"
#include "bimanual/refine.hpp"
#include "bimanual/synthetic.hpp"

namespace bimanual {

/// Per-axis mean and standard deviation of wrist translations (both hands, valid frames).
struct NormStats {
  Vec3 mean = Vec3::Zero();
  Vec3 std = Vec3::Ones();

  void validate() const;
  /// Normalizes (apply) or restores (invert) the wrist translation slots of T x 198 tokens.
  void apply(TokenMatrix& tokens) const;
  void invert(TokenMatrix& tokens) const;
  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& j);
};

/// Records must carry motion. Throws std::invalid_argument on an empty set or a zero-variance axis.
NormStats norm_stats(const std::vector<TrajectoryRecord>& train);

enum class Supervision { ThreeDOnly, ThreeDPlus2D };
std::string to_string(Supervision s);
Supervision parse_supervision(const std::string& s);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double lr = 2e-3;
  std::string optimizer = "adam";
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  bool cosine_decay = true;    // lr decays to lr / 10 over the run
  bool camera_augment = true;  // lifting only, redrawn every epoch
  CameraAugmentConfig augment;
  DegradeConfig keypoint_noise{1.0, 0.02};  // lifting only, 2D jitter and scale redrawn every epoch
  double loss_weight_cap = 1.0;  // diffusion items weighted min(1 / alpha_bar_t, cap); 1 = plain eps MSE
  std::uint64_t seed = 0;
  std::string scale = "desk";

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Desk-scale and documentation-only paper-scale denoiser presets.
DenoiserConfig denoiser_preset(const std::string& scale, DenoiserMode mode);

/// A trained denoiser (diffusion or regressor) with its normalization and schedule.
struct MotionModel {
  std::string kind;  // lifting | forecasting | regressor
  DenoiserConfig config;
  NormStats norm;
  Denoiser net;
  NoiseSchedule schedule;
  nlohmann::json train_info;

  std::string serialize() const;
  static MotionModel deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static MotionModel load(const std::string& path);
  /// FNV-1a of the serialized checkpoint.
  std::string hash() const;
};

/// Pose head for the static baseline: t=0 observation features -> t=0 normalized tokens.
class PoseHead : public nn::Module {
 public:
  PoseHead() = default;
  PoseHead(std::size_t in, std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& obs) const;
  void collect_parameters(std::string_view prefix, std::vector<nn::NamedTensor>& out) const override;

 private:
  nn::Mlp mlp_;
};

struct StaticPoseModel {
  DenoiserConfig config;  // observation feature layout
  NormStats norm;
  int hidden = 256;
  PoseHead head;
  nlohmann::json train_info;

  std::string serialize() const;
  static StaticPoseModel deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static StaticPoseModel load(const std::string& path);
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  nlohmann::json to_json() const;
};

template <class M>
struct Trained {
  M model;
  TrainLog log;
};

/// Lifting diffusion model on full3d records, with per-epoch camera augmentation.
Trained<MotionModel> train_lifting(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg,
                                   const TrainConfig& tcfg);

/// Forecasting diffusion model. 3d_only keeps full3d records; 3d_plus_2d adds imputed ones.
Trained<MotionModel> train_forecaster(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg,
                                      const TrainConfig& tcfg, Supervision supervision);

/// Direct regressor: same encoder without a step token, L2 on tokens.
Trained<MotionModel> train_regressor(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg,
                                     const TrainConfig& tcfg);

Trained<StaticPoseModel> train_static_pose(const std::vector<TrajectoryRecord>& train, const DenoiserConfig& cfg,
                                           const TrainConfig& tcfg, int hidden = 256);

struct SampleConfig {
  int n_samples = 1;
  std::uint64_t seed = 0;
  SampleOptions options;
  std::size_t batch = 64;  // sampled sequences per forward pass
};

/// result[r][s]: sample s for record r, in the first-frame camera frame, with the
/// record's frame mask. Noise for a record depends only on (seed, record id, s).
std::vector<std::vector<MotionSequence>> lift(const MotionModel& model, const std::vector<TrajectoryRecord>& records,
                                              const SampleConfig& cfg);

/// Diffusion forecasts, or n identical regressor outputs. Reads t=0 observables only.
std::vector<std::vector<MotionSequence>> forecast(const MotionModel& model,
                                                  const std::vector<TrajectoryRecord>& records,
                                                  const SampleConfig& cfg);

/// Repeats the t=0 pose (from the head, or the record's own motion when oracle) over the horizon.
MotionSequence static_pose_baseline(const StaticPoseModel* model, const TrajectoryRecord& record, int horizon,
                                    bool oracle = false);

struct ImputeConfig {
  std::uint64_t seed = 0;
  RefineConfig refine;
  int n_samples = 1;  // > 1 keeps the sample with the lowest refined loss
  int threads = 1;
  SampleOptions options;

  nlohmann::json to_json() const;
  static ImputeConfig from_json(const nlohmann::json& j);
};

struct ImputeResult {
  std::vector<TrajectoryRecord> records;  // tier imputed, same order as the input minus skipped ones
  std::vector<MotionSequence> lifted;     // unrefined lifting output, parallel to records
  std::vector<std::pair<std::string, std::string>> skipped;  // id, reason
};

ImputeResult impute_labels(const MotionModel& model, const std::vector<TrajectoryRecord>& records,
                           const ImputeConfig& cfg);

struct MotionMetrics {
  std::size_t records = 0;
  double mpjpe = 0.0, pa_mpjpe = 0.0, fa_mpjpe = 0.0, mrrpe = 0.0;
  std::vector<double> mpjpe_curve, fa_mpjpe_curve;

  nlohmann::json to_json() const;
};

/// Averages per-record metrics; gt motions come from the records.
MotionMetrics evaluate_motions(const std::vector<MotionSequence>& predictions,
                               const std::vector<TrajectoryRecord>& records);

/// Normalized tokens of a motion for diversity measures.
MaskedTokens normalized_tokens(const MotionSequence& m, const NormStats& norm);

/// Runs fn(i) for i < n on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Worker count from BIMANUAL_THREADS, default 1.
int default_threads();

}  // namespace bimanual
