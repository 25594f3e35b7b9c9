#include <stdexcept>

#include "bimanual/checkpoint.hpp"
#include "bimanual/ops.hpp"
#include "bimanual/pipeline.hpp"
#include "pipeline_detail.hpp"

namespace bimanual {

using nlohmann::json;

PoseHead::PoseHead(std::size_t in, std::size_t hidden, Rng& rng)
    : mlp_(in, hidden, kTokenDim, rng, nn::Activation::Silu) {}

Tensor PoseHead::forward(const Tensor& obs) const { return mlp_.forward(obs); }

void PoseHead::collect_parameters(std::string_view prefix, std::vector<nn::NamedTensor>& out) const {
  mlp_.collect_parameters(nn::join_name(prefix, "mlp"), out);
}

std::string StaticPoseModel::serialize() const {
  const json header{{"kind", "static_pose"},
                    {"config", config.to_json()},
                    {"norm", norm.to_json()},
                    {"hidden", hidden},
                    {"train", train_info}};
  return serialize_checkpoint(header, head);
}

StaticPoseModel StaticPoseModel::deserialize(const std::string& bytes) {
  const json header = checkpoint_header(bytes);
  if (header.at("kind") != "static_pose") throw std::runtime_error("checkpoint is not a static pose model");
  StaticPoseModel m;
  m.config = DenoiserConfig::from_json(header.at("config"));
  m.norm = NormStats::from_json(header.at("norm"));
  m.hidden = header.at("hidden").get<int>();
  m.train_info = header.value("train", json::object());
  Rng rng(0);
  m.head = PoseHead(observation_width(m.config), static_cast<std::size_t>(m.hidden), rng);
  deserialize_checkpoint(bytes, m.head);
  return m;
}

void StaticPoseModel::save(const std::string& path) const { write_file(path, serialize()); }

StaticPoseModel StaticPoseModel::load(const std::string& path) { return deserialize(read_file(path)); }

Trained<StaticPoseModel> train_static_pose(const std::vector<TrajectoryRecord>& train_all, const DenoiserConfig& cfg_in,
                                           const TrainConfig& tcfg, int hidden) {
  if (hidden < 1) throw std::invalid_argument("static pose: hidden width must be positive");
  std::vector<TrajectoryRecord> train;
  for (const auto& r : train_all) {
    if (r.tier == Tier::Full3d) train.push_back(r);
  }
  if (train.empty()) throw std::invalid_argument("static pose: no full3d records");
  DenoiserConfig cfg = cfg_in;
  cfg.mode = DenoiserMode::Forecasting;
  Trained<StaticPoseModel> out;
  StaticPoseModel& m = out.model;
  m.config = cfg;
  m.hidden = hidden;
  m.norm = norm_stats(train);
  Rng init = Rng(tcfg.seed).derive(1);
  m.head = PoseHead(observation_width(cfg), static_cast<std::size_t>(hidden), init);

  std::vector<double> obs, target;
  for (const auto& r : train) {
    const auto o = observation_features(r, cfg);
    obs.insert(obs.end(), o.begin(), o.end());
    TokenMatrix tok = pack_tokens(*r.motion);
    m.norm.apply(tok);
    target.insert(target.end(), tok.data(), tok.data() + kTokenDim);
  }
  const std::size_t F = observation_width(cfg);
  const auto params = m.head.parameters();
  out.log = detail::fit(params, train.size(), tcfg, nullptr, [&](const std::vector<std::size_t>& idx, Rng&) {
    std::vector<double> o, t;
    for (auto i : idx) {
      o.insert(o.end(), obs.begin() + static_cast<long>(i * F), obs.begin() + static_cast<long>((i + 1) * F));
      t.insert(t.end(), target.begin() + static_cast<long>(i * kTokenDim),
               target.begin() + static_cast<long>((i + 1) * kTokenDim));
    }
    const Tensor pred = m.head.forward(Tensor::from({idx.size(), F}, std::move(o)));
    return mean(square(pred - Tensor::from({idx.size(), static_cast<std::size_t>(kTokenDim)}, std::move(t))));
  });
  detail::round_to_checkpoint(m.head);
  m.train_info = {{"train_config", tcfg.to_json()},
                  {"records", train.size()},
                  {"data_hash", detail::dataset_hash(train)},
                  {"log", out.log.to_json()}};
  return out;
}

MotionSequence static_pose_baseline(const StaticPoseModel* model, const TrajectoryRecord& record, int horizon,
                                    bool oracle) {
  if (horizon < 1) throw std::invalid_argument("static pose: horizon must be positive");
  FramePose first;
  if (oracle) {
    if (!record.motion) throw std::invalid_argument("static pose: oracle mode needs motion on record " + record.id);
    first = record.motion->frames.at(0);
  } else {
    if (!model) throw std::invalid_argument("static pose: no pose head");
    NoGradGuard guard;
    const auto o = observation_features(record, model->config);
    const Tensor pred = model->head.forward(Tensor::from({1, o.size()}, o));
    TokenMatrix tok(1, kTokenDim);
    std::copy(pred.data().begin(), pred.data().end(), tok.data());
    model->norm.invert(tok);
    first = unpack_tokens(tok).frames[0];
  }
  MotionSequence seq;
  seq.frames.assign(static_cast<std::size_t>(horizon), first);
  seq.valid.assign(static_cast<std::size_t>(horizon), 1);
  return seq;
}

}  // namespace bimanual
