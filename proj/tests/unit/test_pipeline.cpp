#include <cmath>

#include "bimanual/checkpoint.hpp"
#include "bimanual/dataset_io.hpp"
#include "bimanual/grad_check.hpp"
#include "bimanual/pipeline.hpp"
#include "doctest.h"

using namespace bimanual;

namespace {

DenoiserConfig tiny(DenoiserMode mode) {
  DenoiserConfig c = denoiser_preset("desk", mode);
  c.layers = 1;
  c.latent_dim = 32;
  c.heads = 2;
  c.ff_dim = 64;
  return c;
}

TrainConfig short_run(int epochs, std::uint64_t seed = 0) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.seed = seed;
  return t;
}

std::vector<TrajectoryRecord> records(std::size_t n, std::uint64_t seed) {
  MotionGeneratorConfig g;
  g.seed = seed;
  return generate_dataset(g, n);
}

std::string motions_text(const std::vector<MotionSequence>& m) {
  std::string s;
  for (const auto& seq : m) {
    const TokenMatrix t = pack_tokens(seq);
    s.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double));
    s.append(seq.valid.begin(), seq.valid.end());
  }
  return s;
}

MotionSequence shifted(const MotionSequence& m, const Vec3& d) {
  MotionSequence out = m;
  for (auto& f : out.frames) {
    for (auto& h : f) h.wrist += d;
  }
  return out;
}

}  // namespace

TEST_CASE("norm stats match a two-pass oracle and round trip") {
  const auto train = records(12, 4);
  const NormStats s = norm_stats(train);
  Vec3 sum = Vec3::Zero();
  double n = 0.0;
  for (const auto& r : train) {
    for (std::size_t t = 0; t < r.frames(); ++t) {
      if (!r.motion->valid[t]) continue;
      for (const auto& h : r.motion->frames[t]) {
        sum += h.wrist;
        n += 1.0;
      }
    }
  }
  const Vec3 mean = sum / n;
  Vec3 var = Vec3::Zero();
  for (const auto& r : train) {
    for (std::size_t t = 0; t < r.frames(); ++t) {
      if (!r.motion->valid[t]) continue;
      for (const auto& h : r.motion->frames[t]) var += (h.wrist - mean).cwiseAbs2();
    }
  }
  const Vec3 sd = (var / n).cwiseSqrt();
  CHECK((s.mean - mean).norm() < 1e-12);
  CHECK((s.std - sd).norm() < 1e-12);

  TokenMatrix tok = pack_tokens(*train[0].motion);
  const TokenMatrix orig = tok;
  s.apply(tok);
  CHECK((tok - orig).norm() > 0.0);
  CHECK(tok.col(0) == orig.col(0));
  s.invert(tok);
  CHECK((tok - orig).cwiseAbs().maxCoeff() < 1e-12);

  const NormStats back = NormStats::from_json(s.to_json());
  CHECK((back.mean - s.mean).norm() == 0.0);
  CHECK((back.std - s.std).norm() == 0.0);
  CHECK_THROWS_AS(norm_stats({}), std::invalid_argument);
}

TEST_CASE("normalized training translations have zero mean and unit spread") {
  const auto train = records(6, 9);
  const NormStats s = norm_stats(train);
  Vec3 sum = Vec3::Zero(), sq = Vec3::Zero();
  double n = 0.0;
  for (const auto& r : train) {
    TokenMatrix tok = pack_tokens(*r.motion);
    s.apply(tok);
    for (Eigen::Index t = 0; t < tok.rows(); ++t) {
      if (!r.motion->valid[static_cast<std::size_t>(t)]) continue;
      for (int h = 0; h < kHands; ++h) {
        const Vec3 v(tok(t, token_translation_offset(h)), tok(t, token_translation_offset(h) + 1),
                     tok(t, token_translation_offset(h) + 2));
        sum += v;
        sq += v.cwiseAbs2();
        n += 1.0;
      }
    }
  }
  CHECK((sum / n).norm() < 1e-9);
  CHECK(((sq / n) - Vec3::Ones()).norm() < 1e-9);
}

TEST_CASE("train config rejects unknown keys and bad values") {
  TrainConfig t;
  CHECK(TrainConfig::from_json(t.to_json()).to_json() == t.to_json());
  nlohmann::json j = t.to_json();
  j["epoch"] = 3;
  CHECK_THROWS_AS(TrainConfig::from_json(j), std::invalid_argument);
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  CHECK_THROWS_AS(denoiser_preset("huge", DenoiserMode::Lifting), std::invalid_argument);
  const auto paper = denoiser_preset("paper", DenoiserMode::Forecasting);
  CHECK(paper.layers == 16);
  CHECK(paper.latent_dim == 1024);
  CHECK(paper.horizon == 256);
}

TEST_CASE("refinement keeps the ground truth and recovers a translated start") {
  const auto r = records(1, 21)[0];
  const RefineTargets targets = RefineTargets::from_record(r, false);
  RefineConfig cfg;
  cfg.iters = 50;
  const RefineResult still = refine_reprojection(*r.motion, targets, cfg);
  CHECK(still.initial_loss < 1e-12);
  CHECK(still.initial_pixel_error < 1e-6);
  CHECK(still.loss_trace.size() == 51);
  CHECK(still.best_iter == 0);

  cfg.iters = 1000;
  const MotionSequence start = shifted(*r.motion, Vec3(0.03, -0.02, 0.0));
  const RefineResult moved = refine_reprojection(start, targets, cfg);
  CHECK(moved.initial_pixel_error > 10.0);
  CHECK(moved.final_pixel_error < 0.1 * moved.initial_pixel_error);
  CHECK(moved.best_loss <= moved.loss_trace.front());
  for (double v : moved.loss_trace) CHECK(moved.best_loss <= v);
}

TEST_CASE("refinement clips each parameter tensor or their joint norm") {
  const auto r = records(1, 23)[0];
  const RefineTargets targets = RefineTargets::from_record(r, false);
  const MotionSequence start = shifted(*r.motion, Vec3(0.03, -0.02, 0.01));
  const auto step_norms = [&](bool per_tensor) {
    RefineConfig cfg;
    cfg.iters = 1;
    cfg.clip_per_tensor = per_tensor;
    const RefineResult res = refine_reprojection(start, targets, cfg);
    REQUIRE(res.best_iter == 1);
    const TokenMatrix d = pack_tokens(res.motion) - pack_tokens(start);
    std::vector<double> sq(4, 0.0);  // theta, wrist per hand
    for (int h = 0; h < kHands; ++h) {
      sq[2 * h] = d.middleCols(h * kHandTokenDim, kJoints * 6).squaredNorm();
      sq[2 * h + 1] = d.middleCols(token_translation_offset(h), 3).squaredNorm();
    }
    return sq;
  };
  const auto each = step_norms(true);
  for (double v : {each[1], each[3]}) CHECK(std::sqrt(v) == doctest::Approx(0.01).epsilon(1e-9));
  for (double v : each) CHECK(std::sqrt(v) <= 0.01 + 1e-12);
  const auto joint = step_norms(false);
  CHECK(std::sqrt(joint[0] + joint[1] + joint[2] + joint[3]) == doctest::Approx(0.01).epsilon(1e-9));
  RefineConfig c;
  c.clip_per_tensor = false;
  CHECK(RefineConfig::from_json(c.to_json()).clip_per_tensor == false);
  CHECK_THROWS_AS(RefineConfig::from_json({{"clip_mode", "x"}}), std::invalid_argument);
}

TEST_CASE("refinement objective gradients match finite differences") {
  auto r = records(1, 22)[0];
  const RefineTargets targets = RefineTargets::from_record(r, true);
  const RefineObjective obj(targets, 0.5);
  const MotionSequence start = shifted(*r.motion, Vec3(0.01, 0.01, -0.02));
  std::array<Tensor, kHands> theta, wrist;
  const TokenMatrix tok = pack_tokens(start);
  const std::size_t T = start.size();
  for (int h = 0; h < kHands; ++h) {
    std::vector<double> th, wr;
    for (std::size_t t = 0; t < T; ++t) {
      for (int c = 0; c < kJoints * 6; ++c) th.push_back(tok(static_cast<Eigen::Index>(t), h * kHandTokenDim + c));
      for (int c = 0; c < 3; ++c) wr.push_back(tok(static_cast<Eigen::Index>(t), token_translation_offset(h) + c));
    }
    theta[static_cast<std::size_t>(h)] = Tensor::from({T, kJoints, 6}, th, true);
    wrist[static_cast<std::size_t>(h)] = Tensor::from({T, 3}, wr, true);
  }
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 40;
  opt.step = 1e-6;
  const double err = grad_check([&] { return obj(theta, wrist); },
                                {theta[0], theta[1], wrist[0], wrist[1]}, opt);
  CHECK(err < 1e-4);
}

TEST_CASE("training and lifting are deterministic in the seed") {
  const auto train = records(10, 5);
  const auto a = train_lifting(train, tiny(DenoiserMode::Lifting), short_run(2, 3));
  const auto b = train_lifting(train, tiny(DenoiserMode::Lifting), short_run(2, 3));
  const auto c = train_lifting(train, tiny(DenoiserMode::Lifting), short_run(2, 4));
  CHECK(a.model.hash() == b.model.hash());
  CHECK(a.model.hash() != c.model.hash());
  CHECK(a.log.epoch_loss == b.log.epoch_loss);
  CHECK(a.log.steps == 4);

  SampleConfig sc;
  sc.n_samples = 2;
  sc.seed = 11;
  sc.options.stride = 10;
  const auto test = records(3, 6);
  const auto s1 = lift(a.model, test, sc);
  const auto s2 = lift(a.model, test, sc);
  REQUIRE(s1.size() == 3);
  REQUIRE(s1[0].size() == 2);
  CHECK(motions_text(s1[2]) == motions_text(s2[2]));
  CHECK(motions_text({s1[0][0]}) != motions_text({s1[0][1]}));
  // A record's samples do not depend on the rest of the batch.
  sc.batch = 1;
  const auto alone = lift(a.model, {test[2]}, sc);
  const auto d0 = pack_tokens(alone[0][0]), d1 = pack_tokens(s1[2][0]);
  CHECK((d0 - d1).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(alone[0][0].valid == test[2].frame_valid);

  const MotionModel back = MotionModel::deserialize(a.model.serialize());
  CHECK(back.hash() == a.model.hash());
  CHECK(motions_text(lift(back, test, sc)[1]) == motions_text(lift(a.model, test, sc)[1]));
}

TEST_CASE("lifting rejects records that are not full3d") {
  auto train = records(3, 7);
  Rng rng(1);
  train[1] = degrade_tier(train[1], Tier::Kp2dOnly, DegradeConfig{}, rng);
  CHECK_THROWS_AS(train_lifting(train, tiny(DenoiserMode::Lifting), short_run(1)), std::invalid_argument);
}

TEST_CASE("a single record can be overfit") {
  const auto one = records(1, 8);
  DenoiserConfig cfg = tiny(DenoiserMode::Forecasting);
  cfg.dropout = 0.0;
  cfg.cond_drop = 0.0;
  TrainConfig t = short_run(400);
  t.batch_size = 1;
  t.lr = 3e-3;
  const auto tr = train_forecaster(one, cfg, t, Supervision::ThreeDOnly);
  CHECK(tr.log.epoch_loss.front() > 0.1);
  double tail = 0.0;
  for (std::size_t e = tr.log.epoch_loss.size() - 20; e < tr.log.epoch_loss.size(); ++e) tail += tr.log.epoch_loss[e] / 20.0;
  CHECK(tail < 0.05);
}

TEST_CASE("forecasts read only the first frame") {
  const auto train = records(8, 12);
  const auto tr = train_forecaster(train, tiny(DenoiserMode::Forecasting), short_run(1), Supervision::ThreeDOnly);
  auto test = records(2, 13);
  SampleConfig sc;
  sc.options.stride = 20;
  sc.n_samples = 2;
  const auto before = forecast(tr.model, test, sc);
  for (auto& r : test) {
    for (std::size_t t = 1; t < r.frames(); ++t) {
      for (auto& h : r.keypoints2d[t]) {
        for (auto& k : h) k += Vec2(13.0, -7.0);
      }
      r.cameras[t].t += Vec3(0.1, 0.0, 0.0);
      r.frame_valid[t] = static_cast<std::uint8_t>(t % 2);
    }
    for (std::size_t t = 1; t < r.frames(); ++t) r.motion->frames[t][0].wrist += Vec3(0.2, 0.2, 0.2);
  }
  const auto after = forecast(tr.model, test, sc);
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(motions_text(before[i]) == motions_text(after[i]));
  for (const auto& s : after[0]) CHECK(s.valid_count() == s.size());
}

TEST_CASE("supervision selects full3d and imputed records") {
  auto train = records(6, 14);
  train[0].tier = Tier::Imputed;
  train[0].keypoints3d.reset();
  train[1].tier = Tier::Imputed;
  train[1].keypoints3d.reset();
  const auto only = train_forecaster(train, tiny(DenoiserMode::Forecasting), short_run(1), Supervision::ThreeDOnly);
  const auto both = train_forecaster(train, tiny(DenoiserMode::Forecasting), short_run(1), Supervision::ThreeDPlus2D);
  CHECK(only.model.train_info["records"] == 4);
  CHECK(both.model.train_info["records"] == 6);
  CHECK(both.model.train_info["supervision"] == "3d_plus_2d");
  std::vector<TrajectoryRecord> none(train.begin(), train.begin() + 2);
  CHECK_THROWS_AS(train_forecaster(none, tiny(DenoiserMode::Forecasting), short_run(1), Supervision::ThreeDOnly),
                  std::invalid_argument);
}

TEST_CASE("static pose baseline repeats the first frame") {
  const auto r = records(1, 15)[0];
  const MotionSequence s = static_pose_baseline(nullptr, r, 32, true);
  REQUIRE(s.size() == 32);
  for (std::size_t t = 0; t < s.size(); ++t) {
    CHECK((pack_tokens(s).row(static_cast<Eigen::Index>(t)) - pack_tokens(*r.motion).row(0)).norm() == 0.0);
  }
  CHECK_THROWS_AS(static_pose_baseline(nullptr, r, 32, false), std::invalid_argument);
  CHECK_THROWS_AS(static_pose_baseline(nullptr, r, 0, true), std::invalid_argument);

  const auto train = records(8, 16);
  const auto head = train_static_pose(train, tiny(DenoiserMode::Forecasting), short_run(2), 32);
  const MotionSequence p = static_pose_baseline(&head.model, r, 20, false);
  CHECK(p.size() == 20);
  const StaticPoseModel back = StaticPoseModel::deserialize(head.model.serialize());
  CHECK(motions_text({static_pose_baseline(&back, r, 20, false)}) == motions_text({p}));
}

TEST_CASE("regressor repeats one deterministic output") {
  const auto train = records(8, 17);
  const auto tr = train_regressor(train, tiny(DenoiserMode::Forecasting), short_run(2));
  CHECK(tr.model.kind == "regressor");
  CHECK_FALSE(tr.model.config.diffusion);
  SampleConfig sc;
  sc.n_samples = 3;
  const auto out = forecast(tr.model, records(2, 18), sc);
  CHECK(motions_text({out[1][0]}) == motions_text({out[1][2]}));
  const auto mm = multimodality({{normalized_tokens(out[0][0], tr.model.norm), normalized_tokens(out[0][1], tr.model.norm)}});
  CHECK(mm.deterministic);
  CHECK(mm.value == 0.0);
}

TEST_CASE("imputation relabels 2D records with provenance") {
  const auto train = records(8, 19);
  const auto tr = train_lifting(train, tiny(DenoiserMode::Lifting), short_run(1));
  auto raw = records(3, 20);
  std::vector<TrajectoryRecord> in;
  for (auto& r : raw) {
    Rng rng(fnv1a64(r.id));
    in.push_back(degrade_tier(r, Tier::Kp2dOnly, DegradeConfig{}, rng));
  }
  ImputeConfig ic;
  ic.refine.iters = 30;
  ic.options.stride = 20;
  ic.n_samples = 2;
  const ImputeResult res = impute_labels(tr.model, in, ic);
  REQUIRE(res.records.size() == 3);
  CHECK(res.skipped.empty());
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    const auto& r = res.records[i];
    CHECK(r.id == in[i].id);
    CHECK(r.tier == Tier::Imputed);
    CHECK(r.motion.has_value());
    CHECK_FALSE(r.keypoints3d.has_value());
    CHECK(r.keypoints2d == in[i].keypoints2d);
    CHECK(r.provenance["source_tier"] == "kp2d_only");
    CHECK(r.provenance["model_hash"] == tr.model.hash());
    CHECK(r.provenance["final_loss"].get<double>() <= r.provenance["initial_loss"].get<double>());
    CHECK(r.provenance["sample_index"].get<int>() < 2);
    const auto j = record_to_json(r);
    CHECK(record_from_json(j).provenance == r.provenance);
  }
  CHECK(res.lifted.size() == 3);
}

TEST_CASE("evaluation of the ground truth is zero") {
  const auto test = records(4, 23);
  std::vector<MotionSequence> gt;
  for (const auto& r : test) gt.push_back(*r.motion);
  const MotionMetrics m = evaluate_motions(gt, test);
  CHECK(m.records == 4);
  CHECK(m.mpjpe < 1e-9);
  CHECK(m.pa_mpjpe < 1e-6);
  CHECK(m.fa_mpjpe < 1e-6);
  CHECK(m.mrrpe < 1e-9);
  CHECK(m.mpjpe_curve.size() == 32);
  CHECK_THROWS_AS(evaluate_motions({}, test), std::invalid_argument);
}

TEST_CASE("parallel_for visits every index once") {
  std::vector<int> hits(37, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK(default_threads() >= 1);
}
