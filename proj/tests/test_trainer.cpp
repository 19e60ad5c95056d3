#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace gonerf;
using namespace gonerf::testing;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// Largest absolute difference between the parameters of two fields.
double max_param_diff(const ObjectField& a, const ObjectField& b) {
  double d = 0.0;
  for (int l = 0; l < a.grid().num_levels(); ++l) {
    const auto ta = a.grid().table(l), tb = b.grid().table(l);
    for (std::size_t k = 0; k < ta.size(); ++k) d = std::max(d, static_cast<double>(std::abs(ta[k] - tb[k])));
  }
  for (int net = 0; net < 2; ++net) {
    const Mlp& ma = net ? a.color_net() : a.density_net();
    const Mlp& mb = net ? b.color_net() : b.density_net();
    for (std::size_t i = 0; i < ma.layers().size(); ++i) {
      d = std::max(d, static_cast<double>((ma.layers()[i].weight - mb.layers()[i].weight).cwiseAbs().maxCoeff()));
      d = std::max(d, static_cast<double>((ma.layers()[i].bias - mb.layers()[i].bias).cwiseAbs().maxCoeff()));
    }
  }
  return d;
}

struct Stub {
  ColorPriorProvider provider;
  explicit Stub(int native) : provider(NoiseSchedule(), native) {}
};

}  // namespace

TEST(Augmentation, ExactlyThreeOfEveryTenSteps) {
  TrainConfig cfg;
  cfg.seed = 17;
  int augmented = 0, white = 0;
  for (long block = 0; block < 2000; ++block) {
    int in_block = 0;
    for (long s = block * 10; s < block * 10 + 10; ++s) {
      const BackgroundMode m = augmentation_schedule(s, cfg);
      if (m != BackgroundMode::scene) {
        ++in_block;
        white += m == BackgroundMode::white;
      }
    }
    EXPECT_EQ(in_block, 3) << block;
    augmented += in_block;
  }
  EXPECT_EQ(augmented, 6000);
  // White and black split evenly: binomial(6000, 0.5) within 5 sigma.
  EXPECT_NEAR(white, 3000, 5 * std::sqrt(1500.0));

  std::vector<int> position(10, 0);
  for (long s = 0; s < 20000; ++s) position[s % 10] += augmentation_schedule(s, cfg) != BackgroundMode::scene;
  for (int p : position) EXPECT_NEAR(p, 600, 5 * std::sqrt(2000 * 0.3 * 0.7));

  cfg.augmentation = false;
  for (long s = 0; s < 100; ++s) EXPECT_EQ(augmentation_schedule(s, cfg), BackgroundMode::scene);
  cfg.augmentation = true;
  cfg.bg_augment_fraction = 0.0;
  for (long s = 0; s < 100; ++s) EXPECT_EQ(augmentation_schedule(s, cfg), BackgroundMode::scene);
}

TEST(Schedules, LearningRateAndSeeds) {
  EXPECT_DOUBLE_EQ(lr_at(1e-2, 0.1, 0, 100), 1e-2);
  EXPECT_NEAR(lr_at(1e-2, 0.1, 100, 100), 1e-3, 1e-15);
  EXPECT_NEAR(lr_at(1e-2, 0.1, 50, 100), 5.5e-3, 1e-15);
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s)
    for (std::uint64_t k = 0; k < 5; ++k) seen.insert(mix_seed(3, s, k));
  EXPECT_EQ(seen.size(), 500u);
}

TEST(JobStatus, TransitionTable) {
  using S = JobStatus;
  const S all[] = {S::queued, S::running, S::completed, S::failed, S::cancelled};
  for (S a : all)
    for (S b : all) {
      const bool expected = (a == S::queued && (b == S::running || b == S::cancelled)) ||
                            (a == S::running && (b == S::completed || b == S::failed || b == S::cancelled));
      EXPECT_EQ(valid_transition(a, b), expected) << to_string(a) << "->" << to_string(b);
    }
}

TEST(Adam, MatchesReferenceImplementation) {
  Adam adam;
  adam.add_group(4);
  std::vector<float> p{0.5f, -0.3f, 1.2f, 0.0f};
  std::vector<double> ref(p.begin(), p.end()), m(4, 0.0), v(4, 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  const double lr = 0.01, b1 = 0.9, b2 = 0.99, eps = 1e-15;
  for (int t = 1; t <= 30; ++t) {
    std::vector<float> g(4);
    for (float& x : g) x = static_cast<float>(n(rng));
    adam.update(0, p, g, lr);
    for (int i = 0; i < 4; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(p[i], ref[i], 1e-5) << t;
  }
  EXPECT_EQ(adam.group_steps(0), 30);
  std::vector<float> wrong(3);
  EXPECT_THROW(adam.update(0, wrong, wrong, lr), ContractViolation);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Adam adam;
  adam.add_group(3);
  std::vector<float> p{0.1f, 0.2f, 0.3f};
  const std::vector<float> zero(3, 0.0f), keep = p;
  for (int t = 0; t < 5; ++t) adam.update(0, p, zero, 0.1);
  EXPECT_EQ(p, keep);
}

TEST(Config, TextRoundTripAndErrors) {
  TrainConfig a = small_train_config();
  a.prompt = "a blue teapot";
  a.seed = 123456789012345ull;
  a.weights.reference_mode = ReferenceMode::style;
  a.lr_tables = 0.0123456789;
  TrainConfig b;
  config::apply_values(b, config::parse(config::to_text(a)));
  EXPECT_EQ(config::to_text(a), config::to_text(b));
  EXPECT_EQ(b.seed, a.seed);
  EXPECT_EQ(b.lr_tables, a.lr_tables);

  EXPECT_EQ(config::parse("# comment\n  K = 12  # trailing\n\nprompt = a red mug\n").at("prompt"), "a red mug");
  TrainConfig c;
  EXPECT_THROW(config::apply_values(c, {{"no_such_key", "1"}}), ConfigError);
  EXPECT_THROW(config::apply_values(c, {{"K", "twelve"}}), ConfigError);
  EXPECT_THROW(config::apply_values(c, {{"stratified", "maybe"}}), ConfigError);
  EXPECT_THROW(config::apply_values(c, {{"reference_mode", "cubism"}}), ConfigError);
  EXPECT_THROW(config::parse("just words"), ConfigError);
  c.bg_augment_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, EmptyMaskInEveryViewIsAConfigError) {
  OrientedBox3D far;
  far.center = Vec3(0.0, 0.0, 40.0);
  far.half_extents = Vec3::Constant(0.1);
  Stub stub(32);
  EXPECT_THROW(Trainer(desk_cache(), far, small_train_config(), stub.provider), ConfigError);
}

TEST(Trainer, SameSeedGivesIdenticalRuns) {
  const TrainConfig cfg = small_train_config();
  Stub s1(cfg.native_resolution), s2(cfg.native_resolution);
  Trainer a(desk_cache(), desk_box(), cfg, s1.provider), b(desk_cache(), desk_box(), cfg, s2.provider);
  for (int i = 0; i < 15; ++i) {
    const LossRecord ra = a.step_once(), rb = b.step_once();
    EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
  }
  EXPECT_EQ(a.checkpoint_bytes(), b.checkpoint_bytes());
  TrainConfig other = cfg;
  other.seed = 1;
  Stub s3(cfg.native_resolution);
  Trainer c(desk_cache(), desk_box(), other, s3.provider);
  for (int i = 0; i < 15; ++i) c.step_once();
  EXPECT_GT(max_param_diff(a.field(), c.field()), 0.0);
}

TEST(Trainer, NullObjectiveLeavesParametersUnchanged) {
  TrainConfig cfg = small_train_config();
  cfg.weights.sparsity = false;
  cfg.weights.entropy = false;
  cfg.weights.lambda_R = 0.0;
  const BoxTargets targets(desk_cache(), desk_box());
  // With eta = 0 the oracle returns the injected noise exactly.
  TargetOracleProvider exact([&](int v, BackgroundMode m) -> const Image& { return targets.image(v, m); }, 0.0,
                             NoiseSchedule(), cfg.native_resolution);
  Trainer t(desk_cache(), desk_box(), cfg, exact);
  const std::string before = t.field().to_archive();
  for (int i = 0; i < 12; ++i) {
    const LossRecord r = t.step_once();
    EXPECT_EQ(r.sds_norm, 0.0);
  }
  EXPECT_EQ(t.field().to_archive(), before);
}

TEST(Trainer, RecordsFollowTheSchedules) {
  TrainConfig cfg = small_train_config();
  cfg.total_steps = 30;
  Stub stub(cfg.native_resolution);
  Trainer t(desk_cache(), desk_box(), cfg, stub.provider);
  for (long s = 0; s < 30; ++s) {
    const LossRecord r = t.step_once();
    EXPECT_EQ(r.step, s);
    EXPECT_EQ(r.background, augmentation_schedule(s, cfg));
    EXPECT_EQ(r.active_levels, active_levels_for_step(s, cfg.field.grid.num_levels));
    EXPECT_NEAR(r.lambda_S, cosine_schedule(s, 30), 1e-12);
    EXPECT_GE(r.timestep, 20);
    EXPECT_LE(r.timestep, 980);
    EXPECT_TRUE(std::find(t.usable_views().begin(), t.usable_views().end(), r.view_id) != t.usable_views().end());
    const double total = r.sds_norm + r.lambda_S * r.sparsity + r.lambda_O * r.entropy;
    EXPECT_NEAR(r.total, total, 1e-9 * std::max(1.0, total));
  }
}

TEST(Trainer, ResumeMatchesAnUnbrokenRun) {
  TrainConfig cfg = small_train_config();
  cfg.total_steps = 50;
  TempDir dir;

  Stub s1(cfg.native_resolution);
  Trainer whole(desk_cache(), desk_box(), cfg, s1.provider);
  ASSERT_EQ(whole.run(dir / "whole"), JobStatus::completed);

  std::atomic<bool> cancel{false};
  TrainCallbacks cb;
  cb.on_record = [&](const LossRecord& r) {
    if (r.step == 22) cancel = true;
  };
  {
    Stub s2(cfg.native_resolution);
    Trainer first(desk_cache(), desk_box(), cfg, s2.provider);
    ASSERT_EQ(first.run(dir / "split", cb, &cancel), JobStatus::cancelled);
    EXPECT_EQ(first.step(), 23);
  }
  Stub s3(cfg.native_resolution);
  Trainer second(desk_cache(), desk_box(), cfg, s3.provider);
  ASSERT_EQ(second.run(dir / "split"), JobStatus::completed);
  EXPECT_EQ(second.step(), 50);
  EXPECT_LE(max_param_diff(whole.field(), second.field()), 1e-6);

  const auto a = read_lines(dir / "whole" / "losses.ndjson");
  const auto b = read_lines(dir / "split" / "losses.ndjson");
  ASSERT_EQ(a.size(), 50u);
  ASSERT_EQ(b.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto ja = nlohmann::json::parse(a[i]), jb = nlohmann::json::parse(b[i]);
    EXPECT_EQ(ja["step"], static_cast<long>(i));
    EXPECT_EQ(jb["step"], static_cast<long>(i));
    EXPECT_NEAR(ja["total"].get<double>(), jb["total"].get<double>(), 1e-6 * std::max(1.0, std::abs(ja["total"].get<double>())));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "split" / "field.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir / "split" / "config.resolved.cfg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "whole" / "previews" / "step_20_view_0.png"));
}

TEST(Trainer, CheckpointForADifferentBoxIsRejected) {
  const TrainConfig cfg = small_train_config();
  Stub stub(cfg.native_resolution);
  Trainer a(desk_cache(), desk_box(), cfg, stub.provider);
  a.step_once();
  OrientedBox3D other = desk_box();
  other.center.x() += 0.1;
  Trainer b(desk_cache(), other, cfg, stub.provider);
  EXPECT_THROW(b.restore(a.checkpoint_bytes()), IoError);
  std::string bytes = a.checkpoint_bytes();
  bytes[40] ^= 0x4;
  EXPECT_THROW(a.restore(bytes), ChecksumError);
}

TEST(Trainer, PixelsOutsideTheMaskNeverChange) {
  TrainConfig cfg = small_train_config();
  cfg.field.density_shift = 1.0;
  Stub stub(cfg.native_resolution);
  Trainer t(desk_cache(), desk_box(), cfg, stub.provider);
  for (int i = 0; i < 20; ++i) t.step_once();
  for (const auto& v : desk_cache().views) {
    const RenderOutput out = t.render(v.view_id, 16);
    std::size_t inside_changed = 0;
    for (std::size_t p = 0; p < out.M.data.size(); ++p) {
      for (int c = 0; c < 3; ++c) {
        const float a = out.I.data[p * 3 + c], b = v.color.data[p * 3 + c];
        if (!out.M.data[p]) {
          EXPECT_EQ(std::memcmp(&a, &b, sizeof(float)), 0);
        } else {
          inside_changed += a != b;
        }
      }
    }
    EXPECT_GT(inside_changed, 0u);
  }
}

TEST(Trainer, StyleModeNeedsAReference) {
  TrainConfig cfg = small_train_config();
  cfg.weights.reference_mode = ReferenceMode::style;
  cfg.weights.lambda_R = 1.0;
  cfg.weights.support_threshold = 0.0;
  cfg.weights.shadow_threshold = 0.01;
  cfg.field.density_shift = 2.0;
  Stub stub(cfg.native_resolution);
  Trainer t(desk_cache(), desk_box(), cfg, stub.provider);
  EXPECT_THROW(t.step_once(), ConfigError);
  t.set_style_reference(desk_cache().views[1].color, std::make_shared<RandomProjectionExtractor>());
  const LossRecord r = t.step_once();
  EXPECT_GT(r.reference, 0.0);
}
