#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gonerf/adam.hpp"
#include "gonerf/archive.hpp"
#include "gonerf/compositor.hpp"
#include "gonerf/config.hpp"
#include "gonerf/guidance.hpp"
#include "gonerf/object_field.hpp"
#include "gonerf/objectives.hpp"
#include "gonerf/scene_cache.hpp"

namespace gonerf {

// SplitMix64 over (seed, step, stream): independent per-step random streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ull * (step + 1)) ^ (0xd1b54a32d192ed03ull * (stream + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr int kAugmentBlock = 10;

// Within each block of 10 consecutive steps, exactly round(10 * fraction)
// steps are augmented; their positions and white/black choices come from a
// per-block seeded stream.
inline BackgroundMode augmentation_schedule(long step, const TrainConfig& cfg) {
  if (step < 0) throw InvalidInput("augmentation_schedule: negative step");
  if (!cfg.augmentation) return BackgroundMode::scene;
  const int per_block = static_cast<int>(std::lround(cfg.bg_augment_fraction * kAugmentBlock));
  const long block = step / kAugmentBlock;
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(block), 1));
  std::array<int, kAugmentBlock> order{};
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::array<bool, kAugmentBlock> white{};
  std::bernoulli_distribution coin(0.5);
  for (bool& w : white) w = coin(rng);
  const int pos = static_cast<int>(step % kAugmentBlock);
  for (int i = 0; i < per_block; ++i)
    if (order[i] == pos) return white[pos] ? BackgroundMode::white : BackgroundMode::black;
  return BackgroundMode::scene;
}

inline double lr_at(double base, double final_ratio, long step, long total) {
  const double s = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return base * (final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + std::cos(M_PI * s)));
}

struct LossRecord {
  long step = 0;
  int view_id = -1;
  BackgroundMode background = BackgroundMode::scene;
  int active_levels = 0;
  int timestep = 0;
  double sds_norm = 0.0;
  double sparsity = 0.0;
  double entropy = 0.0;
  double reference = 0.0;
  double lambda_S = 0.0;
  double lambda_O = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step},           {"view_id", view_id},     {"background", to_string(background)},
            {"active_levels", active_levels}, {"timestep", timestep}, {"L_SDS_norm", sds_norm},
            {"L_S", sparsity},        {"L_O", entropy},         {"L_R", reference},
            {"lambda_S", lambda_S},   {"lambda_O", lambda_O},   {"total", total}};
  }
};

enum class JobStatus { queued, running, completed, failed, cancelled };

inline std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::completed: return "completed";
    case JobStatus::failed: return "failed";
    default: return "cancelled";
  }
}

inline bool is_terminal(JobStatus s) {
  return s == JobStatus::completed || s == JobStatus::failed || s == JobStatus::cancelled;
}

// queued -> running -> {completed, failed, cancelled}; queued may also be cancelled.
inline bool valid_transition(JobStatus from, JobStatus to) {
  if (from == JobStatus::queued) return to == JobStatus::running || to == JobStatus::cancelled;
  if (from == JobStatus::running) return is_terminal(to);
  return false;
}

struct TrainCallbacks {
  std::function<void(const LossRecord&)> on_record;
  std::function<void(long step, int view_id, const Image& preview)> on_preview;
  std::function<void(long step, const std::filesystem::path&)> on_checkpoint;
};

class Trainer {
 public:
  static constexpr std::uint32_t kCheckpointKind = 0x54504b43;  // "CKPT"
  static constexpr std::uint32_t kCheckpointVersion = 1;

  Trainer(const SceneCache& cache, const OrientedBox3D& box, TrainConfig cfg, NoiseProvider& provider)
      : cache_(cache), cfg_(std::move(cfg)), provider_(provider), field_(make_field_config(cfg_), box) {
    cfg_.validate();
    cache_.validate();
    for (const auto& v : cache_.views) {
      Mask m = project_box_mask(box, v.camera);
      if (m.any()) usable_.push_back(v.view_id);
      masks_.emplace(v.view_id, std::move(m));
      ref_stats_.emplace(v.view_id, reference_stats(v.color));
    }
    if (usable_.empty()) throw ConfigError("the box projects to an empty mask in every cached view");
    init_optimizer();
  }

  const TrainConfig& config() const { return cfg_; }
  ObjectField& field() { return field_; }
  const ObjectField& field() const { return field_; }
  long step() const { return step_; }
  const std::vector<int>& usable_views() const { return usable_; }
  const Mask& mask(int view_id) const { return masks_.at(view_id); }

  // Style reference (switches the reference term to the style loss).
  void set_style_reference(const Image& reference, std::shared_ptr<const FeatureExtractor> extractor) {
    extractor_ = std::move(extractor);
    const Mask all(reference.width, reference.height, 1);
    ref_features_ = extractor_->extract(reference, all);
  }

  int sample_view(long step) const {
    std::mt19937_64 rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(step), 2));
    return usable_[std::uniform_int_distribution<std::size_t>(0, usable_.size() - 1)(rng)];
  }

  LossRecord step_once() {
    const long s = step_;
    field_.set_active_levels(s);
    const int view_id = sample_view(s);
    const SceneViewRGBD& view = cache_.view(view_id);
    RenderSettings rs;
    rs.K = cfg_.K;
    rs.stratified = cfg_.stratified;
    rs.seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(s), 3);
    rs.background = augmentation_schedule(s, cfg_);
    const TrainingRender render(field_, view, rs);
    const RenderOutput& out = render.output();

    GuidanceSettings gs;
    gs.prompt = cfg_.prompt;
    gs.guidance_scale = cfg_.guidance_scale;
    gs.crop_margin = cfg_.crop_margin;
    gs.random_crop = cfg_.random_crop;
    const SdsGradient sds = sds_step(out, gs, schedule_, provider_, mix_seed(cfg_.seed, static_cast<std::uint64_t>(s), 4));

    const LossWeights& w = cfg_.weights;
    const LossValue ls = sparsity_loss(out.O, out.M);
    const LossValue le = opacity_entropy_loss(out.O, out.M);
    const Mask support = object_support(out.O, intensity_channel(out.I), w);
    double reference = 0.0;
    Image dG(out.G.width, out.G.height, 3), dO(out.O.width, out.O.height, 1);
    if (w.reference_mode == ReferenceMode::saturation) {
      const SaturationLoss sat = saturation_loss(out.G, out.O, ref_stats_.at(view_id), support);
      reference = sat.value;
      add_scaled(dG, sat.grad_G, w.lambda_R);
      add_scaled(dO, sat.grad_O, w.lambda_R);
    } else {
      if (!extractor_) throw ConfigError("style reference mode needs a reference image");
      const Eigen::MatrixXd feats = extractor_->extract(out.G, support);
      const StyleLoss st = style_loss(feats, ref_features_);
      reference = st.value;
      add_scaled(dG, extractor_->backward(out.G, support, st.grad), w.lambda_R);
    }

    LossParts parts{sds.norm, ls.value, le.value, reference};
    const WeightedTotal total = total_loss(parts, w, s, cfg_.total_steps);
    add_scaled(dO, ls.grad, total.lambda_S);
    add_scaled(dO, le.grad, total.lambda_O);
    Image dI = sds.grad;
    for (float& v : dI.data) v = static_cast<float>(v * w.sds);

    FieldGradients grads = field_.zero_gradients();
    render.backward(dI, dG, dO, grads);
    apply_gradients(grads, s);

    LossRecord rec;
    rec.step = s;
    rec.view_id = view_id;
    rec.background = rs.background;
    rec.active_levels = field_.active_levels();
    rec.timestep = sds.timestep;
    rec.sds_norm = sds.norm;
    rec.sparsity = ls.value;
    rec.entropy = le.value;
    rec.reference = reference;
    rec.lambda_S = total.lambda_S;
    rec.lambda_O = total.lambda_O;
    rec.total = total.value;
    ++step_;
    return rec;
  }

  // Final-quality render of one view in scene-background mode.
  RenderOutput render(int view_id, std::optional<int> K = std::nullopt, std::uint64_t seed = 0) const {
    RenderSettings rs;
    rs.K = K.value_or(cfg_.K_render);
    rs.seed = seed;
    return render_view(field_, cache_.view(view_id), rs);
  }

  // Runs to total_steps (or until cancelled). With a run directory, resumes
  // from its checkpoint and writes checkpoints, loss records and previews.
  JobStatus run(const std::optional<std::filesystem::path>& run_dir, const TrainCallbacks& cb = {},
                const std::atomic<bool>* cancel = nullptr) {
    std::ofstream losses;
    if (run_dir) {
      std::filesystem::create_directories(*run_dir / "previews");
      png::write_file_atomic(*run_dir / "config.resolved.cfg", config::to_text(cfg_));
      if (std::filesystem::exists(checkpoint_path(*run_dir))) {
        load_checkpoint(checkpoint_path(*run_dir));
        log::info("resuming at step " + std::to_string(step_));
      }
      truncate_losses(*run_dir / "losses.ndjson", step_);
      losses.open(*run_dir / "losses.ndjson", std::ios::app);
    }
    while (step_ < cfg_.total_steps) {
      if (cancel && cancel->load()) {
        if (run_dir) write_checkpoint(*run_dir, cb);
        return JobStatus::cancelled;
      }
      const LossRecord rec = step_once();
      if (losses.is_open()) losses << rec.to_json().dump() << '\n' << std::flush;
      if (cb.on_record) cb.on_record(rec);
      if (step_ % cfg_.preview_every == 0 || step_ == cfg_.total_steps) previews(run_dir, cb);
      if (run_dir && (step_ % cfg_.checkpoint_every == 0 || step_ == cfg_.total_steps)) write_checkpoint(*run_dir, cb);
    }
    if (run_dir) field_.save(*run_dir / "field.bin");
    return JobStatus::completed;
  }

  static std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir) {
    return run_dir / "checkpoint.bin";
  }

  std::string checkpoint_bytes() const {
    archive::Writer w;
    w.put<std::int64_t>(step_);
    w.put_string(config::to_text(cfg_));
    field_.write_payload(w);
    adam_.write(w);
    return archive::seal(kCheckpointKind, kCheckpointVersion, w.bytes());
  }

  void restore(const std::string& sealed) {
    const std::string payload = archive::open(sealed, kCheckpointKind, kCheckpointVersion);
    archive::Reader r(std::span<const char>(payload.data(), payload.size()));
    const long step = r.get<std::int64_t>();
    (void)r.get_string();
    ObjectField f = ObjectField::read_payload(r);
    if (!(f.box() == field_.box())) throw IoError("checkpoint box differs from the requested box");
    if (!(f.config().grid == field_.config().grid)) throw IoError("checkpoint grid differs from the configuration");
    field_ = std::move(f);
    adam_.read(r);
    if (!r.at_end()) throw IoError("checkpoint: trailing bytes");
    step_ = step;
  }

  void save_checkpoint(const std::filesystem::path& path) const { archive::write(path, checkpoint_bytes()); }
  void load_checkpoint(const std::filesystem::path& path) { restore(archive::read(path)); }

 private:
  static ObjectFieldConfig make_field_config(const TrainConfig& c) {
    ObjectFieldConfig f = c.field;
    f.seed = c.seed;
    return f;
  }

  static void add_scaled(Image& dst, const Image& src, double scale) {
    if (scale == 0.0 || src.data.empty()) return;
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += static_cast<float>(scale * src.data[i]);
  }

  void init_optimizer() {
    adam_ = Adam();
    for (int l = 0; l < field_.grid().num_levels(); ++l) adam_.add_group(field_.grid().table(l).size());
    for (Mlp* net : {&field_.density_net(), &field_.color_net()})
      for (const auto& layer : net->layers()) {
        adam_.add_group(static_cast<std::size_t>(layer.weight.size()));
        adam_.add_group(static_cast<std::size_t>(layer.bias.size()));
      }
  }

  void apply_gradients(FieldGradients& g, long s) {
    const double lr_t = lr_at(cfg_.lr_tables, cfg_.lr_final_ratio, s, cfg_.total_steps);
    const double lr_d = lr_at(cfg_.lr_decoder, cfg_.lr_final_ratio, s, cfg_.total_steps);
    std::size_t group = 0;
    for (int l = 0; l < field_.grid().num_levels(); ++l, ++group)
      if (l < field_.active_levels()) adam_.update(group, field_.grid().table(l), g.tables[l], lr_t);
    auto update_net = [&](Mlp& net, Mlp::Gradients& ng) {
      for (std::size_t i = 0; i < net.layers().size(); ++i) {
        auto& layer = net.layers()[i];
        auto& gl = ng.layers[i];
        adam_.update(group++, std::span<float>(layer.weight.data(), layer.weight.size()),
                     std::span<const float>(gl.weight.data(), gl.weight.size()), lr_d);
        adam_.update(group++, std::span<float>(layer.bias.data(), layer.bias.size()),
                     std::span<const float>(gl.bias.data(), gl.bias.size()), lr_d);
      }
    };
    update_net(field_.density_net(), g.density_net);
    update_net(field_.color_net(), g.color_net);
  }

  void previews(const std::optional<std::filesystem::path>& run_dir, const TrainCallbacks& cb) const {
    if (!run_dir && !cb.on_preview) return;
    const int n = std::min<int>(cfg_.preview_views, static_cast<int>(cache_.views.size()));
    for (int i = 0; i < n; ++i) {
      const int id = cache_.views[i].view_id;
      RenderSettings rs;
      rs.K = cfg_.K;
      const Image img = downsample(render_view(field_, cache_.view(id), rs).I, 2);
      if (run_dir)
        png::write_png(*run_dir / "previews" / ("step_" + std::to_string(step_) + "_view_" + std::to_string(id) + ".png"),
                       img);
      if (cb.on_preview) cb.on_preview(step_, id, img);
    }
  }

  void write_checkpoint(const std::filesystem::path& run_dir, const TrainCallbacks& cb) const {
    save_checkpoint(checkpoint_path(run_dir));
    if (cb.on_checkpoint) cb.on_checkpoint(step_, checkpoint_path(run_dir));
  }

  static void truncate_losses(const std::filesystem::path& path, long keep_below) {
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    std::string line, kept;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        if (nlohmann::json::parse(line).at("step").get<long>() < keep_below) kept += line + "\n";
      } catch (const nlohmann::json::exception&) {
        // A torn final line from an interrupted run.
      }
    }
    in.close();
    png::write_file_atomic(path, kept);
  }

  const SceneCache& cache_;
  TrainConfig cfg_;
  NoiseProvider& provider_;
  ObjectField field_;
  NoiseSchedule schedule_;
  Adam adam_;
  long step_ = 0;
  std::vector<int> usable_;
  std::map<int, Mask> masks_;
  std::map<int, ReferenceStats> ref_stats_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  Eigen::MatrixXd ref_features_;
};

}  // namespace gonerf
