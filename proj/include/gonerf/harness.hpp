#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gonerf/compositor.hpp"
#include "gonerf/object_field.hpp"
#include "gonerf/scene_cache.hpp"

namespace gonerf {

// Text-image match scorer, score(image, text) in [0, 100]. Throws
// ProviderError when the backend is unavailable.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual double score(const Image& image, const std::string& text) = 0;
};

class ConstantScorer : public Scorer {
 public:
  explicit ConstantScorer(double value = 50.0) : value_(value) {}
  std::string id() const override { return "constant"; }
  double score(const Image&, const std::string&) override { return value_; }

 private:
  double value_;
};

inline constexpr double kPsnrCap = 100.0;

// PSNR over the pixels selected by `where`, peak 1, MSE averaged over pixels
// and channels. Returns kPsnrCap when the images agree exactly or nothing is
// selected.
inline double masked_psnr(const Image& a, const Image& b, const Mask& where) {
  if (!a.same_shape(b) || where.width != a.width || where.height != a.height)
    throw InvalidInput("masked_psnr: shape mismatch");
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < where.data.size(); ++p) {
    if (!where.data[p]) continue;
    for (int c = 0; c < a.channels; ++c) {
      const double d = static_cast<double>(a.data[p * a.channels + c]) - b.data[p * a.channels + c];
      sq += d * d;
    }
    n += static_cast<std::size_t>(a.channels);
  }
  if (n == 0 || sq == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(static_cast<double>(n) / sq));
}

struct PreservationView {
  int view_id = -1;
  double psnr = kPsnrCap;
  std::size_t pixels = 0;
};

struct PreservationReport {
  double min_psnr = kPsnrCap;
  std::vector<PreservationView> views;
};

inline constexpr double kSupportOpacity = 1e-3;
inline constexpr int kSupportDilation = 3;

// Pixels far from the object: O < 1e-3 after dilating the O >= 1e-3 support by 3 px.
inline Mask preservation_region(const Image& O) {
  Mask support(O.width, O.height);
  for (std::size_t i = 0; i < support.data.size(); ++i) support.data[i] = O.data[i] >= kSupportOpacity ? 1 : 0;
  Mask grown = dilate(support, kSupportDilation);
  for (auto& v : grown.data) v = v ? 0 : 1;
  return grown;
}

inline PreservationView preservation_of(const RenderOutput& r, const Image& scene) {
  const Mask region = preservation_region(r.O);
  return {r.view_id, masked_psnr(r.I, scene, region), region.count()};
}

inline PreservationReport scene_preservation(const ObjectField& field, const SceneCache& cache, int K = 96) {
  PreservationReport rep;
  RenderSettings rs;
  rs.K = K;
  for (const auto& v : cache.views) {
    const PreservationView pv = preservation_of(render_view(field, v, rs), v.color);
    rep.min_psnr = std::min(rep.min_psnr, pv.psnr);
    rep.views.push_back(pv);
  }
  return rep;
}

struct EvalView {
  int view_id = -1;
  PixelRect crop;
  std::optional<double> score;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;
  std::string prompt;
  std::string scorer_id;
  bool scorer_available = true;
  std::string scorer_error;
  std::uint64_t seed = 0;
  int n_views = 0;
  int K = 0;
  std::string box;
  std::vector<EvalView> views;
  std::optional<double> mean_score;
  PreservationReport preservation;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["prompt"] = prompt;
    j["scorer"] = {{"id", scorer_id}, {"available", scorer_available}};
    if (!scorer_error.empty()) j["scorer"]["error"] = scorer_error;
    j["seed"] = seed;
    j["n_views"] = n_views;
    j["K"] = K;
    j["box"] = box;
    j["views"] = nlohmann::json::array();
    for (const auto& v : views) {
      nlohmann::json e{{"view_id", v.view_id}, {"crop", {{"x", v.crop.x}, {"y", v.crop.y}, {"w", v.crop.w}, {"h", v.crop.h}}}};
      if (v.score) e["score"] = *v.score;
      j["views"].push_back(std::move(e));
    }
    if (mean_score) j["mean_score"] = *mean_score;
    j["scene_preservation"]["min_psnr_db"] = preservation.min_psnr;
    j["scene_preservation"]["psnr_cap_db"] = kPsnrCap;
    for (const auto& v : preservation.views)
      j["scene_preservation"]["views"].push_back({{"view_id", v.view_id}, {"psnr_db", v.psnr}, {"pixels", v.pixels}});
    return j;
  }
};

// Seeded choice of up to n distinct views among those where the box is visible.
inline std::vector<int> eval_views(const SceneCache& cache, const OrientedBox3D& box, int n, std::uint64_t seed) {
  std::vector<int> candidates;
  for (const auto& v : cache.views)
    if (project_box_mask(box, v.camera).any()) candidates.push_back(v.view_id);
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  if (static_cast<int>(candidates.size()) > n) candidates.resize(static_cast<std::size_t>(n));
  return candidates;
}

struct EvalOutput {
  EvalReport report;
  std::vector<RenderOutput> renders;
  std::vector<Image> crops;
};

// Renders the chosen views, crops each composite to the bounding rectangle of
// the box mask and scores the crop against the prompt.
inline EvalOutput eval_clip_protocol(const ObjectField& field, const SceneCache& cache, const std::string& prompt,
                                     Scorer* scorer, int n_views = 10, std::uint64_t seed = 0, int K = 96) {
  if (n_views < 1) throw InvalidInput("eval: n_views must be >= 1");
  EvalOutput out;
  EvalReport& rep = out.report;
  rep.prompt = prompt;
  rep.seed = seed;
  rep.n_views = n_views;
  rep.K = K;
  rep.box = box_record(field.box());
  rep.scorer_id = scorer ? scorer->id() : "none";
  rep.scorer_available = scorer != nullptr;
  RenderSettings rs;
  rs.K = K;
  for (const int id : eval_views(cache, field.box(), n_views, seed)) {
    const SceneViewRGBD& view = cache.view(id);
    RenderOutput r = render_view(field, view, rs);
    EvalView ev;
    ev.view_id = id;
    ev.crop = mask_bounds(r.M);
    Image crop = crop_image(r.I, ev.crop);
    if (rep.scorer_available) {
      try {
        ev.score = scorer->score(crop, prompt);
      } catch (const ProviderError& e) {
        rep.scorer_available = false;
        rep.scorer_error = e.what();
      }
    }
    const PreservationView pv = preservation_of(r, view.color);
    rep.preservation.min_psnr = std::min(rep.preservation.min_psnr, pv.psnr);
    rep.preservation.views.push_back(pv);
    rep.views.push_back(ev);
    out.renders.push_back(std::move(r));
    out.crops.push_back(std::move(crop));
  }
  if (rep.scorer_available && !rep.views.empty()) {
    double sum = 0.0;
    for (const auto& v : rep.views) sum += *v.score;
    rep.mean_score = sum / static_cast<double>(rep.views.size());
  } else {
    for (auto& v : rep.views) v.score.reset();
  }
  return out;
}

}  // namespace gonerf
