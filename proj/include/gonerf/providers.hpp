#pragma once

#include <memory>
#include <string>

#include "gonerf/box_target.hpp"
#include "gonerf/config.hpp"
#include "gonerf/guidance.hpp"
#include "gonerf/http_provider.hpp"

namespace gonerf {

// A provider plus whatever it borrows from.
struct ProviderHandle {
  std::shared_ptr<BoxTargets> targets;
  std::unique_ptr<NoiseProvider> provider;

  NoiseProvider& operator*() const { return *provider; }
};

// "stub"   color-prior denoiser (wire compatible, no model)
// "oracle" target-oracle toward a shaded cuboid in the box (in-process only)
// "http"   remote backend at provider_endpoint
inline ProviderHandle make_provider(const TrainConfig& cfg, const SceneCache& cache, const OrientedBox3D& box) {
  ProviderHandle h;
  if (cfg.provider == "stub") {
    h.provider = std::make_unique<ColorPriorProvider>(NoiseSchedule(), cfg.native_resolution);
  } else if (cfg.provider == "oracle") {
    h.targets = std::make_shared<BoxTargets>(cache, box);
    auto targets = h.targets;
    h.provider = std::make_unique<TargetOracleProvider>(
        [targets](int view_id, BackgroundMode mode) -> const Image& { return targets->image(view_id, mode); },
        cfg.provider_eta, NoiseSchedule(), cfg.native_resolution);
  } else if (cfg.provider == "http") {
    auto p = std::make_unique<HttpNoiseProvider>(cfg.provider_endpoint, cfg.provider_timeout_s);
    if (p->native_resolution() != cfg.native_resolution)
      log::warn("provider reports native resolution " + std::to_string(p->native_resolution()) +
                ", overriding the configured " + std::to_string(cfg.native_resolution));
    h.provider = std::move(p);
  } else {
    throw ConfigError("unknown provider '" + cfg.provider + "' (expected stub, oracle or http)");
  }
  return h;
}

}  // namespace gonerf
