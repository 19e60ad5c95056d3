#pragma once

#include "gonerf/adam.hpp"
#include "gonerf/archive.hpp"
#include "gonerf/box_target.hpp"
#include "gonerf/compositor.hpp"
#include "gonerf/config.hpp"
#include "gonerf/errors.hpp"
#include "gonerf/geometry.hpp"
#include "gonerf/guidance.hpp"
#include "gonerf/harness.hpp"
#include "gonerf/hash_grid.hpp"
#include "gonerf/image.hpp"
#include "gonerf/mlp.hpp"
#include "gonerf/object_field.hpp"
#include "gonerf/objectives.hpp"
#include "gonerf/png_io.hpp"
#include "gonerf/scene_cache.hpp"
#include "gonerf/spherical_harmonics.hpp"
#include "gonerf/synthetic_scene.hpp"
#include "gonerf/trainer.hpp"
#include "gonerf/http_provider.hpp"
#include "gonerf/providers.hpp"
#include "gonerf/service.hpp"
