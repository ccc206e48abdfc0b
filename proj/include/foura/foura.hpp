#pragma once

// Umbrella header for the FouRA workbench library.

#include "foura/adapter.hpp"
#include "foura/analysis.hpp"
#include "foura/autodiff.hpp"
#include "foura/checkpoint.hpp"
#include "foura/config.hpp"
#include "foura/csv.hpp"
#include "foura/errors.hpp"
#include "foura/matrix.hpp"
#include "foura/merge.hpp"
#include "foura/optimizer.hpp"
#include "foura/rng.hpp"
#include "foura/svd.hpp"
#include "foura/svg.hpp"
#include "foura/trainer.hpp"
#include "foura/transforms.hpp"

namespace foura {

inline constexpr const char* kLibraryVersion = "0.1.0";

}  // namespace foura
