#pragma once

#include "drowsy/data.hpp"
#include "drowsy/error.hpp"
#include "drowsy/mlp.hpp"
#include "drowsy/model_io.hpp"
#include "drowsy/preprocess.hpp"
#include "drowsy/rng.hpp"
#include "drowsy/runtime.hpp"
#include "drowsy/stream.hpp"
#include "drowsy/training.hpp"

namespace drowsy {

inline constexpr std::string_view kVersion = "1.0.0";

}  // namespace drowsy
