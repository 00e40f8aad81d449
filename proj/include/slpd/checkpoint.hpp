#pragma once

#include <filesystem>

#include "slpd/distill.hpp"

namespace slpd {

/// Binary checkpoint of a full DistillState: magic `SLPC`, version, scalar
/// hyperparameters, a named shape table, then all tensors as little-endian
/// 32-bit floats. Writing is byte-deterministic for equal states.
void save_checkpoint(const DistillState& state, const std::filesystem::path& path);

DistillState load_checkpoint(const std::filesystem::path& path);

}  // namespace slpd
