#pragma once

#include <string>

#include "cellseg/trainer.hpp"

namespace cellseg {

// Binary checkpoint container: magic, format version, a JSON header carrying
// the NetConfig and trainer scalars plus the layer list (path + shapes), then
// one little-endian 32-bit float payload per layer (parameters followed by
// Adam moments). Parameters live on the float grid (ParamPrecision::f32), so
// save/load round-trips bit-exactly.
void save_checkpoint(const TrainState& state, const std::string& path);

// Throws DataError on bad magic/version or truncated/oversized payload; the
// returned state is complete or the call throws (no partial loads).
TrainState load_checkpoint(const std::string& path);

// Throws ConfigError when the checkpoint's network config differs from the
// expected one (used when resuming).
void require_config_match(const NetConfig& checkpoint_cfg, const NetConfig& expected);

} // namespace cellseg
