#pragma once

#include <string>

#include "flexicrime/model.hpp"

namespace flexicrime {

inline constexpr int kCheckpointVersion = 1;

// Versioned JSON checkpoint: config snapshot, grid, scaler, every parameter
// block. Doubles serialize shortest-round-trip, so load(save(m)) reproduces
// the parameters bit-exactly.
std::string checkpoint_to_json(const Model& model);
void save_checkpoint(const Model& model, const std::string& path);

// Throws CheckpointError on parse failures, version mismatches, or parameter
// layout mismatches.
Model checkpoint_from_json(const std::string& text);
Model load_checkpoint(const std::string& path);

// Fills grid.embeddings from the current region projection.
void materialize_region_embeddings(Model& model);

} // namespace flexicrime
