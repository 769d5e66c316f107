#pragma once

#include <string>

#include "sst/model.hpp"

namespace sst {

// Versioned binary container: magic, byte-order marker, float width, role
// tag, ModelConfig, then each named parameter array with shape metadata.
// Loading validates the header and every shape.
void save_checkpoint(const ModelSnapshot& model, const std::string& path);
ModelSnapshot load_checkpoint(const std::string& path);

}  // namespace sst
