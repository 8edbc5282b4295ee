#pragma once

// Checkpoint documents: JSON listing every net's layer dims, activation and
// row-major weights/biases at full precision, plus the diffusion and
// interaction settings, RBF centers/widths and the seed.

#include <string>

#include <nlohmann/json.hpp>
#include "umfsb/nets.hpp"

namespace umfsb {

struct Checkpoint {
  ModelBundle model;
  nlohmann::json config = nlohmann::json::object();  // echoed run configuration
  std::string stage = "complete";                    // last completed stage
};

nlohmann::json mlp_to_json(const ad::Mlp& net);
ad::Mlp mlp_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Throws DataError on unreadable or malformed documents.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace umfsb
