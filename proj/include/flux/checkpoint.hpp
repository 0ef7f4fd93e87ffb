#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flux/tensor.hpp"

namespace flux {

// Flat little-endian float64 binary plus a JSON index (name -> offset in
// values, shape). Round-trips bit-exactly.
void save_checkpoint(std::vector<std::pair<std::string, Tensord>> params,
                     const std::string& path_prefix);

// Loads into the given parameter tensors; shapes must match.
void load_checkpoint(std::vector<std::pair<std::string, Tensord>> params,
                     const std::string& path_prefix);

}  // namespace flux
