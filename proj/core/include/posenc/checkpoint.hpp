#pragma once

#include <filesystem>
#include <memory>

#include "posenc/model.hpp"

namespace posenc {

// Binary container: the 8-byte magic "POSENCK1", a little-endian u64 header
// length, a JSON header (format version, config, item count, attribute
// dims, tensor names and shapes), then every tensor as raw little-endian
// doubles in header order.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const SequentialRecommender& model, const std::filesystem::path& path);
// Throws DataError on a missing, truncated or mismatched file.
std::shared_ptr<SequentialRecommender> load_checkpoint(const std::filesystem::path& path);

}  // namespace posenc
