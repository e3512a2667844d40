#pragma once

#include <string>
#include <vector>

#include "pmn/params.hpp"

namespace pmn {

/// One named parameter set inside a checkpoint, in declaration order.
struct CheckpointSection {
  std::string component;   // e.g. "G", "Q->rel", "encoder"
  ParamsPtr params;
};

struct CheckpointMeta {
  std::string module;
  int level = 0;
  uint64_t seed = 0;
};

/// Binary format: magic "PMN1", a u32 little-endian byte length, a UTF-8
/// JSON metadata document (module, level, seed, tensor shapes in order),
/// then the raw little-endian f64 buffers in metadata order. Round-trips
/// are bitwise exact.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<CheckpointSection>& sections);

/// Load into already-constructed parameter sets; shapes must match.
CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<CheckpointSection>& sections);

/// Read only the metadata JSON text.
std::string read_checkpoint_meta(const std::string& path);

}  // namespace pmn
