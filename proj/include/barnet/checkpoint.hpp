#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "barnet/model.hpp"

namespace barnet {

inline constexpr char kCheckpointMagic[] = "BARNETKIT1";

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const TensorRecord&) const = default;
};

/// Magic, little-endian u64 config hash, then one record per tensor:
/// u32 name length, name bytes, u32 rank, u64 extents, float32 values.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<TensorRecord> records;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws ParseError naming the byte offset of the first malformed field.
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters followed by batch-norm buffers, in the model's naming order.
Checkpoint capture(const BarnetMini<float>& model, std::uint64_t config_hash);
/// Copies every record into the model; names and shapes must match exactly.
void restore(BarnetMini<float>& model, const Checkpoint& ckpt);

}  // namespace barnet
