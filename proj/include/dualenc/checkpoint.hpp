#pragma once

#include <optional>
#include <string>

#include "dualenc/model.hpp"
#include "dualenc/schedule.hpp"

namespace dualenc {

struct LoadedCheckpoint {
  DualModel model;
  TrainState train_state;
  std::string file_hash;  // fnv1a-64 hex of the checkpoint bytes
  std::uint64_t vocab_hash = 0;
};

// Container format: a text header ("DUALENC-CKPT 1", manifest byte length,
// JSON manifest) followed by one length-prefixed little-endian float32 blob
// per parameter and batchnorm buffer, in manifest order. Loading reproduces
// eval-mode encodings bit-identically.
void save_checkpoint(const DualModel& model, std::uint64_t vocab_hash, const TrainState& state,
                     const std::string& path);

// `expected_vocab_hash`, when given, must match the stored hash.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

std::string checkpoint_file_hash(const std::string& path);

}  // namespace dualenc
