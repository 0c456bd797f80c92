#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualenc/model.hpp"
#include "dualenc/text_data.hpp"

namespace dualenc {

// Offline store of unit-normalized eval-mode video vectors, pinned to the
// checkpoint that produced them. Immutable once built; queries are one
// matrix-vector product plus a partial sort.
struct VideoIndex {
  std::int64_t dim = 0;
  std::vector<float> rows;  // count x dim, each row unit-norm
  std::vector<std::string> ids;
  std::string checkpoint_hash;  // hex

  std::int64_t count() const { return static_cast<std::int64_t>(ids.size()); }
  const float* row(std::int64_t i) const { return rows.data() + i * dim; }
};

VideoIndex build_index(const DualModel& model, const std::vector<VideoItem>& videos,
                       const std::string& checkpoint_hash);

// File layout: "DUALENC-INDEX 1", a JSON header (version, checkpoint hash,
// count, dim), raw little-endian float32 rows, then a length-prefixed id
// table. Writing the same index twice produces identical bytes.
void save_index(const VideoIndex& index, const std::string& path);
VideoIndex load_index(const std::string& path);

struct QueryHit {
  std::string video_id;
  float score;  // exact cosine similarity
};

// Encodes the sentence with the supplied model (whose checkpoint hash must
// match the index) and returns the top_k videos by descending cosine, ties
// broken by ascending video id.
std::vector<QueryHit> query_index(const VideoIndex& index, const DualModel& model,
                                  const Vocabulary& vocab, const std::string& sentence,
                                  std::int64_t top_k, const std::string& model_checkpoint_hash);

// The ranking core, exposed for callers that already hold an encoded query.
std::vector<QueryHit> rank_against_index(const VideoIndex& index, const std::vector<float>& unit_query,
                                         std::int64_t top_k);

}  // namespace dualenc
