#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualenc/errors.hpp"
#include "dualenc/tensor.hpp"

namespace dualenc {

// Lowercases, splits on whitespace and strips non-alphanumeric characters
// from token edges (interior punctuation such as hyphens survives).
// Throws when the sentence holds no alphanumeric content at all.
std::vector<std::string> tokenize(const std::string& sentence);

// Token <-> index map built from training captions only. Index 0 is reserved
// for the rare/unknown token; every other index is assigned in lexicographic
// token order, so construction is deterministic.
class Vocabulary {
 public:
  static constexpr const char* kUnkToken = "<unk>";

  static Vocabulary build(const std::vector<std::vector<std::string>>& caption_tokens,
                          int min_count = 5);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::int32_t index_of(const std::string& token) const;  // 0 when unknown
  const std::string& token(std::int32_t index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
  std::uint64_t content_hash() const;

 private:
  std::vector<std::string> tokens_;  // tokens_[0] == kUnkToken
  std::unordered_map<std::string, std::int32_t> index_;
};

struct CaptionItem {
  std::string caption_id;
  std::string video_id;
  std::vector<std::int32_t> tokens;  // vocabulary indices, length >= 1
};

struct VideoItem {
  std::string video_id;
  std::int64_t frame_count = 0;
  std::int64_t dim = 0;
  std::vector<float> features;  // frame_count x dim, row-major

  const float* frame(std::int64_t t) const { return features.data() + t * dim; }
};

struct RawCaption {
  std::string caption_id;
  std::string video_id;
  std::string text;
};

// File formats:
//   frame features: "#dim <d>" header, then "<video_id>\t<frame_index>\t<d floats>"
//                   with the frames of one video contiguous and 0-indexed in order
//   captions:       "<caption_id>\t<video_id>\t<raw sentence>"
std::vector<VideoItem> load_frame_features(const std::string& path);
std::vector<RawCaption> load_raw_captions(const std::string& path);
std::vector<CaptionItem> load_captions(const std::string& path, const Vocabulary& vocab);
void write_frame_features(const std::string& path, const std::vector<VideoItem>& videos);
void write_captions(const std::string& path, const std::vector<RawCaption>& captions);

// Averaged one-hot vectors: entry j = count(j) / m. Entries sum to 1.
std::vector<float> bow_encode(const CaptionItem& caption, std::int64_t vocab_size);

// Videos plus captions with every caption bound to a present video. Each
// (video, caption) pair is one training example.
struct Corpus {
  std::vector<VideoItem> videos;
  std::vector<CaptionItem> captions;
  std::unordered_map<std::string, std::size_t> video_slot;

  static Corpus assemble(std::vector<VideoItem> videos, std::vector<CaptionItem> captions);
  const VideoItem& video_of(const CaptionItem& c) const { return videos[video_slot.at(c.video_id)]; }
  std::int64_t feature_dim() const { return videos.empty() ? 0 : videos.front().dim; }
};

// One padded training batch. Padded positions are zero and excluded from all
// pooling/recurrence through the per-item lengths. Pairs with equal group id
// are relevant to each other; different group ids act as negatives.
struct MiniBatch {
  std::int64_t size = 0;
  std::int64_t max_frames = 0;
  std::int64_t feature_dim = 0;
  ad::Tensor videos;  // {B, n_max, d}
  std::vector<std::int64_t> frame_count;

  std::int64_t max_tokens = 0;
  std::vector<std::int32_t> tokens;  // B * m_max
  std::vector<std::int64_t> token_count;

  std::vector<std::string> video_ids;
  std::vector<std::string> caption_ids;
  std::vector<std::int64_t> group_ids;
  std::int64_t distinct_groups = 0;

  const float* item_frames(std::int64_t i) const {
    return videos.data.data() + i * max_frames * feature_dim;
  }
  const std::int32_t* item_tokens(std::int64_t i) const { return tokens.data() + i * max_tokens; }
};

// Deterministic mini-batch assembly: pairs are reshuffled per epoch from the
// seed, the short final batch is kept.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::int64_t batch_size, std::uint64_t seed, bool shuffle = true);

  std::vector<MiniBatch> epoch(std::int64_t epoch_index) const;
  std::int64_t pair_count() const { return static_cast<std::int64_t>(corpus_->captions.size()); }
  std::int64_t batch_size() const { return batch_size_; }

 private:
  const Corpus* corpus_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace dualenc
