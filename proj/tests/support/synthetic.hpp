#pragma once

#include <algorithm>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dualenc/config.hpp"
#include "dualenc/text_data.hpp"

namespace testsupport {

struct SyntheticCorpus {
  std::vector<dualenc::VideoItem> videos;
  std::vector<dualenc::RawCaption> raw_captions;
  dualenc::Vocabulary vocab;
  std::vector<dualenc::CaptionItem> captions;

  dualenc::Corpus corpus() const { return dualenc::Corpus::assemble(videos, captions); }
};

// Clustered toy retrieval corpus: every video is a noisy repetition of its
// own feature centroid, and its two captions share a signature token triple
// (the first signature token is unique per video) mixed with shared fillers.
// Vocabulary threshold 1 so rare signature tokens survive.
inline SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, int n_videos = 32,
                                             std::int64_t dim = 16, int n_tokens = 50) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::uniform_int_distribution<std::int64_t> frame_count(4, 8);
  std::uniform_int_distribution<int> caption_len(4, 8);
  const int content_tokens = n_tokens - 10;
  std::uniform_int_distribution<int> filler(content_tokens, n_tokens - 1);

  auto word = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%02d", i);
    return std::string(buf);
  };

  SyntheticCorpus sc;
  for (int i = 0; i < n_videos; ++i) {
    std::vector<float> center(static_cast<std::size_t>(dim));
    for (auto& v : center) v = gauss(rng);
    dualenc::VideoItem vi{"vid" + std::to_string(i), frame_count(rng), dim, {}};
    vi.features.reserve(static_cast<std::size_t>(vi.frame_count * dim));
    for (std::int64_t t = 0; t < vi.frame_count; ++t)
      for (std::int64_t j = 0; j < dim; ++j)
        vi.features.push_back(center[static_cast<std::size_t>(j)] + 0.05f * gauss(rng));
    sc.videos.push_back(std::move(vi));

    const int sig[3] = {i, (i * 7 + 11) % content_tokens, (i * 3 + 29) % content_tokens};
    for (int c = 0; c < 2; ++c) {
      std::vector<std::string> words = {word(sig[0]), word(sig[1]), word(sig[2])};
      const int m = caption_len(rng);
      while (static_cast<int>(words.size()) < m) words.push_back(word(filler(rng)));
      std::shuffle(words.begin(), words.end(), rng);
      std::string text;
      for (const auto& w : words) {
        if (!text.empty()) text += ' ';
        text += w;
      }
      sc.raw_captions.push_back(
          {"vid" + std::to_string(i) + "_c" + std::to_string(c), "vid" + std::to_string(i), text});
    }
  }

  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(sc.raw_captions.size());
  for (const auto& r : sc.raw_captions) tokenized.push_back(dualenc::tokenize(r.text));
  sc.vocab = dualenc::Vocabulary::build(tokenized, /*min_count=*/1);
  for (std::size_t i = 0; i < sc.raw_captions.size(); ++i) {
    dualenc::CaptionItem item{sc.raw_captions[i].caption_id, sc.raw_captions[i].video_id, {}};
    for (const auto& t : tokenized[i]) item.tokens.push_back(sc.vocab.index_of(t));
    sc.captions.push_back(std::move(item));
  }
  return sc;
}

// The small-model configuration the synthetic corpus trains with.
inline dualenc::ModelConfig synthetic_config(const SyntheticCorpus& sc) {
  dualenc::ModelConfig cfg;
  cfg.feature_dim = sc.videos.front().dim;
  cfg.vocab_size = sc.vocab.size();
  cfg.gru_hidden = 32;
  cfg.conv_filters = 16;
  cfg.word_dim = 32;
  cfg.common_dim = 64;
  return cfg;
}

}  // namespace testsupport
