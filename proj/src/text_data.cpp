#include "dualenc/text_data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unordered_set>

#include "dualenc/hash.hpp"

namespace dualenc {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_tabs(const std::string& line, std::size_t expected) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (fields.size() + 1 < expected) {
    const auto tab = line.find('\t', start);
    if (tab == std::string::npos) break;
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  fields.push_back(line.substr(start));
  return fields;
}

std::string float_repr(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& sentence) {
  std::vector<std::string> out;
  std::istringstream in(sentence);
  std::string chunk;
  while (in >> chunk) {
    std::size_t b = 0, e = chunk.size();
    while (b < e && !is_alnum(chunk[b])) ++b;
    while (e > b && !is_alnum(chunk[e - 1])) --e;
    if (b < e) out.push_back(lowercase(chunk.substr(b, e - b)));
  }
  if (out.empty())
    throw std::invalid_argument("tokenize: caption has no alphanumeric content: \"" + sentence + "\"");
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& caption_tokens,
                             int min_count) {
  if (caption_tokens.empty())
    throw std::invalid_argument("build_vocabulary: empty caption corpus");
  if (min_count < 1) throw std::invalid_argument("build_vocabulary: min_count must be >= 1");
  std::map<std::string, std::int64_t> freq;  // ordered map gives the sort for free
  for (const auto& toks : caption_tokens)
    for (const auto& t : toks) ++freq[t];
  Vocabulary v;
  v.tokens_.push_back(kUnkToken);
  for (const auto& [tok, cnt] : freq)
    if (cnt >= min_count) v.tokens_.push_back(tok);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    v.index_[v.tokens_[i]] = static_cast<std::int32_t>(i);
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (v.tokens_.empty() && line != kUnkToken)
      throw parse_error(path + ": first vocabulary line must be '" + kUnkToken + "', got '" + line + "'");
    if (v.index_.count(line))
      throw parse_error(path + ": duplicate vocabulary token '" + line + "'");
    v.index_[line] = static_cast<std::int32_t>(v.tokens_.size());
    v.tokens_.push_back(line);
  }
  if (v.tokens_.empty()) throw parse_error(path + ": empty vocabulary file");
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write vocabulary file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

std::int32_t Vocabulary::index_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  const char sep = '\n';
  for (const auto& t : tokens_) {
    h = fnv1a64(t.data(), t.size(), h);
    h = fnv1a64(&sep, 1, h);
  }
  return h;
}

std::vector<VideoItem> load_frame_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open frame-feature file: " + path);

  std::string line;
  std::int64_t lineno = 0;
  if (!std::getline(in, line))
    throw parse_error(path + ": empty frame-feature file");
  ++lineno;
  std::int64_t dim = 0;
  if (line.rfind("#dim ", 0) != 0 || (dim = std::atoll(line.c_str() + 5)) < 1)
    throw parse_error(path + ":1: expected header '#dim <d>', got '" + line + "'");

  std::vector<VideoItem> videos;
  std::unordered_set<std::string> finished;
  std::vector<float> row(static_cast<std::size_t>(dim));
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = [&] { return path + ":" + std::to_string(lineno); };
    auto fields = split_tabs(line, 3);
    if (fields.size() != 3)
      throw parse_error(where() + ": expected '<video_id>\\t<frame_index>\\t<values>'");
    const std::string& vid = fields[0];
    if (vid.empty()) throw parse_error(where() + ": empty video id");

    if (videos.empty() || videos.back().video_id != vid) {
      if (!videos.empty()) finished.insert(videos.back().video_id);
      if (finished.count(vid))
        throw parse_error(where() + ": duplicate video id '" + vid + "' (frames must be contiguous)");
      videos.push_back(VideoItem{vid, 0, dim, {}});
    }
    VideoItem& v = videos.back();

    char* end = nullptr;
    const long long frame_index = std::strtoll(fields[1].c_str(), &end, 10);
    if (end == fields[1].c_str() || *end != '\0' || frame_index != v.frame_count)
      throw parse_error(where() + ": expected frame index " + std::to_string(v.frame_count) +
                        " for video '" + vid + "', got '" + fields[1] + "'");

    const char* p = fields[2].c_str();
    for (std::int64_t j = 0; j < dim; ++j) {
      char* stop = nullptr;
      row[static_cast<std::size_t>(j)] = std::strtof(p, &stop);
      if (stop == p)
        throw parse_error(where() + ": expected " + std::to_string(dim) + " values, found " +
                          std::to_string(j));
      p = stop;
    }
    while (*p == ' ') ++p;
    if (*p != '\0')
      throw parse_error(where() + ": more than " + std::to_string(dim) + " values on line");
    v.features.insert(v.features.end(), row.begin(), row.end());
    ++v.frame_count;
  }
  if (videos.empty()) throw parse_error(path + ": no frame rows after header");
  return videos;
}

std::vector<RawCaption> load_raw_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open caption file: " + path);
  std::vector<RawCaption> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line, 3);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty())
      throw parse_error(path + ":" + std::to_string(lineno) +
                        ": expected '<caption_id>\\t<video_id>\\t<sentence>'");
    out.push_back(RawCaption{fields[0], fields[1], fields[2]});
  }
  if (out.empty()) throw parse_error(path + ": no captions");
  return out;
}

std::vector<CaptionItem> load_captions(const std::string& path, const Vocabulary& vocab) {
  auto raw = load_raw_captions(path);
  std::vector<CaptionItem> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    CaptionItem item{r.caption_id, r.video_id, {}};
    std::vector<std::string> toks;
    try {
      toks = tokenize(r.text);
    } catch (const std::invalid_argument& e) {
      throw parse_error(path + ": caption '" + r.caption_id + "': " + e.what());
    }
    for (const auto& t : toks) item.tokens.push_back(vocab.index_of(t));
    out.push_back(std::move(item));
  }
  return out;
}

void write_frame_features(const std::string& path, const std::vector<VideoItem>& videos) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write frame-feature file: " + path);
  if (videos.empty()) throw std::invalid_argument("write_frame_features: no videos");
  out << "#dim " << videos.front().dim << '\n';
  for (const auto& v : videos) {
    for (std::int64_t t = 0; t < v.frame_count; ++t) {
      out << v.video_id << '\t' << t << '\t';
      const float* f = v.frame(t);
      for (std::int64_t j = 0; j < v.dim; ++j) {
        if (j) out << ' ';
        out << float_repr(f[j]);
      }
      out << '\n';
    }
  }
}

void write_captions(const std::string& path, const std::vector<RawCaption>& captions) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write caption file: " + path);
  for (const auto& c : captions) out << c.caption_id << '\t' << c.video_id << '\t' << c.text << '\n';
}

std::vector<float> bow_encode(const CaptionItem& caption, std::int64_t vocab_size) {
  if (caption.tokens.empty())
    throw std::invalid_argument("bow_encode: empty caption '" + caption.caption_id + "'");
  std::vector<float> v(static_cast<std::size_t>(vocab_size), 0.0f);
  const float w = 1.0f / static_cast<float>(caption.tokens.size());
  for (auto idx : caption.tokens) {
    if (idx < 0 || idx >= vocab_size)
      throw std::out_of_range("bow_encode: token index " + std::to_string(idx) +
                              " outside vocabulary of size " + std::to_string(vocab_size));
    v[static_cast<std::size_t>(idx)] += w;
  }
  return v;
}

Corpus Corpus::assemble(std::vector<VideoItem> videos, std::vector<CaptionItem> captions) {
  Corpus c;
  c.videos = std::move(videos);
  c.captions = std::move(captions);
  if (c.videos.empty()) throw std::invalid_argument("corpus: no videos");
  if (c.captions.empty()) throw std::invalid_argument("corpus: no captions");
  const std::int64_t d = c.videos.front().dim;
  for (std::size_t i = 0; i < c.videos.size(); ++i) {
    const auto& v = c.videos[i];
    if (v.dim != d)
      throw std::invalid_argument("corpus: video '" + v.video_id + "' has dimension " +
                                  std::to_string(v.dim) + ", expected " + std::to_string(d));
    if (v.frame_count < 1)
      throw std::invalid_argument("corpus: video '" + v.video_id + "' has no frames");
    if (!c.video_slot.emplace(v.video_id, i).second)
      throw std::invalid_argument("corpus: duplicate video id '" + v.video_id + "'");
  }
  for (const auto& cap : c.captions) {
    if (!c.video_slot.count(cap.video_id))
      throw std::invalid_argument("corpus: caption '" + cap.caption_id +
                                  "' references unknown video '" + cap.video_id + "'");
    if (cap.tokens.empty())
      throw std::invalid_argument("corpus: caption '" + cap.caption_id + "' is empty");
  }
  return c;
}

BatchStream::BatchStream(const Corpus& corpus, std::int64_t batch_size, std::uint64_t seed,
                         bool shuffle)
    : corpus_(&corpus), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size_ < 1) throw std::invalid_argument("batch stream: batch size must be >= 1");
  if (corpus.captions.size() < 2)
    throw std::invalid_argument("batch stream: need at least 2 pairs");
  std::unordered_set<std::string> distinct;
  for (const auto& cap : corpus.captions) distinct.insert(cap.video_id);
  if (distinct.size() < 2)
    throw std::invalid_argument("batch stream: all pairs share one video id; no negatives exist");
}

std::vector<MiniBatch> BatchStream::epoch(std::int64_t epoch_index) const {
  const auto& captions = corpus_->captions;
  std::vector<std::size_t> order(captions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_) {
    std::mt19937_64 rng(seed_ + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch_index + 1));
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<MiniBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size_));
    MiniBatch b;
    b.size = static_cast<std::int64_t>(stop - start);
    b.feature_dim = corpus_->feature_dim();
    for (std::size_t p = start; p < stop; ++p) {
      const auto& cap = captions[order[p]];
      const auto& vid = corpus_->video_of(cap);
      b.max_frames = std::max(b.max_frames, vid.frame_count);
      b.max_tokens = std::max(b.max_tokens, static_cast<std::int64_t>(cap.tokens.size()));
    }
    b.videos = ad::Tensor::zeros({b.size, b.max_frames, b.feature_dim});
    b.tokens.assign(static_cast<std::size_t>(b.size * b.max_tokens), 0);
    std::unordered_map<std::string, std::int64_t> groups;
    for (std::size_t p = start; p < stop; ++p) {
      const std::int64_t i = static_cast<std::int64_t>(p - start);
      const auto& cap = captions[order[p]];
      const auto& vid = corpus_->video_of(cap);
      std::copy(vid.features.begin(), vid.features.end(),
                b.videos.data.begin() + i * b.max_frames * b.feature_dim);
      b.frame_count.push_back(vid.frame_count);
      std::copy(cap.tokens.begin(), cap.tokens.end(),
                b.tokens.begin() + i * b.max_tokens);
      b.token_count.push_back(static_cast<std::int64_t>(cap.tokens.size()));
      b.video_ids.push_back(cap.video_id);
      b.caption_ids.push_back(cap.caption_id);
      auto [it, fresh] = groups.emplace(cap.video_id, static_cast<std::int64_t>(groups.size()));
      b.group_ids.push_back(it->second);
      (void)fresh;
    }
    b.distinct_groups = static_cast<std::int64_t>(groups.size());
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace dualenc
