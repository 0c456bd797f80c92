#include "dualenc/index.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dualenc/errors.hpp"
#include "dualenc/vecmath.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "index format is little-endian");

namespace dualenc {

using nlohmann::json;

namespace {
constexpr const char* kMagic = "DUALENC-INDEX 1";
}

VideoIndex build_index(const DualModel& model, const std::vector<VideoItem>& videos,
                       const std::string& checkpoint_hash) {
  if (videos.empty()) throw std::invalid_argument("build_index: no videos");
  VideoIndex index;
  index.dim = model.config().common_dim;
  index.checkpoint_hash = checkpoint_hash;
  index.rows.reserve(videos.size() * static_cast<std::size_t>(index.dim));
  std::unordered_set<std::string> seen;
  for (const auto& v : videos) {
    if (!seen.insert(v.video_id).second)
      throw std::invalid_argument("build_index: duplicate video id '" + v.video_id + "'");
    std::vector<float> f = model.encode_video(v);
    l2_normalize_inplace(f);
    index.rows.insert(index.rows.end(), f.begin(), f.end());
    index.ids.push_back(v.video_id);
  }
  return index;
}

void save_index(const VideoIndex& index, const std::string& path) {
  const std::string header = json{{"version", 1},
                                  {"checkpoint_hash", index.checkpoint_hash},
                                  {"count", index.count()},
                                  {"dim", index.dim}}
                                 .dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write index: " + path);
  f << kMagic << '\n' << header.size() << '\n' << header << '\n';
  f.write(reinterpret_cast<const char*>(index.rows.data()),
          static_cast<std::streamsize>(index.rows.size() * sizeof(float)));
  for (const auto& id : index.ids) {
    const std::uint32_t len = static_cast<std::uint32_t>(id.size());
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  if (!f) throw io_error("short write to index: " + path);
}

VideoIndex load_index(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open index: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  std::size_t pos = buf.find('\n');
  if (pos == std::string::npos || buf.substr(0, pos) != kMagic)
    throw parse_error(path + ": not an index file (bad magic)");
  const std::size_t len_end = buf.find('\n', pos + 1);
  if (len_end == std::string::npos) throw parse_error(path + ": truncated header");
  const std::size_t hlen = static_cast<std::size_t>(std::stoull(buf.substr(pos + 1, len_end - pos - 1)));
  if (len_end + 1 + hlen + 1 > buf.size()) throw parse_error(path + ": truncated header");

  VideoIndex index;
  std::int64_t count = 0;
  try {
    const json header = json::parse(buf.substr(len_end + 1, hlen));
    if (header.at("version").get<int>() != 1)
      throw parse_error(path + ": unsupported index version");
    index.checkpoint_hash = header.at("checkpoint_hash").get<std::string>();
    count = header.at("count").get<std::int64_t>();
    index.dim = header.at("dim").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw parse_error(path + ": bad index header: " + e.what());
  }
  if (count < 1 || index.dim < 1) throw parse_error(path + ": empty index");

  std::size_t cur = len_end + 1 + hlen + 1;
  const std::size_t row_bytes = static_cast<std::size_t>(count * index.dim) * sizeof(float);
  if (cur + row_bytes > buf.size()) throw parse_error(path + ": truncated vector rows");
  index.rows.resize(static_cast<std::size_t>(count * index.dim));
  std::memcpy(index.rows.data(), buf.data() + cur, row_bytes);
  cur += row_bytes;

  for (std::int64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    if (cur + sizeof len > buf.size()) throw parse_error(path + ": truncated id table");
    std::memcpy(&len, buf.data() + cur, sizeof len);
    cur += sizeof len;
    if (cur + len > buf.size()) throw parse_error(path + ": truncated id table");
    index.ids.emplace_back(buf.data() + cur, len);
    cur += len;
  }
  if (cur != buf.size())
    throw parse_error(path + ": " + std::to_string(buf.size() - cur) + " trailing bytes");
  return index;
}

std::vector<QueryHit> rank_against_index(const VideoIndex& index, const std::vector<float>& unit_query,
                                         std::int64_t top_k) {
  if (static_cast<std::int64_t>(unit_query.size()) != index.dim)
    throw std::invalid_argument("query: dimension " + std::to_string(unit_query.size()) +
                                " does not match index dimension " + std::to_string(index.dim));
  const std::int64_t n = index.count();
  std::vector<float> scores(static_cast<std::size_t>(n));
  const float* q = unit_query.data();
  for (std::int64_t i = 0; i < n; ++i)
    scores[static_cast<std::size_t>(i)] = dot(index.row(i), q, index.dim);

  const std::int64_t k = std::min(top_k, n);
  if (k < 1) throw std::invalid_argument("query: top_k must be >= 1");
  std::vector<std::int32_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::int32_t a, std::int32_t b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return index.ids[static_cast<std::size_t>(a)] < index.ids[static_cast<std::size_t>(b)];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);

  std::vector<QueryHit> hits;
  hits.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i)
    hits.push_back({index.ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])],
                    scores[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]});
  return hits;
}

std::vector<QueryHit> query_index(const VideoIndex& index, const DualModel& model,
                                  const Vocabulary& vocab, const std::string& sentence,
                                  std::int64_t top_k, const std::string& model_checkpoint_hash) {
  if (index.checkpoint_hash != model_checkpoint_hash)
    throw std::runtime_error("query: index was built from checkpoint " + index.checkpoint_hash +
                             " but the loaded model is " + model_checkpoint_hash);
  const auto tokens = tokenize(sentence);  // throws on no alphanumeric content
  CaptionItem item{"query", "", {}};
  for (const auto& t : tokens) item.tokens.push_back(vocab.index_of(t));
  std::vector<float> f = model.encode_sentence(item);
  l2_normalize_inplace(f);
  return rank_against_index(index, f, top_k);
}

}  // namespace dualenc
