#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dualenc/eval.hpp"
#include "dualenc/index.hpp"
#include "dualenc/vecmath.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"

using namespace dualenc;
namespace oracle = testsupport::oracle;
using testsupport::TempDir;

namespace {

// one query whose single relevant item sits at the given 1-based rank
RankedList list_with_first_rank(const std::string& qid, int rank, int total) {
  RankedList l;
  l.query_id = qid;
  for (int i = 1; i <= total; ++i) {
    l.items.push_back("item" + std::to_string(i));
    l.relevant.push_back(i == rank ? 1 : 0);
  }
  return l;
}

// level-1-only model acting as an identity map: one-hot video features and
// single-token captions land on the same common-space axis
DualModel identity_model(std::int64_t n) {
  ModelConfig cfg;
  cfg.feature_dim = n;
  cfg.vocab_size = n;
  cfg.common_dim = n;
  cfg.levels_video = LevelSet::parse("1");
  cfg.levels_text = LevelSet::parse("1");
  cfg.gru_hidden = 2;
  cfg.conv_filters = 2;
  cfg.word_dim = 2;
  DualModel m(cfg, 0);
  for (const char* side : {"proj.video", "proj.sentence"}) {
    auto& w = m.params().at(std::string(side) + ".weight");
    std::fill(w.data.begin(), w.data.end(), 0.0f);
    for (std::int64_t i = 0; i < n; ++i) w.data[static_cast<std::size_t>(i * n + i)] = 1.0f;
  }
  for (auto s : {Side::Video, Side::Sentence}) {
    auto& bn = m.bn_state(s);
    std::fill(bn.running_mean.begin(), bn.running_mean.end(), 0.0f);
    std::fill(bn.running_var.begin(), bn.running_var.end(), 1.0f);
    bn.initialized = true;
  }
  return m;
}

}  // namespace

TEST_CASE("recall and median rank definitions") {
  std::vector<RankedList> lists{list_with_first_rank("q1", 1, 15), list_with_first_rank("q2", 3, 15),
                                list_with_first_rank("q3", 12, 15),
                                list_with_first_rank("q4", 2, 15)};
  auto m = compute_metrics(lists);
  CHECK(m.recall(1) == 25.0);
  CHECK(m.recall(5) == 75.0);
  CHECK(m.recall(10) == 75.0);
  CHECK(m.median_rank == 2.5);
  CHECK(m.mean_ap == doctest::Approx((1.0 + 1.0 / 3 + 1.0 / 12 + 1.0 / 2) / 4).epsilon(1e-12));
}

TEST_CASE("queries without a relevant item are rejected by id") {
  RankedList bad;
  bad.query_id = "the-culprit";
  bad.items = {"a", "b"};
  bad.relevant = {0, 0};
  CHECK_THROWS_WITH_AS(compute_metrics({bad}), doctest::Contains("the-culprit"),
                       std::invalid_argument);
}

TEST_CASE("metrics with many relevant items match the brute-force oracle") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int items = 30, queries = 5, relevant_per_query = 20;
    std::vector<std::string> ids;
    for (int i = 0; i < items; ++i) ids.push_back("it" + std::to_string(i));

    std::vector<std::vector<double>> scores(queries, std::vector<double>(items));
    std::vector<std::unordered_set<std::string>> rel(queries);
    std::vector<RankedList> lists;
    for (int q = 0; q < queries; ++q) {
      for (auto& s : scores[q]) s = u(rng);
      if (trial % 3 == 0) scores[q][static_cast<std::size_t>(trial % items)] = scores[q][0];  // force a tie
      std::vector<int> perm(items);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int r = 0; r < relevant_per_query; ++r) rel[q].insert(ids[static_cast<std::size_t>(perm[r])]);

      std::vector<std::pair<std::string, double>> scored;
      for (int i = 0; i < items; ++i) scored.emplace_back(ids[static_cast<std::size_t>(i)], scores[q][static_cast<std::size_t>(i)]);
      lists.push_back(make_ranked_list("q" + std::to_string(q), std::move(scored), rel[q]));
    }

    const auto got = compute_metrics(lists);
    const auto ref = oracle::metrics(scores, ids, rel, {1, 5, 10});
    CHECK(got.recall(1) == ref.recall_at.at(1));
    CHECK(got.recall(5) == ref.recall_at.at(5));
    CHECK(got.recall(10) == ref.recall_at.at(10));
    CHECK(got.median_rank == ref.med_r);
    CHECK(got.mean_ap == doctest::Approx(ref.mean_ap).epsilon(1e-12));
  }
}

TEST_CASE("recall is monotone in K") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> rank(1, 25);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RankedList> lists;
    for (int q = 0; q < 8; ++q)
      lists.push_back(list_with_first_rank("q" + std::to_string(q), rank(rng), 25));
    auto m = compute_metrics(lists);
    CHECK(m.recall(1) <= m.recall(5));
    CHECK(m.recall(5) <= m.recall(10));
  }
}

TEST_CASE("identity fixture scores perfect recalls in both directions") {
  const std::int64_t n = 12;
  auto model = identity_model(n);
  std::vector<VideoItem> videos;
  std::vector<CaptionItem> captions;
  for (std::int64_t i = 0; i < n; ++i) {
    VideoItem v{"v" + std::to_string(i), 1, n, std::vector<float>(static_cast<std::size_t>(n), 0.0f)};
    v.features[static_cast<std::size_t>(i)] = 1.0f;
    videos.push_back(std::move(v));
    captions.push_back(CaptionItem{"c" + std::to_string(i) + "a", "v" + std::to_string(i),
                                   {static_cast<std::int32_t>(i)}});
    captions.push_back(CaptionItem{"c" + std::to_string(i) + "b", "v" + std::to_string(i),
                                   {static_cast<std::int32_t>(i)}});
  }
  auto rep = evaluate_bidirectional(model, videos, captions);
  CHECK(rep.text_to_video.recall(1) == 100.0);
  CHECK(rep.video_to_text.recall(1) == 100.0);
  CHECK(rep.sum_of_recalls == 600.0);
  CHECK(rep.text_to_video.median_rank == 1.0);
}

TEST_CASE("bidirectional evaluation equals an independent metric computation") {
  auto sc = testsupport::make_synthetic_corpus(43, /*n_videos=*/10);
  auto cfg = testsupport::synthetic_config(sc);
  DualModel model(cfg, 44);  // untrained random model
  for (auto s : {Side::Video, Side::Sentence}) {
    auto& bn = model.bn_state(s);
    std::mt19937_64 rng(45);
    std::uniform_real_distribution<float> u(0.5f, 1.5f);
    for (auto& v : bn.running_mean) v = u(rng) - 1.0f;
    for (auto& v : bn.running_var) v = u(rng);
    bn.initialized = true;
  }

  const auto rep = evaluate_bidirectional(model, sc.videos, sc.captions);

  // independent pass: same encodings, scores via vecmath, ranks by counting
  std::vector<std::vector<float>> fv, fs;
  for (const auto& v : sc.videos) {
    fv.push_back(model.encode_video(v));
    l2_normalize_inplace(fv.back());
  }
  for (const auto& c : sc.captions) {
    fs.push_back(model.encode_sentence(c));
    l2_normalize_inplace(fs.back());
  }
  const std::int64_t dim = cfg.common_dim;

  std::vector<std::string> video_ids, caption_ids;
  for (const auto& v : sc.videos) video_ids.push_back(v.video_id);
  for (const auto& c : sc.captions) caption_ids.push_back(c.caption_id);

  std::vector<std::vector<double>> t2v(fs.size(), std::vector<double>(fv.size()));
  std::vector<std::unordered_set<std::string>> t2v_rel;
  for (std::size_t c = 0; c < fs.size(); ++c) {
    for (std::size_t v = 0; v < fv.size(); ++v)
      t2v[c][v] = static_cast<double>(dot(fs[c].data(), fv[v].data(), dim));
    t2v_rel.push_back({sc.captions[c].video_id});
  }
  const auto ref_t2v = oracle::metrics(t2v, video_ids, t2v_rel, {1, 5, 10});
  CHECK(rep.text_to_video.recall(1) == ref_t2v.recall_at.at(1));
  CHECK(rep.text_to_video.recall(5) == ref_t2v.recall_at.at(5));
  CHECK(rep.text_to_video.recall(10) == ref_t2v.recall_at.at(10));
  CHECK(rep.text_to_video.median_rank == ref_t2v.med_r);
  CHECK(rep.text_to_video.mean_ap == doctest::Approx(ref_t2v.mean_ap).epsilon(1e-12));

  std::vector<std::vector<double>> v2t(fv.size(), std::vector<double>(fs.size()));
  std::vector<std::unordered_set<std::string>> v2t_rel(fv.size());
  for (std::size_t v = 0; v < fv.size(); ++v)
    for (std::size_t c = 0; c < fs.size(); ++c) {
      v2t[v][c] = static_cast<double>(dot(fv[v].data(), fs[c].data(), dim));
      if (sc.captions[c].video_id == sc.videos[v].video_id)
        v2t_rel[v].insert(sc.captions[c].caption_id);
    }
  const auto ref_v2t = oracle::metrics(v2t, caption_ids, v2t_rel, {1, 5, 10});
  CHECK(rep.video_to_text.recall(1) == ref_v2t.recall_at.at(1));
  CHECK(rep.video_to_text.median_rank == ref_v2t.med_r);
  CHECK(rep.video_to_text.mean_ap == doctest::Approx(ref_v2t.mean_ap).epsilon(1e-12));
  CHECK(rep.sum_of_recalls ==
        doctest::Approx(ref_t2v.recall_at.at(1) + ref_t2v.recall_at.at(5) + ref_t2v.recall_at.at(10) +
                        ref_v2t.recall_at.at(1) + ref_v2t.recall_at.at(5) + ref_v2t.recall_at.at(10)));
}

TEST_CASE("index rows are unit-norm copies of individually encoded videos") {
  auto model = identity_model(8);
  std::vector<VideoItem> videos;
  std::mt19937_64 rng(46);
  std::uniform_real_distribution<float> u(0.1f, 1.0f);
  for (int i = 0; i < 3; ++i) {
    VideoItem v{"v" + std::to_string(i), 2, 8, {}};
    v.features.resize(16);
    for (auto& x : v.features) x = u(rng);
    videos.push_back(std::move(v));
  }
  auto index = build_index(model, videos, "cafe");
  CHECK(index.count() == 3);
  CHECK(index.dim == 8);
  for (std::int64_t i = 0; i < 3; ++i) {
    double norm = 0;
    for (std::int64_t j = 0; j < 8; ++j) norm += static_cast<double>(index.row(i)[j]) * index.row(i)[j];
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-5);
    auto expect = model.encode_video(videos[static_cast<std::size_t>(i)]);
    l2_normalize_inplace(expect);
    for (std::int64_t j = 0; j < 8; ++j)
      CHECK(index.row(i)[j] == doctest::Approx(expect[static_cast<std::size_t>(j)]).epsilon(1e-5));
  }
}

TEST_CASE("index files round-trip and rebuilds are byte-identical") {
  TempDir tmp("index");
  auto model = identity_model(6);
  std::vector<VideoItem> videos;
  for (int i = 0; i < 4; ++i) {
    VideoItem v{"vid" + std::to_string(i), 1, 6, std::vector<float>(6, 0.1f)};
    v.features[static_cast<std::size_t>(i)] = 1.0f;
    videos.push_back(std::move(v));
  }
  auto index = build_index(model, videos, "feedbead");
  save_index(index, tmp.file("a.idx"));
  save_index(build_index(model, videos, "feedbead"), tmp.file("b.idx"));

  std::ifstream fa(tmp.file("a.idx"), std::ios::binary), fb(tmp.file("b.idx"), std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());

  auto loaded = load_index(tmp.file("a.idx"));
  CHECK(loaded.dim == index.dim);
  CHECK(loaded.ids == index.ids);
  CHECK(loaded.rows == index.rows);
  CHECK(loaded.checkpoint_hash == "feedbead");

  std::filesystem::resize_file(tmp.file("a.idx"), std::filesystem::file_size(tmp.file("a.idx")) - 3);
  CHECK_THROWS_WITH_AS(load_index(tmp.file("a.idx")), doctest::Contains("truncated"), parse_error);
}

TEST_CASE("queries return exact cosines in deterministic order") {
  auto model = identity_model(6);
  auto vocab = [] {
    std::vector<std::vector<std::string>> caps;
    for (int i = 0; i < 5; ++i) caps.push_back({"word" + std::to_string(i)});
    return Vocabulary::build(caps, 1);
  }();

  std::vector<VideoItem> videos;
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<float> u(0.05f, 1.0f);
  for (int i = 0; i < 7; ++i) {
    VideoItem v{"v" + std::to_string(i), 1, 6, {}};
    v.features.resize(6);
    for (auto& x : v.features) x = u(rng);
    videos.push_back(std::move(v));
  }
  auto index = build_index(model, videos, "0123");

  auto hits = query_index(index, model, vocab, "word2 word4", 100, "0123");
  CHECK(hits.size() == 7);  // top_k larger than the index returns everything
  auto again = query_index(index, model, vocab, "word2 word4", 100, "0123");
  for (std::size_t i = 0; i < hits.size(); ++i) {
    CHECK(hits[i].video_id == again[i].video_id);
    CHECK(hits[i].score == again[i].score);
  }
  for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].score >= hits[i].score);

  // brute force: un-normalized f(v), re-normalized on the fly
  CaptionItem q{"q", "", {vocab.index_of("word2"), vocab.index_of("word4")}};
  auto fq = model.encode_sentence(q);
  l2_normalize_inplace(fq);
  for (const auto& hit : hits) {
    const auto& v = *std::find_if(videos.begin(), videos.end(),
                                  [&](const VideoItem& x) { return x.video_id == hit.video_id; });
    auto fv = model.encode_video(v);
    l2_normalize_inplace(fv);
    CHECK(hit.score == doctest::Approx(dot(fq.data(), fv.data(), 6)).epsilon(1e-5));
  }

  CHECK_THROWS_WITH_AS(query_index(index, model, vocab, "word0", 3, "9999"),
                       doctest::Contains("checkpoint"), std::runtime_error);
  CHECK_THROWS_WITH_AS(query_index(index, model, vocab, "?!", 3, "0123"),
                       doctest::Contains("alphanumeric"), std::invalid_argument);
}

TEST_CASE("query ties break by ascending video id") {
  VideoIndex index;
  index.dim = 2;
  index.checkpoint_hash = "x";
  for (const char* id : {"zeta", "alpha", "mid"}) {
    index.ids.push_back(id);
    index.rows.push_back(1.0f);
    index.rows.push_back(0.0f);
  }
  auto hits = rank_against_index(index, {1.0f, 0.0f}, 3);
  CHECK(hits[0].video_id == "alpha");
  CHECK(hits[1].video_id == "mid");
  CHECK(hits[2].video_id == "zeta");
}
