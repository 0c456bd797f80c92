#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dualenc/checkpoint.hpp"
#include "dualenc/trainer.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"

using namespace dualenc;
namespace oracle = testsupport::oracle;
using testsupport::TempDir;

namespace {

Corpus two_pair_corpus() {
  std::vector<VideoItem> videos{VideoItem{"a", 2, 4, {1, 0, 0, 0, 1, 0, 0, 0}},
                                VideoItem{"b", 2, 4, {0, 0, 1, 0, 0, 0, 1, 0}}};
  std::vector<CaptionItem> captions{CaptionItem{"ca", "a", {1, 2}}, CaptionItem{"cb", "b", {3, 4}}};
  return Corpus::assemble(std::move(videos), std::move(captions));
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.vocab_size = 6;
  cfg.gru_hidden = 3;
  cfg.conv_filters = 2;
  cfg.word_dim = 3;
  cfg.common_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters alone under zero gradients") {
  ad::ParameterSetT<double> ps;
  std::mt19937_64 rng(1);
  auto& p = ps.create("p", {3}, [](std::mt19937_64&) { return 0.7; }, rng);
  AdamT<double> opt(ps, 0.01);
  const auto before = p.data;
  opt.step();
  CHECK(p.data == before);
}

TEST_CASE("adam matches the hand-iterated scalar recurrence") {
  ad::ParameterSetT<double> ps;
  std::mt19937_64 rng(2);
  auto& p = ps.create("p", {1}, [](std::mt19937_64&) { return 1.5; }, rng);
  AdamT<double> opt(ps, 0.05);
  const std::vector<double> grads{0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  const auto expect = oracle::adam_scalar(1.5, grads, 0.05, 0.9, 0.999, 1e-8);
  for (std::size_t t = 0; t < grads.size(); ++t) {
    p.grad[0] = grads[t];
    opt.step();
    CHECK(p.data[0] == doctest::Approx(expect[t]).epsilon(1e-12));
  }
}

TEST_CASE("adam with lr 0 keeps parameters but advances moments") {
  ad::ParameterSetT<double> ps;
  std::mt19937_64 rng(3);
  auto& p = ps.create("p", {1}, [](std::mt19937_64&) { return 2.0; }, rng);
  AdamT<double> opt(ps, 0.0);
  for (int t = 0; t < 3; ++t) {
    p.grad[0] = 1.0;
    opt.step();
  }
  CHECK(p.data[0] == 2.0);

  // the warmed-up moments shape the next update: compare against a reference
  // run whose first three steps used lr 0
  opt.set_learning_rate(0.1);
  p.grad[0] = 1.0;
  opt.step();
  double m = 0, v = 0, ref = 2.0;
  for (int t = 1; t <= 4; ++t) {
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    const double lr = t < 4 ? 0.0 : 0.1;
    ref -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(p.data[0] == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("adam aborts on a non-finite gradient, naming the parameter") {
  ad::ParameterSetT<double> ps;
  std::mt19937_64 rng(4);
  auto& p = ps.create("proj.video.weight", {2}, [](std::mt19937_64&) { return 0.0; }, rng);
  AdamT<double> opt(ps, 0.01);
  p.grad[0] = std::nan("");
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("proj.video.weight"), std::runtime_error);
}

TEST_CASE("schedule keeps going while the loss decreases") {
  TrainState st;
  st.lr = 1e-4;
  for (double loss : {1.0, 0.9, 0.8}) CHECK(schedule_update(st, loss) == ScheduleAction::Continue);
  CHECK(st.lr == 1e-4);
  CHECK(st.best_val_loss == 0.8);
}

TEST_CASE("schedule halves the rate on the third non-decreasing epoch") {
  TrainState st;
  st.lr = 1e-4;
  CHECK(schedule_update(st, 1.0) == ScheduleAction::Continue);
  CHECK(schedule_update(st, 1.0) == ScheduleAction::Continue);
  CHECK(schedule_update(st, 1.0) == ScheduleAction::Continue);
  CHECK(schedule_update(st, 1.0) == ScheduleAction::HalveLr);
  CHECK(st.lr == 5e-5);
  CHECK(st.lr_plateau == 0);  // counter resets after halving
}

TEST_CASE("schedule stops after ten epochs without improvement") {
  TrainState st;
  st.lr = 1e-4;
  CHECK(schedule_update(st, 0.5) == ScheduleAction::Continue);
  ScheduleAction last = ScheduleAction::Continue;
  int extra = 0;
  while (last != ScheduleAction::Stop) {
    last = schedule_update(st, 0.6);
    ++extra;
    REQUIRE(extra <= 10);
  }
  CHECK(extra == 10);
  CHECK(st.epochs_since_best == 10);
}

TEST_CASE("schedule stops at the epoch cap even while improving") {
  TrainState st;
  st.lr = 1e-4;
  ScheduleAction last = ScheduleAction::Continue;
  double loss = 100.0;
  int epochs = 0;
  while (last != ScheduleAction::Stop) {
    last = schedule_update(st, loss);
    loss -= 1.0;
    ++epochs;
    REQUIRE(epochs <= 50);
  }
  CHECK(epochs == 50);
}

TEST_CASE("learning rate never increases across a training run") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  TrainState st;
  st.lr = 1e-4;
  double prev = st.lr;
  for (int e = 0; e < 50; ++e) {
    if (schedule_update(st, u(rng)) == ScheduleAction::Stop) break;
    CHECK(st.lr <= prev);
    prev = st.lr;
  }
}

TEST_CASE("validation epochs are pure: same loss twice, no state change") {
  auto corpus = two_pair_corpus();
  DualModel model(tiny_config(), 6);
  auto batches = BatchStream(corpus, 2, 0, false).epoch(0);
  const double l1 = run_epoch(model, batches, Mode::Validate, nullptr, 0.2);
  const auto snapshot = model.params().at("proj.video.weight").data;
  const bool bn_before = model.bn_state(Side::Video).initialized;
  const double l2 = run_epoch(model, batches, Mode::Validate, nullptr, 0.2);
  CHECK(l1 == l2);
  CHECK(model.params().at("proj.video.weight").data == snapshot);
  CHECK(model.bn_state(Side::Video).initialized == bn_before);
}

TEST_CASE("training on the 2-pair fixture descends") {
  auto corpus = two_pair_corpus();
  DualModel model(tiny_config(), 7);
  Adam opt(model.params(), 1e-2);
  auto batches = BatchStream(corpus, 2, 0, false).epoch(0);
  const double first = run_epoch(model, batches, Mode::Train, &opt, 0.2);
  double last = first;
  for (int e = 0; e < 49; ++e) last = run_epoch(model, batches, Mode::Train, &opt, 0.2);
  CHECK(last < first);
}

TEST_CASE("an empty batch stream is an error") {
  DualModel model(tiny_config(), 8);
  CHECK_THROWS_AS(run_epoch(model, {}, Mode::Validate, nullptr, 0.2), std::invalid_argument);
}

TEST_CASE("degenerate batches are skipped; all-degenerate streams raise") {
  auto corpus = two_pair_corpus();
  DualModel model(tiny_config(), 9);
  auto batches = BatchStream(corpus, 2, 0, false).epoch(0);
  // a singleton batch has no negatives; it must not poison the epoch
  auto single = BatchStream(corpus, 1, 0, false).epoch(0);
  REQUIRE(single.size() == 2);
  std::vector<MiniBatch> mixed{single[0], batches[0]};
  CHECK(run_epoch(model, mixed, Mode::Validate, nullptr, 0.2) ==
        run_epoch(model, batches, Mode::Validate, nullptr, 0.2));
  std::vector<MiniBatch> only_degenerate{single[0], single[1]};
  CHECK_THROWS_WITH_AS(run_epoch(model, only_degenerate, Mode::Validate, nullptr, 0.2),
                       doctest::Contains("distinct"), std::runtime_error);
}

TEST_CASE("full training is deterministic given one seed") {
  auto sc = testsupport::make_synthetic_corpus(11, /*n_videos=*/8);
  auto cfg = testsupport::synthetic_config(sc);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 5;
  tc.seed = 17;

  auto run = [&]() {
    DualModel model(cfg, tc.seed);
    auto corpus = sc.corpus();
    train_model(model, corpus, nullptr, tc, sc.vocab.content_hash(), "");
    return model.params().at("proj.video.weight").data;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round-trip reproduces eval encodings bit-identically") {
  TempDir tmp("ckpt");
  auto sc = testsupport::make_synthetic_corpus(12, /*n_videos=*/6);
  auto cfg = testsupport::synthetic_config(sc);
  DualModel model(cfg, 3);
  TrainConfig tc;
  tc.batch_size = 12;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 3;
  auto corpus = sc.corpus();
  auto res = train_model(model, corpus, nullptr, tc, sc.vocab.content_hash(), "");

  const auto path = tmp.file("m.ckpt");
  save_checkpoint(model, sc.vocab.content_hash(), res.state, path);
  auto loaded = load_checkpoint(path, sc.vocab.content_hash());

  for (const auto& v : sc.videos)
    CHECK(loaded.model.encode_video(v) == model.encode_video(v));
  for (const auto& c : sc.captions)
    CHECK(loaded.model.encode_sentence(c) == model.encode_sentence(c));
  CHECK(loaded.train_state.epoch == res.state.epoch);
  CHECK(loaded.train_state.best_val_loss == res.state.best_val_loss);

  // saving the loaded model reproduces the file byte for byte
  const auto path2 = tmp.file("m2.ckpt");
  save_checkpoint(loaded.model, loaded.vocab_hash, loaded.train_state, path2);
  CHECK(checkpoint_file_hash(path) == checkpoint_file_hash(path2));
}

TEST_CASE("corrupted checkpoints are rejected with diagnostics") {
  TempDir tmp("ckpt_bad");
  DualModel model(tiny_config(), 4);
  model.bn_state(Side::Video).initialized = true;
  model.bn_state(Side::Sentence).initialized = true;
  const auto path = tmp.file("m.ckpt");
  save_checkpoint(model, 0xabcdefULL, TrainState{}, path);

  SUBCASE("one byte truncated") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 1);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), parse_error);
  }
  SUBCASE("vocabulary hash mismatch names both hashes") {
    try {
      load_checkpoint(path, 0x123456ULL);
      FAIL("expected a hash mismatch");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("0000000000abcdef") != std::string::npos);
      CHECK(msg.find("0000000000123456") != std::string::npos);
    }
  }
  SUBCASE("bad magic") {
    std::ofstream(path) << "not a checkpoint";
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), parse_error);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(tmp.file("nope.ckpt")), io_error); }
}

TEST_CASE("train_model emits one structured record per epoch") {
  auto sc = testsupport::make_synthetic_corpus(13, /*n_videos=*/6);
  auto cfg = testsupport::synthetic_config(sc);
  DualModel model(cfg, 5);
  TrainConfig tc;
  tc.batch_size = 12;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 4;
  std::ostringstream log;
  auto corpus = sc.corpus();
  auto res = train_model(model, corpus, nullptr, tc, sc.vocab.content_hash(), "", &log);
  CHECK(res.records.size() == static_cast<std::size_t>(res.state.epoch));
  std::size_t lines = 0;
  std::string line;
  std::istringstream in(log.str());
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.find("\"epoch\"") != std::string::npos);
    CHECK(line.find("\"train_loss\"") != std::string::npos);
    CHECK(line.find("\"val_loss\"") != std::string::npos);
    CHECK(line.find("\"lr\"") != std::string::npos);
    CHECK(line.find("\"action\"") != std::string::npos);
  }
  CHECK(lines == res.records.size());
}
