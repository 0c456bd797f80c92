// dualenc: train, encode, retrieve and evaluate dual multi-level video/text
// encoders from the command line.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dualenc/checkpoint.hpp"
#include "dualenc/eval.hpp"
#include "dualenc/index.hpp"
#include "dualenc/trainer.hpp"
#include "json.hpp"

using namespace dualenc;
using nlohmann::json;

namespace {

struct TrainArgs {
  std::string features, captions, vocab, checkpoint;
  std::string config_path, val_features, val_captions, embeddings, log_path;
  std::string levels_video, levels_text;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
};

json direction_json(const MetricReport& m) {
  json j;
  for (const auto& [k, v] : m.recall_at) j["r" + std::to_string(k)] = v;
  j["med_r"] = m.median_rank;
  j["map"] = m.mean_ap;
  return j;
}

void print_report(const BidirectionalReport& rep) {
  std::printf("%-15s %6s %6s %6s %7s %7s\n", "direction", "R@1", "R@5", "R@10", "Med r", "mAP");
  for (const auto& [name, m] :
       {std::pair<const char*, const MetricReport&>{"text-to-video", rep.text_to_video},
        std::pair<const char*, const MetricReport&>{"video-to-text", rep.video_to_text}})
    std::printf("%-15s %6.1f %6.1f %6.1f %7.1f %7.3f\n", name, m.recall(1), m.recall(5),
                m.recall(10), m.median_rank, m.mean_ap);
  std::printf("sum of recalls: %.1f\n", rep.sum_of_recalls);
}

int run_build_vocab(const std::string& captions_path, const std::string& vocab_path, int min_count) {
  const auto raw = load_raw_captions(captions_path);
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(raw.size());
  for (const auto& r : raw) tokenized.push_back(tokenize(r.text));
  const auto vocab = Vocabulary::build(tokenized, min_count);
  vocab.save(vocab_path);
  std::printf("vocabulary: %lld tokens (incl. %s) from %zu captions -> %s\n",
              static_cast<long long>(vocab.size()), Vocabulary::kUnkToken, raw.size(),
              vocab_path.c_str());
  return 0;
}

int run_train(TrainArgs& a, const CLI::App* cmd) {
  // config file first, explicit flags on top
  ModelConfig flag_model = a.model_cfg;
  TrainConfig flag_train = a.train_cfg;
  if (!a.config_path.empty()) apply_config_file(a.config_path, a.model_cfg, a.train_cfg);
  if (cmd->count("--common-dim")) a.model_cfg.common_dim = flag_model.common_dim;
  if (cmd->count("--seed")) a.train_cfg.seed = flag_train.seed;
  if (cmd->count("--batch-size")) a.train_cfg.batch_size = flag_train.batch_size;
  if (cmd->count("--lr")) a.train_cfg.learning_rate = flag_train.learning_rate;
  if (cmd->count("--margin")) a.train_cfg.margin = flag_train.margin;
  if (cmd->count("--epochs")) a.train_cfg.max_epochs = flag_train.max_epochs;
  if (!a.levels_video.empty()) a.model_cfg.levels_video = LevelSet::parse(a.levels_video);
  if (!a.levels_text.empty()) a.model_cfg.levels_text = LevelSet::parse(a.levels_text);

  const auto vocab = Vocabulary::load(a.vocab);
  auto videos = load_frame_features(a.features);
  auto captions = load_captions(a.captions, vocab);
  a.model_cfg.feature_dim = videos.front().dim;
  a.model_cfg.vocab_size = vocab.size();
  auto corpus = Corpus::assemble(std::move(videos), std::move(captions));

  std::optional<Corpus> val;
  if (!a.val_features.empty() || !a.val_captions.empty()) {
    if (a.val_features.empty() || a.val_captions.empty())
      throw std::invalid_argument("--val-features and --val-captions go together");
    val = Corpus::assemble(load_frame_features(a.val_features),
                           load_captions(a.val_captions, vocab));
  }

  DualModel model(a.model_cfg, a.train_cfg.seed);
  if (!a.embeddings.empty()) model.load_word_embeddings(a.embeddings, vocab);

  std::ofstream log_file;
  if (!a.log_path.empty()) {
    log_file.open(a.log_path);
    if (!log_file) throw io_error("cannot write training log: " + a.log_path);
  }
  struct Tee : std::ostream, std::streambuf {
    std::ostream *a, *b;
    Tee(std::ostream* x, std::ostream* y) : std::ostream(this), a(x), b(y) {}
    int overflow(int c) override {
      if (c != EOF) {
        a->put(static_cast<char>(c));
        if (b) b->put(static_cast<char>(c));
      }
      return c;
    }
  } tee(&std::cout, a.log_path.empty() ? nullptr : &log_file);

  const auto result = train_model(model, corpus, val ? &*val : nullptr, a.train_cfg,
                                  vocab.content_hash(), a.checkpoint, &tee);
  std::printf("trained %d epochs; best validation loss %.6f; checkpoint -> %s\n",
              result.state.epoch, result.state.best_val_loss, a.checkpoint.c_str());
  return 0;
}

int run_encode_videos(const std::string& checkpoint_path, const std::string& features_path,
                      const std::string& index_path) {
  auto loaded = load_checkpoint(checkpoint_path);
  const auto videos = load_frame_features(features_path);
  const auto index = build_index(loaded.model, videos, loaded.file_hash);
  save_index(index, index_path);
  std::printf("indexed %lld videos (dim %lld) -> %s\n", static_cast<long long>(index.count()),
              static_cast<long long>(index.dim), index_path.c_str());
  return 0;
}

int run_retrieve(const std::string& checkpoint_path, const std::string& vocab_path,
                 const std::string& index_path, const std::string& query, std::int64_t top_k) {
  const auto vocab = Vocabulary::load(vocab_path);
  auto loaded = load_checkpoint(checkpoint_path, vocab.content_hash());
  const auto index = load_index(index_path);
  const auto hits = query_index(index, loaded.model, vocab, query, top_k, loaded.file_hash);
  for (std::size_t i = 0; i < hits.size(); ++i)
    std::printf("%zu\t%s\t%.6f\n", i + 1, hits[i].video_id.c_str(),
                static_cast<double>(hits[i].score));
  return 0;
}

int run_evaluate(const std::string& checkpoint_path, const std::string& vocab_path,
                 const std::string& features_path, const std::string& captions_path,
                 const std::string& metrics_out) {
  const auto vocab = Vocabulary::load(vocab_path);
  auto loaded = load_checkpoint(checkpoint_path, vocab.content_hash());
  const auto videos = load_frame_features(features_path);
  const auto captions = load_captions(captions_path, vocab);
  const auto rep = evaluate_bidirectional(loaded.model, videos, captions);
  print_report(rep);
  const json record{{"text_to_video", direction_json(rep.text_to_video)},
                    {"video_to_text", direction_json(rep.video_to_text)},
                    {"sum_of_recalls", rep.sum_of_recalls}};
  if (!metrics_out.empty()) {
    std::ofstream out(metrics_out);
    if (!out) throw io_error("cannot write metrics record: " + metrics_out);
    out << record.dump() << '\n';
  } else {
    std::cout << record.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual multi-level video/text encoding: training and retrieval"};
  app.require_subcommand(1);

  // build-vocab
  std::string bv_captions, bv_vocab;
  int bv_min_count = 5;
  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary from training captions");
  bv->add_option("--captions", bv_captions, "caption file")->required();
  bv->add_option("--vocab", bv_vocab, "output vocabulary file")->required();
  bv->add_option("--min-count", bv_min_count, "minimum token frequency")->capture_default_str();

  // train
  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model end to end");
  tr->add_option("--features", ta.features, "frame-feature file")->required();
  tr->add_option("--captions", ta.captions, "caption file")->required();
  tr->add_option("--vocab", ta.vocab, "vocabulary file")->required();
  tr->add_option("--checkpoint", ta.checkpoint, "output checkpoint path")->required();
  tr->add_option("--config", ta.config_path, "JSON config file");
  tr->add_option("--val-features", ta.val_features, "validation frame-feature file");
  tr->add_option("--val-captions", ta.val_captions, "validation caption file");
  tr->add_option("--embeddings", ta.embeddings, "plain-text word embedding file");
  tr->add_option("--log", ta.log_path, "write the per-epoch JSON log here too");
  tr->add_option("--levels-video", ta.levels_video, "video-side level subset, e.g. 1,3");
  tr->add_option("--levels-text", ta.levels_text, "text-side level subset");
  tr->add_option("--seed", ta.train_cfg.seed, "random seed")->capture_default_str();
  tr->add_option("--batch-size", ta.train_cfg.batch_size, "mini-batch size")->capture_default_str();
  tr->add_option("--lr", ta.train_cfg.learning_rate, "initial learning rate")->capture_default_str();
  tr->add_option("--margin", ta.train_cfg.margin, "ranking-loss margin")->capture_default_str();
  tr->add_option("--epochs", ta.train_cfg.max_epochs, "maximum epochs")->capture_default_str();
  tr->add_option("--common-dim", ta.model_cfg.common_dim, "common space size")->capture_default_str();

  // encode-videos
  std::string ev_checkpoint, ev_features, ev_index;
  auto* ev = app.add_subcommand("encode-videos", "encode videos offline into an index");
  ev->add_option("--checkpoint", ev_checkpoint, "trained checkpoint")->required();
  ev->add_option("--features", ev_features, "frame-feature file")->required();
  ev->add_option("--index", ev_index, "output index path")->required();

  // retrieve
  std::string rt_checkpoint, rt_vocab, rt_index, rt_query;
  std::int64_t rt_top_k = 10;
  auto* rt = app.add_subcommand("retrieve", "answer an ad-hoc sentence query from an index");
  rt->add_option("--checkpoint", rt_checkpoint, "trained checkpoint")->required();
  rt->add_option("--vocab", rt_vocab, "vocabulary file")->required();
  rt->add_option("--index", rt_index, "video index file")->required();
  rt->add_option("--query", rt_query, "query sentence")->required();
  rt->add_option("--top-k", rt_top_k, "results to return")->capture_default_str();

  // evaluate
  std::string el_checkpoint, el_vocab, el_features, el_captions, el_metrics_out;
  auto* el = app.add_subcommand("evaluate", "bidirectional retrieval metrics on a test set");
  el->add_option("--checkpoint", el_checkpoint, "trained checkpoint")->required();
  el->add_option("--vocab", el_vocab, "vocabulary file")->required();
  el->add_option("--features", el_features, "frame-feature file")->required();
  el->add_option("--captions", el_captions, "caption file")->required();
  el->add_option("--metrics-out", el_metrics_out, "write the JSON metrics record here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dualenc: " << e.what() << '\n';
    return 2;
  }

  try {
    if (bv->parsed()) return run_build_vocab(bv_captions, bv_vocab, bv_min_count);
    if (tr->parsed()) return run_train(ta, tr);
    if (ev->parsed()) return run_encode_videos(ev_checkpoint, ev_features, ev_index);
    if (rt->parsed()) return run_retrieve(rt_checkpoint, rt_vocab, rt_index, rt_query, rt_top_k);
    if (el->parsed())
      return run_evaluate(el_checkpoint, el_vocab, el_features, el_captions, el_metrics_out);
  } catch (const io_error& e) {
    std::cerr << "dualenc: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dualenc: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
