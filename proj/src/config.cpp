#include "dualenc/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dualenc/errors.hpp"
#include "json.hpp"

namespace dualenc {

using nlohmann::json;

std::size_t LevelSet::check(int level) {
  if (level < 1 || level > 3)
    throw std::invalid_argument("level must be 1, 2 or 3, got " + std::to_string(level));
  return static_cast<std::size_t>(level - 1);
}

LevelSet LevelSet::parse(const std::string& text) {
  LevelSet s(false, false, false);
  for (char c : text) {
    if (c == ',' || c == ' ') continue;
    if (c < '1' || c > '3')
      throw std::invalid_argument("bad level subset '" + text + "': expected digits from {1,2,3}");
    s.set(c - '0', true);
  }
  if (s.empty()) throw std::invalid_argument("bad level subset '" + text + "': at least one level required");
  return s;
}

std::string LevelSet::str() const {
  std::string out;
  for (int l = 1; l <= 3; ++l)
    if (has(l)) {
      if (!out.empty()) out += ',';
      out += static_cast<char>('0' + l);
    }
  return out;
}

void ModelConfig::validate() const {
  if (feature_dim < 1) throw std::invalid_argument("config: feature_dim must be >= 1");
  if (vocab_size < 1) throw std::invalid_argument("config: vocab_size must be >= 1");
  if (gru_hidden < 1) throw std::invalid_argument("config: gru_hidden must be >= 1");
  if (conv_filters < 1) throw std::invalid_argument("config: conv_filters must be >= 1");
  if (word_dim < 1) throw std::invalid_argument("config: word_dim must be >= 1");
  if (common_dim < 1) throw std::invalid_argument("config: common_dim must be >= 1");
  if (levels_video.empty()) throw std::invalid_argument("config: video level set is empty");
  if (levels_text.empty()) throw std::invalid_argument("config: text level set is empty");
  for (auto ks : {&video_kernels, &text_kernels}) {
    if (ks->empty()) throw std::invalid_argument("config: kernel size list is empty");
    for (int k : *ks)
      if (k < 2) throw std::invalid_argument("config: kernel sizes must be >= 2, got " + std::to_string(k));
  }
  if (!(bn_momentum > 0.0f && bn_momentum <= 1.0f))
    throw std::invalid_argument("config: bn_momentum must be in (0, 1]");
  if (!(bn_eps > 0.0f)) throw std::invalid_argument("config: bn_eps must be > 0");
}

std::int64_t ModelConfig::video_phi_dim() const {
  std::int64_t d = 0;
  if (levels_video.has(1)) d += feature_dim;
  if (levels_video.has(2)) d += 2 * gru_hidden;
  if (levels_video.has(3)) d += static_cast<std::int64_t>(video_kernels.size()) * conv_filters;
  return d;
}

std::int64_t ModelConfig::text_phi_dim() const {
  std::int64_t d = 0;
  if (levels_text.has(1)) d += vocab_size;
  if (levels_text.has(2)) d += 2 * gru_hidden;
  if (levels_text.has(3)) d += static_cast<std::int64_t>(text_kernels.size()) * conv_filters;
  return d;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (!(learning_rate > 0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (!(margin > 0)) throw std::invalid_argument("config: margin must be > 0");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (lr_plateau_epochs < 1) throw std::invalid_argument("config: lr_plateau_epochs must be >= 1");
  if (early_stop_epochs < 1) throw std::invalid_argument("config: early_stop_epochs must be >= 1");
}

namespace {

json model_to_json(const ModelConfig& c) {
  return json{{"feature_dim", c.feature_dim},
              {"vocab_size", c.vocab_size},
              {"gru_hidden", c.gru_hidden},
              {"conv_filters", c.conv_filters},
              {"video_kernels", c.video_kernels},
              {"text_kernels", c.text_kernels},
              {"word_dim", c.word_dim},
              {"common_dim", c.common_dim},
              {"levels_video", c.levels_video.str()},
              {"levels_text", c.levels_text.str()},
              {"bn_momentum", c.bn_momentum},
              {"bn_eps", c.bn_eps}};
}

void model_from_json(const json& j, ModelConfig& c) {
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
  c.conv_filters = j.value("conv_filters", c.conv_filters);
  c.video_kernels = j.value("video_kernels", c.video_kernels);
  c.text_kernels = j.value("text_kernels", c.text_kernels);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.common_dim = j.value("common_dim", c.common_dim);
  if (j.contains("levels_video")) c.levels_video = LevelSet::parse(j.at("levels_video").get<std::string>());
  if (j.contains("levels_text")) c.levels_text = LevelSet::parse(j.at("levels_text").get<std::string>());
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

ModelConfig config_from_json(const std::string& json_text) {
  ModelConfig cfg;
  try {
    model_from_json(json::parse(json_text), cfg);
  } catch (const json::exception& e) {
    throw parse_error(std::string("bad model config JSON: ") + e.what());
  }
  return cfg;
}

void apply_config_file(const std::string& path, ModelConfig& model_cfg, TrainConfig& train_cfg) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
    model_from_json(j, model_cfg);
    train_cfg.batch_size = j.value("batch_size", train_cfg.batch_size);
    train_cfg.learning_rate = j.value("learning_rate", train_cfg.learning_rate);
    train_cfg.margin = j.value("margin", train_cfg.margin);
    train_cfg.max_epochs = j.value("max_epochs", train_cfg.max_epochs);
    train_cfg.lr_plateau_epochs = j.value("lr_plateau_epochs", train_cfg.lr_plateau_epochs);
    train_cfg.early_stop_epochs = j.value("early_stop_epochs", train_cfg.early_stop_epochs);
    train_cfg.seed = j.value("seed", train_cfg.seed);
  } catch (const json::exception& e) {
    throw parse_error(path + ": bad config JSON: " + e.what());
  }
}

}  // namespace dualenc
