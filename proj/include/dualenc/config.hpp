#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dualenc {

// The encoding levels active on one side: 1 = mean pooling over the raw
// sequence (bag-of-words for text), 2 = biGRU mean, 3 = biGRU-CNN.
class LevelSet {
 public:
  LevelSet() = default;  // all three
  LevelSet(bool l1, bool l2, bool l3) : on_{l1, l2, l3} {}

  // Accepts "1,2,3", "1 3" or "13".
  static LevelSet parse(const std::string& text);

  bool has(int level) const { return on_[check(level)]; }
  void set(int level, bool v) { on_[check(level)] = v; }
  int count() const { return int(on_[0]) + int(on_[1]) + int(on_[2]); }
  bool empty() const { return count() == 0; }
  std::string str() const;

  bool operator==(const LevelSet& o) const = default;

 private:
  static std::size_t check(int level);
  bool on_[3] = {true, true, true};
};

struct ModelConfig {
  std::int64_t feature_dim = 0;  // d, per-frame feature width (from data)
  std::int64_t vocab_size = 0;   // V (from the vocabulary)

  std::int64_t gru_hidden = 512;              // per direction
  std::int64_t conv_filters = 512;            // r
  std::vector<int> video_kernels = {2, 3, 4, 5};
  std::vector<int> text_kernels = {2, 3, 4};
  std::int64_t word_dim = 300;
  std::int64_t common_dim = 2048;
  LevelSet levels_video;
  LevelSet levels_text;
  float bn_momentum = 0.1f;
  float bn_eps = 1e-5f;

  void validate() const;

  // Closed-form encoder output widths.
  std::int64_t video_phi_dim() const;
  std::int64_t text_phi_dim() const;
};

struct TrainConfig {
  std::int64_t batch_size = 128;
  double learning_rate = 1e-4;
  double margin = 0.2;
  int max_epochs = 50;
  int lr_plateau_epochs = 3;    // halve lr after this many non-decreasing epochs
  int early_stop_epochs = 10;   // stop after this many non-improving epochs
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// JSON round-trip of the model config (stored in checkpoints) and config-file
// overrides for both structs; keys absent from the file keep their values.
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json_text);
void apply_config_file(const std::string& path, ModelConfig& model_cfg, TrainConfig& train_cfg);

}  // namespace dualenc
