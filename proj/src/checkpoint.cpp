#include "dualenc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dualenc/errors.hpp"
#include "dualenc/hash.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "blob format is little-endian");

namespace dualenc {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "DUALENC-CKPT 1";

void append_blob(std::string& out, const float* data, std::uint64_t count) {
  out.append(reinterpret_cast<const char*>(&count), sizeof count);
  out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
}

struct Cursor {
  const std::string* buf;
  std::size_t pos = 0;

  void read_blob(float* dst, std::uint64_t expect, const std::string& name) {
    std::uint64_t count = 0;
    if (pos + sizeof count > buf->size())
      throw parse_error("checkpoint: truncated blob header for '" + name + "'");
    std::memcpy(&count, buf->data() + pos, sizeof count);
    pos += sizeof count;
    if (count != expect)
      throw parse_error("checkpoint: blob '" + name + "' holds " + std::to_string(count) +
                        " values, expected " + std::to_string(expect));
    if (pos + count * sizeof(float) > buf->size())
      throw parse_error("checkpoint: truncated blob data for '" + name + "'");
    std::memcpy(dst, buf->data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
  }
};

json bn_buffer_manifest(const ModelConfig& cfg) {
  const json shape = json::array({cfg.common_dim});
  return json::array({json{{"name", "bn.video.running_mean"}, {"shape", shape}},
                      json{{"name", "bn.video.running_var"}, {"shape", shape}},
                      json{{"name", "bn.sentence.running_mean"}, {"shape", shape}},
                      json{{"name", "bn.sentence.running_var"}, {"shape", shape}}});
}

}  // namespace

void save_checkpoint(const DualModel& model, std::uint64_t vocab_hash, const TrainState& state,
                     const std::string& path) {
  json params = json::array();
  for (const auto& [name, t] : model.params())
    params.push_back(json{{"name", name}, {"shape", t.shape}});

  json manifest{
      {"format_version", 1},
      {"model_config", json::parse(config_to_json(model.config()))},
      {"vocab_hash", hex64(vocab_hash)},
      {"params", params},
      {"buffers", bn_buffer_manifest(model.config())},
      {"bn_initialized",
       json{{"video", model.bn_state(Side::Video).initialized},
            {"sentence", model.bn_state(Side::Sentence).initialized}}},
      {"train_state",
       json{{"epoch", state.epoch},
            {"best_val_loss", state.best_val_loss},
            {"epochs_since_best", state.epochs_since_best},
            {"lr_plateau", state.lr_plateau},
            {"lr", state.lr}}},
  };
  const std::string m = manifest.dump();

  std::string out;
  out += kMagic;
  out += '\n';
  out += std::to_string(m.size());
  out += '\n';
  out += m;
  out += '\n';
  for (const auto& [name, t] : model.params())
    append_blob(out, t.data.data(), static_cast<std::uint64_t>(t.data.size()));
  for (const auto* side : {&model.bn_state(Side::Video), &model.bn_state(Side::Sentence)}) {
    append_blob(out, side->running_mean.data(), static_cast<std::uint64_t>(side->running_mean.size()));
    append_blob(out, side->running_var.data(), static_cast<std::uint64_t>(side->running_var.size()));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw io_error("short write to checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<std::uint64_t> expected_vocab_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  std::size_t pos = buf.find('\n');
  if (pos == std::string::npos || buf.substr(0, pos) != kMagic)
    throw parse_error(path + ": not a checkpoint file (bad magic)");
  const std::size_t len_end = buf.find('\n', pos + 1);
  if (len_end == std::string::npos) throw parse_error(path + ": truncated header");
  const std::size_t mlen = static_cast<std::size_t>(std::stoull(buf.substr(pos + 1, len_end - pos - 1)));
  if (len_end + 1 + mlen + 1 > buf.size()) throw parse_error(path + ": truncated manifest");

  json manifest;
  try {
    manifest = json::parse(buf.substr(len_end + 1, mlen));
  } catch (const json::exception& e) {
    throw parse_error(path + ": bad manifest JSON: " + e.what());
  }
  if (manifest.value("format_version", -1) != 1)
    throw parse_error(path + ": unsupported checkpoint version " +
                      manifest.value("format_version", json()).dump());

  const std::uint64_t stored_vocab_hash =
      std::stoull(manifest.at("vocab_hash").get<std::string>(), nullptr, 16);
  if (expected_vocab_hash && *expected_vocab_hash != stored_vocab_hash)
    throw std::runtime_error("checkpoint vocabulary hash " + hex64(stored_vocab_hash) +
                             " does not match the loaded vocabulary " + hex64(*expected_vocab_hash));

  ModelConfig cfg = config_from_json(manifest.at("model_config").dump());
  DualModel model(cfg, /*seed=*/0);

  Cursor cur{&buf, len_end + 1 + mlen + 1};
  std::size_t seen = 0;
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    if (!model.params().contains(name))
      throw parse_error(path + ": parameter '" + name + "' does not belong to this configuration");
    auto& t = model.params().at(name);
    const auto shape = p.at("shape").get<ad::Shape>();
    if (shape != t.shape)
      throw parse_error(path + ": parameter '" + name + "' has shape " + ad::shape_str(shape) +
                        ", expected " + ad::shape_str(t.shape));
    cur.read_blob(t.data.data(), static_cast<std::uint64_t>(t.data.size()), name);
    ++seen;
  }
  if (seen != model.params().count())
    throw parse_error(path + ": manifest lists " + std::to_string(seen) + " parameters, model has " +
                      std::to_string(model.params().count()));

  for (auto side : {Side::Video, Side::Sentence}) {
    auto& bn = model.bn_state(side);
    const char* tag = side == Side::Video ? "video" : "sentence";
    cur.read_blob(bn.running_mean.data(), static_cast<std::uint64_t>(bn.running_mean.size()),
                  std::string("bn.") + tag + ".running_mean");
    cur.read_blob(bn.running_var.data(), static_cast<std::uint64_t>(bn.running_var.size()),
                  std::string("bn.") + tag + ".running_var");
    bn.initialized = manifest.at("bn_initialized").at(tag).get<bool>();
  }
  if (cur.pos != buf.size())
    throw parse_error(path + ": " + std::to_string(buf.size() - cur.pos) + " trailing bytes after blobs");

  TrainState st;
  const auto& ts = manifest.at("train_state");
  st.epoch = ts.at("epoch").get<int>();
  st.best_val_loss = ts.at("best_val_loss").get<double>();
  st.epochs_since_best = ts.at("epochs_since_best").get<int>();
  st.lr_plateau = ts.at("lr_plateau").get<int>();
  st.lr = ts.at("lr").get<double>();

  return LoadedCheckpoint{std::move(model), st, hex64(fnv1a64(buf)), stored_vocab_hash};
}

std::string checkpoint_file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

}  // namespace dualenc
