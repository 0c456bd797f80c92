#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualenc/config.hpp"
#include "dualenc/ops.hpp"
#include "dualenc/parameters.hpp"
#include "dualenc/text_data.hpp"

namespace dualenc {

enum class Mode {
  Train,     // batch statistics, running stats updated, gradients recorded
  Validate,  // batch statistics, nothing mutated
  Eval,      // running statistics
};

enum class Side { Video, Sentence };

// Per-tape handles for one GRU direction.
template <class T>
struct BoundGruT {
  ad::ValueT<T> wz, uz, bz, wr, ur, br, wh, uh, bh;
};

template <class T>
struct BoundConvT {
  ad::ValueT<T> w, b;
};

template <class T>
struct BoundSideT {
  bool has_gru = false;
  BoundGruT<T> fw, bw;
  std::vector<BoundConvT<T>> convs;  // ascending kernel size
  ad::ValueT<T> proj_w, proj_b, gamma, beta;
};

template <class T>
struct BoundModelT {
  BoundSideT<T> video, text;
  bool has_embedding = false;
  ad::ValueT<T> embedding;
};

struct LevelSlice {
  int level;
  std::int64_t offset;
  std::int64_t length;
};

// The dual multi-level encoding network: three encoding levels per modality
// (mean pooling / biGRU / biGRU-CNN), concatenated per side, projected into
// a shared space by FC + batchnorm, compared by cosine, trained with a
// hardest-negative hinge loss over in-batch similarities.
template <class T>
class DualModelT {
 public:
  DualModelT(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const bool video_seq = cfg_.levels_video.has(2) || cfg_.levels_video.has(3);
    const bool text_seq = cfg_.levels_text.has(2) || cfg_.levels_text.has(3);

    if (video_seq) {
      vgru_fw_ = make_gru("video.gru.fw", cfg_.feature_dim, rng);
      vgru_bw_ = make_gru("video.gru.bw", cfg_.feature_dim, rng);
    }
    if (cfg_.levels_video.has(3)) make_convs("video.conv", cfg_.video_kernels, vconv_w_, vconv_b_, rng);
    if (text_seq) {
      embed_ = &params_.create("text.embedding", {cfg_.vocab_size, cfg_.word_dim},
                               ad::init::normal<T>(0.0, 0.01), rng);
      tgru_fw_ = make_gru("text.gru.fw", cfg_.word_dim, rng);
      tgru_bw_ = make_gru("text.gru.bw", cfg_.word_dim, rng);
    }
    if (cfg_.levels_text.has(3)) make_convs("text.conv", cfg_.text_kernels, tconv_w_, tconv_b_, rng);

    make_projection("proj.video", cfg_.video_phi_dim(), vproj_, rng);
    make_projection("proj.sentence", cfg_.text_phi_dim(), sproj_, rng);
    bn_video_ = ad::BatchNormStateT<T>(cfg_.common_dim);
    bn_text_ = ad::BatchNormStateT<T>(cfg_.common_dim);
  }

  DualModelT(const DualModelT&) = delete;
  DualModelT& operator=(const DualModelT&) = delete;
  DualModelT(DualModelT&&) = default;
  DualModelT& operator=(DualModelT&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSetT<T>& params() { return params_; }
  const ad::ParameterSetT<T>& params() const { return params_; }
  ad::BatchNormStateT<T>& bn_state(Side s) { return s == Side::Video ? bn_video_ : bn_text_; }
  const ad::BatchNormStateT<T>& bn_state(Side s) const { return s == Side::Video ? bn_video_ : bn_text_; }

  // ---- parameter binding ----------------------------------------------------

  BoundModelT<T> bind_trainable(ad::TapeT<T>& tape) {
    return bind_impl(tape, [&tape](ad::TensorT<T>& t) { return tape.leaf(t); });
  }

  BoundModelT<T> bind_frozen(ad::TapeT<T>& tape) const {
    auto* self = const_cast<DualModelT*>(this);  // view() never writes
    return self->bind_impl(tape, [&tape](const ad::TensorT<T>& t) { return tape.view(t); });
  }

  // ---- encoder graphs --------------------------------------------------------

  // Multi-level encoding phi(v) of one frame sequence (enabled levels
  // concatenated in order 1, 2, 3).
  ad::ValueT<T> video_phi(ad::TapeT<T>& tape, const BoundModelT<T>& bm, const float* frames,
                          std::int64_t n) const {
    if (n < 1) throw std::invalid_argument("encode_video: empty video (no frames)");
    const std::int64_t d = cfg_.feature_dim;
    ad::TensorT<T> x = ad::TensorT<T>::zeros({n, d});
    for (std::int64_t i = 0; i < n * d; ++i) x.data[static_cast<std::size_t>(i)] = static_cast<T>(frames[i]);
    auto xv = tape.constant(std::move(x));

    std::vector<ad::ValueT<T>> parts;
    if (cfg_.levels_video.has(1)) parts.push_back(ad::mean_rows(xv));
    if (cfg_.levels_video.has(2) || cfg_.levels_video.has(3)) {
      std::vector<ad::ValueT<T>> xs;
      xs.reserve(static_cast<std::size_t>(n));
      for (std::int64_t t = 0; t < n; ++t) xs.push_back(ad::slice_row(xv, t));
      auto H = bigru(tape, bm.video, xs);
      if (cfg_.levels_video.has(2)) parts.push_back(ad::mean_rows(H));
      if (cfg_.levels_video.has(3)) parts.push_back(conv_levels(bm.video, H));
    }
    return ad::concat_last_axis(parts);
  }

  // Multi-level encoding phi(s) of one token-index sequence.
  ad::ValueT<T> text_phi(ad::TapeT<T>& tape, const BoundModelT<T>& bm, const std::int32_t* tokens,
                         std::int64_t m) const {
    if (m < 1) throw std::invalid_argument("encode_sentence: empty caption (no tokens)");
    std::vector<ad::ValueT<T>> parts;
    if (cfg_.levels_text.has(1)) {
      ad::TensorT<T> bow = ad::TensorT<T>::zeros({cfg_.vocab_size});
      const T w = T(1) / static_cast<T>(m);
      for (std::int64_t t = 0; t < m; ++t) {
        const std::int32_t idx = tokens[t];
        if (idx < 0 || idx >= cfg_.vocab_size)
          throw std::out_of_range("encode_sentence: token index " + std::to_string(idx) +
                                  " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
        bow.data[static_cast<std::size_t>(idx)] += w;
      }
      parts.push_back(tape.constant(std::move(bow)));
    }
    if (cfg_.levels_text.has(2) || cfg_.levels_text.has(3)) {
      std::vector<std::int32_t> idx(tokens, tokens + m);
      auto X = ad::embedding_lookup(bm.embedding, idx);
      std::vector<ad::ValueT<T>> xs;
      xs.reserve(static_cast<std::size_t>(m));
      for (std::int64_t t = 0; t < m; ++t) xs.push_back(ad::slice_row(X, t));
      auto H = bigru(tape, bm.text, xs);
      if (cfg_.levels_text.has(2)) parts.push_back(ad::mean_rows(H));
      if (cfg_.levels_text.has(3)) parts.push_back(conv_levels(bm.text, H));
    }
    return ad::concat_last_axis(parts);
  }

  // Forward and backward passes over the sequence; the state stored at
  // position t is the one produced after consuming x_t in that direction,
  // so h_t pairs the forward state with the backward state of frame t.
  ad::ValueT<T> bigru(ad::TapeT<T>& tape, const BoundSideT<T>& side,
                      const std::vector<ad::ValueT<T>>& xs) const {
    const std::int64_t n = static_cast<std::int64_t>(xs.size());
    std::vector<ad::ValueT<T>> fw(static_cast<std::size_t>(n)), bw(static_cast<std::size_t>(n));
    auto h = tape.constant(ad::TensorT<T>::zeros({cfg_.gru_hidden}));
    for (std::int64_t t = 0; t < n; ++t) {
      h = gru_step(side.fw, xs[static_cast<std::size_t>(t)], h);
      fw[static_cast<std::size_t>(t)] = h;
    }
    h = tape.constant(ad::TensorT<T>::zeros({cfg_.gru_hidden}));
    for (std::int64_t t = n - 1; t >= 0; --t) {
      h = gru_step(side.bw, xs[static_cast<std::size_t>(t)], h);
      bw[static_cast<std::size_t>(t)] = h;
    }
    std::vector<ad::ValueT<T>> rows(static_cast<std::size_t>(n));
    for (std::int64_t t = 0; t < n; ++t)
      rows[static_cast<std::size_t>(t)] =
          ad::concat_last_axis<T>({fw[static_cast<std::size_t>(t)], bw[static_cast<std::size_t>(t)]});
    return ad::stack_rows(rows);
  }

  // max-pool(relu(conv)) per kernel size, concatenated in ascending k.
  ad::ValueT<T> conv_levels(const BoundSideT<T>& side, ad::ValueT<T> H) const {
    std::vector<ad::ValueT<T>> cs;
    cs.reserve(side.convs.size());
    for (const auto& conv : side.convs)
      cs.push_back(ad::max_rows(ad::relu(ad::conv1d_same(H, conv.w, conv.b))));
    return ad::concat_last_axis(cs);
  }

  // FC + batchnorm projection of phi rows {B, D} into the common space.
  ad::ValueT<T> project_rows(ad::TapeT<T>& tape, const BoundModelT<T>& bm, Side side,
                             ad::ValueT<T> phi_rows, Mode mode) {
    (void)tape;
    const BoundSideT<T>& s = side == Side::Video ? bm.video : bm.text;
    auto z = ad::add_bias(ad::matmul(phi_rows, s.proj_w), s.proj_b);
    const T momentum = static_cast<T>(cfg_.bn_momentum);
    const T eps = static_cast<T>(cfg_.bn_eps);
    switch (mode) {
      case Mode::Train:
        return ad::batchnorm_batch_stats(z, s.gamma, s.beta, &bn_state(side), momentum, eps);
      case Mode::Validate:
        return ad::batchnorm_batch_stats(z, s.gamma, s.beta, static_cast<ad::BatchNormStateT<T>*>(nullptr),
                                         momentum, eps);
      case Mode::Eval:
        return ad::batchnorm_running(z, s.gamma, s.beta, bn_state(side), eps);
    }
    throw std::logic_error("project_rows: bad mode");
  }

  // ---- training graph ---------------------------------------------------------

  struct BatchGraph {
    ad::ValueT<T> loss;        // scalar
    ad::ValueT<T> similarity;  // {B, B}, sim[i][j] = S(v_i, s_j)
  };

  // Full composed loss for one mini-batch (Train updates batchnorm running
  // stats; Validate leaves all state untouched).
  BatchGraph batch_loss_graph(ad::TapeT<T>& tape, const MiniBatch& batch, T margin, Mode mode) {
    if (mode == Mode::Eval)
      throw std::invalid_argument("batch_loss_graph: loss needs batch statistics, not eval mode");
    if (batch.size < 2)
      throw std::invalid_argument("batch_loss: batch must hold at least 2 pairs, got " +
                                  std::to_string(batch.size));
    auto bm = bind_trainable(tape);
    std::vector<ad::ValueT<T>> pv, ps;
    pv.reserve(static_cast<std::size_t>(batch.size));
    ps.reserve(static_cast<std::size_t>(batch.size));
    for (std::int64_t i = 0; i < batch.size; ++i) {
      pv.push_back(video_phi(tape, bm, batch.item_frames(i), batch.frame_count[i]));
      ps.push_back(text_phi(tape, bm, batch.item_tokens(i), batch.token_count[i]));
    }
    auto fv = project_rows(tape, bm, Side::Video, ad::stack_rows(pv), mode);
    auto fs = project_rows(tape, bm, Side::Sentence, ad::stack_rows(ps), mode);
    auto sim = ad::matmul_nt(ad::l2_normalize(fv), ad::l2_normalize(fs));
    auto loss = ad::hardest_negative_loss(sim, batch.group_ids, margin);
    return {loss, sim};
  }

  // ---- frozen-parameter encoding -----------------------------------------------

  // Common-space vector f(v) in eval mode (running batchnorm statistics).
  std::vector<T> encode_video(const float* frames, std::int64_t n) const {
    ad::TapeT<T> tape;
    auto bm = bind_frozen(tape);
    auto phi = video_phi(tape, bm, frames, n);
    return eval_project(tape, bm, Side::Video, phi);
  }
  std::vector<T> encode_video(const VideoItem& v) const {
    if (v.dim != cfg_.feature_dim)
      throw std::invalid_argument("encode_video: video '" + v.video_id + "' has dimension " +
                                  std::to_string(v.dim) + ", model expects " +
                                  std::to_string(cfg_.feature_dim));
    return encode_video(v.features.data(), v.frame_count);
  }

  // Common-space vector f(s) in eval mode.
  std::vector<T> encode_sentence(const std::int32_t* tokens, std::int64_t m) const {
    ad::TapeT<T> tape;
    auto bm = bind_frozen(tape);
    auto phi = text_phi(tape, bm, tokens, m);
    return eval_project(tape, bm, Side::Sentence, phi);
  }
  std::vector<T> encode_sentence(const CaptionItem& c) const {
    return encode_sentence(c.tokens.data(), static_cast<std::int64_t>(c.tokens.size()));
  }

  // ---- bookkeeping ---------------------------------------------------------------

  // Disjoint slices of phi occupied by each enabled level, in order.
  std::vector<LevelSlice> level_slices(Side side) const {
    const LevelSet& levels = side == Side::Video ? cfg_.levels_video : cfg_.levels_text;
    const std::int64_t l1 = side == Side::Video ? cfg_.feature_dim : cfg_.vocab_size;
    const std::int64_t l3 = static_cast<std::int64_t>(
                                side == Side::Video ? cfg_.video_kernels.size() : cfg_.text_kernels.size()) *
                            cfg_.conv_filters;
    std::vector<LevelSlice> out;
    std::int64_t off = 0;
    const std::int64_t widths[3] = {l1, 2 * cfg_.gru_hidden, l3};
    for (int level = 1; level <= 3; ++level)
      if (levels.has(level)) {
        out.push_back({level, off, widths[level - 1]});
        off += widths[level - 1];
      }
    return out;
  }

  // Optional plain-text word embeddings: "<token> <word_dim floats>" per
  // line; tokens absent from the file keep their random initialization.
  void load_word_embeddings(const std::string& path, const Vocabulary& vocab) {
    if (!embed_)
      throw std::logic_error("load_word_embeddings: this configuration has no embedding table");
    std::ifstream in(path);
    if (!in) throw io_error("cannot open embedding file: " + path);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string token;
      ls >> token;
      const std::int32_t idx = vocab.index_of(token);
      std::vector<T> row(static_cast<std::size_t>(cfg_.word_dim));
      for (std::int64_t j = 0; j < cfg_.word_dim; ++j)
        if (!(ls >> row[static_cast<std::size_t>(j)]))
          throw parse_error(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(cfg_.word_dim) + " values for token '" + token + "'");
      double extra;
      if (ls >> extra)
        throw parse_error(path + ":" + std::to_string(lineno) + ": more than " +
                          std::to_string(cfg_.word_dim) + " values for token '" + token + "'");
      if (idx == 0 && token != Vocabulary::kUnkToken) continue;  // out-of-vocabulary token
      std::copy(row.begin(), row.end(), embed_->data.begin() + idx * cfg_.word_dim);
    }
  }

 private:
  struct GruParams {
    ad::TensorT<T>*wz, *uz, *bz, *wr, *ur, *br, *wh, *uh, *bh;
  };

  struct ProjParams {
    ad::TensorT<T>*w, *b, *gamma, *beta;
  };

  GruParams make_gru(const std::string& prefix, std::int64_t input_dim, std::mt19937_64& rng) {
    const std::int64_t h = cfg_.gru_hidden;
    auto win = ad::init::fan_in_uniform<T>(input_dim);
    auto wrec = ad::init::fan_in_uniform<T>(h);
    auto zero = ad::init::constant<T>(T(0));
    GruParams g{};
    g.wz = &params_.create(prefix + ".w_update", {input_dim, h}, win, rng);
    g.uz = &params_.create(prefix + ".u_update", {h, h}, wrec, rng);
    g.bz = &params_.create(prefix + ".b_update", {h}, zero, rng);
    g.wr = &params_.create(prefix + ".w_reset", {input_dim, h}, win, rng);
    g.ur = &params_.create(prefix + ".u_reset", {h, h}, wrec, rng);
    g.br = &params_.create(prefix + ".b_reset", {h}, zero, rng);
    g.wh = &params_.create(prefix + ".w_cand", {input_dim, h}, win, rng);
    g.uh = &params_.create(prefix + ".u_cand", {h, h}, wrec, rng);
    g.bh = &params_.create(prefix + ".b_cand", {h}, zero, rng);
    return g;
  }

  void make_convs(const std::string& prefix, const std::vector<int>& kernels,
                  std::vector<ad::TensorT<T>*>& ws, std::vector<ad::TensorT<T>*>& bs,
                  std::mt19937_64& rng) {
    const std::int64_t channels = 2 * cfg_.gru_hidden;
    for (int k : kernels) {
      auto init = ad::init::fan_in_uniform<T>(k * channels);
      ws.push_back(&params_.create(prefix + ".k" + std::to_string(k) + ".weight",
                                   {cfg_.conv_filters, k, channels}, init, rng));
      bs.push_back(&params_.create(prefix + ".k" + std::to_string(k) + ".bias", {cfg_.conv_filters},
                                   ad::init::constant<T>(T(0)), rng));
    }
  }

  void make_projection(const std::string& prefix, std::int64_t input_dim, ProjParams& p,
                       std::mt19937_64& rng) {
    p.w = &params_.create(prefix + ".weight", {input_dim, cfg_.common_dim},
                          ad::init::fan_in_uniform<T>(input_dim), rng);
    p.b = &params_.create(prefix + ".bias", {cfg_.common_dim}, ad::init::constant<T>(T(0)), rng);
    p.gamma = &params_.create(prefix + ".bn_scale", {cfg_.common_dim}, ad::init::constant<T>(T(1)), rng);
    p.beta = &params_.create(prefix + ".bn_shift", {cfg_.common_dim}, ad::init::constant<T>(T(0)), rng);
  }

  template <class Bind>
  BoundModelT<T> bind_impl(ad::TapeT<T>& tape, Bind bind) {
    (void)tape;
    BoundModelT<T> bm;
    auto bind_gru = [&](const GruParams& g, BoundGruT<T>& out) {
      out = {bind(*g.wz), bind(*g.uz), bind(*g.bz), bind(*g.wr), bind(*g.ur),
             bind(*g.br), bind(*g.wh), bind(*g.uh), bind(*g.bh)};
    };
    if (vgru_fw_.wz) {
      bm.video.has_gru = true;
      bind_gru(vgru_fw_, bm.video.fw);
      bind_gru(vgru_bw_, bm.video.bw);
    }
    for (std::size_t i = 0; i < vconv_w_.size(); ++i)
      bm.video.convs.push_back({bind(*vconv_w_[i]), bind(*vconv_b_[i])});
    if (embed_) {
      bm.has_embedding = true;
      bm.embedding = bind(*embed_);
      bm.text.has_gru = true;
      bind_gru(tgru_fw_, bm.text.fw);
      bind_gru(tgru_bw_, bm.text.bw);
    }
    for (std::size_t i = 0; i < tconv_w_.size(); ++i)
      bm.text.convs.push_back({bind(*tconv_w_[i]), bind(*tconv_b_[i])});
    bm.video.proj_w = bind(*vproj_.w);
    bm.video.proj_b = bind(*vproj_.b);
    bm.video.gamma = bind(*vproj_.gamma);
    bm.video.beta = bind(*vproj_.beta);
    bm.text.proj_w = bind(*sproj_.w);
    bm.text.proj_b = bind(*sproj_.b);
    bm.text.gamma = bind(*sproj_.gamma);
    bm.text.beta = bind(*sproj_.beta);
    return bm;
  }

  static ad::ValueT<T> gru_step(const BoundGruT<T>& cell, ad::ValueT<T> x, ad::ValueT<T> h_prev) {
    auto z = ad::sigmoid(ad::add(ad::affine(x, cell.wz, cell.bz), ad::matmul(h_prev, cell.uz)));
    auto r = ad::sigmoid(ad::add(ad::affine(x, cell.wr, cell.br), ad::matmul(h_prev, cell.ur)));
    auto cand = ad::tanh_(ad::add(ad::affine(x, cell.wh, cell.bh), ad::matmul(ad::mul(r, h_prev), cell.uh)));
    // h = (1 - z) * h_prev + z * cand
    return ad::add(ad::mul(ad::scalar_affine(z, T(-1), T(1)), h_prev), ad::mul(z, cand));
  }

  std::vector<T> eval_project(ad::TapeT<T>& tape, const BoundModelT<T>& bm, Side side,
                              ad::ValueT<T> phi) const {
    auto rows = ad::stack_rows<T>({phi});
    auto* self = const_cast<DualModelT*>(this);  // Eval mode mutates nothing
    auto f = self->project_rows(tape, bm, side, rows, Mode::Eval);
    return f.data();
  }

  ModelConfig cfg_;
  ad::ParameterSetT<T> params_;
  ad::BatchNormStateT<T> bn_video_, bn_text_;

  GruParams vgru_fw_{}, vgru_bw_{}, tgru_fw_{}, tgru_bw_{};
  std::vector<ad::TensorT<T>*> vconv_w_, vconv_b_, tconv_w_, tconv_b_;
  ad::TensorT<T>* embed_ = nullptr;
  ProjParams vproj_{}, sproj_{};
};

using DualModel = DualModelT<float>;

}  // namespace dualenc
