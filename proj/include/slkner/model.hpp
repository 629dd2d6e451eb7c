// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  The full tagger: character encoder, lexicon matching, word fusion
 *         and CRF, with a hand-written backward pass over the whole graph.
 *
 * Parameter names:
 *   char_emb                  V_c x d_c
 *   gru_fwd.{W,U,b}_{z,r,h}   forward GRU
 *   gru_bwd.{W,U,b}_{z,r,h}   backward GRU
 *   word_emb                  V_w x d_w (at least one row)
 *   fusion.W_u, fusion.b_u    2d_h x d_w, 2d_h
 *   crf.W_o, crf.b_o          |Y| x (d_w + 2d_h), |Y|
 *   crf.T                     (|Y|+2) x (|Y|+2)
 */
#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "slkner/container.hpp"
#include "slkner/corpus.hpp"
#include "slkner/crf.hpp"
#include "slkner/encoder.hpp"
#include "slkner/fusion.hpp"
#include "slkner/lexicon.hpp"
#include "slkner/tensor.hpp"

namespace slkner {

struct ModelConfig {
  std::size_t d_c = 64;
  std::size_t bigru_total = 512;  // both directions together
  std::size_t d_w = 50;
  std::size_t layers = 1;
  double dropout = 0.1;
  KnowledgeMode knowledge = KnowledgeMode::SLK;
  FusionStrategy fusion = FusionStrategy::GlobalAttention;
  GlobalFeature global_feature = GlobalFeature::Last;
  CrfBoundary crf_boundary = CrfBoundary::StartStop;
  bool mask_illegal = false;  // decode-time only
  bool freeze_word_emb = false;

  std::size_t d_h() const { return bigru_total / 2; }
  std::size_t repr_size() const { return d_w + bigru_total; }

  void validate() const {
    if (d_c == 0 || d_w == 0 || bigru_total == 0)
      throw ConfigError("d_c, d_w and bigru_total must be positive");
    if (bigru_total % 2 != 0)
      throw ConfigError("bigru_total must be even (it is split across two directions), got " +
                        std::to_string(bigru_total));
    if (layers != 1) throw ConfigError("only one recurrent layer is supported, got layers=" +
                                       std::to_string(layers));
    check_dropout_rate(dropout);
  }
};

/// Character vocabulary. Row 0 is the shared unknown-character row.
class CharVocab {
 public:
  static constexpr std::size_t kUnk = 0;

  CharVocab() = default;

  explicit CharVocab(std::vector<char32_t> chars) {
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    for (char32_t c : chars) {
      index_.emplace(c, chars_.size() + 1);
      chars_.push_back(c);
    }
  }

  static CharVocab from(std::span<const Sentence> sentences) {
    std::vector<char32_t> all;
    for (const auto& s : sentences) all.insert(all.end(), s.chars.begin(), s.chars.end());
    return CharVocab(std::move(all));
  }

  std::size_t size() const noexcept { return chars_.size() + 1; }
  const std::vector<char32_t>& chars() const noexcept { return chars_; }

  std::size_t id(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? kUnk : it->second;
  }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, std::size_t> index_;
};

/// Finite-difference settings for whole-model checks. The loss is a sum over
/// the sentence, so central differences carry about 1e-10 of round-off; the
/// raised floor keeps that noise from dominating components below 1e-4.
inline GradCheckOptions model_grad_check_options() {
  GradCheckOptions o;
  o.floor = 1e-4;
  return o;
}

/// Precomputed per-character context vectors keyed by sentence id.
using CharVectorStore = Container;

template <typename Real>
struct ModelInput {
  std::u32string_view chars;
  std::vector<std::size_t> char_ids;
  std::optional<Tensor<Real>> external;  // n x d_c, used instead of char_emb
  WordSets words;                        // per-position lexicon word ids

  std::size_t size() const noexcept { return chars.size(); }
};

template <typename Real>
struct ForwardState {
  Tensor<Real> xs;
  Encoding<Real> enc;
  DropoutMask<Real> hc_mask;  // over the n x 2d_h block
  DropoutMask<Real> sw_mask;  // over the n x d_w block
  std::vector<std::vector<WordRef>> refs;
  std::vector<FusedPosition<Real>> fused;
  Tensor<Real> R;  // n x (d_w + 2d_h)
  Tensor<Real> O;  // n x |Y|
  TagLattice lattice;
};

struct AttentionRow {
  std::size_t pos = 0;  // 1-based
  std::string ch;
  std::vector<std::string> words;
  std::vector<double> alphas;
};

template <typename Real = double>
class Tagger {
 public:
  Tagger() = default;

  Tagger(ModelConfig cfg, TagScheme scheme, CharVocab chars, Lexicon lexicon,
         ParamStore<Real> params)
      : cfg_(cfg), scheme_(std::move(scheme)), chars_(std::move(chars)),
        lexicon_(std::move(lexicon)), params_(std::move(params)) {
    cfg_.validate();
    bind();
  }

  // gru_fwd_/gru_bwd_ point into params_, so every copy or move rebinds
  Tagger(const Tagger& o)
      : cfg_(o.cfg_), scheme_(o.scheme_), chars_(o.chars_), lexicon_(o.lexicon_),
        params_(o.params_) {
    if (params_.size()) bind();
  }
  Tagger(Tagger&& o)
      : cfg_(o.cfg_), scheme_(std::move(o.scheme_)), chars_(std::move(o.chars_)),
        lexicon_(std::move(o.lexicon_)), params_(std::move(o.params_)) {
    if (params_.size()) bind();
  }
  Tagger& operator=(Tagger o) {
    cfg_ = o.cfg_;
    scheme_ = std::move(o.scheme_);
    chars_ = std::move(o.chars_);
    lexicon_ = std::move(o.lexicon_);
    params_ = std::move(o.params_);
    if (params_.size()) bind();
    return *this;
  }

  /// Fresh parameters. Word rows come from `embeddings` when listed there,
  /// otherwise from the uniform initializer, as do all character rows.
  template <typename Rng>
  static Tagger create(const ModelConfig& cfg, TagScheme scheme, CharVocab chars,
                       Lexicon lexicon, const EmbeddingTable* embeddings, Rng& rng) {
    cfg.validate();
    if (embeddings && embeddings->rows() > 0 && embeddings->dim != cfg.d_w)
      throw ConfigError("word embedding file has dim " + std::to_string(embeddings->dim) +
                        " but d_w=" + std::to_string(cfg.d_w));
    ParamStore<Real> ps;
    const std::size_t dh = cfg.d_h(), Y = scheme.size();

    Tensor<Real> char_emb({chars.size(), cfg.d_c});
    for (std::size_t r = 0; r < chars.size(); ++r) {
      auto row = random_init_row<Real>(cfg.d_c, rng);
      std::copy(row.begin(), row.end(), char_emb.row(r).begin());
    }
    ps.add("char_emb", std::move(char_emb));
    add_gru_params<Real>(ps, "gru_fwd", cfg.d_c, dh, rng);
    add_gru_params<Real>(ps, "gru_bwd", cfg.d_c, dh, rng);

    Tensor<Real> word_emb({std::max<std::size_t>(1, lexicon.size()), cfg.d_w});
    for (std::size_t r = 0; r < word_emb.rows(); ++r) {
      std::optional<std::span<const double>> pre;
      if (embeddings && r < lexicon.size()) pre = embeddings->row(utf8::encode(lexicon.word(r)));
      if (pre) {
        for (std::size_t k = 0; k < cfg.d_w; ++k) word_emb.at(r, k) = static_cast<Real>((*pre)[k]);
      } else {
        auto row = random_init_row<Real>(cfg.d_w, rng);
        std::copy(row.begin(), row.end(), word_emb.row(r).begin());
      }
    }
    ps.add("word_emb", std::move(word_emb)).trainable = !cfg.freeze_word_emb;

    ps.add("fusion.W_u", xavier({2 * dh, cfg.d_w}, rng));
    ps.add("fusion.b_u", Tensor<Real>({2 * dh}));
    ps.add("crf.W_o", xavier({Y, cfg.repr_size()}, rng));
    ps.add("crf.b_o", Tensor<Real>({Y}));
    const auto T0 = initial_transitions(Y);
    auto& T = ps.add("crf.T", Tensor<Real>({Y + 2, Y + 2}, std::vector<Real>(T0.begin(), T0.end())));
    T.fixed = fixed_transitions(Y);
    return Tagger(cfg, std::move(scheme), std::move(chars), std::move(lexicon), std::move(ps));
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ModelConfig& config() noexcept { return cfg_; }
  const TagScheme& scheme() const noexcept { return scheme_; }
  const CharVocab& chars() const noexcept { return chars_; }
  const Lexicon& lexicon() const noexcept { return lexicon_; }
  ParamStore<Real>& params() noexcept { return params_; }
  const ParamStore<Real>& params() const noexcept { return params_; }

  ModelInput<Real> prepare(const Sentence& s, const CharVectorStore* external = nullptr) const {
    if (s.chars.empty()) throw ShapeError("cannot encode an empty sentence");
    ModelInput<Real> in;
    in.chars = s.chars;
    in.char_ids.reserve(s.size());
    for (char32_t c : s.chars) in.char_ids.push_back(chars_.id(c));
    if (external) {
      if (!external->has(s.id))
        throw VocabError("no precomputed character vectors for sentence '" + s.id + "'");
      auto t = external->get(s.id).template as<Real>();
      if (t.shape() != Shape{s.size(), cfg_.d_c})
        throw ShapeError("precomputed vectors for '" + s.id + "' have shape " +
                         shape_str(t.shape()) + ", expected " +
                         shape_str(Shape{s.size(), cfg_.d_c}));
      in.external = std::move(t);
    }
    in.words = knowledge_select(lexicon_, match_sentence(lexicon_, s.chars), cfg_.knowledge);
    return in;
  }

  /// Forward pass. Dropout masks are drawn from `rng` only when `train`.
  template <typename Rng>
  ForwardState<Real> forward(const ModelInput<Real>& in, bool train, Rng& rng) const {
    const std::size_t n = in.size(), dh = cfg_.d_h(), dw = cfg_.d_w;
    ForwardState<Real> st;
    st.xs = in.external ? *in.external : lookup_rows<Real>(value(ix_.char_emb), in.char_ids);
    st.enc = encode_chars<Real>(st.xs, gru_fwd_, gru_bwd_, cfg_.global_feature);

    st.hc_mask = make_dropout_mask<Real>(n * 2 * dh, cfg_.dropout, train, rng);
    st.sw_mask = make_dropout_mask<Real>(n * dw, cfg_.dropout, train, rng);

    const auto& word_emb = value(ix_.word_emb);
    st.refs.resize(n);
    st.fused.resize(n);
    st.R = Tensor<Real>({n, cfg_.repr_size()});
    for (std::size_t i = 0; i < n; ++i) {
      st.refs[i] = word_refs(lexicon_, in.words[i]);
      st.fused[i] = fuse_position<Real>(st.refs[i], word_emb, st.enc.g.data(), fusion_view(),
                                        cfg_.fusion);
      auto r = st.R.row(i);
      std::copy(st.fused[i].h.begin(), st.fused[i].h.end(), r.begin());
      auto hc = st.enc.H.row(i);
      std::copy(hc.begin(), hc.end(), r.begin() + static_cast<std::ptrdiff_t>(dw));
      if (!st.sw_mask.identity())
        for (std::size_t k = 0; k < dw; ++k) r[k] *= st.sw_mask.scale[i * dw + k];
      if (!st.hc_mask.identity())
        for (std::size_t k = 0; k < 2 * dh; ++k) r[dw + k] *= st.hc_mask.scale[i * 2 * dh + k];
    }
    st.O = emissions<Real>(st.R, value(ix_.W_o), value(ix_.b_o));
    st.lattice = make_lattice<Real>(st.O, value(ix_.T), cfg_.crf_boundary);
    return st;
  }

  /// Negative log-likelihood of `gold`; `dropout_seed` fixes the masks.
  double loss(const ModelInput<Real>& in, std::span<const TagId> gold, bool train,
              std::uint64_t dropout_seed) const {
    std::mt19937_64 rng(dropout_seed);
    auto st = forward(in, train, rng);
    const auto fb = forward_backward(st.lattice);
    return fb.log_z - score_sequence(st.lattice, gold);
  }

  /// NLL plus gradients accumulated into `grads` (aligned with params()).
  double loss_and_grad(const ModelInput<Real>& in, std::span<const TagId> gold,
                       Gradients<Real>& grads, bool train, std::uint64_t dropout_seed) const {
    std::mt19937_64 rng(dropout_seed);
    auto st = forward(in, train, rng);
    auto res = nll(st.lattice, gold);
    backward(in, st, res, grads);
    return res.nll;
  }

  std::vector<TagId> decode(const ModelInput<Real>& in) const {
    std::mt19937_64 rng(0);
    auto st = forward(in, false, rng);
    if (cfg_.mask_illegal) {
      const auto mask = illegal_transition_mask(scheme_);
      for (std::size_t k = 0; k < mask.size(); ++k) st.lattice.T[k] += mask[k];
    }
    return viterbi(st.lattice).path;
  }

  std::vector<AttentionRow> attention(const ModelInput<Real>& in) const {
    std::mt19937_64 rng(0);
    auto st = forward(in, false, rng);
    std::vector<AttentionRow> rows(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      rows[i].pos = i + 1;
      rows[i].ch = utf8::encode(in.chars[i]);
      for (const auto& w : st.refs[i]) rows[i].words.push_back(utf8::encode(w.text));
      rows[i].alphas.assign(st.fused[i].alpha.begin(), st.fused[i].alpha.end());
    }
    return rows;
  }

  // ---- persistence

  void save(Container& c) const {
    c.meta["model.config"] = config_json().dump();
    c.meta["model.scheme"] = nlohmann::json{{"kind", to_string(scheme_.kind())},
                                            {"types", scheme_.types()}}
                                 .dump();
    std::string chars;
    for (char32_t ch : chars_.chars()) utf8::append(chars, ch);
    c.meta["model.chars"] = chars;
    nlohmann::json words = nlohmann::json::array();
    for (const auto& w : lexicon_.words()) words.push_back(utf8::encode(w));
    c.meta["model.lexicon"] = nlohmann::json{{"min_word_len", lexicon_.options().min_word_len},
                                             {"max_word_len", lexicon_.options().max_word_len},
                                             {"words", words}}
                                  .dump();
    c.meta["model.precision"] = std::to_string(sizeof(Real) * 8);
    for (const auto& p : params_) c.put("param/" + p.name, p.value);
  }

  static Tagger load(const Container& c) {
    try {
      const auto jc = nlohmann::json::parse(c.meta_at("model.config"));
      ModelConfig cfg = config_from_json(jc);
      const auto js = nlohmann::json::parse(c.meta_at("model.scheme"));
      TagScheme scheme(parse_scheme_kind(js.at("kind").get<std::string>()),
                       js.at("types").get<std::vector<std::string>>());
      const auto chars = utf8::decode(c.meta_at("model.chars"));
      CharVocab vocab(std::vector<char32_t>(chars.begin(), chars.end()));
      const auto jl = nlohmann::json::parse(c.meta_at("model.lexicon"));
      LexiconOptions lo{jl.at("min_word_len").get<std::size_t>(),
                        jl.at("max_word_len").get<std::size_t>()};
      const auto words = jl.at("words").get<std::vector<std::string>>();
      Lexicon lex = words.empty() ? Lexicon{} : build_lexicon(std::span<const std::string>(words), lo);
      if (lex.size() != words.size()) throw DataError("checkpoint lexicon is inconsistent");

      // reconstruct with a throwaway init to get names/shapes, then overwrite
      std::mt19937_64 rng(0);
      Tagger t = create(cfg, scheme, vocab, lex, nullptr, rng);
      for (auto& p : t.params_) {
        auto v = c.get("param/" + p.name).template as<Real>();
        if (v.shape() != p.value.shape())
          throw DataError("checkpoint parameter '" + p.name + "' has shape " +
                          shape_str(v.shape()) + ", expected " + shape_str(p.value.shape()));
        p.value = std::move(v);
      }
      t.bind();
      return t;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint metadata is malformed: ") + e.what());
    }
  }

  nlohmann::json config_json() const {
    return {{"d_c", cfg_.d_c},
            {"bigru_total", cfg_.bigru_total},
            {"d_w", cfg_.d_w},
            {"layers", cfg_.layers},
            {"dropout", cfg_.dropout},
            {"knowledge_mode", to_string(cfg_.knowledge)},
            {"fusion_strategy", to_string(cfg_.fusion)},
            {"global_feature", to_string(cfg_.global_feature)},
            {"crf_boundary", to_string(cfg_.crf_boundary)},
            {"mask_illegal", cfg_.mask_illegal},
            {"freeze_word_emb", cfg_.freeze_word_emb}};
  }

  static ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.d_c = j.at("d_c").get<std::size_t>();
    cfg.bigru_total = j.at("bigru_total").get<std::size_t>();
    cfg.d_w = j.at("d_w").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.knowledge = parse_knowledge_mode(j.at("knowledge_mode").get<std::string>());
    cfg.fusion = parse_fusion_strategy(j.at("fusion_strategy").get<std::string>());
    cfg.global_feature = parse_global_feature(j.at("global_feature").get<std::string>());
    cfg.crf_boundary = parse_crf_boundary(j.at("crf_boundary").get<std::string>());
    cfg.mask_illegal = j.at("mask_illegal").get<bool>();
    cfg.freeze_word_emb = j.at("freeze_word_emb").get<bool>();
    return cfg;
  }

 private:
  struct Indices {
    std::size_t char_emb = 0, word_emb = 0, W_u = 0, b_u = 0, W_o = 0, b_o = 0, T = 0;
  };

  template <typename Rng>
  static Tensor<Real> xavier(Shape s, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<Real> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
    return t;
  }

  void bind() {
    ix_.char_emb = params_.index("char_emb");
    ix_.word_emb = params_.index("word_emb");
    ix_.W_u = params_.index("fusion.W_u");
    ix_.b_u = params_.index("fusion.b_u");
    ix_.W_o = params_.index("crf.W_o");
    ix_.b_o = params_.index("crf.b_o");
    ix_.T = params_.index("crf.T");
    gru_fwd_ = gru_weights(params_, "gru_fwd");
    gru_bwd_ = gru_weights(params_, "gru_bwd");
    if (value(ix_.W_o).shape() != Shape{scheme_.size(), cfg_.repr_size()})
      throw ShapeError("crf.W_o has shape " + shape_str(value(ix_.W_o).shape()) +
                       " for |Y|=" + std::to_string(scheme_.size()) +
                       ", |r|=" + std::to_string(cfg_.repr_size()));
    params_.at(ix_.word_emb).trainable = !cfg_.freeze_word_emb;
    params_.at(ix_.T).fixed = fixed_transitions(scheme_.size());
  }

  const Tensor<Real>& value(std::size_t i) const { return params_.at(i).value; }

  FusionParamsView<Real> fusion_view() const { return {&value(ix_.W_u), &value(ix_.b_u)}; }

  void backward(const ModelInput<Real>& in, const ForwardState<Real>& st, const NllResult& res,
                Gradients<Real>& grads) const {
    const std::size_t n = in.size(), dh = cfg_.d_h(), dw = cfg_.d_w, Y = scheme_.size();

    auto& dT = grads[ix_.T];
    for (std::size_t k = 0; k < dT.size(); ++k) dT[k] += static_cast<Real>(res.dT[k]);

    Tensor<Real> dO({n, Y});
    for (std::size_t k = 0; k < dO.size(); ++k) dO[k] = static_cast<Real>(res.dO[k]);
    Tensor<Real> dR = emissions_backward<Real>(st.R, value(ix_.W_o), dO, &grads[ix_.W_o],
                                               &grads[ix_.b_o]);

    Tensor<Real> dH({n, 2 * dh});
    std::vector<Real> dg(2 * dh, Real(0));
    FusionGrads<Real> fg{params_.at(ix_.word_emb).trainable ? &grads[ix_.word_emb] : nullptr,
                         &grads[ix_.W_u], &grads[ix_.b_u]};
    const auto& word_emb = value(ix_.word_emb);
    for (std::size_t i = 0; i < n; ++i) {
      auto dr = dR.row(i);
      std::vector<Real> dsw(dr.begin(), dr.begin() + static_cast<std::ptrdiff_t>(dw));
      if (!st.sw_mask.identity())
        for (std::size_t k = 0; k < dw; ++k) dsw[k] *= st.sw_mask.scale[i * dw + k];
      auto dh_row = dH.row(i);
      for (std::size_t k = 0; k < 2 * dh; ++k)
        dh_row[k] = dr[dw + k] * (st.hc_mask.identity() ? Real(1) : st.hc_mask.scale[i * 2 * dh + k]);
      fuse_position_backward<Real>(st.refs[i], word_emb, st.enc.g.data(), fusion_view(), cfg_.fusion,
                                   st.fused[i], dsw, fg, dg);
    }

    auto dfwd = gru_grads(params_, grads, "gru_fwd");
    auto dbwd = gru_grads(params_, grads, "gru_bwd");
    Tensor<Real> dxs = encode_backward<Real>(st.enc, gru_fwd_, gru_bwd_, dH, dg, dfwd, dbwd);
    if (!in.external) scatter_rows<Real>(grads[ix_.char_emb], in.char_ids, dxs);
  }

  ModelConfig cfg_;
  TagScheme scheme_;
  CharVocab chars_;
  Lexicon lexicon_;
  ParamStore<Real> params_;
  Indices ix_;
  GruWeights<Real> gru_fwd_;
  GruWeights<Real> gru_bwd_;
};

}  // namespace slkner
