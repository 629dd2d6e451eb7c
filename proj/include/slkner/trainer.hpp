// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.hpp
 * @brief  Mini-batch Adam training with dev-F1 model selection, early
 *         stopping and resumable checkpoints.
 */
#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "slkner/container.hpp"
#include "slkner/corpus.hpp"
#include "slkner/eval.hpp"
#include "slkner/model.hpp"

namespace slkner {

struct TrainConfig {
  ModelConfig model;
  double lr = 5e-5;
  std::size_t batch_size = 32;
  std::size_t max_len = 250;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  bool clip_grad = false;
  double clip_norm = 5.0;
  std::size_t workers = 1;
  std::size_t min_word_len = 2;
  std::size_t max_word_len = 10;
  SchemeKind scheme = SchemeKind::BIOES;
  int precision = 64;
  std::size_t buckets = 6;

  void validate() const {
    model.validate();
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a positive number");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_len == 0) throw ConfigError("max_len must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (patience == 0) throw ConfigError("patience must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (min_word_len == 0 || min_word_len > max_word_len)
      throw ConfigError("word length bounds must satisfy 1 <= min_word_len <= max_word_len");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    if (buckets == 0) throw ConfigError("buckets must be positive");
  }

  LexiconOptions lexicon_options() const { return {min_word_len, max_word_len}; }
};

/// One key of the flat key=value view of TrainConfig.
struct ConfigField {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || !std::isfinite(x))
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string fmt_real(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  // shortest form that reads back identically
  for (int p = 1; p <= 17; ++p) {
    std::ostringstream t;
    t.precision(p);
    t << x;
    if (std::stod(t.str()) == x) return t.str();
  }
  return os.str();
}

}  // namespace detail

inline const std::vector<ConfigField>& train_config_fields() {
  using detail::fmt_real;
  using detail::parse_bool;
  using detail::parse_count;
  using detail::parse_real;
  auto count = [](const char* key, auto member) {
    return ConfigField{key,
                       [member](const TrainConfig& c) { return std::to_string(member(c)); },
                       [member, key](TrainConfig& c, const std::string& v) {
                         member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(
                             parse_count(key, v));
                       }};
  };
  auto real = [](const char* key, auto member) {
    return ConfigField{key, [member](const TrainConfig& c) { return fmt_real(member(c)); },
                       [member, key](TrainConfig& c, const std::string& v) {
                         member(c) = parse_real(key, v);
                       }};
  };
  auto flag = [](const char* key, auto member) {
    return ConfigField{key,
                       [member](const TrainConfig& c) { return member(c) ? "true" : "false"; },
                       [member, key](TrainConfig& c, const std::string& v) {
                         member(c) = parse_bool(key, v);
                       }};
  };
#define SLKNER_MEMBER(expr) [](auto& c) -> auto& { return c.expr; }
  static const std::vector<ConfigField> fields = {
      count("max_len", SLKNER_MEMBER(max_len)),
      count("d_w", SLKNER_MEMBER(model.d_w)),
      count("d_c", SLKNER_MEMBER(model.d_c)),
      count("bigru_total", SLKNER_MEMBER(model.bigru_total)),
      count("layers", SLKNER_MEMBER(model.layers)),
      real("dropout", SLKNER_MEMBER(model.dropout)),
      count("batch_size", SLKNER_MEMBER(batch_size)),
      real("lr", SLKNER_MEMBER(lr)),
      count("epochs", SLKNER_MEMBER(epochs)),
      count("patience", SLKNER_MEMBER(patience)),
      count("seed", SLKNER_MEMBER(seed)),
      ConfigField{"knowledge_mode",
                  [](const TrainConfig& c) { return to_string(c.model.knowledge); },
                  [](TrainConfig& c, const std::string& v) {
                    c.model.knowledge = parse_knowledge_mode(v);
                  }},
      ConfigField{"fusion_strategy",
                  [](const TrainConfig& c) { return to_string(c.model.fusion); },
                  [](TrainConfig& c, const std::string& v) {
                    c.model.fusion = parse_fusion_strategy(v);
                  }},
      ConfigField{"global_feature",
                  [](const TrainConfig& c) { return to_string(c.model.global_feature); },
                  [](TrainConfig& c, const std::string& v) {
                    c.model.global_feature = parse_global_feature(v);
                  }},
      ConfigField{"crf_boundary",
                  [](const TrainConfig& c) { return to_string(c.model.crf_boundary); },
                  [](TrainConfig& c, const std::string& v) {
                    c.model.crf_boundary = parse_crf_boundary(v);
                  }},
      flag("mask_illegal", SLKNER_MEMBER(model.mask_illegal)),
      flag("freeze_word_emb", SLKNER_MEMBER(model.freeze_word_emb)),
      flag("clip_grad", SLKNER_MEMBER(clip_grad)),
      real("clip_norm", SLKNER_MEMBER(clip_norm)),
      count("workers", SLKNER_MEMBER(workers)),
      count("min_word_len", SLKNER_MEMBER(min_word_len)),
      count("max_word_len", SLKNER_MEMBER(max_word_len)),
      ConfigField{"scheme", [](const TrainConfig& c) { return to_string(c.scheme); },
                  [](TrainConfig& c, const std::string& v) { c.scheme = parse_scheme_kind(v); }},
      ConfigField{"precision", [](const TrainConfig& c) { return std::to_string(c.precision); },
                  [](TrainConfig& c, const std::string& v) {
                    c.precision = static_cast<int>(parse_count("precision", v));
                  }},
      count("buckets", SLKNER_MEMBER(buckets)),
  };
#undef SLKNER_MEMBER
  return fields;
}

inline const ConfigField* find_config_field(const std::string& key) {
  for (const auto& f : train_config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

namespace detail {

/// JSON value for a field's string form: booleans and numbers keep their
/// type, everything else stays a string.
inline nlohmann::json typed_value(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  if (!v.empty() && std::isdigit(static_cast<unsigned char>(v[0]))) {
    std::size_t pos = 0;
    try {
      if (v.find_first_of(".eE") == std::string::npos) {
        const unsigned long long x = std::stoull(v, &pos);
        if (pos == v.size()) return x;
      } else {
        const double x = std::stod(v, &pos);
        if (pos == v.size()) return x;
      }
    } catch (const std::exception&) {
    }
  }
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : train_config_fields()) j[f.key] = detail::typed_value(f.get(c));
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [k, v] : j.items()) {
    const auto* f = find_config_field(k);
    if (!f) throw DataError("unknown config key '" + k + "' in checkpoint");
    f->set(c, v.is_string() ? v.get<std::string>() : v.dump());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every trainable element, then zeroes the
/// gradients. `t` is the 1-based step count.
template <typename Real>
void adam_step(ParamStore<Real>& store, double lr, std::size_t t, const AdamOptions& o = {}) {
  if (t == 0) throw ArgumentError("adam step count starts at 1");
  for (const auto& p : store)
    if (p.trainable)
      for (std::size_t i = 0; i < p.grad.size(); ++i)
        if (!std::isfinite(p.grad[i]))
          throw NumericFault("non-finite gradient in parameter '" + p.name + "'");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
  for (auto& p : store) {
    if (p.trainable) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        if (p.is_fixed(i)) continue;
        const double g = p.grad[i];
        const double m = o.beta1 * static_cast<double>(p.m[i]) + (1.0 - o.beta1) * g;
        const double v = o.beta2 * static_cast<double>(p.v[i]) + (1.0 - o.beta2) * g * g;
        p.m[i] = static_cast<Real>(m);
        p.v[i] = static_cast<Real>(v);
        const double mhat = m / c1, vhat = v / c2;
        p.value[i] = static_cast<Real>(static_cast<double>(p.value[i]) -
                                       lr * mhat / (std::sqrt(vhat) + o.eps));
      }
    }
    p.grad.fill(Real(0));
  }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Real>
double clip_gradients(ParamStore<Real>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store)
    if (p.trainable)
      for (Real g : p.grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto& p : store)
      for (auto& g : p.grad.data()) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Evaluation helper

template <typename Real>
std::vector<SpanPair> predict_spans(const Tagger<Real>& model, const Dataset& ds,
                                    const CharVectorStore* external = nullptr) {
  std::vector<SpanPair> out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences) {
    SpanPair sp;
    sp.id = s.id;
    sp.length = s.size();
    if (s.has_tags()) sp.gold = extract_entities(s.tags, model.scheme()).spans;
    sp.pred = extract_entities(model.decode(model.prepare(s, external)), model.scheme()).spans;
    out.push_back(std::move(sp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainLogEntry {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  Prf dev;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const TrainLogEntry& e) {
  return {{"epoch", e.epoch}, {"train_nll", e.train_nll}, {"dev_p", e.dev.p},
          {"dev_r", e.dev.r}, {"dev_f1", e.dev.f1},       {"seconds", e.seconds}};
}

template <typename Real>
struct Checkpoint {
  Tagger<Real> model;
  TrainConfig config;
  std::size_t epoch = 0;  // completed epochs
  double best_dev_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;
  std::size_t adam_t = 0;
  std::string rng_state;
};

template <typename Real>
Container to_container(const Checkpoint<Real>& ck) {
  Container c;
  ck.model.save(c);
  c.meta["train.config"] = to_json(ck.config).dump();
  c.meta["train.epoch"] = std::to_string(ck.epoch);
  c.meta["train.best_dev_f1"] = detail::fmt_real(ck.best_dev_f1);
  c.meta["train.best_epoch"] = std::to_string(ck.best_epoch);
  c.meta["train.stale_epochs"] = std::to_string(ck.stale_epochs);
  c.meta["train.adam_t"] = std::to_string(ck.adam_t);
  c.meta["train.rng"] = ck.rng_state;
  for (const auto& p : ck.model.params()) {
    c.put("adam.m/" + p.name, p.m);
    c.put("adam.v/" + p.name, p.v);
  }
  return c;
}

template <typename Real>
Checkpoint<Real> from_container(const Container& c) {
  Checkpoint<Real> ck;
  ck.model = Tagger<Real>::load(c);
  try {
    ck.config = train_config_from_json(nlohmann::json::parse(c.meta_at("train.config")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config is malformed: ") + e.what());
  }
  ck.epoch = detail::parse_count("train.epoch", c.meta_at("train.epoch"));
  ck.best_dev_f1 = std::stod(c.meta_at("train.best_dev_f1"));
  ck.best_epoch = detail::parse_count("train.best_epoch", c.meta_at("train.best_epoch"));
  ck.stale_epochs = detail::parse_count("train.stale_epochs", c.meta_at("train.stale_epochs"));
  ck.adam_t = detail::parse_count("train.adam_t", c.meta_at("train.adam_t"));
  ck.rng_state = c.meta_at("train.rng");
  for (auto& p : ck.model.params()) {
    p.m = c.get("adam.m/" + p.name).template as<Real>();
    p.v = c.get("adam.v/" + p.name).template as<Real>();
  }
  return ck;
}

template <typename Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ck) {
  save_container(path, to_container(ck));
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  return from_container<Real>(load_container(path));
}

/// Precision a checkpoint was written at, without loading it.
inline int checkpoint_precision(const Container& c) {
  return static_cast<int>(detail::parse_count("model.precision", c.meta_at("model.precision")));
}

template <typename Real>
struct TrainResult {
  Checkpoint<Real> best;
  Checkpoint<Real> last;
  std::vector<TrainLogEntry> log;
};

struct TrainOptions {
  std::function<void(const TrainLogEntry&)> on_epoch;
  const CharVectorStore* external = nullptr;
  bool evaluate_dev = true;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Dropout seed for one sentence in one epoch; independent of batching and
/// worker layout.
inline std::uint64_t dropout_seed(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  return detail::splitmix64(detail::splitmix64(seed ^ detail::splitmix64(epoch)) + index);
}

template <typename Real>
class Trainer {
 public:
  Trainer(const Dataset& train, const Dataset& dev, Checkpoint<Real> state, TrainOptions opts = {})
      : train_(train), dev_(dev), state_(std::move(state)), opts_(std::move(opts)) {
    state_.config.validate();
    if (train_.sentences.empty()) throw ConfigError("training set is empty");
    for (const auto& s : train_.sentences)
      if (!s.has_tags()) throw DataError("training sentence '" + s.id + "' has no tags");
    inputs_.reserve(train_.size());
    for (const auto& s : train_.sentences)
      inputs_.push_back(state_.model.prepare(s, opts_.external));
    if (state_.rng_state.empty()) {
      rng_.seed(state_.config.seed);
    } else {
      std::istringstream is(state_.rng_state);
      is >> rng_;
      if (!is) throw DataError("checkpoint RNG state is malformed");
    }
  }

  TrainResult<Real> run() {
    const auto& cfg = state_.config;
    TrainResult<Real> res{state_, state_, {}};
    if (state_.best_dev_f1 < 0.0) res.best.best_dev_f1 = -1.0;
    std::vector<std::size_t> order(train_.size());
    for (std::size_t epoch = state_.epoch + 1; epoch <= cfg.epochs; ++epoch) {
      if (state_.stale_epochs >= cfg.patience) break;
      const auto t0 = std::chrono::steady_clock::now();
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng_);

      double epoch_nll = 0.0;
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t e = std::min(order.size(), b + cfg.batch_size);
        epoch_nll += step(std::span<const std::size_t>(order).subspan(b, e - b), epoch);
      }

      TrainLogEntry entry;
      entry.epoch = epoch;
      entry.train_nll = epoch_nll;
      if (opts_.evaluate_dev) {
        const auto spans = predict_spans(state_.model, dev_, opts_.external);
        entry.dev = prf1(spans);
      }
      entry.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      state_.epoch = epoch;
      if (entry.dev.f1 > state_.best_dev_f1) {
        state_.best_dev_f1 = entry.dev.f1;
        state_.best_epoch = epoch;
        state_.stale_epochs = 0;
      } else {
        ++state_.stale_epochs;
      }
      state_.rng_state = rng_string();
      if (state_.best_epoch == epoch) res.best = state_;
      res.log.push_back(entry);
      if (opts_.on_epoch) opts_.on_epoch(entry);
    }
    res.last = state_;
    res.best.stale_epochs = res.last.stale_epochs;
    if (res.best.best_epoch == 0) res.best = res.last;
    return res;
  }

  const Checkpoint<Real>& state() const noexcept { return state_; }

 private:
  std::string rng_string() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }

  /// Forward/backward over one batch and an optimizer step. Returns the
  /// summed batch NLL.
  double step(std::span<const std::size_t> batch, std::size_t epoch) {
    const auto& cfg = state_.config;
    auto& store = state_.model.params();
    const std::size_t workers = std::min(cfg.workers, batch.size());
    std::vector<Gradients<Real>> grads(workers);
    std::vector<double> losses(batch.size(), 0.0);
    std::vector<std::exception_ptr> errors(workers);

    auto work = [&](std::size_t w) {
      try {
        grads[w] = store.make_gradients();
        const std::size_t lo = batch.size() * w / workers, hi = batch.size() * (w + 1) / workers;
        for (std::size_t k = lo; k < hi; ++k) {
          const std::size_t idx = batch[k];
          losses[k] = state_.model.loss_and_grad(inputs_[idx], train_.sentences[idx].tags, grads[w],
                                                 state_.model.config().dropout > 0.0,
                                                 dropout_seed(cfg.seed, epoch, idx));
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    store.zero_grad();
    for (const auto& g : grads) store.accumulate(g);
    if (cfg.clip_grad) clip_gradients(store, cfg.clip_norm);
    adam_step(store, cfg.lr, ++state_.adam_t);

    double total = 0.0;
    for (double l : losses) {
      if (!std::isfinite(l)) throw NumericFault("training loss is not finite");
      total += l;
    }
    return total;
  }

  const Dataset& train_;
  const Dataset& dev_;
  Checkpoint<Real> state_;
  TrainOptions opts_;
  std::vector<ModelInput<Real>> inputs_;
  std::mt19937_64 rng_;
};

/// Builds a fresh model from the training data and trains it.
template <typename Real = double>
TrainResult<Real> train(const Dataset& train_set, const Dataset& dev_set, const Lexicon& lexicon,
                        const EmbeddingTable* embeddings, const TrainConfig& cfg,
                        TrainOptions opts = {}) {
  cfg.validate();
  if (train_set.sentences.empty()) throw ConfigError("training set is empty");
  std::mt19937_64 init_rng(detail::splitmix64(cfg.seed));
  Checkpoint<Real> start;
  start.model = Tagger<Real>::create(cfg.model, train_set.scheme,
                                     CharVocab::from(train_set.sentences), lexicon, embeddings,
                                     init_rng);
  start.config = cfg;
  return Trainer<Real>(train_set, dev_set, std::move(start), std::move(opts)).run();
}

/// Continues training from a checkpoint's saved state up to its config's
/// epoch budget (which the caller may raise beforehand).
template <typename Real = double>
TrainResult<Real> resume(const Dataset& train_set, const Dataset& dev_set, Checkpoint<Real> from,
                         TrainOptions opts = {}) {
  return Trainer<Real>(train_set, dev_set, std::move(from), std::move(opts)).run();
}

}  // namespace slkner
