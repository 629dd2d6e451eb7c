// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  Command-line front end: train, tag, eval, lexicon-inspect,
 *         gradcheck and echo-config. `run_cli` is callable in-process.
 *
 * Settings resolve as flag > SLKNER_<KEY> environment variable > key=value
 * config file > built-in default.
 */
#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slkner/container.hpp"
#include "slkner/corpus.hpp"
#include "slkner/error.hpp"
#include "slkner/eval.hpp"
#include "slkner/lexicon.hpp"
#include "slkner/model.hpp"
#include "slkner/trainer.hpp"
#include "slkner/utf8.hpp"

namespace slkner {

namespace fs = std::filesystem;

/// Path-valued keys. `output` marks paths the command writes.
struct PathKey {
  const char* key;
  const char* help;
};

inline const std::vector<PathKey>& path_keys() {
  static const std::vector<PathKey> keys = {
      {"train", "training corpus (CoNLL)"},
      {"dev", "development corpus (CoNLL)"},
      {"test", "test corpus (CoNLL)"},
      {"lexicon", "lexicon word list, one word per line"},
      {"embeddings", "pretrained word embedding file"},
      {"char_vectors", "precomputed character vectors container"},
      {"checkpoint", "model checkpoint"},
      {"resume", "checkpoint to continue training from"},
      {"log", "JSON-lines training log"},
      {"input", "input file for tag / lexicon-inspect ('-' for stdin)"},
      {"gold", "gold CoNLL file for eval"},
      {"pred", "predicted CoNLL file for eval"},
  };
  return keys;
}

inline bool is_path_key(const std::string& k) {
  for (const auto& p : path_keys())
    if (k == p.key) return true;
  return false;
}

struct RunConfig {
  TrainConfig train;
  std::map<std::string, std::string> paths;

  bool has(const std::string& key) const { return paths.count(key) > 0; }

  const std::string& require(const std::string& key, const std::string& command) const {
    auto it = paths.find(key);
    if (it == paths.end())
      throw ConfigError(command + ": missing required key '" + key + "'");
    return it->second;
  }

  std::optional<std::string> get(const std::string& key) const {
    auto it = paths.find(key);
    if (it == paths.end()) return std::nullopt;
    return it->second;
  }

  /// Sets one key from its string form.
  void set(const std::string& key, const std::string& value) {
    if (is_path_key(key)) {
      paths[key] = value;
      return;
    }
    const auto* f = find_config_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(train, value);
  }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

inline std::string env_name(const std::string& key) {
  std::string s = "SLKNER_";
  for (char c : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Reads a key=value file. Blank lines and lines starting with '#' are
/// ignored; relative paths resolve against the file's directory.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (!is_path_key(key) && !find_config_field(key))
      throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    if (is_path_key(key) && !value.empty() && value != "-" && fs::path(value).is_relative())
      value = (base / value).string();
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Merges the layers. `flags` holds only keys given on the command line.
inline RunConfig resolve_config(const std::optional<std::string>& config_file,
                                const std::map<std::string, std::string>& flags,
                                const EnvLookup& env) {
  RunConfig rc;
  if (config_file)
    for (const auto& [k, v] : read_config_file(*config_file)) rc.set(k, v);
  auto from_env = [&](const std::string& key) {
    if (auto v = env(env_name(key))) rc.set(key, *v);
  };
  for (const auto& f : train_config_fields()) from_env(f.key);
  for (const auto& p : path_keys()) from_env(p.key);
  for (const auto& [k, v] : flags) rc.set(k, v);
  rc.train.validate();
  return rc;
}

/// Every input path that is set must exist; output paths need an existing
/// parent directory.
inline void check_paths(const RunConfig& rc, const std::vector<std::string>& outputs) {
  for (const auto& [k, v] : rc.paths) {
    const bool is_output = std::find(outputs.begin(), outputs.end(), k) != outputs.end();
    if (is_output) {
      const auto parent = fs::absolute(fs::path(v)).parent_path();
      if (!fs::is_directory(parent))
        throw DataError("directory for '" + k + "' does not exist: " + parent.string());
    } else if (v != "-" && !fs::exists(v)) {
      throw DataError("path for '" + k + "' does not exist: " + v);
    }
  }
}

namespace detail {

inline TagScheme scheme_for(SchemeKind kind, const std::vector<std::string>& files) {
  std::vector<std::string> types;
  for (const auto& f : files) {
    auto t = collect_entity_types(f);
    types.insert(types.end(), t.begin(), t.end());
  }
  std::sort(types.begin(), types.end());
  types.erase(std::unique(types.begin(), types.end()), types.end());
  return TagScheme(kind, types);
}

inline Lexicon lexicon_from(const RunConfig& rc) {
  if (auto p = rc.get("lexicon")) return build_lexicon(read_word_list(*p), rc.train.lexicon_options());
  return Lexicon{};
}

/// Raw text: one sentence per non-empty line; whitespace is dropped.
inline std::vector<Sentence> read_text(std::istream& in, const std::string& stem) {
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::u32string chars;
    try {
      for (char32_t c : utf8::decode(line))
        if (c != U' ' && c != U'\t' && c != U'\r' && c != U'\n' && c != U'　')
          chars.push_back(c);
    } catch (const Error& e) {
      throw DataError(stem + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (chars.empty()) continue;
    Sentence s;
    s.id = stem + ":" + std::to_string(out.size());
    s.chars = std::move(chars);
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Fn>
auto with_input(const std::string& path, Fn&& fn) {
  if (path == "-") return fn(std::cin, std::string("stdin"));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return fn(in, fs::path(path).stem().string());
}

inline std::unique_ptr<CharVectorStore> char_vectors_from(const RunConfig& rc) {
  if (auto p = rc.get("char_vectors")) return std::make_unique<CharVectorStore>(load_container(*p));
  return nullptr;
}

inline void print_warnings(std::ostream& err, const std::vector<std::string>& ws) {
  for (const auto& w : ws) err << "warning: " << w << '\n';
}

inline nlohmann::json entities_json(const std::vector<EntitySpan>& spans) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : spans) a.push_back({{"start", e.start}, {"end", e.end}, {"type", e.type}});
  return a;
}

template <typename Real>
int train_impl(const RunConfig& rc, const Dataset& tr, const Dataset& dv, const Lexicon& lex,
               const EmbeddingTable* emb, const CharVectorStore* cv, std::ostream& out) {
  std::ofstream log_file;
  if (auto p = rc.get("log")) {
    log_file.open(*p);
    if (!log_file) throw DataError("cannot write log '" + *p + "'");
  }
  std::ostream& log = log_file.is_open() ? static_cast<std::ostream&>(log_file) : out;
  TrainOptions opts;
  opts.external = cv;
  opts.on_epoch = [&](const TrainLogEntry& e) { log << to_json(e).dump() << '\n' << std::flush; };

  TrainResult<Real> res;
  if (auto from = rc.get("resume")) {
    auto ck = load_checkpoint<Real>(*from);
    // the epoch budget and patience may be raised on resume; everything else
    // is fixed by the checkpoint
    ck.config.epochs = rc.train.epochs;
    ck.config.patience = rc.train.patience;
    ck.config.workers = rc.train.workers;
    res = resume<Real>(tr, dv, std::move(ck), std::move(opts));
  } else {
    res = train<Real>(tr, dv, lex, emb, rc.train, std::move(opts));
  }
  const auto& path = rc.require("checkpoint", "train");
  save_checkpoint(path, res.best);
  save_checkpoint(path + ".last", res.last);
  out << nlohmann::json{{"checkpoint", path},
                        {"best_epoch", res.best.best_epoch},
                        {"best_dev_f1", res.best.best_dev_f1},
                        {"epochs_run", res.last.epoch}}
             .dump()
      << '\n';
  return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto& train_path = rc.require("train", "train");
  const auto& dev_path = rc.require("dev", "train");
  rc.require("checkpoint", "train");
  check_paths(rc, {"checkpoint", "log"});

  ReadOptions ro;
  ro.max_len = rc.train.max_len;
  SchemeKind kind = rc.train.scheme;
  TagScheme scheme = detail::scheme_for(kind, {train_path, dev_path});
  if (auto from = rc.get("resume")) {
    // resumed runs must keep the checkpoint's label set
    const auto c = load_container(*from);
    const auto js = nlohmann::json::parse(c.meta_at("model.scheme"));
    scheme = TagScheme(parse_scheme_kind(js.at("kind").get<std::string>()),
                       js.at("types").get<std::vector<std::string>>());
  }
  ro.split = Split::Train;
  Dataset tr = read_conll(train_path, scheme, ro);
  ro.split = Split::Valid;
  Dataset dv = read_conll(dev_path, scheme, ro);
  detail::print_warnings(err, tr.warnings);
  detail::print_warnings(err, dv.warnings);

  const Lexicon lex = detail::lexicon_from(rc);
  std::optional<EmbeddingTable> emb;
  if (auto p = rc.get("embeddings")) {
    emb = load_embeddings(*p);
    detail::print_warnings(err, emb->warnings);
  }
  const auto cv = detail::char_vectors_from(rc);

  int precision = rc.train.precision;
  if (auto from = rc.get("resume")) precision = checkpoint_precision(load_container(*from));
  if (precision == 32)
    return detail::train_impl<float>(rc, tr, dv, lex, emb ? &*emb : nullptr, cv.get(), out);
  return detail::train_impl<double>(rc, tr, dv, lex, emb ? &*emb : nullptr, cv.get(), out);
}

struct TagOptions {
  std::string format = "conll";      // conll | json
  std::string input_format = "text"; // text | conll
  bool dump_attention = false;
};

namespace detail {

template <typename Real>
int tag_impl(const Container& ckc, const RunConfig& rc, const TagOptions& to, std::ostream& out) {
  const auto model = Tagger<Real>::load(ckc);
  const auto cv = char_vectors_from(rc);
  const std::string& input = rc.require("input", "tag");
  std::vector<Sentence> sentences;
  if (to.input_format == "conll") {
    sentences = with_input(input, [&](std::istream& in, const std::string& stem) {
      ReadOptions ro;
      ro.max_len = rc.train.max_len;
      ro.id_prefix = stem;
      ro.check_transitions = false;  // tags are ignored
      return read_conll(in, model.scheme(), ro, stem).sentences;
    });
  } else {
    sentences = with_input(input, [&](std::istream& in, const std::string& stem) {
      return read_text(in, stem);
    });
  }
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const auto& s = sentences[k];
    const auto in = model.prepare(s, cv.get());
    if (to.dump_attention) {
      for (const auto& row : model.attention(in))
        out << nlohmann::json{{"sentence", s.id}, {"pos", row.pos}, {"char", row.ch},
                              {"words", row.words}, {"alphas", row.alphas}}
                   .dump()
            << '\n';
      continue;
    }
    const auto tags = model.decode(in);
    if (to.format == "json") {
      nlohmann::json chars = nlohmann::json::array(), names = nlohmann::json::array();
      for (std::size_t i = 0; i < s.size(); ++i) {
        chars.push_back(utf8::encode(s.chars[i]));
        names.push_back(model.scheme().name(tags[i]));
      }
      out << nlohmann::json{{"id", s.id},
                            {"chars", chars},
                            {"tags", names},
                            {"entities", entities_json(extract_entities(tags, model.scheme()).spans)}}
                 .dump()
          << '\n';
    } else {
      if (k > 0) out << '\n';
      for (std::size_t i = 0; i < s.size(); ++i)
        out << utf8::encode(s.chars[i]) << ' ' << model.scheme().name(tags[i]) << '\n';
    }
  }
  return 0;
}

}  // namespace detail

inline int cmd_tag(const RunConfig& rc, const TagOptions& to, std::ostream& out) {
  if (to.format != "conll" && to.format != "json")
    throw ConfigError("tag: --format must be conll or json, got '" + to.format + "'");
  if (to.input_format != "text" && to.input_format != "conll")
    throw ConfigError("tag: --input-format must be text or conll, got '" + to.input_format + "'");
  const auto& ck = rc.require("checkpoint", "tag");
  rc.require("input", "tag");
  check_paths(rc, {});
  const auto c = load_container(ck);
  if (checkpoint_precision(c) == 32) return detail::tag_impl<float>(c, rc, to, out);
  return detail::tag_impl<double>(c, rc, to, out);
}

struct EvalOptions {
  bool table = false;
};

namespace detail {

template <typename Real>
std::vector<SpanPair> eval_checkpoint(const Container& ckc, const RunConfig& rc,
                                      const std::string& corpus) {
  const auto model = Tagger<Real>::load(ckc);
  ReadOptions ro;
  ro.max_len = rc.train.max_len;
  ro.split = Split::Test;
  const Dataset ds = read_conll(corpus, model.scheme(), ro);
  const auto cv = char_vectors_from(rc);
  return predict_spans(model, ds, cv.get());
}

inline std::vector<SpanPair> eval_files(const RunConfig& rc, const std::string& gold_path,
                                        const std::string& pred_path) {
  const TagScheme scheme = scheme_for(rc.train.scheme, {gold_path, pred_path});
  ReadOptions ro;
  ro.max_len = rc.train.max_len;
  const Dataset gold = read_conll(gold_path, scheme, ro);
  ro.check_transitions = false;
  const Dataset pred = read_conll(pred_path, scheme, ro);
  if (gold.size() != pred.size())
    throw DataError("eval: gold has " + std::to_string(gold.size()) + " sentences but pred has " +
                    std::to_string(pred.size()));
  std::vector<SpanPair> pairs;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto& g = gold.sentences[k];
    const auto& p = pred.sentences[k];
    if (g.chars != p.chars)
      throw DataError("eval: sentence " + std::to_string(k + 1) +
                      " differs between gold and pred");
    pairs.push_back({g.id, extract_entities(g.tags, scheme).spans,
                     extract_entities(p.tags, scheme).spans, g.size()});
  }
  return pairs;
}

}  // namespace detail

inline int cmd_eval(const RunConfig& rc, const EvalOptions& eo, std::ostream& out,
                    std::ostream& err) {
  check_paths(rc, {});
  std::vector<SpanPair> pairs;
  if (rc.has("gold") || rc.has("pred")) {
    pairs = detail::eval_files(rc, rc.require("gold", "eval"), rc.require("pred", "eval"));
  } else {
    const auto& ck = rc.require("checkpoint", "eval");
    std::string corpus;
    if (auto t = rc.get("test")) corpus = *t;
    else if (auto d = rc.get("dev")) corpus = *d;
    else throw ConfigError("eval: missing required key 'test' (or gold and pred)");
    const auto c = load_container(ck);
    pairs = checkpoint_precision(c) == 32 ? detail::eval_checkpoint<float>(c, rc, corpus)
                                          : detail::eval_checkpoint<double>(c, rc, corpus);
  }
  const auto report = evaluation_report(pairs, rc.train.buckets);
  if (report.contains("warnings"))
    detail::print_warnings(err, report["warnings"].get<std::vector<std::string>>());
  if (eo.table) out << report_table(report);
  else out << report.dump() << '\n';
  return 0;
}

inline int cmd_lexicon_inspect(const RunConfig& rc, const std::optional<std::string>& text,
                               std::ostream& out) {
  rc.require("lexicon", "lexicon-inspect");
  check_paths(rc, {});
  const Lexicon lex = detail::lexicon_from(rc);
  std::vector<Sentence> sentences;
  if (text) {
    std::istringstream in(*text);
    sentences = detail::read_text(in, "text");
  } else {
    sentences = detail::with_input(rc.require("input", "lexicon-inspect"),
                                   [](std::istream& in, const std::string& stem) {
                                     return detail::read_text(in, stem);
                                   });
  }
  auto words = [&](const std::vector<WordId>& ids) {
    nlohmann::json a = nlohmann::json::array();
    for (WordId w : ids) a.push_back(utf8::encode(lex.word(w)));
    return a;
  };
  for (const auto& s : sentences) {
    const auto m = match_sentence(lex, s.chars);
    for (std::size_t i = 0; i < s.size(); ++i)
      out << nlohmann::json{{"sentence", s.id},    {"pos", i + 1},
                            {"char", utf8::encode(s.chars[i])},
                            {"fwd", words(m.fwd[i])}, {"bwd", words(m.bwd[i])},
                            {"flk", words(m.flk[i])}, {"slk", words(m.slk[i])}}
                 .dump()
          << '\n';
  }
  return 0;
}

struct GradcheckReport {
  GradCheckResult result;
  double threshold = 1e-4;
  bool pass() const { return result.max_rel_error < threshold; }
};

/// Finite-difference check of the full model at 64-bit on a tiny network
/// (d_c = 4, d_h = 4, d_w = 3). Uses the first training sentence and the
/// configured lexicon when given, otherwise a built-in example.
inline GradcheckReport run_gradcheck(const RunConfig& rc) {
  ModelConfig mc = rc.train.model;
  mc.d_c = 4;
  mc.bigru_total = 8;
  mc.d_w = 3;
  mc.dropout = 0.0;
  mc.freeze_word_emb = false;

  Sentence s;
  TagScheme scheme(rc.train.scheme, {"LOC"});
  Lexicon lex;
  if (auto p = rc.get("train")) {
    scheme = detail::scheme_for(rc.train.scheme, {*p});
    ReadOptions ro;
    ro.max_len = rc.train.max_len;
    const Dataset ds = read_conll(*p, scheme, ro);
    if (ds.sentences.empty()) throw DataError("gradcheck: training corpus is empty");
    s = ds.sentences.front();
    lex = detail::lexicon_from(rc);
  } else {
    s.id = "builtin:0";
    s.chars = U"南京市长江大桥";
    const auto names = rc.train.scheme == SchemeKind::BIOES
                           ? std::vector<std::string>{"B-LOC", "I-LOC", "E-LOC", "B-LOC", "I-LOC",
                                                      "I-LOC", "E-LOC"}
                           : std::vector<std::string>{"B-LOC", "I-LOC", "I-LOC", "B-LOC", "I-LOC",
                                                      "I-LOC", "I-LOC"};
    for (const auto& n : names) s.tags.push_back(scheme.parse(n).value());
    lex = rc.has("lexicon")
              ? detail::lexicon_from(rc)
              : build_lexicon(std::vector<std::string>{"南京", "南京市", "市长", "长江",
                                                       "长江大桥", "大桥"},
                              rc.train.lexicon_options());
  }
  std::mt19937_64 rng(rc.train.seed);
  auto model = Tagger<double>::create(mc, scheme, CharVocab::from(std::span(&s, 1)), lex,
                                      nullptr, rng);
  const auto in = model.prepare(s);
  GradcheckReport rep;
  rep.result = grad_check(
      model.params(), [&] { return model.loss(in, s.tags, false, 0); },
      [&](Gradients<double>& g) { model.loss_and_grad(in, s.tags, g, false, 0); },
      model_grad_check_options());
  return rep;
}

inline int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  check_paths(rc, {});
  const auto rep = run_gradcheck(rc);
  out << nlohmann::json{{"max_rel_error", rep.result.max_rel_error},
                        {"worst_param", rep.result.worst_param},
                        {"worst_index", rep.result.worst_index},
                        {"checked", rep.result.checked},
                        {"threshold", rep.threshold},
                        {"pass", rep.pass()}}
             .dump()
      << '\n';
  return rep.pass() ? 0 : 3;
}

inline int cmd_echo_config(const RunConfig& rc, bool as_json, std::ostream& out) {
  if (as_json) {
    auto j = to_json(rc.train);
    for (const auto& [k, v] : rc.paths) j[k] = v;
    out << j.dump() << '\n';
    return 0;
  }
  for (const auto& f : train_config_fields()) out << f.key << '=' << f.get(rc.train) << '\n';
  for (const auto& [k, v] : rc.paths) out << k << '=' << v << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses `args` (without the program name), runs the subcommand and returns
/// the process exit code. Errors are reported on `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                   const EnvLookup& env = process_env) {
  CLI::App app{"slkner: Chinese NER with second-order lexicon knowledge", "slkner"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");

  std::map<std::string, std::string> flags;
  std::optional<std::string> config_file;
  TagOptions tag_opts;
  EvalOptions eval_opts;
  std::optional<std::string> inspect_text;
  bool echo_json = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option_function<std::string>(
        "-c,--config", [&](const std::string& v) { config_file = v; }, "key=value config file");
    for (const auto& f : train_config_fields()) {
      std::string names = "--" + f.key;
      std::string dashed = f.key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != f.key) names += ",--" + dashed;
      const std::string key = f.key;
      sub->add_option_function<std::string>(
          names, [&flags, key](const std::string& v) { flags[key] = v; }, "config: " + key);
    }
    for (const auto& p : path_keys()) {
      std::string names = std::string("--") + p.key;
      std::string dashed = p.key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != p.key) names += ",--" + dashed;
      const std::string key = p.key;
      sub->add_option_function<std::string>(
          names, [&flags, key](const std::string& v) { flags[key] = v; }, p.help);
    }
  };

  auto* train_cmd = app.add_subcommand("train", "train a model and write the best checkpoint");
  auto* tag_cmd = app.add_subcommand("tag", "tag raw text or CoNLL input with a checkpoint");
  auto* eval_cmd = app.add_subcommand("eval", "entity-level P/R/F1 report");
  auto* inspect_cmd = app.add_subcommand("lexicon-inspect", "dump lexicon match sets as JSON lines");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check on a tiny model");
  auto* echo_cmd = app.add_subcommand("echo-config", "print the resolved configuration");
  for (auto* s : {train_cmd, tag_cmd, eval_cmd, inspect_cmd, grad_cmd, echo_cmd}) add_common(s);

  tag_cmd->add_option("--format", tag_opts.format, "output format: conll or json");
  tag_cmd->add_option("--input-format", tag_opts.input_format, "input format: text or conll");
  tag_cmd->add_flag("--dump-attention", tag_opts.dump_attention,
                    "emit per-position attention weights instead of tags");
  eval_cmd->add_flag("--table", eval_opts.table, "plain-text table instead of JSON");
  inspect_cmd->add_option_function<std::string>(
      "--text", [&](const std::string& v) { inspect_text = v; }, "inspect this text");
  echo_cmd->add_flag("--json", echo_json, "print as JSON");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    const RunConfig rc = resolve_config(config_file, flags, env);
    if (*train_cmd) return cmd_train(rc, out, err);
    if (*tag_cmd) return cmd_tag(rc, tag_opts, out);
    if (*eval_cmd) return cmd_eval(rc, eval_opts, out, err);
    if (*inspect_cmd) return cmd_lexicon_inspect(rc, inspect_text, out);
    if (*grad_cmd) return cmd_gradcheck(rc, out);
    if (*echo_cmd) return cmd_echo_config(rc, echo_json, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

}  // namespace slkner
