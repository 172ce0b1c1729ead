#pragma once

// Tokenisation, subword/word alignment, TSV datasets and the synthetic
// cue-detection corpus.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

using TokenId = std::uint32_t;

// Reserved ids occupy the first block of every vocabulary.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
inline constexpr std::string_view kNames[kCount] = {"<pad>", "<unk>", "<cls>", "<sep>", "<mask>"};
}  // namespace special

class Vocab {
 public:
  Vocab() {
    for (TokenId i = 0; i < special::kCount; ++i) {
      tokens_.emplace_back(special::kNames[i]);
      ids_.emplace(tokens_.back(), i);
    }
  }

  // Ids are assigned in first-seen order after the reserved block.
  TokenId add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<TokenId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? special::kUnk : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  // Non-reserved tokens in id order.
  std::vector<std::string> entries() const {
    return {tokens_.begin() + special::kCount, tokens_.end()};
  }

  // One token per line; line k holds id kCount + k.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write vocab file " + path);
    for (const auto& t : entries()) out << t << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open vocab file " + path);
    Vocab v;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) throw ParseError(path + ":" + std::to_string(n) + ": empty vocab entry");
      if (v.contains(line)) throw ParseError(path + ":" + std::to_string(n) + ": duplicate '" + line + "'");
      v.add(line);
    }
    return v;
  }

  static Vocab from_entries(const std::vector<std::string>& entries) {
    Vocab v;
    for (const auto& e : entries) v.add(e);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

enum class SplitMode { word, synthetic_subword };

inline std::string to_string(SplitMode m) {
  return m == SplitMode::word ? "word" : "synthetic-subword";
}
inline SplitMode split_mode_from_string(const std::string& s) {
  if (s == "word") return SplitMode::word;
  if (s == "synthetic-subword") return SplitMode::synthetic_subword;
  throw ConfigError("unknown split mode '" + s + "' (expected word | synthetic-subword)");
}

struct TokenizerConfig {
  SplitMode mode = SplitMode::word;
  std::size_t piece_length = 4;  // L for synthetic-subword
  std::size_t max_seq_len = 128;
};

// Maps each non-special token (in sequence order) to its word index.
struct Alignment {
  std::vector<std::size_t> token_to_word;
  std::size_t word_count = 0;
  bool truncated = false;  // trailing words may have no tokens
};

struct Tokenized {
  std::vector<TokenId> ids;  // CLS ... SEP
  Alignment alignment;
};

// Splits a word into ceil(len / L) character pieces; continuation pieces
// are prefixed with "##" so they never collide with whole words.
inline std::vector<std::string> split_word(const std::string& word, const TokenizerConfig& cfg) {
  if (cfg.mode == SplitMode::word || word.size() <= cfg.piece_length || cfg.piece_length == 0)
    return {word};
  std::vector<std::string> pieces;
  for (std::size_t i = 0; i < word.size(); i += cfg.piece_length) {
    std::string piece = word.substr(i, cfg.piece_length);
    pieces.push_back(i == 0 ? piece : "##" + piece);
  }
  return pieces;
}

inline Tokenized tokenize(const std::vector<std::string>& words, const Vocab& vocab,
                          const TokenizerConfig& cfg) {
  if (words.empty()) throw ContractError("tokenize: empty sentence");
  if (cfg.max_seq_len < 3) throw ConfigError("max_seq_len must leave room for CLS, SEP and one token");
  Tokenized out;
  out.alignment.word_count = words.size();
  out.ids.push_back(special::kCls);
  const std::size_t budget = cfg.max_seq_len - 2;
  for (std::size_t w = 0; w < words.size() && !out.alignment.truncated; ++w) {
    for (const auto& piece : split_word(words[w], cfg)) {
      if (out.alignment.token_to_word.size() == budget) {
        out.alignment.truncated = true;
        break;
      }
      out.ids.push_back(vocab.id(piece));
      out.alignment.token_to_word.push_back(w);
    }
  }
  out.ids.push_back(special::kSep);
  return out;
}

// Word-mode inverse of tokenize (ignores truncation).
inline std::vector<std::string> detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::vector<std::string> words;
  for (TokenId id : ids) {
    if (id < special::kCount) continue;
    const std::string& t = vocab.token(id);
    if (t.rfind("##", 0) == 0 && !words.empty())
      words.back() += t.substr(2);
    else
      words.push_back(t);
  }
  return words;
}

// Non-decreasing, starts at 0, steps by at most 1; covers every word unless
// truncated (then covers a prefix).
inline void validate_alignment(const Alignment& a) {
  for (std::size_t i = 0; i < a.token_to_word.size(); ++i) {
    const std::size_t w = a.token_to_word[i];
    const std::size_t prev = i == 0 ? 0 : a.token_to_word[i - 1];
    const bool ok = i == 0 ? w == 0 : (w == prev || w == prev + 1);
    if (!ok || w >= a.word_count)
      throw AlignmentError("alignment not monotone/surjective at token " + std::to_string(i));
  }
  const std::size_t covered = a.token_to_word.empty() ? 0 : a.token_to_word.back() + 1;
  if (covered != a.word_count && !a.truncated)
    throw AlignmentError("alignment covers " + std::to_string(covered) + " of " +
                         std::to_string(a.word_count) + " words");
}

struct LabeledSentence {
  std::vector<std::string> words;
  int sentence_label = 0;
  std::optional<std::vector<int>> token_labels;  // evaluation only
  // Filled by tokenize_dataset.
  std::vector<TokenId> token_ids;
  Alignment alignment;
};

struct Dataset {
  std::vector<LabeledSentence> sentences;
  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  bool has_token_labels() const {
    return !sentences.empty() &&
           std::all_of(sentences.begin(), sentences.end(),
                       [](const LabeledSentence& s) { return s.token_labels.has_value(); });
  }
};

inline void tokenize_dataset(Dataset& ds, const Vocab& vocab, const TokenizerConfig& cfg) {
  for (auto& s : ds.sentences) {
    auto t = tokenize(s.words, vocab, cfg);
    s.token_ids = std::move(t.ids);
    s.alignment = std::move(t.alignment);
  }
}

// Vocabulary over the pieces of every word in the given datasets, in
// first-seen order.
inline Vocab build_vocab(std::initializer_list<const Dataset*> datasets, const TokenizerConfig& cfg) {
  Vocab v;
  for (const Dataset* ds : datasets)
    for (const auto& s : ds->sentences)
      for (const auto& w : s.words)
        for (const auto& p : split_word(w, cfg)) v.add(p);
  return v;
}

// Copy with every gold token label removed. The trainer only ever sees
// datasets passed through here.
inline Dataset strip_token_labels(const Dataset& ds) {
  Dataset out = ds;
  for (auto& s : out.sentences) s.token_labels.reset();
  return out;
}

// ---------------------------------------------------------------------------
// TSV: `word<TAB>label` per line, blank line between sentences, optional
// `# sent_label=<0|1>` header before a sentence.

struct LoadResult {
  Dataset dataset;
  std::vector<std::string> warnings;
};

inline LoadResult parse_tsv(std::istream& in, const std::string& source = "<input>") {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  LabeledSentence cur;
  std::vector<int> labels;
  std::optional<int> header;
  std::size_t header_line = 0;
  auto where = [&](std::size_t n) { return source + ":" + std::to_string(n) + ": "; };
  auto flush = [&] {
    if (cur.words.empty()) {
      if (header) throw ParseError(where(header_line) + "sentence header without words");
      return;
    }
    const int any = std::any_of(labels.begin(), labels.end(), [](int l) { return l == 1; }) ? 1 : 0;
    cur.sentence_label = header.value_or(any);
    if (header && *header == 1 && any == 0)
      result.warnings.push_back(where(header_line) +
                                "sent_label=1 but no positive token labels");
    if (header && *header == 0 && any == 1)
      throw ParseError(where(header_line) + "sent_label=0 but a token label is 1");
    cur.token_labels = labels;
    result.dataset.sentences.push_back(std::move(cur));
    cur = LabeledSentence{};
    labels.clear();
    header.reset();
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#' && line.find('\t') == std::string::npos) {
      constexpr std::string_view key = "# sent_label=";
      if (line.rfind(key, 0) == 0) {
        if (!cur.words.empty()) throw ParseError(where(line_no) + "sentence header inside a sentence");
        const std::string v = line.substr(key.size());
        if (v != "0" && v != "1") throw ParseError(where(line_no) + "non-binary sentence label '" + v + "'");
        header = v == "1" ? 1 : 0;
        header_line = line_no;
      }
      continue;  // other comment lines are ignored
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw ParseError(where(line_no) + "expected 2 tab-separated columns");
    const std::string word = line.substr(0, tab);
    const std::string label = line.substr(tab + 1);
    if (word.empty()) throw ParseError(where(line_no) + "empty word");
    if (label != "0" && label != "1") throw ParseError(where(line_no) + "non-binary label '" + label + "'");
    cur.words.push_back(word);
    labels.push_back(label == "1" ? 1 : 0);
  }
  flush();
  if (result.dataset.empty()) throw ParseError(source + ": no sentences");
  return result;
}

inline LoadResult load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse_tsv(in, path);
}

inline void write_tsv(std::ostream& out, const Dataset& ds) {
  for (const auto& s : ds.sentences) {
    out << "# sent_label=" << s.sentence_label << '\n';
    for (std::size_t i = 0; i < s.words.size(); ++i)
      out << s.words[i] << '\t' << (s.token_labels ? (*s.token_labels)[i] : 0) << '\n';
    out << '\n';
  }
}

inline void save_tsv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  write_tsv(out, ds);
}

// Seeded random hold-out of `fraction` of the sentences (dev split).
inline std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  const auto n_held = static_cast<std::size_t>(static_cast<double>(ds.size()) * fraction + 0.5);
  std::vector<bool> held(ds.size(), false);
  for (std::size_t i = 0; i < n_held; ++i) held[idx[i]] = true;
  Dataset keep, out;
  for (std::size_t i = 0; i < ds.size(); ++i) (held[i] ? out : keep).sentences.push_back(ds.sentences[i]);
  return {std::move(keep), std::move(out)};
}

inline nlohmann::json dataset_stats(const Dataset& ds) {
  std::size_t pos = 0, words = 0, pos_tokens = 0, tokens = 0, truncated = 0;
  for (const auto& s : ds.sentences) {
    pos += s.sentence_label;
    words += s.words.size();
    tokens += s.alignment.token_to_word.size();
    truncated += s.alignment.truncated ? 1 : 0;
    if (s.token_labels)
      for (int l : *s.token_labels) pos_tokens += l;
  }
  return {{"sentences", ds.size()},
          {"positive_sentences", pos},
          {"words", words},
          {"positive_words", pos_tokens},
          {"subword_tokens", tokens},
          {"truncated_sentences", truncated},
          {"has_token_labels", ds.has_token_labels()}};
}

// ---------------------------------------------------------------------------
// Synthetic cue-detection corpus.

struct SyntheticConfig {
  std::size_t n_train = 2000;
  std::size_t n_dev = 200;
  std::size_t n_test = 200;
  std::size_t vocab_size = 200;        // distinct word types, cues included
  std::size_t cue_lexicon_size = 10;
  double positive_rate = 0.5;
  std::size_t min_length = 5;          // words per sentence
  std::size_t max_length = 15;
  std::size_t min_word_chars = 2;
  std::size_t max_word_chars = 9;
  // Positives need both halves of a cue pair; negatives may hold one half.
  bool distributed_cues = false;
  double lone_half_rate = 0.5;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  Dataset train, dev, test;
  std::vector<std::string> lexicon;  // all word types
  std::vector<std::string> cues;     // cue words (pairs adjacent when distributed)
};

namespace detail {

inline std::string random_word(Rng& rng, std::size_t min_chars, std::size_t max_chars) {
  static constexpr std::string_view kConsonants = "bcdfghjklmnprstvwz";
  static constexpr std::string_view kVowels = "aeiou";
  const std::size_t n = min_chars + rng.below(max_chars - min_chars + 1);
  std::string w;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& set = (i % 2 == 0) ? kConsonants : kVowels;
    w.push_back(set[rng.below(set.size())]);
  }
  return w;
}

}  // namespace detail

inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.cue_lexicon_size >= cfg.vocab_size)
    throw ConfigError("cue_lexicon_size must be smaller than vocab_size");
  if (cfg.positive_rate < 0.0 || cfg.positive_rate > 1.0) throw ConfigError("positive_rate outside [0, 1]");
  if (cfg.positive_rate > 0.0 && cfg.cue_lexicon_size == 0)
    throw ConfigError("positive_rate > 0 needs a non-empty cue lexicon");
  if (cfg.min_length == 0 || cfg.min_length > cfg.max_length) throw ConfigError("bad sentence length range");
  if (cfg.min_word_chars == 0 || cfg.min_word_chars > cfg.max_word_chars) throw ConfigError("bad word length range");
  if (cfg.distributed_cues && (cfg.cue_lexicon_size < 2 || cfg.cue_lexicon_size % 2 != 0))
    throw ConfigError("distributed cues need an even cue lexicon of size >= 2");

  Rng rng(cfg.seed);
  SyntheticCorpus corpus;
  std::set<std::string> seen;
  std::size_t attempts = 0;
  while (corpus.lexicon.size() < cfg.vocab_size) {
    if (++attempts > cfg.vocab_size * 1000) throw ConfigError("cannot draw enough distinct words");
    std::string w = detail::random_word(rng, cfg.min_word_chars, cfg.max_word_chars);
    if (seen.insert(w).second) corpus.lexicon.push_back(std::move(w));
  }
  corpus.cues.assign(corpus.lexicon.begin(), corpus.lexicon.begin() + static_cast<std::ptrdiff_t>(cfg.cue_lexicon_size));
  const std::vector<std::string> fillers(corpus.lexicon.begin() + static_cast<std::ptrdiff_t>(cfg.cue_lexicon_size),
                                         corpus.lexicon.end());

  std::set<std::vector<std::string>> used;  // keeps splits disjoint
  auto make_sentence = [&](bool positive) {
    for (std::size_t tries = 0;; ++tries) {
      if (tries > 100000) throw ConfigError("cannot draw enough distinct sentences; enlarge vocab or lengths");
      std::size_t len = cfg.min_length + rng.below(cfg.max_length - cfg.min_length + 1);
      if (positive && cfg.distributed_cues) len = std::max<std::size_t>(len, 2);
      LabeledSentence s;
      s.words.resize(len);
      std::vector<int> labels(len, 0);
      for (auto& w : s.words) w = fillers[rng.below(fillers.size())];
      std::vector<std::size_t> pos(len);
      for (std::size_t i = 0; i < len; ++i) pos[i] = i;
      rng.shuffle(std::span<std::size_t>(pos));
      if (positive && !cfg.distributed_cues) {
        const std::size_t k = std::min<std::size_t>(len, rng.bernoulli(0.3) ? 2 : 1);
        for (std::size_t i = 0; i < k; ++i) {
          s.words[pos[i]] = corpus.cues[rng.below(corpus.cues.size())];
          labels[pos[i]] = 1;
        }
      } else if (cfg.distributed_cues && len >= 1) {
        const std::size_t pair = rng.below(corpus.cues.size() / 2);
        if (positive) {
          const auto [first, second] = std::minmax(pos[0], pos[1]);
          s.words[first] = corpus.cues[2 * pair];
          s.words[second] = corpus.cues[2 * pair + 1];
          labels[first] = labels[second] = 1;
        } else if (rng.bernoulli(cfg.lone_half_rate)) {
          s.words[pos[0]] = corpus.cues[2 * pair + rng.below(2)];
        }
      }
      if (!used.insert(s.words).second) continue;
      s.sentence_label = positive ? 1 : 0;
      s.token_labels = std::move(labels);
      return s;
    }
  };
  auto fill = [&](Dataset& ds, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) ds.sentences.push_back(make_sentence(rng.bernoulli(cfg.positive_rate)));
  };
  fill(corpus.train, cfg.n_train);
  fill(corpus.dev, cfg.n_dev);
  fill(corpus.test, cfg.n_test);
  return corpus;
}

}  // namespace zsl
