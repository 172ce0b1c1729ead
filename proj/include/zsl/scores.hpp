#pragma once

// Word-level importance scores and their text format:
//
//   # method=<tag>
//   # threshold=<value>
//   # <key>=<value>           (further metadata, optional)
//
//   # sent_prob=<p>           (optional, per block)
//   word<TAB>score<TAB>predicted_label
//   ...
//   <blank line>
//
// Numbers are written in shortest round-trip form.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "zsl/errors.hpp"

namespace zsl {

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw NumericError("cannot format a double");
  return {buf, end};
}

inline double parse_double(const std::string& s, const std::string& where) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) throw ParseError(where + "not a number: '" + s + "'");
  return v;
}

struct SentenceScores {
  std::vector<std::string> words;
  std::vector<double> scores;
  std::optional<double> sentence_probability;
};

struct ImportanceScores {
  std::string method;
  double threshold = 0.5;
  std::vector<std::pair<std::string, std::string>> metadata;  // written in order after method/threshold
  std::vector<SentenceScores> sentences;

  std::optional<std::string> get(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return v;
    return std::nullopt;
  }
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : metadata)
      if (k == key) {
        v = value;
        return;
      }
    metadata.emplace_back(key, value);
  }

  std::vector<std::vector<double>> score_matrix() const {
    std::vector<std::vector<double>> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(s.scores);
    return out;
  }
};

inline void write_scores(std::ostream& out, const ImportanceScores& sc) {
  out << "# method=" << sc.method << '\n';
  out << "# threshold=" << format_double(sc.threshold) << '\n';
  for (const auto& [k, v] : sc.metadata) out << "# " << k << '=' << v << '\n';
  for (const auto& s : sc.sentences) {
    out << '\n';
    if (s.sentence_probability) out << "# sent_prob=" << format_double(*s.sentence_probability) << '\n';
    for (std::size_t i = 0; i < s.words.size(); ++i)
      out << s.words[i] << '\t' << format_double(s.scores[i]) << '\t' << (s.scores[i] > sc.threshold ? 1 : 0)
          << '\n';
  }
}

inline std::string scores_to_string(const ImportanceScores& sc) {
  std::ostringstream os;
  write_scores(os, sc);
  return os.str();
}

inline ImportanceScores parse_scores(std::istream& in, const std::string& source = "<scores>") {
  ImportanceScores sc;
  bool have_method = false, have_threshold = false, in_header = true;
  SentenceScores cur;
  std::optional<double> pending_prob;
  std::string line;
  std::size_t n = 0;
  auto where = [&] { return source + ":" + std::to_string(n) + ": "; };
  auto flush = [&] {
    if (!cur.words.empty()) {
      cur.sentence_probability = pending_prob;
      sc.sentences.push_back(std::move(cur));
      cur = SentenceScores{};
      pending_prob.reset();
    } else if (pending_prob) {
      throw ParseError(where() + "sent_prob without words");
    }
  };
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      in_header = false;
      flush();
      continue;
    }
    if (line.rfind("# ", 0) == 0 && line.find('\t') == std::string::npos) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "sent_prob" && !in_header) {
        if (!cur.words.empty()) throw ParseError(where() + "sent_prob inside a block");
        pending_prob = parse_double(value, where());
      } else if (in_header) {
        if (key == "method") {
          sc.method = value;
          have_method = true;
        } else if (key == "threshold") {
          sc.threshold = parse_double(value, where());
          have_threshold = true;
        } else {
          sc.metadata.emplace_back(key, value);
        }
      }
      continue;
    }
    in_header = false;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw ParseError(where() + "expected 3 tab-separated columns");
    const std::string label = line.substr(t2 + 1);
    if (label != "0" && label != "1") throw ParseError(where() + "non-binary predicted label '" + label + "'");
    cur.words.push_back(line.substr(0, t1));
    cur.scores.push_back(parse_double(line.substr(t1 + 1, t2 - t1 - 1), where()));
  }
  flush();
  if (!have_method || !have_threshold) throw ParseError(source + ": missing method or threshold header");
  if (sc.sentences.empty()) throw ParseError(source + ": no scored sentences");
  return sc;
}

inline ImportanceScores load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse_scores(in, path);
}

inline void save_scores(const std::string& path, const ImportanceScores& sc) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  write_scores(out, sc);
}

}  // namespace zsl
