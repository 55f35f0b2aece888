#include "ssmlab/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace ssmlab {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (ident_start(c)) {
      std::size_t j = i + 1;
      while (j < n && ident_char(text[j])) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    if (digit(c)) {
      // Numeric literal: digits plus hex/float/suffix characters, with
      // exponent signs. The whole literal collapses to NUM.
      std::size_t j = i + 1;
      while (j < n) {
        const char d = text[j];
        if (ident_char(d) || d == '.') {
          ++j;
        } else if ((d == '+' || d == '-') &&
                   (text[j - 1] == 'e' || text[j - 1] == 'E' || text[j - 1] == 'p' ||
                    text[j - 1] == 'P')) {
          ++j;
        } else {
          break;
        }
      }
      out.emplace_back("NUM");
      i = j;
      continue;
    }
    if (c == '"' || c == '\'') {
      // String/char literal with backslash escapes; unterminated literals
      // swallow the rest of the text rather than erroring.
      std::size_t j = i + 1;
      while (j < n && text[j] != c) {
        j += (text[j] == '\\' && j + 1 < n) ? 2 : 1;
      }
      out.emplace_back("STR");
      i = (j < n) ? j + 1 : n;
      continue;
    }
    out.emplace_back(1, c);
    ++i;
  }
  return out;
}

Vocab::Vocab() {
  tokens_ = {"<pad>", "<unk>"};
  map_ = {{"<pad>", kPad}, {"<unk>", kUnk}};
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& sequences) {
  Vocab v;
  for (const auto& seq : sequences) {
    for (const std::string& tok : seq) {
      if (v.map_.emplace(tok, static_cast<std::int32_t>(v.tokens_.size())).second) {
        v.tokens_.push_back(tok);
      }
    }
  }
  return v;
}

std::int32_t Vocab::id_of(const std::string& token) const {
  auto it = map_.find(token);
  return it == map_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(std::int32_t id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Index Dataset::n_pos() const {
  return static_cast<Index>(
      std::count_if(examples.begin(), examples.end(), [](const Example& e) { return e.label == 1; }));
}

Index Dataset::n_neg() const { return size() - n_pos(); }

std::vector<std::int32_t> encode_padded(const Vocab& vocab, const std::vector<std::string>& tokens,
                                        Index length) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(length), Vocab::kPad);
  const Index n = std::min<Index>(length, static_cast<Index>(tokens.size()));
  for (Index t = 0; t < n; ++t) ids[static_cast<std::size_t>(t)] = vocab.id_of(tokens[static_cast<std::size_t>(t)]);
  return ids;
}

namespace {

std::vector<std::string> background_alphabet() {
  std::vector<std::string> a;
  a.reserve(50);
  for (int i = 0; i < 50; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "w%02d", i);
    a.emplace_back(buf);
  }
  return a;
}

}  // namespace

// Any window this wide or narrower can never contain both "mark" and "pair"
// in a negative example, so window-limited models see no decoy correlation.
constexpr Index kDecoyClearance = 8;

Dataset synth_longrange(Index n, Index length, Index distance, Rng rng) {
  if (distance < 2 || distance > length - 2) {
    throw std::invalid_argument("synth_longrange: distance " + std::to_string(distance) +
                                " outside [2, " + std::to_string(length - 2) + "]");
  }
  const std::vector<std::string> alphabet = background_alphabet();
  Dataset d;
  d.provenance = "synth_longrange";
  d.examples.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Example e;
    e.label = rng.bernoulli(0.5) ? 1 : 0;
    e.tokens.resize(static_cast<std::size_t>(length));
    for (Index t = 0; t < length; ++t) {
      e.tokens[static_cast<std::size_t>(t)] = alphabet[static_cast<std::size_t>(rng.uniform_int(50))];
    }
    const Index p = rng.uniform_int(length - distance);
    e.tokens[static_cast<std::size_t>(p)] = "mark";
    if (e.label == 1) {
      e.tokens[static_cast<std::size_t>(p + distance)] = "pair";
    } else {
      // Exactly one "pair" in every example, so neither its presence nor its
      // count carries label information; only the mark->pair gap does. The
      // decoy lands away from the mark so no short window sees both.
      std::vector<Index> slots;
      for (Index q = 0; q < length; ++q) {
        if (std::abs(q - p) >= kDecoyClearance && q != p + distance) slots.push_back(q);
      }
      if (slots.empty()) {
        for (Index q = 0; q < length; ++q) {
          if (q != p && q != p + distance) slots.push_back(q);
        }
      }
      const Index q =
          slots[static_cast<std::size_t>(rng.uniform_int(static_cast<Index>(slots.size())))];
      e.tokens[static_cast<std::size_t>(q)] = "pair";
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

Dataset synth_local(Index n, Index length, Rng rng) {
  if (length < 3) {
    throw std::invalid_argument("synth_local: length " + std::to_string(length) + " is below 3");
  }
  const std::vector<std::string> alphabet = background_alphabet();
  const std::string tri[3] = {alphabet[7], alphabet[13], alphabet[2]};
  Dataset d;
  d.provenance = "synth_local";
  d.examples.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Example e;
    e.label = rng.bernoulli(0.5) ? 1 : 0;
    e.tokens.resize(static_cast<std::size_t>(length));
    for (Index t = 0; t < length; ++t) {
      e.tokens[static_cast<std::size_t>(t)] = alphabet[static_cast<std::size_t>(rng.uniform_int(50))];
    }
    if (e.label == 1) {
      const Index q = rng.uniform_int(length - 2);
      for (Index k = 0; k < 3; ++k) e.tokens[static_cast<std::size_t>(q + k)] = tri[k];
    } else {
      // Scrub accidental occurrences so the trigram is a perfect label.
      for (Index t = 0; t + 2 < length; ++t) {
        while (e.tokens[static_cast<std::size_t>(t)] == tri[0] &&
               e.tokens[static_cast<std::size_t>(t + 1)] == tri[1] &&
               e.tokens[static_cast<std::size_t>(t + 2)] == tri[2]) {
          e.tokens[static_cast<std::size_t>(t + 1)] =
              alphabet[static_cast<std::size_t>(rng.uniform_int(50))];
        }
      }
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw DataError("cannot open dataset file " + path);
  Dataset d;
  d.provenance = "jsonl";
  bool saw_code = false;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;  // blank line
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + err.what());
    }
    if (!j.contains("label") || !j["label"].is_number_integer()) {
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": missing or non-integer \"label\"");
    }
    const int label = j["label"].get<int>();
    if (label != 0 && label != 1) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": label " +
                      std::to_string(label) + " is not 0 or 1");
    }
    Example e;
    e.label = label;
    if (j.contains("code")) {
      if (!j["code"].is_string()) {
        throw DataError(path + ": line " + std::to_string(line_no) + ": \"code\" must be a string");
      }
      e.tokens = tokenize(j["code"].get<std::string>());
      saw_code = true;
    } else if (j.contains("tokens")) {
      if (!j["tokens"].is_array()) {
        throw DataError(path + ": line " + std::to_string(line_no) + ": \"tokens\" must be an array");
      }
      for (const auto& t : j["tokens"]) {
        if (!t.is_string()) {
          throw DataError(path + ": line " + std::to_string(line_no) +
                          ": \"tokens\" entries must be strings");
        }
        e.tokens.push_back(t.get<std::string>());
      }
    } else {
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": need a \"code\" or \"tokens\" field");
    }
    d.examples.push_back(std::move(e));
  }
  if (d.examples.empty()) throw DataError(path + ": no examples");
  if (saw_code) d.provenance = "reveal";
  return d;
}

void write_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw DataError("cannot write dataset file " + path);
  for (const Example& e : dataset.examples) {
    nlohmann::json j;
    j["tokens"] = e.tokens;
    j["label"] = e.label;
    out << j.dump() << '\n';
  }
}

namespace {

// Largest-remainder apportionment of `total` across the three fractions.
std::array<Index, 3> apportion(Index total, const std::array<double, 3>& fractions) {
  std::array<Index, 3> counts{};
  std::array<double, 3> remainders{};
  Index assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fractions[static_cast<std::size_t>(s)] * static_cast<double>(total);
    counts[static_cast<std::size_t>(s)] = static_cast<Index>(std::floor(exact + 1e-9));
    remainders[static_cast<std::size_t>(s)] = exact - static_cast<double>(counts[static_cast<std::size_t>(s)]);
    assigned += counts[static_cast<std::size_t>(s)];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&remainders](int a, int b) {
    return remainders[static_cast<std::size_t>(a)] > remainders[static_cast<std::size_t>(b)];
  });
  const Index leftover = total - assigned;  // at most 2
  for (Index k = 0; k < leftover; ++k) {
    counts[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] += 1;
  }
  return counts;
}

}  // namespace

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions sum to " +
                                std::to_string(spec.train + spec.val + spec.test) +
                                ", expected 1");
  }
  if (spec.train < 0 || spec.val < 0 || spec.test < 0) {
    throw std::invalid_argument("split fractions must be non-negative");
  }
  const std::array<double, 3> fractions = {spec.train, spec.val, spec.test};

  // Group indices by label (or one group when unstratified), shuffle each
  // group with the split substream, then apportion.
  std::vector<std::vector<Index>> groups;
  if (spec.stratified) {
    groups.resize(2);
    for (Index i = 0; i < dataset.size(); ++i) {
      groups[static_cast<std::size_t>(dataset.examples[static_cast<std::size_t>(i)].label)].push_back(i);
    }
  } else {
    groups.resize(1);
    for (Index i = 0; i < dataset.size(); ++i) groups[0].push_back(i);
  }

  Rng rng = Rng(spec.seed).split("split");
  SplitResult out;
  out.train.provenance = dataset.provenance;
  out.val.provenance = dataset.provenance;
  out.test.provenance = dataset.provenance;
  Dataset* parts[3] = {&out.train, &out.val, &out.test};
  for (std::vector<Index>& group : groups) {
    for (Index i = static_cast<Index>(group.size()) - 1; i > 0; --i) {
      const Index j = rng.uniform_int(i + 1);
      std::swap(group[static_cast<std::size_t>(i)], group[static_cast<std::size_t>(j)]);
    }
    const std::array<Index, 3> counts = apportion(static_cast<Index>(group.size()), fractions);
    std::size_t cursor = 0;
    for (int s = 0; s < 3; ++s) {
      for (Index k = 0; k < counts[static_cast<std::size_t>(s)]; ++k) {
        parts[s]->examples.push_back(dataset.examples[static_cast<std::size_t>(group[cursor++])]);
      }
    }
  }
  return out;
}

}  // namespace ssmlab
