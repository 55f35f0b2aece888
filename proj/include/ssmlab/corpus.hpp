#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ssmlab/rng.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab {

/// Dataset files or records that cannot be parsed. Carries file/line context
/// in the message; maps to the usage-error exit code at the CLI.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rule-based code tokenizer: identifiers, numeric literals collapsed to NUM,
/// string/char literals collapsed to STR, every other non-space character as
/// a single token. Deterministic; empty text gives an empty list.
std::vector<std::string> tokenize(std::string_view text);

/// Token-to-id table. Id 0 is PAD, id 1 is UNK; unseen tokens map to UNK.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocab();

  /// Insertion-ordered build over token sequences (training split only; the
  /// leakage guard lives in the call site discipline and is asserted in tests).
  static Vocab build(const std::vector<std::vector<std::string>>& sequences);

  std::int32_t id_of(const std::string& token) const;
  const std::string& token_of(std::int32_t id) const;
  std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }
  bool contains(const std::string& token) const { return map_.count(token) > 0; }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, std::int32_t> map_;
  std::vector<std::string> tokens_;
};

struct Example {
  std::vector<std::string> tokens;
  int label = 0;  // 0 or 1
};

struct Dataset {
  std::vector<Example> examples;
  std::string provenance;  // "synth_longrange", "synth_local", "reveal", "jsonl"

  Index size() const { return static_cast<Index>(examples.size()); }
  Index n_pos() const;
  Index n_neg() const;
};

/// Encode to ids and right-pad with PAD / truncate the tail to exactly L.
std::vector<std::int32_t> encode_padded(const Vocab& vocab, const std::vector<std::string>& tokens,
                                        Index length);

/// Long-range probe: uniform background over a 50-token alphabet w00..w49,
/// one "mark" at position p, and the alphabet token w00 at p+d iff the label
/// is positive (negatives draw any other alphabet token there). w00 also
/// occurs throughout the background of both classes, so only the relation at
/// distance d carries the label.
Dataset synth_longrange(Index n, Index length, Index distance, Rng rng);

/// Short-range control: label 1 iff a fixed trigram of alphabet tokens occurs
/// anywhere; negatives are scrubbed of accidental occurrences.
Dataset synth_local(Index n, Index length, Rng rng);

/// JSON-lines ingestion: {"code": str, "label": 0|1} per line (tokenized on
/// load), or {"tokens": [str...], "label": 0|1} for synthetic dumps. Throws
/// DataError with the 1-based line number on any malformed line.
Dataset load_jsonl(const std::string& path);

/// Writes the tokens-format JSONL dump produced by the synth command.
void write_jsonl(const Dataset& dataset, const std::string& path);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Deterministic shuffle-and-partition. Stratified mode partitions each label
/// class separately (largest-remainder rounding) so split ratios track the
/// global class balance within one example.
SplitResult split(const Dataset& dataset, const SplitSpec& spec);

}  // namespace ssmlab
