#pragma once

#include <string>

#include "ssmlab/corpus.hpp"
#include "ssmlab/feature_blocks.hpp"

namespace ssmlab {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
};

/// Self-describing JSON document: format version, tool version, config,
/// vocabulary, and shape-annotated flat tensors. See docs/checkpoint.md.
std::string checkpoint_to_json(const ModelParams& params, const Vocab& vocab);

void save_checkpoint(const ModelParams& params, const Vocab& vocab, const std::string& path);

/// Throws DataError on unreadable/corrupt files or a version mismatch;
/// never returns a partially-filled model.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ssmlab
