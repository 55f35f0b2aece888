#include "ssmlab/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ssmlab/version.hpp"

namespace ssmlab {

using nlohmann::json;

std::string checkpoint_to_json(const ModelParams& params, const Vocab& vocab) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["tool_version"] = kVersion;
  const FeatureBlockConfig& c = params.config;
  j["config"] = {{"arch", c.arch},
                 {"embed_dim", c.embed_dim},
                 {"hidden", c.hidden},
                 {"kernel_sizes", c.kernel_sizes},
                 {"state_size", c.state_size},
                 {"dropout_p", c.dropout_p},
                 {"seq_len", c.seq_len},
                 {"dt_min", c.dt_min},
                 {"dt_max", c.dt_max}};
  j["vocab"] = vocab.tokens();
  json tensors = json::array();
  for (const NamedTensor& t : params.tensors) {
    json entry;
    entry["name"] = t.name;
    entry["shape"] = t.value.shape();
    entry["trainable"] = t.trainable;
    entry["data"] = std::vector<double>(t.value.data(), t.value.data() + t.value.size());
    tensors.push_back(std::move(entry));
  }
  j["tensors"] = std::move(tensors);
  return j.dump() + "\n";
}

void save_checkpoint(const ModelParams& params, const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw DataError("cannot write checkpoint file " + path);
  out << checkpoint_to_json(params, vocab);
  if (!out.good()) throw DataError("failed writing checkpoint file " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw DataError("cannot open checkpoint file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();

  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& err) {
    throw DataError(path + ": corrupt checkpoint: " + err.what());
  }

  try {
    if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
      throw DataError(path + ": missing checkpoint format_version");
    }
    const int version = j["format_version"].get<int>();
    if (version != kCheckpointVersion) {
      throw DataError(path + ": checkpoint format version " + std::to_string(version) +
                      ", this build reads version " + std::to_string(kCheckpointVersion));
    }

    Checkpoint ck;
    const json& c = j.at("config");
    ck.params.config.arch = c.at("arch").get<std::string>();
    ck.params.config.embed_dim = c.at("embed_dim").get<Index>();
    ck.params.config.hidden = c.at("hidden").get<Index>();
    ck.params.config.kernel_sizes = c.at("kernel_sizes").get<std::vector<Index>>();
    ck.params.config.state_size = c.at("state_size").get<Index>();
    ck.params.config.dropout_p = c.at("dropout_p").get<double>();
    ck.params.config.seq_len = c.at("seq_len").get<Index>();
    ck.params.config.dt_min = c.at("dt_min").get<double>();
    ck.params.config.dt_max = c.at("dt_max").get<double>();

    std::vector<std::vector<std::string>> vocab_rows;
    const auto vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
    if (vocab_tokens.size() < 2 || vocab_tokens[0] != "<pad>" || vocab_tokens[1] != "<unk>") {
      throw DataError(path + ": checkpoint vocabulary must start with <pad>, <unk>");
    }
    vocab_rows.push_back({vocab_tokens.begin() + 2, vocab_tokens.end()});
    ck.vocab = Vocab::build(vocab_rows);
    ck.params.vocab_size = ck.vocab.size();

    for (const json& entry : j.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.trainable = entry.at("trainable").get<bool>();
      const Shape shape = entry.at("shape").get<Shape>();
      const auto data = entry.at("data").get<std::vector<double>>();
      if (static_cast<Index>(data.size()) != shape_numel(shape)) {
        throw DataError(path + ": tensor \"" + t.name + "\" has " + std::to_string(data.size()) +
                        " values for shape " + shape_to_string(shape));
      }
      Tensor::Storage storage(static_cast<Index>(data.size()));
      for (Index i = 0; i < storage.size(); ++i) storage[i] = data[static_cast<std::size_t>(i)];
      t.value = Tensor(shape, std::move(storage));
      ck.params.tensors.push_back(std::move(t));
    }
    if (ck.params.tensors.empty()) throw DataError(path + ": checkpoint holds no tensors");
    if (ck.params.find("embedding") == nullptr) {
      throw DataError(path + ": checkpoint is missing the embedding table");
    }
    return ck;
  } catch (const json::exception& err) {
    throw DataError(path + ": corrupt checkpoint: " + err.what());
  }
}

}  // namespace ssmlab
