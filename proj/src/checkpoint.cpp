#include "amirgrpo/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace amirgrpo::policy {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab,
                     const PolicyParams& params) {
  const auto& s = params.shape();
  json doc;
  doc["format"] = "amirgrpo-policy";
  doc["version"] = kCheckpointVersion;
  doc["vocab"] = vocab.tokens();
  doc["shape"] = {{"vocab_size", s.vocab_size},
                  {"embed", s.embed},
                  {"hidden", s.hidden},
                  {"layers", s.layers},
                  {"max_positions", s.max_positions}};
  json tensors = json::array();
  for (std::size_t i = 0; i < params.names().size(); ++i) {
    const auto& t = params.tensors()[i];
    tensors.push_back({{"name", params.names()[i]},
                       {"shape", t.shape()},
                       {"data", std::vector<double>(t.values().begin(), t.values().end())}});
  }
  doc["tensors"] = std::move(tensors);

  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << doc.dump() << '\n';
  if (!out) throw CheckpointError("failed writing " + path.string());
}

namespace {
Checkpoint parse_checkpoint(const std::filesystem::path& path, const json& doc);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    return parse_checkpoint(path, json::parse(in));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

namespace {
Checkpoint parse_checkpoint(const std::filesystem::path& path, const json& doc) {
  if (doc.value("format", "") != "amirgrpo-policy") {
    throw CheckpointError(path.string() + " is not a policy checkpoint");
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version in " + path.string());
  }
  Vocabulary vocab(doc.at("vocab").get<std::vector<std::string>>());
  ModelShape shape;
  const auto& js = doc.at("shape");
  shape.vocab_size = js.at("vocab_size").get<std::size_t>();
  shape.embed = js.at("embed").get<std::size_t>();
  shape.hidden = js.at("hidden").get<std::size_t>();
  shape.layers = js.at("layers").get<std::size_t>();
  shape.max_positions = js.at("max_positions").get<std::size_t>();
  if (shape.vocab_size != vocab.size()) throw CheckpointError("checkpoint vocab/shape mismatch");

  PolicyParams params = PolicyParams::zeros(shape);
  const auto& tensors = doc.at("tensors");
  if (tensors.size() != params.names().size()) throw CheckpointError("checkpoint tensor count mismatch");
  for (const auto& jt : tensors) {
    auto& t = params.tensor(jt.at("name").get<std::string>());
    if (jt.at("shape").get<diffmath::Shape>() != t.shape()) {
      throw CheckpointError("checkpoint tensor shape mismatch for " + jt.at("name").get<std::string>());
    }
    const auto data = jt.at("data").get<std::vector<double>>();
    auto dst = t.mutable_values();
    if (data.size() != dst.size()) throw CheckpointError("checkpoint tensor size mismatch");
    std::copy(data.begin(), data.end(), dst.begin());
  }
  return {std::move(vocab), std::move(params)};
}
}  // namespace

}  // namespace amirgrpo::policy
