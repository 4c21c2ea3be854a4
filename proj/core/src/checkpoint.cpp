#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spanexplain/errors.hpp"
#include "spanexplain/trainer.hpp"

namespace spanexplain {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kFormatName = "spanexplain-checkpoint";
constexpr int kFormatVersion = 1;

void append_le_float(std::string& out, float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  out.push_back(static_cast<char>(bits & 0xFF));
  out.push_back(static_cast<char>((bits >> 8) & 0xFF));
  out.push_back(static_cast<char>((bits >> 16) & 0xFF));
  out.push_back(static_cast<char>((bits >> 24) & 0xFF));
}

float read_le_float(const unsigned char* bytes) {
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                             (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  float value;
  std::memcpy(&value, &bits, sizeof(value));
  return value;
}

ordered_json encoder_config_to_json(const EncoderConfig& cfg) {
  ordered_json j;
  j["vocab_size"] = cfg.vocab_size;
  j["model_dim"] = cfg.model_dim;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["ffn_dim"] = cfg.ffn_dim;
  j["max_len"] = cfg.max_len;
  j["dropout_rate"] = cfg.dropout_rate;
  return j;
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.model_dim = j.at("model_dim").get<std::size_t>();
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  return cfg;
}

ordered_json train_config_to_json(const TrainConfig& cfg) {
  ordered_json j;
  j["learning_rate"] = cfg.learning_rate;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["lambda"] = cfg.lambda;
  j["reg_kind"] = to_string(cfg.reg_kind);
  j["seed"] = cfg.seed;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["dropout"] = cfg.dropout;
  j["max_width"] = cfg.max_width;
  j["ablation_uniform_alpha"] = cfg.ablation_uniform_alpha;
  j["min_freq"] = cfg.min_freq;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.epsilon = j.at("epsilon").get<double>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.epochs = j.at("epochs").get<std::size_t>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.reg_kind = reg_kind_from_string(j.at("reg_kind").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.max_width = j.at("max_width").get<std::size_t>();
  cfg.ablation_uniform_alpha = j.at("ablation_uniform_alpha").get<bool>();
  cfg.min_freq = j.at("min_freq").get<std::size_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainConfig& config, const std::string& path) {
  Model& mutable_model = const_cast<Model&>(model);  // handles share storage; values untouched
  auto params = named_parameters(mutable_model);

  ordered_json header;
  header["format"] = kFormatName;
  header["version"] = kFormatVersion;
  header["encoder_config"] = encoder_config_to_json(model.config);
  header["train_config"] = train_config_to_json(config);
  header["max_span_width"] = model.max_span_width;
  header["uniform_alpha"] = model.uniform_alpha;
  header["labels"] = model.labels.labels();
  header["vocab"] = model.vocab.tokens();

  std::string payload;
  ordered_json directory = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    ordered_json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["offset"] = offset;
    entry["bytes"] = p.tensor.size() * 4;
    directory.push_back(entry);
    for (std::size_t i = 0; i < p.tensor.size(); ++i) append_le_float(payload, p.tensor.data()[i]);
    offset += p.tensor.size() * 4;
  }
  header["tensors"] = std::move(directory);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write checkpoint file: " + path);
  out << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw input_error("failed writing checkpoint file: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open checkpoint file: " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw format_error("checkpoint: missing header line");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error(std::string("checkpoint: malformed header: ") + e.what());
  }

  try {
    if (header.at("format").get<std::string>() != kFormatName) {
      throw format_error("checkpoint: unrecognized format");
    }
    const int version = header.at("version").get<int>();
    if (version != kFormatVersion) {
      throw format_error("checkpoint: version " + std::to_string(version) +
                         " unsupported (expected " + std::to_string(kFormatVersion) + ")");
    }

    CheckpointData data;
    data.train_config = train_config_from_json(header.at("train_config"));
    const EncoderConfig enc = encoder_config_from_json(header.at("encoder_config"));
    Vocab vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    LabelMap labels = LabelMap::from_labels(header.at("labels").get<std::vector<std::string>>());
    const std::size_t max_span_width = header.at("max_span_width").get<std::size_t>();
    const bool uniform_alpha = header.at("uniform_alpha").get<bool>();

    if (vocab.size() != enc.vocab_size) {
      throw format_error("checkpoint: vocabulary size " + std::to_string(vocab.size()) +
                         " disagrees with header " + std::to_string(enc.vocab_size));
    }

    data.model = init_model(enc, vocab, labels, 0, max_span_width, uniform_alpha);
    auto params = named_parameters(data.model);

    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto& directory = header.at("tensors");
    if (!directory.is_array() || directory.size() != params.size()) {
      throw format_error("checkpoint: tensor directory has " +
                         std::to_string(directory.size()) + " entries, expected " +
                         std::to_string(params.size()));
    }

    std::size_t total_bytes = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = directory[i];
      const std::string name = entry.at("name").get<std::string>();
      if (name != params[i].name) {
        throw format_error("checkpoint: tensor " + std::to_string(i) + " is \"" + name +
                           "\", expected \"" + params[i].name + "\"");
      }
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape != params[i].tensor.shape()) {
        throw format_error("checkpoint: tensor \"" + name + "\" has shape " +
                           shape_string(shape) + ", expected " +
                           shape_string(params[i].tensor.shape()));
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t bytes = entry.at("bytes").get<std::size_t>();
      if (bytes != params[i].tensor.size() * 4 || offset != total_bytes) {
        throw format_error("checkpoint: corrupt directory entry for \"" + name + "\"");
      }
      total_bytes += bytes;
    }
    if (payload.size() != total_bytes) {
      throw format_error("checkpoint: payload is " + std::to_string(payload.size()) +
                         " bytes, directory expects " + std::to_string(total_bytes));
    }

    const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
    std::size_t cursor = 0;
    for (auto& p : params) {
      for (std::size_t i = 0; i < p.tensor.size(); ++i) {
        p.tensor.data()[i] = read_le_float(raw + cursor);
        cursor += 4;
      }
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("checkpoint: corrupt header section: ") + e.what());
  }
}

}  // namespace spanexplain
