#include "pivotmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "pivotmt/errors.hpp"

namespace pivotmt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'I', 'V', 'O', 'T', 'M', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > in.size()) throw ParseError("checkpoint truncated in " + what);
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::vector<std::string> user_tokens(const Vocab& v) {
  return {v.tokens().begin() + kNumReserved, v.tokens().end()};
}

}  // namespace

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["num_encoders"] = c.num_encoders;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["hidden"] = c.hidden;
  j["ff"] = c.ff;
  j["src_vocab"] = c.src_vocab;
  j["tgt_vocab"] = c.tgt_vocab;
  j["dropout"] = c.dropout;
  j["max_len"] = c.max_len;
  j["causal_encoder"] = c.causal_encoder;
  j["share_encoder"] = c.share_encoder;
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("model config must be a JSON object");
  static const std::set<std::string> known{"num_encoders", "layers",         "heads",         "hidden",
                                           "ff",           "src_vocab",      "tgt_vocab",     "dropout",
                                           "max_len",      "causal_encoder", "share_encoder", "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ParseError("unknown model config key '" + key + "'");
  ModelConfig c;
  try {
    c.num_encoders = j.value("num_encoders", c.num_encoders);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.hidden = j.value("hidden", c.hidden);
    c.ff = j.value("ff", c.ff);
    c.src_vocab = j.value("src_vocab", c.src_vocab);
    c.tgt_vocab = j.value("tgt_vocab", c.tgt_vocab);
    c.dropout = j.value("dropout", c.dropout);
    c.max_len = j.value("max_len", c.max_len);
    c.causal_encoder = j.value("causal_encoder", c.causal_encoder);
    c.share_encoder = j.value("share_encoder", c.share_encoder);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocab& src_vocab,
                     const Vocab& tgt_vocab, const nlohmann::ordered_json& metadata) {
  if (src_vocab.size() != model.config().src_vocab || tgt_vocab.size() != model.config().tgt_vocab) {
    throw ContractError("checkpoint vocabularies do not match the model config");
  }
  nlohmann::ordered_json header;
  header["config"] = model_config_to_json(model.config());
  header["src_vocab"] = user_tokens(src_vocab);
  header["tgt_vocab"] = user_tokens(tgt_vocab);
  header["metadata"] = metadata;
  auto& params = header["params"] = nlohmann::ordered_json::array();
  for (const auto& p : model.parameters()) params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& p : model.parameters()) {
    const auto v = p.tensor.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";

  if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError(where + "not a pivotmt checkpoint");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(in, pos, "version");
  if (version != kVersion) throw ParseError(where + "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(in, pos, "header length");
  if (pos + header_len > in.size()) throw ParseError(where + "checkpoint truncated in header");

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(in.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + "bad header: " + e.what());
  }
  pos += header_len;

  try {
    auto config = model_config_from_json(nlohmann::json::parse(header.at("config").dump()));
    ModelBundle b{Model(config), Vocab(header.at("src_vocab").get<std::vector<std::string>>()),
                  Vocab(header.at("tgt_vocab").get<std::vector<std::string>>()), header.value("metadata", nlohmann::ordered_json::object())};
    const auto& params = header.at("params");
    if (params.size() != b.model.parameters().size()) {
      throw ParseError(where + "parameter count " + std::to_string(params.size()) + " does not match the config");
    }
    std::vector<std::vector<double>> values;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = b.model.parameters()[i];
      if (params[i].at("name").get<std::string>() != p.name ||
          params[i].at("shape").get<Shape>() != p.tensor.shape()) {
        throw ParseError(where + "parameter " + std::to_string(i) + " does not match '" + p.name + "'");
      }
      const std::size_t bytes = p.tensor.numel() * sizeof(double);
      if (pos + bytes > in.size()) throw ParseError(where + "checkpoint truncated in parameter " + p.name);
      std::vector<double> v(p.tensor.numel());
      std::memcpy(v.data(), in.data() + pos, bytes);
      pos += bytes;
      values.push_back(std::move(v));
    }
    if (pos != in.size()) throw ParseError(where + "trailing bytes after parameters");
    b.model.load_snapshot(values);
    if (b.src_vocab.size() != config.src_vocab || b.tgt_vocab.size() != config.tgt_vocab) {
      throw ParseError(where + "vocabulary sizes do not match the config");
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + "bad header: " + e.what());
  }
}

}  // namespace pivotmt
