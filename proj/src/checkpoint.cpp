#include "leapattn/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <stdexcept>

namespace leapattn {

namespace {

constexpr int kFormatVersion = 1;

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  // Little-endian hosts only (static_assert below); written as raw IEEE f64.
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

}  // namespace

nlohmann::json config_to_json(const TransformerConfig& cfg) {
  return nlohmann::json{{"d_model", cfg.d_model},
                        {"heads", cfg.heads},
                        {"enc_layers", cfg.enc_layers},
                        {"dec_layers", cfg.dec_layers},
                        {"ffn_dim", cfg.ffn_dim},
                        {"vocab_size", cfg.vocab_size},
                        {"max_positions", cfg.max_positions},
                        {"n_classes", cfg.n_classes},
                        {"enc_self", scheme_to_string(cfg.enc_self)},
                        {"dec_self", scheme_to_string(cfg.dec_self)},
                        {"cross", scheme_to_string(cfg.cross)},
                        {"leap_f", cfg.leap_f},
                        {"dropout", cfg.dropout},
                        {"enc_causal", cfg.enc_causal},
                        {"rope_theta", cfg.rope_theta}};
}

TransformerConfig config_from_json(const nlohmann::json& j, bool strict) {
  static const std::set<std::string> known = {
      "d_model",    "heads",   "enc_layers", "dec_layers", "ffn_dim",
      "vocab_size", "max_positions", "n_classes", "enc_self", "dec_self",
      "cross",      "leap_f",  "dropout",    "enc_causal", "rope_theta"};
  if (strict)
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key()))
        throw std::invalid_argument("config: unknown key: " + it.key());
  TransformerConfig cfg;
  auto get_int = [&](const char* key, int& field) {
    if (j.contains(key)) field = j.at(key).get<int>();
  };
  get_int("d_model", cfg.d_model);
  get_int("heads", cfg.heads);
  get_int("enc_layers", cfg.enc_layers);
  get_int("dec_layers", cfg.dec_layers);
  get_int("ffn_dim", cfg.ffn_dim);
  get_int("vocab_size", cfg.vocab_size);
  get_int("max_positions", cfg.max_positions);
  get_int("n_classes", cfg.n_classes);
  get_int("leap_f", cfg.leap_f);
  if (j.contains("enc_self")) cfg.enc_self = scheme_from_string(j.at("enc_self").get<std::string>());
  if (j.contains("dec_self")) cfg.dec_self = scheme_from_string(j.at("dec_self").get<std::string>());
  if (j.contains("cross")) cfg.cross = scheme_from_string(j.at("cross").get<std::string>());
  if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
  if (j.contains("enc_causal")) cfg.enc_causal = j.at("enc_causal").get<bool>();
  if (j.contains("rope_theta")) cfg.rope_theta = j.at("rope_theta").get<double>();
  return cfg;
}

void save_checkpoint(const Model& m, const std::string& path_base) {
  const auto named = m.named_parameters();

  std::ofstream bin(path_base + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot write " + path_base + ".bin");
  nlohmann::json registry = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : named) {
    write_doubles(bin, t.values());
    registry.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset},
                        {"count", t.size()}});
    offset += t.size();
  }
  bin.close();
  if (!bin) throw std::runtime_error("save_checkpoint: write failed for " + path_base + ".bin");

  nlohmann::json manifest{{"format_version", kFormatVersion},
                          {"config", config_to_json(m.cfg)},
                          {"tensors", registry}};
  std::ofstream js(path_base + ".json", std::ios::trunc);
  if (!js) throw std::runtime_error("save_checkpoint: cannot write " + path_base + ".json");
  js << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::string& path_base) {
  std::ifstream js(path_base + ".json");
  if (!js) throw std::runtime_error("load_checkpoint: missing manifest " + path_base + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);
  if (manifest.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version");

  std::mt19937_64 rng(0);  // weights are overwritten below
  Model m = build_model(config_from_json(manifest.at("config")), rng);

  std::ifstream bin(path_base + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: missing weights " + path_base + ".bin");

  auto named = m.named_parameters();
  const nlohmann::json& registry = manifest.at("tensors");
  if (registry.size() != named.size())
    throw std::runtime_error("load_checkpoint: registry size mismatch");
  for (size_t i = 0; i < named.size(); ++i) {
    const nlohmann::json& entry = registry[i];
    auto& [name, t] = named[i];
    if (entry.at("name").get<std::string>() != name)
      throw std::runtime_error("load_checkpoint: tensor name mismatch at index " +
                               std::to_string(i));
    if (entry.at("shape").get<Shape>() != t.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    std::vector<double>& w = t.leaf_values();
    bin.read(reinterpret_cast<char*>(w.data()),
             static_cast<std::streamsize>(w.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("load_checkpoint: truncated weights for " + name);
  }
  return m;
}

}  // namespace leapattn
