#pragma once

// Binary checkpoint: magic, a little-endian u64 header length, a JSON header
// (meta + parameter table with element offsets), then the payload as
// little-endian float64 regardless of the in-memory precision.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "redlab/model.hpp"
#include "redlab/peft.hpp"

namespace redlab {

inline constexpr char kCheckpointMagic[8] = {'R', 'L', 'C', 'K', 'P', 'T', '1', '\n'};

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta;  // model config and anything the writer wants to record
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline nlohmann::json config_to_json(const TransformerConfig& c) {
  return {{"n_layers", c.n_layers},       {"d_model", c.d_model},
          {"n_heads", c.n_heads},         {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
          {"n_classes", c.n_classes},     {"ln_eps", c.ln_eps},
          {"pre_residual", c.pre_residual}};
}

inline TransformerConfig config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.value("d_ff", 0);
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.ln_eps = j.value("ln_eps", 1e-5);
  c.pre_residual = j.value("pre_residual", false);
  c.validate();
  return c;
}

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  os.write(b, 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64_le(std::ostream& os, double d) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(d));
  std::memcpy(&bits, &d, 8);
  write_u64_le(os, bits);
}

inline double read_f64_le(std::istream& is) {
  const std::uint64_t bits = read_u64_le(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["dtype"] = "f64";
  std::uint64_t offset = 0;  // in elements
  nlohmann::json table = nlohmann::json::array();
  for (const auto& e : ckpt.entries) {
    table.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.values.size();
  }
  header["params"] = std::move(table);
  const std::string hs = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u64_le(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : ckpt.entries)
    for (double v : e.values) detail::write_f64_le(os, v);
  if (!os) throw ConfigError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ConfigError("bad checkpoint magic in " + path);
  const std::uint64_t hlen = detail::read_u64_le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw ConfigError("truncated checkpoint header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& row : header.at("params")) {
    CheckpointEntry e;
    e.name = row.at("name").get<std::string>();
    e.shape = row.at("shape").get<std::vector<int>>();
    e.values.resize(static_cast<size_t>(numel_of(e.shape)));
    for (double& v : e.values) v = detail::read_f64_le(is);
    if (!is) throw ConfigError("truncated checkpoint payload in " + path);
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

template <class T>
Checkpoint checkpoint_of(const TransformerModel<T>& model) {
  Checkpoint ckpt;
  ckpt.meta["config"] = config_to_json(model.config());
  for (const auto& p : model.params()) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.values.assign(p.tensor.data().begin(), p.tensor.data().end());
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

// Strict: every model parameter must be present with a matching shape.
template <class T>
void load_into(TransformerModel<T>& model, const Checkpoint& ckpt) {
  if (ckpt.meta.contains("config")) {
    const TransformerConfig stored = config_from_json(ckpt.meta.at("config"));
    const nlohmann::json want = config_to_json(model.config());
    if (config_to_json(stored) != want)
      throw ConfigError("checkpoint config does not match model config");
  }
  for (auto& p : model.params()) {
    const CheckpointEntry* e = ckpt.find(p.name);
    if (!e) throw ConfigError("checkpoint missing parameter " + p.name);
    if (e->shape != p.tensor.shape())
      throw ConfigError("checkpoint shape mismatch for " + p.name);
    auto& dst = p.tensor.data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
  }
}

template <class T>
TransformerModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config"))
    throw ConfigError("checkpoint has no model config");
  TransformerModel<T> model =
      TransformerModel<T>::init(config_from_json(ckpt.meta.at("config")), 0);
  load_into(model, ckpt);
  return model;
}

// PEFT registry parameters as their own checkpoint (adapter deltas only).
template <class T>
Checkpoint checkpoint_of_registry(const PeftAttachment<T>& att) {
  Checkpoint ckpt;
  ckpt.meta["peft_method"] = to_string(att.spec.method);
  for (const auto& r : att.registry) {
    CheckpointEntry e;
    e.name = r.name;
    e.shape = r.tensor.shape();
    e.values.assign(r.tensor.data().begin(), r.tensor.data().end());
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

template <class T>
void load_registry(PeftAttachment<T>& att, const Checkpoint& ckpt) {
  for (auto& r : att.registry) {
    const CheckpointEntry* e = ckpt.find(r.name);
    if (!e) throw ConfigError("checkpoint missing parameter " + r.name);
    if (e->shape != r.tensor.shape())
      throw ConfigError("checkpoint shape mismatch for " + r.name);
    auto& dst = r.tensor.data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
  }
}

}  // namespace redlab
