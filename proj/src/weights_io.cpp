#include "flashtrace/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace flashtrace {

namespace {

constexpr const char* kLayerTensors[] = {"attn_norm_g", "wq",        "wk",   "wv",
                                         "wo",          "attn_b",    "mlp_norm_g",
                                         "w_gate",      "w_up",      "w_down"};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw Error(Errc::truncated, std::string("file ends inside ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

NamedTensor from_matrix(std::string name, const MatrixF& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.assign(m.data().begin(), m.data().end());
  return t;
}

NamedTensor from_vector(std::string name, const std::vector<float>& v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.values = v;
  return t;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::string> required_tensor_names(const ModelConfig& config) {
  std::vector<std::string> names{"tok_emb"};
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (const char* t : kLayerTensors) names.push_back("l" + std::to_string(l) + "." + t);
  }
  names.emplace_back("final_norm_g");
  names.emplace_back("unemb");
  return names;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"d_model", c.d_model},         {"d_head", c.d_head},
          {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}, {"norm_epsilon", c.norm_epsilon},
          {"rope_base", c.rope_base}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::bad_config, "model config must be a JSON object");
  auto field = [&j](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) throw Error(Errc::bad_config, std::string("missing field '") + name + "'");
    return j.at(name);
  };
  ModelConfig c;
  try {
    c.n_layers = field("n_layers").get<std::size_t>();
    c.n_heads = field("n_heads").get<std::size_t>();
    c.d_model = field("d_model").get<std::size_t>();
    c.d_head = field("d_head").get<std::size_t>();
    c.d_ff = field("d_ff").get<std::size_t>();
    c.vocab_size = field("vocab_size").get<std::size_t>();
    c.max_seq_len = field("max_seq_len").get<std::size_t>();
    c.norm_epsilon = field("norm_epsilon").get<double>();
    c.rope_base = field("rope_base").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, e.what());
  }
  c.validate();
  return c;
}

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::size_t header = 12;
  for (const auto& t : tensors) header += 4 + t.name.size() + 2 + 4 * t.dims.size() + 8;

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kWeightsMagic, kWeightsMagic + 4);
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = header;
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(0);
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    put_u64(out, offset);
    offset += 4 * t.values.size();
  }
  for (const auto& t : tensors) {
    for (float f : t.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw Error(Errc::bad_magic, "weights.bin does not start with FTWT");
  }
  Reader r(bytes);
  r.str(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kWeightsVersion) {
    throw Error(Errc::unsupported_version, "weights.bin version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor> tensors;
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const std::uint32_t len = r.u32("tensor table");
    t.name = r.str(len, "tensor table");
    const std::uint8_t dtype = r.u8("tensor table");
    if (dtype != 0) {
      throw Error(Errc::invalid_argument, "tensor " + t.name + " has unsupported dtype " +
                                              std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8("tensor table");
    for (std::uint8_t i = 0; i < rank; ++i) t.dims.push_back(r.u32("tensor table"));
    offsets.push_back(r.u64("tensor table"));
    tensors.push_back(std::move(t));
  }
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    std::uint64_t elems = 1;
    for (auto d : tensors[k].dims) elems *= d;
    const std::uint64_t end = offsets[k] + 4 * elems;
    if (end > bytes.size() || end < offsets[k]) {
      throw Error(Errc::truncated, "tensor " + tensors[k].name + " extends past end of file");
    }
    tensors[k].values.resize(elems);
    const std::uint8_t* p = bytes.data() + offsets[k];
    for (std::uint64_t e = 0; e < elems; ++e, p += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) |
                                 (static_cast<std::uint32_t>(p[3]) << 24);
      tensors[k].values[e] = std::bit_cast<float>(bits);
    }
  }
  return tensors;
}

void write_weights(const ModelWeights& w, const ModelConfig& config, const std::filesystem::path& dir) {
  w.check(config);
  std::vector<NamedTensor> tensors;
  tensors.push_back(from_matrix("tok_emb", w.tok_emb));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    const LayerWeights& lw = w.layers[l];
    tensors.push_back(from_vector(p + "attn_norm_g", lw.attn_norm_g));
    tensors.push_back(from_matrix(p + "wq", lw.wq));
    tensors.push_back(from_matrix(p + "wk", lw.wk));
    tensors.push_back(from_matrix(p + "wv", lw.wv));
    tensors.push_back(from_matrix(p + "wo", lw.wo));
    tensors.push_back(from_vector(p + "attn_b", lw.attn_b));
    tensors.push_back(from_vector(p + "mlp_norm_g", lw.mlp_norm_g));
    tensors.push_back(from_matrix(p + "w_gate", lw.w_gate));
    tensors.push_back(from_matrix(p + "w_up", lw.w_up));
    tensors.push_back(from_matrix(p + "w_down", lw.w_down));
  }
  tensors.push_back(from_vector("final_norm_g", w.final_norm_g));
  tensors.push_back(from_matrix("unemb", w.unemb));

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  {
    std::ofstream cfg(dir / "config.json", std::ios::binary);
    if (!cfg) throw Error(Errc::io_failure, "cannot write " + (dir / "config.json").string());
    cfg << config_to_json(config).dump(2) << '\n';
  }
  const auto bytes = encode_tensors(tensors);
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw Error(Errc::io_failure, "cannot write " + (dir / "weights.bin").string());
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!bin) throw Error(Errc::io_failure, "short write to weights.bin");
}

LoadedModel read_weights(const std::filesystem::path& dir) {
  LoadedModel out;
  {
    const auto raw = read_file(dir / "config.json");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::bad_config, std::string("config.json: ") + e.what());
    }
    out.config = config_from_json(j);
  }
  auto tensors = decode_tensors(read_file(dir / "weights.bin"));
  std::map<std::string, NamedTensor*> by_name;
  for (auto& t : tensors) by_name[t.name] = &t;

  const ModelConfig& c = out.config;
  auto take = [&](const std::string& name, std::vector<std::uint32_t> dims) -> std::vector<float> {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(Errc::shape_mismatch, "missing tensor " + name);
    if (it->second->dims != dims) {
      throw Error(Errc::shape_mismatch, "tensor " + name + " shape disagrees with config.json");
    }
    return std::move(it->second->values);
  };
  auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  auto mat = [&](const std::string& name, std::size_t r, std::size_t cols) {
    return MatrixF(r, cols, take(name, {u(r), u(cols)}));
  };
  const std::size_t d = c.d_model;
  ModelWeights& w = out.weights;
  w.tok_emb = mat("tok_emb", c.vocab_size, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    LayerWeights lw;
    lw.attn_norm_g = take(p + "attn_norm_g", {u(d)});
    lw.wq = mat(p + "wq", d, d);
    lw.wk = mat(p + "wk", d, d);
    lw.wv = mat(p + "wv", d, d);
    lw.wo = mat(p + "wo", d, d);
    lw.attn_b = take(p + "attn_b", {u(d)});
    lw.mlp_norm_g = take(p + "mlp_norm_g", {u(d)});
    lw.w_gate = mat(p + "w_gate", d, c.d_ff);
    lw.w_up = mat(p + "w_up", d, c.d_ff);
    lw.w_down = mat(p + "w_down", c.d_ff, d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm_g = take("final_norm_g", {u(d)});
  w.unemb = mat("unemb", d, c.vocab_size);
  w.check(c);
  return out;
}

}  // namespace flashtrace
