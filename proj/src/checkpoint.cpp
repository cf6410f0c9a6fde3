#include "cpnorm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cpnorm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using json = nlohmann::ordered_json;
constexpr char magic[8] = {'C', 'P', 'N', 'O', 'R', 'M', 'C', 'K'};

struct Block {
  std::string name;
  Shape shape;
  const double* data;
};

std::vector<Block> layer_blocks(const Layer& layer) {
  std::vector<Block> blocks;
  if (const auto* w = std::get_if<Tensor>(&layer.weight)) {
    blocks.push_back({"weight", w->shape(), w->ptr()});
  } else if (const auto* wn = std::get_if<WeightNormParam>(&layer.weight)) {
    blocks.push_back({"v", wn->v.shape(), wn->v.ptr()});
    blocks.push_back({"g", {1}, &wn->g});
  } else {
    const auto& p = std::get<CpNormParam>(layer.weight);
    blocks.push_back({"sigma", {1}, &p.sigma});
    blocks.push_back({"lambda", {p.cp.rank()}, p.cp.lambdas.data()});
    for (std::size_t k = 0; k < p.cp.factors.size(); ++k) {
      blocks.push_back({"factor" + std::to_string(k), {p.cp.shape[k], p.cp.rank()}, p.cp.factors[k].data()});
    }
  }
  if (layer.spec.bias) blocks.push_back({"bias", {layer.spec.out}, layer.bias.data()});
  return blocks;
}

json spec_json(const LayerSpec& s) {
  return {{"name", s.name},       {"kind", to_string(s.kind)}, {"in", s.in},
          {"out", s.out},         {"kernel", s.kernel},        {"stride", s.stride},
          {"padding", s.padding}, {"pool", s.pool},            {"keep_prob", s.keep_prob},
          {"normalization", to_string(s.normalization)},       {"rank", s.rank},
          {"bias", s.bias}};
}

LayerKind parse_kind(const std::string& k) {
  for (auto kind : {LayerKind::conv2d, LayerKind::linear, LayerKind::maxpool, LayerKind::relu,
                    LayerKind::dropout, LayerKind::flatten}) {
    if (to_string(kind) == k) return kind;
  }
  throw std::runtime_error("unknown layer kind '" + k + "' in checkpoint");
}

LayerSpec spec_from_json(const json& j) {
  LayerSpec s;
  s.name = j.at("name").get<std::string>();
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.in = j.at("in").get<std::size_t>();
  s.out = j.at("out").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.stride = j.at("stride").get<std::size_t>();
  s.padding = j.at("padding").get<std::size_t>();
  s.pool = j.at("pool").get<std::size_t>();
  s.keep_prob = j.at("keep_prob").get<double>();
  s.normalization = parse_normalization(j.at("normalization").get<std::string>());
  s.rank = j.at("rank").get<std::size_t>();
  s.bias = j.at("bias").get<bool>();
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const std::string& metadata_json) {
  json header;
  header["format_version"] = checkpoint_format_version;
  header["dtype"] = "f64";
  header["input_shape"] = model.input_shape();
  header["layers"] = json::array();
  std::vector<Block> all;
  std::size_t offset = 0;
  for (const auto& layer : model.layers()) {
    json l = spec_json(layer.spec);
    l["tensors"] = json::array();
    if (layer.spec.has_weight()) {
      for (auto& b : layer_blocks(layer)) {
        const std::size_t count = shape_size(b.shape);
        l["tensors"].push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}, {"count", count}});
        offset += count * sizeof(double);
        all.push_back(std::move(b));
      }
    }
    header["layers"].push_back(std::move(l));
  }
  header["payload_bytes"] = offset;
  header["metadata"] = json::parse(metadata_json);
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(magic, sizeof magic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : all) {
      out.write(reinterpret_cast<const char*>(b.data), static_cast<std::streamsize>(shape_size(b.shape) * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, sizeof magic) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (bytes.size() < 16 + len) throw std::runtime_error(path + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": invalid header: " + e.what());
  }
  if (header.at("format_version").get<int>() != checkpoint_format_version) {
    throw std::runtime_error(path + ": unsupported format version " + header.at("format_version").dump());
  }
  const std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != "f64" && dtype != "f32") throw std::runtime_error(path + ": unsupported dtype " + dtype);
  const std::size_t elem = dtype == "f64" ? 8 : 4;
  const char* payload = bytes.data() + 16 + len;
  const std::size_t payload_bytes = bytes.size() - 16 - len;

  std::vector<LayerSpec> specs;
  for (const auto& l : header.at("layers")) specs.push_back(spec_from_json(l));
  Model model(specs, header.at("input_shape").get<Shape>());

  // Offsets must tile the payload exactly, in order.
  std::size_t expected = 0;
  std::size_t li = 0;
  for (const auto& l : header.at("layers")) {
    Layer& layer = model.layers()[li++];
    if (!layer.spec.has_weight()) continue;
    for (auto& b : layer_blocks(layer)) {
      const json* entry = nullptr;
      for (const auto& t : l.at("tensors")) {
        if (t.at("name") == b.name) entry = &t;
      }
      if (!entry) throw std::runtime_error(path + ": layer " + layer.spec.name + " lacks tensor " + b.name);
      const std::size_t count = entry->at("count").get<std::size_t>();
      const std::size_t offset = entry->at("offset").get<std::size_t>();
      if (entry->at("shape").get<Shape>() != b.shape || count != shape_size(b.shape)) {
        throw std::runtime_error(path + ": tensor " + layer.spec.name + "." + b.name + " has shape " +
                                 entry->at("shape").dump() + ", expected " + shape_string(b.shape));
      }
      if (offset != expected || offset + count * elem > payload_bytes) {
        throw std::runtime_error(path + ": tensor " + layer.spec.name + "." + b.name + " has offset " +
                                 std::to_string(offset) + ", expected " + std::to_string(expected));
      }
      auto* dst = const_cast<double*>(b.data);
      if (elem == 8) {
        std::memcpy(dst, payload + offset, count * 8);
      } else {
        for (std::size_t i = 0; i < count; ++i) {
          float f;
          std::memcpy(&f, payload + offset + 4 * i, 4);
          dst[i] = f;
        }
      }
      expected = offset + count * elem;
    }
  }
  if (expected != payload_bytes) {
    throw std::runtime_error(path + ": payload has " + std::to_string(payload_bytes) + " bytes, header describes " +
                             std::to_string(expected));
  }
  model.zero_grad();
  return {std::move(model), header.at("metadata").dump()};
}

}  // namespace cpnorm
