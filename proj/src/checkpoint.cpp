#include "stcvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "stcvae/errors.hpp"

namespace stcvae {
namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  auto p = stem;
  p += suffix;
  return p;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"arch", to_string(spec.arch)},
          {"input", {spec.input.height, spec.input.width, spec.input.channels}},
          {"latent_dim", spec.latent_dim},
          {"neuron_num", spec.neuron_num},
          {"layers", spec.layers}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  try {
    s.arch = arch_from_string(j.at("arch").get<std::string>());
    const auto& in = j.at("input");
    s.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    s.neuron_num = j.at("neuron_num").get<std::size_t>();
    s.layers = j.at("layers").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint model spec: ") + e.what());
  }
  return s;
}

void write_checkpoint(const std::filesystem::path& stem, const VaeModel<float>& model,
                      const nlohmann::json& metadata) {
  const auto& store = model.params();
  nlohmann::json manifest;
  manifest["format"] = "stcvae-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float32-le";
  manifest["payload"] = with_suffix(stem, ".bin").filename().string();
  manifest["model"] = to_json(model.spec());
  manifest["step"] = store.step;
  manifest["metadata"] = metadata;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : store.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"size", t.size}});
  }

  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream js(with_suffix(stem, ".json"));
  js << manifest.dump(2) << '\n';
  if (!js) throw FormatError("cannot write " + with_suffix(stem, ".json").string());

  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  for (float v : store.values) {
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
    bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!bin) throw FormatError("cannot write " + with_suffix(stem, ".bin").string());
}

Checkpoint read_checkpoint(const std::filesystem::path& stem) {
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw FormatError("cannot open checkpoint manifest " + with_suffix(stem, ".json").string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("format", "") != "stcvae-checkpoint") throw FormatError("checkpoint field 'format' mismatch");
  if (manifest.value("version", 0) != 1) throw FormatError("checkpoint field 'version' unsupported");
  if (manifest.value("dtype", "") != "float32-le") throw FormatError("checkpoint field 'dtype' unsupported");

  Checkpoint ck{VaeModel<float>(model_spec_from_json(manifest.at("model")), 0), manifest.value("metadata", nlohmann::json::object())};
  auto& store = ck.model.params();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != store.tensors.size()) throw FormatError("checkpoint field 'tensors' count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = store.tensors[i];
    if (tensors[i].at("name").get<std::string>() != t.name ||
        tensors[i].at("offset").get<std::size_t>() != t.offset ||
        tensors[i].at("size").get<std::size_t>() != t.size ||
        tensors[i].at("shape").get<std::vector<std::size_t>>() != t.shape) {
      throw FormatError("checkpoint tensor '" + tensors[i].at("name").get<std::string>() + "' does not match the model");
    }
  }
  store.step = manifest.value("step", std::uint64_t{0});

  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw FormatError("cannot open checkpoint payload " + with_suffix(stem, ".bin").string());
  for (auto& v : store.values) {
    std::uint32_t bits = 0;
    if (!bin.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw FormatError("checkpoint payload short");
    v = std::bit_cast<float>(to_little(bits));
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint payload has trailing bytes");
  return ck;
}

}  // namespace stcvae
