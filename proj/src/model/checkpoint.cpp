#include <bit>
#include <fstream>
#include <map>

#include "pulse/errors.hpp"
#include "pulse/model.hpp"

namespace pulse::model {

namespace fs = std::filesystem;

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
  return r;
}

void write_blob(const fs::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  for (double v : t.data()) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
    os.write(reinterpret_cast<const char*>(&bits), 8);
  }
  if (!os) throw Error("failed writing " + path.string());
}

Tensor read_blob(const fs::path& path, const ad::Shape& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ProtocolError("missing tensor blob " + path.string());
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) {
    std::uint64_t bits = 0;
    is.read(reinterpret_cast<char*>(&bits), 8);
    x = std::bit_cast<double>(to_le(bits));
  }
  if (!is) throw ProtocolError("truncated tensor blob " + path.string());
  if (is.peek() != std::char_traits<char>::eof()) throw ProtocolError("oversized tensor blob " + path.string());
  return Tensor::from(shape, std::move(v));
}

}  // namespace

void save_tensors(const fs::path& dir, const nlohmann::json& manifest, const std::vector<NamedTensor>& tensors) {
  fs::create_directories(dir);
  nlohmann::json m = manifest;
  m["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    const std::string file = t.name + ".f64";
    write_blob(dir / file, t.tensor);
    m["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"file", file}});
  }
  // The manifest goes last so a partial write never looks complete.
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    os << m.dump(2) << '\n';
  }
  fs::rename(tmp, dir / "manifest.json");
}

std::pair<nlohmann::json, std::vector<NamedTensor>> load_tensors(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ProtocolError("no checkpoint manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("unreadable checkpoint manifest: " + std::string(e.what()));
  }
  std::vector<NamedTensor> out;
  for (const auto& t : m.at("tensors"))
    out.push_back({t.at("name").get<std::string>(),
                   read_blob(dir / t.at("file").get<std::string>(), t.at("shape").get<ad::Shape>())});
  return {m, out};
}

void assign_tensors(PulseModel& model, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  auto copy_into = [&](const NamedTensor& dst) {
    auto it = by_name.find(dst.name);
    if (it == by_name.end()) throw ProtocolError("checkpoint lacks tensor '" + dst.name + "'");
    if (it->second->shape() != dst.tensor.shape())
      throw ProtocolError("shape mismatch for '" + dst.name + "': " + ad::shape_str(it->second->shape()) + " vs " +
                          ad::shape_str(dst.tensor.shape()));
    Tensor target = dst.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(), target.mutable_data().begin());
  };
  for (const auto& p : model.parameters()) copy_into(p);
  for (const auto& b : model.buffers()) copy_into(b);
}

void save_model(const PulseModel& model, const fs::path& dir, nlohmann::json extra) {
  if (extra.is_null()) extra = nlohmann::json::object();
  extra["format"] = "pulse-model";
  extra["model_config"] = model.config().to_json();
  auto tensors = model.parameters();
  for (const auto& b : model.buffers()) tensors.push_back(b);
  save_tensors(dir, extra, tensors);
}

PulseModel load_model(const fs::path& dir, nlohmann::json* manifest) {
  auto [m, tensors] = load_tensors(dir);
  if (m.value("format", "") != "pulse-model") throw ProtocolError(dir.string() + " is not a model checkpoint");
  PulseModel model(PulseConfig::from_json(m.at("model_config")), 0);
  assign_tensors(model, tensors);
  if (manifest) *manifest = m;
  return model;
}

}  // namespace pulse::model
