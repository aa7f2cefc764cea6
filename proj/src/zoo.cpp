#include "scalegmn/zoo.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace scalegmn {

using json = nlohmann::json;

void write_f32(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (double v : values) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16),
                              static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<double> read_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<double> values;
  unsigned char bytes[4];
  while (in.read(reinterpret_cast<char*>(bytes), 4)) {
    const std::uint32_t bits = std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) |
                               (std::uint32_t{bytes[2]} << 16) | (std::uint32_t{bytes[3]} << 24);
    values.push_back(static_cast<double>(std::bit_cast<float>(bits)));
  }
  if (in.gcount() != 0) throw Error(path.string() + ": size is not a multiple of 4 bytes");
  return values;
}

namespace {

void put(std::vector<double>& out, const Tensor& t) { out.insert(out.end(), t.data(), t.data() + t.size()); }

void take(const std::vector<double>& flat, std::size_t& k, Tensor& t) {
  if (k + static_cast<std::size_t>(t.size()) > flat.size()) throw ShapeError("weight file too short");
  std::memcpy(t.data(), flat.data() + k, sizeof(double) * static_cast<std::size_t>(t.size()));
  k += static_cast<std::size_t>(t.size());
}

}  // namespace

std::vector<double> ffnn_to_flat(const FfnnParams& net) {
  std::vector<double> out;
  for (const auto& l : net.layers) {
    put(out, l.weight);
    put(out, l.bias);
  }
  return out;
}

FfnnParams ffnn_from_flat(const FfnnArch& arch, const std::vector<double>& flat) {
  FfnnParams net = zeros_like(arch);
  std::size_t k = 0;
  for (auto& l : net.layers) {
    take(flat, k, l.weight);
    take(flat, k, l.bias);
  }
  if (k != flat.size()) throw ShapeError("weight file has trailing values");
  return net;
}

std::vector<double> cnn_to_flat(const CnnParams& net) {
  std::vector<double> out;
  for (const auto& c : net.convs) {
    put(out, c.kernel);
    put(out, c.bias);
  }
  for (const auto& h : net.head) {
    put(out, h.weight);
    put(out, h.bias);
  }
  return out;
}

CnnParams cnn_from_flat(const CnnParams& like, const std::vector<double>& flat) {
  CnnParams net = like;
  std::size_t k = 0;
  for (auto& c : net.convs) {
    take(flat, k, c.kernel);
    take(flat, k, c.bias);
  }
  for (auto& h : net.head) {
    take(flat, k, h.weight);
    take(flat, k, h.bias);
  }
  if (k != flat.size()) throw ShapeError("weight file has trailing values");
  return net;
}

FfnnParams round_to_f32(const FfnnParams& net) {
  auto flat = ffnn_to_flat(net);
  for (double& v : flat) v = static_cast<double>(static_cast<float>(v));
  return ffnn_from_flat(arch_of(net), flat);
}

CnnParams round_to_f32(const CnnParams& net) {
  auto flat = cnn_to_flat(net);
  for (double& v : flat) v = static_cast<double>(static_cast<float>(v));
  return cnn_from_flat(net, flat);
}

void save_zoo(const Zoo& zoo, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "weights");
  json manifest;
  manifest["task"] = zoo.task;
  manifest["entries"] = json::array();
  for (const auto& item : zoo.items) {
    json e;
    e["id"] = item.id;
    e["label"] = item.label;
    e["omega0"] = item.omega0;
    if (item.signal_seed) e["signal_seed"] = *item.signal_seed;
    const std::string rel = "weights/" + item.id + ".f32";
    e["weights_path"] = rel;
    std::vector<std::string> acts;
    if (item.cnn) {
      const CnnParams& c = *item.cnn;
      e["kind"] = "cnn";
      e["layer_dims"] = c.widths();
      json kernels = json::array();
      for (const auto& conv : c.convs) {
        kernels.push_back({conv.kh, conv.kw});
        acts.emplace_back(conv.activation.name());
      }
      for (const auto& h : c.head) acts.emplace_back(h.activation.name());
      e["kernels"] = kernels;
      e["conv_layers"] = c.convs.size();
      write_f32(dir / rel, cnn_to_flat(c));
    } else if (item.ffnn) {
      e["kind"] = "ffnn";
      e["layer_dims"] = item.ffnn->widths();
      for (const auto& l : item.ffnn->layers) acts.emplace_back(l.activation.name());
      write_f32(dir / rel, ffnn_to_flat(*item.ffnn));
    } else {
      throw Error("zoo item " + item.id + " holds no network");
    }
    e["activations"] = acts;
    manifest["entries"].push_back(e);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

Zoo load_zoo(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir.string());
  const json manifest = json::parse(in);
  Zoo zoo;
  zoo.task = manifest.value("task", "");
  for (const auto& e : manifest.at("entries")) {
    ZooItem item;
    item.id = e.at("id").get<std::string>();
    item.label = e.at("label").get<double>();
    item.omega0 = e.value("omega0", 0.0);
    if (e.contains("signal_seed")) item.signal_seed = e.at("signal_seed").get<std::uint64_t>();
    const auto dims = e.at("layer_dims").get<std::vector<Index>>();
    const auto acts = e.at("activations").get<std::vector<std::string>>();
    if (dims.size() != acts.size() + 1) throw ShapeError(item.id + ": layer_dims/activations mismatch");
    std::vector<ActivationDescriptor> descs;
    for (const auto& a : acts) descs.push_back(ActivationDescriptor::parse(a, item.omega0 > 0 ? item.omega0 : 30.0));
    const auto flat = read_f32(dir / e.at("weights_path").get<std::string>());
    if (e.at("kind") == "cnn") {
      const auto kernels = e.at("kernels").get<std::vector<std::array<Index, 2>>>();
      const auto nconv = e.at("conv_layers").get<std::size_t>();
      CnnParams like;
      for (std::size_t l = 0; l < dims.size() - 1; ++l) {
        if (l < nconv) {
          const auto [kh, kw] = kernels.at(l);
          like.convs.push_back({Tensor::Zero(dims[l + 1], dims[l] * kh * kw),
                                Tensor::Zero(1, dims[l + 1]), kh, kw, descs[l]});
        } else {
          like.head.push_back({Tensor::Zero(dims[l + 1], dims[l]), Tensor::Zero(1, dims[l + 1]), descs[l]});
        }
      }
      item.cnn = cnn_from_flat(like, flat);
    } else {
      item.ffnn = ffnn_from_flat(FfnnArch{dims, descs}, flat);
    }
    zoo.items.push_back(std::move(item));
  }
  return zoo;
}

}  // namespace scalegmn
