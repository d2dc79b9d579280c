#include "hyperskel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace hyperskel {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kMagic = "hyperskel-checkpoint 1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in host order, which must be little-endian");

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
  json manifest;
  manifest["format"] = "hyperskel-checkpoint";
  manifest["dtype"] = "float64";
  json cfg = json::object();
  for (const auto& [k, v] : config_entries(model.config())) cfg[k] = v;
  manifest["config"] = cfg;
  manifest["vocab_size"] = model.vocab_size();
  manifest["total_steps"] = model.schedule.total_steps;

  std::vector<double> payload;
  json tensors = json::array();
  for (const auto& p : model.state_tensors()) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor->shape()}, {"offset", payload.size()}});
    const auto v = p.tensor->values();
    payload.insert(payload.end(), v.begin(), v.end());
  }
  json buffers = json::array();
  for (const auto& b : model.buffers()) {
    buffers.push_back({{"name", b.name}, {"size", b.values->size()}, {"offset", payload.size()}});
    payload.insert(payload.end(), b.values->begin(), b.values->end());
  }
  manifest["tensors"] = tensors;
  manifest["buffers"] = buffers;
  manifest["count"] = payload.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << kMagic << '\n' << manifest.dump() << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string magic, line;
  if (!std::getline(in, magic) || magic != kMagic) {
    throw std::runtime_error(path + " is not a hyperskel checkpoint");
  }
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing manifest");
  const json manifest = json::parse(line);

  TrainConfig cfg;
  for (const auto& [k, v] : manifest.at("config").items()) apply_setting(cfg, k, v.get<std::string>());
  const std::size_t count = manifest.at("count");
  std::vector<double> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw std::runtime_error(path + ": truncated payload");
  }

  auto model = std::make_unique<Model>(cfg, manifest.at("vocab_size").get<std::size_t>(),
                                       manifest.at("total_steps").get<std::size_t>());
  std::map<std::string, const json*> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name")] = &t;
  for (const auto& p : model->state_tensors()) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw std::runtime_error(path + ": missing tensor " + p.name);
    const Shape shape = it->second->at("shape").get<Shape>();
    if (shape != p.tensor->shape()) {
      throw std::runtime_error(path + ": tensor " + p.name + " has shape " + shape_str(shape) +
                               ", model expects " + shape_str(p.tensor->shape()));
    }
    const std::size_t off = it->second->at("offset");
    if (off + p.tensor->numel() > count) throw std::runtime_error(path + ": bad offset for " + p.name);
    auto dst = p.tensor->mutable_values();
    std::copy_n(payload.begin() + std::ptrdiff_t(off), dst.size(), dst.begin());
    entries.erase(it);
  }
  if (!entries.empty()) throw std::runtime_error(path + ": unexpected tensor " + entries.begin()->first);
  std::map<std::string, const json*> bufs;
  for (const auto& b : manifest.at("buffers")) bufs[b.at("name")] = &b;
  for (const auto& b : model->buffers()) {
    auto it = bufs.find(b.name);
    if (it == bufs.end()) throw std::runtime_error(path + ": missing buffer " + b.name);
    const std::size_t size = it->second->at("size"), off = it->second->at("offset");
    if (size != b.values->size() || off + size > count) {
      throw std::runtime_error(path + ": buffer " + b.name + " does not match the model");
    }
    std::copy_n(payload.begin() + std::ptrdiff_t(off), size, b.values->begin());
  }
  return model;
}

}  // namespace hyperskel
