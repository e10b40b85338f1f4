#include "crds/nn/params.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

namespace crds::nn {

using nlohmann::json;

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

struct BlobWriter {
  std::vector<char> bytes;
  json manifest = json::array();

  void append(const std::string& name, const Tensor<float>& t) {
    json e;
    e["name"] = name;
    e["shape"] = t.dims;
    e["dtype"] = "f32";
    e["offset"] = bytes.size();
    manifest.push_back(std::move(e));
    const char* p = reinterpret_cast<const char*>(t.data());
    bytes.insert(bytes.end(), p, p + t.v.size() * sizeof(float));
  }
};

void write_file_atomic(const std::string& path, const char* data, size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp);
    f.write(data, static_cast<std::streamsize>(n));
    if (!f) throw IoError("short write: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed: " + path);
}

Tensor<float> read_tensor(const std::vector<char>& blob, const json& e) {
  std::vector<int> shape = e.at("shape").get<std::vector<int>>();
  if (e.at("dtype").get<std::string>() != "f32")
    throw FormatError("checkpoint: unsupported dtype");
  Tensor<float> t(shape);
  const size_t off = e.at("offset").get<size_t>();
  const size_t need = t.v.size() * sizeof(float);
  if (off + need > blob.size()) throw CorruptionError("checkpoint: tensor past end of blob");
  std::copy(blob.begin() + off, blob.begin() + off + need,
            reinterpret_cast<char*>(t.data()));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& prefix, const ParamStore<float>& params,
                     const Adam<float>* opt, const CheckpointExtra& extra) {
  BlobWriter w;
  for (const auto& e : params.entries) w.append(e.name, e.value);
  json steps = json::object();
  if (opt) {
    for (size_t i = 0; i < params.entries.size(); ++i) {
      const std::string& name = params.entries[i].name;
      w.append("opt.m:" + name, opt->m[i]);
      w.append("opt.v:" + name, opt->v[i]);
      steps[name] = opt->steps[i];
    }
  }

  json man;
  man["format"] = "crds-ckpt-1";
  man["iteration"] = extra.iteration;
  man["config_hash"] = extra.config_hash;
  json hist = json::array();
  for (const auto& r : extra.loss_history)
    hist.push_back(json::array({r.iter, r.l_i, r.l_m, r.lr}));
  man["loss_history"] = std::move(hist);
  if (opt) man["adam_steps"] = std::move(steps);
  man["tensors"] = std::move(w.manifest);
  man["bytes"] = w.bytes.size();

  // Blob first: a complete manifest always refers to a complete blob.
  write_file_atomic(prefix + ".bin", w.bytes.data(), w.bytes.size());
  const std::string text = man.dump();
  write_file_atomic(prefix + ".json", text.data(), text.size());
}

CheckpointExtra load_checkpoint(const std::string& prefix, ParamStore<float>& params,
                                Adam<float>* opt, LoadMode mode) {
  json man;
  {
    std::ifstream f(prefix + ".json", std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint manifest: " + prefix + ".json");
    try {
      f >> man;
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
  }
  if (!man.is_object() || man.value("format", "") != "crds-ckpt-1")
    throw FormatError("checkpoint manifest: unknown format");

  std::vector<char> blob;
  {
    std::ifstream f(prefix + ".bin", std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint blob: " + prefix + ".bin");
    f.seekg(0, std::ios::end);
    blob.resize(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw IoError("short read: " + prefix + ".bin");
  }
  if (man.contains("bytes") && man["bytes"].get<size_t>() != blob.size())
    throw CorruptionError("checkpoint: blob size disagrees with manifest");

  std::unordered_map<std::string, Tensor<float>> opt_m, opt_v;
  size_t params_seen = 0;
  for (const auto& e : man.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    if (name.rfind("opt.m:", 0) == 0) {
      if (opt) opt_m.emplace(name.substr(6), read_tensor(blob, e));
      continue;
    }
    if (name.rfind("opt.v:", 0) == 0) {
      if (opt) opt_v.emplace(name.substr(6), read_tensor(blob, e));
      continue;
    }
    if (!params.has(name)) {
      throw InvalidArgument("checkpoint: tensor " + name + " not in target store");
    }
    Tensor<float>& dst = params.get(name);
    Tensor<float> src = read_tensor(blob, e);
    if (src.dims != dst.dims) throw InvalidArgument("checkpoint: shape mismatch for " + name);
    dst = std::move(src);
    ++params_seen;
  }
  if (mode == LoadMode::kStrict && params_seen != params.entries.size())
    throw InvalidArgument("checkpoint: store has tensors missing from the file");

  CheckpointExtra extra;
  extra.iteration = man.value("iteration", int64_t{0});
  extra.config_hash = man.value("config_hash", std::string());
  if (man.contains("loss_history")) {
    for (const auto& r : man["loss_history"]) {
      LossRow row;
      row.iter = r.at(0).get<int64_t>();
      row.l_i = r.at(1).get<double>();
      row.l_m = r.at(2).get<double>();
      row.lr = r.at(3).get<double>();
      extra.loss_history.push_back(row);
    }
  }

  if (opt) {
    opt->init(params);
    if (man.contains("adam_steps")) {
      for (size_t i = 0; i < params.entries.size(); ++i) {
        const std::string& name = params.entries[i].name;
        auto im = opt_m.find(name);
        auto iv = opt_v.find(name);
        if (im != opt_m.end()) {
          require_same_shape(params.entries[i].value, im->second, "adam m");
          opt->m[i] = std::move(im->second);
        }
        if (iv != opt_v.end()) {
          require_same_shape(params.entries[i].value, iv->second, "adam v");
          opt->v[i] = std::move(iv->second);
        }
        if (man["adam_steps"].contains(name))
          opt->steps[i] = man["adam_steps"][name].get<int64_t>();
      }
    }
  }
  return extra;
}

}  // namespace crds::nn
