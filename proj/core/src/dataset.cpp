#include "crds/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "crds/errors.hpp"
#include "crds/rng.hpp"
#include "crds/toy_codec.hpp"

namespace crds {

namespace {

uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97f4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Hash of lattice corner -> [-1,1].
double corner(uint64_t seed, int octave, int ch, int64_t ix, int64_t iy) {
  uint64_t h = mix64(seed ^ mix64(static_cast<uint64_t>(octave) * 0x9E37ull +
                                  static_cast<uint64_t>(ch)));
  h = mix64(h ^ static_cast<uint64_t>(ix) * 0x9E3779B97f4A7C15ull);
  h = mix64(h ^ static_cast<uint64_t>(iy) * 0xC2B2AE3D27D4EB4Full);
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinear value noise at continuous (x, y).
double vnoise(uint64_t seed, int octave, int ch, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double v00 = corner(seed, octave, ch, ix, iy);
  const double v10 = corner(seed, octave, ch, ix + 1, iy);
  const double v01 = corner(seed, octave, ch, ix, iy + 1);
  const double v11 = corner(seed, octave, ch, ix + 1, iy + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) +
         (v01 * (1 - tx) + v11 * tx) * ty;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (frames <= 0 || height <= 0 || width <= 0)
    throw InvalidArgument("synthetic clip needs positive geometry");
  if (channels != 1 && channels != 3)
    throw InvalidArgument("synthetic clip supports 1 or 3 channels");
  if (waves < 0 || tex_octaves < 0 || wave_amp < 0 || tex_amp < 0 || grain < 0)
    throw InvalidArgument("synthetic clip amplitudes must be >= 0");
  if (tex_scale <= 0) throw InvalidArgument("tex_scale must be positive");
}

RawClip make_synthetic_clip(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng wave_rng = Rng::derive(cfg.seed, 0x77617665u);  // wave parameters

  struct Wave {
    double fy, fx, phase, omega, amp;
  };
  std::vector<Wave> waves(cfg.waves);
  for (auto& wv : waves) {
    wv.fy = wave_rng.uniform(0.05, 0.45);
    wv.fx = wave_rng.uniform(0.05, 0.45);
    wv.phase = wave_rng.uniform(0.0, 6.28318530717958647692);
    wv.omega = wave_rng.uniform(-0.6, 0.6);
    wv.amp = cfg.wave_amp * wave_rng.uniform(0.5, 1.0);
  }

  std::vector<Frame> frames;
  for (int t = 0; t < cfg.frames; ++t) {
    Frame f = Frame::zeros({cfg.channels, cfg.height, cfg.width});
    Rng grain_rng = Rng::derive(cfg.seed, 0x677261696eull, static_cast<uint64_t>(t));
    for (int c = 0; c < cfg.channels; ++c)
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          double v = 0.5;
          for (const auto& wv : waves)
            v += wv.amp * std::sin(wv.fy * y + wv.fx * x + wv.phase +
                                   wv.omega * t + 0.9 * c);
          const double sx = x + cfg.pan_x * t;
          const double sy = y + cfg.pan_y * t;
          double amp = cfg.tex_amp;
          double scale = cfg.tex_scale;
          double tex = 0.0, norm = 0.0;
          for (int o = 0; o < cfg.tex_octaves; ++o) {
            tex += amp * vnoise(cfg.seed, o, c, sx / scale, sy / scale);
            norm += amp;
            amp *= 0.5;
            scale *= 0.5;
          }
          if (norm > 0) tex *= cfg.tex_amp / norm;
          v += tex;
          if (cfg.grain > 0) v += grain_rng.uniform(-cfg.grain, cfg.grain);
          f.at(c, y, x) = std::clamp(v, 0.0, 1.0);
        }
    frames.push_back(std::move(f));
  }
  return from_frames(frames, cfg.channels == 3 ? Colorspace::RGB : Colorspace::GRAY);
}

namespace {

std::string tag3(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

std::string join(const std::string& dir, const std::string& rel) {
  return (std::filesystem::path(dir) / rel).string();
}

}  // namespace

void DatasetSpec::validate() const {
  if (clips <= 0 || frames <= 0 || height <= 0 || width <= 0)
    throw InvalidArgument("dataset: clips, frames, and geometry must be positive");
  if (channels != 1 && channels != 3)
    throw InvalidArgument("dataset: supports 1 or 3 channels");
  if (grain < 0) throw InvalidArgument("dataset: grain must be >= 0");
  CodecConfig cc;
  cc.block = block;
  cc.search_range = search_range;
  cc.qp = qp;
  cc.validate();
}

DatasetManifest build_dataset(const std::string& dir, const DatasetSpec& spec,
                              const std::vector<RawClip>* sources) {
  spec.validate();
  if (sources) {
    if (sources->empty()) throw InvalidArgument("dataset: empty source list");
    for (const RawClip& c : *sources) {
      c.validate();
      if (c.height != sources->front().height || c.width != sources->front().width ||
          c.channels != sources->front().channels)
        throw InvalidArgument("dataset: source clips must share geometry");
    }
  }
  std::filesystem::create_directories(dir);

  CodecConfig cc;
  cc.block = spec.block;
  cc.search_range = spec.search_range;
  cc.qp = spec.qp;

  DatasetManifest man;
  man.spec = spec;
  if (sources) {
    man.spec.clips = static_cast<int>(sources->size());
    man.spec.frames = static_cast<int>(sources->front().frame_count());
    man.spec.height = sources->front().height;
    man.spec.width = sources->front().width;
    man.spec.channels = sources->front().channels;
  }

  for (int i = 0; i < man.spec.clips; ++i) {
    RawClip gt;
    if (sources) {
      gt = (*sources)[i];
    } else {
      SyntheticConfig sc;
      sc.frames = spec.frames;
      sc.height = spec.height;
      sc.width = spec.width;
      sc.channels = spec.channels;
      sc.grain = spec.grain;
      sc.seed = mix64(mix64(spec.seed ^ 0x636c6970ull) + static_cast<uint64_t>(i));
      Rng vary = Rng::derive(spec.seed, 0x76617279ull, static_cast<uint64_t>(i));
      sc.pan_y = vary.uniform(-1.5, 1.5);
      sc.pan_x = vary.uniform(-1.8, 1.8);
      sc.tex_scale = vary.uniform(9.0, 16.0);
      gt = make_synthetic_clip(sc);
    }
    const EncodeResult enc = encode_clip(gt, cc);

    DatasetEntry e;
    e.name = "clip_" + tag3(i);
    e.gt = "gt_" + tag3(i) + ".crdsraw";
    e.lq = "lq_" + tag3(i) + ".crdsraw";
    e.meta_json = "meta_" + tag3(i) + ".json";
    e.meta_blob = "meta_" + tag3(i) + ".blob";
    e.frames = static_cast<int>(gt.frame_count());
    save_clip(gt, join(dir, e.gt));
    save_clip(enc.lq, join(dir, e.lq));
    save_metadata(enc.meta, join(dir, e.meta_json), join(dir, e.meta_blob));
    man.entries.push_back(std::move(e));
  }

  nlohmann::ordered_json j;
  j["clips"] = man.spec.clips;
  j["frames"] = man.spec.frames;
  j["height"] = man.spec.height;
  j["width"] = man.spec.width;
  j["channels"] = man.spec.channels;
  j["qp"] = man.spec.qp;
  j["block"] = man.spec.block;
  j["search_range"] = man.spec.search_range;
  j["seed"] = man.spec.seed;
  j["grain"] = man.spec.grain;
  j["entries"] = nlohmann::ordered_json::array();
  for (const DatasetEntry& e : man.entries)
    j["entries"].push_back({{"name", e.name},
                            {"gt", e.gt},
                            {"lq", e.lq},
                            {"meta", e.meta_json},
                            {"blob", e.meta_blob},
                            {"frames", e.frames}});
  std::ofstream out(join(dir, "manifest.json"), std::ios::binary);
  if (!out) throw IoError("dataset: cannot write manifest in " + dir);
  out << j.dump() << "\n";
  if (!out) throw IoError("dataset: short manifest write in " + dir);
  return man;
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream in(join(dir, "manifest.json"), std::ios::binary);
  if (!in) throw IoError("dataset: cannot open manifest in " + dir);
  nlohmann::json j;
  try {
    in >> j;
    DatasetManifest man;
    man.spec.clips = j.at("clips").get<int>();
    man.spec.frames = j.at("frames").get<int>();
    man.spec.height = j.at("height").get<int>();
    man.spec.width = j.at("width").get<int>();
    man.spec.channels = j.at("channels").get<int>();
    man.spec.qp = j.at("qp").get<int>();
    man.spec.block = j.at("block").get<int>();
    man.spec.search_range = j.at("search_range").get<int>();
    man.spec.seed = j.at("seed").get<uint64_t>();
    man.spec.grain = j.at("grain").get<double>();
    for (const auto& je : j.at("entries")) {
      DatasetEntry e;
      e.name = je.at("name").get<std::string>();
      e.gt = je.at("gt").get<std::string>();
      e.lq = je.at("lq").get<std::string>();
      e.meta_json = je.at("meta").get<std::string>();
      e.meta_blob = je.at("blob").get<std::string>();
      e.frames = je.at("frames").get<int>();
      man.entries.push_back(std::move(e));
    }
    if (static_cast<int>(man.entries.size()) != man.spec.clips)
      throw CorruptionError("dataset: manifest clip count disagrees with its entries");
    return man;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset: bad manifest in " + dir + ": " + e.what());
  }
}

std::vector<ClipPair> load_dataset(const std::string& dir) {
  const DatasetManifest man = load_manifest(dir);
  std::vector<ClipPair> pairs;
  for (const DatasetEntry& e : man.entries) {
    ClipPair p;
    p.name = e.name;
    p.gt = load_clip(join(dir, e.gt));
    p.lq = load_clip(join(dir, e.lq));
    if (p.gt.height != man.spec.height || p.gt.width != man.spec.width ||
        p.gt.channels != man.spec.channels ||
        static_cast<int>(p.gt.frame_count()) != e.frames)
      throw CorruptionError("dataset: " + e.gt + " disagrees with the manifest");
    if (p.lq.height != p.gt.height || p.lq.width != p.gt.width ||
        p.lq.channels != p.gt.channels || p.lq.frame_count() != p.gt.frame_count())
      throw CorruptionError("dataset: " + e.lq + " does not pair with " + e.gt);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace crds
