#pragma once

#include <cstdint>

#include "crds/media_io.hpp"

namespace crds {

// Procedural clip recipe: drifting sinusoidal background, multi-octave value
// noise translated by a global pan, optional per-frame grain. Grain keeps the
// code-space residual spectrum wide, which the quantization-noise statistics
// depend on.
struct SyntheticConfig {
  int frames = 8;
  int height = 64;
  int width = 64;
  int channels = 1;
  uint64_t seed = 0;
  int waves = 3;            // sinusoidal background components
  double wave_amp = 0.12;   // per-component amplitude
  int tex_octaves = 3;
  double tex_amp = 0.18;    // total texture amplitude
  double tex_scale = 12.0;  // base feature size in pixels
  double pan_y = 0.7;       // global drift, pixels per frame
  double pan_x = 1.3;
  double grain = 0.0;       // uniform grain amplitude (+-grain)

  void validate() const;
};

RawClip make_synthetic_clip(const SyntheticConfig& cfg);

// ---- paired GT/LQ store on disk ---------------------------------------------
// Layout under one directory: gt_###.crdsraw / lq_###.crdsraw pairs, the codec
// side-information sidecars meta_###.{json,blob}, and a manifest.json tying
// them together.

struct DatasetSpec {
  int clips = 8;
  int frames = 12;
  int height = 64;
  int width = 64;
  int channels = 1;
  int qp = 37;
  int block = 8;
  int search_range = 8;
  uint64_t seed = 1;
  double grain = 0.30;  // synthesizer grain; keeps coefficient errors spread

  void validate() const;
};

struct DatasetEntry {
  std::string name;
  std::string gt, lq, meta_json, meta_blob;  // paths relative to the dataset dir
  int frames = 0;
};

struct DatasetManifest {
  DatasetSpec spec;
  std::vector<DatasetEntry> entries;
};

struct ClipPair {
  std::string name;
  RawClip gt;
  RawClip lq;
};

// Synthesize spec.clips procedural clips (pan, texture scale, and seed varied
// per clip), or compress the given source clips instead, run each through the
// toy codec, and write the paired store plus manifest into dir (created if
// missing). Byte-deterministic for a fixed spec.
DatasetManifest build_dataset(const std::string& dir, const DatasetSpec& spec,
                              const std::vector<RawClip>* sources = nullptr);

DatasetManifest load_manifest(const std::string& dir);

// Load every pair in the manifest; a pair whose geometry or frame count
// disagrees with the manifest raises CorruptionError.
std::vector<ClipPair> load_dataset(const std::string& dir);

}  // namespace crds
