#include "crds/toy_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <vector>

#include <json.hpp>

#include "crds/errors.hpp"

namespace crds {

namespace {

constexpr double kCoeffScale = 255.0;  // code-space works on 8-bit magnitudes

double round_half_away(double x) {
  return x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5);
}

// Orthonormal DCT-II basis for size n, cached per block size.
const std::vector<double>& dct_basis(int n) {
  static std::map<int, std::vector<double>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> c(static_cast<size_t>(n) * n);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const double scale = i == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int j = 0; j < n; ++j)
      c[static_cast<size_t>(i) * n + j] =
          scale * std::cos((2 * j + 1) * i * pi / (2.0 * n));
  }
  return cache.emplace(n, std::move(c)).first->second;
}

}  // namespace

void CodecConfig::validate() const {
  if (block <= 0) throw InvalidArgument("codec block size must be positive");
  if (search_range < 0) throw InvalidArgument("search_range must be >= 0");
  if (qp < 0) throw InvalidArgument("qp must be >= 0");
}

double qstep(int qp) {
  if (qp < 0) throw InvalidArgument("qp must be >= 0");
  return std::pow(2.0, (qp - 4) / 6.0);
}

Frame pad_to_blocks(const Frame& f, int block) {
  const int c = f.dims[0], h = f.dims[1], w = f.dims[2];
  const int hp = (h + block - 1) / block * block;
  const int wp = (w + block - 1) / block * block;
  if (hp == h && wp == w) return f;
  Frame out = Frame::zeros({c, hp, wp});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < hp; ++y)
      for (int x = 0; x < wp; ++x)
        out.at(ch, y, x) = f.at(ch, std::min(y, h - 1), std::min(x, w - 1));
  return out;
}

Frame crop_frame(const Frame& f, int height, int width) {
  const int c = f.dims[0];
  if (height > f.dims[1] || width > f.dims[2])
    throw InvalidArgument("crop_frame: target larger than source");
  if (height == f.dims[1] && width == f.dims[2]) return f;
  Frame out = Frame::zeros({c, height, width});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(ch, y, x) = f.at(ch, y, x);
  return out;
}

namespace {

double block_sad(const Frame& cur, int by, int bx, const Frame& ref, int ry,
                 int rx, int n) {
  double s = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      s += std::abs(cur.at(0, by + y, bx + x) - ref.at(0, ry + y, rx + x));
  return s;
}

}  // namespace

BlockMotion block_motion_search(const Frame& cur, const Frame& ref, int by,
                                int bx, const CodecConfig& cfg) {
  cfg.validate();
  require_same_shape(cur, ref, "block_motion_search");
  const int n = cfg.block, h = cur.dims[1], w = cur.dims[2];
  if (by < 0 || bx < 0 || by + n > h || bx + n > w)
    throw InvalidArgument("block_motion_search: block outside frame");

  BlockMotion best;
  best.row = by / n;
  best.col = bx / n;
  best.mode = PredMode::INTER;
  bool have = false;
  int best_manhattan = 0;
  for (int dy = -cfg.search_range; dy <= cfg.search_range; ++dy) {
    const int ry = by + dy;
    if (ry < 0 || ry + n > h) continue;
    for (int dx = -cfg.search_range; dx <= cfg.search_range; ++dx) {
      const int rx = bx + dx;
      if (rx < 0 || rx + n > w) continue;
      const double sad = block_sad(cur, by, bx, ref, ry, rx, n);
      const int manhattan = std::abs(dy) + std::abs(dx);
      if (!have || sad < best.sad ||
          (sad == best.sad && manhattan < best_manhattan)) {
        have = true;
        best.dy = dy;
        best.dx = dx;
        best.sad = sad;
        best_manhattan = manhattan;
      }
    }
  }
  return best;
}

FramePrediction predict_frame(const Frame& cur,
                              const std::vector<Frame>& recon_refs,
                              const CodecConfig& cfg, const ResidualHook& hook) {
  cfg.validate();
  const int c = cur.dims[0], h = cur.dims[1], w = cur.dims[2];
  const int n = cfg.block;
  if (h % n != 0 || w % n != 0)
    throw InvalidArgument("predict_frame: frame not block-aligned");
  const Frame* ref = recon_refs.empty() ? nullptr : &recon_refs.back();
  if (ref) require_same_shape(cur, *ref, "predict_frame");

  FramePrediction out;
  out.predicted = Frame::zeros({c, h, w});
  out.residual = Frame::zeros({c, h, w});
  out.recon = Frame::zeros({c, h, w});

  for (int by = 0; by < h; by += n)
    for (int bx = 0; bx < w; bx += n) {
      // Intra candidate: flat DC from already-reconstructed borders.
      std::vector<double> dc(c, 0.0);
      for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        int cnt = 0;
        if (by > 0)
          for (int x = 0; x < n; ++x) sum += out.recon.at(ch, by - 1, bx + x), ++cnt;
        if (bx > 0)
          for (int y = 0; y < n; ++y) sum += out.recon.at(ch, by + y, bx - 1), ++cnt;
        dc[ch] = cnt ? sum / cnt : 0.5;
      }
      double intra_sad = 0.0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          intra_sad += std::abs(cur.at(0, by + y, bx + x) - dc[0]);

      BlockMotion bm;
      bm.row = by / n;
      bm.col = bx / n;
      bm.mode = PredMode::INTRA_DC;
      bm.sad = intra_sad;
      if (ref) {
        BlockMotion inter = block_motion_search(cur, *ref, by, bx, cfg);
        if (inter.sad <= intra_sad) bm = inter;  // prefer INTER on ties
      }

      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            out.predicted.at(ch, by + y, bx + x) =
                bm.mode == PredMode::INTER
                    ? ref->at(ch, by + bm.dy + y, bx + bm.dx + x)
                    : dc[ch];

      Tensor<double> res({c, n, n});
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const double r = cur.at(ch, by + y, bx + x) -
                             out.predicted.at(ch, by + y, bx + x);
            out.residual.at(ch, by + y, bx + x) = r;
            res.at(ch, y, x) = r;
          }
      const Tensor<double> rec_res = hook ? hook(res) : res;
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            out.recon.at(ch, by + y, bx + x) =
                out.predicted.at(ch, by + y, bx + x) + rec_res.at(ch, y, x);

      out.motions.push_back(bm);
    }
  return out;
}

Tensor<double> dct2(const Tensor<double>& block) {
  if (block.dims.size() != 2 || block.dims[0] != block.dims[1])
    throw InvalidArgument("dct2: expected a square 2-d block");
  const int n = block.dims[0];
  const auto& c = dct_basis(n);
  Tensor<double> tmp({n, n}), out({n, n});
  // tmp = C * B
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += c[static_cast<size_t>(i) * n + k] * block.v[static_cast<size_t>(k) * n + j];
      tmp.v[static_cast<size_t>(i) * n + j] = s;
    }
  // out = tmp * C^T
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += tmp.v[static_cast<size_t>(i) * n + k] * c[static_cast<size_t>(j) * n + k];
      out.v[static_cast<size_t>(i) * n + j] = s;
    }
  return out;
}

Tensor<double> idct2(const Tensor<double>& coeffs) {
  if (coeffs.dims.size() != 2 || coeffs.dims[0] != coeffs.dims[1])
    throw InvalidArgument("idct2: expected a square 2-d block");
  const int n = coeffs.dims[0];
  const auto& c = dct_basis(n);
  Tensor<double> tmp({n, n}), out({n, n});
  // tmp = C^T * A
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += c[static_cast<size_t>(k) * n + i] * coeffs.v[static_cast<size_t>(k) * n + j];
      tmp.v[static_cast<size_t>(i) * n + j] = s;
    }
  // out = tmp * C
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += tmp.v[static_cast<size_t>(i) * n + k] * c[static_cast<size_t>(k) * n + j];
      out.v[static_cast<size_t>(i) * n + j] = s;
    }
  return out;
}

Tensor<double> quantize(const Tensor<double>& coeffs, double delta) {
  if (delta <= 0.0) throw InvalidArgument("quantize: delta must be positive");
  Tensor<double> q = coeffs;
  for (auto& v : q.v) v = round_half_away(v / delta);
  return q;
}

Tensor<double> dequantize(const Tensor<double>& q, double delta) {
  if (delta <= 0.0) throw InvalidArgument("dequantize: delta must be positive");
  Tensor<double> c = q;
  for (auto& v : c.v) v *= delta;
  return c;
}

EncodeResult encode_clip(const RawClip& clip, const CodecConfig& cfg) {
  cfg.validate();
  clip.validate();
  if (clip.frame_count() == 0) throw InvalidArgument("encode_clip: empty clip");

  const int n = cfg.block;
  const double delta = qstep(cfg.qp);
  const auto frames = to_frames(clip);
  const Frame padded0 = pad_to_blocks(frames[0], n);

  EncodeResult result;
  CodecMetadata& meta = result.meta;
  meta.block = n;
  meta.qstep = delta;
  meta.height = clip.height;
  meta.width = clip.width;
  meta.pad_height = padded0.dims[1];
  meta.pad_width = padded0.dims[2];
  meta.channels = clip.channels;

  std::vector<Frame> lq_frames;
  Tensor<double>* rc_frame = nullptr;
  Tensor<double>* rq_frame = nullptr;

  // Transform -> quantize -> inverse transform, recording code-space
  // residuals for the frame currently being coded.
  int cur_by = 0, cur_bx = 0;
  ResidualHook hook = [&](const Tensor<double>& res) {
    Tensor<double> rec = res;
    for (int ch = 0; ch < meta.channels; ++ch) {
      Tensor<double> blk({n, n});
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) blk.v[static_cast<size_t>(y) * n + x] = res.at(ch, y, x) * kCoeffScale;
      Tensor<double> coeffs = dct2(blk);
      Tensor<double> deq = dequantize(quantize(coeffs, delta), delta);
      Tensor<double> rec_blk = idct2(deq);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          rc_frame->at(ch, cur_by + y, cur_bx + x) = coeffs.v[static_cast<size_t>(y) * n + x];
          rq_frame->at(ch, cur_by + y, cur_bx + x) = deq.v[static_cast<size_t>(y) * n + x];
          rec.at(ch, y, x) = rec_blk.v[static_cast<size_t>(y) * n + x] / kCoeffScale;
        }
    }
    return rec;
  };

  for (size_t t = 0; t < clip.frame_count(); ++t) {
    const Frame cur = pad_to_blocks(frames[t], n);
    meta.residual_coeffs.emplace_back(
        Tensor<double>::zeros({meta.channels, meta.pad_height, meta.pad_width}));
    meta.quantized_coeffs.emplace_back(
        Tensor<double>::zeros({meta.channels, meta.pad_height, meta.pad_width}));
    rc_frame = &meta.residual_coeffs.back();
    rq_frame = &meta.quantized_coeffs.back();

    // predict_frame walks blocks row-major; mirror its cursor for the hook.
    cur_by = 0;
    cur_bx = -n;
    ResidualHook tracking = [&](const Tensor<double>& res) {
      cur_bx += n;
      if (cur_bx >= meta.pad_width) {
        cur_bx = 0;
        cur_by += n;
      }
      return hook(res);
    };

    FramePrediction pred = predict_frame(cur, result.recon, cfg, tracking);
    meta.motions.push_back(std::move(pred.motions));
    result.predicted.push_back(std::move(pred.predicted));
    result.recon.push_back(std::move(pred.recon));
    lq_frames.push_back(crop_frame(result.recon.back(), clip.height, clip.width));
  }

  result.lq = from_frames(lq_frames, clip.colorspace, clip.fps);
  return result;
}

std::vector<double> noise_samples(const CodecMetadata& meta) {
  if (meta.residual_coeffs.empty())
    throw InvalidArgument("noise_samples: empty metadata");
  std::vector<double> out;
  const double floor = meta.qstep * 1e-6;
  for (size_t t = 0; t < meta.residual_coeffs.size(); ++t) {
    const auto& rc = meta.residual_coeffs[t];
    const auto& rq = meta.quantized_coeffs[t];
    for (size_t i = 0; i < rc.v.size(); ++i) {
      if (std::abs(rc.v[i]) < floor) continue;
      out.push_back(rq.v[i] - rc.v[i]);
    }
  }
  return out;
}

Tensor<double> motion_field(const CodecMetadata& meta, size_t frame) {
  if (frame >= meta.motions.size())
    throw InvalidArgument("motion_field: frame out of range");
  if (meta.height <= 0 || meta.width <= 0 || meta.block <= 0)
    throw InvalidArgument("motion_field: broken metadata geometry");
  Tensor<double> field = Tensor<double>::zeros({2, meta.height, meta.width});
  const int n = meta.block;
  for (const BlockMotion& bm : meta.motions[frame]) {
    if (bm.mode != PredMode::INTER) continue;
    const int y1 = std::min(bm.row * n + n, meta.height);
    const int x1 = std::min(bm.col * n + n, meta.width);
    for (int y = bm.row * n; y < y1; ++y)
      for (int x = bm.col * n; x < x1; ++x) {
        field.at(0, y, x) = bm.dy;
        field.at(1, y, x) = bm.dx;
      }
  }
  return field;
}

Frame residual_frame(const CodecMetadata& meta, size_t frame) {
  if (frame >= meta.quantized_coeffs.size())
    throw InvalidArgument("residual_frame: frame out of range");
  const Tensor<double>& q = meta.quantized_coeffs[frame];
  if (q.dims != std::vector<int>{meta.channels, meta.pad_height, meta.pad_width})
    throw InvalidArgument("residual_frame: coefficient shape disagrees with the header");
  const int n = meta.block;
  Frame padded = Frame::zeros(q.dims);
  Tensor<double> blk({n, n});
  for (int ch = 0; ch < meta.channels; ++ch)
    for (int by = 0; by < meta.pad_height; by += n)
      for (int bx = 0; bx < meta.pad_width; bx += n) {
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            blk.v[static_cast<size_t>(y) * n + x] = q.at(ch, by + y, bx + x);
        const Tensor<double> rec = idct2(blk);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            padded.at(ch, by + y, bx + x) = rec.v[static_cast<size_t>(y) * n + x] / kCoeffScale;
      }
  return crop_frame(padded, meta.height, meta.width);
}

namespace {

void write_f64(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void save_metadata(const CodecMetadata& meta, const std::string& json_path,
                   const std::string& blob_path) {
  nlohmann::json j;
  j["block"] = meta.block;
  j["qstep"] = meta.qstep;
  j["height"] = meta.height;
  j["width"] = meta.width;
  j["pad_height"] = meta.pad_height;
  j["pad_width"] = meta.pad_width;
  j["channels"] = meta.channels;
  nlohmann::json motions = nlohmann::json::array();
  for (const auto& frame : meta.motions) {
    nlohmann::json fj = nlohmann::json::array();
    for (const auto& m : frame)
      fj.push_back({{"row", m.row},
                    {"col", m.col},
                    {"dy", m.dy},
                    {"dx", m.dx},
                    {"mode", m.mode == PredMode::INTER ? "inter" : "intra_dc"},
                    {"sad", m.sad}});
    motions.push_back(std::move(fj));
  }
  j["motions"] = std::move(motions);

  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot open '" + blob_path + "' for writing");
  nlohmann::json arrays = nlohmann::json::array();
  size_t offset = 0;
  auto emit = [&](const std::string& name, const Tensor<double>& t) {
    arrays.push_back({{"name", name},
                      {"shape", t.dims},
                      {"dtype", "f64"},
                      {"offset", offset}});
    write_f64(blob, t.v);
    offset += t.v.size() * sizeof(double);
  };
  for (size_t i = 0; i < meta.residual_coeffs.size(); ++i)
    emit("residual_coeffs/" + std::to_string(i), meta.residual_coeffs[i]);
  for (size_t i = 0; i < meta.quantized_coeffs.size(); ++i)
    emit("quantized_coeffs/" + std::to_string(i), meta.quantized_coeffs[i]);
  if (!blob) throw IoError("write to '" + blob_path + "' failed");
  blob.close();
  j["blob"] = {{"arrays", std::move(arrays)}, {"bytes", offset}};

  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot open '" + json_path + "' for writing");
  js << j.dump(2) << '\n';
  if (!js) throw IoError("write to '" + json_path + "' failed");
}

CodecMetadata load_metadata(const std::string& json_path,
                            const std::string& blob_path) {
  std::ifstream js(json_path);
  if (!js) throw IoError("cannot open '" + json_path + "'");
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what());
  }

  CodecMetadata meta;
  try {
    meta.block = j.at("block").get<int>();
    meta.qstep = j.at("qstep").get<double>();
    meta.height = j.at("height").get<int>();
    meta.width = j.at("width").get<int>();
    meta.pad_height = j.at("pad_height").get<int>();
    meta.pad_width = j.at("pad_width").get<int>();
    meta.channels = j.at("channels").get<int>();
    for (const auto& fj : j.at("motions")) {
      std::vector<BlockMotion> frame;
      for (const auto& mj : fj) {
        BlockMotion m;
        m.row = mj.at("row").get<int>();
        m.col = mj.at("col").get<int>();
        m.dy = mj.at("dy").get<int>();
        m.dx = mj.at("dx").get<int>();
        m.mode = mj.at("mode").get<std::string>() == "inter" ? PredMode::INTER
                                                             : PredMode::INTRA_DC;
        m.sad = mj.at("sad").get<double>();
        frame.push_back(m);
      }
      meta.motions.push_back(std::move(frame));
    }

    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw IoError("cannot open '" + blob_path + "'");
    for (const auto& aj : j.at("blob").at("arrays")) {
      const std::string name = aj.at("name").get<std::string>();
      std::vector<int> shape = aj.at("shape").get<std::vector<int>>();
      const size_t offset = aj.at("offset").get<size_t>();
      Tensor<double> t(shape);
      blob.seekg(static_cast<std::streamoff>(offset));
      blob.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
      if (static_cast<size_t>(blob.gcount()) != t.v.size() * sizeof(double))
        throw CorruptionError("truncated coefficient blob");
      if (name.rfind("residual_coeffs/", 0) == 0)
        meta.residual_coeffs.push_back(std::move(t));
      else if (name.rfind("quantized_coeffs/", 0) == 0)
        meta.quantized_coeffs.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad metadata field: ") + e.what());
  }
  return meta;
}

}  // namespace crds
