#include "crds/media_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crds/errors.hpp"
#include "crds/rng.hpp"

namespace crds {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'D', 'S', 'R', 'A', 'W', '1'};

std::string cs_name(Colorspace cs) {
  return cs == Colorspace::RGB ? "rgb" : "gray";
}

Colorspace cs_from_name(const std::string& s) {
  if (s == "rgb") return Colorspace::RGB;
  if (s == "gray") return Colorspace::GRAY;
  throw FormatError("unknown colorspace '" + s + "'");
}

}  // namespace

void RawClip::validate() const {
  if (height <= 0 || width <= 0)
    throw InvalidArgument("clip dimensions must be positive");
  if (channels != 1 && channels != 3)
    throw InvalidArgument("clip must have 1 or 3 channels");
  if (fps.first <= 0 || fps.second <= 0)
    throw InvalidArgument("fps must be a positive rational");
  if (channels == 3 && colorspace != Colorspace::RGB)
    throw InvalidArgument("3-channel clip must be rgb");
  if (channels == 1 && colorspace != Colorspace::GRAY)
    throw InvalidArgument("1-channel clip must be gray");
  for (const auto& f : frames)
    if (f.size() != frame_bytes())
      throw InvalidArgument("frame byte size does not match header");
}

RawClip load_clip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("bad magic in '" + path + "'");

  uint8_t lenb[4];
  in.read(reinterpret_cast<char*>(lenb), 4);
  if (in.gcount() != 4) throw CorruptionError("truncated header length");
  uint32_t hlen = static_cast<uint32_t>(lenb[0]) |
                  static_cast<uint32_t>(lenb[1]) << 8 |
                  static_cast<uint32_t>(lenb[2]) << 16 |
                  static_cast<uint32_t>(lenb[3]) << 24;

  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (static_cast<uint32_t>(in.gcount()) != hlen)
    throw CorruptionError("truncated header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }

  RawClip clip;
  size_t nframes = 0;
  try {
    nframes = h.at("frames").get<size_t>();
    clip.height = h.at("height").get<int>();
    clip.width = h.at("width").get<int>();
    clip.channels = h.at("channels").get<int>();
    clip.fps = {h.at("fps").at(0).get<int64_t>(),
                h.at("fps").at(1).get<int64_t>()};
    clip.colorspace = cs_from_name(h.at("colorspace").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad header field: ") + e.what());
  }
  clip.validate();

  clip.frames.resize(nframes);
  for (auto& f : clip.frames) {
    f.resize(clip.frame_bytes());
    in.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(f.size()));
    if (static_cast<size_t>(in.gcount()) != f.size())
      throw CorruptionError("truncated payload in '" + path + "'");
  }
  return clip;
}

void save_clip(const RawClip& clip, const std::string& path) {
  clip.validate();
  nlohmann::json h{{"frames", clip.frame_count()},
                   {"height", clip.height},
                   {"width", clip.width},
                   {"channels", clip.channels},
                   {"fps", {clip.fps.first, clip.fps.second}},
                   {"colorspace", cs_name(clip.colorspace)}};
  const std::string htext = h.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, 8);
  const uint32_t hlen = static_cast<uint32_t>(htext.size());
  const uint8_t lenb[4] = {
      static_cast<uint8_t>(hlen & 0xff), static_cast<uint8_t>(hlen >> 8 & 0xff),
      static_cast<uint8_t>(hlen >> 16 & 0xff),
      static_cast<uint8_t>(hlen >> 24 & 0xff)};
  out.write(reinterpret_cast<const char*>(lenb), 4);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& f : clip.frames)
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

Frame to_frame(const RawClip& clip, size_t index) {
  if (index >= clip.frame_count())
    throw InvalidArgument("frame index out of range");
  Frame f = Frame::zeros({clip.channels, clip.height, clip.width});
  const auto& bytes = clip.frames[index];
  for (size_t i = 0; i < bytes.size(); ++i) f.v[i] = bytes[i] / 255.0;
  return f;
}

std::vector<Frame> to_frames(const RawClip& clip) {
  std::vector<Frame> out;
  out.reserve(clip.frame_count());
  for (size_t i = 0; i < clip.frame_count(); ++i)
    out.push_back(to_frame(clip, i));
  return out;
}

RawClip from_frames(const std::vector<Frame>& frames, Colorspace cs,
                    std::pair<int64_t, int64_t> fps) {
  if (frames.empty()) throw InvalidArgument("from_frames: no frames");
  RawClip clip;
  clip.channels = frames[0].dims[0];
  clip.height = frames[0].dims[1];
  clip.width = frames[0].dims[2];
  clip.fps = fps;
  clip.colorspace = cs;
  for (const auto& f : frames) {
    require_same_shape(f, frames[0], "from_frames");
    std::vector<uint8_t> bytes(f.numel());
    for (size_t i = 0; i < bytes.size(); ++i) {
      double s = std::round(f.v[i] * 255.0);  // ties away from zero
      bytes[i] = static_cast<uint8_t>(std::clamp(s, 0.0, 255.0));
    }
    clip.frames.push_back(std::move(bytes));
  }
  clip.validate();
  return clip;
}

Tensor<double> luma_plane(const Frame& f) {
  const int c = f.dims[0], h = f.dims[1], w = f.dims[2];
  if (c == 1) {
    Tensor<double> y = f;
    return y;
  }
  if (c != 3) throw InvalidArgument("luma_plane: expected 1 or 3 channels");
  Tensor<double> y = Tensor<double>::zeros({1, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i)
    y.v[i] = 0.299 * f.v[i] + 0.587 * f.v[plane + i] + 0.114 * f.v[2 * plane + i];
  return y;
}

double psnr(const Frame& a, const Frame& b, bool use_luma) {
  require_same_shape(a, b, "psnr");
  Tensor<double> ya = use_luma ? luma_plane(a) : a;
  Tensor<double> yb = use_luma ? luma_plane(b) : b;
  double se = 0.0;
  for (size_t i = 0; i < ya.v.size(); ++i) {
    const double d = ya.v[i] - yb.v[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(ya.v.size());
  if (mse < 1e-10) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_kernel_11() {
  std::vector<double> k(11);
  const double sigma = 1.5;
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

namespace {
double ssim_plane(const Tensor<double>& ya, const Tensor<double>& yb);
}

double ssim(const Frame& a, const Frame& b, bool use_luma) {
  require_same_shape(a, b, "ssim");
  if (use_luma || a.dims[0] == 1) return ssim_plane(luma_plane(a), luma_plane(b));
  // Channel-averaged SSIM when the luma reduction is disabled.
  const int c = a.dims[0], h = a.dims[1], w = a.dims[2];
  double acc = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    Tensor<double> pa = Tensor<double>::zeros({1, h, w});
    Tensor<double> pb = Tensor<double>::zeros({1, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    std::copy_n(a.v.begin() + ch * plane, plane, pa.v.begin());
    std::copy_n(b.v.begin() + ch * plane, plane, pb.v.begin());
    acc += ssim_plane(pa, pb);
  }
  return acc / c;
}

namespace {

double ssim_plane(const Tensor<double>& ya, const Tensor<double>& yb) {
  const int h = ya.dims[1], w = ya.dims[2];
  if (h < 11 || w < 11)
    throw InvalidArgument("ssim needs at least an 11x11 luma plane");

  static const std::vector<double> k = gaussian_kernel_11();
  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L=1
  constexpr double kC2 = 0.03 * 0.03;

  auto at = [&](const Tensor<double>& t, int y, int x) {
    return t.v[static_cast<size_t>(y) * w + x];
  };

  // Separable Gaussian blur of an arbitrary plane, valid region only.
  const int vh = h - 10, vw = w - 10;
  auto blur = [&](auto&& sample) {
    std::vector<double> tmp(static_cast<size_t>(h) * vw);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < vw; ++x) {
        double s = 0.0;
        for (int i = 0; i < 11; ++i) s += k[i] * sample(y, x + i);
        tmp[static_cast<size_t>(y) * vw + x] = s;
      }
    std::vector<double> out(static_cast<size_t>(vh) * vw);
    for (int y = 0; y < vh; ++y)
      for (int x = 0; x < vw; ++x) {
        double s = 0.0;
        for (int i = 0; i < 11; ++i) s += k[i] * tmp[static_cast<size_t>(y + i) * vw + x];
        out[static_cast<size_t>(y) * vw + x] = s;
      }
    return out;
  };

  auto mu_a = blur([&](int y, int x) { return at(ya, y, x); });
  auto mu_b = blur([&](int y, int x) { return at(yb, y, x); });
  auto raw_aa = blur([&](int y, int x) { return at(ya, y, x) * at(ya, y, x); });
  auto raw_bb = blur([&](int y, int x) { return at(yb, y, x) * at(yb, y, x); });
  auto raw_ab = blur([&](int y, int x) { return at(ya, y, x) * at(yb, y, x); });

  double acc = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = raw_aa[i] - ma * ma;
    const double vb = raw_bb[i] - mb * mb;
    const double cov = raw_ab[i] - ma * mb;
    acc += (2 * ma * mb + kC1) * (2 * cov + kC2) /
           ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return acc / static_cast<double>(mu_a.size());
}

}  // namespace

std::vector<PatchPair> sample_patches(const RawClip& lq, const RawClip& gt,
                                      int size, int count, uint64_t seed) {
  lq.validate();
  gt.validate();
  if (lq.frame_count() != gt.frame_count() || lq.height != gt.height ||
      lq.width != gt.width || lq.channels != gt.channels)
    throw InvalidArgument("sample_patches: clip geometry mismatch");
  if (size <= 0 || size > lq.height || size > lq.width)
    throw InvalidArgument("sample_patches: patch does not fit in frame");
  if (lq.frame_count() == 0) throw InvalidArgument("sample_patches: empty clip");

  Rng rng = Rng::derive(seed, /*stream=*/0x70617463u, /*counter=*/0);
  std::vector<PatchPair> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    const int t = static_cast<int>(rng.below(lq.frame_count()));
    const int y0 = static_cast<int>(rng.below(lq.height - size + 1));
    const int x0 = static_cast<int>(rng.below(lq.width - size + 1));
    Frame fl = to_frame(lq, t);
    Frame fg = to_frame(gt, t);
    PatchPair p;
    p.frame_index = t;
    p.y0 = y0;
    p.x0 = x0;
    p.lq = Frame::zeros({lq.channels, size, size});
    p.gt = Frame::zeros({lq.channels, size, size});
    for (int c = 0; c < lq.channels; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          p.lq.at(c, y, x) = fl.at(c, y0 + y, x0 + x);
          p.gt.at(c, y, x) = fg.at(c, y0 + y, x0 + x);
        }
    out.push_back(std::move(p));
  }
  return out;
}

MetricsReport delta_metrics(const RawClip& enhanced, const RawClip& compressed,
                            const RawClip& gt, bool use_luma) {
  if (enhanced.frame_count() != gt.frame_count() ||
      compressed.frame_count() != gt.frame_count())
    throw InvalidArgument("delta_metrics: frame count mismatch");
  MetricsReport r;
  double psum_e = 0, ssum_e = 0, psum_c = 0, ssum_c = 0;
  for (size_t i = 0; i < gt.frame_count(); ++i) {
    const Frame fe = to_frame(enhanced, i);
    const Frame fc = to_frame(compressed, i);
    const Frame fg = to_frame(gt, i);
    const double pe = psnr(fe, fg, use_luma), se = ssim(fe, fg, use_luma);
    const double pc = psnr(fc, fg, use_luma), sc = ssim(fc, fg, use_luma);
    r.per_frame_psnr.push_back(pe);
    r.per_frame_ssim.push_back(se);
    r.per_frame_psnr_compressed.push_back(pc);
    r.per_frame_ssim_compressed.push_back(sc);
    psum_e += pe;
    ssum_e += se;
    psum_c += pc;
    ssum_c += sc;
  }
  const double n = static_cast<double>(gt.frame_count());
  r.delta_psnr = (psum_e - psum_c) / n;
  r.delta_ssim = (ssum_e - ssum_c) / n;
  return r;
}

std::string metrics_to_json(const MetricsReport& r) {
  nlohmann::json j{{"delta_psnr", r.delta_psnr},
                   {"delta_ssim", r.delta_ssim},
                   {"psnr", r.per_frame_psnr},
                   {"ssim", r.per_frame_ssim},
                   {"psnr_compressed", r.per_frame_psnr_compressed},
                   {"ssim_compressed", r.per_frame_ssim_compressed}};
  return j.dump();
}

std::string metrics_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "frame,psnr,ssim,psnr_compressed,ssim_compressed\n";
  for (size_t i = 0; i < r.per_frame_psnr.size(); ++i)
    os << i << ',' << r.per_frame_psnr[i] << ',' << r.per_frame_ssim[i] << ','
       << r.per_frame_psnr_compressed[i] << ',' << r.per_frame_ssim_compressed[i]
       << '\n';
  return os.str();
}

}  // namespace crds
