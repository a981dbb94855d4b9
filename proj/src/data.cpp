#include "gipad/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "gipad/error.hpp"
#include "gipad/ops.hpp"
#include "gipad/parallel.hpp"
#include "gipad/rng.hpp"

namespace gipad {

namespace fs = std::filesystem;

// --- PNM ---------------------------------------------------------------------

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::string magic = pnm_token(in);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw DataError(path.string() + ": not a binary PGM/PPM (magic '" + magic + "')");
  }
  int cols = 0, rows = 0, maxval = 0;
  try {
    cols = std::stoi(pnm_token(in));
    rows = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed header");
  }
  if (cols < 1 || rows < 1 || maxval < 1 || maxval > 255) {
    throw DataError(path.string() + ": unsupported dimensions or maxval");
  }
  Image img(rows, cols, channels);
  std::vector<unsigned char> raw(img.pixels.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  const double scale = 255.0 / maxval;
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] * scale;
  return img;
}

void write_pnm(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ConfigError("write_pnm: 1 or 3 channels required");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.cols << ' ' << img.rows << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::clamp(std::lround(img.pixels[i]), 0L, 255L));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("failed writing image " + path.string());
}

// --- Geometry ------------------------------------------------------------------

CropWindow center_crop_window(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ConfigError("center_crop: empty frame");
  const int side = std::min(rows, cols);
  return {(rows - side) / 2, (cols - side) / 2, side};
}

Image center_crop(const Image& img) {
  const CropWindow w = center_crop_window(img.rows, img.cols);
  Image out(w.side, w.side, img.channels);
  for (int r = 0; r < w.side; ++r)
    for (int c = 0; c < w.side; ++c)
      for (int ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) = img.at(w.top + r, w.left + c, ch);
  return out;
}

namespace {

Tensor4 to_planes(const Image& img) {
  Tensor4 t(1, img.channels, img.rows, img.cols);
  for (int ch = 0; ch < img.channels; ++ch)
    for (int r = 0; r < img.rows; ++r)
      for (int c = 0; c < img.cols; ++c) t(0, ch, r, c) = img.at(r, c, ch);
  return t;
}

Image from_planes(const Tensor4& t, int n) {
  Image img(t.h(), t.w(), t.c());
  for (int ch = 0; ch < t.c(); ++ch)
    for (int r = 0; r < t.h(); ++r)
      for (int c = 0; c < t.w(); ++c) img.at(r, c, ch) = t(n, ch, r, c);
  return img;
}

}  // namespace

Image resize_bilinear(const Image& img, int out_rows, int out_cols) {
  if (out_rows < 1 || out_cols < 1) throw ConfigError("resize: target must be >= 1");
  return from_planes(resize_bilinear(to_planes(img), out_rows, out_cols), 0);
}

Tensor4 normalize(const Image& img, PixelRange range) {
  Tensor4 t = to_planes(img);
  const double to_unit = range == PixelRange::Byte ? 1.0 / 255.0 : 1.0;
  for (double& v : t.data()) v = (v * to_unit - kNormMean) / kNormStd;
  return t;
}

Image denormalize(const Tensor4& t, int n) {
  Image img = from_planes(t, n);
  for (double& v : img.pixels) v = (v * kNormStd + kNormMean) * 255.0;
  return img;
}

Tensor4 preprocess(const Image& img, int size) {
  Image sq = center_crop(img);
  if (sq.rows != size) sq = resize_bilinear(sq, size, size);
  if (sq.channels == 1) {
    Image rgb(sq.rows, sq.cols, 3);
    for (std::size_t i = 0; i < sq.pixels.size(); ++i)
      for (int ch = 0; ch < 3; ++ch) rgb.pixels[i * 3 + ch] = sq.pixels[i];
    sq = std::move(rgb);
  }
  return normalize(sq);
}

// --- Manifest ------------------------------------------------------------------

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "train";
}

int parse_label(std::string_view s) {
  if (s == "bonafide") return kBonafide;
  if (s == "attack") return kAttack;
  throw DataError("unknown label '" + std::string(s) + "'");
}

std::string_view label_name(int label) { return label == kBonafide ? "bonafide" : "attack"; }

std::vector<FrameRecord> FrameManifest::split(Split s) const {
  std::vector<FrameRecord> out;
  for (const FrameRecord& r : rows)
    if (r.split == s) out.push_back(r);
  return out;
}

bool FrameManifest::has_split(Split s) const {
  return std::any_of(rows.begin(), rows.end(), [s](const FrameRecord& r) { return r.split == s; });
}

fs::path FrameManifest::resolve(const FrameRecord& r) const {
  const fs::path p(r.path);
  return p.is_absolute() ? p : root / p;
}

FrameManifest load_manifest(const fs::path& path, bool subject_disjoint) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  FrameManifest m;
  m.root = path.parent_path();
  std::string line;
  int lineno = 0;
  const auto fail = [&](const std::string& msg) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };
  if (!std::getline(in, line)) fail("empty manifest");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,split,subject") fail("expected header 'path,label,split,subject'");

  std::set<std::string> seen;
  std::map<std::string, Split> subject_split;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 4) fail("expected 4 fields, got " + std::to_string(f.size()));
    FrameRecord r;
    r.path = f[0];
    if (r.path.empty()) fail("empty path");
    try {
      r.label = parse_label(f[1]);
      r.split = parse_split(f[2]);
    } catch (const DataError& e) {
      fail(e.what());
    }
    r.subject = f[3];
    if (r.subject.empty()) fail("empty subject");
    if (!seen.insert(r.path).second) fail("duplicate path '" + r.path + "'");
    if (subject_disjoint) {
      auto [it, fresh] = subject_split.emplace(r.subject, r.split);
      if (!fresh && it->second != r.split) {
        fail("subject '" + r.subject + "' appears in both " + std::string(split_name(it->second)) +
             " and " + std::string(split_name(r.split)));
      }
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const FrameManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "path,label,split,subject\n";
  for (const FrameRecord& r : m.rows) {
    out << r.path << ',' << label_name(r.label) << ',' << split_name(r.split) << ',' << r.subject
        << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

Batch load_split(const FrameManifest& m, Split s, int size) {
  const std::vector<FrameRecord> rows = m.split(s);
  Batch b;
  b.images = Tensor4(static_cast<int>(rows.size()), 3, size, size);
  b.labels.resize(rows.size());
  const std::size_t plane = static_cast<std::size_t>(3) * size * size;
  parallel_for(0, static_cast<int>(rows.size()), [&](int i) {
    Tensor4 t = preprocess(read_pnm(m.resolve(rows[i])), size);
    std::copy(t.data().begin(), t.data().end(), b.images.data().begin() + i * plane);
    b.labels[i] = rows[i].label;
  });
  return b;
}

// --- Synthetic benchmark ---------------------------------------------------------

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Smooth scene shared by both classes: tinted brightness, soft blobs and a
// mild oriented gradient.
Image synth_base(Rng& rng, int size) {
  Image img(size, size, 3);
  const double brightness = rng.uniform(60.0, 190.0);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-15.0, 15.0);
  const double theta = rng.uniform(0.0, kTwoPi);
  const double slope = rng.uniform(0.0, 30.0) / size;
  const double gx = std::cos(theta) * slope;
  const double gy = std::sin(theta) * slope;

  struct Blob {
    double r, c, inv2s2, amp[3];
  };
  std::vector<Blob> blobs(3 + rng.uniform_int(4));
  for (Blob& b : blobs) {
    b.r = rng.uniform(0.0, size);
    b.c = rng.uniform(0.0, size);
    const double sigma = rng.uniform(size / 8.0, size / 3.0);
    b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double amp = rng.uniform(15.0, 35.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    for (double& a : b.amp) a = amp * rng.uniform(0.8, 1.2);
  }
  const double mid = (size - 1) / 2.0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double grad = gx * (c - mid) + gy * (r - mid);
      for (int ch = 0; ch < 3; ++ch) {
        double v = brightness + tint[ch] + grad;
        for (const Blob& b : blobs) {
          const double d2 = (r - b.r) * (r - b.r) + (c - b.c) * (c - b.c);
          v += b.amp[ch] * std::exp(-d2 * b.inv2s2);
        }
        img.at(r, c, ch) = v;
      }
    }
  return img;
}

// Zero-mean high-frequency overlay imitating print or screen artifacts.
void add_attack_cue(Image& img, Rng& rng) {
  const auto cue = static_cast<AttackCue>(rng.uniform_int(3));
  const double amp = rng.uniform(35.0, 55.0);
  const double phase_r = rng.uniform(0.0, kTwoPi);
  const double phase_c = rng.uniform(0.0, kTwoPi);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  double f1 = 0, f2 = 0;
  if (cue == AttackCue::Halftone) {
    f1 = 1.0 / rng.uniform(2.5, 4.0);
  } else if (cue == AttackCue::Moire) {
    f1 = rng.uniform(0.28, 0.42);
    f2 = f1 + rng.uniform(0.02, 0.05);
  } else {
    f1 = 1.0 / rng.uniform(2.2, 3.5);
  }
  const double band_f = rng.uniform(1.0, 3.0) / img.rows;
  const double chroma[3] = {rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15),
                            rng.uniform(0.85, 1.15)};
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      double v = 0.0;
      const double along = ct * c + st * r;
      const double across = -st * c + ct * r;
      switch (cue) {
        case AttackCue::Halftone:
          v = std::cos(kTwoPi * f1 * along + phase_r) * std::cos(kTwoPi * f1 * across + phase_c);
          break;
        case AttackCue::Moire:
          v = 0.5 * (std::sin(kTwoPi * f1 * along + phase_r) +
                     std::sin(kTwoPi * f2 * (ct * r - st * c) + phase_c));
          break;
        case AttackCue::Banding:
          // stripes modulated by a slow specular band
          v = std::sin(kTwoPi * f1 * along + phase_r) *
              (0.6 + 0.4 * std::cos(kTwoPi * band_f * across + phase_c));
          break;
      }
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) += amp * chroma[ch] * v;
    }
}

}  // namespace

Image synth_patch(std::uint64_t seed, std::uint64_t index, int label, int size) {
  if (size < 1) throw ConfigError("synth: patch size must be >= 1");
  Rng rng(mix_seed(seed, index));
  Image img = synth_base(rng, size);
  if (label == kAttack) add_attack_cue(img, rng);
  for (double& v : img.pixels) v = std::clamp(std::round(v + 2.0 * rng.normal()), 0.0, 255.0);
  return img;
}

FrameManifest generate_synth(const SynthSpec& spec, const fs::path& outdir) {
  if (spec.train < 1 || spec.dev < 1 || spec.test < 1) {
    throw ConfigError("synth: every split count must be >= 1");
  }
  FrameManifest m;
  m.root = outdir;
  const std::pair<Split, int> splits[] = {
      {Split::Train, spec.train}, {Split::Dev, spec.dev}, {Split::Test, spec.test}};
  std::uint64_t base = 0;
  std::vector<std::uint64_t> global;
  for (const auto& [split, count] : splits) {
    const std::string name(split_name(split));
    std::error_code ec;
    fs::create_directories(outdir / name, ec);
    if (ec) throw DataError("cannot create " + (outdir / name).string() + ": " + ec.message());
    for (int i = 0; i < count; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "%06d.ppm", i);
      char subject[48];
      std::snprintf(subject, sizeof subject, "%s_s%05d", name.c_str(), i / 2);
      m.rows.push_back({name + "/" + file, i % 2 == 0 ? kBonafide : kAttack, split, subject});
      global.push_back(base + static_cast<std::uint64_t>(i));
    }
    base += static_cast<std::uint64_t>(count);
  }
  parallel_for(0, static_cast<int>(m.rows.size()), [&](int i) {
    const FrameRecord& r = m.rows[i];
    write_pnm(outdir / r.path, synth_patch(spec.seed, global[i], r.label, spec.size));
  });
  write_manifest(outdir / "manifest.csv", m);
  return m;
}

}  // namespace gipad
