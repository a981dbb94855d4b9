#pragma once

// Frame ingestion: PNM image I/O, center crop, resize, normalization, CSV
// manifests, and the synthetic bonafide/attack texture generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gipad/tensor.hpp"

namespace gipad {

/// Interleaved row-major image, values in 8-bit units unless noted.
struct Image {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int r, int c, int ch, double fill = 0.0)
      : rows(r), cols(c), channels(ch), pixels(static_cast<std::size_t>(r) * c * ch, fill) {}

  double& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * cols + c) * channels + ch]; }
  double at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
  }
};

Image read_pnm(const std::filesystem::path& path);
// Values are rounded and clamped to [0, 255]. 1 channel -> P5, 3 -> P6.
void write_pnm(const std::filesystem::path& path, const Image& img);

struct CropWindow {
  int top;
  int left;
  int side;
};
CropWindow center_crop_window(int rows, int cols);
Image center_crop(const Image& img);

Image resize_bilinear(const Image& img, int out_rows, int out_cols);

enum class PixelRange { Byte, Unit };

// Per-channel mean and std applied after mapping pixels to [0, 1].
inline constexpr double kNormMean = 0.5;
inline constexpr double kNormStd = 0.5;

/// Image -> (1, C, rows, cols) tensor with (v - 0.5) / 0.5 per channel.
Tensor4 normalize(const Image& img, PixelRange range = PixelRange::Byte);
// Inverse of normalize for sample `n`, back to 8-bit units.
Image denormalize(const Tensor4& t, int n = 0);

// Full preprocessing: center crop, resize to size x size, normalize.
Tensor4 preprocess(const Image& img, int size);

// --- Manifests -------------------------------------------------------------------

enum class Split { Train, Dev, Test };

Split parse_split(std::string_view s);
std::string_view split_name(Split s);

inline constexpr int kBonafide = 1;
inline constexpr int kAttack = 0;

int parse_label(std::string_view s);
std::string_view label_name(int label);

struct FrameRecord {
  std::string path;  // as written in the manifest
  int label = kAttack;
  Split split = Split::Train;
  std::string subject;
};

struct FrameManifest {
  std::filesystem::path root;  // relative paths resolve against this
  std::vector<FrameRecord> rows;

  std::vector<FrameRecord> split(Split s) const;
  bool has_split(Split s) const;
  std::filesystem::path resolve(const FrameRecord& r) const;
};

/// Parses `path,label,split,subject` CSV. Errors carry the line number.
/// Duplicate paths are rejected, and with subject_disjoint a subject that
/// appears in two splits is rejected.
FrameManifest load_manifest(const std::filesystem::path& path, bool subject_disjoint = true);
void write_manifest(const std::filesystem::path& path, const FrameManifest& m);

struct Batch {
  Tensor4 images;
  std::vector<int> labels;
};

// Loads and preprocesses every frame of one split, in manifest order.
Batch load_split(const FrameManifest& m, Split s, int size);

// --- Synthetic benchmark ---------------------------------------------------------

struct SynthSpec {
  std::uint64_t seed = 7;
  int train = 512;
  int dev = 128;
  int test = 128;
  int size = 64;
};

enum class AttackCue { Halftone, Moire, Banding };

/// One synthetic patch; a pure function of (seed, global index, label).
Image synth_patch(std::uint64_t seed, std::uint64_t index, int label, int size);

/// Writes outdir/{train,dev,test}/NNNNNN.ppm and outdir/manifest.csv.
/// Label alternates with the within-split index (even -> bonafide) and two
/// consecutive frames share a subject id prefixed by the split.
FrameManifest generate_synth(const SynthSpec& spec, const std::filesystem::path& outdir);

}  // namespace gipad
