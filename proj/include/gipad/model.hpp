#pragma once

// MobileNetV3-Large backbone with optional group-involution blocks, GAP and a
// linear classifier head.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gipad/layers.hpp"

namespace gipad {

enum class Placement { None, Begin, End, Both };

Placement parse_placement(std::string_view name);
std::string_view placement_name(Placement p);

struct ModelConfig {
  int groups = 120;
  int reduce = 4;
  int gi_kernel = 5;
  Placement placement = Placement::End;
  double width_multiplier = 1.0;
  int input_size = 256;
  int num_classes = 2;
  double label_smoothing = 0.05;

  bool has_begin() const { return placement == Placement::Begin || placement == Placement::Both; }
  bool has_end() const { return placement == Placement::End || placement == Placement::Both; }

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

// Rounds c * width to the nearest multiple of 8, never dropping more than 10%.
int make_divisible(double value, int divisor = 8);

int stem_channels(const ModelConfig& cfg);
int last_channels(const ModelConfig& cfg);
int begin_groups(const ModelConfig& cfg);

/// Parameters added by one GI block on C channels: generator squeeze,
/// generator BN, expand weights and bias, and the trailing BN.
std::int64_t gi_block_params(int channels, int reduce, int groups, int k);

class Model {
 public:
  explicit Model(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Logits of shape (N, num_classes, 1, 1).
  Tensor4 forward(const Tensor4& x, Mode mode);
  // Back-propagates d loss / d logits; accumulates parameter gradients and
  // returns the input gradient.
  Tensor4 backward(const Tensor4& grad_logits);
  Tensor4 infer(const Tensor4& x, FieldSink* sink = nullptr) const;

  std::vector<Param*> params();
  std::vector<NamedBuffer> buffers();
  void zero_grad();
  std::int64_t param_count();

  std::vector<CostEntry> cost_entries(int input_size) const;

  Sequential& trunk() { return trunk_; }
  Sequential& classifier() { return classifier_; }
  Linear& head() { return *head_; }
  const std::vector<GroupInvolutionBlock*>& gi_blocks() const { return gi_blocks_; }

 private:
  void check_input(const Tensor4& x) const;

  ModelConfig cfg_;
  Sequential trunk_;
  Sequential classifier_;
  Linear* head_ = nullptr;
  std::vector<GroupInvolutionBlock*> gi_blocks_;
};

Model build_model(const ModelConfig& cfg, Rng& rng);

std::int64_t param_count(Model& model);
// Per-sample FLOPs at the given square resolution (1 MAC = 2 FLOPs).
std::int64_t model_flops(const Model& model, int input_size);
// FLOPs of fully connected layers (SE and head); independent of resolution.
std::int64_t linear_flops(const Model& model, int input_size);

// Converts (N, 2, 1, 1) logits into softmax probabilities of class 1.
std::vector<double> live_probability(const Tensor4& logits);

/// Grad-CAM over the output of `features`: channel weights are the spatial
/// mean of d logit[class] / dA, the map is relu(sum_c w_c A_c) divided by its
/// maximum (all zeros when the maximum is not positive), then bilinearly
/// resized to the input size. `input` must hold a single sample; the result
/// has shape (1, 1, H, W).
Tensor4 gradcam(Layer& features, Layer& classifier, const Tensor4& input, int class_index);
Tensor4 gradcam(Model& model, const Tensor4& input, int class_index);

// Map construction from a feature map and its gradient, before resizing.
Tensor4 gradcam_map(const Tensor4& features, const Tensor4& grad_features);

void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace gipad
