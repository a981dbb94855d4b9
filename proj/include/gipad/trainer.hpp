#pragma once

// BCE objective on the softmax "live" probability, Adam, mini-batch training
// with early stopping on dev loss.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gipad/data.hpp"
#include "gipad/model.hpp"

namespace gipad {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 5;
  double label_smoothing = 0.05;
  std::uint64_t seed = 7;
  bool hflip = true;

  void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

struct BceResult {
  double loss;
  std::vector<double> grad;  // d loss / d p_i
};

/// Mean binary cross-entropy with targets y(1 - eps) + eps / 2 and p clamped
/// to [1e-7, 1 - 1e-7]. The gradient is zero where the clamp is active.
BceResult bce_loss(const std::vector<double>& p, const std::vector<int>& y, double eps);

// Gradient of the loss with respect to two-class logits (N, 2, 1, 1), given
// d loss / d p_live.
Tensor4 logit_gradient(const std::vector<double>& p, const std::vector<double>& grad_p);

struct AdamState {
  std::vector<Tensor4> m;
  std::vector<Tensor4> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update of every parameter from its grad.
void adam_step(const std::vector<Param*>& params, AdamState& state, const TrainConfig& cfg);

/// Patience counter: stop once `patience` consecutive epochs fail to reach a
/// strictly lower loss than the best so far.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  // Records a loss for the next epoch (1-based). Returns true to stop.
  bool update(double loss);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int epoch() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  int bad_ = 0;
  bool improved_ = false;
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double dev_loss;
  double dev_acc;
};

enum class StopReason { EarlyStop, MaxEpochs };

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  StopReason stop_reason = StopReason::MaxEpochs;
};

std::string stop_reason_name(StopReason r);
void write_history(const std::filesystem::path& path, const TrainHistory& h);

// p_live for every sample, evaluated in infer mode in chunks.
std::vector<double> score_images(const Model& model, const Tensor4& images, int chunk = 64);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;  // best-epoch checkpoint path
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains until early stop or max_epochs. The model ends holding the weights
/// of the best dev-loss epoch.
TrainHistory train(Model& model, const Batch& train_set, const Batch& dev_set,
                   const TrainConfig& cfg, const TrainOptions& opts = {});

}  // namespace gipad
