#include "gipad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gipad/error.hpp"

namespace gipad {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must be in [0, 1)");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
}

BceResult bce_loss(const std::vector<double>& p, const std::vector<int>& y, double eps) {
  if (p.size() != y.size() || p.empty()) throw ConfigError("bce_loss: size mismatch or empty batch");
  const double n = static_cast<double>(p.size());
  BceResult r{0.0, std::vector<double>(p.size(), 0.0)};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = y[i] * (1.0 - eps) + eps / 2.0;
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    r.loss -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    if (q == p[i]) r.grad[i] = (-t / q + (1.0 - t) / (1.0 - q)) / n;
  }
  r.loss /= n;
  return r;
}

Tensor4 logit_gradient(const std::vector<double>& p, const std::vector<double>& grad_p) {
  Tensor4 g(static_cast<int>(p.size()), 2, 1, 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = grad_p[i] * p[i] * (1.0 - p[i]);
    g(static_cast<int>(i), 1, 0, 0) = d;
    g(static_cast<int>(i), 0, 0, 0) = -d;
  }
  return g;
}

void adam_step(const std::vector<Param*>& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const Param* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw InternalError("adam_step: state/param mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->value.data();
    auto g = params[k]->grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

bool EarlyStopper::update(double loss) {
  ++epoch_;
  improved_ = epoch_ == 1 || loss < best_loss_;
  if (improved_) {
    best_loss_ = loss;
    best_epoch_ = epoch_;
    bad_ = 0;
  } else {
    ++bad_;
  }
  return bad_ >= patience_;
}

std::string stop_reason_name(StopReason r) {
  return r == StopReason::EarlyStop ? "early_stop" : "max_epochs";
}

void write_history(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write history " + path.string());
  out << "epoch,train_loss,dev_loss,dev_acc\n";
  char buf[128];
  for (const EpochRecord& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.dev_loss,
                  e.dev_acc);
    out << buf;
  }
}

namespace {

Tensor4 gather(const Tensor4& images, const std::vector<int>& idx, std::size_t lo, std::size_t hi) {
  const Shape4 s = images.shape();
  const std::size_t plane = static_cast<std::size_t>(s.c) * s.h * s.w;
  Tensor4 out(static_cast<int>(hi - lo), s.c, s.h, s.w);
  for (std::size_t b = lo; b < hi; ++b) {
    auto src = images.data().subspan(static_cast<std::size_t>(idx[b]) * plane, plane);
    std::copy(src.begin(), src.end(), out.data().begin() + (b - lo) * plane);
  }
  return out;
}

void flip_horizontal(Tensor4& t, int n) {
  for (int c = 0; c < t.c(); ++c)
    for (int i = 0; i < t.h(); ++i) {
      double* row = t.plane(n, c) + static_cast<std::size_t>(i) * t.w();
      std::reverse(row, row + t.w());
    }
}

struct Snapshot {
  std::vector<Tensor4> values;

  static Snapshot take(Model& m) {
    Snapshot s;
    for (Param* p : m.params()) s.values.push_back(p->value);
    for (NamedBuffer& b : m.buffers()) s.values.push_back(*b.tensor);
    return s;
  }
  void restore(Model& m) const {
    std::size_t k = 0;
    for (Param* p : m.params()) p->value = values[k++];
    for (NamedBuffer& b : m.buffers()) *b.tensor = values[k++];
  }
};

}  // namespace

std::vector<double> score_images(const Model& model, const Tensor4& images, int chunk) {
  std::vector<double> out;
  out.reserve(images.n());
  std::vector<int> idx(images.n());
  std::iota(idx.begin(), idx.end(), 0);
  for (int lo = 0; lo < images.n(); lo += chunk) {
    const int hi = std::min(images.n(), lo + chunk);
    const std::vector<double> p = live_probability(model.infer(gather(images, idx, lo, hi)));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TrainHistory train(Model& model, const Batch& train_set, const Batch& dev_set,
                   const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.labels.empty()) throw ConfigError("train: empty train split");
  if (dev_set.labels.empty()) throw ConfigError("train: empty dev split");

  Rng rng(mix_seed(cfg.seed, 1));
  AdamState adam;
  EarlyStopper stopper(cfg.patience);
  TrainHistory history;
  Snapshot best;
  const std::vector<Param*> params = model.params();
  std::vector<int> order(train_set.labels.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<int>(order));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      // batch statistics are undefined for a single sample
      if (hi - lo < 2) continue;
      Tensor4 x = gather(train_set.images, order, lo, hi);
      std::vector<int> y(hi - lo);
      for (std::size_t b = lo; b < hi; ++b) {
        y[b - lo] = train_set.labels[order[b]];
        if (cfg.hflip && rng.bernoulli(0.5)) flip_horizontal(x, static_cast<int>(b - lo));
      }
      model.zero_grad();
      const Tensor4 logits = model.forward(x, Mode::Train);
      const std::vector<double> p = live_probability(logits);
      const BceResult bce = bce_loss(p, y, cfg.label_smoothing);
      if (!std::isfinite(bce.loss)) throw InternalError("train: non-finite loss");
      model.backward(logit_gradient(p, bce.grad));
      adam_step(params, adam, cfg);
      loss_sum += bce.loss * static_cast<double>(hi - lo);
      seen += hi - lo;
    }

    const std::vector<double> p_dev = score_images(model, dev_set.images);
    const double dev_loss = bce_loss(p_dev, dev_set.labels, cfg.label_smoothing).loss;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p_dev.size(); ++i) {
      correct += (p_dev[i] >= 0.5 ? kBonafide : kAttack) == dev_set.labels[i];
    }
    const EpochRecord rec{epoch, seen ? loss_sum / seen : 0.0, dev_loss,
                          static_cast<double>(correct) / p_dev.size()};
    history.epochs.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);

    const bool stop = stopper.update(dev_loss);
    if (stopper.improved()) {
      best = Snapshot::take(model);
      if (opts.checkpoint) save_checkpoint(*opts.checkpoint, model);
    }
    if (stop) {
      history.stop_reason = StopReason::EarlyStop;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  best.restore(model);
  return history;
}

}  // namespace gipad
