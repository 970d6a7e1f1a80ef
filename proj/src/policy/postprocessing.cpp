#include "rldist/policy/postprocessing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rldist::policy {

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> value_preds,
                      std::span<const double> dones, double bootstrap_value, const AdvantageConfig& cfg) {
  const std::size_t n = rewards.size();
  if (value_preds.size() != n || dones.size() != n) throw ShapeMismatch("gae inputs are not row-aligned");
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_value = bootstrap_value;
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] != 0.0 ? 0.0 : 1.0;
    const double delta = rewards[i] + cfg.gamma * next_value * live - value_preds[i];
    running = delta + cfg.gamma * cfg.lambda * live * running;
    out.advantages[i] = running;
    out.value_targets[i] = running + value_preds[i];
    next_value = value_preds[i];
  }
  return out;
}

std::vector<double> n_step_returns(std::span<const double> rewards, std::span<const double> dones,
                                   std::span<const double> bootstrap, int n, double gamma) {
  const std::size_t rows = rewards.size();
  if (n < 1) throw ShapeMismatch("n must be >= 1");
  if (dones.size() != rows || bootstrap.size() != rows + 1) throw ShapeMismatch("n-step inputs are not aligned");
  std::vector<double> out(rows);
  for (std::size_t t = 0; t < rows; ++t) {
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(n), rows - t);
    double acc = 0.0;
    double scale = 1.0;
    bool terminal = false;
    std::size_t k = 0;
    for (; k < m; ++k) {
      acc += scale * rewards[t + k];
      scale *= gamma;
      if (dones[t + k] != 0.0) {
        terminal = true;
        break;
      }
    }
    if (!terminal) acc += scale * bootstrap[t + m];
    out[t] = acc;
  }
  return out;
}

double epsilon_at(const ExplorationSchedule& s, std::int64_t t) {
  if (s.decay_steps <= 0 || t >= s.decay_steps) return s.eps_end;
  const double frac = static_cast<double>(std::max<std::int64_t>(t, 0)) / static_cast<double>(s.decay_steps);
  return s.eps_start + frac * (s.eps_end - s.eps_start);
}

std::vector<std::pair<std::size_t, std::size_t>> episode_segments(const SampleBatch& batch) {
  std::vector<std::pair<std::size_t, std::size_t>> segs;
  const auto starts = episode_starts(batch);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    segs.emplace_back(starts[i], i + 1 < starts.size() ? starts[i + 1] : batch.rows());
  }
  return segs;
}

SampleBatch n_step_transform(const SampleBatch& batch, int n, double gamma) {
  if (n < 1) throw ShapeMismatch("n must be >= 1");
  SampleBatch out = batch;
  if (batch.empty()) return out;
  const auto& rewards = batch.f64(col::kRewards);
  const auto& dones = batch.f64(col::kDones);
  const auto& new_obs = batch.f64(col::kNewObs);
  const std::size_t w = batch.width(col::kNewObs);
  std::vector<double> r_out(batch.rows()), d_out(batch.rows()), disc(batch.rows()), obs_out(new_obs.size());
  for (const auto& [b, e] : episode_segments(batch)) {
    for (std::size_t t = b; t < e; ++t) {
      const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(n), e - t);
      double acc = 0.0;
      double scale = 1.0;
      std::size_t last = t;
      bool terminal = false;
      for (std::size_t k = 0; k < m; ++k) {
        last = t + k;
        acc += scale * rewards[last];
        scale *= gamma;
        if (dones[last] != 0.0) {
          terminal = true;
          break;
        }
      }
      r_out[t] = acc;
      d_out[t] = terminal ? 1.0 : 0.0;
      disc[t] = terminal ? 0.0 : scale;
      std::copy_n(new_obs.begin() + static_cast<std::ptrdiff_t>(last * w), w,
                  obs_out.begin() + static_cast<std::ptrdiff_t>(t * w));
    }
  }
  out.set_f64(col::kRewards, 1, std::move(r_out));
  out.set_f64(col::kDones, 1, std::move(d_out));
  out.set_f64(col::kDiscount, 1, std::move(disc));
  out.set_f64(col::kNewObs, w, std::move(obs_out));
  return out;
}

void standardize(std::vector<double>& values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double scale = sd > 1e-8 ? 1.0 / sd : 1.0;
  for (double& v : values) v = (v - mean) * scale;
}

}  // namespace rldist::policy
