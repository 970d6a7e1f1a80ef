#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "rldist/common/error.hpp"
#include "rldist/taskrt/future.hpp"

namespace rldist::optimizers {

template <class T>
struct GatherResult {
  std::vector<std::size_t> indices;  // input positions of `values`, ascending
  std::vector<T> values;
  std::size_t dropped = 0;  // not finished in time, plus failed
  std::size_t failed = 0;
};

inline std::size_t keep_count(std::size_t n, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, n == 0 ? 0 : 1, n);
}

// Waits for ceil(keep_fraction * n) of the futures and discards the rest.
// Results come back in input order so reductions over them are reproducible.
template <class T, class Rep, class Period>
GatherResult<T> straggler_tolerant_gather(const std::vector<taskrt::Future<T>>& futures, double keep_fraction,
                                          std::chrono::duration<Rep, Period> timeout) {
  GatherResult<T> out;
  const std::size_t k = keep_count(futures.size(), keep_fraction);
  if (futures.empty()) return out;
  auto waited = taskrt::wait(futures, k, timeout);
  std::map<taskrt::TaskId, std::size_t> position;
  for (std::size_t i = 0; i < futures.size(); ++i) position[futures[i].task_id()] = i;
  std::vector<std::size_t> ready;
  for (const auto& f : waited.ready) ready.push_back(position.at(f.task_id()));
  std::sort(ready.begin(), ready.end());
  for (std::size_t i : ready) {
    try {
      out.values.push_back(futures[i].get());
      out.indices.push_back(i);
    } catch (const ActorUnavailable&) {
      ++out.failed;
    } catch (const MethodError&) {
      ++out.failed;
    }
  }
  out.dropped = futures.size() - out.values.size();
  return out;
}

}  // namespace rldist::optimizers
