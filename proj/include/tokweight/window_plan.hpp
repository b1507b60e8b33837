#pragma once

#include <cstddef>
#include <vector>

namespace tokweight {

/// One forward pass over [window_start, window_end) whose predictions are
/// kept for [predict_start, predict_end).
struct WindowEntry {
  std::size_t window_start = 0;
  std::size_t window_end = 0;
  std::size_t predict_start = 0;
  std::size_t predict_end = 0;

  bool operator==(const WindowEntry&) const = default;
};

/// Schedule for evaluating a long sequence with a short context: the first
/// window covers [0, n) with its natural context, later windows advance by
/// n - overlap and the last one is clamped to end at N.
struct WindowPlan {
  std::size_t length = 0;
  std::size_t context = 0;
  std::size_t overlap = 0;
  std::vector<WindowEntry> entries;
};

/// Requires 0 < overlap < context <= length; throws std::invalid_argument otherwise.
WindowPlan plan_windows(std::size_t length, std::size_t context, std::size_t overlap);

}  // namespace tokweight
