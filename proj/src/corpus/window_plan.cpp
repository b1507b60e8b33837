#include "tokweight/window_plan.hpp"

#include <stdexcept>
#include <string>

namespace tokweight {

WindowPlan plan_windows(std::size_t length, std::size_t context, std::size_t overlap) {
  if (overlap == 0 || overlap >= context || context > length) {
    throw std::invalid_argument("plan_windows needs 0 < overlap < context <= length, got N=" +
                                std::to_string(length) + " n=" + std::to_string(context) +
                                " o=" + std::to_string(overlap));
  }
  WindowPlan plan{length, context, overlap, {}};
  plan.entries.push_back({0, context, 0, context});
  std::size_t covered = context;
  while (covered < length) {
    std::size_t start = covered - overlap;
    std::size_t end = start + context;
    if (end > length) {
      end = length;
      start = length - context;
    }
    plan.entries.push_back({start, end, covered, end});
    covered = end;
  }
  return plan;
}

}  // namespace tokweight
