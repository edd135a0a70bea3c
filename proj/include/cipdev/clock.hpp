#pragma once

#include <chrono>
#include <cstdint>
#include <functional>

namespace cipdev {

// Unix seconds source; injectable so tests can pin time.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace cipdev
