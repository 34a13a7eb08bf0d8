#include "varplace/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <string_view>

namespace varplace {

unsigned default_workers() {
  const char* env = std::getenv("VARPLACE_WORKERS");
  if (!env) return 1;
  std::string_view text(env);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value == 0) return 1;
  return value;
}

}  // namespace varplace
