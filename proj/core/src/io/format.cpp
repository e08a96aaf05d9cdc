// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/io/format.hpp"

#include <charconv>

namespace depthrnn::io {

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

}  // namespace depthrnn::io
