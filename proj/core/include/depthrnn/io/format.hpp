// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_IO_FORMAT_HPP_
#define DEPTHRNN_IO_FORMAT_HPP_

#include <string>

namespace depthrnn::io {

// Shortest round-trip decimal form of a double ("%.17g"), locale-free.
std::string format_double(double x);

}  // namespace depthrnn::io

#endif  // DEPTHRNN_IO_FORMAT_HPP_
