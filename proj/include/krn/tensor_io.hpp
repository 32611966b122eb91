#pragma once

#include <string>
#include <string_view>

#include "krn/runtime.hpp"

namespace krn {

// Tensor files start with a text header line `f64 <rank> <d0> [<d1>]`.
// Files ending in `.bin` carry the row-major values as raw native doubles
// after the header; anything else lists them as whitespace-separated text.

View parse_tensor(std::string_view text);
std::string format_tensor(const View& v);

View read_tensor(const std::string& path);
void write_tensor(const std::string& path, const View& v);

}  // namespace krn
