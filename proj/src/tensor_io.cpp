#include "krn/tensor_io.hpp"

#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "krn/error.hpp"
#include "krn/frontend.hpp"

namespace krn {

namespace {

bool is_binary(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0;
}

std::vector<std::int64_t> parse_header(const std::string& line) {
  std::istringstream in(line);
  std::string kind;
  int rank = 0;
  if (!(in >> kind >> rank) || kind != "f64") throw Error(ErrorKind::Io, "tensor header must start with 'f64 <rank>'");
  if (rank != 1 && rank != 2) throw Error(ErrorKind::Io, "tensor rank must be 1 or 2");
  std::vector<std::int64_t> extents(static_cast<std::size_t>(rank));
  for (auto& e : extents)
    if (!(in >> e) || e < 0) throw Error(ErrorKind::Io, "tensor header needs " + std::to_string(rank) + " extents");
  std::string extra;
  if (in >> extra) throw Error(ErrorKind::Io, "unexpected '" + extra + "' in tensor header");
  return extents;
}

std::string header(const View& v) {
  std::string out = "f64 " + std::to_string(v.rank());
  for (std::int64_t e : v.extents()) out += " " + std::to_string(e);
  return out + "\n";
}

std::size_t count(const std::vector<std::int64_t>& extents) {
  std::size_t n = 1;
  for (auto e : extents) n *= static_cast<std::size_t>(e);
  return n;
}

}  // namespace

View parse_tensor(std::string_view text) {
  std::size_t nl = text.find('\n');
  auto extents = parse_header(std::string(text.substr(0, nl)));
  std::vector<double> values;
  values.reserve(count(extents));
  std::size_t pos = nl == std::string_view::npos ? text.size() : nl + 1;
  while (pos < text.size()) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos >= text.size()) break;
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    if (ec != std::errc()) throw Error(ErrorKind::Io, "bad number in tensor data at byte " + std::to_string(pos));
    values.push_back(v);
    pos = static_cast<std::size_t>(ptr - text.data());
  }
  if (values.size() != count(extents))
    throw Error(ErrorKind::Io, "tensor declares " + std::to_string(count(extents)) + " values but holds " +
                                   std::to_string(values.size()));
  return View(extents, std::move(values));
}

std::string format_tensor(const View& v) {
  std::string out = header(v);
  std::int64_t row = v.rank() == 2 ? v.extent(1) : v.extent(0);
  const double* d = v.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += format_number(d[i]);
    out += (row > 0 && (static_cast<std::int64_t>(i) + 1) % row == 0) ? "\n" : " ";
  }
  return out;
}

View read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  if (!is_binary(path)) {
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_tensor(ss.str());
  }
  std::string line;
  std::getline(in, line);
  auto extents = parse_header(line);
  std::vector<double> values(count(extents));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != values.size() * sizeof(double))
    throw Error(ErrorKind::Io, "'" + path + "' is shorter than its header says");
  return View(extents, std::move(values));
}

void write_tensor(const std::string& path, const View& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  if (is_binary(path)) {
    out << header(v);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  } else {
    out << format_tensor(v);
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

}  // namespace krn
