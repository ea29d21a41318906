#include "featprobe/npy.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "featprobe/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

namespace featprobe::npy {

namespace {

constexpr unsigned char kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};

struct Header {
  Dtype dtype;
  std::vector<std::int64_t> shape;
};

// The header dict as numpy writes it: three known keys, any order, simple
// quoting. Example:
//   {'descr': '<f8', 'fortran_order': False, 'shape': (128, 16), }
Header parse_header(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() &&
           (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\n'))
      ++pos;
  };
  auto fail = [&](const std::string& what) -> void {
    throw FormatError("npy: " + what + " in header of " + path);
  };
  skip_ws();
  if (pos >= text.size() || text[pos] != '{') fail("missing opening brace");
  ++pos;

  bool have_descr = false, have_order = false, have_shape = false;
  Header h;
  for (;;) {
    skip_ws();
    if (pos < text.size() && text[pos] == '}') break;
    if (pos >= text.size() || text[pos] != '\'') fail("expected quoted key");
    std::size_t end = text.find('\'', pos + 1);
    if (end == std::string::npos) fail("unterminated key");
    std::string key = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    skip_ws();
    if (pos >= text.size() || text[pos] != ':') fail("expected ':' after key");
    ++pos;
    skip_ws();

    if (key == "descr") {
      if (pos >= text.size() || text[pos] != '\'') fail("descr is not a string");
      std::size_t dend = text.find('\'', pos + 1);
      if (dend == std::string::npos) fail("unterminated descr");
      std::string descr = text.substr(pos + 1, dend - pos - 1);
      pos = dend + 1;
      if (descr == "<f4")
        h.dtype = Dtype::f32;
      else if (descr == "<f8")
        h.dtype = Dtype::f64;
      else
        fail("unsupported descr '" + descr + "' (need '<f4' or '<f8')");
      have_descr = true;
    } else if (key == "fortran_order") {
      if (text.compare(pos, 5, "False") == 0) {
        pos += 5;
      } else if (text.compare(pos, 4, "True") == 0) {
        fail("fortran_order True is not supported");
      } else {
        fail("fortran_order is not a boolean");
      }
      have_order = true;
    } else if (key == "shape") {
      if (pos >= text.size() || text[pos] != '(') fail("shape is not a tuple");
      ++pos;
      for (;;) {
        skip_ws();
        if (pos < text.size() && text[pos] == ')') {
          ++pos;
          break;
        }
        std::size_t digits = 0;
        std::int64_t v = 0;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
          v = v * 10 + (text[pos] - '0');
          ++pos;
          ++digits;
        }
        if (digits == 0) fail("shape entry is not an integer");
        h.shape.push_back(v);
        skip_ws();
        if (pos < text.size() && text[pos] == ',') ++pos;
      }
      have_shape = true;
    } else {
      fail("unknown header key '" + key + "'");
    }
    skip_ws();
    if (pos < text.size() && text[pos] == ',') ++pos;
  }
  if (!have_descr) fail("missing descr");
  if (!have_order) fail("missing fortran_order");
  if (!have_shape) fail("missing shape");
  if (h.shape.size() != 2 && h.shape.size() != 3)
    fail("shape must be (N, D) or (N, T, D), got rank " +
         std::to_string(h.shape.size()));
  for (std::int64_t d : h.shape)
    if (d <= 0) fail("shape has a non-positive dimension");
  return h;
}

Header read_header(std::ifstream& f, const std::string& path) {
  unsigned char magic[6];
  f.read(reinterpret_cast<char*>(magic), 6);
  if (!f || std::memcmp(magic, kMagic, 6) != 0)
    throw FormatError("npy: bad magic in " + path);
  unsigned char ver[2];
  f.read(reinterpret_cast<char*>(ver), 2);
  if (!f || ver[0] != 1 || ver[1] != 0)
    throw FormatError("npy: unsupported format version " +
                      std::to_string(int(ver[0])) + "." +
                      std::to_string(int(ver[1])) + " in " + path +
                      " (need 1.0)");
  unsigned char lenb[2];
  f.read(reinterpret_cast<char*>(lenb), 2);
  if (!f) throw FormatError("npy: truncated header length in " + path);
  std::size_t hlen = static_cast<std::size_t>(lenb[0]) |
                     (static_cast<std::size_t>(lenb[1]) << 8);
  std::string text(hlen, '\0');
  f.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw FormatError("npy: truncated header in " + path);
  return parse_header(text, path);
}

}  // namespace

Array load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("npy: cannot open " + path);
  Header h = read_header(f, path);

  std::int64_t count = 1;
  for (std::int64_t d : h.shape) count *= d;
  std::size_t item = h.dtype == Dtype::f32 ? 4 : 8;

  Array out;
  out.shape = h.shape;
  out.stored = h.dtype;
  out.data.resize(static_cast<std::size_t>(count));
  if (h.dtype == Dtype::f64) {
    f.read(reinterpret_cast<char*>(out.data.data()),
           static_cast<std::streamsize>(count * 8));
  } else {
    std::vector<float> tmp(static_cast<std::size_t>(count));
    f.read(reinterpret_cast<char*>(tmp.data()),
           static_cast<std::streamsize>(count * 4));
    for (std::size_t i = 0; i < tmp.size(); ++i)
      out.data[i] = static_cast<double>(tmp[i]);
  }
  if (!f)
    throw FormatError("npy: payload shorter than header shape implies in " +
                      path);
  char extra;
  if (f.read(&extra, 1))
    throw FormatError("npy: trailing bytes after payload in " + path);
  (void)item;

  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!std::isfinite(out.data[i]))
      throw DataError("npy: non-finite value at flat index " +
                      std::to_string(i) + " in " + path);
  }
  return out;
}

std::vector<std::int64_t> peek_shape(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("npy: cannot open " + path);
  return read_header(f, path).shape;
}

void save(const std::string& path, const std::vector<std::int64_t>& shape,
          const double* data, Dtype dtype, bool overwrite) {
  if (shape.size() != 2 && shape.size() != 3)
    throw ConfigError("npy: only rank-2 or rank-3 arrays are written, got rank " +
                      std::to_string(shape.size()));
  std::int64_t count = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw ConfigError("npy: non-positive dimension in save shape");
    count *= d;
  }
  if (!overwrite) {
    std::ifstream probe(path, std::ios::binary);
    if (probe.good()) throw IoError("npy: refusing to overwrite " + path);
  }

  std::ostringstream dict;
  dict << "{'descr': '" << (dtype == Dtype::f32 ? "<f4" : "<f8")
       << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) dict << ", ";
    dict << shape[i];
  }
  dict << "), }";
  std::string d = dict.str();
  // Pad so the payload starts on a 64-byte boundary, closing with newline.
  std::size_t prefix = 6 + 2 + 2;
  std::size_t total = prefix + d.size() + 1;
  std::size_t pad = (64 - total % 64) % 64;
  d.append(pad, ' ');
  d.push_back('\n');

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("npy: cannot open " + tmp + " for writing");
    f.write(reinterpret_cast<const char*>(kMagic), 6);
    unsigned char ver[2] = {1, 0};
    f.write(reinterpret_cast<const char*>(ver), 2);
    unsigned char lenb[2] = {static_cast<unsigned char>(d.size() & 0xff),
                             static_cast<unsigned char>((d.size() >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(lenb), 2);
    f.write(d.data(), static_cast<std::streamsize>(d.size()));
    if (dtype == Dtype::f64) {
      f.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * 8));
    } else {
      std::vector<float> tmpv(static_cast<std::size_t>(count));
      for (std::int64_t i = 0; i < count; ++i)
        tmpv[static_cast<std::size_t>(i)] = static_cast<float>(data[i]);
      f.write(reinterpret_cast<const char*>(tmpv.data()),
              static_cast<std::streamsize>(count * 4));
    }
    if (!f) throw IoError("npy: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("npy: cannot move " + tmp + " into place at " + path);
}

}  // namespace featprobe::npy
