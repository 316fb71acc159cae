#include "scanssc/formats.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace scanssc::io {

namespace {

constexpr uint16_t kFormatVersion = 1;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const uint8_t* p;
  const uint8_t* end;
  std::string path;

  void need(size_t n) const {
    if (static_cast<size_t>(end - p) < n) fail(path + ": truncated file");
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    const uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                       (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    p += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return *p++;
  }
};

uint32_t payload_crc(const std::string& payload) {
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail("write failed for " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

float to_f32(double v) { return static_cast<float>(v); }

}  // namespace

std::string read_text_file(const std::string& path) { return read_file(path); }

void write_text_file(const std::string& path, const std::string& content) {
  write_file(path, content);
}

void write_voxel_grid(const std::string& path, const LabeledGrid& grid) {
  if (static_cast<int64_t>(grid.labels.size()) != grid.voxels())
    fail("label payload does not match grid dims");
  uint16_t max_label = 0;
  for (uint16_t l : grid.labels) max_label = std::max(max_label, l);
  const uint8_t label_width = max_label > 0xff ? 2 : 1;

  std::string payload;
  payload.reserve(grid.labels.size() * label_width);
  for (uint16_t l : grid.labels) {
    payload.push_back(static_cast<char>(l & 0xff));
    if (label_width == 2) payload.push_back(static_cast<char>((l >> 8) & 0xff));
  }

  std::string out = "SSCG";
  put_u16(out, kFormatVersion);
  for (int i = 0; i < 3; ++i) put_u32(out, static_cast<uint32_t>(grid.dims[static_cast<size_t>(i)]));
  out.push_back(static_cast<char>(label_width));
  out += payload;
  put_u32(out, payload_crc(payload));
  write_file(path, out);
}

LabeledGrid read_voxel_grid(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
           reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size(), path};
  r.need(4);
  if (std::memcmp(r.p, "SSCG", 4) != 0) fail(path + ": not a voxel grid file (bad magic)");
  r.p += 4;
  const uint16_t version = r.u16();
  if (version != kFormatVersion) fail(path + ": unsupported version " + std::to_string(version));

  LabeledGrid g;
  for (int i = 0; i < 3; ++i) g.dims[static_cast<size_t>(i)] = r.u32();
  const uint8_t label_width = r.u8();
  if (label_width != 1 && label_width != 2) fail(path + ": bad label width");
  const int64_t n = g.voxels();
  r.need(static_cast<size_t>(n) * label_width + 4);

  const uint8_t* payload = r.p;
  g.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    if (label_width == 1)
      g.labels[static_cast<size_t>(i)] = payload[i];
    else
      g.labels[static_cast<size_t>(i)] =
          static_cast<uint16_t>(payload[2 * i] | (payload[2 * i + 1] << 8));
  }
  r.p += static_cast<size_t>(n) * label_width;
  const uint32_t stored = r.u32();
  const uint32_t computed = static_cast<uint32_t>(crc32(
      0L, reinterpret_cast<const Bytef*>(payload), static_cast<uInt>(n * label_width)));
  if (stored != computed) fail(path + ": CRC mismatch (file corrupted)");
  if (r.p != r.end) fail(path + ": trailing bytes after CRC");
  return g;
}

void write_logit_grid(const std::string& path, const LogitGrid& grid) {
  const int64_t n = grid.dims[0] * grid.dims[1] * grid.dims[2] * grid.classes;
  if (static_cast<int64_t>(grid.logits.size()) != n)
    fail("logit payload does not match grid dims");

  std::string payload;
  payload.reserve(static_cast<size_t>(n) * 4);
  for (double v : grid.logits) {
    if (!std::isfinite(v)) fail("logit grid contains non-finite values");
    const float fv = to_f32(v);
    uint32_t bits;
    std::memcpy(&bits, &fv, 4);
    for (int i = 0; i < 4; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }

  std::string out = "SSCL";
  put_u16(out, kFormatVersion);
  for (int i = 0; i < 3; ++i) put_u32(out, static_cast<uint32_t>(grid.dims[static_cast<size_t>(i)]));
  put_u32(out, static_cast<uint32_t>(grid.classes));
  out += payload;
  put_u32(out, payload_crc(payload));
  write_file(path, out);
}

LogitGrid read_logit_grid(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
           reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size(), path};
  r.need(4);
  if (std::memcmp(r.p, "SSCL", 4) != 0) fail(path + ": not a logit grid file (bad magic)");
  r.p += 4;
  const uint16_t version = r.u16();
  if (version != kFormatVersion) fail(path + ": unsupported version " + std::to_string(version));

  LogitGrid g;
  for (int i = 0; i < 3; ++i) g.dims[static_cast<size_t>(i)] = r.u32();
  g.classes = r.u32();
  const int64_t n = g.dims[0] * g.dims[1] * g.dims[2] * g.classes;
  r.need(static_cast<size_t>(n) * 4 + 4);
  const uint8_t* payload = r.p;
  g.logits.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    uint32_t bits = static_cast<uint32_t>(payload[4 * i]) |
                    (static_cast<uint32_t>(payload[4 * i + 1]) << 8) |
                    (static_cast<uint32_t>(payload[4 * i + 2]) << 16) |
                    (static_cast<uint32_t>(payload[4 * i + 3]) << 24);
    float fv;
    std::memcpy(&fv, &bits, 4);
    if (!std::isfinite(fv)) fail(path + ": non-finite logit value");
    g.logits[static_cast<size_t>(i)] = static_cast<double>(fv);
  }
  r.p += static_cast<size_t>(n) * 4;
  const uint32_t stored = r.u32();
  const uint32_t computed = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload), static_cast<uInt>(n * 4)));
  if (stored != computed) fail(path + ": CRC mismatch (file corrupted)");
  if (r.p != r.end) fail(path + ": trailing bytes after CRC");
  return g;
}

// ---------------------------------------------------------------------------
// CSV interop
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

int64_t parse_i64(const std::string& s, const std::string& path) {
  int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail(path + ": bad integer '" + s + "'");
  return v;
}

double parse_f64(const std::string& s, const std::string& path) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    fail(path + ": bad number '" + s + "'");
  }
  if (used != s.size()) fail(path + ": bad number '" + s + "'");
  return v;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void write_voxel_grid_csv(const std::string& path, const LabeledGrid& grid) {
  std::string out = "x,y,z,label\n";
  for (int64_t x = 0; x < grid.dims[0]; ++x)
    for (int64_t y = 0; y < grid.dims[1]; ++y)
      for (int64_t z = 0; z < grid.dims[2]; ++z)
        out += std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(z) + "," +
               std::to_string(grid.at(x, y, z)) + "\n";
  write_file(path, out);
}

LabeledGrid read_voxel_grid_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"x", "y", "z", "label"})
    fail(path + ": expected header x,y,z,label");

  struct Entry {
    int64_t x, y, z;
    uint16_t label;
  };
  std::vector<Entry> entries;
  std::array<int64_t, 3> dims{0, 0, 0};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) fail(path + ": expected 4 columns, got line '" + line + "'");
    Entry e{parse_i64(cells[0], path), parse_i64(cells[1], path), parse_i64(cells[2], path),
            static_cast<uint16_t>(parse_i64(cells[3], path))};
    dims[0] = std::max(dims[0], e.x + 1);
    dims[1] = std::max(dims[1], e.y + 1);
    dims[2] = std::max(dims[2], e.z + 1);
    entries.push_back(e);
  }
  if (entries.empty()) fail(path + ": no voxel rows");
  LabeledGrid g = LabeledGrid::filled(dims, 0);
  std::vector<uint8_t> seen(static_cast<size_t>(g.voxels()), 0);
  for (const Entry& e : entries) {
    g.at(e.x, e.y, e.z) = e.label;
    seen[static_cast<size_t>(g.index(e.x, e.y, e.z))] = 1;
  }
  for (uint8_t s : seen)
    if (!s) fail(path + ": voxel listing does not cover the full grid");
  return g;
}

void write_logit_grid_csv(const std::string& path, const LogitGrid& grid) {
  std::string out = "x,y,z";
  for (int64_t c = 0; c < grid.classes; ++c) out += ",c" + std::to_string(c);
  out += "\n";
  for (int64_t x = 0; x < grid.dims[0]; ++x)
    for (int64_t y = 0; y < grid.dims[1]; ++y)
      for (int64_t z = 0; z < grid.dims[2]; ++z) {
        out += std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(z);
        for (int64_t c = 0; c < grid.classes; ++c) out += "," + fmt_double(grid.at(x, y, z, c));
        out += "\n";
      }
  write_file(path, out);
}

LogitGrid read_logit_grid_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) fail(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "x" || header[1] != "y" || header[2] != "z")
    fail(path + ": expected header x,y,z,c0,...");
  const int64_t classes = static_cast<int64_t>(header.size()) - 3;

  struct Entry {
    int64_t x, y, z;
    std::vector<double> vals;
  };
  std::vector<Entry> entries;
  std::array<int64_t, 3> dims{0, 0, 0};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int64_t>(cells.size()) != 3 + classes)
      fail(path + ": wrong column count in line '" + line + "'");
    Entry e;
    e.x = parse_i64(cells[0], path);
    e.y = parse_i64(cells[1], path);
    e.z = parse_i64(cells[2], path);
    for (int64_t c = 0; c < classes; ++c)
      e.vals.push_back(parse_f64(cells[static_cast<size_t>(3 + c)], path));
    dims[0] = std::max(dims[0], e.x + 1);
    dims[1] = std::max(dims[1], e.y + 1);
    dims[2] = std::max(dims[2], e.z + 1);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) fail(path + ": no voxel rows");
  LogitGrid g = LogitGrid::zeros(dims, classes);
  for (const Entry& e : entries)
    for (int64_t c = 0; c < classes; ++c)
      g.logits[static_cast<size_t>(g.index(e.x, e.y, e.z, c))] = e.vals[static_cast<size_t>(c)];
  return g;
}

}  // namespace scanssc::io
