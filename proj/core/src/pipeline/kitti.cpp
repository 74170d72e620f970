#include "voxelfuse/pipeline/kitti.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "voxelfuse/error.hpp"

namespace voxelfuse::pipeline {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::map<std::string, std::size_t, std::less<>>& expected_counts() {
  static const std::map<std::string, std::size_t, std::less<>> counts{
      {"P0", 12}, {"P1", 12}, {"P2", 12}, {"P3", 12},
      {"R0_rect", 9}, {"Tr_velo_to_cam", 12}, {"Tr_imu_to_velo", 12}};
  return counts;
}

using Mat4 = std::array<double, 16>;

Mat4 mul4(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return c;
}

}  // namespace

geom::Calibration parse_kitti_calib_text(std::string_view text, const std::string& origin) {
  std::map<std::string, std::vector<double>, std::less<>> fields;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;

    auto fail = [&](std::string_view key, const std::string& what) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": field '" + std::string(key) +
                       "': " + what);
    };
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) fail(line.substr(0, line.find(' ')), "missing ':'");
    const std::string_view key = trim(line.substr(0, colon));
    if (key.empty()) fail(key, "empty key");
    if (fields.count(key) != 0) fail(key, "duplicate key");

    std::vector<double> values;
    std::string_view rest = line.substr(colon + 1);
    while (true) {
      rest = trim(rest);
      if (rest.empty()) break;
      const auto end = std::min(rest.find_first_of(" \t"), rest.size());
      const std::string_view tok = rest.substr(0, end);
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
        fail(key, "value " + std::to_string(values.size() + 1) + " '" + std::string(tok) +
                      "' is not a number");
      }
      values.push_back(v);
      rest = rest.substr(end);
    }
    const auto it = expected_counts().find(key);
    if (it != expected_counts().end() && values.size() != it->second) {
      fail(key, "expected " + std::to_string(it->second) + " values, got " +
                    std::to_string(values.size()));
    }
    fields.emplace(std::string(key), std::move(values));
  }

  for (const char* required : {"P2", "R0_rect", "Tr_velo_to_cam"}) {
    if (fields.count(required) == 0) {
      throw ParseError(origin + ": field '" + required + "': missing");
    }
  }
  const auto& p2 = fields.at("P2");
  const auto& r0 = fields.at("R0_rect");
  const auto& tr = fields.at("Tr_velo_to_cam");
  Mat4 rect{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rect[i * 4 + j] = r0[static_cast<std::size_t>(i * 3 + j)];
  rect[15] = 1.0;
  Mat4 velo{};
  for (std::size_t i = 0; i < 12; ++i) velo[i] = tr[i];
  velo[15] = 1.0;
  const Mat4 cam = mul4(rect, velo);
  std::array<double, 12> m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k)
        m[static_cast<std::size_t>(i * 4 + j)] += p2[static_cast<std::size_t>(i * 4 + k)] * cam[k * 4 + j];
  return geom::Calibration(m);
}

geom::Calibration parse_kitti_calib(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open calibration file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kitti_calib_text(buf.str(), path.string());
}

std::string format_kitti_calib(const geom::Calibration& calib) {
  std::string out = "P2:";
  char num[32];
  for (double v : calib.projection()) {
    std::snprintf(num, sizeof num, " %.17g", v);
    out += num;
  }
  out += "\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  return out;
}

}  // namespace voxelfuse::pipeline
