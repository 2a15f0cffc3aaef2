// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "motioneditor/melt.hpp"

namespace motioneditor {

namespace {

uint8_t to_byte(double v) { return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Bilinear sample with zero outside the raster.
double sample_zero(const Raster& r, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int64_t yy, int64_t xx) -> double {
    if (yy < 0 || yy >= r.height || xx < 0 || xx >= r.width) return 0.0;
    return r.at(yy, xx);
  };
  double v = 0.0;
  if (ax < 1.0 && ay < 1.0) v += (1 - ax) * (1 - ay) * px(y0, x0);
  if (ax > 0.0) v += ax * (1 - ay) * px(y0, x0 + 1);
  if (ay > 0.0) v += (1 - ax) * ay * px(y0 + 1, x0);
  if (ax > 0.0 && ay > 0.0) v += ax * ay * px(y0 + 1, x0 + 1);
  return v;
}

Raster crop(const Raster& r, const BBox& b) {
  Raster out = Raster::zeros(b.h, b.w);
  for (int64_t y = 0; y < b.h; ++y)
    for (int64_t x = 0; x < b.w; ++x) out.at(y, x) = r.at(b.y + y, b.x + x);
  return out;
}

void require_same_size(const Raster& a, const Raster& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string("align: ") + what + " is " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ", expected " + std::to_string(a.height) + "x" +
                                std::to_string(a.width));
  }
}

double point_segment_distance(double px, double py, const Keypoint& a, const Keypoint& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a.x + t * vx), py - (a.y + t * vy));
}

}  // namespace

Raster Raster::zeros(int64_t height, int64_t width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("raster extents must be positive");
  return {height, width, std::vector<uint8_t>(static_cast<size_t>(height * width), 0)};
}

Tensor Raster::to_tensor(float scale) const {
  std::vector<float> v(px.size());
  for (size_t i = 0; i < px.size(); ++i) v[i] = px[i] * scale;
  return Tensor({height, width}, std::move(v));
}

BBox bounding_rect(const Raster& mask) {
  int64_t x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int64_t y = 0; y < mask.height; ++y)
    for (int64_t x = 0; x < mask.width; ++x)
      if (mask.at(y, x) != 0) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw EmptyForeground("mask has no foreground pixels");
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

Point foreground_center(const Raster& mask) {
  double sx = 0.0, sy = 0.0;
  int64_t n = 0;
  for (int64_t y = 0; y < mask.height; ++y)
    for (int64_t x = 0; x < mask.width; ++x)
      if (mask.at(y, x) != 0) {
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        ++n;
      }
  if (n == 0) throw EmptyForeground("mask has no foreground pixels");
  return {sx / n, sy / n};
}

Raster resize_bilinear(const Raster& src, int64_t height, int64_t width) {
  Raster out = Raster::zeros(height, width);
  const double sy = static_cast<double>(src.height) / height, sx = static_cast<double>(src.width) / width;
  for (int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, src.height - 1);
    const double ay = fy - y0;
    for (int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, src.width - 1);
      const double ax = fx - x0;
      const double v = (1 - ay) * ((1 - ax) * src.at(y0, x0) + ax * src.at(y0, x1)) +
                       ay * ((1 - ax) * src.at(y1, x0) + ax * src.at(y1, x1));
      out.at(y, x) = to_byte(v);
    }
  }
  return out;
}

Raster resize_nearest(const Raster& src, int64_t height, int64_t width) {
  Raster out = Raster::zeros(height, width);
  for (int64_t y = 0; y < height; ++y) {
    const int64_t sy = std::min(src.height - 1, static_cast<int64_t>((y + 0.5) * src.height / height));
    for (int64_t x = 0; x < width; ++x) {
      const int64_t sx = std::min(src.width - 1, static_cast<int64_t>((x + 0.5) * src.width / width));
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

Raster translate(const Raster& src, double dx, double dy, bool bilinear) {
  Raster out = Raster::zeros(src.height, src.width);
  for (int64_t y = 0; y < src.height; ++y) {
    for (int64_t x = 0; x < src.width; ++x) {
      const double sx = static_cast<double>(x) - dx, sy = static_cast<double>(y) - dy;
      if (bilinear) {
        out.at(y, x) = to_byte(sample_zero(src, sx, sy));
      } else {
        const auto nx = static_cast<int64_t>(std::floor(sx + 0.5)), ny = static_cast<int64_t>(std::floor(sy + 0.5));
        if (nx >= 0 && nx < src.width && ny >= 0 && ny < src.height) out.at(y, x) = src.at(ny, nx);
      }
    }
  }
  return out;
}

AlignResult align(const Raster& s_src, const Raster& m_src, const Raster& s_ref, const Raster& m_ref) {
  require_same_size(s_src, m_src, "source mask");
  require_same_size(s_src, s_ref, "reference skeleton");
  require_same_size(s_src, m_ref, "reference mask");
  AlignReport rep;
  try {
    rep.source = bounding_rect(m_src);
  } catch (const EmptyForeground&) {
    throw EmptyForeground("source mask has no foreground pixels");
  }
  try {
    rep.reference = bounding_rect(m_ref);
  } catch (const EmptyForeground&) {
    throw EmptyForeground("reference mask has no foreground pixels");
  }
  const BBox& bs = rep.source;
  const BBox& br = rep.reference;

  // Resize the reference protagonist to the source height.
  rep.ratio = static_cast<double>(br.w) / static_cast<double>(br.h);
  rep.scale = static_cast<double>(bs.h) / static_cast<double>(br.h);
  rep.w_star = std::lround(rep.ratio * static_cast<double>(bs.h));
  if (rep.w_star < 1) throw std::invalid_argument("align: resized reference width rounds to zero");
  const Raster ps = resize_bilinear(crop(s_ref, br), bs.h, rep.w_star);
  const Raster pm = resize_nearest(crop(m_ref, br), bs.h, rep.w_star);

  // Paste at the source box; wider crops are right-aligned to it.
  const int64_t anchor = rep.w_star < bs.w ? bs.x : bs.x - (rep.w_star - bs.w);
  rep.cropped_columns = std::max<int64_t>(0, -anchor);
  rep.paste_x = anchor + rep.cropped_columns;
  Raster pasted_s = Raster::zeros(s_src.height, s_src.width);
  Raster pasted_m = Raster::zeros(s_src.height, s_src.width);
  for (int64_t y = 0; y < bs.h; ++y) {
    for (int64_t x = rep.cropped_columns; x < rep.w_star; ++x) {
      pasted_s.at(bs.y + y, anchor + x) = ps.at(y, x);
      pasted_m.at(bs.y + y, anchor + x) = pm.at(y, x);
    }
  }

  // Translate so the protagonist centres coincide.
  const Point cs = foreground_center(m_src);
  Point cr;
  try {
    cr = foreground_center(pasted_m);
  } catch (const EmptyForeground&) {
    throw EmptyForeground("align: resized reference mask lost all foreground pixels");
  }
  rep.v_trans = {cs.x - cr.x, cs.y - cr.y};
  rep.offset = {static_cast<double>(anchor - br.x) + rep.v_trans.x, static_cast<double>(bs.y - br.y) + rep.v_trans.y};
  return {translate(pasted_s, rep.v_trans.x, rep.v_trans.y, true),
          translate(pasted_m, rep.v_trans.x, rep.v_trans.y, false), rep};
}

const std::vector<std::string>& default_joint_names() {
  static const std::vector<std::string> names{
      "nose",    "neck",   "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip",
      "r_knee",  "r_ankle", "l_hip",     "l_knee",  "l_ankle", "r_eye",      "l_eye",   "r_ear",   "l_ear"};
  return names;
}

const BoneTable& default_bone_table() {
  static const BoneTable bones{
      {"neck", "r_shoulder"}, {"neck", "l_shoulder"}, {"r_shoulder", "r_elbow"}, {"r_elbow", "r_wrist"},
      {"l_shoulder", "l_elbow"}, {"l_elbow", "l_wrist"}, {"neck", "r_hip"},       {"r_hip", "r_knee"},
      {"r_knee", "r_ankle"},   {"neck", "l_hip"},      {"l_hip", "l_knee"},      {"l_knee", "l_ankle"},
      {"neck", "nose"},        {"nose", "r_eye"},      {"r_eye", "r_ear"},       {"nose", "l_eye"},
      {"l_eye", "l_ear"}};
  return bones;
}

Raster render_keypoints(const KeypointSet& k, int64_t height, int64_t width, const BoneTable& bones) {
  std::vector<const Keypoint*> present;
  for (const auto& [name, p] : k) {
    if (p.confidence <= 0.0) continue;
    if (p.x < 0 || p.y < 0 || p.x > static_cast<double>(width - 1) || p.y > static_cast<double>(height - 1)) {
      throw std::invalid_argument("joint " + name + " lies outside the " + std::to_string(height) + "x" +
                                  std::to_string(width) + " frame");
    }
    present.push_back(&p);
  }
  bool distinct = false;
  for (size_t i = 1; i < present.size() && !distinct; ++i) {
    distinct = present[i]->x != present[0]->x || present[i]->y != present[0]->y;
  }
  if (!distinct) throw std::invalid_argument("render_keypoints needs at least two distinct present joints");

  Raster out = Raster::zeros(height, width);
  for (const auto& [a, b] : bones) {
    auto ia = k.find(a), ib = k.find(b);
    if (ia == k.end() || ib == k.end() || ia->second.confidence <= 0.0 || ib->second.confidence <= 0.0) continue;
    const Keypoint& pa = ia->second;
    const Keypoint& pb = ib->second;
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(pa.x, pb.x) - 2)));
    const int64_t x1 = std::min<int64_t>(width - 1, static_cast<int64_t>(std::ceil(std::max(pa.x, pb.x) + 2)));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(pa.y, pb.y) - 2)));
    const int64_t y1 = std::min<int64_t>(height - 1, static_cast<int64_t>(std::ceil(std::max(pa.y, pb.y) + 2)));
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        // Full coverage within half a pixel of the segment, fading to zero at 1.5 px.
        const double cover = std::clamp(1.5 - point_segment_distance(static_cast<double>(x), static_cast<double>(y), pa, pb), 0.0, 1.0);
        out.at(y, x) = std::max(out.at(y, x), to_byte(255.0 * cover));
      }
    }
  }
  return out;
}

KeypointSet stick_figure(int64_t height, int64_t width) {
  // Normalized (x, y) positions of an upright figure.
  static const std::vector<std::pair<double, double>> pos{
      {0.50, 0.12}, {0.50, 0.22}, {0.40, 0.23}, {0.34, 0.36}, {0.30, 0.48}, {0.60, 0.23},
      {0.66, 0.36}, {0.70, 0.48}, {0.44, 0.50}, {0.43, 0.68}, {0.42, 0.86}, {0.56, 0.50},
      {0.57, 0.68}, {0.58, 0.86}, {0.47, 0.10}, {0.53, 0.10}, {0.44, 0.11}, {0.56, 0.11}};
  KeypointSet k;
  const auto& names = default_joint_names();
  for (size_t i = 0; i < names.size(); ++i) {
    k[names[i]] = {pos[i].first * static_cast<double>(width - 1), pos[i].second * static_cast<double>(height - 1), 1.0};
  }
  return k;
}

void write_pgm(const std::filesystem::path& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.px.data()), static_cast<std::streamsize>(r.px.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Raster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError(path.string() + ": unsupported PGM header");
  ++pos;  // single whitespace before the payload
  if (bytes.size() - std::min(pos, bytes.size()) != static_cast<size_t>(w * h)) {
    throw FormatError(path.string() + ": PGM payload size mismatch");
  }
  Raster r = Raster::zeros(h, w);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), r.px.begin());
  return r;
}

Raster mask_from_pgm(const Raster& r) {
  Raster m = r;
  for (auto& v : m.px) {
    if (v != 0 && v != 255) throw FormatError("mask pixel value " + std::to_string(v) + " is neither 0 nor 255");
    v = v == 255 ? 1 : 0;
  }
  return m;
}

Raster mask_to_pgm(const Raster& mask) {
  Raster r = mask;
  for (auto& v : r.px) v = v ? 255 : 0;
  return r;
}

std::vector<KeypointSet> parse_keypoints_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_array()) throw FormatError("keypoints: expected an array of frames");
  std::vector<KeypointSet> frames;
  for (const auto& f : j) {
    if (!f.is_object()) throw FormatError("keypoints: each frame must be an object");
    KeypointSet k;
    for (const auto& [name, v] : f.items()) {
      if (!v.is_array() || v.size() != 3) throw FormatError("keypoints: joint " + name + " needs [x, y, confidence]");
      k[name] = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    }
    frames.push_back(std::move(k));
  }
  return frames;
}

BoneTable parse_bone_table_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_array()) throw FormatError("bone table: expected a list of pairs");
  BoneTable bones;
  for (const auto& b : j) {
    if (!b.is_array() || b.size() != 2) throw FormatError("bone table: each entry must be [joint, joint]");
    bones.emplace_back(b[0].get<std::string>(), b[1].get<std::string>());
  }
  return bones;
}

}  // namespace motioneditor
