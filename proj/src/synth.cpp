#include "bafdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "bafdet/detection.hpp"
#include "bafdet/tensor.hpp"
#include "bafdet/voc.hpp"

namespace bafdet {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
}

struct Canvas {
  int w, h;
  std::vector<double> v;
  Canvas(int w, int h, double fill) : w(w), h(h), v(static_cast<std::size_t>(w) * h, fill) {}
  double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
};

struct Mask {
  int w, h;
  std::vector<std::uint8_t> m;
  Mask(int w, int h) : w(w), h(h), m(static_cast<std::size_t>(w) * h, 0) {}
  void set(int x, int y) { m[static_cast<std::size_t>(y) * w + x] = 1; }
  bool bbox(int& x1, int& y1, int& x2, int& y2) const {
    x1 = w;
    y1 = h;
    x2 = -1;
    y2 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (m[static_cast<std::size_t>(y) * w + x]) {
          x1 = std::min(x1, x);
          y1 = std::min(y1, y);
          x2 = std::max(x2, x);
          y2 = std::max(y2, y);
        }
    return x2 >= 0;
  }
};

void stamp(Canvas& c, Mask& m, int x, int y, int radius, double level) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int px = x + dx, py = y + dy;
      if (px < 1 || px >= c.w - 1 || py < 1 || py >= c.h - 1) continue;
      if (dx * dx + dy * dy > radius * radius) continue;
      c.at(px, py) = std::min(c.at(px, py), level);
      m.set(px, py);
    }
}

void draw_segment(Canvas& c, Mask& m, double x0, double y0, double x1, double y1,
                  int radius, double level) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(2, static_cast<int>(len * 2.0));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    stamp(c, m, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
          static_cast<int>(std::lround(y0 + t * (y1 - y0))), radius, level);
  }
}

void render_crack(Canvas& c, Mask& m, Rng& rng) {
  // log-uniform length scale: line-like and star-like shapes at many sizes
  const double scale = std::exp(rng.uniform(std::log(30.0), std::log(64.0)));
  const double margin = std::min(scale * 0.7 + 4.0, c.w * 0.45);
  const double cx = rng.uniform(margin, c.w - margin);
  const double cy = rng.uniform(margin, c.h - margin);
  const int radius = 2;
  const double level = rng.uniform(25.0, 55.0);
  if (rng.uniform() < 0.5) {
    // star: 3..6 arms
    const int arms = rng.uniform_int(3, 6);
    const double base = rng.uniform(0.0, 2.0 * M_PI);
    for (int a = 0; a < arms; ++a) {
      const double ang = base + 2.0 * M_PI * a / arms + rng.uniform(-0.3, 0.3);
      const double len = scale * 0.5 * rng.uniform(0.6, 1.1);
      draw_segment(c, m, cx, cy, cx + len * std::cos(ang), cy + len * std::sin(ang),
                   radius, level);
    }
  } else {
    // polyline random walk
    const int segs = rng.uniform_int(3, 6);
    double x = cx - scale * 0.4, y = cy;
    double ang = rng.uniform(-0.6, 0.6);
    for (int s = 0; s < segs; ++s) {
      const double len = scale / segs * rng.uniform(0.7, 1.3);
      const double nx = std::clamp(x + len * std::cos(ang), 2.0, c.w - 3.0);
      const double ny = std::clamp(y + len * std::sin(ang), 2.0, c.h - 3.0);
      draw_segment(c, m, x, y, nx, ny, radius, level);
      x = nx;
      y = ny;
      ang += rng.uniform(-0.8, 0.8);
    }
  }
}

void render_finger_interruption(Canvas& c, Mask& m, Rng& rng) {
  const int hw = rng.uniform_int(5, 8);               // half width
  const int hh = rng.uniform_int(15, std::min(26, c.h / 3 - 3));  // half height
  const int x = rng.uniform_int(hw + 2, c.w - hw - 3);
  const int y = rng.uniform_int(hh + 2, c.h - hh - 3);
  const double level = rng.uniform(50.0, 80.0);
  for (int dy = -hh; dy <= hh; ++dy)
    for (int dx = -hw; dx <= hw; ++dx) {
      c.at(x + dx, y + dy) = std::min(c.at(x + dx, y + dy), level);
      m.set(x + dx, y + dy);
    }
}

void render_black_core(Canvas& c, Mask& m, Rng& rng) {
  const int rx = rng.uniform_int(12, std::min(30, c.w / 4));
  const int ry = rng.uniform_int(12, std::min(30, c.h / 4));
  const int x = rng.uniform_int(rx + 2, c.w - rx - 3);
  const int y = rng.uniform_int(ry + 2, c.h - ry - 3);
  const double level = rng.uniform(20.0, 45.0);
  for (int dy = -ry; dy <= ry; ++dy)
    for (int dx = -rx; dx <= rx; ++dx) {
      const double e = static_cast<double>(dx) * dx / (static_cast<double>(rx) * rx) +
                       static_cast<double>(dy) * dy / (static_cast<double>(ry) * ry);
      if (e > 1.0) continue;
      c.at(x + dx, y + dy) = std::min(c.at(x + dx, y + dy), level + rng.uniform(0.0, 6.0));
      m.set(x + dx, y + dy);
    }
}

}  // namespace

std::uint64_t hash_spec(const SceneSpec& spec) {
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, static_cast<std::uint64_t>(spec.width));
  fnv_mix(h, static_cast<std::uint64_t>(spec.height));
  fnv_mix(h, spec.seed);
  fnv_mix(h, static_cast<std::uint64_t>(spec.background_level * 1000));
  fnv_mix(h, static_cast<std::uint64_t>(spec.background_noise * 1000));
  fnv_mix(h, static_cast<std::uint64_t>(spec.busbar_count));
  fnv_mix(h, static_cast<std::uint64_t>(spec.max_dislocations));
  for (const auto& d : spec.defects) fnv_mix(h, static_cast<std::uint64_t>(d.class_id));
  return h;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint64_t h = kFnvOffset;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= kFnvPrime;
    }
    if (!in) break;
  }
  return h;
}

SampleRecord generate(const SceneSpec& spec) {
  if (spec.width < 64 || spec.height < 64)
    throw std::runtime_error("generate: image too small for defect geometry");
  Rng rng(mix_seed(spec.seed, 0x5ce11e));
  Canvas canvas(spec.width, spec.height, spec.background_level);

  // textured bright background with a gentle illumination gradient
  const double gx = rng.uniform(-14.0, 14.0), gy = rng.uniform(-14.0, 14.0);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      canvas.at(x, y) += gx * (static_cast<double>(x) / spec.width - 0.5) +
                         gy * (static_cast<double>(y) / spec.height - 0.5) +
                         rng.normal() * spec.background_noise;

  // faint horizontal finger grid
  for (int y = rng.uniform_int(1, 4); y < spec.height; y += 4)
    for (int x = 0; x < spec.width; ++x) canvas.at(x, y) *= 0.96;

  // dark vertical busbars (never annotated)
  for (int b = 0; b < spec.busbar_count; ++b) {
    const double cx = (b + 0.5) * spec.width / spec.busbar_count + rng.uniform(-3.0, 3.0);
    const int half = rng.uniform_int(1, 1);
    const int x0 = std::clamp(static_cast<int>(cx) - half, 0, spec.width - 1);
    const int x1 = std::clamp(static_cast<int>(cx) + half, 0, spec.width - 1);
    for (int y = 0; y < spec.height; ++y)
      for (int x = x0; x <= x1; ++x) canvas.at(x, y) *= 0.55;
  }

  // dislocation distractor patches (never annotated)
  const int n_disloc = rng.uniform_int(0, spec.max_dislocations);
  for (int i = 0; i < n_disloc; ++i) {
    const int rx = rng.uniform_int(4, 12), ry = rng.uniform_int(4, 12);
    const int x = rng.uniform_int(rx, spec.width - rx - 1);
    const int y = rng.uniform_int(ry, spec.height - ry - 1);
    for (int dy = -ry; dy <= ry; ++dy)
      for (int dx = -rx; dx <= rx; ++dx) {
        const double e = static_cast<double>(dx) * dx / (static_cast<double>(rx) * rx) +
                         static_cast<double>(dy) * dy / (static_cast<double>(ry) * ry);
        if (e <= 1.0) canvas.at(x + dx, y + dy) *= 0.80;
      }
  }

  SampleRecord rec;
  rec.seed = spec.seed;
  rec.spec_hash = hash_spec(spec);
  for (const auto& req : spec.defects) {
    Mask mask(spec.width, spec.height);
    switch (req.class_id) {
      case 0: render_crack(canvas, mask, rng); break;
      case 1: render_finger_interruption(canvas, mask, rng); break;
      case 2: render_black_core(canvas, mask, rng); break;
      default: throw std::runtime_error("generate: unknown defect class");
    }
    SampleAnnotation a;
    a.class_id = req.class_id;
    if (!mask.bbox(a.xmin, a.ymin, a.xmax, a.ymax))
      throw std::runtime_error("generate: defect did not fit the image");
    rec.annotations.push_back(a);
  }

  rec.image.width = spec.width;
  rec.image.height = spec.height;
  rec.image.pixels.resize(canvas.v.size());
  for (std::size_t i = 0; i < canvas.v.size(); ++i)
    rec.image.pixels[i] =
        static_cast<std::uint8_t>(std::clamp(canvas.v[i], 0.0, 255.0));
  return rec;
}

std::string manifest_path(const std::string& out_dir, const std::string& split) {
  return out_dir + "/" + split + "_manifest.csv";
}

DatasetManifest emit_dataset(int n, const std::string& split, const std::string& out_dir,
                             std::uint64_t seed, int image_size) {
  if (n <= 0) throw std::invalid_argument("emit_dataset: n must be positive");
  std::filesystem::create_directories(out_dir);
  std::ofstream manifest(manifest_path(out_dir, split));
  if (!manifest) throw std::runtime_error("cannot write manifest in " + out_dir);
  manifest << "image,xml,crack,finger_interruption,black_core\n";

  DatasetManifest out;
  for (int i = 0; i < n; ++i) {
    SceneSpec spec;
    spec.width = spec.height = image_size;
    spec.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng pick(mix_seed(spec.seed, 0xd1ce));
    spec.defects.push_back({i % 3});  // round-robin keeps the class mix balanced
    if (pick.uniform() < 0.35) spec.defects.push_back({pick.uniform_int(0, 2)});

    SampleRecord rec = generate(spec);
    std::ostringstream stem;
    stem << split << "_" << std::setw(4) << std::setfill('0') << i;
    ManifestEntry e;
    e.image_path = out_dir + "/" + stem.str() + ".pgm";
    e.xml_path = out_dir + "/" + stem.str() + ".xml";
    write_pgm(e.image_path, rec.image);

    VocAnnotation ann;
    ann.filename = stem.str() + ".pgm";
    ann.width = spec.width;
    ann.height = spec.height;
    for (const auto& a : rec.annotations) {
      // inclusive pixel box -> continuous corner box
      ann.objects.push_back({kClassNames[a.class_id], static_cast<double>(a.xmin),
                             static_cast<double>(a.ymin), static_cast<double>(a.xmax + 1),
                             static_cast<double>(a.ymax + 1)});
      e.class_counts[a.class_id]++;
      out.total_counts[a.class_id]++;
    }
    std::ofstream xml(e.xml_path);
    xml << emit_voc(ann);

    manifest << e.image_path << "," << e.xml_path << "," << e.class_counts[0] << ","
             << e.class_counts[1] << "," << e.class_counts[2] << "\n";
    out.entries.push_back(std::move(e));
  }
  return out;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  DatasetManifest out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string c0, c1, c2;
    std::getline(ss, e.image_path, ',');
    std::getline(ss, e.xml_path, ',');
    std::getline(ss, c0, ',');
    std::getline(ss, c1, ',');
    std::getline(ss, c2, ',');
    e.class_counts[0] = std::stoi(c0);
    e.class_counts[1] = std::stoi(c1);
    e.class_counts[2] = std::stoi(c2);
    for (int k = 0; k < 3; ++k) out.total_counts[k] += e.class_counts[k];
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace bafdet
