#include "scriptid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scriptid/error.hpp"

namespace scriptid {

namespace fs = std::filesystem;

namespace {

struct Point {
  double x, y;
};

class Canvas {
 public:
  Canvas(int h, int w) : h_(h), w_(w), cov_(static_cast<size_t>(h) * w, 0.0f) {}

  // Soft disc stamp; coverage is kept as the max over stamps.
  void stamp(Point p, double radius) {
    const int x0 = std::max(0, static_cast<int>(std::floor(p.x - radius - 1)));
    const int x1 = std::min(w_ - 1, static_cast<int>(std::ceil(p.x + radius + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.y - radius - 1)));
    const int y1 = std::min(h_ - 1, static_cast<int>(std::ceil(p.y + radius + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x + 0.5 - p.x, y + 0.5 - p.y);
        const float c = static_cast<float>(std::clamp(radius + 0.5 - d, 0.0, 1.0));
        float& cell = cov_[static_cast<size_t>(y) * w_ + x];
        cell = std::max(cell, c);
      }
    }
  }

  void quad(Point a, Point ctrl, Point b, double radius) {
    const double len = std::hypot(ctrl.x - a.x, ctrl.y - a.y) + std::hypot(b.x - ctrl.x, b.y - ctrl.y);
    const int steps = std::max(2, static_cast<int>(len * 2));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double u = 1 - t;
      stamp({u * u * a.x + 2 * u * t * ctrl.x + t * t * b.x, u * u * a.y + 2 * u * t * ctrl.y + t * t * b.y}, radius);
    }
  }

  void ellipse(Point c, double rx, double ry, double radius) {
    const int steps = std::max(8, static_cast<int>(2 * std::numbers::pi * std::max(rx, ry) * 2));
    for (int i = 0; i <= steps; ++i) {
      const double a = 2 * std::numbers::pi * i / steps;
      stamp({c.x + rx * std::cos(a), c.y + ry * std::sin(a)}, radius);
    }
  }

  float at(int y, int x) const { return cov_[static_cast<size_t>(y) * w_ + x]; }

 private:
  int h_, w_;
  std::vector<float> cov_;
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

std::vector<StrokeStyle> default_styles(int n_classes) {
  if (n_classes < 1) throw InvalidInput("synthetic corpus needs at least one class");
  std::vector<StrokeStyle> s;
  // Thin, mostly straight stems, widely spaced.
  s.push_back({0.04, 0.08, 0.42, 2, 0.75, 0.08, 0.2, false, false, 0.0});
  // Thick, curvy, joined along a wavy baseline.
  s.push_back({0.11, 0.5, 0.55, 2, 0.1, 0.5, 0.1, false, true, 0.05});
  // Medium strokes hanging from a headline.
  s.push_back({0.055, 0.25, 0.5, 3, 0.55, 0.2, 0.06, true, false, 0.0});
  for (int k = 3; k < n_classes; ++k) {
    const double t = std::fmod(k * 0.618033988749895, 1.0);
    s.push_back({0.04 + 0.06 * t, 0.05 + 0.5 * std::fmod(t * 3, 1.0), 0.38 + 0.25 * std::fmod(t * 5, 1.0),
                 1 + k % 3, std::fmod(t * 7, 1.0), 0.6 * std::fmod(t * 11, 1.0), 0.1 + 0.1 * t, k % 2 == 0,
                 k % 3 == 0, 0.06 * std::fmod(t * 13, 1.0)});
  }
  s.resize(static_cast<size_t>(n_classes));
  return s;
}

std::string synthetic_class_name(int index) { return "script" + std::to_string(index); }

RawImage render_text_line(const StrokeStyle& style, int height, int width, int channels, double noise, Rng& rng) {
  if (height < 1 || width < 1) throw InvalidInput("synthetic line needs positive size");
  if (channels != 1 && channels != 3) throw InvalidInput("synthetic line supports 1 or 3 channels");
  const double h = height;
  Canvas canvas(height, width);
  const double radius = std::max(0.5, style.stroke_width * h / 2);
  const double x_height = uniform(rng, 0.38, 0.48) * h;
  const double baseline = uniform(rng, 0.62, 0.72) * h;
  const double top = baseline - x_height;
  const double phase = uniform(rng, 0, 2 * std::numbers::pi);
  const double period = uniform(rng, 0.6, 1.2) * h;
  auto base_at = [&](double x) { return baseline + style.waviness * h * std::sin(phase + 2 * std::numbers::pi * x / period); };

  double x = uniform(rng, 0.05, 0.25) * h;
  double word_start = x;
  auto close_word = [&](double end) {
    if (end <= word_start) return;
    if (style.headline) canvas.quad({word_start, top}, {(word_start + end) / 2, top}, {end, top}, radius);
    if (style.baseline_link) {
      const int segs = std::max(1, static_cast<int>((end - word_start) / 3));
      for (int i = 0; i < segs; ++i) {
        const double xa = word_start + (end - word_start) * i / segs;
        const double xb = word_start + (end - word_start) * (i + 1) / segs;
        canvas.quad({xa, base_at(xa)}, {(xa + xb) / 2, base_at((xa + xb) / 2)}, {xb, base_at(xb)}, radius);
      }
    }
  };

  while (x < width - 2) {
    const double gw = style.glyph_width * h * uniform(rng, 0.8, 1.25);
    const double x1 = std::min<double>(x + gw, width - 1);
    for (int s = 0; s < style.strokes_per_glyph; ++s) {
      Point a, b;
      if (uniform(rng, 0, 1) < style.vertical_bias) {
        const double sx = uniform(rng, x, x1);
        const bool ascender = uniform(rng, 0, 1) < 0.25;
        a = {sx, ascender ? top - 0.25 * h : top};
        b = {sx + uniform(rng, -0.05, 0.05) * h, base_at(sx)};
      } else {
        a = {uniform(rng, x, x1), uniform(rng, top, baseline)};
        b = {uniform(rng, x, x1), uniform(rng, top, baseline)};
      }
      const double bend = style.curvature * h;
      const Point ctrl{(a.x + b.x) / 2 + uniform(rng, -bend, bend), (a.y + b.y) / 2 + uniform(rng, -bend, bend)};
      canvas.quad(a, ctrl, b, radius);
    }
    if (uniform(rng, 0, 1) < style.loop_rate) {
      const double r = uniform(rng, 0.1, 0.2) * h;
      canvas.ellipse({(x + x1) / 2, baseline - r}, r * uniform(rng, 0.7, 1.2), r, radius);
    }
    x = x1 + uniform(rng, 0.02, 0.1) * h;
    if (uniform(rng, 0, 1) < style.word_gap_rate) {
      close_word(x1);
      x += uniform(rng, 0.25, 0.5) * h;
      word_start = x;
    }
  }
  close_word(std::min<double>(x, width - 1));

  // Colors are drawn independently of the class so that no single pixel value identifies it.
  double bg[3], ink[3], grad[3];
  const double bg_level = uniform(rng, 150, 250);
  const double ink_level = uniform(rng, 10, 100);
  for (int c = 0; c < 3; ++c) {
    bg[c] = std::clamp(bg_level + uniform(rng, -25, 25), 0.0, 255.0);
    ink[c] = std::clamp(ink_level + uniform(rng, -25, 25), 0.0, 255.0);
    grad[c] = uniform(rng, -30, 30);
  }
  if (uniform(rng, 0, 1) < 0.5) std::swap(bg, ink);  // light text on dark ground half of the time

  std::normal_distribution<double> gauss(0.0, noise * 255.0);
  RawImage img(height, width, channels);
  for (int y = 0; y < height; ++y) {
    for (int xx = 0; xx < width; ++xx) {
      const double cov = canvas.at(y, xx);
      const double shade = static_cast<double>(xx) / std::max(1, width - 1);
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        const double back = bg[c] + grad[c] * shade;
        rgb[c] = back * (1 - cov) + ink[c] * cov;
      }
      if (channels == 1) {
        const double g = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2] + gauss(rng);
        img.at(y, xx, 0) = static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0, 255.0)));
      } else {
        for (int c = 0; c < 3; ++c) {
          img.at(y, xx, c) = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[c] + gauss(rng), 0.0, 255.0)));
        }
      }
    }
  }
  return img;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  if (spec.n_classes < 1 || spec.samples_per_class < 1) throw InvalidInput("synthetic spec needs classes and samples");
  if (spec.min_width < 1 || spec.max_width < spec.min_width || spec.min_height < 1 ||
      spec.max_height < spec.min_height) {
    throw InvalidInput("synthetic spec has an empty size range");
  }
  const auto styles = spec.styles.empty() ? default_styles(spec.n_classes) : spec.styles;
  if (static_cast<int>(styles.size()) != spec.n_classes) throw InvalidInput("one stroke style per class required");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.root = out_dir;
  for (int k = 0; k < spec.n_classes; ++k) {
    m.class_table.push_back(synthetic_class_name(k));
    fs::create_directories(out_dir / m.class_table.back(), ec);
    if (ec) throw IoError("cannot create class directory: " + ec.message());
  }

  // Interleave classes so that any prefix of the manifest is roughly balanced.
  const int total = spec.n_classes * spec.samples_per_class;
  m.records.resize(static_cast<size_t>(total));
  std::vector<std::string> errors(static_cast<size_t>(total));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    const int cls = i % spec.n_classes;
    const int idx = i / spec.n_classes;
    Rng rng(spec.seed ^ (static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ULL));
    const int h = std::uniform_int_distribution<int>(spec.min_height, spec.max_height)(rng);
    const int w = std::uniform_int_distribution<int>(spec.min_width, spec.max_width)(rng);
    const std::string name = m.class_table[cls];
    const std::string rel = name + "/" + name + "_" + std::to_string(idx) + ".png";
    try {
      save_image(render_text_line(styles[cls], h, w, spec.channels, spec.noise, rng), out_dir / rel);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
    m.records[i] = {rel, name};
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw IoError(e);
  }
  save_manifest(m, out_dir / "manifest.tsv");
  return m;
}

}  // namespace scriptid
