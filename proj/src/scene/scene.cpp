#include "catmouse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>
#include <png.h>

#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {

struct Rgb {
  double r, g, b;
};

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), px_(3 * static_cast<std::size_t>(size * size), 0.0) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= size_ || y >= size_) return;
    const std::size_t plane = static_cast<std::size_t>(size_ * size_);
    const std::size_t i = static_cast<std::size_t>(y * size_ + x);
    px_[i] = c.r;
    px_[plane + i] = c.g;
    px_[2 * plane + i] = c.b;
  }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) set(x, y, c);
    }
  }

  int size() const { return size_; }
  std::vector<double>& pixels() { return px_; }

 private:
  int size_;
  std::vector<double> px_;
};

bool overlaps(const Box& a, const Box& b, double gap) {
  return a.x_min < b.x_max + gap && b.x_min < a.x_max + gap && a.y_min < b.y_max + gap &&
         b.y_min < a.y_max + gap;
}

void paint_background(Canvas& canvas, const DatasetSpec& spec, Rng& rng) {
  const Rgb base{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)};
  const double angle = rng.uniform(0, 2 * M_PI);
  const double amplitude = rng.uniform(0, spec.background_gradient);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const int s = canvas.size();
  auto& px = canvas.pixels();
  const std::size_t plane = static_cast<std::size_t>(s * s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double t = ((x * dx + y * dy) / s) * amplitude;
      const std::size_t i = static_cast<std::size_t>(y * s + x);
      px[i] = base.r + t;
      px[plane + i] = base.g + t;
      px[2 * plane + i] = base.b + t;
    }
  }
}

// Upright two-tone figure: light head over a dark torso spanning the full box
// width and two dark legs. The head touches the top edge and the legs touch
// the bottom edge, so the box is tight to the rendered extent.
void paint_actor(Canvas& canvas, const Box& box, Rng& rng) {
  const int x0 = static_cast<int>(box.x_min), y0 = static_cast<int>(box.y_min);
  const int w = static_cast<int>(box.width()), h = static_cast<int>(box.height());
  const Rgb head{rng.uniform(0.85, 1.0), rng.uniform(0.7, 0.9), rng.uniform(0.55, 0.8)};
  const Rgb body{rng.uniform(0.05, 0.45), rng.uniform(0.05, 0.45), rng.uniform(0.05, 0.45)};
  const int head_w = std::max(3, static_cast<int>(std::lround(w * rng.uniform(0.4, 0.6))));
  const int head_h = std::max(3, static_cast<int>(std::lround(h * rng.uniform(0.22, 0.3))));
  const int torso_h = std::max(3, static_cast<int>(std::lround(h * rng.uniform(0.35, 0.42))));
  const int leg_w = std::max(2, static_cast<int>(std::lround(w * rng.uniform(0.3, 0.42))));
  const int head_shift = rng.integer(-1, 1);
  const int head_x = std::clamp(x0 + (w - head_w) / 2 + head_shift, x0, x0 + w - head_w);
  canvas.fill_rect(head_x, y0, head_x + head_w, y0 + head_h, head);
  canvas.fill_rect(x0, y0 + head_h, x0 + w, y0 + head_h + torso_h, body);
  canvas.fill_rect(x0, y0 + head_h + torso_h, x0 + leg_w, y0 + h, body);
  canvas.fill_rect(x0 + w - leg_w, y0 + head_h + torso_h, x0 + w, y0 + h, body);
}

Box paint_distractor(Canvas& canvas, int x0, int y0, int size, int kind, Rgb color) {
  switch (kind) {
    case 0:  // rectangle
      canvas.fill_rect(x0, y0, x0 + size, y0 + size * 2 / 3 + 1, color);
      return Box{double(x0), double(y0), double(x0 + size), double(y0 + size * 2 / 3 + 1)};
    case 1: {  // disc
      const double r = size / 2.0, cx = x0 + r, cy = y0 + r;
      for (int y = y0; y < y0 + size; ++y) {
        for (int x = x0; x < x0 + size; ++x) {
          const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
          if (ddx * ddx + ddy * ddy <= r * r) canvas.set(x, y, color);
        }
      }
      return Box{double(x0), double(y0), double(x0 + size), double(y0 + size)};
    }
    default: {  // triangle, apex up
      for (int row = 0; row < size; ++row) {
        const int half = (row * size) / (2 * size) + 1;
        const int mid = x0 + size / 2;
        canvas.fill_rect(mid - half, y0 + row, mid + half, y0 + row + 1, color);
      }
      const int half = (size - 1) / 2 + 1;
      return Box{double(x0 + size / 2 - half), double(y0), double(x0 + size / 2 + half),
                 double(y0 + size)};
    }
  }
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::DetectorTrain:
      return "detector-train";
    case Family::PatchTrain:
      return "patch-train";
    case Family::Eval:
      return "eval";
  }
  return "unknown";
}

Family parse_family(const std::string& text) {
  if (text == "detector-train") return Family::DetectorTrain;
  if (text == "patch-train") return Family::PatchTrain;
  if (text == "eval") return Family::Eval;
  throw std::invalid_argument("unknown dataset family '" + text + "'");
}

DatasetSpec default_dataset_spec(Family family, std::uint64_t seed, int image_size) {
  DatasetSpec spec;
  spec.family = family;
  spec.seed = seed;
  spec.image_size = image_size;
  const double k = image_size / 64.0;
  spec.actor_width_min = static_cast<int>(std::lround(12 * k));
  spec.actor_width_max = static_cast<int>(std::lround(22 * k));
  if (family == Family::PatchTrain) {
    spec.actors_min = 1;
    spec.actors_max = 2;
    spec.actor_width_min = static_cast<int>(std::lround(16 * k));
    spec.actor_width_max = static_cast<int>(std::lround(26 * k));
  }
  return spec;
}

Scene generate_scene(const DatasetSpec& spec, std::size_t index) {
  if (spec.actor_width_min < 2 || spec.actor_width_max < spec.actor_width_min ||
      spec.aspect_min < 1.0 || spec.aspect_max < spec.aspect_min || spec.actors_min < 0 ||
      spec.actors_max < spec.actors_min) {
    throw std::invalid_argument("generate_scene: inconsistent dataset spec");
  }
  const int s = spec.image_size;
  if (std::lround(spec.actor_width_max * spec.aspect_max) + 2 > s) {
    throw std::invalid_argument("generate_scene: actors do not fit the image");
  }
  Rng rng(derive_seed(spec.seed, {0x5ce0e000ULL + static_cast<std::uint64_t>(spec.family), index}));
  Canvas canvas(s);
  paint_background(canvas, spec, rng);

  Scene scene;
  scene.index = index;

  const int want_actors = rng.integer(spec.actors_min, spec.actors_max);
  for (int a = 0; a < want_actors; ++a) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int w = rng.integer(spec.actor_width_min, spec.actor_width_max);
      const int h = static_cast<int>(std::lround(w * rng.uniform(spec.aspect_min, spec.aspect_max)));
      const int x = rng.integer(1, s - w - 1);
      const int y = rng.integer(1, s - h - 1);
      const Box box{double(x), double(y), double(x + w), double(y + h)};
      const bool clash = std::any_of(scene.target_boxes.begin(), scene.target_boxes.end(),
                                     [&](const Box& o) { return overlaps(box, o, 2); });
      if (!clash) {
        scene.target_boxes.push_back(box);
        break;
      }
    }
  }

  const int want_distractors = rng.integer(spec.distractors_min, spec.distractors_max);
  for (int d = 0; d < want_distractors; ++d) {
    const int size = rng.integer(6, 18);
    const int kind = rng.integer(0, 2);
    const Rgb color{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int x = rng.integer(0, s - size - 1);
      const int y = rng.integer(0, s - size - 1);
      const Box footprint{double(x - 1), double(y - 1), double(x + size + 1), double(y + size + 1)};
      const bool clash = std::any_of(scene.target_boxes.begin(), scene.target_boxes.end(),
                                     [&](const Box& o) { return overlaps(footprint, o, 1); });
      if (!clash) {
        scene.distractor_boxes.push_back(paint_distractor(canvas, x, y, size, kind, color));
        break;
      }
    }
  }

  for (const Box& box : scene.target_boxes) paint_actor(canvas, box, rng);

  std::vector<Real> pixels(canvas.pixels().size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double noise = spec.background_noise * (2 * rng.uniform() - 1);
    pixels[i] = static_cast<Real>(std::clamp(canvas.pixels()[i] + noise, 0.0, 1.0));
  }
  const auto dim = static_cast<std::size_t>(s);
  scene.image = Tensor({3, dim, dim}, std::move(pixels));
  return scene;
}

Dataset generate_dataset(const DatasetSpec& spec, std::size_t count) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  Dataset dataset;
  dataset.spec = spec;
  dataset.scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) dataset.scenes.push_back(generate_scene(spec, i));
  return dataset;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const bool gray = image.rank() == 2;
  if (!(gray || (image.rank() == 3 && image.dim(0) == 3))) {
    throw DimensionError("write_png: expected [3,H,W] or [H,W], got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(gray ? 0 : 1), w = image.dim(gray ? 1 : 2);
  const std::size_t channels = gray ? 1 : 3;
  std::vector<png_byte> buffer(h * w * channels);
  const auto px = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = std::clamp(static_cast<double>(px[(c * h + y) * w + x]), 0.0, 1.0);
        buffer[(y * w + x) * channels + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw std::runtime_error("write_png: cannot write " + path.string() + ": " + img.message);
  }
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json annotations;
  annotations["family"] = to_string(dataset.spec.family);
  annotations["seed"] = dataset.spec.seed;
  annotations["image_size"] = dataset.spec.image_size;
  annotations["images"] = nlohmann::json::array();
  for (const Scene& scene : dataset.scenes) {
    char name[32];
    std::snprintf(name, sizeof(name), "image_%05zu.png", scene.index);
    write_png(dir / name, scene.image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const Box& b : scene.target_boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    annotations["images"].push_back({{"id", scene.index}, {"file", name}, {"boxes", boxes}});
  }
  std::ofstream out(dir / "annotations.json");
  if (!out) throw std::runtime_error("export_dataset: cannot write " + (dir / "annotations.json").string());
  out << annotations.dump(2) << '\n';
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
