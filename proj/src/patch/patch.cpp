#include "catmouse/patch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "../common/binary_io.hpp"
#include "catmouse/ops.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in [0,1], got " + std::to_string(p));
  }
}

double median_short_side(const std::vector<Box>& boxes) {
  std::vector<double> sides;
  for (const Box& b : boxes) sides.push_back(b.short_side());
  std::sort(sides.begin(), sides.end());
  const std::size_t n = sides.size();
  return n % 2 ? sides[n / 2] : 0.5 * (sides[n / 2 - 1] + sides[n / 2]);
}

Tensor full_mask(std::size_t size) { return Tensor({size, size}, Real(1)); }

}  // namespace

std::string to_string(PatchRole role) { return role == PatchRole::Train ? "train" : "validation"; }

std::string to_string(ApplicationMode mode) {
  switch (mode) {
    case ApplicationMode::PatchTrain:
      return "patch-train";
    case ApplicationMode::AdvTrain:
      return "adv-train";
    case ApplicationMode::Eval:
      return "eval";
  }
  return "unknown";
}

Patch init_patch(std::size_t size, std::uint64_t seed) {
  if (size < 4) throw std::invalid_argument("init_patch: size must be >= 4");
  Rng rng(seed);
  Patch p;
  p.pixels = Tensor({3, size, size});
  for (auto& v : p.pixels.mutable_data()) v = static_cast<Real>(rng.uniform());
  p.seed = seed;
  return p;
}

Tensor grayscale_patch(int level, std::size_t size) {
  if (level < 0 || level > 10) {
    throw std::out_of_range("grayscale_patch: level must be in 0..10, got " + std::to_string(level));
  }
  return Tensor({3, size, size}, static_cast<Real>(level / 10.0));
}

void LossWeights::validate() const {
  if (!(objectness > 0)) throw std::invalid_argument("lambda_obj must be > 0");
  if (!(smoothness >= 0)) throw std::invalid_argument("lambda_smt must be >= 0");
  if (!(validity >= 0)) throw std::invalid_argument("lambda_val must be >= 0");
}

ApplicationProtocol ApplicationProtocol::patch_train(double resize_min, double resize_max) {
  ApplicationProtocol p;
  p.mode = ApplicationMode::PatchTrain;
  p.p_box = 1.0;
  p.p_hal = 0.0;
  p.resize_min = resize_min;
  p.resize_max = resize_max;
  p.augment = true;
  p.placement = Placement::RandomInBox;
  return p;
}

ApplicationProtocol ApplicationProtocol::adv_train(double pi, double resize_min, double resize_max) {
  ApplicationProtocol p;
  p.mode = ApplicationMode::AdvTrain;
  p.p_box = 0.0;
  p.p_hal = 0.0;
  p.pi = pi;
  p.resize_min = resize_min;
  p.resize_max = resize_max;
  p.augment = false;
  p.placement = Placement::RandomInBox;
  return p;
}

ApplicationProtocol ApplicationProtocol::eval(double resize, double p_box, double p_hal) {
  ApplicationProtocol p;
  p.mode = ApplicationMode::Eval;
  p.p_box = p_box;
  p.p_hal = p_hal;
  p.resize_min = resize;
  p.resize_max = resize;
  p.augment = false;
  p.placement = Placement::BoxCenter;
  return p;
}

void ApplicationProtocol::validate() const {
  require_probability(p_box, "p_box");
  require_probability(p_hal, "p_hal");
  require_probability(pi, "pi");
  if (!(resize_min > 0 && resize_max >= resize_min && resize_max <= 1.0)) {
    throw std::invalid_argument("resize range must satisfy 0 < min <= max <= 1");
  }
  if (augment && mode != ApplicationMode::PatchTrain) {
    throw std::invalid_argument("augmentation is only defined for patch-train mode");
  }
}

std::string ApplicationProtocol::describe() const {
  std::ostringstream os;
  os << to_string(mode) << " p_box=" << p_box << " p_hal=" << p_hal << " pi=" << pi << " resize=["
     << resize_min << ',' << resize_max << "] augment=" << (augment ? 1 : 0)
     << " placement=" << (placement == Placement::BoxCenter ? "center" : "random");
  return os.str();
}

AugmentationParams sample_augmentation(const AugmentationConfig& c, std::size_t size, Rng& rng) {
  AugmentationParams p;
  p.brightness = rng.uniform(-c.brightness, c.brightness);
  p.contrast = rng.uniform(c.contrast_min, c.contrast_max);
  p.angle_deg = rng.uniform(-c.max_rotation_deg, c.max_rotation_deg);
  const double reach = c.perspective * double(size);
  for (auto& o : p.corner_offsets) {
    o.x = rng.uniform(-reach, reach);
    o.y = rng.uniform(-reach, reach);
  }
  return p;
}

AugmentedPatch apply_augmentation(const Tensor& pixels, const AugmentationParams& params) {
  const std::size_t s = pixels.dim(1);
  const Tensor jittered =
      clamp(add_scalar(scale(pixels, static_cast<Real>(params.contrast)),
                       static_cast<Real>(0.5 * (1.0 - params.contrast) + params.brightness)));
  const double lo = -0.5, hi = double(s) - 0.5;
  const std::array<Point, 4> corners{Point{lo, lo}, Point{hi, lo}, Point{hi, hi}, Point{lo, hi}};
  std::array<Point, 4> moved = corners;
  for (std::size_t i = 0; i < 4; ++i) {
    moved[i].x += params.corner_offsets[i].x;
    moved[i].y += params.corner_offsets[i].y;
  }
  const double center = (double(s) - 1.0) / 2.0;
  const Homography h = Homography::from_correspondences(corners, moved) *
                       Homography::rotation(params.angle_deg * kPi / 180.0, {center, center});
  WarpResult w = bilinear_warp(jittered, h, s, s);
  return {w.warped, w.mask};
}

AugmentedPatch augment_patch(const Tensor& pixels, ApplicationMode mode, Rng& rng,
                             const AugmentationConfig& config) {
  if (mode != ApplicationMode::PatchTrain) return {pixels, full_mask(pixels.dim(1))};
  return apply_augmentation(pixels, sample_augmentation(config, pixels.dim(1), rng));
}

bool PlacementRecord::same_decision(const PlacementRecord& o) const {
  return box_index == o.box_index && placed == o.placed && skipped == o.skipped && top == o.top &&
         left == o.left && side == o.side && resize_factor == o.resize_factor;
}

int pasted_side(const Box& box, double resize_factor) {
  return std::max(1, static_cast<int>(std::lround(resize_factor * box.short_side())));
}

Tensor paste_patch(const Tensor& image, const Tensor& pixels, const Tensor& mask, int top,
                   int left, int side) {
  const std::size_t s = pixels.dim(1);
  const auto out = static_cast<std::size_t>(side);
  // Maps source pixel centers onto destination pixel centers.
  const double a = double(side) / double(s);
  const Homography resize{{a, 0, 0.5 * a - 0.5, 0, a, 0.5 * a - 0.5, 0, 0, 1}};
  const WarpResult warped = bilinear_warp(pixels, resize, out, out);
  const WarpResult warped_mask = bilinear_warp(mask.reshaped({1, s, s}), resize, out, out);
  std::vector<Real> m(out * out);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = warped_mask.warped.data()[i] * warped_mask.mask.data()[i];
  }
  return composite(image, warped.warped, Tensor({out, out}, std::move(m)), top, left);
}

namespace {

// Position draws happen for every call so the stream advances identically
// whether or not the placement is later skipped.
PlacementRecord plan_in_box(const Box& box, Placement placement, double factor, Rng& rng) {
  PlacementRecord r;
  r.resize_factor = factor;
  double u = 0.5, v = 0.5;
  if (placement == Placement::RandomInBox) {
    u = rng.uniform();
    v = rng.uniform();
  }
  if (box.short_side() < 2.0) {
    r.skipped = true;
    return r;
  }
  const int side = pasted_side(box, factor);
  r.side = side;
  if (placement == Placement::BoxCenter) {
    r.left = static_cast<int>(std::lround(box.center_x() - side / 2.0));
    r.top = static_cast<int>(std::lround(box.center_y() - side / 2.0));
  } else {
    const double free_x = std::max(0.0, box.width() - side);
    const double free_y = std::max(0.0, box.height() - side);
    r.left = static_cast<int>(std::lround(box.x_min + u * free_x));
    r.top = static_cast<int>(std::lround(box.y_min + v * free_y));
  }
  return r;
}

}  // namespace

Tensor place_patch(const Tensor& image, const Tensor& pixels, const Tensor& mask, const Box& box,
                   Placement placement, double resize_factor, Rng& rng, PlacementRecord* record) {
  PlacementRecord r = plan_in_box(box, placement, resize_factor, rng);
  r.placed = !r.skipped;
  if (record) *record = r;
  if (r.skipped) return image;
  return paste_patch(image, pixels, mask, r.top, r.left, r.side);
}

std::vector<PlacementRecord> plan_placements(const Scene& scene,
                                             const ApplicationProtocol& protocol, Rng& rng) {
  protocol.validate();
  const double p_box = protocol.box_probability();
  const bool ranged = protocol.resize_max > protocol.resize_min;
  std::vector<PlacementRecord> plan;
  for (std::size_t i = 0; i < scene.target_boxes.size(); ++i) {
    const bool chosen = rng.bernoulli(p_box);
    const double factor = ranged ? rng.uniform(protocol.resize_min, protocol.resize_max)
                                 : protocol.resize_min;
    std::optional<AugmentationParams> aug;
    // Sampled for a unit side; apply_protocol rescales offsets to the patch.
    if (protocol.augment) aug = sample_augmentation(protocol.augmentation, 1, rng);
    PlacementRecord r = plan_in_box(scene.target_boxes[i], protocol.placement, factor, rng);
    r.box_index = static_cast<int>(i);
    r.augmentation = aug;
    if (chosen) {
      r.placed = !r.skipped;
    } else {
      r.skipped = false;
    }
    plan.push_back(r);
  }
  const double p_hal = protocol.hallucination_probability();
  if (p_hal > 0) {
    const bool chosen = rng.bernoulli(p_hal);
    const double factor = ranged ? rng.uniform(protocol.resize_min, protocol.resize_max)
                                 : protocol.resize_min;
    std::optional<AugmentationParams> aug;
    if (protocol.augment) aug = sample_augmentation(protocol.augmentation, 1, rng);
    const double u = rng.uniform(), v = rng.uniform();
    PlacementRecord r;
    r.box_index = -1;
    r.resize_factor = factor;
    r.augmentation = aug;
    if (chosen && !scene.target_boxes.empty()) {
      const int size = static_cast<int>(scene.image.dim(2));
      const double reference = median_short_side(scene.target_boxes);
      if (reference < 2.0) {
        r.skipped = true;
      } else {
        r.side = std::min(size, std::max(1, static_cast<int>(std::lround(factor * reference))));
        r.left = static_cast<int>(std::floor(u * double(size - r.side + 1)));
        r.top = static_cast<int>(std::floor(v * double(size - r.side + 1)));
        r.placed = true;
      }
    }
    plan.push_back(r);
  }
  return plan;
}

ProtocolOutcome apply_protocol(const Scene& scene, const Tensor& patch_pixels,
                               const ApplicationProtocol& protocol, Rng& rng) {
  ProtocolOutcome out;
  out.decisions = plan_placements(scene, protocol, rng);
  out.image = scene.image;
  for (const PlacementRecord& r : out.decisions) {
    if (r.skipped) ++out.skipped;
    if (!r.placed || !patch_pixels.defined()) continue;
    AugmentedPatch p{patch_pixels, full_mask(patch_pixels.dim(1))};
    if (r.augmentation) {
      // Corner offsets were drawn for a unit side; scale to the patch size.
      AugmentationParams params = *r.augmentation;
      for (auto& o : params.corner_offsets) {
        o.x *= double(patch_pixels.dim(1));
        o.y *= double(patch_pixels.dim(1));
      }
      p = apply_augmentation(patch_pixels, params);
    }
    out.image = paste_patch(out.image, p.pixels, p.mask, r.top, r.left, r.side);
  }
  return out;
}

PatchLossTerms patch_loss_terms(const DetectorModel& model, std::span<const Scene> scenes,
                                const Tensor& patch, const LossWeights& weights,
                                const ApplicationProtocol& protocol, Rng& rng) {
  if (!model.frozen()) throw std::logic_error("patch_loss: detector weights must be frozen");
  weights.validate();
  PatchLossTerms terms;
  std::vector<Tensor> images;
  images.reserve(scenes.size());
  for (const Scene& s : scenes) images.push_back(apply_protocol(s, patch, protocol, rng).image);

  std::vector<std::size_t> o2o, o2m;
  if (!images.empty()) {
    const RawPrediction raw = forward(model, stack(images));
    for (std::size_t b = 0; b < scenes.size(); ++b) {
      const TargetCells cells = target_cells(raw, b, scenes[b].target_boxes);
      o2o.insert(o2o.end(), cells.one_to_one.begin(), cells.one_to_one.end());
      o2m.insert(o2m.end(), cells.one_to_many.begin(), cells.one_to_many.end());
    }
    terms.objectness_count = o2o.size() + o2m.size();
    if (terms.objectness_count > 0) {
      const Tensor s = add(sum(sigmoid(gather(raw.one_to_one.logits, o2o))),
                           sum(sigmoid(gather(raw.one_to_many.logits, o2m))));
      terms.objectness = scale(s, Real(1) / static_cast<Real>(terms.objectness_count));
    }
  }
  if (!terms.objectness.defined()) terms.objectness = Tensor::scalar(0);
  terms.smoothness = total_variation(patch);
  terms.validity = mean(range_violation_sq(patch));
  terms.total = add(add(scale(terms.objectness, static_cast<Real>(weights.objectness)),
                        scale(terms.smoothness, static_cast<Real>(weights.smoothness))),
                    scale(terms.validity, static_cast<Real>(weights.validity)));
  return terms;
}

Tensor patch_loss(const DetectorModel& model, std::span<const Scene> scenes, const Tensor& patch,
                  const LossWeights& weights, const ApplicationProtocol& protocol, Rng& rng) {
  return patch_loss_terms(model, scenes, patch, weights, protocol, rng).total;
}

namespace {
constexpr char kPatchMagic[5] = "CMPT";
constexpr std::uint32_t kPatchVersion = 1;
}  // namespace

void save_patch(const Patch& patch, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_patch: cannot open " + path.string());
  os.write(kPatchMagic, 4);
  binary::put_u32(os, kPatchVersion);
  binary::put_u32(os, static_cast<std::uint32_t>(patch.size()));
  binary::put_u32(os, static_cast<std::uint32_t>(patch.order));
  binary::put_u32(os, static_cast<std::uint32_t>(patch.index));
  binary::put_u8(os, static_cast<std::uint8_t>(patch.role));
  binary::put_u8(os, patch.regime.successive ? 1 : 0);
  binary::put_u8(os, static_cast<std::uint8_t>(patch.regime.k));
  for (Real v : patch.pixels.data()) binary::put_f32(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("save_patch: write failed for " + path.string());
}

Patch load_patch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open patch file " + path.string());
  try {
    binary::expect_magic(is, kPatchMagic, "patch file");
    if (const auto v = binary::get_u32(is); v != kPatchVersion) {
      throw std::runtime_error("unsupported patch version " + std::to_string(v));
    }
    Patch p;
    const std::uint32_t s = binary::get_u32(is);
    if (s < 4 || s > 4096) throw std::runtime_error("implausible patch size " + std::to_string(s));
    p.order = static_cast<int>(binary::get_u32(is));
    p.index = static_cast<int>(binary::get_u32(is));
    const std::uint8_t role = binary::get_u8(is);
    if (role > 1) throw std::runtime_error("bad role byte");
    p.role = static_cast<PatchRole>(role);
    p.regime.successive = binary::get_u8(is) != 0;
    p.regime.k = binary::get_u8(is);
    p.source_model_order = p.order - 1;
    p.pixels = Tensor({3, s, s});
    for (auto& v : p.pixels.mutable_data()) v = static_cast<Real>(binary::get_f32(is));
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes");
    return p;
  } catch (const std::exception& e) {
    throw std::runtime_error("invalid patch file " + path.string() + ": " + e.what());
  }
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
