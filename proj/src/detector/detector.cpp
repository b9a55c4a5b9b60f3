#include "catmouse/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "../common/binary_io.hpp"
#include "catmouse/ops.hpp"
#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {

constexpr std::size_t kHeadChannels = 5;
constexpr double kMaxSizeOffset = 8.0;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

std::size_t cell_of(double coord, double cell, std::size_t grid) {
  const double c = std::floor(coord / cell);
  return static_cast<std::size_t>(std::clamp(c, 0.0, double(grid - 1)));
}

// Cells whose centers fall inside the box; the cell containing the box center
// when none does.
std::vector<std::size_t> covered_cells(const Box& box, double cell, std::size_t grid) {
  std::vector<std::size_t> cells;
  for (std::size_t gy = 0; gy < grid; ++gy) {
    const double cy = (double(gy) + 0.5) * cell;
    if (cy < box.y_min || cy > box.y_max) continue;
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const double cx = (double(gx) + 0.5) * cell;
      if (cx >= box.x_min && cx <= box.x_max) cells.push_back(gy * grid + gx);
    }
  }
  if (cells.empty()) {
    cells.push_back(cell_of(box.center_y(), cell, grid) * grid + cell_of(box.center_x(), cell, grid));
  }
  return cells;
}

HeadOutput split_head(const Tensor& raw) {
  const std::size_t b = raw.dim(0), g = raw.dim(2);
  return {channel_slice(raw, 0, 1).reshaped({b, g, g}), channel_slice(raw, 1, kHeadChannels)};
}

}  // namespace

std::uint32_t ArchDescriptor::grid() const {
  std::uint32_t down = 1;
  for (auto s : strides) down *= s;
  return image_size / down;
}

void ArchDescriptor::validate() const {
  if (widths.empty() || widths.size() != strides.size()) {
    throw std::invalid_argument("ArchDescriptor: widths and strides must be non-empty and equal length");
  }
  std::uint32_t down = 1;
  for (auto s : strides) {
    if (s != 1 && s != 2) throw std::invalid_argument("ArchDescriptor: strides must be 1 or 2");
    down *= s;
  }
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("ArchDescriptor: zero width stage");
  }
  if (image_size == 0 || image_size % down != 0) {
    throw std::invalid_argument("ArchDescriptor: image size not divisible by total stride");
  }
  if (!(box_prior > 0)) throw std::invalid_argument("ArchDescriptor: box prior must be positive");
}

ArchDescriptor arch_variant(std::uint32_t variant_id, std::uint32_t image_size) {
  ArchDescriptor a;
  a.variant_id = variant_id;
  a.image_size = image_size;
  a.box_prior = 16.0 * image_size / 64.0;
  switch (variant_id % 6) {
    case 0:
      break;
    case 1:
      a.widths = {12, 24, 48, 48};
      a.strides = {2, 2, 2, 1};
      break;
    case 2:
      a.widths = {16, 32, 48, 48, 48, 48};
      a.strides = {2, 2, 2, 1, 1, 1};
      break;
    case 3:
      a.widths = {8, 16, 32, 32, 32};
      a.strides = {2, 2, 2, 1, 1};
      break;
    case 4:
      a.widths = {16, 24, 32, 48, 32};
      a.strides = {2, 2, 2, 1, 1};
      break;
    case 5:
      a.widths = {24, 32, 32, 32};
      a.strides = {2, 2, 2, 1};
      break;
  }
  return a;
}

std::string Regime::tag() const {
  return std::string(successive ? "successive" : "non-successive") + "-k" + std::to_string(k);
}

Regime Regime::parse(const std::string& tag) {
  const auto pos = tag.rfind("-k");
  if (pos == std::string::npos) throw std::invalid_argument("bad regime tag '" + tag + "'");
  const std::string kind = tag.substr(0, pos);
  Regime r;
  if (kind == "successive") {
    r.successive = true;
  } else if (kind != "non-successive") {
    throw std::invalid_argument("bad regime tag '" + tag + "'");
  }
  try {
    r.k = static_cast<std::uint32_t>(std::stoul(tag.substr(pos + 2)));
  } catch (const std::exception&) {
    throw std::invalid_argument("bad regime tag '" + tag + "'");
  }
  if (r.k == 0) throw std::invalid_argument("bad regime tag '" + tag + "'");
  return r;
}

std::vector<Tensor> DetectorModel::parameters() const {
  std::vector<Tensor> p;
  for (std::size_t i = 0; i < stage_kernels.size(); ++i) {
    p.push_back(stage_kernels[i]);
    p.push_back(stage_biases[i]);
  }
  p.push_back(one_to_one.kernel);
  p.push_back(one_to_one.bias);
  p.push_back(one_to_many.kernel);
  p.push_back(one_to_many.bias);
  return p;
}

DetectorModel DetectorModel::clone() const {
  DetectorModel m = *this;
  for (auto& t : m.stage_kernels) t = t.detached();
  for (auto& t : m.stage_biases) t = t.detached();
  for (HeadWeights* h : {&m.one_to_one, &m.one_to_many}) {
    h->kernel = h->kernel.detached();
    h->bias = h->bias.detached();
  }
  return m;
}

void DetectorModel::set_trainable(bool on) const {
  for (auto p : parameters()) p.set_requires_grad(on);
}

bool DetectorModel::frozen() const {
  const auto params = parameters();
  return std::none_of(params.begin(), params.end(), [](const Tensor& t) { return t.requires_grad(); });
}

DetectorModel init_detector(const ArchDescriptor& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  DetectorModel m;
  m.arch = arch;
  std::size_t cin = 3;
  const double gain = std::sqrt(2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope));
  for (std::uint32_t w : arch.widths) {
    const double fan_in = double(cin * 9);
    m.stage_kernels.push_back(uniform_tensor({w, cin, 3, 3}, gain * std::sqrt(3.0 / fan_in), rng));
    m.stage_biases.emplace_back(Shape{w});
    cin = w;
  }
  for (HeadWeights* h : {&m.one_to_one, &m.one_to_many}) {
    h->kernel = uniform_tensor({kHeadChannels, cin, 1, 1}, 0.1 * std::sqrt(3.0 / double(cin)), rng);
    h->bias = Tensor(Shape{kHeadChannels});
    h->bias.mutable_data()[0] = Real(-4);  // initial confidence ~0.018
  }
  return m;
}

RawPrediction forward(const DetectorModel& model, const Tensor& images) {
  const auto size = model.arch.image_size;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != size || images.dim(3) != size) {
    throw DimensionError("detector forward: expected images [B,3," + std::to_string(size) + "," +
                         std::to_string(size) + "], got " + shape_string(images.shape()));
  }
  Tensor x = images;
  const Real slope = static_cast<Real>(model.arch.leaky_slope);
  for (std::size_t i = 0; i < model.stage_kernels.size(); ++i) {
    x = leaky_relu(conv2d(x, model.stage_kernels[i], model.stage_biases[i],
                          static_cast<int>(model.arch.strides[i]), 1),
                   slope);
  }
  RawPrediction raw;
  raw.one_to_one = split_head(conv2d(x, model.one_to_one.kernel, model.one_to_one.bias, 1, 0));
  raw.one_to_many = split_head(conv2d(x, model.one_to_many.kernel, model.one_to_many.bias, 1, 0));
  raw.cell_size = model.arch.cell_size();
  raw.box_prior = model.arch.box_prior;
  raw.image_size = model.arch.image_size;
  return raw;
}

std::vector<Detection> decode(const RawPrediction& raw, std::size_t batch_index,
                              double conf_threshold, std::size_t max_det) {
  const std::size_t g = raw.grid(), plane = g * g;
  const auto logits = raw.one_to_one.logits.data().subspan(batch_index * plane, plane);
  const auto offsets = raw.one_to_one.offsets.data().subspan(batch_index * 4 * plane, 4 * plane);
  const double limit = raw.image_size;
  std::vector<Detection> out;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    const double logit = logits[cell];
    const double score = logit >= 0 ? 1.0 / (1.0 + std::exp(-logit))
                                    : std::exp(logit) / (1.0 + std::exp(logit));
    if (!(score >= conf_threshold)) continue;
    const double gx = double(cell % g), gy = double(cell / g);
    const double cx = (gx + 0.5 + offsets[cell]) * raw.cell_size;
    const double cy = (gy + 0.5 + offsets[plane + cell]) * raw.cell_size;
    const double w = raw.box_prior * std::exp(std::clamp<double>(offsets[2 * plane + cell], -kMaxSizeOffset, kMaxSizeOffset));
    const double h = raw.box_prior * std::exp(std::clamp<double>(offsets[3 * plane + cell], -kMaxSizeOffset, kMaxSizeOffset));
    Box b{std::clamp(cx - w / 2, 0.0, limit), std::clamp(cy - h / 2, 0.0, limit),
          std::clamp(cx + w / 2, 0.0, limit), std::clamp(cy + h / 2, 0.0, limit)};
    if (!(b.width() > 0 && b.height() > 0)) continue;
    out.push_back({b, score});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (out.size() > max_det) out.resize(max_det);
  return out;
}

Tensor detector_loss(const RawPrediction& raw, std::span<const std::vector<Box>> ground_truth,
                     double box_weight) {
  const std::size_t batch = raw.batch(), g = raw.grid(), plane = g * g;
  if (ground_truth.size() != batch) {
    throw DimensionError("detector_loss: " + std::to_string(ground_truth.size()) +
                         " ground-truth lists for a batch of " + std::to_string(batch));
  }
  const double cell = raw.cell_size;
  Tensor total;
  for (int head = 0; head < 2; ++head) {
    const HeadOutput& out = head == 0 ? raw.one_to_one : raw.one_to_many;
    std::vector<Real> conf_target(batch * plane, Real(0));
    std::vector<Real> box_target(batch * 4 * plane, Real(0));
    std::vector<Real> box_mask(batch * 4 * plane, Real(0));
    // Distance of the assigned GT center per cell; nearer GT centers win.
    std::vector<double> owner_dist(batch * plane, std::numeric_limits<double>::infinity());
    std::size_t positives = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (const Box& box : ground_truth[b]) {
        std::vector<std::size_t> cells;
        if (head == 0) {
          cells.push_back(cell_of(box.center_y(), cell, g) * g + cell_of(box.center_x(), cell, g));
        } else {
          cells = covered_cells(box, cell, g);
        }
        for (std::size_t c : cells) {
          const double gx = double(c % g), gy = double(c / g);
          const double dx = box.center_x() / cell - (gx + 0.5);
          const double dy = box.center_y() / cell - (gy + 0.5);
          const double dist = dx * dx + dy * dy;
          const std::size_t k = b * plane + c;
          if (dist >= owner_dist[k]) continue;
          if (!std::isfinite(owner_dist[k])) ++positives;
          owner_dist[k] = dist;
          conf_target[k] = Real(1);
          const double t[4] = {dx, dy, std::log(box.width() / raw.box_prior),
                               std::log(box.height() / raw.box_prior)};
          for (std::size_t j = 0; j < 4; ++j) {
            box_target[(b * 4 + j) * plane + c] = static_cast<Real>(t[j]);
            box_mask[(b * 4 + j) * plane + c] = Real(1);
          }
        }
      }
    }
    const Real norm = Real(1) / static_cast<Real>(std::max<std::size_t>(1, positives));
    const Tensor conf = scale(sum(bce_with_logits(out.logits, Tensor(out.logits.shape(), conf_target))), norm);
    const Tensor target(out.offsets.shape(), std::move(box_target));
    const Tensor mask(out.offsets.shape(), std::move(box_mask));
    const Tensor reg = scale(sum(mul(smooth_l1(out.offsets, target, Real(0.1)), mask)),
                             norm * static_cast<Real>(box_weight));
    const Tensor head_loss = add(conf, reg);
    total = total.defined() ? add(total, head_loss) : head_loss;
  }
  return total;
}

TargetCells target_cells(const RawPrediction& raw, std::size_t batch_index,
                         std::span<const Box> boxes) {
  const std::size_t g = raw.grid(), plane = g * g;
  TargetCells cells;
  for (const Box& box : boxes) {
    const auto candidates = covered_cells(box, raw.cell_size, g);
    for (int head = 0; head < 2; ++head) {
      const auto logits = (head == 0 ? raw.one_to_one : raw.one_to_many).logits.data();
      std::size_t best = candidates.front();
      for (std::size_t c : candidates) {
        if (logits[batch_index * plane + c] > logits[batch_index * plane + best]) best = c;
      }
      (head == 0 ? cells.one_to_one : cells.one_to_many).push_back(batch_index * plane + best);
    }
  }
  return cells;
}

std::vector<Tensor> target_confidence_logits(const RawPrediction& raw, std::size_t batch_index,
                                             std::span<const Box> boxes) {
  const TargetCells cells = target_cells(raw, batch_index, boxes);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::size_t a = cells.one_to_one[i], b = cells.one_to_many[i];
    out.push_back(gather(raw.one_to_one.logits, std::span(&a, 1)).reshaped({}));
    out.push_back(gather(raw.one_to_many.logits, std::span(&b, 1)).reshaped({}));
  }
  return out;
}

namespace {
constexpr char kModelMagic[5] = "CMLD";
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_detector: cannot open " + path.string());
  os.write(kModelMagic, 4);
  binary::put_u32(os, kModelVersion);
  const ArchDescriptor& a = model.arch;
  binary::put_u32(os, a.variant_id);
  binary::put_u32(os, static_cast<std::uint32_t>(a.widths.size()));
  for (std::size_t i = 0; i < a.widths.size(); ++i) {
    binary::put_u32(os, a.widths[i]);
    binary::put_u32(os, a.strides[i]);
  }
  binary::put_u32(os, a.image_size);
  binary::put_f64(os, a.box_prior);
  binary::put_f64(os, a.leaky_slope);
  binary::put_i32(os, model.order);
  binary::put_u8(os, model.regime.successive ? 1 : 0);
  binary::put_u8(os, static_cast<std::uint8_t>(model.regime.k));
  for (const Tensor& t : model.parameters()) {
    for (Real v : t.data()) binary::put_f32(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("save_detector: write failed for " + path.string());
}

DetectorModel load_detector(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  try {
    binary::expect_magic(is, kModelMagic, "checkpoint");
    if (const auto v = binary::get_u32(is); v != kModelVersion) {
      throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
    }
    ArchDescriptor a;
    a.variant_id = binary::get_u32(is);
    const std::uint32_t stages = binary::get_u32(is);
    if (stages == 0 || stages > 64) throw std::runtime_error("implausible stage count");
    a.widths.resize(stages);
    a.strides.resize(stages);
    for (std::uint32_t i = 0; i < stages; ++i) {
      a.widths[i] = binary::get_u32(is);
      a.strides[i] = binary::get_u32(is);
    }
    a.image_size = binary::get_u32(is);
    a.box_prior = binary::get_f64(is);
    a.leaky_slope = binary::get_f64(is);
    a.validate();
    DetectorModel m = init_detector(a, 0);
    m.order = binary::get_i32(is);
    m.regime.successive = binary::get_u8(is) != 0;
    m.regime.k = binary::get_u8(is);
    for (Tensor t : m.parameters()) {
      for (auto& v : t.mutable_data()) v = static_cast<Real>(binary::get_f32(is));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes");
    return m;
  } catch (const std::exception& e) {
    throw std::runtime_error("invalid checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
