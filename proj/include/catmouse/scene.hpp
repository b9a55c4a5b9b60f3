#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "catmouse/tensor.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

/// Axis-aligned box in continuous pixel coordinates (x right, y down).
struct Box {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double short_side() const { return width() < height() ? width() : height(); }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  friend bool operator==(const Box&, const Box&) = default;
};

enum class Family : std::uint8_t { DetectorTrain = 0, PatchTrain = 1, Eval = 2 };

std::string to_string(Family family);
Family parse_family(const std::string& text);

struct DatasetSpec {
  Family family = Family::DetectorTrain;
  int image_size = 64;
  int actors_min = 1;
  int actors_max = 3;
  int distractors_min = 1;
  int distractors_max = 3;
  // Actors are upright, so width is the short side and actor_width_min is the
  // guaranteed minimum box side.
  int actor_width_min = 12;
  int actor_width_max = 22;
  double aspect_min = 1.5;
  double aspect_max = 2.0;
  double background_gradient = 0.15;
  double background_noise = 0.02;
  std::uint64_t seed = 0;

  int min_side() const { return actor_width_min; }
};

/// Defaults per family. The patch-train family frames fewer, larger actors.
DatasetSpec default_dataset_spec(Family family, std::uint64_t seed, int image_size = 64);

struct Scene {
  std::size_t index = 0;
  Tensor image;  // [3,H,W] in [0,1]
  std::vector<Box> target_boxes;
  std::vector<Box> distractor_boxes;
};

/// Deterministic in (spec, index); families draw from disjoint seed streams.
Scene generate_scene(const DatasetSpec& spec, std::size_t index);

struct Dataset {
  DatasetSpec spec;
  std::vector<Scene> scenes;

  std::size_t size() const { return scenes.size(); }
};

Dataset generate_dataset(const DatasetSpec& spec, std::size_t count);

/// Writes image_NNNNN.png files plus annotations.json (target boxes per image).
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Writes an [3,H,W] or [H,W] tensor as an 8-bit PNG, clamping to [0,1].
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace catmouse::inline CATMOUSE_PRECISION
