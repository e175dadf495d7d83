#ifndef PREFUSION_CLASSES_HPP
#define PREFUSION_CLASSES_HPP

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace prefusion {

/// The ten nuScenes detection classes.
inline constexpr int kNumClasses = 10;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "car",        "truck",      "construction_vehicle", "bus",        "trailer",
    "barrier",    "motorcycle", "bicycle",              "pedestrian", "traffic_cone"};

inline std::optional<int> class_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == name) return i;
  return std::nullopt;
}

inline std::string class_name(int id) {
  if (id < 0 || id >= kNumClasses) return "background";
  return std::string(kClassNames[id]);
}

/// Nominal (length, width, height) in meters, used by random scene generation.
struct ClassShape {
  double length, width, height;
};

inline constexpr std::array<ClassShape, kNumClasses> kClassShapes = {{
    {4.6, 1.9, 1.7},    // car
    {7.0, 2.5, 3.0},    // truck
    {6.0, 2.8, 3.2},    // construction_vehicle
    {11.0, 2.9, 3.4},   // bus
    {10.0, 2.8, 3.6},   // trailer
    {0.5, 2.5, 1.0},    // barrier
    {2.1, 0.8, 1.5},    // motorcycle
    {1.8, 0.6, 1.3},    // bicycle
    {0.7, 0.7, 1.75},   // pedestrian
    {0.45, 0.45, 0.8},  // traffic_cone
}};

}  // namespace prefusion

#endif  // PREFUSION_CLASSES_HPP
