#ifndef IPRM_SYNTH_SCENE_HPP_
#define IPRM_SYNTH_SCENE_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iprm/random.hpp"

namespace iprm::synth {

enum Attribute : int { kShape = 0, kColor = 1, kSize = 2, kMaterial = 3 };
inline constexpr int kNumAttributes = 4;

inline constexpr std::array<std::string_view, 4> kShapes{"cube", "sphere", "cylinder", "cone"};
inline constexpr std::array<std::string_view, 6> kColors{"red",    "green",  "blue",
                                                         "yellow", "purple", "cyan"};
inline constexpr std::array<std::string_view, 2> kSizes{"small", "large"};
inline constexpr std::array<std::string_view, 2> kMaterials{"rubber", "metal"};
inline constexpr std::array<std::string_view, 4> kAttributeNames{"shape", "color", "size",
                                                                 "material"};

inline constexpr double kMinObjectDistance = 0.05;
inline constexpr int kPlacementBudget = 1000;
inline constexpr std::size_t kMinObjects = 3;
inline constexpr std::size_t kMaxObjects = 10;

inline std::size_t attribute_cardinality(int attr) {
  switch (attr) {
    case kShape: return kShapes.size();
    case kColor: return kColors.size();
    case kSize: return kSizes.size();
    case kMaterial: return kMaterials.size();
  }
  throw std::out_of_range("unknown attribute index " + std::to_string(attr));
}

inline std::string_view attribute_value_name(int attr, int value) {
  if (value < 0 || static_cast<std::size_t>(value) >= attribute_cardinality(attr)) {
    throw std::out_of_range("attribute value " + std::to_string(value) + " out of range for " +
                            std::string(kAttributeNames[attr]));
  }
  switch (attr) {
    case kShape: return kShapes[value];
    case kColor: return kColors[value];
    case kSize: return kSizes[value];
    default: return kMaterials[value];
  }
}

inline int attribute_from_name(std::string_view name) {
  for (int a = 0; a < kNumAttributes; ++a) {
    if (kAttributeNames[a] == name) return a;
  }
  throw std::out_of_range("unknown attribute '" + std::string(name) + "'");
}

inline int attribute_value_from_name(int attr, std::string_view name) {
  for (std::size_t v = 0; v < attribute_cardinality(attr); ++v) {
    if (attribute_value_name(attr, static_cast<int>(v)) == name) return static_cast<int>(v);
  }
  throw std::out_of_range("unknown " + std::string(kAttributeNames[attr]) + " value '" +
                          std::string(name) + "'");
}

struct SceneObject {
  std::array<int, kNumAttributes> attrs{};  // shape, color, size, material
  double x = 0;
  double y = 0;

  int shape() const { return attrs[kShape]; }
  int color() const { return attrs[kColor]; }
  int size() const { return attrs[kSize]; }
  int material() const { return attrs[kMaterial]; }

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;

  bool operator==(const Scene&) const = default;
};

/// Thrown when the rejection sampler cannot place objects.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double distance(const SceneObject& a, const SceneObject& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Uniform attributes; positions rejection-sampled so that all pairs are at
/// least kMinObjectDistance apart.
inline Scene gen_scene(Rng& rng, std::size_t n_objects, std::uint64_t seed = 0) {
  if (n_objects < kMinObjects || n_objects > kMaxObjects) {
    throw std::invalid_argument("scene object count " + std::to_string(n_objects) +
                                " outside [3, 10]");
  }
  Scene scene;
  scene.seed = seed;
  for (std::size_t i = 0; i < n_objects; ++i) {
    SceneObject o;
    for (int a = 0; a < kNumAttributes; ++a) {
      o.attrs[a] = static_cast<int>(rng.below(attribute_cardinality(a)));
    }
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementBudget && !placed; ++attempt) {
      o.x = rng.uniform();
      o.y = rng.uniform();
      placed = true;
      for (const auto& other : scene.objects) {
        if (distance(o, other) < kMinObjectDistance) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) {
      throw PlacementError("could not place object " + std::to_string(i) + " after " +
                           std::to_string(kPlacementBudget) + " tries");
    }
    scene.objects.push_back(o);
  }
  return scene;
}

}  // namespace iprm::synth

#endif  // IPRM_SYNTH_SCENE_HPP_
