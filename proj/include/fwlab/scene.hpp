#pragma once

// Symbolic block-world scenes: attributed objects on a bounded plane, plus
// the geometric predicates the rest of the pipeline is grounded in.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fwlab/rng.hpp"

namespace fwlab {

namespace catalog {

enum class Dim : uint8_t { Shape = 0, Color = 1, Material = 2, Size = 3 };

inline constexpr std::array<std::string_view, 3> kShapes = {"cube", "sphere", "cylinder"};
inline constexpr std::array<std::string_view, 8> kColors = {"gray",  "red",    "blue", "green",
                                                            "brown", "purple", "cyan", "yellow"};
inline constexpr std::array<std::string_view, 2> kMaterials = {"rubber", "metal"};
inline constexpr std::array<std::string_view, 2> kSizes = {"small", "large"};

std::string_view value_name(Dim dim, uint8_t index);
uint8_t value_index(Dim dim, std::string_view name);  // throws DataError on unknown
std::string_view dim_name(Dim dim);
Dim dim_from_name(std::string_view name);
size_t dim_size(Dim dim);

// The 12 non-shape attribute values usable as referent modifiers, in canonical
// order (colors, then materials, then sizes).
struct Value {
  Dim dim;
  uint8_t index;
  std::string_view name() const { return value_name(dim, index); }
  bool operator==(const Value&) const = default;
};
const std::vector<Value>& modifier_values();

}  // namespace catalog

struct SceneObject {
  uint8_t shape = 0;
  uint8_t color = 0;
  uint8_t material = 0;
  uint8_t size = 0;
  double x = 0.0, y = 0.0, z = 0.0;  // z is the object half-height
  int object_id = 0;

  uint8_t attr(catalog::Dim dim) const;
  bool has_value(const catalog::Value& v) const { return attr(v.dim) == v.index; }
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  int image_index = 0;
  std::vector<SceneObject> objects;
  bool operator==(const Scene&) const = default;
};

// Referent: noun (thing or a shape) with at most one non-shape modifier.
struct Referent {
  std::optional<uint8_t> shape;             // nullopt = "thing"
  std::optional<catalog::Value> modifier;   // color/material/size value

  bool matches(const SceneObject& obj) const {
    if (shape && obj.shape != *shape) return false;
    if (modifier && !obj.has_value(*modifier)) return false;
    return true;
  }
  std::string noun() const;
  std::string text() const;         // "red cube", "metal thing", "cube"
  std::string text_plural() const;  // "red cubes"
  bool operator==(const Referent&) const = default;
};

// All 4 x (1 + 12) = 52 referent descriptions, bare "thing" first; pass
// include_bare_thing=false for the templates that require a modifier on it.
std::vector<Referent> all_referents(bool include_bare_thing = true);

struct WorldConfig {
  int min_objects = 3;
  int max_objects = 10;
  double bound = 3.0;           // plane is [-bound, bound]^2
  int placement_retries = 200;  // per object
};

// Objects may partially overlap but never coincide; the thresholds depend on
// the two sizes involved.
double min_separation(uint8_t size_a, uint8_t size_b);
double half_height(uint8_t size);

// Deterministic given (config, seed). Throws std::runtime_error when the
// retry budget is exhausted (bounds too tight for the object count).
Scene generate_scene(const WorldConfig& config, uint64_t seed, int image_index = 0);
std::vector<Scene> generate_scenes(const WorldConfig& config, int count, uint64_t seed,
                                   int first_image_index = 0);

double euclidean_distance(const SceneObject& a, const SceneObject& b);

// Larger y is farther from the viewer by default; flip_y_axis inverts the
// convention. nullopt on a y-tie: callers must treat the relation as
// indeterminate rather than coercing it.
std::optional<bool> is_behind(const SceneObject& a, const SceneObject& b,
                              bool flip_y_axis = false);

// Object ids whose attributes satisfy the referent, ascending, deduplicated.
std::vector<int> filter_objects(const Scene& scene, const Referent& r);

// JSON scene-set io; the field names match the original block-world scene
// files so imported ones parse with the same reader (unknown fields ignored).
std::string scenes_to_json(const std::vector<Scene>& scenes);
std::vector<Scene> scenes_from_json(const std::string& text);
void save_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::string& path);

}  // namespace fwlab
