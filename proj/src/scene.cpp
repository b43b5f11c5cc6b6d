#include "fwlab/scene.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "fwlab/util.hpp"

namespace fwlab {

namespace catalog {

std::string_view value_name(Dim dim, uint8_t index) {
  switch (dim) {
    case Dim::Shape: return kShapes.at(index);
    case Dim::Color: return kColors.at(index);
    case Dim::Material: return kMaterials.at(index);
    case Dim::Size: return kSizes.at(index);
  }
  throw std::logic_error("bad dim");
}

template <size_t N>
static int find_in(const std::array<std::string_view, N>& values, std::string_view name) {
  for (size_t i = 0; i < N; ++i)
    if (values[i] == name) return static_cast<int>(i);
  return -1;
}

uint8_t value_index(Dim dim, std::string_view name) {
  int i = -1;
  switch (dim) {
    case Dim::Shape: i = find_in(kShapes, name); break;
    case Dim::Color: i = find_in(kColors, name); break;
    case Dim::Material: i = find_in(kMaterials, name); break;
    case Dim::Size: i = find_in(kSizes, name); break;
  }
  if (i < 0)
    throw DataError("unknown " + std::string(dim_name(dim)) + " value: " + std::string(name));
  return static_cast<uint8_t>(i);
}

std::string_view dim_name(Dim dim) {
  switch (dim) {
    case Dim::Shape: return "shape";
    case Dim::Color: return "color";
    case Dim::Material: return "material";
    case Dim::Size: return "size";
  }
  throw std::logic_error("bad dim");
}

Dim dim_from_name(std::string_view name) {
  if (name == "shape") return Dim::Shape;
  if (name == "color") return Dim::Color;
  if (name == "material") return Dim::Material;
  if (name == "size") return Dim::Size;
  throw DataError("unknown attribute dimension: " + std::string(name));
}

size_t dim_size(Dim dim) {
  switch (dim) {
    case Dim::Shape: return kShapes.size();
    case Dim::Color: return kColors.size();
    case Dim::Material: return kMaterials.size();
    case Dim::Size: return kSizes.size();
  }
  throw std::logic_error("bad dim");
}

const std::vector<Value>& modifier_values() {
  static const std::vector<Value> values = [] {
    std::vector<Value> v;
    for (uint8_t i = 0; i < kColors.size(); ++i) v.push_back({Dim::Color, i});
    for (uint8_t i = 0; i < kMaterials.size(); ++i) v.push_back({Dim::Material, i});
    for (uint8_t i = 0; i < kSizes.size(); ++i) v.push_back({Dim::Size, i});
    return v;
  }();
  return values;
}

}  // namespace catalog

uint8_t SceneObject::attr(catalog::Dim dim) const {
  switch (dim) {
    case catalog::Dim::Shape: return shape;
    case catalog::Dim::Color: return color;
    case catalog::Dim::Material: return material;
    case catalog::Dim::Size: return size;
  }
  throw std::logic_error("bad dim");
}

std::string Referent::noun() const {
  return shape ? std::string(catalog::kShapes[*shape]) : "thing";
}

std::string Referent::text() const {
  if (!modifier) return noun();
  return std::string(modifier->name()) + " " + noun();
}

std::string Referent::text_plural() const { return text() + "s"; }

std::vector<Referent> all_referents(bool include_bare_thing) {
  std::vector<Referent> out;
  std::vector<std::optional<uint8_t>> nouns = {std::nullopt};
  for (uint8_t s = 0; s < catalog::kShapes.size(); ++s) nouns.push_back(s);
  for (const auto& noun : nouns) {
    if (include_bare_thing || noun.has_value()) out.push_back({noun, std::nullopt});
    for (const auto& mod : catalog::modifier_values()) out.push_back({noun, mod});
  }
  return out;
}

double min_separation(uint8_t size_a, uint8_t size_b) {
  const bool large_a = catalog::kSizes[size_a] == "large";
  const bool large_b = catalog::kSizes[size_b] == "large";
  if (large_a && large_b) return 0.7;
  if (large_a || large_b) return 0.4;
  return 0.35;
}

double half_height(uint8_t size) {
  return catalog::kSizes[size] == "large" ? 0.7 : 0.35;
}

Scene generate_scene(const WorldConfig& config, uint64_t seed, int image_index) {
  if (config.min_objects < 1 || config.max_objects < config.min_objects)
    throw UsageError("invalid object count range");
  if (config.bound <= 0.0) throw UsageError("degenerate plane bounds");

  Rng rng(seed);
  Scene scene;
  scene.image_index = image_index;
  const int count = rng.uniform_int(config.min_objects, config.max_objects);
  for (int i = 0; i < count; ++i) {
    SceneObject obj;
    obj.shape = static_cast<uint8_t>(rng.uniform_u64(catalog::kShapes.size()));
    obj.color = static_cast<uint8_t>(rng.uniform_u64(catalog::kColors.size()));
    obj.material = static_cast<uint8_t>(rng.uniform_u64(catalog::kMaterials.size()));
    obj.size = static_cast<uint8_t>(rng.uniform_u64(catalog::kSizes.size()));
    obj.object_id = i;
    bool placed = false;
    for (int attempt = 0; attempt < config.placement_retries; ++attempt) {
      obj.x = rng.uniform_real(-config.bound, config.bound);
      obj.y = rng.uniform_real(-config.bound, config.bound);
      bool ok = true;
      for (const auto& other : scene.objects) {
        const double dx = obj.x - other.x;
        const double dy = obj.y - other.y;
        if (std::sqrt(dx * dx + dy * dy) < min_separation(obj.size, other.size)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        placed = true;
        break;
      }
    }
    if (!placed)
      throw std::runtime_error("scene placement failed after " +
                               std::to_string(config.placement_retries) +
                               " attempts; bounds too tight for " + std::to_string(count) +
                               " objects");
    obj.z = half_height(obj.size);
    scene.objects.push_back(obj);
  }
  return scene;
}

std::vector<Scene> generate_scenes(const WorldConfig& config, int count, uint64_t seed,
                                   int first_image_index) {
  std::vector<Scene> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(generate_scene(config, derive_seed(seed, i), first_image_index + i));
  return out;
}

double euclidean_distance(const SceneObject& a, const SceneObject& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::optional<bool> is_behind(const SceneObject& a, const SceneObject& b, bool flip_y_axis) {
  if (a.y == b.y) return std::nullopt;
  const bool behind = a.y > b.y;
  return flip_y_axis ? !behind : behind;
}

std::vector<int> filter_objects(const Scene& scene, const Referent& r) {
  std::vector<int> ids;
  for (const auto& obj : scene.objects)
    if (r.matches(obj)) ids.push_back(obj.object_id);
  return ids;
}

using nlohmann::json;

std::string scenes_to_json(const std::vector<Scene>& scenes) {
  json doc;
  doc["scenes"] = json::array();
  for (const auto& scene : scenes) {
    json s;
    s["image_index"] = scene.image_index;
    s["objects"] = json::array();
    for (const auto& obj : scene.objects) {
      json o;
      o["shape"] = catalog::kShapes[obj.shape];
      o["color"] = catalog::kColors[obj.color];
      o["material"] = catalog::kMaterials[obj.material];
      o["size"] = catalog::kSizes[obj.size];
      o["3d_coords"] = {obj.x, obj.y, obj.z};
      s["objects"].push_back(std::move(o));
    }
    doc["scenes"].push_back(std::move(s));
  }
  return doc.dump();
}

std::vector<Scene> scenes_from_json(const std::string& text) {
  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("scenes"))
    throw DataError("not a scene file: expected top-level {\"scenes\": [...]}");
  std::vector<Scene> out;
  for (const auto& s : doc["scenes"]) {
    Scene scene;
    scene.image_index = s.at("image_index").get<int>();
    int next_id = 0;
    for (const auto& o : s.at("objects")) {
      SceneObject obj;
      obj.shape = catalog::value_index(catalog::Dim::Shape, o.at("shape").get<std::string>());
      obj.color = catalog::value_index(catalog::Dim::Color, o.at("color").get<std::string>());
      obj.material =
          catalog::value_index(catalog::Dim::Material, o.at("material").get<std::string>());
      obj.size = catalog::value_index(catalog::Dim::Size, o.at("size").get<std::string>());
      const auto& coords = o.at("3d_coords");
      obj.x = coords.at(0).get<double>();
      obj.y = coords.at(1).get<double>();
      obj.z = coords.at(2).get<double>();
      obj.object_id = next_id++;
      scene.objects.push_back(obj);
    }
    out.push_back(std::move(scene));
  }
  return out;
}

void save_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  write_file(path, scenes_to_json(scenes));
}

std::vector<Scene> load_scenes(const std::string& path) {
  return scenes_from_json(read_file(path));
}

}  // namespace fwlab
