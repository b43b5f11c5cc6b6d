#include "fwlab/program.hpp"

#include <algorithm>
#include <variant>

#include <json.hpp>

#include "fwlab/util.hpp"

namespace fwlab {

int Program::add(std::string op, std::vector<int> inputs, std::string value) {
  nodes.push_back({std::move(op), std::move(inputs), std::move(value)});
  return static_cast<int>(nodes.size()) - 1;
}

int Program::scene() { return add("scene"); }

int Program::filter(int input, const catalog::Value& v) {
  return add("filter", {input}, std::string(v.name()));
}

int Program::filter(int input, catalog::Dim dim, uint8_t index) {
  return add("filter", {input}, std::string(catalog::value_name(dim, index)));
}

int Program::filter_referent(const Referent& r) {
  int node = scene();
  if (r.shape) node = filter(node, catalog::Dim::Shape, *r.shape);
  if (r.modifier) node = filter(node, *r.modifier);
  return node;
}

int Program::relate(int input, const std::string& relation) {
  return add("relate", {input}, relation);
}

int Program::set_intersect(int a, int b) { return add("intersect", {a, b}); }
int Program::set_union(int a, int b) { return add("union", {a, b}); }
int Program::count(int input) { return add("count", {input}); }
int Program::exist(int input) { return add("exist", {input}); }

int Program::query(int input, catalog::Dim dim) {
  return add("query", {input}, std::string(catalog::dim_name(dim)));
}

int Program::equal_integer(int a, int b) { return add("equal_integer", {a, b}); }
int Program::greater_than(int a, int b) { return add("greater_than", {a, b}); }
int Program::less_than(int a, int b) { return add("less_than", {a, b}); }

int Program::same_attr(int a, int b, catalog::Dim dim) {
  return add("same_attr", {a, b}, std::string(catalog::dim_name(dim)));
}

namespace {

enum class NodeType { Set, Integer, Boolean, Attribute };

int expected_arity(const std::string& op) {
  if (op == "scene") return 0;
  if (op == "filter" || op == "relate" || op == "count" || op == "exist" || op == "query")
    return 1;
  return 2;  // intersect, union, comparisons, same_attr
}

NodeType node_type(const std::string& op) {
  if (op == "scene" || op == "filter" || op == "relate" || op == "intersect" || op == "union")
    return NodeType::Set;
  if (op == "count") return NodeType::Integer;
  if (op == "exist" || op == "equal_integer" || op == "greater_than" || op == "less_than" ||
      op == "same_attr")
    return NodeType::Boolean;
  if (op == "query") return NodeType::Attribute;
  throw DataError("unknown program op: " + op);
}

NodeType input_type(const std::string& op) {
  if (op == "equal_integer" || op == "greater_than" || op == "less_than")
    return NodeType::Integer;
  return NodeType::Set;
}

// Attribute values are unique across dimensions, so a bare value names its
// dimension unambiguously.
catalog::Value value_from_token(const std::string& token) {
  for (uint8_t i = 0; i < catalog::kShapes.size(); ++i)
    if (catalog::kShapes[i] == token) return {catalog::Dim::Shape, i};
  for (const auto& v : catalog::modifier_values())
    if (v.name() == token) return v;
  throw DataError("unknown attribute value: " + token);
}

}  // namespace

void validate_program(const Program& p) {
  if (p.nodes.empty()) throw DataError("empty program");
  std::vector<NodeType> types;
  for (size_t i = 0; i < p.nodes.size(); ++i) {
    const auto& node = p.nodes[i];
    const int arity = expected_arity(node.op);
    if (static_cast<int>(node.inputs.size()) != arity)
      throw DataError("node " + std::to_string(i) + " (" + node.op + "): expected " +
                      std::to_string(arity) + " inputs");
    for (int in : node.inputs) {
      if (in < 0 || in >= static_cast<int>(i))
        throw DataError("node " + std::to_string(i) + ": input " + std::to_string(in) +
                        " breaks topological order");
      if (types[in] != input_type(node.op) && node.op != "same_attr")
        throw DataError("node " + std::to_string(i) + " (" + node.op + "): input type mismatch");
      if (node.op == "same_attr" && types[in] != NodeType::Set)
        throw DataError("node " + std::to_string(i) + ": same_attr inputs must be sets");
    }
    if (node.op == "filter") value_from_token(node.value);
    if (node.op == "relate" && node.value != "behind" && node.value != "front")
      throw DataError("relate value must be behind|front, got: " + node.value);
    if (node.op == "query" || node.op == "same_attr") catalog::dim_from_name(node.value);
    types.push_back(node_type(node.op));
  }
  if (types.back() == NodeType::Set)
    throw DataError("program output must be boolean, integer, or attribute, not a set");
}

namespace {

struct Undefined {};
using Value = std::variant<Undefined, std::vector<int>, int, bool, std::string>;

const std::vector<int>& as_set(const Value& v) { return std::get<std::vector<int>>(v); }

}  // namespace

std::optional<std::string> execute_program(const Program& p, const Scene& scene) {
  validate_program(p);
  std::vector<Value> values;
  values.reserve(p.nodes.size());

  auto object_by_id = [&](int id) -> const SceneObject& { return scene.objects.at(id); };

  for (const auto& node : p.nodes) {
    // Undefined propagates to the output.
    bool undef = false;
    for (int in : node.inputs)
      if (std::holds_alternative<Undefined>(values[in])) undef = true;
    if (undef) {
      values.emplace_back(Undefined{});
      continue;
    }

    if (node.op == "scene") {
      std::vector<int> ids;
      for (const auto& obj : scene.objects) ids.push_back(obj.object_id);
      values.emplace_back(std::move(ids));
    } else if (node.op == "filter") {
      const auto v = value_from_token(node.value);
      std::vector<int> out;
      for (int id : as_set(values[node.inputs[0]]))
        if (object_by_id(id).attr(v.dim) == v.index) out.push_back(id);
      values.emplace_back(std::move(out));
    } else if (node.op == "relate") {
      const auto& in = as_set(values[node.inputs[0]]);
      if (in.size() != 1) {
        values.emplace_back(Undefined{});
        continue;
      }
      const auto& ref = object_by_id(in[0]);
      std::vector<int> out;
      for (const auto& obj : scene.objects) {
        if (obj.object_id == ref.object_id) continue;
        const auto rel = node.value == "behind" ? is_behind(obj, ref) : is_behind(ref, obj);
        if (rel.value_or(false)) out.push_back(obj.object_id);
      }
      values.emplace_back(std::move(out));
    } else if (node.op == "intersect" || node.op == "union") {
      const auto& a = as_set(values[node.inputs[0]]);
      const auto& b = as_set(values[node.inputs[1]]);
      std::vector<int> out;
      if (node.op == "intersect") {
        for (int id : a)
          if (std::find(b.begin(), b.end(), id) != b.end()) out.push_back(id);
      } else {
        out = a;
        for (int id : b)
          if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
        std::sort(out.begin(), out.end());
      }
      values.emplace_back(std::move(out));
    } else if (node.op == "count") {
      values.emplace_back(static_cast<int>(as_set(values[node.inputs[0]]).size()));
    } else if (node.op == "exist") {
      values.emplace_back(!as_set(values[node.inputs[0]]).empty());
    } else if (node.op == "query") {
      const auto& in = as_set(values[node.inputs[0]]);
      if (in.size() != 1) {
        values.emplace_back(Undefined{});
        continue;
      }
      const auto dim = catalog::dim_from_name(node.value);
      values.emplace_back(std::string(catalog::value_name(dim, object_by_id(in[0]).attr(dim))));
    } else if (node.op == "equal_integer" || node.op == "greater_than" ||
               node.op == "less_than") {
      const int a = std::get<int>(values[node.inputs[0]]);
      const int b = std::get<int>(values[node.inputs[1]]);
      bool r = node.op == "equal_integer" ? a == b : (node.op == "greater_than" ? a > b : a < b);
      values.emplace_back(r);
    } else if (node.op == "same_attr") {
      const auto& a = as_set(values[node.inputs[0]]);
      const auto& b = as_set(values[node.inputs[1]]);
      if (a.size() != 1 || b.size() != 1) {
        values.emplace_back(Undefined{});
        continue;
      }
      const auto dim = catalog::dim_from_name(node.value);
      values.emplace_back(object_by_id(a[0]).attr(dim) == object_by_id(b[0]).attr(dim));
    }
  }

  const Value& out = values.back();
  if (std::holds_alternative<Undefined>(out)) return std::nullopt;
  if (const bool* b = std::get_if<bool>(&out)) return *b ? "yes" : "no";
  if (const int* i = std::get_if<int>(&out)) return std::to_string(*i);
  return std::get<std::string>(out);
}

using nlohmann::json;

std::string program_to_json(const Program& p) {
  json arr = json::array();
  for (const auto& node : p.nodes) {
    json n;
    n["op"] = node.op;
    n["inputs"] = node.inputs;
    if (!node.value.empty()) n["value"] = node.value;
    arr.push_back(std::move(n));
  }
  return arr.dump();
}

Program program_from_json(const std::string& text) {
  json arr = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (arr.is_discarded() || !arr.is_array()) throw DataError("program must be a JSON array");
  Program p;
  for (const auto& n : arr) {
    ProgramNode node;
    node.op = n.at("op").get<std::string>();
    node.inputs = n.at("inputs").get<std::vector<int>>();
    if (n.contains("value")) node.value = n["value"].get<std::string>();
    p.nodes.push_back(std::move(node));
  }
  return p;
}

}  // namespace fwlab
