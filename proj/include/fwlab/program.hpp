#pragma once

// Executable question semantics: small DAG programs over a scene whose
// evaluation yields an answer token, or an undefined outcome when a
// presupposition fails (empty relate target, query on a non-singleton, ...).

#include <optional>
#include <string>
#include <vector>

#include "fwlab/scene.hpp"

namespace fwlab {

// Node ops:
//   scene                       -> all object ids
//   filter       value=<attr>   -> subset of input set matching the value
//   relate       value=behind|front -> objects standing in the relation to the
//                                unique object of the input set
//   intersect, union            -> set algebra over two inputs
//   count, exist                -> integer / boolean over one set input
//   query        value=<dim>    -> attribute of the unique object of the input
//   equal_integer, greater_than, less_than -> comparison of two integer inputs
//   same_attr    value=<dim>    -> whether the unique objects of two inputs
//                                share the attribute
struct ProgramNode {
  std::string op;
  std::vector<int> inputs;
  std::string value;  // op-specific argument, empty when unused
  bool operator==(const ProgramNode&) const = default;
};

struct Program {
  std::vector<ProgramNode> nodes;  // topological order, last node is the output
  bool operator==(const Program&) const = default;

  // Builder helpers returning the new node index.
  int add(std::string op, std::vector<int> inputs = {}, std::string value = "");
  int scene();
  int filter(int input, const catalog::Value& v);
  int filter(int input, catalog::Dim dim, uint8_t index);
  int filter_referent(const Referent& r);  // scene + shape/modifier filters
  int relate(int input, const std::string& relation);
  int set_intersect(int a, int b);
  int set_union(int a, int b);
  int count(int input);
  int exist(int input);
  int query(int input, catalog::Dim dim);
  int equal_integer(int a, int b);
  int greater_than(int a, int b);
  int less_than(int a, int b);
  int same_attr(int a, int b, catalog::Dim dim);
};

// Structural validation; throws DataError naming the offending node.
void validate_program(const Program& p);

// Deterministic evaluation. Booleans render as "yes"/"no", integers as digit
// strings, attributes as catalog tokens. nullopt is the undefined outcome;
// callers must discard the item rather than fabricate an answer.
std::optional<std::string> execute_program(const Program& p, const Scene& scene);

std::string program_to_json(const Program& p);
Program program_from_json(const std::string& text);

}  // namespace fwlab
