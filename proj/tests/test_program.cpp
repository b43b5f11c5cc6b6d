#include <doctest.h>

#include <algorithm>

#include "fwlab/program.hpp"
#include "fwlab/util.hpp"

using namespace fwlab;

namespace {

Referent ref(const std::string& text) {
  Referent r;
  const auto parts = split_ws(text);
  size_t i = 0;
  if (parts.size() == 2) {
    for (const auto& v : catalog::modifier_values())
      if (v.name() == parts[0]) r.modifier = v;
    i = 1;
  }
  if (parts[i] != "thing") r.shape = catalog::value_index(catalog::Dim::Shape, parts[i]);
  return r;
}

}  // namespace

TEST_CASE("exist on an empty extension answers no") {
  Scene scene = generate_scene(WorldConfig{}, 3);
  // force: no red objects
  for (auto& obj : scene.objects) obj.color = catalog::value_index(catalog::Dim::Color, "blue");
  Program p;
  p.exist(p.filter(p.scene(), catalog::Value{catalog::Dim::Color,
                                             catalog::value_index(catalog::Dim::Color, "red")}));
  CHECK(execute_program(p, scene).value() == "no");
}

TEST_CASE("count matches a brute-force object scan on random scenes") {
  const auto scenes = generate_scenes(WorldConfig{}, 200, 3);
  const auto referents = all_referents(true);
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& scene = scenes[rng.uniform_u64(scenes.size())];
    const auto& r = referents[rng.uniform_u64(referents.size())];
    Program p;
    p.count(p.filter_referent(r));
    int expect = 0;
    for (const auto& obj : scene.objects) expect += r.matches(obj);
    CHECK(execute_program(p, scene).value() == std::to_string(expect));
  }
}

TEST_CASE("greater_than agrees with direct cardinality comparison") {
  const auto scenes = generate_scenes(WorldConfig{}, 100, 13);
  Rng rng(5);
  const auto referents = all_referents(false);
  for (int trial = 0; trial < 300; ++trial) {
    const auto& scene = scenes[rng.uniform_u64(scenes.size())];
    const auto& rx = referents[rng.uniform_u64(referents.size())];
    const auto& ry = referents[rng.uniform_u64(referents.size())];
    Program p;
    p.greater_than(p.count(p.filter_referent(rx)), p.count(p.filter_referent(ry)));
    const size_t nx = filter_objects(scene, rx).size();
    const size_t ny = filter_objects(scene, ry).size();
    CHECK(execute_program(p, scene).value() == (nx > ny ? "yes" : "no"));
  }
}

TEST_CASE("relate requires a unique reference object") {
  Scene scene;
  scene.image_index = 0;
  for (int i = 0; i < 3; ++i) {
    SceneObject o;
    o.shape = 0;  // cube
    o.color = static_cast<uint8_t>(i);
    o.material = 0;
    o.size = 0;
    o.x = 0;
    o.y = i;
    o.z = 0.35;
    o.object_id = i;
    scene.objects.push_back(o);
  }
  // unique target: the gray cube (color 0) at y=0; everything else is behind it
  Program p;
  p.count(p.relate(p.filter(p.scene(), catalog::Value{catalog::Dim::Color, 0}), "behind"));
  CHECK(execute_program(p, scene).value() == "2");

  // non-unique target -> undefined
  Program q;
  q.count(q.relate(q.filter_referent(ref("cube")), "behind"));
  CHECK_FALSE(execute_program(q, scene).has_value());

  // empty target -> undefined
  Program r;
  r.count(r.relate(r.filter_referent(ref("sphere")), "behind"));
  CHECK_FALSE(execute_program(r, scene).has_value());
}

TEST_CASE("query on a non-singleton set is undefined, never fabricated") {
  Scene scene = generate_scene(WorldConfig{}, 9);
  for (auto& obj : scene.objects) obj.shape = 0;
  Program p;
  p.query(p.filter_referent(ref("cube")), catalog::Dim::Color);
  CHECK_FALSE(execute_program(p, scene).has_value());
}

TEST_CASE("same_attr compares the unique objects' attribute") {
  Scene scene;
  SceneObject a, b;
  a.shape = 0; a.color = 1; a.material = 0; a.size = 1; a.object_id = 0; a.y = 0; a.z = 0.7;
  b.shape = 1; b.color = 2; b.material = 1; b.size = 1; b.object_id = 1; b.y = 1; b.z = 0.7;
  scene.objects = {a, b};
  Program p;
  p.same_attr(p.filter_referent(ref("cube")), p.filter_referent(ref("sphere")),
              catalog::Dim::Size);
  CHECK(execute_program(p, scene).value() == "yes");
  Program q;
  q.same_attr(q.filter_referent(ref("cube")), q.filter_referent(ref("sphere")),
              catalog::Dim::Color);
  CHECK(execute_program(q, scene).value() == "no");
}

TEST_CASE("union and intersect are set operations over ids") {
  Scene scene;
  for (int i = 0; i < 4; ++i) {
    SceneObject o;
    o.shape = i % 2;             // cube, sphere, cube, sphere
    o.color = i < 2 ? 1 : 2;     // red, red, blue, blue
    o.object_id = i;
    o.y = i;
    o.z = 0.35;
    scene.objects.push_back(o);
  }
  Program u;
  u.count(u.set_union(u.filter_referent(ref("red thing")), u.filter_referent(ref("cube"))));
  CHECK(execute_program(u, scene).value() == "3");  // {0,1} union {0,2}
  Program i;
  i.count(i.set_intersect(i.filter_referent(ref("red thing")), i.filter_referent(ref("cube"))));
  CHECK(execute_program(i, scene).value() == "1");
}

TEST_CASE("malformed programs are rejected with DataError") {
  Program arity;
  arity.add("count", {});
  CHECK_THROWS_AS(execute_program(arity, Scene{}), DataError);

  Program bad_value;
  bad_value.add("scene");
  bad_value.add("filter", {0}, "crimson");
  bad_value.add("exist", {1});
  CHECK_THROWS_AS(execute_program(bad_value, Scene{}), DataError);

  Program set_output;
  set_output.add("scene");
  CHECK_THROWS_AS(execute_program(set_output, Scene{}), DataError);

  Program forward_ref;
  forward_ref.add("exist", {1});
  CHECK_THROWS_AS(execute_program(forward_ref, Scene{}), DataError);

  Program bad_relate;
  bad_relate.add("scene");
  bad_relate.add("relate", {0}, "left");
  bad_relate.add("exist", {1});
  CHECK_THROWS_AS(execute_program(bad_relate, Scene{}), DataError);
}

TEST_CASE("program JSON round-trip") {
  Program p;
  p.greater_than(p.count(p.filter_referent(ref("red cube"))),
                 p.count(p.filter_referent(ref("metal thing"))));
  const auto text = program_to_json(p);
  CHECK(program_from_json(text) == p);
  CHECK_THROWS_AS(program_from_json("{\"op\":1}"), DataError);
}
