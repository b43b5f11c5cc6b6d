#pragma once

// Semantic probe suites: exhaustive template bindings over the referent
// universe, presupposition-checked image sampling, and oracle answer keys
// with the analysis metadata (truth context, distance bin, count difference).

#include <string>
#include <vector>

#include "fwlab/question.hpp"
#include "fwlab/scene.hpp"

namespace fwlab {

enum class ProbeKind { And, Or, Behind, InFrontOf, More, Fewer, SameSet, SamePair };

const std::vector<ProbeKind>& all_probe_kinds();
std::string probe_name(ProbeKind kind);        // "AND", "IN_FRONT_OF", ...
ProbeKind probe_from_name(const std::string&); // throws UsageError on unknown

struct ProbeSpec {
  ProbeKind kind = ProbeKind::And;
  int max_images = 10;
};

struct ProbeItem {
  ProbeKind kind = ProbeKind::And;
  std::vector<std::string> tokens;
  int image_index = 0;
  std::string answer;   // yes | no | ambiguous
  std::string context;  // truth context label, see probe.cpp
  double distance = -1.0;  // spatial probes only
  int distance_bin = -1;
  bool has_count_diff = false;
  int count_diff = 0;  // |X| - |Y|, count probes only
  Bindings bindings;
};

// Exhaustive, deduplicated, deterministic binding enumeration:
//   AND/OR      52 referents x cross-dimension property pairs not clashing
//               with the referent's modifier (528 bindings)
//   spatial /   ordered referent pairs, bare "thing" excluded (51*50)
//   count
//   SAME_SET    referent x property not given by its terms
//   SAME_PAIR   unordered distinct referent pairs x property not given by
//               either referent's terms
std::vector<Bindings> enumerate_bindings(const ProbeSpec& spec);

// Scenes from the pool satisfying the template's presuppositions, uniformly
// down-sampled to max_n when more qualify; ascending image_index order;
// deterministic given seed.
std::vector<int> sample_images_for_question(const ProbeSpec& spec, const Bindings& b,
                                            const std::vector<Scene>& pool, int max_n,
                                            uint64_t seed);

bool satisfies_presupposition(ProbeKind kind, const Scene& scene, const Bindings& b);

struct AndOrResult {
  std::string answer;   // yes | no | ambiguous
  std::string context;  // both | alpha_only | beta_only | neither
};
// AND: yes iff some X-object has both properties. OR: yes iff some X-object
// has exactly one; ambiguous iff every witness has both (the inclusive /
// exclusive readings disagree); no otherwise.
AndOrResult and_or_answer(const Scene& scene, const Referent& x, const catalog::Value& alpha,
                          const catalog::Value& beta, bool connective_and);

// Preconditions are the probe presuppositions; all throw UsageError when
// called on a scene that violates them.
std::string spatial_answer(const Scene& scene, const Referent& x, const Referent& y,
                           bool behind_word);
std::string count_answer(const Scene& scene, const Referent& x, const Referent& y,
                         bool more_word);
std::string same_set_answer(const Scene& scene, const Referent& x, catalog::Dim property);
std::string same_pair_answer(const Scene& scene, const Referent& x, const Referent& y,
                             catalog::Dim property);

struct ProbeManifest {
  std::string probe;
  int n_questions = 0;        // bindings with at least one qualifying image
  int n_items = 0;
  std::map<std::string, int> items_by_context;
  std::map<std::string, int> items_by_answer;
  std::string policy_hash;
  std::string to_json() const;
};

std::vector<ProbeItem> build_probe(const ProbeSpec& spec, const std::vector<Scene>& pool,
                                   uint64_t seed, ProbeManifest* manifest = nullptr);

std::string probe_item_to_jsonl(const ProbeItem& item);
ProbeItem probe_item_from_jsonl(const std::string& line);
void save_probe(const std::string& path, const std::vector<ProbeItem>& items);
std::vector<ProbeItem> load_probe(const std::string& path);

}  // namespace fwlab
