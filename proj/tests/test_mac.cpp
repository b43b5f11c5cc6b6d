#include <doctest.h>

#include <cmath>

#include "fwlab/harness.hpp"
#include "fwlab/mac.hpp"

using namespace fwlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.cell_count = 2;
  cfg.hidden = 8;
  cfg.embed = 6;
  cfg.grid_h = 4;
  cfg.grid_w = 4;
  cfg.conv_mid = 6;
  cfg.kb_dim = 8;
  cfg.dropout = 0.15;
  return cfg;
}

Vocabulary toy_vocab(int content_words) {
  Corpus corpus;
  Question q;
  q.tokens = {"yes", "no"};
  for (int i = 0; i < content_words; ++i) q.tokens.push_back("w" + std::to_string(i));
  q.answer = "yes";
  corpus.push_back(q);
  return Vocabulary::build(corpus);
}

double rel_err(double a, double f) {
  return std::abs(a - f) / std::max(std::abs(a) + std::abs(f), 1e-2);
}

}  // namespace

TEST_CASE("rasterization basics") {
  const ModelConfig cfg = tiny_config();
  Scene empty;
  const auto zero_grid = rasterize_scene<float>(empty, cfg);
  for (float v : zero_grid.data) CHECK(v == 0.0f);

  Scene one;
  SceneObject o;
  o.shape = 1;
  o.color = 3;
  o.material = 1;
  o.size = 0;
  o.x = 0.1;
  o.y = 0.2;
  o.z = 0.35;
  one.objects = {o};
  const auto grid = rasterize_scene<float>(one, cfg);
  int occupied = 0;
  for (int cell = 0; cell < 16; ++cell)
    occupied += grid.data[static_cast<size_t>(cell) * raster_channels()] == 1.0f;
  CHECK(occupied == 1);
}

TEST_CASE("rasterization inverts to the object attributes (decode oracle)") {
  const ModelConfig cfg = tiny_config();
  const auto scenes = generate_scenes(WorldConfig{}, 1000, 3);
  for (const auto& scene : scenes) {
    const auto grid = rasterize_scene<double>(scene, cfg);
    const int c = raster_channels();
    int occupied = 0;
    for (int cell = 0; cell < cfg.grid_h * cfg.grid_w; ++cell) {
      const double* pix = grid.data.data() + static_cast<size_t>(cell) * c;
      if (pix[0] == 0.0) continue;
      ++occupied;
      // decode one-hots back into attribute indices
      auto argmax = [&](int off, int n) {
        int best = 0;
        for (int i = 1; i < n; ++i)
          if (pix[off + i] > pix[off + best]) best = i;
        return best;
      };
      const int shape = argmax(1, 3);
      const int color = argmax(4, 8);
      const int material = argmax(12, 2);
      const int size = argmax(14, 2);
      bool found = false;
      for (const auto& obj : scene.objects)
        if (obj.shape == shape && obj.color == color && obj.material == material &&
            obj.size == size)
          found = true;
      CHECK(found);
    }
    CHECK(occupied == static_cast<int>(scene.objects.size()));
  }
}

TEST_CASE("question encoding: shapes, degenerate length, empty error") {
  MacModel<double> model(tiny_config(), toy_vocab(6), 1);
  const auto enc1 = model.encode_question_eval({2});
  CHECK(enc1.words.shape == std::vector<int>{1, 8});
  CHECK(enc1.summary.shape == std::vector<int>{1, 8});
  CHECK_THROWS_AS(model.token_ids({}), UsageError);

  const auto enc3 = model.encode_question_eval({2, 3, 4});
  CHECK(enc3.words.shape == std::vector<int>{3, 8});
}

TEST_CASE("palindrome with tied directional weights gives mirrored states") {
  MacModel<double> model(tiny_config(), toy_vocab(6), 7);
  auto& params = model.params();
  params.at("lstm_b_wx").value = params.at("lstm_f_wx").value;
  params.at("lstm_b_wh").value = params.at("lstm_f_wh").value;
  params.at("lstm_b_b").value = params.at("lstm_f_b").value;
  const std::vector<int> palindrome = {3, 5, 7, 5, 3};
  const auto enc = model.encode_question_eval(palindrome);
  const int t_len = 5, h2 = 4;
  for (int t = 0; t < t_len; ++t)
    for (int j = 0; j < h2; ++j)
      CHECK(enc.fwd_states(t, j) == enc.bwd_states(t_len - 1 - t, j));
}

TEST_CASE("control step: uniform attention on identical word states") {
  const int h = 4, t_len = 3;
  Tensor<double> words({t_len, h});
  for (int t = 0; t < t_len; ++t)
    for (int j = 0; j < h; ++j) words(t, j) = 0.3 * j - 0.1;  // identical rows
  Rng rng(3);
  const auto u = Tensor<double>::uniform({2 * h, h}, rng, -1, 1);
  const auto ub = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto sw = Tensor<double>::uniform({h, 1}, rng, -1, 1);
  const auto sb = Tensor<double>::uniform({1, 1}, rng, -1, 1);
  const auto prev = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto summ = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto res = control_step(words, prev, summ, u, ub, sw, sb);
  double total = 0;
  for (double a : res.attention.data) {
    CHECK(a == doctest::Approx(1.0 / t_len).epsilon(1e-12));
    total += a;
  }
  CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("control step matches a hand-computed 2-word 3-dim case") {
  Tensor<double> words({2, 3}, {1, 0, 2, 0, 1, -1});
  Tensor<double> prev({1, 3}, {0.5, -0.5, 0});
  Tensor<double> summ({1, 3}, {1, 1, 0});
  Tensor<double> u({6, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> ub({1, 3}, {0.1, 0.2, 0.3});
  Tensor<double> sw({3, 1}, {1, 1, 1});
  Tensor<double> sb({1, 1}, {0.25});
  const auto res = control_step(words, prev, summ, u, ub, sw, sb);
  // cq = [1.6, 0.7, 0.3]; scores = [2.45, 0.65]
  const double e0 = std::exp(2.45 - 2.45), e1 = std::exp(0.65 - 2.45);
  const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
  CHECK(res.attention.data[0] == doctest::Approx(a0).epsilon(1e-10));
  CHECK(res.attention.data[1] == doctest::Approx(a1).epsilon(1e-10));
  CHECK(res.control.data[0] == doctest::Approx(a0 * 1 + a1 * 0).epsilon(1e-10));
  CHECK(res.control.data[1] == doctest::Approx(a0 * 0 + a1 * 1).epsilon(1e-10));
  CHECK(res.control.data[2] == doctest::Approx(a0 * 2 + a1 * -1).epsilon(1e-10));
}

TEST_CASE("read step: uniform knowledge base gives uniform attention") {
  const int h = 4, positions = 6;
  Tensor<double> kbp({positions, h});
  Tensor<double> base({positions, h});
  for (int p = 0; p < positions; ++p)
    for (int j = 0; j < h; ++j) {
      kbp(p, j) = 0.2 * j;
      base(p, j) = 0.1;
    }
  Rng rng(5);
  const auto mw = Tensor<double>::uniform({h, h}, rng, -1, 1);
  const auto mb = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto cw = Tensor<double>::uniform({h, h}, rng, -1, 1);
  const auto cb = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto sw = Tensor<double>::uniform({h, 1}, rng, -1, 1);
  const auto sb = Tensor<double>::uniform({1, 1}, rng, -1, 1);
  const auto mem = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto ctrl = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto res = read_step(kbp, base, mem, ctrl, mw, mb, cw, cb, sw, sb);
  double total = 0;
  for (double a : res.attention.data) {
    CHECK(a == doctest::Approx(1.0 / positions).epsilon(1e-12));
    total += a;
  }
  CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("read step matches a hand-computed 2x2 grid case") {
  Tensor<double> kbp({4, 2}, {1, 0, 0, 1, 1, 1, 0, 0});
  Tensor<double> base({4, 2}, {0.1, 0, 0, 0.1, 0.1, 0.1, 0, 0});
  Tensor<double> mem({1, 2}, {0.5, 0.25});
  Tensor<double> identity({2, 2}, {1, 0, 0, 1});
  Tensor<double> zero_b({1, 2}, {0, 0});
  Tensor<double> ctrl({1, 2}, {1, -1});
  Tensor<double> sw({2, 1}, {1, 1});
  Tensor<double> sb({1, 1}, {0});
  const auto res =
      read_step(kbp, base, mem, ctrl, identity, zero_b, identity, zero_b, sw, sb);
  // combined (pre-modulation, post-elu, all inputs nonnegative):
  //   p0 [0.6, 0], p1 [0, 0.35], p2 [0.6, 0.35], p3 [0, 0]
  // modulated by cproj [1, -1] then summed: scores [0.6, -0.35, 0.25, 0]
  const double mx = 0.6;
  const double e0 = std::exp(0.6 - mx), e1 = std::exp(-0.35 - mx), e2 = std::exp(0.25 - mx),
               e3 = std::exp(0.0 - mx);
  const double z = e0 + e1 + e2 + e3;
  const double a0 = e0 / z, a1 = e1 / z, a2 = e2 / z, a3 = e3 / z;
  CHECK(res.attention.data[0] == doctest::Approx(a0).epsilon(1e-10));
  CHECK(res.attention.data[3] == doctest::Approx(a3).epsilon(1e-10));
  CHECK(res.retrieved.data[0] == doctest::Approx(a0 + a2).epsilon(1e-10));
  CHECK(res.retrieved.data[1] == doctest::Approx(a1 + a2).epsilon(1e-10));
}

TEST_CASE("write step gate saturation") {
  const int h = 3;
  Rng rng(9);
  const auto retrieved = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto memory = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto control = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const auto ww = Tensor<double>::uniform({2 * h, h}, rng, -1, 1);
  const auto wb = Tensor<double>::uniform({1, h}, rng, -1, 1);
  const Tensor<double> gate_w({h, 1});  // zero weights: gate driven by bias only

  Tensor<double> gate_closed({1, 1}, {60.0});
  const auto kept = write_step(retrieved, memory, control, ww, wb, &gate_w, &gate_closed);
  for (int j = 0; j < h; ++j) CHECK(kept.data[j] == doctest::Approx(memory.data[j]).epsilon(1e-12));

  Tensor<double> gate_open({1, 1}, {-60.0});
  const auto replaced = write_step(retrieved, memory, control, ww, wb, &gate_w, &gate_open);
  const auto cand = write_step(retrieved, memory, control, ww, wb, nullptr, nullptr);
  for (int j = 0; j < h; ++j)
    CHECK(replaced.data[j] == doctest::Approx(cand.data[j]).epsilon(1e-12));
}

TEST_CASE("forward produces a unit-sum distribution with near-uniform initial entropy") {
  MacModel<float> model(tiny_config(), toy_vocab(20), 3);
  const auto scenes = generate_scenes(WorldConfig{}, 100, 13);
  Rng rng(31);
  double entropy_total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids;
    const int t_len = 3 + static_cast<int>(rng.uniform_u64(8));
    for (int t = 0; t < t_len; ++t)
      ids.push_back(static_cast<int>(rng.uniform_u64(model.vocab().size())));
    const auto raster =
        rasterize_scene<float>(scenes[rng.uniform_u64(scenes.size())], model.config());
    const auto out = model.forward_eval(ids, raster);
    double sum = 0, entropy = 0;
    for (float p : out.probs.data) {
      CHECK(p >= 0.0f);
      sum += p;
      if (p > 0) entropy -= double(p) * std::log(double(p));
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    entropy_total += entropy;
    for (const auto& cell : out.cells) {
      double qa = 0, ia = 0;
      for (float a : cell.question_attention.data) {
        CHECK(a >= 0.0f);
        qa += a;
      }
      for (float a : cell.image_attention.data) {
        CHECK(a >= 0.0f);
        ia += a;
      }
      CHECK(std::abs(qa - 1.0) < 1e-6);
      CHECK(std::abs(ia - 1.0) < 1e-6);
    }
  }
  const double mean_entropy = entropy_total / 100.0;
  CHECK(mean_entropy >= 0.9 * std::log(double(model.vocab().size())));
}

TEST_CASE("object order does not change the forward pass on collision-free scenes") {
  const ModelConfig cfg = tiny_config();
  MacModel<float> model(cfg, toy_vocab(8), 5);
  Scene scene;
  scene.objects = {SceneObject{0, 1, 0, 1, -2.25, -2.25, 0.7, 0},
                   SceneObject{1, 3, 1, 0, 0.75, 0.75, 0.35, 1},
                   SceneObject{2, 5, 0, 1, 2.25, -0.75, 0.7, 2}};
  Scene permuted = scene;
  std::swap(permuted.objects[0], permuted.objects[2]);
  for (int i = 0; i < 3; ++i) permuted.objects[i].object_id = i;

  const auto out1 = model.forward_eval({2, 3, 4}, rasterize_scene<float>(scene, cfg));
  const auto out2 = model.forward_eval({2, 3, 4}, rasterize_scene<float>(permuted, cfg));
  CHECK(out1.probs.data == out2.probs.data);
}

TEST_CASE("taped forward equals inference forward when dropout is off") {
  MacModel<float> model(tiny_config(), toy_vocab(10), 11);
  const auto scene = generate_scene(WorldConfig{}, 21);
  const auto raster = rasterize_scene<float>(scene, model.config());
  const std::vector<int> ids = {4, 2, 9, 3};
  const auto eval = model.forward_eval(ids, raster);
  Tape<float> tape;
  const auto taped = model.forward_taped(tape, ids, raster, nullptr, nullptr, nullptr);
  CHECK(tape.val(taped.probs).data == eval.probs.data);
  // two eval calls are identical (pure function of parameters and inputs)
  const auto again = model.forward_eval(ids, raster);
  CHECK(again.probs.data == eval.probs.data);
}

TEST_CASE("argmax ties break toward the lowest vocabulary id") {
  MacModel<float> model(tiny_config(), toy_vocab(4), 2);
  model.params().at("out_w2").value.fill(0.0f);
  model.params().at("out_b2").value.fill(0.0f);
  const auto scene = generate_scene(WorldConfig{}, 2);
  const auto out =
      model.forward_eval({1, 2}, rasterize_scene<float>(scene, model.config()));
  CHECK(out.prediction == 0);
}

TEST_CASE("end-to-end loss gradient matches finite differences at the tiny configuration") {
  Vocabulary vocab = toy_vocab(26);  // 30 tokens with specials and yes/no
  REQUIRE(vocab.size() == 30);
  MacModel<double> model(tiny_config(), vocab, 19);
  const auto scene = generate_scene(WorldConfig{}, 4);
  const auto raster = rasterize_scene<double>(scene, model.config());
  const std::vector<int> ids = {3, 17, 4, 4, 9};
  const int target = vocab.id("yes");

  auto loss_value = [&](std::vector<Tensor<double>>* sinks) {
    Tape<double> tape;
    const auto fwd = model.forward_taped(tape, ids, raster, sinks, nullptr, &target);
    if (sinks) tape.backward(fwd.loss);
    return tape.val(fwd.loss).data[0];
  };

  std::vector<Tensor<double>> sinks;
  for (const auto& p : model.params().params) sinks.emplace_back(p.value.shape);
  loss_value(&sinks);

  double max_err = 0;
  for (size_t pi = 0; pi < model.params().params.size(); ++pi) {
    auto& value = model.params().params[pi].value;
    for (size_t k = 0; k < value.data.size(); ++k) {
      const double orig = value.data[k];
      value.data[k] = orig + 1e-3;
      const double fp = loss_value(nullptr);
      value.data[k] = orig - 1e-3;
      const double fm = loss_value(nullptr);
      value.data[k] = orig;
      const double fd = (fp - fm) / 2e-3;
      max_err = std::max(max_err, rel_err(sinks[pi].data[k], fd));
    }
  }
  CHECK(max_err < 1e-4);
}

TEST_CASE("training: zero learning rate leaves parameters unchanged") {
  MacModel<float> model(tiny_config(), toy_vocab(10), 23);
  const auto scene = generate_scene(WorldConfig{}, 5);
  const auto raster = rasterize_scene<float>(scene, model.config());
  TrainExample ex{{3, 5, 2}, &raster, model.vocab().id("yes")};
  Adam<float> adam;
  adam.config().lr = 0.0;
  std::vector<std::vector<Tensor<float>>> sinks(1);
  for (const auto& p : model.params().params) sinks[0].emplace_back(p.value.shape);
  const auto before = model.params().at("out_w2").value.data;
  train_batch(model, {&ex}, {derive_seed(1, 0)}, adam, sinks, 1);
  CHECK(model.params().at("out_w2").value.data == before);
}

TEST_CASE("training: repeated updates on one example overfit it") {
  ModelConfig cfg = tiny_config();
  cfg.hidden = 16;
  cfg.kb_dim = 16;
  cfg.dropout = 0.0;  // single-example memorization signal, no noise
  MacModel<float> model(cfg, toy_vocab(10), 29);
  const auto scene = generate_scene(WorldConfig{}, 6);
  const auto raster = rasterize_scene<float>(scene, cfg);
  TrainExample ex{{3, 5, 2, 8}, &raster, model.vocab().id("no")};
  Adam<float> adam;
  adam.config().lr = 0.01;
  std::vector<std::vector<Tensor<float>>> sinks(1);
  for (const auto& p : model.params().params) sinks[0].emplace_back(p.value.shape);
  float loss = 0;
  int steps = 0;
  for (; steps < 500; ++steps) {
    loss = train_batch(model, {&ex}, {derive_seed(2, steps)}, adam, sinks, 1);
    if (loss < 0.01f) break;
  }
  CHECK_MESSAGE(loss < 0.01f, "final loss " << loss << " after " << steps << " steps");
}

TEST_CASE("training: loss on a toy corpus decreases over 50 epochs") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.1;
  const auto scenes = generate_scenes(WorldConfig{}, 20, 41);
  const auto corpus = generate_training_corpus(scenes, CorpusPreset::clevr_like(), 10, 77);
  const auto vocab = Vocabulary::build(corpus);
  MacModel<float> model(cfg, vocab, 31);

  std::vector<Tensor<float>> rasters;
  for (const auto& q : corpus) {
    for (const auto& s : scenes)
      if (s.image_index == q.image_index) rasters.push_back(rasterize_scene<float>(s, cfg));
  }
  std::vector<TrainExample> examples;
  for (size_t i = 0; i < corpus.size(); ++i)
    examples.push_back(TrainExample{model.token_ids(corpus[i].tokens), &rasters[i],
                                    vocab.id(corpus[i].answer)});
  std::vector<const TrainExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);

  Adam<float> adam;
  adam.config().lr = 3e-3;
  std::vector<std::vector<Tensor<float>>> sinks(1);
  for (const auto& p : model.params().params) sinks[0].emplace_back(p.value.shape);
  float first = 0, last = 0;
  for (int epoch = 0; epoch < 50; ++epoch) {
    std::vector<uint64_t> seeds;
    for (size_t i = 0; i < batch.size(); ++i)
      seeds.push_back(derive_seed(epoch, i));
    const float loss = train_batch(model, batch, seeds, adam, sinks, 1);
    if (epoch == 0) first = loss;
    last = loss;
  }
  CHECK(last < first);
}

TEST_CASE("training aborts on non-finite loss with diagnostics") {
  MacModel<float> model(tiny_config(), toy_vocab(6), 37);
  model.params().at("out_b2").value.data[0] = std::numeric_limits<float>::quiet_NaN();
  const auto scene = generate_scene(WorldConfig{}, 7);
  const auto raster = rasterize_scene<float>(scene, model.config());
  TrainExample ex{{2, 3}, &raster, model.vocab().id("yes")};
  Adam<float> adam;
  std::vector<std::vector<Tensor<float>>> sinks(1);
  for (const auto& p : model.params().params) sinks[0].emplace_back(p.value.shape);
  CHECK_THROWS_AS(train_batch(model, {&ex}, {1}, adam, sinks, 1), std::runtime_error);
}

TEST_CASE("model checkpoints restore the exact forward behavior") {
  MacModel<float> model(tiny_config(), toy_vocab(10), 43);
  const auto scene = generate_scene(WorldConfig{}, 8);
  const auto raster = rasterize_scene<float>(scene, model.config());
  const auto before = model.forward_eval({5, 3, 2}, raster);
  save_checkpoint("mac_ckpt.bin", model.params());

  MacModel<float> other(tiny_config(), toy_vocab(10), 44);  // different init
  const auto different = other.forward_eval({5, 3, 2}, raster);
  load_checkpoint("mac_ckpt.bin", other.params());
  const auto after = other.forward_eval({5, 3, 2}, raster);
  CHECK(after.probs.data == before.probs.data);
  CHECK(after.probs.data != different.probs.data);
}

TEST_CASE("scene encoder output shape matches the configured knowledge base") {
  MacModel<float> model(tiny_config(), toy_vocab(5), 3);
  const auto scene = generate_scene(WorldConfig{}, 10);
  const auto kb = model.encode_scene(scene);
  CHECK(kb.shape == std::vector<int>{4, 4, 8});
}
