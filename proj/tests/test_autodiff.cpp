#include <doctest.h>

#include <cmath>
#include <functional>

#include "fwlab/autodiff.hpp"
#include "fwlab/checkpoint.hpp"
#include "fwlab/optim.hpp"
#include "fwlab/rng.hpp"

using namespace fwlab;

namespace {

// Independent oracle: central finite differences at double precision.
// Relative error uses max(|a|+|f|, 1e-2) in the denominator so near-zero
// gradients are judged on an absolute scale.
constexpr double kH = 1e-3;
constexpr double kTol = 1e-4;

double rel_err(double a, double f) {
  return std::abs(a - f) / std::max(std::abs(a) + std::abs(f), 1e-2);
}

// builder(tape, input_node_ids) -> output node id (any shape); the checker
// contracts it to a scalar with fixed random weights and compares every
// input element's analytic gradient against finite differences.
void check_gradients(const std::string& what, std::vector<std::vector<int>> shapes,
                     const std::function<int(Tape<double>&, const std::vector<int>&)>& builder,
                     uint64_t seed = 17) {
  Rng rng(seed);
  std::vector<Tensor<double>> inputs;
  for (const auto& s : shapes) inputs.push_back(Tensor<double>::uniform(s, rng, -1.0, 1.0));
  Tensor<double> contract_w;  // lazily shaped to the output

  auto loss_value = [&](std::vector<Tensor<double>>* sinks) {
    Tape<double> tape;
    std::vector<int> ids;
    for (size_t i = 0; i < inputs.size(); ++i)
      ids.push_back(tape.param(&inputs[i], sinks ? &(*sinks)[i] : nullptr));
    const int out = builder(tape, ids);
    if (contract_w.data.empty())
      contract_w = Tensor<double>::uniform(tape.val(out).shape, rng, -1.0, 1.0);
    const int loss = tape.sum(tape.mul(out, tape.leaf(contract_w)));
    if (sinks) tape.backward(loss);
    return tape.val(loss).data[0];
  };

  std::vector<Tensor<double>> sinks;
  for (const auto& t : inputs) sinks.emplace_back(t.shape);
  loss_value(&sinks);

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t k = 0; k < inputs[i].data.size(); ++k) {
      double& x = inputs[i].data[k];
      const double orig = x;
      x = orig + kH;
      const double fp = loss_value(nullptr);
      x = orig - kH;
      const double fm = loss_value(nullptr);
      x = orig;
      const double fd = (fp - fm) / (2 * kH);
      const double err = rel_err(sinks[i].data[k], fd);
      CHECK_MESSAGE(err < kTol, what << " input " << i << " element " << k << ": analytic "
                                     << sinks[i].data[k] << " vs fd " << fd);
    }
  }
}

}  // namespace

TEST_CASE("gradients match finite differences for every op") {
  check_gradients("matmul", {{3, 4}, {4, 2}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.matmul(in[0], in[1]);
  });
  check_gradients("add same", {{3, 4}, {3, 4}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.add(in[0], in[1]);
                  });
  check_gradients("add row broadcast", {{3, 4}, {1, 4}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.add(in[0], in[1]);
                  });
  check_gradients("add scalar broadcast", {{3, 4}, {1, 1}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.add(in[0], in[1]);
                  });
  check_gradients("mul same", {{3, 4}, {3, 4}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.mul(in[0], in[1]);
                  });
  check_gradients("mul row broadcast", {{3, 4}, {1, 4}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.mul(in[0], in[1]);
                  });
  check_gradients("mul scalar broadcast", {{3, 4}, {1, 1}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.mul(in[0], in[1]);
                  });
  check_gradients("transpose", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.transpose(in[0]);
  });
  check_gradients("concat axis0", {{2, 3}, {1, 3}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.concat({in[0], in[1]}, 0);
                  });
  check_gradients("concat axis1", {{2, 2}, {2, 3}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.concat({in[0], in[1]}, 1);
                  });
  check_gradients("slice rows", {{4, 3}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.slice(in[0], 0, 1, 2);
  });
  check_gradients("slice cols", {{3, 6}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.slice(in[0], 1, 2, 3);
  });
  check_gradients("softmax rows", {{3, 5}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.softmax(in[0], 1);
  });
  check_gradients("softmax cols", {{5, 3}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.softmax(in[0], 0);
  });
  check_gradients("sigmoid", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.sigmoid(in[0]);
  });
  check_gradients("tanh", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.tanh(in[0]);
  });
  check_gradients("elu", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.elu(in[0]);
  });
  {
    Rng mask_rng(5);
    Tensor<double> mask({3, 4});
    for (auto& v : mask.data) v = mask_rng.bernoulli(0.7) ? 1.0 : 0.0;
    check_gradients("dropout", {{3, 4}},
                    [mask](Tape<double>& t, const std::vector<int>& in) {
                      return t.dropout(in[0], 0.3, mask);
                    });
  }
  check_gradients("embedding_lookup", {{7, 4}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.embedding_lookup(in[0], {1, 5, 5, 0});
                  });
  check_gradients("conv2d 3x3", {{5, 5, 3}, {3, 3, 3, 2}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.reshape(t.conv2d(in[0], in[1], 1), {25, 2});
                  });
  check_gradients("conv2d stride 2", {{5, 5, 2}, {3, 3, 2, 2}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    return t.reshape(t.conv2d(in[0], in[1], 2), {9, 2});
                  });
  check_gradients("row_sum", {{4, 5}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.row_sum(in[0]);
  });
  check_gradients("reshape", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.reshape(in[0], {2, 6});
  });
  check_gradients("sum", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.sum(in[0]);
  });
  check_gradients("mean", {{3, 4}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.mean(in[0]);
  });
  check_gradients("cross_entropy", {{3, 6}}, [](Tape<double>& t, const std::vector<int>& in) {
    return t.cross_entropy(in[0], {1, 0, 5});
  });
  // composite: everything chained, double use of one input
  check_gradients("composite", {{2, 3}, {3, 3}, {1, 3}},
                  [](Tape<double>& t, const std::vector<int>& in) {
                    int h = t.elu(t.add(t.matmul(in[0], in[1]), in[2]));
                    int s = t.softmax(h, 1);
                    return t.mul(s, t.sigmoid(h));
                  });
}

TEST_CASE("softmax basics") {
  Tape<double> tape;
  const int x = tape.leaf(Tensor<double>({1, 3}, {0.0, 0.0, 0.0}));
  const int s = tape.softmax(x, 1);
  for (double v : tape.val(s).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Rng rng(23);
  Tape<double> t2;
  const int big = t2.softmax(t2.leaf(Tensor<double>::uniform({10, 7}, rng, -30, 30)), 1);
  const auto& out = t2.val(big);
  for (int i = 0; i < 10; ++i) {
    double sum = 0;
    for (int j = 0; j < 7; ++j) {
      CHECK(out(i, j) >= 0.0);
      sum += out(i, j);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("elu definition") {
  CHECK(elu_scalar(2.5) == 2.5);
  CHECK(elu_scalar(0.0) == 0.0);
  CHECK(elu_scalar(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
}

TEST_CASE("closed-form gradients") {
  // loss = sum(x*x) -> d/dx = 2x
  Tensor<double> x({2, 3}, {0.5, -1.0, 2.0, 0.0, 3.0, -0.25});
  Tensor<double> gx(x.shape);
  Tape<double> tape;
  const int xid = tape.param(&x, &gx);
  tape.backward(tape.sum(tape.mul(xid, xid)));
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(gx.data[i] == doctest::Approx(2 * x.data[i]).epsilon(1e-12));

  // parameter not on the loss path keeps a zero gradient
  Tensor<double> unused({2, 2});
  Tensor<double> gu(unused.shape);
  Tape<double> t2;
  t2.param(&unused, &gu);
  const int y = t2.leaf(Tensor<double>({1, 1}, {3.0}));
  t2.backward(t2.mul(y, y));
  for (double v : gu.data) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar losses and bad ids") {
  Tape<double> tape;
  const int x = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  CHECK_THROWS_AS(tape.backward(42), std::invalid_argument);
  CHECK_THROWS_AS(tape.matmul(x, tape.leaf(Tensor<double>({3, 2}))), std::invalid_argument);
}

TEST_CASE("non-finite detection is configurable") {
  Tape<double> tape;
  tape.check_finite = true;
  const int x = tape.leaf(Tensor<double>({1, 2}, {1e308, 1e308}));
  CHECK_THROWS_AS(tape.mul(x, x), std::runtime_error);
}

TEST_CASE("dropout keeps expectations within 1 percent over resampled masks") {
  const int n = 100;
  Tensor<double> x = Tensor<double>::full({1, n}, 1.0);
  Rng rng(7);
  const double rate = 0.15;
  double total = 0;
  const int trials = 10000;
  for (int trial = 0; trial < trials; ++trial) {
    Tensor<double> mask({1, n});
    for (auto& v : mask.data) v = rng.bernoulli(1.0 - rate) ? 1.0 : 0.0;
    Tape<double> tape;
    const int d = tape.dropout(tape.leaf(x), rate, mask);
    for (double v : tape.val(d).data) total += v;
  }
  const double mean = total / (static_cast<double>(trials) * n);
  CHECK(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("adam updates") {
  // zero gradient leaves parameters unchanged
  ParamStore<double> store;
  store.add("w", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Adam<double> adam;
  adam.step(store);
  CHECK(store.at("w").value.data == std::vector<double>{1, 2, 3, 4});

  // positive gradient decreases the parameter
  ParamStore<double> s2;
  s2.add("p", Tensor<double>({1, 1}, {1.0}));
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam<double> a2(cfg);
  s2.at("p").grad.data[0] = 1.0;
  a2.step(s2);
  CHECK(s2.at("p").value.data[0] < 1.0);

  // 200 steps on a quadratic bowl reach the closed-form minimum
  ParamStore<double> s3;
  s3.add("p", Tensor<double>({1, 1}, {1.0}));
  AdamConfig cfg3;
  cfg3.lr = 0.05;
  cfg3.clip_norm = 0;
  Adam<double> a3(cfg3);
  const double target = 0.7;
  for (int step = 0; step < 200; ++step) {
    s3.at("p").grad.data[0] = 2.0 * (s3.at("p").value.data[0] - target);
    a3.step(s3);
  }
  CHECK(std::abs(s3.at("p").value.data[0] - target) < 1e-3);
}

TEST_CASE("gradient clipping rescales the global norm") {
  ParamStore<double> store;
  store.add("a", Tensor<double>({1, 2}, {0.0, 0.0}));
  AdamConfig cfg;
  cfg.clip_norm = 1.0;
  Adam<double> adam(cfg);
  store.at("a").grad = Tensor<double>({1, 2}, {30.0, 40.0});
  adam.step(store);
  // after clipping the gradient was (0.6, 0.8); adam moves both params
  CHECK(store.at("a").value.data[0] < 0.0);
  CHECK(store.at("a").value.data[1] < 0.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(11);
  ParamStore<float> store;
  store.add("alpha", Tensor<float>::uniform({4, 3}, rng, -1, 1));
  store.add("beta", Tensor<float>::uniform({2, 5}, rng, -1, 1));
  save_checkpoint("ckpt_test.bin", store);

  ParamStore<float> loaded;
  loaded.add("alpha", Tensor<float>({4, 3}));
  loaded.add("beta", Tensor<float>({2, 5}));
  load_checkpoint("ckpt_test.bin", loaded);
  CHECK(loaded.at("alpha").value.data == store.at("alpha").value.data);
  CHECK(loaded.at("beta").value.data == store.at("beta").value.data);

  ParamStore<float> wrong;
  wrong.add("alpha", Tensor<float>({4, 3}));
  wrong.add("gamma", Tensor<float>({2, 5}));
  CHECK_THROWS_AS(load_checkpoint("ckpt_test.bin", wrong), DataError);

  ParamStore<double> wrong_precision;
  wrong_precision.add("alpha", Tensor<double>({4, 3}));
  wrong_precision.add("beta", Tensor<double>({2, 5}));
  CHECK_THROWS_AS(load_checkpoint("ckpt_test.bin", wrong_precision), DataError);
}
