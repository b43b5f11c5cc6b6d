#pragma once

// Recurrent attention question-answering model over the symbolic scene grid:
// biLSTM question encoder, a two-layer convolutional scene encoder, a chain
// of control/read/write cells attending over words and grid positions, and a
// classifier over the shared vocabulary.
//
// Two forward paths share the same kernels in the same order: the taped path
// (training, gradient checks) and a tape-free inference path (probe
// evaluation); with dropout off they produce identical outputs. The cell
// steps are exposed as free functions so each piece is testable on its own.

#include <string>
#include <vector>

#include <json.hpp>

#include "fwlab/autodiff.hpp"
#include "fwlab/checkpoint.hpp"
#include "fwlab/optim.hpp"
#include "fwlab/question.hpp"
#include "fwlab/scene.hpp"

namespace fwlab {

struct ModelConfig {
  int cell_count = 4;
  int hidden = 128;    // must be even (split across biLSTM directions)
  int embed = 64;
  int grid_h = 6, grid_w = 6;
  int conv_mid = 48;   // first convolution output channels
  int kb_dim = 128;    // knowledge-base channels after the second convolution
  double dropout = 0.15;
  bool write_gate = true;
  double world_bound = 3.0;  // plane half-extent used by the rasterizer

  static ModelConfig desk() { return ModelConfig{}; }
  static ModelConfig paper() {
    ModelConfig c;
    c.hidden = 512;
    c.embed = 300;
    c.kb_dim = 1024;
    c.conv_mid = 256;
    return c;
  }

  void validate() const {
    if (cell_count < 1) throw UsageError("cell_count must be >= 1");
    if (hidden <= 0 || hidden % 2 != 0) throw UsageError("hidden size must be positive even");
    if (embed <= 0 || kb_dim <= 0 || conv_mid <= 0) throw UsageError("sizes must be positive");
    if (grid_h <= 0 || grid_w <= 0) throw UsageError("grid must be non-degenerate");
    if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must be in [0,1)");
  }

  nlohmann::json to_json() const {
    return {{"cell_count", cell_count}, {"hidden", hidden},     {"embed", embed},
            {"grid_h", grid_h},         {"grid_w", grid_w},     {"conv_mid", conv_mid},
            {"kb_dim", kb_dim},         {"dropout", dropout},   {"write_gate", write_gate},
            {"world_bound", world_bound}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.cell_count = j.value("cell_count", c.cell_count);
    c.hidden = j.value("hidden", c.hidden);
    c.embed = j.value("embed", c.embed);
    c.grid_h = j.value("grid_h", c.grid_h);
    c.grid_w = j.value("grid_w", c.grid_w);
    c.conv_mid = j.value("conv_mid", c.conv_mid);
    c.kb_dim = j.value("kb_dim", c.kb_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.write_gate = j.value("write_gate", c.write_gate);
    c.world_bound = j.value("world_bound", c.world_bound);
    return c;
  }
};

// occupancy + shape one-hots + color + material + size + (dx, dy) offsets
inline int raster_channels() {
  return 1 + static_cast<int>(catalog::kShapes.size() + catalog::kColors.size() +
                              catalog::kMaterials.size() + catalog::kSizes.size()) +
         2;
}

// Deterministic scene rasterization onto the grid. At most one object per
// cell: contested cells go to the object nearest the cell center and displaced
// objects take the nearest free cell (ties by object id / cell index).
template <typename T>
Tensor<T> rasterize_scene(const Scene& scene, const ModelConfig& cfg) {
  const int h = cfg.grid_h, w = cfg.grid_w, c = raster_channels();
  Tensor<T> grid({h, w, c});
  const double extent = 2.0 * cfg.world_bound;
  const double cell_w = extent / w, cell_h = extent / h;

  auto cell_of = [&](double x, double y) {
    int cx = static_cast<int>((x + cfg.world_bound) / cell_w);
    int cy = static_cast<int>((y + cfg.world_bound) / cell_h);
    cx = std::clamp(cx, 0, w - 1);
    cy = std::clamp(cy, 0, h - 1);
    return std::pair<int, int>(cx, cy);
  };
  auto center = [&](int cx, int cy) {
    return std::pair<double, double>(-cfg.world_bound + (cx + 0.5) * cell_w,
                                     -cfg.world_bound + (cy + 0.5) * cell_h);
  };

  struct Claim {
    double dist;
    int object_id;
    int cell;
  };
  std::vector<Claim> claims;
  for (const auto& obj : scene.objects) {
    auto [cx, cy] = cell_of(obj.x, obj.y);
    auto [mx, my] = center(cx, cy);
    const double dx = obj.x - mx, dy = obj.y - my;
    claims.push_back({dx * dx + dy * dy, obj.object_id, cy * w + cx});
  }
  std::sort(claims.begin(), claims.end(), [](const Claim& a, const Claim& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.object_id < b.object_id;
  });

  std::vector<bool> taken(static_cast<size_t>(h) * w, false);
  for (const auto& claim : claims) {
    const auto& obj = scene.objects[claim.object_id];
    int cell = claim.cell;
    if (taken[cell]) {
      double best = std::numeric_limits<double>::max();
      int best_cell = -1;
      for (int cy = 0; cy < h; ++cy)
        for (int cx = 0; cx < w; ++cx) {
          const int idx = cy * w + cx;
          if (taken[idx]) continue;
          auto [mx, my] = center(cx, cy);
          const double d = (obj.x - mx) * (obj.x - mx) + (obj.y - my) * (obj.y - my);
          if (d < best) {
            best = d;
            best_cell = idx;
          }
        }
      cell = best_cell;
    }
    taken[cell] = true;
    T* pix = grid.data.data() + static_cast<size_t>(cell) * c;
    int ch = 0;
    pix[ch++] = T(1);  // occupancy
    pix[ch + obj.shape] = T(1);
    ch += static_cast<int>(catalog::kShapes.size());
    pix[ch + obj.color] = T(1);
    ch += static_cast<int>(catalog::kColors.size());
    pix[ch + obj.material] = T(1);
    ch += static_cast<int>(catalog::kMaterials.size());
    pix[ch + obj.size] = T(1);
    ch += static_cast<int>(catalog::kSizes.size());
    const int cx = cell % w, cy = cell / w;
    pix[ch++] = static_cast<T>((obj.x + cfg.world_bound) / cell_w - cx);
    pix[ch++] = static_cast<T>((obj.y + cfg.world_bound) / cell_h - cy);
  }
  return grid;
}

// ---- tape-free building blocks (the inference path is assembled from
// these; tests drive them directly) ----

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y({x.shape[0], w.shape[1]});
  matmul_into(y, x, w);
  broadcast_binary_into(y, y, b, [](T a, T bb) { return a + bb; });
  return y;
}

// scores [n,1] -> softmax over the n entries laid out as [1,n].
template <typename T>
Tensor<T> scores_to_attention(const Tensor<T>& scores) {
  Tensor<T> row({1, scores.shape[0]});
  for (int i = 0; i < scores.shape[0]; ++i) row.data[i] = scores.data[i];
  Tensor<T> att({1, scores.shape[0]});
  softmax_rows_into(att, row);
  return att;
}

template <typename T>
struct QuestionEncoding {
  Tensor<T> fwd_states;  // [T, h/2] raw directional outputs
  Tensor<T> bwd_states;  // [T, h/2]
  Tensor<T> words;       // [T, hidden] projected contextual word states
  Tensor<T> summary;     // [1, hidden] projected concatenated final states
};

template <typename T>
struct LstmParams {
  const Tensor<T>& wx;  // [e, 4*h2], gate order i f g o
  const Tensor<T>& wh;  // [h2, 4*h2]
  const Tensor<T>& b;   // [1, 4*h2]
};

// One direction of the recurrent encoder over [T, e] embeddings; writes the
// per-step hidden states into states ([T, h2]) and returns the final state.
template <typename T>
Tensor<T> lstm_pass(const Tensor<T>& emb, const LstmParams<T>& p, bool forward_dir,
                    Tensor<T>& states) {
  const int t_len = emb.shape[0], e = emb.shape[1];
  const int h2 = p.wh.shape[0];
  Tensor<T> hstate({1, h2}), cstate({1, h2});
  Tensor<T> x({1, e}), g1({1, 4 * h2}), g2({1, 4 * h2});
  for (int step = 0; step < t_len; ++step) {
    const int t = forward_dir ? step : t_len - 1 - step;
    std::copy(emb.data.begin() + static_cast<size_t>(t) * e,
              emb.data.begin() + static_cast<size_t>(t + 1) * e, x.data.begin());
    matmul_into(g1, x, p.wx);
    matmul_into(g2, hstate, p.wh);
    for (int j = 0; j < 4 * h2; ++j) g1.data[j] = g1.data[j] + g2.data[j] + p.b.data[j];
    for (int j = 0; j < h2; ++j) {
      const T ig = sigmoid_scalar(g1.data[j]);
      const T fg = sigmoid_scalar(g1.data[h2 + j]);
      const T gg = std::tanh(g1.data[2 * h2 + j]);
      const T og = sigmoid_scalar(g1.data[3 * h2 + j]);
      cstate.data[j] = fg * cstate.data[j] + ig * gg;
      hstate.data[j] = og * std::tanh(cstate.data[j]);
    }
    std::copy(hstate.data.begin(), hstate.data.end(),
              states.data.begin() + static_cast<size_t>(t) * h2);
  }
  return hstate;
}

template <typename T>
QuestionEncoding<T> encode_question(const Tensor<T>& emb, const LstmParams<T>& fwd,
                                    const LstmParams<T>& bwd, const Tensor<T>& word_proj,
                                    const Tensor<T>& word_proj_b, const Tensor<T>& summ_proj,
                                    const Tensor<T>& summ_proj_b) {
  if (emb.shape[0] < 1) throw UsageError("cannot encode an empty question");
  const int t_len = emb.shape[0];
  const int h2 = fwd.wh.shape[0];
  const int hidden = 2 * h2;
  QuestionEncoding<T> enc;
  enc.fwd_states = Tensor<T>({t_len, h2});
  enc.bwd_states = Tensor<T>({t_len, h2});
  Tensor<T> fwd_final = lstm_pass(emb, fwd, true, enc.fwd_states);
  Tensor<T> bwd_final = lstm_pass(emb, bwd, false, enc.bwd_states);

  Tensor<T> words_raw({t_len, hidden});
  for (int t = 0; t < t_len; ++t) {
    std::copy(enc.fwd_states.data.begin() + static_cast<size_t>(t) * h2,
              enc.fwd_states.data.begin() + static_cast<size_t>(t + 1) * h2,
              words_raw.data.begin() + static_cast<size_t>(t) * hidden);
    std::copy(enc.bwd_states.data.begin() + static_cast<size_t>(t) * h2,
              enc.bwd_states.data.begin() + static_cast<size_t>(t + 1) * h2,
              words_raw.data.begin() + static_cast<size_t>(t) * hidden + h2);
  }
  enc.words = linear(words_raw, word_proj, word_proj_b);
  Tensor<T> summary_raw({1, hidden});
  std::copy(fwd_final.data.begin(), fwd_final.data.end(), summary_raw.data.begin());
  std::copy(bwd_final.data.begin(), bwd_final.data.end(), summary_raw.data.begin() + h2);
  enc.summary = linear(summary_raw, summ_proj, summ_proj_b);
  return enc;
}

template <typename T>
struct ControlResult {
  Tensor<T> control;    // [1, hidden]
  Tensor<T> attention;  // [1, T], nonnegative, sums to 1
};

// New control = attention-weighted word states, scored by the elementwise
// interaction of each word state with a learned transform of
// [prev_control; summary].
template <typename T>
ControlResult<T> control_step(const Tensor<T>& words, const Tensor<T>& prev_control,
                              const Tensor<T>& summary, const Tensor<T>& u, const Tensor<T>& ub,
                              const Tensor<T>& score_w, const Tensor<T>& score_b) {
  const int hidden = words.shape[1];
  Tensor<T> cat({1, 2 * hidden});
  std::copy(prev_control.data.begin(), prev_control.data.end(), cat.data.begin());
  std::copy(summary.data.begin(), summary.data.end(), cat.data.begin() + hidden);
  Tensor<T> cq = linear(cat, u, ub);
  Tensor<T> inter(words.shape);
  broadcast_binary_into(inter, words, cq, [](T a, T b) { return a * b; });
  Tensor<T> scores = linear(inter, score_w, score_b);
  ControlResult<T> out;
  out.attention = scores_to_attention(scores);
  out.control = matmul(out.attention, words);
  return out;
}

template <typename T>
struct ReadResult {
  Tensor<T> retrieved;  // [1, hidden]
  Tensor<T> attention;  // [1, positions]
};

// Spatial attention over the projected knowledge base: position scores come
// from elu(read_base + kbp (*) W_m m) modulated by the projected control.
template <typename T>
ReadResult<T> read_step(const Tensor<T>& kbp, const Tensor<T>& read_base,
                        const Tensor<T>& prev_memory, const Tensor<T>& control,
                        const Tensor<T>& mem_w, const Tensor<T>& mem_b,
                        const Tensor<T>& ctrl_w, const Tensor<T>& ctrl_b,
                        const Tensor<T>& score_w, const Tensor<T>& score_b) {
  Tensor<T> mproj = linear(prev_memory, mem_w, mem_b);
  Tensor<T> combined(kbp.shape);
  broadcast_binary_into(combined, kbp, mproj, [](T a, T b) { return a * b; });
  for (size_t i = 0; i < combined.data.size(); ++i)
    combined.data[i] = elu_scalar(read_base.data[i] + combined.data[i]);
  Tensor<T> cproj = linear(control, ctrl_w, ctrl_b);
  Tensor<T> modulated(combined.shape);
  broadcast_binary_into(modulated, combined, cproj, [](T a, T b) { return a * b; });
  Tensor<T> scores = linear(modulated, score_w, score_b);
  ReadResult<T> out;
  out.attention = scores_to_attention(scores);
  out.retrieved = matmul(out.attention, kbp);
  return out;
}

// New memory = linear merge of [retrieved; prev_memory]; with the gate, a
// sigmoid of the control interpolates between the previous memory (gate
// saturated closed, 1) and the candidate (gate open, 0).
template <typename T>
Tensor<T> write_step(const Tensor<T>& retrieved, const Tensor<T>& prev_memory,
                     const Tensor<T>& control, const Tensor<T>& write_w,
                     const Tensor<T>& write_b, const Tensor<T>* gate_w,
                     const Tensor<T>* gate_b) {
  const int hidden = prev_memory.shape[1];
  Tensor<T> cat({1, 2 * hidden});
  std::copy(retrieved.data.begin(), retrieved.data.end(), cat.data.begin());
  std::copy(prev_memory.data.begin(), prev_memory.data.end(), cat.data.begin() + hidden);
  Tensor<T> cand = linear(cat, write_w, write_b);
  if (gate_w && gate_b) {
    Tensor<T> graw = linear(control, *gate_w, *gate_b);
    const T gate = sigmoid_scalar(graw.data[0]);
    for (int j = 0; j < hidden; ++j)
      cand.data[j] = prev_memory.data[j] * gate + cand.data[j] * (T(1) - gate);
  }
  return cand;
}

// Per-example variational dropout masks: one binary mask per site, reused
// across time steps / cells / grid positions.
template <typename T>
struct DropoutMasks {
  Tensor<T> embed, lstm_fwd, lstm_bwd, kb, memory, classifier;

  static DropoutMasks sample(const ModelConfig& cfg, Rng& rng) {
    const double keep = 1.0 - cfg.dropout;
    auto mask = [&](int n) {
      Tensor<T> m({1, n});
      for (auto& v : m.data) v = rng.bernoulli(keep) ? T(1) : T(0);
      return m;
    };
    DropoutMasks out;
    out.embed = mask(cfg.embed);
    out.lstm_fwd = mask(cfg.hidden / 2);
    out.lstm_bwd = mask(cfg.hidden / 2);
    out.kb = mask(cfg.kb_dim);
    out.memory = mask(cfg.hidden);
    out.classifier = mask(cfg.hidden);
    return out;
  }
};

template <typename T>
struct CellTrace {
  Tensor<T> question_attention;  // [1, T]
  Tensor<T> image_attention;     // [1, H*W]
};

template <typename T>
struct EvalOutput {
  Tensor<T> probs;  // [1, V]
  int prediction = 0;
  std::vector<CellTrace<T>> cells;
};

template <typename T>
class MacModel {
 public:
  MacModel(ModelConfig cfg, Vocabulary vocab, uint64_t seed)
      : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.validate();
    init_params(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  std::vector<int> token_ids(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw UsageError("cannot encode an empty question");
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab_.id(t));
    return ids;
  }

  // ---- taped forward (training / gradient checks) ----

  struct TapedForward {
    int logits = -1;
    int probs = -1;
    int loss = -1;  // -1 when no target was given
    std::vector<int> question_attention;
    std::vector<int> image_attention;
  };

  // grad_sinks must be parallel to params().params (one tensor per parameter,
  // same shapes); gradients accumulate into them across backward calls.
  TapedForward forward_taped(Tape<T>& tape, const std::vector<int>& ids,
                             const Tensor<T>& raster, std::vector<Tensor<T>>* grad_sinks,
                             const DropoutMasks<T>* masks, const int* target) const {
    std::vector<int> pid(params_.params.size());
    for (size_t i = 0; i < params_.params.size(); ++i)
      pid[i] = tape.param(&params_.params[i].value,
                          grad_sinks ? &(*grad_sinks)[i] : nullptr);
    auto P = [&](const std::string& name) { return pid[params_.index.at(name)]; };

    const int T_len = static_cast<int>(ids.size());
    if (T_len < 1) throw UsageError("cannot encode an empty question");
    const int h2 = cfg_.hidden / 2;
    const T drop_rate = static_cast<T>(cfg_.dropout);

    // Question encoder.
    int emb = tape.embedding_lookup(P("embed"), ids);
    if (masks) emb = tape.dropout(emb, drop_rate, tile_rows(masks->embed, T_len));

    auto run_lstm = [&](bool forward_dir) {
      const char* wx = forward_dir ? "lstm_f_wx" : "lstm_b_wx";
      const char* wh = forward_dir ? "lstm_f_wh" : "lstm_b_wh";
      const char* bias = forward_dir ? "lstm_f_b" : "lstm_b_b";
      const Tensor<T>* hmask = masks ? (forward_dir ? &masks->lstm_fwd : &masks->lstm_bwd)
                                     : nullptr;
      int hstate = tape.leaf(Tensor<T>({1, h2}));
      int cstate = tape.leaf(Tensor<T>({1, h2}));
      std::vector<int> outputs(T_len);
      for (int step = 0; step < T_len; ++step) {
        const int t = forward_dir ? step : T_len - 1 - step;
        int x = tape.slice(emb, 0, t, 1);
        int hin = hmask ? tape.dropout(hstate, drop_rate, *hmask) : hstate;
        int gates = tape.add(tape.add(tape.matmul(x, P(wx)), tape.matmul(hin, P(wh))), P(bias));
        int ig = tape.sigmoid(tape.slice(gates, 1, 0, h2));
        int fg = tape.sigmoid(tape.slice(gates, 1, h2, h2));
        int gg = tape.tanh(tape.slice(gates, 1, 2 * h2, h2));
        int og = tape.sigmoid(tape.slice(gates, 1, 3 * h2, h2));
        cstate = tape.add(tape.mul(fg, cstate), tape.mul(ig, gg));
        hstate = tape.mul(og, tape.tanh(cstate));
        outputs[t] = hstate;
      }
      return std::pair<std::vector<int>, int>(outputs, hstate);
    };
    auto [fwd_states, fwd_final] = run_lstm(true);
    auto [bwd_states, bwd_final] = run_lstm(false);

    std::vector<int> word_rows(T_len);
    for (int t = 0; t < T_len; ++t)
      word_rows[t] = tape.concat({fwd_states[t], bwd_states[t]}, 1);
    int words = tape.concat(word_rows, 0);  // [T, hidden]
    words = tape.add(tape.matmul(words, P("word_proj")), P("word_proj_b"));
    int summary = tape.concat({fwd_final, bwd_final}, 1);
    summary = tape.add(tape.matmul(summary, P("summ_proj")), P("summ_proj_b"));

    // Scene encoder.
    const int positions = cfg_.grid_h * cfg_.grid_w;
    int kb = tape.leaf(raster);
    kb = tape.conv2d(kb, P("conv1_k"), 1);
    kb = tape.elu(tape.add(tape.reshape(kb, {positions, cfg_.conv_mid}), P("conv1_b")));
    kb = tape.reshape(kb, {cfg_.grid_h, cfg_.grid_w, cfg_.conv_mid});
    kb = tape.conv2d(kb, P("conv2_k"), 1);
    kb = tape.elu(tape.add(tape.reshape(kb, {positions, cfg_.kb_dim}), P("conv2_b")));
    if (masks) kb = tape.dropout(kb, drop_rate, tile_rows(masks->kb, positions));
    int kbp = tape.add(tape.matmul(kb, P("kb_proj")), P("kb_proj_b"));  // [P, hidden]
    int read_base = tape.add(tape.matmul(kbp, P("read_kb_w")), P("read_kb_b"));

    // Cell chain.
    TapedForward out;
    int control = P("ctrl_init");
    int memory = P("mem_init");
    for (int cell = 0; cell < cfg_.cell_count; ++cell) {
      const std::string sfx = std::to_string(cell);
      // control
      int cq = tape.add(tape.matmul(tape.concat({control, summary}, 1), P("ctrl_u_" + sfx)),
                        P("ctrl_b_" + sfx));
      int inter = tape.mul(words, cq);  // [T, hidden]
      int scores = tape.add(tape.matmul(inter, P("ctrl_score_w")), P("ctrl_score_b"));
      int q_att = tape.softmax(tape.transpose(scores), 1);  // [1, T]
      control = tape.matmul(q_att, words);
      out.question_attention.push_back(q_att);

      // read
      int mem_in = masks ? tape.dropout(memory, drop_rate, masks->memory) : memory;
      int mproj = tape.add(tape.matmul(mem_in, P("read_mem_w")), P("read_mem_b"));
      int combined = tape.elu(tape.add(read_base, tape.mul(kbp, mproj)));
      int cproj = tape.add(tape.matmul(control, P("read_ctrl_w")), P("read_ctrl_b"));
      int modulated = tape.mul(combined, cproj);
      int s_scores = tape.add(tape.matmul(modulated, P("read_score_w")), P("read_score_b"));
      int s_att = tape.softmax(tape.transpose(s_scores), 1);  // [1, P]
      int retrieved = tape.matmul(s_att, kbp);
      out.image_attention.push_back(s_att);

      // write
      int cand = tape.add(tape.matmul(tape.concat({retrieved, mem_in}, 1), P("write_w")),
                          P("write_b"));
      if (cfg_.write_gate) {
        int gate = tape.sigmoid(tape.add(tape.matmul(control, P("gate_w")), P("gate_b")));
        int keep = tape.add(tape.mul(gate, tape.leaf(Tensor<T>({1, 1}, {T(-1)}))),
                            tape.leaf(Tensor<T>({1, 1}, {T(1)})));  // 1 - gate
        memory = tape.add(tape.mul(memory, gate), tape.mul(cand, keep));
      } else {
        memory = cand;
      }
    }

    // Output classifier over [final memory; question summary].
    int final_in = tape.concat({memory, summary}, 1);
    int hid = tape.elu(tape.add(tape.matmul(final_in, P("out_w1")), P("out_b1")));
    if (masks) hid = tape.dropout(hid, drop_rate, masks->classifier);
    out.logits = tape.add(tape.matmul(hid, P("out_w2")), P("out_b2"));
    out.probs = tape.softmax(out.logits, 1);
    if (target) out.loss = tape.cross_entropy(out.logits, {*target});
    return out;
  }

  // ---- inference forward (no tape, no dropout) ----

  Tensor<T> embed_tokens(const std::vector<int>& ids) const {
    const Tensor<T>& table = params_.at("embed").value;
    Tensor<T> emb({static_cast<int>(ids.size()), cfg_.embed});
    for (size_t t = 0; t < ids.size(); ++t)
      std::copy(table.data.begin() + static_cast<size_t>(ids[t]) * cfg_.embed,
                table.data.begin() + static_cast<size_t>(ids[t] + 1) * cfg_.embed,
                emb.data.begin() + t * cfg_.embed);
    return emb;
  }

  QuestionEncoding<T> encode_question_eval(const std::vector<int>& ids) const {
    auto value = [&](const char* name) -> const Tensor<T>& { return params_.at(name).value; };
    LstmParams<T> fwd{value("lstm_f_wx"), value("lstm_f_wh"), value("lstm_f_b")};
    LstmParams<T> bwd{value("lstm_b_wx"), value("lstm_b_wh"), value("lstm_b_b")};
    return encode_question(embed_tokens(ids), fwd, bwd, value("word_proj"),
                           value("word_proj_b"), value("summ_proj"), value("summ_proj_b"));
  }

  // SceneGrid -> two convolutions -> knowledge base, shape [H, W, kb_dim].
  Tensor<T> encode_scene(const Scene& scene) const {
    Tensor<T> kb = knowledge_base(rasterize_scene<T>(scene, cfg_));
    return Tensor<T>({cfg_.grid_h, cfg_.grid_w, cfg_.kb_dim}, std::move(kb.data));
  }

  EvalOutput<T> forward_eval(const std::vector<int>& ids, const Tensor<T>& raster) const {
    auto value = [&](const char* name) -> const Tensor<T>& { return params_.at(name).value; };

    const QuestionEncoding<T> enc = encode_question_eval(ids);
    Tensor<T> kb = knowledge_base(raster);
    Tensor<T> kbp = linear(kb, value("kb_proj"), value("kb_proj_b"));
    Tensor<T> read_base = linear(kbp, value("read_kb_w"), value("read_kb_b"));

    EvalOutput<T> out;
    Tensor<T> control = value("ctrl_init");
    Tensor<T> memory = value("mem_init");
    for (int cell = 0; cell < cfg_.cell_count; ++cell) {
      const std::string sfx = std::to_string(cell);
      auto ctrl = control_step(enc.words, control, enc.summary,
                               params_.at("ctrl_u_" + sfx).value,
                               params_.at("ctrl_b_" + sfx).value, value("ctrl_score_w"),
                               value("ctrl_score_b"));
      control = std::move(ctrl.control);
      auto read = read_step(kbp, read_base, memory, control, value("read_mem_w"),
                            value("read_mem_b"), value("read_ctrl_w"), value("read_ctrl_b"),
                            value("read_score_w"), value("read_score_b"));
      memory = write_step(read.retrieved, memory, control, value("write_w"), value("write_b"),
                          cfg_.write_gate ? &value("gate_w") : nullptr,
                          cfg_.write_gate ? &value("gate_b") : nullptr);
      out.cells.push_back(CellTrace<T>{std::move(ctrl.attention), std::move(read.attention)});
    }

    Tensor<T> final_in({1, 2 * cfg_.hidden});
    std::copy(memory.data.begin(), memory.data.end(), final_in.data.begin());
    std::copy(enc.summary.data.begin(), enc.summary.data.end(),
              final_in.data.begin() + cfg_.hidden);
    Tensor<T> hid = linear(final_in, value("out_w1"), value("out_b1"));
    for (auto& v : hid.data) v = elu_scalar(v);
    Tensor<T> logits = linear(hid, value("out_w2"), value("out_b2"));
    out.probs = Tensor<T>(logits.shape);
    softmax_rows_into(out.probs, logits);
    out.prediction = 0;  // argmax; ties go to the lowest vocabulary id
    for (int j = 1; j < vocab_.size(); ++j)
      if (out.probs.data[j] > out.probs.data[out.prediction]) out.prediction = j;
    return out;
  }

  std::string predict(const std::vector<std::string>& tokens, const Tensor<T>& raster) const {
    const auto out = forward_eval(token_ids(tokens), raster);
    return vocab_.id_to_token.at(out.prediction);
  }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamStore<T> params_;

  static Tensor<T> tile_rows(const Tensor<T>& row, int n) {
    Tensor<T> out({n, row.shape[1]});
    for (int i = 0; i < n; ++i)
      std::copy(row.data.begin(), row.data.end(),
                out.data.begin() + static_cast<size_t>(i) * row.shape[1]);
    return out;
  }

  // raster [H,W,C] -> flattened knowledge base [H*W, kb_dim].
  Tensor<T> knowledge_base(const Tensor<T>& raster) const {
    auto value = [&](const char* name) -> const Tensor<T>& { return params_.at(name).value; };
    const int positions = cfg_.grid_h * cfg_.grid_w;
    Tensor<T> conv1({cfg_.grid_h, cfg_.grid_w, cfg_.conv_mid});
    conv2d_into(conv1, raster, value("conv1_k"), 1);
    Tensor<T> mid({positions, cfg_.conv_mid}, std::move(conv1.data));
    add_bias_elu(mid, value("conv1_b"));
    Tensor<T> mid_grid({cfg_.grid_h, cfg_.grid_w, cfg_.conv_mid}, std::move(mid.data));
    Tensor<T> conv2({cfg_.grid_h, cfg_.grid_w, cfg_.kb_dim});
    conv2d_into(conv2, mid_grid, value("conv2_k"), 1);
    Tensor<T> kb({positions, cfg_.kb_dim}, std::move(conv2.data));
    add_bias_elu(kb, value("conv2_b"));
    return kb;
  }

  static void add_bias_elu(Tensor<T>& x, const Tensor<T>& b) {
    broadcast_binary_into(x, x, b, [](T a, T bb) { return a + bb; });
    for (auto& v : x.data) v = elu_scalar(v);
  }

  void init_params(uint64_t seed) {
    Rng rng(seed);
    const int h = cfg_.hidden, h2 = h / 2, e = cfg_.embed;
    const int vocab_size = vocab_.size();
    auto uni = [&](std::vector<int> shape, int fan_in) {
      const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
      return Tensor<T>::uniform(std::move(shape), rng, -k, k);
    };
    params_.add("embed", uni({vocab_size, e}, e));
    for (const char* dir : {"f", "b"}) {
      params_.add(std::string("lstm_") + dir + "_wx", uni({e, 4 * h2}, e));
      params_.add(std::string("lstm_") + dir + "_wh", uni({h2, 4 * h2}, h2));
      params_.add(std::string("lstm_") + dir + "_b", Tensor<T>({1, 4 * h2}));
    }
    params_.add("word_proj", uni({h, h}, h));
    params_.add("word_proj_b", Tensor<T>({1, h}));
    params_.add("summ_proj", uni({h, h}, h));
    params_.add("summ_proj_b", Tensor<T>({1, h}));
    params_.add("ctrl_init", uni({1, h}, h));
    params_.add("mem_init", uni({1, h}, h));
    for (int cell = 0; cell < cfg_.cell_count; ++cell) {
      params_.add("ctrl_u_" + std::to_string(cell), uni({2 * h, h}, 2 * h));
      params_.add("ctrl_b_" + std::to_string(cell), Tensor<T>({1, h}));
    }
    params_.add("ctrl_score_w", uni({h, 1}, h));
    params_.add("ctrl_score_b", Tensor<T>({1, 1}));
    const int rc = raster_channels();
    params_.add("conv1_k", uni({3, 3, rc, cfg_.conv_mid}, 9 * rc));
    params_.add("conv1_b", Tensor<T>({1, cfg_.conv_mid}));
    params_.add("conv2_k", uni({1, 1, cfg_.conv_mid, cfg_.kb_dim}, cfg_.conv_mid));
    params_.add("conv2_b", Tensor<T>({1, cfg_.kb_dim}));
    params_.add("kb_proj", uni({cfg_.kb_dim, h}, cfg_.kb_dim));
    params_.add("kb_proj_b", Tensor<T>({1, h}));
    params_.add("read_kb_w", uni({h, h}, h));
    params_.add("read_kb_b", Tensor<T>({1, h}));
    params_.add("read_mem_w", uni({h, h}, h));
    params_.add("read_mem_b", Tensor<T>({1, h}));
    params_.add("read_ctrl_w", uni({h, h}, h));
    params_.add("read_ctrl_b", Tensor<T>({1, h}));
    params_.add("read_score_w", uni({h, 1}, h));
    params_.add("read_score_b", Tensor<T>({1, 1}));
    params_.add("write_w", uni({2 * h, h}, 2 * h));
    params_.add("write_b", Tensor<T>({1, h}));
    if (cfg_.write_gate) {
      params_.add("gate_w", uni({h, 1}, h));
      params_.add("gate_b", Tensor<T>({1, 1}));
    }
    params_.add("out_w1", uni({2 * h, h}, 2 * h));
    params_.add("out_b1", Tensor<T>({1, h}));
    params_.add("out_w2", uni({h, vocab_size}, h));
    params_.add("out_b2", Tensor<T>({1, vocab_size}));
  }
};

}  // namespace fwlab
