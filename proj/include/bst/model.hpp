#pragma once

// Stroke-type transformer family: per-stream temporal convolution embedders,
// per-modality transformer encoders, shuttle cross-attention fusion, a
// shared second encoder per player, and the PPF / CG / AP enhancements.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bst/autograd.hpp"
#include "bst/errors.hpp"
#include "bst/params.hpp"
#include "bst/sample.hpp"

namespace bst {

enum class Variant { bst0, bst, bst_cg, bst_ap, bst_cg_ap };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::bst0: return "BST-0";
    case Variant::bst: return "BST";
    case Variant::bst_cg: return "BST-CG";
    case Variant::bst_ap: return "BST-AP";
    case Variant::bst_cg_ap: return "BST-CG-AP";
  }
  return "?";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::bst0, Variant::bst, Variant::bst_cg, Variant::bst_ap, Variant::bst_cg_ap})
    if (to_string(v) == name) return v;
  throw ConfigError("unknown model variant '" + name + "'");
}

inline constexpr int kPoseFeatures = kJoints * 2 + kBones * 2;
inline constexpr int kShuttleFeatures = 2;
inline constexpr int kPositionFeatures = 2;

struct TcnConfig {
  int kernel_size = 3;
  int layers = 2;  // dilation doubles per layer
};

struct ModelConfig {
  int d_model = 64;
  int d_attn = 32;  // per-head width
  int n_heads = 8;
  int n_layers_trans1 = 2;
  int n_layers_trans2 = 2;
  int ffn_mult = 2;
  int seq_len = 100;
  int n_classes = 25;
  Variant variant = Variant::bst_cg_ap;
  TcnConfig tcn;
  double dropout = 0.1;

  bool uses_positions() const { return variant != Variant::bst0; }
  bool has_ppf() const { return variant != Variant::bst0; }
  bool has_cg() const { return variant == Variant::bst_cg || variant == Variant::bst_cg_ap; }
  bool has_ap() const { return variant == Variant::bst_ap || variant == Variant::bst_cg_ap; }
  int head_input_width() const { return (variant == Variant::bst_ap ? 2 : 3) * d_model; }

  void validate() const {
    if (d_model <= 0 || d_attn <= 0 || n_heads <= 0) throw ConfigError("model widths and head count must be positive");
    if (n_layers_trans1 <= 0 || n_layers_trans2 <= 0) throw ConfigError("encoder layer counts must be positive");
    if (ffn_mult <= 0) throw ConfigError("ffn_mult must be positive");
    if (seq_len <= 0) throw ConfigError("seq_len must be positive");
    if (n_classes <= 0) throw ConfigError("n_classes must be positive");
    if (tcn.kernel_size <= 0 || tcn.kernel_size % 2 == 0) throw ConfigError("tcn kernel size must be odd and positive");
    if (tcn.layers <= 0) throw ConfigError("tcn layer count must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  }
};

/// Test and inference switches for one forward pass.
struct ForwardOptions {
  Rng* dropout_rng = nullptr;         // training mode (dropout on) when set
  std::optional<double> force_gate;   // CG gate value for every channel
  std::optional<double> force_alpha;  // AP coefficient
  std::optional<double> force_ppf;    // PPF coefficient for every joint
};

/// Intermediate values captured during a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<AttentionRecord<T>> attention;
  Matrix<T> overall;  // shuttle-stream class token [B, D]
  Matrix<T> cleaned;  // CG output
  Matrix<T> gate;
  Matrix<T> blue;     // top player's second-encoder class token
  Matrix<T> green;    // bottom player's
  Matrix<T> alpha;    // [B, 1]
  std::vector<Matrix<T>> ppf_coefficients;  // per player [B*L, 17]
  Matrix<T> head_input;
  Matrix<T> logits;
};

// ---------------------------------------------------------------------------
// Parameter layout

namespace layout {

template <typename T>
void add_linear(ParamStore<T>& s, const std::string& name, int in, int out, std::uint64_t seed,
                Init bias_init = Init::zeros) {
  s.add(name + ".weight", in, out, Init::xavier, seed);
  s.add(name + ".bias", 1, out, bias_init, seed);
}

template <typename T>
void add_layer_norm(ParamStore<T>& s, const std::string& name, int width, std::uint64_t seed) {
  s.add(name + ".gamma", 1, width, Init::ones, seed);
  s.add(name + ".beta", 1, width, Init::zeros, seed);
}

template <typename T>
void add_attention(ParamStore<T>& s, const std::string& name, const ModelConfig& c, std::uint64_t seed) {
  const int inner = c.d_attn * c.n_heads;
  s.add(name + ".wq", c.d_model, inner, Init::xavier, seed);
  s.add(name + ".wk", c.d_model, inner, Init::xavier, seed);
  s.add(name + ".wv", c.d_model, inner, Init::xavier, seed);
  s.add(name + ".wo", inner, c.d_model, Init::xavier, seed);
}

template <typename T>
void add_ffn(ParamStore<T>& s, const std::string& name, const ModelConfig& c, std::uint64_t seed) {
  add_linear(s, name + ".fc1", c.d_model, c.d_model * c.ffn_mult, seed);
  add_linear(s, name + ".fc2", c.d_model * c.ffn_mult, c.d_model, seed);
}

template <typename T>
void add_encoder(ParamStore<T>& s, const std::string& name, const ModelConfig& c, int n_layers, std::uint64_t seed) {
  s.add(name + ".cls", 1, c.d_model, Init::small_uniform, seed);
  s.add(name + ".pos", c.seq_len + 1, c.d_model, Init::small_uniform, seed);
  for (int l = 0; l < n_layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    add_layer_norm(s, p + ".ln1", c.d_model, seed);
    add_attention(s, p + ".attn", c, seed);
    add_layer_norm(s, p + ".ln2", c.d_model, seed);
    add_ffn(s, p + ".ffn", c, seed);
  }
}

template <typename T>
void add_tcn(ParamStore<T>& s, const std::string& name, int in_width, const ModelConfig& c, std::uint64_t seed) {
  int width = in_width;
  for (int l = 0; l < c.tcn.layers; ++l) {
    add_linear(s, name + ".conv" + std::to_string(l), width * c.tcn.kernel_size, c.d_model, seed);
    width = c.d_model;
  }
}

template <typename T>
void add_cross(ParamStore<T>& s, const std::string& name, const ModelConfig& c, std::uint64_t seed) {
  add_layer_norm(s, name + ".ln_q", c.d_model, seed);
  add_layer_norm(s, name + ".ln_kv", c.d_model, seed);
  add_attention(s, name + ".attn", c, seed);
}

}  // namespace layout

inline const char* player_name(int p) { return p == 0 ? "top" : "bottom"; }

/// Registers every parameter of the configured variant. Initial values are
/// derived from (seed, name), so variants built from the same seed share
/// the values of the parameters they have in common.
template <typename T>
ParamStore<T> make_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ParamStore<T> s;
  for (int p = 0; p < kPlayers; ++p) layout::add_tcn(s, std::string("tcn.pose.") + player_name(p), kPoseFeatures, c, seed);
  layout::add_tcn(s, "tcn.shuttle", kShuttleFeatures, c, seed);
  layout::add_encoder(s, "trans1.pose", c, c.n_layers_trans1, seed);
  layout::add_encoder(s, "trans1.shuttle", c, c.n_layers_trans1, seed);
  layout::add_cross(s, "cross.pose", c, seed);
  if (c.uses_positions()) {
    for (int p = 0; p < kPlayers; ++p)
      layout::add_tcn(s, std::string("tcn.position.") + player_name(p), kPositionFeatures, c, seed);
    layout::add_encoder(s, "trans1.position", c, c.n_layers_trans1, seed);
    layout::add_cross(s, "cross.position", c, seed);
  }
  layout::add_layer_norm(s, "cross.ln_ffn", c.d_model, seed);
  layout::add_ffn(s, "cross.ffn", c, seed);
  layout::add_encoder(s, "trans2", c, c.n_layers_trans2, seed);
  if (c.has_ppf()) {
    layout::add_linear(s, "ppf.fc1", c.d_model, c.d_model, seed);
    // bias 1 so the coefficients start near identity
    layout::add_linear(s, "ppf.fc2", c.d_model, kJoints, seed, Init::ones);
  }
  if (c.has_cg()) {
    s.add("cg.blue", c.d_model, c.d_model, Init::xavier, seed);
    s.add("cg.green", c.d_model, c.d_model, Init::xavier, seed);
    s.add("cg.traj", c.d_model, c.d_model, Init::xavier, seed);
    s.add("cg.bias", 1, c.d_model, Init::zeros, seed);
  }
  layout::add_linear(s, "head.fc1", c.head_input_width(), c.d_model, seed);
  layout::add_linear(s, "head.fc2", c.d_model, c.n_classes, seed);
  return s;
}

// ---------------------------------------------------------------------------
// Layers

/// Per-pass state shared by the layer functions.
template <typename T>
struct LayerContext {
  Tape<T>& tape;
  const ParamStore<T>& params;
  const ModelConfig& config;
  int batch = 1;
  int seq_len = 1;
  std::vector<T> frame_weights;             // [B*L], 1 for real frames
  std::vector<std::uint8_t> frame_mask;     // [B*L]
  std::vector<std::uint8_t> token_mask;     // [B*(L+1)], class token first
  Rng* dropout_rng = nullptr;
  ForwardTrace<T>* trace = nullptr;

  LayerContext(Tape<T>& t, const ParamStore<T>& p, const ModelConfig& c, int b, int l,
               std::vector<std::uint8_t> mask)
      : tape(t), params(p), config(c), batch(b), seq_len(l), frame_mask(std::move(mask)) {
    if (frame_mask.size() != static_cast<std::size_t>(b) * l) throw ValidationError("frame mask length mismatch");
    frame_weights.reserve(frame_mask.size());
    for (auto m : frame_mask) frame_weights.push_back(m ? T(1) : T(0));
    token_mask.reserve(static_cast<std::size_t>(b) * (l + 1));
    for (int i = 0; i < b; ++i) {
      token_mask.push_back(1);
      for (int f = 0; f < l; ++f) token_mask.push_back(frame_mask[static_cast<std::size_t>(i * l + f)]);
    }
  }

  Var<T> param(const std::string& name) { return tape.param(params, name); }

  Var<T> drop(Var<T> x) {
    return dropout_rng ? ops::dropout(x, config.dropout, *dropout_rng) : x;
  }

  Var<T> mask(Var<T> x) { return ops::mask_rows(x, std::span<const T>(frame_weights)); }

  AttentionRecord<T>* record(const std::string& tag) {
    if (!trace) return nullptr;
    trace->attention.emplace_back();
    trace->attention.back().tag = tag;
    return &trace->attention.back();
  }
};

template <typename T>
Var<T> linear(LayerContext<T>& ctx, const std::string& name, Var<T> x) {
  return ops::linear(x, ctx.param(name + ".weight"), ctx.param(name + ".bias"));
}

template <typename T>
Var<T> layer_norm(LayerContext<T>& ctx, const std::string& name, Var<T> x) {
  return ops::layer_norm(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"));
}

template <typename T>
Var<T> feed_forward(LayerContext<T>& ctx, const std::string& name, Var<T> x) {
  return linear(ctx, name + ".fc2", ops::gelu(linear(ctx, name + ".fc1", x)));
}

/// Centered dilated temporal convolutions over frames. Masked frames are
/// zeroed at the input and after every layer.
template <typename T>
Var<T> tcn_embed(LayerContext<T>& ctx, const std::string& name, Var<T> input) {
  const auto& tcn = ctx.config.tcn;
  const int expected = static_cast<int>(ctx.params.value(name + ".conv0.weight").rows()) / tcn.kernel_size;
  if (input.cols() != expected)
    throw ValidationError(name + ": input width " + std::to_string(input.cols()) + " does not match " +
                          std::to_string(expected));
  Var<T> x = ctx.mask(input);
  int dilation = 1;
  for (int l = 0; l < tcn.layers; ++l) {
    std::vector<int> offsets;
    for (int k = 0; k < tcn.kernel_size; ++k) offsets.push_back((k - (tcn.kernel_size - 1) / 2) * dilation);
    x = linear(ctx, name + ".conv" + std::to_string(l), ops::unfold_taps(x, ctx.batch, ctx.seq_len, offsets));
    if (l + 1 < tcn.layers) x = ops::gelu(x);
    x = ctx.mask(x);
    dilation *= 2;
  }
  return x;
}

/// Multi-head attention with queries projected from query_source and keys
/// and values from key_source, followed by the output projection.
template <typename T>
Var<T> multi_head_attention(LayerContext<T>& ctx, const std::string& name, Var<T> query_source,
                            Var<T> key_source, int query_len, int key_len,
                            std::span<const std::uint8_t> key_mask) {
  const auto& c = ctx.config;
  Var<T> q = ops::matmul(query_source, ctx.param(name + ".wq"));
  Var<T> k = ops::matmul(key_source, ctx.param(name + ".wk"));
  Var<T> v = ops::matmul(key_source, ctx.param(name + ".wv"));
  const ops::AttentionShape shape{ctx.batch, query_len, key_len, c.n_heads, c.d_attn};
  Var<T> heads = ops::attention(q, k, v, shape, key_mask, ctx.record(name));
  return ops::matmul(heads, ctx.param(name + ".wo"));
}

template <typename T>
struct EncodedSequence {
  Var<T> class_token;  // [B, D]
  Var<T> sequence;     // [B*L, D]
};

/// Prepends the class token, adds the positional table, and applies
/// pre-norm residual layers: X~ = X + MHSA(LN(X)); X' = X~ + FFN(LN(X~)).
template <typename T>
EncodedSequence<T> transformer_encode(LayerContext<T>& ctx, const std::string& name, Var<T> x, int n_layers) {
  const int B = ctx.batch, L = ctx.seq_len, S = L + 1;
  Var<T> h = ops::prepend_token(x, ctx.param(name + ".cls"), B, L);
  h = ctx.drop(ops::add_tiled(h, ctx.param(name + ".pos"), B));
  for (int l = 0; l < n_layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Var<T> a = layer_norm(ctx, p + ".ln1", h);
    a = multi_head_attention(ctx, p + ".attn", a, a, S, S, std::span<const std::uint8_t>(ctx.token_mask));
    h = ops::add(h, ctx.drop(a));
    Var<T> f = feed_forward(ctx, p + ".ffn", layer_norm(ctx, p + ".ln2", h));
    h = ops::add(h, ctx.drop(f));
  }
  std::vector<int> cls_rows;
  for (int b = 0; b < B; ++b) cls_rows.push_back(b * S);
  return {ops::gather_rows(h, cls_rows), ops::drop_first_rows(h, B, L)};
}

/// Cross attention with keys and values from the shuttle latent.
template <typename T>
Var<T> shuttle_cross_attention(LayerContext<T>& ctx, const std::string& name, Var<T> query_latent,
                               Var<T> shuttle_latent) {
  if (query_latent.rows() != shuttle_latent.rows())
    throw ValidationError(name + ": query and trajectory sequence lengths differ");
  const int L = ctx.seq_len;
  return multi_head_attention(ctx, name + ".attn", layer_norm(ctx, name + ".ln_q", query_latent),
                              layer_norm(ctx, name + ".ln_kv", shuttle_latent), L, L,
                              std::span<const std::uint8_t>(ctx.frame_mask));
}

/// A player's trajectory latent: pose-query (and position-query) cross
/// attention summed, then a pre-norm residual feed-forward block.
template <typename T>
Var<T> fuse_player(LayerContext<T>& ctx, Var<T> pose_seq, std::optional<Var<T>> position_seq, Var<T> shuttle_seq) {
  Var<T> fused = shuttle_cross_attention(ctx, "cross.pose", pose_seq, shuttle_seq);
  if (position_seq) fused = ops::add(fused, shuttle_cross_attention(ctx, "cross.position", *position_seq, shuttle_seq));
  fused = ops::add(fused, ctx.drop(feed_forward(ctx, "cross.ffn", layer_norm(ctx, "cross.ln_ffn", fused))));
  return ctx.mask(fused);
}

/// Per-frame, per-joint coefficients from a player's position latent,
/// multiplied into both coordinates of each joint.
template <typename T>
Var<T> pose_position_fusion(LayerContext<T>& ctx, Var<T> joints, Var<T> position_latent,
                            std::optional<double> force = std::nullopt) {
  Var<T> coefficients =
      force ? ctx.tape.constant(Matrix<T>::Constant(joints.rows(), kJoints, static_cast<T>(*force)))
            : linear(ctx, "ppf.fc2", ops::gelu(linear(ctx, "ppf.fc1", position_latent)));
  if (ctx.trace) ctx.trace->ppf_coefficients.push_back(coefficients.value());
  return ops::mul(joints, ops::repeat_cols(coefficients, 2));
}

/// Per-channel gate g = sigmoid((blue Wb + green Wg) .* (traj Wt) + b) applied
/// to the overall trajectory token.
template <typename T>
Var<T> clean_gate(LayerContext<T>& ctx, Var<T> overall, Var<T> blue, Var<T> green,
                  std::optional<double> force = std::nullopt) {
  Var<T> gate;
  if (force) {
    gate = ctx.tape.constant(Matrix<T>::Constant(overall.rows(), overall.cols(), static_cast<T>(*force)));
  } else {
    Var<T> players = ops::add(ops::matmul(blue, ctx.param("cg.blue")), ops::matmul(green, ctx.param("cg.green")));
    Var<T> interaction = ops::mul(players, ops::matmul(overall, ctx.param("cg.traj")));
    gate = ops::sigmoid(ops::add_row(interaction, ctx.param("cg.bias")));
  }
  if (ctx.trace) ctx.trace->gate = gate.value();
  return ops::mul(gate, overall);
}

template <typename T>
struct AimResult {
  Var<T> alpha;  // [B, 1]
  Var<T> blue;   // alpha * blue
  Var<T> green;  // (1 - alpha) * green
};

/// alpha = (cos(overall, blue) - cos(overall, green) + 2) / 4.
template <typename T>
AimResult<T> aim_player(Tape<T>& tape, Var<T> overall, Var<T> blue, Var<T> green,
                        std::optional<double> force = std::nullopt) {
  Var<T> alpha;
  if (force) {
    alpha = tape.constant(Matrix<T>::Constant(blue.rows(), 1, static_cast<T>(*force)));
  } else {
    Var<T> diff = ops::add(ops::cosine_rows(overall, blue), ops::affine(ops::cosine_rows(overall, green), T(-1), T(0)));
    alpha = ops::affine(diff, T(0.25), T(0.5));
  }
  return {alpha, ops::scale_rows(blue, alpha), ops::scale_rows(green, ops::affine(alpha, T(-1), T(1)))};
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
class BstModel {
 public:
  BstModel(const ModelConfig& config, std::uint64_t seed) : config_(config), params_(make_params<T>(config, seed)) {}

  /// Adopts externally loaded parameters after checking names and shapes.
  BstModel(const ModelConfig& config, ParamStore<T> params) : config_(config), params_(std::move(params)) {
    const auto reference = make_params<T>(config, 0);
    if (reference.size() != params_.size())
      throw ValidationError("parameter set does not match the " + to_string(config.variant) + " layout");
    for (const auto& [name, entry] : reference) {
      if (!params_.contains(name)) throw ValidationError("missing parameter " + name);
      const auto& got = params_.value(name);
      if (got.rows() != entry.value.rows() || got.cols() != entry.value.cols())
        throw ValidationError("parameter " + name + " has the wrong shape");
    }
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Logits [B, K] for a batch of samples.
  Var<T> logits(Tape<T>& tape, std::span<const StrokeSample* const> batch, const ForwardOptions& options = {},
                ForwardTrace<T>* trace = nullptr) const {
    const auto& c = config_;
    const int B = static_cast<int>(batch.size());
    const int L = c.seq_len;
    if (B == 0) throw ValidationError("empty batch");
    std::vector<std::uint8_t> mask;
    mask.reserve(static_cast<std::size_t>(B) * L);
    for (const StrokeSample* s : batch) {
      s->validate();
      if (s->seq_len != L)
        throw ValidationError("sample length " + std::to_string(s->seq_len) + " does not match model seq_len " +
                              std::to_string(L));
      mask.insert(mask.end(), s->mask.begin(), s->mask.end());
    }
    LayerContext<T> ctx(tape, params_, c, B, L, std::move(mask));
    ctx.dropout_rng = options.dropout_rng;
    ctx.trace = trace;

    const auto inputs = gather_inputs(batch);
    Var<T> shuttle_lat = tcn_embed(ctx, "tcn.shuttle", tape.constant(inputs.shuttle));
    const EncodedSequence<T> shuttle = transformer_encode(ctx, "trans1.shuttle", shuttle_lat, c.n_layers_trans1);

    std::vector<Var<T>> player_tokens;
    for (int p = 0; p < kPlayers; ++p) {
      const std::string who = player_name(p);
      Var<T> joints = tape.constant(inputs.joints[static_cast<std::size_t>(p)]);
      std::optional<Var<T>> position_seq;
      if (c.uses_positions()) {
        Var<T> pos_lat = tcn_embed(ctx, "tcn.position." + who, tape.constant(inputs.positions[static_cast<std::size_t>(p)]));
        if (c.has_ppf()) joints = pose_position_fusion(ctx, joints, pos_lat, options.force_ppf);
        position_seq = transformer_encode(ctx, "trans1.position", pos_lat, c.n_layers_trans1).sequence;
      }
      Var<T> pose_in = ops::concat_cols<T>({joints, tape.constant(inputs.bones[static_cast<std::size_t>(p)])});
      Var<T> pose_lat = tcn_embed(ctx, "tcn.pose." + who, pose_in);
      const EncodedSequence<T> pose = transformer_encode(ctx, "trans1.pose", pose_lat, c.n_layers_trans1);
      Var<T> fused = fuse_player(ctx, pose.sequence, position_seq, shuttle.sequence);
      player_tokens.push_back(transformer_encode(ctx, "trans2", fused, c.n_layers_trans2).class_token);
    }
    Var<T> overall = shuttle.class_token;
    Var<T> blue = player_tokens[0];
    Var<T> green = player_tokens[1];

    Var<T> trajectory = overall;
    if (c.has_cg()) trajectory = clean_gate(ctx, overall, blue, green, options.force_gate);

    std::vector<Var<T>> head_parts;
    if (c.has_ap()) {
      const AimResult<T> aim = aim_player(tape, overall, blue, green, options.force_alpha);
      if (trace) trace->alpha = aim.alpha.value();
      if (c.has_cg()) head_parts.push_back(trajectory);
      head_parts.push_back(aim.blue);
      head_parts.push_back(aim.green);
    } else {
      head_parts = {trajectory, blue, green};
    }
    Var<T> head_in = ops::concat_cols(head_parts);
    Var<T> hidden = ctx.drop(ops::gelu(linear(ctx, "head.fc1", head_in)));
    Var<T> out = linear(ctx, "head.fc2", hidden);
    if (trace) {
      trace->overall = overall.value();
      trace->cleaned = trajectory.value();
      trace->blue = blue.value();
      trace->green = green.value();
      trace->head_input = head_in.value();
      trace->logits = out.value();
    }
    return out;
  }

  /// Class probabilities [B, K] in inference mode.
  Matrix<T> predict_proba(std::span<const StrokeSample* const> batch, const ForwardOptions& options = {}) const {
    Tape<T> tape(false);
    return ops::softmax_rows(logits(tape, batch, options)).value();
  }

  std::vector<double> forward(const StrokeSample& sample, const ForwardOptions& options = {}) const {
    const StrokeSample* one[] = {&sample};
    const Matrix<T> p = predict_proba(one, options);
    std::vector<double> out(static_cast<std::size_t>(p.cols()));
    for (Eigen::Index k = 0; k < p.cols(); ++k) out[static_cast<std::size_t>(k)] = static_cast<double>(p(0, k));
    return out;
  }

 private:
  struct BatchInputs {
    std::array<Matrix<T>, kPlayers> joints;     // [B*L, 34]
    std::array<Matrix<T>, kPlayers> bones;      // [B*L, 32]
    std::array<Matrix<T>, kPlayers> positions;  // [B*L, 2]
    Matrix<T> shuttle;                          // [B*L, 2]
  };

  BatchInputs gather_inputs(std::span<const StrokeSample* const> batch) const {
    const int L = config_.seq_len;
    const auto rows = static_cast<Eigen::Index>(batch.size()) * L;
    BatchInputs in;
    for (int p = 0; p < kPlayers; ++p) {
      in.joints[static_cast<std::size_t>(p)].resize(rows, kJoints * 2);
      in.bones[static_cast<std::size_t>(p)].resize(rows, kBones * 2);
      in.positions[static_cast<std::size_t>(p)].resize(rows, 2);
    }
    in.shuttle.resize(rows, 2);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const StrokeSample& s = *batch[b];
      for (int f = 0; f < L; ++f) {
        const auto r = static_cast<Eigen::Index>(b) * L + f;
        for (int p = 0; p < kPlayers; ++p) {
          auto& J = in.joints[static_cast<std::size_t>(p)];
          auto& Bn = in.bones[static_cast<std::size_t>(p)];
          for (int k = 0; k < kJoints * 2; ++k) J(r, k) = static_cast<T>(s.joints[s.joint_index(p, f, 0, 0) + static_cast<std::size_t>(k)]);
          for (int k = 0; k < kBones * 2; ++k) Bn(r, k) = static_cast<T>(s.bones[s.bone_index(p, f, 0, 0) + static_cast<std::size_t>(k)]);
          for (int k = 0; k < 2; ++k)
            in.positions[static_cast<std::size_t>(p)](r, k) = static_cast<T>(s.positions[s.position_index(p, f, k)]);
        }
        for (int k = 0; k < 2; ++k) in.shuttle(r, k) = static_cast<T>(s.shuttle[s.shuttle_index(f, k)]);
      }
    }
    return in;
  }

  ModelConfig config_;
  ParamStore<T> params_;
};

}  // namespace bst
