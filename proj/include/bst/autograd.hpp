#pragma once

// Tape-based reverse-mode differentiation over row-major 2D matrices.
//
// Sequence tensors are batched by stacking samples vertically: a batch of B
// sequences of length S with width D is a [B*S, D] matrix. Ops that need the
// sequence structure (convolution taps, attention, token prepending) take
// B and S explicitly.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bst/errors.hpp"
#include "bst/params.hpp"
#include "bst/random.hpp"

namespace bst {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Matrix<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Attention probabilities captured during a forward pass, laid out as
/// [B*H*Sq, Sk] with block (b, h) at rows (b*H + h)*Sq.
template <typename T>
struct AttentionRecord {
  std::string tag;
  int batch = 0;
  int heads = 0;
  int query_len = 0;
  int key_len = 0;
  Matrix<T> weights;
  std::vector<std::uint8_t> key_mask;  // [B*Sk], 1 = attendable
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, int)>;

  explicit Tape(bool track_params = true) : track_params_(track_params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Leaf that receives a gradient (inputs under test, for example).
  Var<T> variable(Mat value) { return push(std::move(value), true, nullptr); }

  /// Leaf bound to a named parameter. On a tape built with
  /// track_params = false parameters are plain constants.
  Var<T> param(const ParamStore<T>& store, const std::string& name) {
    Var<T> v = push(store.value(name), track_params_, nullptr);
    if (track_params_) bindings_.push_back({v.id, name});
    return v;
  }

  Var<T> push(Mat value, bool requires_grad, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Mat& grad(int id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.size() == 0) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  void backward(Var<T> root) {
    if (root.rows() != 1 || root.cols() != 1) throw ValidationError("backward root must be a scalar");
    grad(root.id)(0, 0) += T(1);
    for (int id = root.id; id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
      node.backward(*this, id);
    }
  }

  /// Adds parameter-leaf gradients into the store's gradient buffers.
  void accumulate_param_grads(ParamStore<T>& store) const {
    for (const auto& binding : bindings_) {
      const Node& node = nodes_[static_cast<std::size_t>(binding.node)];
      if (node.grad.size() != 0) store.at(binding.name).grad += node.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  struct Binding {
    int node;
    std::string name;
  };

  bool track_params_ = true;
  std::deque<Node> nodes_;
  std::vector<Binding> bindings_;
};

namespace ops {

namespace detail {

template <typename T>
bool any_requires(Tape<T>& tape, std::initializer_list<int> ids) {
  for (int id : ids)
    if (tape.requires_grad(id)) return true;
  return false;
}

inline void require(bool condition, const char* what) {
  if (!condition) throw ValidationError(what);
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix<T> out = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_requires(t, {ia, ib}), [ia, ib](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

/// Row-vector broadcast add: x [N, C] + b [1, C].
template <typename T>
Var<T> add_row(Var<T> x, Var<T> b) {
  Tape<T>& t = *x.tape;
  detail::require(b.rows() == 1 && b.cols() == x.cols(), "add_row: shape mismatch");
  Matrix<T> out = x.value();
  out.rowwise() += b.value().row(0);
  const int ix = x.id, ib = b.id;
  return t.push(std::move(out), detail::any_requires(t, {ix, ib}), [ix, ib](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ix)) tp.grad(ix) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) += g.colwise().sum();
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix<T> out = a.value() + b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_requires(t, {ia, ib}), [ia, ib](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) += g;
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_requires(t, {ia, ib}), [ia, ib](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
  });
}

/// scale * x + shift, elementwise with constant coefficients.
template <typename T>
Var<T> affine(Var<T> x, T scale, T shift) {
  Tape<T>& t = *x.tape;
  Matrix<T> out = (x.value().array() * scale + shift).matrix();
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix), [ix, scale](Tape<T>& tp, int self) {
    tp.grad(ix) += tp.grad(self) * scale;
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tape<T>& t = *x.tape;
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Matrix<T> out = x.value().unaryExpr([inv_sqrt2](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); });
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix), [ix, inv_sqrt2](Tape<T>& tp, int self) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const Matrix<T> d = tp.value(ix).unaryExpr([&](T v) {
      return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    });
    tp.grad(ix) += tp.grad(self).cwiseProduct(d);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& t = *x.tape;
  Matrix<T> out = x.value().unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  const int ix = x.id;
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(out), t.requires_grad(ix), [ix, out_id](Tape<T>& tp, int self) {
    const Matrix<T>& s = tp.value(out_id);
    tp.grad(ix) += tp.grad(self).cwiseProduct(s.cwiseProduct((T(1) - s.array()).matrix()));
  });
}

/// Row-wise layer normalization with learned gain and bias ([1, C] each).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  Tape<T>& t = *x.tape;
  const Eigen::Index n = x.rows(), c = x.cols();
  detail::require(gamma.cols() == c && beta.cols() == c, "layer_norm: width mismatch");
  Matrix<T> xhat(n, c);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  const Matrix<T>& xv = x.value();
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    xhat.row(r) = (xv.row(r).array() - mean) * is;
  }
  Matrix<T> out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return t.push(std::move(out), detail::any_requires(t, {ix, ig, ib}),
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp, int self) {
                  const Matrix<T>& g = tp.grad(self);
                  if (tp.requires_grad(ig)) tp.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (tp.requires_grad(ib)) tp.grad(ib) += g.colwise().sum();
                  if (!tp.requires_grad(ix)) return;
                  const auto gamma_row = tp.value(ig).row(0).array();
                  Matrix<T>& gx = tp.grad(ix);
                  const T width = static_cast<T>(xhat.cols());
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const auto dxhat = (g.row(r).array() * gamma_row).eval();
                    const T mean_d = dxhat.mean();
                    const T mean_dx = (dxhat * xhat.row(r).array()).sum() / width;
                    gx.row(r).array() +=
                        inv_std[static_cast<std::size_t>(r)] * (dxhat - mean_d - xhat.row(r).array() * mean_dx);
                  }
                });
}

/// Multiplies each row by a constant weight (mask values are typically 0/1).
template <typename T>
Var<T> mask_rows(Var<T> x, std::span<const T> weights) {
  Tape<T>& t = *x.tape;
  detail::require(static_cast<Eigen::Index>(weights.size()) == x.rows(), "mask_rows: length mismatch");
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  Matrix<T> out = w.asDiagonal() * x.value();
  const int ix = x.id;
  std::vector<T> copy(weights.begin(), weights.end());
  return t.push(std::move(out), t.requires_grad(ix), [ix, copy = std::move(copy)](Tape<T>& tp, int self) {
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> wm(copy.data(), static_cast<Eigen::Index>(copy.size()));
    tp.grad(ix) += wm.asDiagonal() * tp.grad(self);
  });
}

/// Unfolds temporal taps: out[b*S+s, k*C + c] = x[b*S + s + offsets[k], c],
/// zero where the tap falls outside the sequence.
template <typename T>
Var<T> unfold_taps(Var<T> x, int batch, int seq_len, std::vector<int> offsets) {
  Tape<T>& t = *x.tape;
  detail::require(x.rows() == static_cast<Eigen::Index>(batch) * seq_len, "unfold_taps: row count mismatch");
  const Eigen::Index c = x.cols();
  const auto taps = static_cast<Eigen::Index>(offsets.size());
  Matrix<T> out = Matrix<T>::Zero(x.rows(), taps * c);
  const Matrix<T>& xv = x.value();
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < seq_len; ++s)
      for (Eigen::Index k = 0; k < taps; ++k) {
        const int src = s + offsets[static_cast<std::size_t>(k)];
        if (src < 0 || src >= seq_len) continue;
        out.block(b * seq_len + s, k * c, 1, c) = xv.row(b * seq_len + src);
      }
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix),
                [ix, batch, seq_len, c, offsets = std::move(offsets)](Tape<T>& tp, int self) {
                  const Matrix<T>& g = tp.grad(self);
                  Matrix<T>& gx = tp.grad(ix);
                  const auto n_taps = static_cast<Eigen::Index>(offsets.size());
                  for (int b = 0; b < batch; ++b)
                    for (int s = 0; s < seq_len; ++s)
                      for (Eigen::Index k = 0; k < n_taps; ++k) {
                        const int src = s + offsets[static_cast<std::size_t>(k)];
                        if (src < 0 || src >= seq_len) continue;
                        gx.row(b * seq_len + src) += g.block(b * seq_len + s, k * c, 1, c);
                      }
                });
}

/// Shape of a batched multi-head attention call.
struct AttentionShape {
  int batch = 1;
  int query_len = 1;
  int key_len = 1;
  int heads = 1;
  int head_dim = 1;
};

/// Scaled dot-product attention per (sample, head). q is [B*Sq, H*Dh],
/// k and v are [B*Sk, H*Dh]; masked keys get probability exactly 0.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, AttentionShape shape, std::span<const std::uint8_t> key_mask,
                 AttentionRecord<T>* record = nullptr) {
  Tape<T>& t = *q.tape;
  const int B = shape.batch, Sq = shape.query_len, Sk = shape.key_len, H = shape.heads, Dh = shape.head_dim;
  detail::require(q.rows() == static_cast<Eigen::Index>(B) * Sq && q.cols() == static_cast<Eigen::Index>(H) * Dh,
                  "attention: query shape mismatch");
  detail::require(k.rows() == static_cast<Eigen::Index>(B) * Sk && k.cols() == q.cols(),
                  "attention: key shape mismatch");
  detail::require(v.rows() == k.rows() && v.cols() == q.cols(), "attention: value shape mismatch");
  detail::require(key_mask.size() == static_cast<std::size_t>(B) * Sk, "attention: key mask length mismatch");

  const T scale = T(1) / std::sqrt(static_cast<T>(Dh));
  Matrix<T> probs(static_cast<Eigen::Index>(B) * H * Sq, Sk);
  Matrix<T> out(q.rows(), q.cols());
  const Matrix<T>& qv = q.value();
  const Matrix<T>& kv = k.value();
  const Matrix<T>& vv = v.value();
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      auto qb = qv.block(b * Sq, h * Dh, Sq, Dh);
      auto kb = kv.block(b * Sk, h * Dh, Sk, Dh);
      auto vb = vv.block(b * Sk, h * Dh, Sk, Dh);
      auto pb = probs.block((b * H + h) * Sq, 0, Sq, Sk);
      pb.noalias() = qb * kb.transpose();
      pb *= scale;
      for (int i = 0; i < Sq; ++i) {
        T max_score = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < Sk; ++j)
          if (key_mask[static_cast<std::size_t>(b * Sk + j)]) max_score = std::max(max_score, pb(i, j));
        T total = 0;
        for (int j = 0; j < Sk; ++j) {
          if (key_mask[static_cast<std::size_t>(b * Sk + j)]) {
            pb(i, j) = std::exp(pb(i, j) - max_score);
            total += pb(i, j);
          } else {
            pb(i, j) = 0;
          }
        }
        if (total > 0) pb.row(i) /= total;
      }
      out.block(b * Sq, h * Dh, Sq, Dh).noalias() = pb * vb;
    }
  }
  if (record) {
    record->batch = B;
    record->heads = H;
    record->query_len = Sq;
    record->key_len = Sk;
    record->weights = probs;
    record->key_mask.assign(key_mask.begin(), key_mask.end());
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return t.push(std::move(out), detail::any_requires(t, {iq, ik, iv}),
                [iq, ik, iv, shape, scale, probs = std::move(probs)](Tape<T>& tp, int self) {
                  const int B = shape.batch, Sq = shape.query_len, Sk = shape.key_len, H = shape.heads,
                            Dh = shape.head_dim;
                  const Matrix<T>& g = tp.grad(self);
                  const bool need_q = tp.requires_grad(iq), need_k = tp.requires_grad(ik),
                             need_v = tp.requires_grad(iv);
                  Matrix<T> dp(Sq, Sk);
                  for (int b = 0; b < B; ++b) {
                    for (int h = 0; h < H; ++h) {
                      auto pb = probs.block((b * H + h) * Sq, 0, Sq, Sk);
                      auto gb = g.block(b * Sq, h * Dh, Sq, Dh);
                      auto qb = tp.value(iq).block(b * Sq, h * Dh, Sq, Dh);
                      auto kb = tp.value(ik).block(b * Sk, h * Dh, Sk, Dh);
                      auto vb = tp.value(iv).block(b * Sk, h * Dh, Sk, Dh);
                      if (need_v) tp.grad(iv).block(b * Sk, h * Dh, Sk, Dh).noalias() += pb.transpose() * gb;
                      if (!need_q && !need_k) continue;
                      dp.noalias() = gb * vb.transpose();
                      // softmax backward; masked entries have p = 0 and drop out
                      for (int i = 0; i < Sq; ++i) {
                        const T dot = dp.row(i).dot(pb.row(i));
                        dp.row(i) = (pb.row(i).array() * (dp.row(i).array() - dot)).matrix();
                      }
                      dp *= scale;
                      if (need_q) tp.grad(iq).block(b * Sq, h * Dh, Sq, Dh).noalias() += dp * kb;
                      if (need_k) tp.grad(ik).block(b * Sk, h * Dh, Sk, Dh).noalias() += dp.transpose() * qb;
                    }
                  }
                });
}

/// Prepends one shared token row to every sequence: [B*S, D] -> [B*(S+1), D].
template <typename T>
Var<T> prepend_token(Var<T> x, Var<T> token, int batch, int seq_len) {
  Tape<T>& t = *x.tape;
  detail::require(token.rows() == 1 && token.cols() == x.cols(), "prepend_token: token shape mismatch");
  detail::require(x.rows() == static_cast<Eigen::Index>(batch) * seq_len, "prepend_token: row count mismatch");
  const int s1 = seq_len + 1;
  Matrix<T> out(static_cast<Eigen::Index>(batch) * s1, x.cols());
  for (int b = 0; b < batch; ++b) {
    out.row(b * s1) = token.value().row(0);
    out.block(b * s1 + 1, 0, seq_len, x.cols()) = x.value().block(b * seq_len, 0, seq_len, x.cols());
  }
  const int ix = x.id, it = token.id;
  return t.push(std::move(out), detail::any_requires(t, {ix, it}), [ix, it, batch, seq_len](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    const int s1 = seq_len + 1;
    for (int b = 0; b < batch; ++b) {
      if (tp.requires_grad(it)) tp.grad(it).row(0) += g.row(b * s1);
      if (tp.requires_grad(ix))
        tp.grad(ix).block(b * seq_len, 0, seq_len, g.cols()) += g.block(b * s1 + 1, 0, seq_len, g.cols());
    }
  });
}

/// Adds a [S, D] table to each of the B stacked sequences in x [B*S, D].
template <typename T>
Var<T> add_tiled(Var<T> x, Var<T> table, int batch) {
  Tape<T>& t = *x.tape;
  const Eigen::Index s = table.rows();
  detail::require(x.rows() == batch * s && x.cols() == table.cols(), "add_tiled: shape mismatch");
  Matrix<T> out = x.value();
  for (int b = 0; b < batch; ++b) out.block(b * s, 0, s, out.cols()) += table.value();
  const int ix = x.id, it = table.id;
  return t.push(std::move(out), detail::any_requires(t, {ix, it}), [ix, it, batch, s](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ix)) tp.grad(ix) += g;
    if (tp.requires_grad(it))
      for (int b = 0; b < batch; ++b) tp.grad(it) += g.block(b * s, 0, s, g.cols());
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> rows) {
  Tape<T>& t = *x.tape;
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  }
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix), [ix, rows = std::move(rows)](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    Matrix<T>& gx = tp.grad(ix);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Drops row 0 of every (S+1)-row block: [B*(S+1), D] -> [B*S, D].
template <typename T>
Var<T> drop_first_rows(Var<T> x, int batch, int seq_len) {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(batch) * seq_len);
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < seq_len; ++s) rows.push_back(b * (seq_len + 1) + 1 + s);
  return gather_rows(x, std::move(rows));
}

template <typename T>
Var<T> concat_cols(std::vector<Var<T>> parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  Tape<T>& t = *parts.front().tape;
  const Eigen::Index n = parts.front().rows();
  Eigen::Index width = 0;
  bool needs = false;
  for (const auto& p : parts) {
    detail::require(p.rows() == n, "concat_cols: row count mismatch");
    width += p.cols();
    needs = needs || t.requires_grad(p.id);
  }
  Matrix<T> out(n, width);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.block(0, offset, n, p.cols()) = p.value();
    spans.emplace_back(p.id, offset);
    offset += p.cols();
  }
  return t.push(std::move(out), needs, [spans = std::move(spans)](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    for (const auto& [id, off] : spans)
      if (tp.requires_grad(id)) tp.grad(id) += g.block(0, off, g.rows(), tp.value(id).cols());
  });
}

/// Repeats every column r times in place: [N, C] -> [N, C*r].
template <typename T>
Var<T> repeat_cols(Var<T> x, int r) {
  Tape<T>& t = *x.tape;
  const Eigen::Index c = x.cols();
  Matrix<T> out(x.rows(), c * r);
  for (Eigen::Index j = 0; j < c; ++j)
    for (int k = 0; k < r; ++k) out.col(j * r + k) = x.value().col(j);
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix), [ix, r, c](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    Matrix<T>& gx = tp.grad(ix);
    for (Eigen::Index j = 0; j < c; ++j)
      for (int k = 0; k < r; ++k) gx.col(j) += g.col(j * r + k);
  });
}

/// Row-wise cosine similarity, [N, D] x [N, D] -> [N, 1]. A zero-norm row
/// yields similarity 0 and zero gradient.
template <typename T>
Var<T> cosine_rows(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "cosine_rows: shape mismatch");
  const Eigen::Index n = a.rows();
  Matrix<T> out(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T na = a.value().row(r).norm(), nb = b.value().row(r).norm();
    out(r, 0) = (na == T(0) || nb == T(0)) ? T(0) : a.value().row(r).dot(b.value().row(r)) / (na * nb);
  }
  const int ia = a.id, ib = b.id;
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(out), detail::any_requires(t, {ia, ib}), [ia, ib, out_id](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    const Matrix<T>& av = tp.value(ia);
    const Matrix<T>& bv = tp.value(ib);
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
      const T na = av.row(r).norm(), nb = bv.row(r).norm();
      if (na == T(0) || nb == T(0)) continue;
      const T c = tp.value(out_id)(r, 0);
      if (tp.requires_grad(ia))
        tp.grad(ia).row(r) += g(r, 0) * (bv.row(r) / (na * nb) - c * av.row(r) / (na * na));
      if (tp.requires_grad(ib))
        tp.grad(ib).row(r) += g(r, 0) * (av.row(r) / (na * nb) - c * bv.row(r) / (nb * nb));
    }
  });
}

/// Scales row r of x [N, D] by s(r, 0), s is [N, 1].
template <typename T>
Var<T> scale_rows(Var<T> x, Var<T> s) {
  Tape<T>& t = *x.tape;
  detail::require(s.rows() == x.rows() && s.cols() == 1, "scale_rows: shape mismatch");
  Matrix<T> out = s.value().col(0).asDiagonal() * x.value();
  const int ix = x.id, is = s.id;
  return t.push(std::move(out), detail::any_requires(t, {ix, is}), [ix, is](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    if (tp.requires_grad(ix)) tp.grad(ix) += tp.value(is).col(0).asDiagonal() * g;
    if (tp.requires_grad(is)) tp.grad(is).col(0) += g.cwiseProduct(tp.value(ix)).rowwise().sum();
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& t = *x.tape;
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.value().row(r).maxCoeff();
    out.row(r) = (x.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const int ix = x.id;
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(out), t.requires_grad(ix), [ix, out_id](Tape<T>& tp, int self) {
    const Matrix<T>& g = tp.grad(self);
    const Matrix<T>& p = tp.value(out_id);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const T dot = g.row(r).dot(p.row(r));
      tp.grad(ix).row(r) += (p.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
  });
}

/// Mean over rows of -sum_k target_k * log(max(p_k, floor)) where p is the
/// row softmax of logits and target = (1 - smoothing) one-hot + smoothing / K.
template <typename T>
Var<T> smoothed_cross_entropy(Var<T> logits, std::span<const int> labels, T smoothing, T log_floor = T(1e-12)) {
  Tape<T>& t = *logits.tape;
  const Eigen::Index n = logits.rows(), k = logits.cols();
  detail::require(static_cast<Eigen::Index>(labels.size()) == n, "smoothed_cross_entropy: label count mismatch");
  Matrix<T> probs(n, k);
  Matrix<T> target = Matrix<T>::Constant(n, k, smoothing / static_cast<T>(k));
  T total = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    detail::require(label >= 0 && label < k, "smoothed_cross_entropy: label out of range");
    target(r, label) += T(1) - smoothing;
    const T m = logits.value().row(r).maxCoeff();
    probs.row(r) = (logits.value().row(r).array() - m).exp().matrix();
    probs.row(r) /= probs.row(r).sum();
    for (Eigen::Index c = 0; c < k; ++c) total -= target(r, c) * std::log(std::max(probs(r, c), log_floor));
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(n);
  const int il = logits.id;
  return t.push(std::move(out), t.requires_grad(il),
                [il, log_floor, probs = std::move(probs), target = std::move(target)](Tape<T>& tp, int self) {
                  const T g = tp.grad(self)(0, 0) / static_cast<T>(probs.rows());
                  Matrix<T>& gl = tp.grad(il);
                  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                    // dL/dp_c = -target_c / p_c where the floor is inactive
                    Eigen::Matrix<T, 1, Eigen::Dynamic> dp(probs.cols());
                    for (Eigen::Index c = 0; c < probs.cols(); ++c)
                      dp(c) = probs(r, c) >= log_floor ? -target(r, c) / probs(r, c) : T(0);
                    const T dot = dp.dot(probs.row(r));
                    gl.row(r) += g * (probs.row(r).array() * (dp.array() - dot)).matrix();
                  }
                });
}

/// Inverted dropout with a mask drawn from rng; identity when rate <= 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  Tape<T>& t = *x.tape;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Matrix<T> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? T(0) : keep_scale;
  Matrix<T> out = x.value().cwiseProduct(mask);
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix), [ix, mask = std::move(mask)](Tape<T>& tp, int self) {
    tp.grad(ix) += tp.grad(self).cwiseProduct(mask);
  });
}

/// sum(weights .* x) as a [1, 1] scalar; weights are constant.
template <typename T>
Var<T> weighted_sum(Var<T> x, Matrix<T> weights) {
  Tape<T>& t = *x.tape;
  detail::require(weights.rows() == x.rows() && weights.cols() == x.cols(), "weighted_sum: shape mismatch");
  Matrix<T> out(1, 1);
  out(0, 0) = x.value().cwiseProduct(weights).sum();
  const int ix = x.id;
  return t.push(std::move(out), t.requires_grad(ix), [ix, weights = std::move(weights)](Tape<T>& tp, int self) {
    tp.grad(ix) += tp.grad(self)(0, 0) * weights;
  });
}

}  // namespace ops
}  // namespace bst
