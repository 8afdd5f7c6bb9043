#pragma once

// Small models and random inputs shared by the test binaries.

#include "bst/model.hpp"

namespace fixture {

inline bst::ModelConfig small_config(bst::Variant v, int K = 4, int L = 8) {
  bst::ModelConfig c;
  c.d_model = 8;
  c.d_attn = 4;
  c.n_heads = 2;
  c.n_layers_trans1 = 1;
  c.n_layers_trans2 = 1;
  c.seq_len = L;
  c.n_classes = K;
  c.variant = v;
  c.dropout = 0.0;
  return c;
}

/// Uniform(-1, 1) features in the first `valid` frames, zero padding after.
inline bst::StrokeSample random_sample(int L, int valid, std::uint64_t seed, int label = 0) {
  bst::Rng rng(seed);
  bst::StrokeSample s = bst::StrokeSample::zeros(L);
  auto fill = [&](std::vector<double>& v, std::size_t per_frame, bool per_player) {
    const std::size_t players = per_player ? bst::kPlayers : 1;
    for (std::size_t p = 0; p < players; ++p)
      for (int f = 0; f < valid; ++f)
        for (std::size_t k = 0; k < per_frame; ++k)
          v[(p * static_cast<std::size_t>(L) + static_cast<std::size_t>(f)) * per_frame + k] = rng.uniform(-1.0, 1.0);
  };
  fill(s.joints, bst::kJoints * 2, true);
  fill(s.bones, bst::kBones * 2, true);
  fill(s.shuttle, 2, false);
  fill(s.positions, 2, true);
  for (int f = 0; f < valid; ++f) s.mask[static_cast<std::size_t>(f)] = 1;
  s.label = label;
  return s;
}

inline bst::Matrix<double> random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  bst::Rng rng(seed);
  bst::Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

}  // namespace fixture
