#pragma once
// Plain-loop evaluation of the recommender network, written independently of
// src/model.cpp (no Eigen expressions, no shared helpers) for use as a test oracle.

#include <cmath>
#include <vector>

#include "exrec/model.hpp"

namespace exrec::oracle {

using Vec = std::vector<double>;

inline Vec matvec(const Matrix& m, const Vec& x) {
  Vec out(static_cast<std::size_t>(m.rows()), 0.0);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) acc += m(r, c) * x[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
  return out;
}

inline Vec rectify(Vec x) {
  for (double& v : x) v = v > 0.0 ? v : 0.0;
  return x;
}

inline Vec normalize_exp(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = v > mx ? v : mx;
  Vec out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline Vec to_vec(const Vector& v) { return Vec(v.data(), v.data() + v.size()); }

inline Vec reference_forward(const ModelParams& p, const Window& in) {
  const auto& cfg = p.config;
  const std::size_t w = cfg.window;
  const Vec hu = rectify(matvec(p.user_embed, to_vec(in.user_profile)));
  const Vec uterm = matvec(p.user_to_attention, hu);

  std::vector<Vec> psi(w);
  Vec tlogit(w);
  for (std::size_t k = 0; k < w; ++k) {
    Vec onehot(cfg.vocab, 0.0);
    if (in.items[k] != cfg.pad_id()) onehot[in.items[k]] = 1.0;
    const Vec hx = rectify(matvec(p.item_embed, onehot));
    const Vec a = matvec(p.item_to_attention, hx);
    Vec mix(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = a[i] + uterm[i];
    const Vec pu = normalize_exp(mix);
    psi[k].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) psi[k][i] = pu[i] * a[i];
    const Vec he = rectify(matvec(p.profile_embed, to_vec(in.item_profiles[k])));
    const Vec v3 = matvec(p.temporal_from_item, psi[k]);
    const Vec v4 = matvec(p.temporal_from_profile, he);
    tlogit[k] = v3[k] + v4[k];
  }
  const Vec pe = normalize_exp(tlogit);
  Vec h(cfg.hidden, 0.0);
  for (std::size_t k = 0; k < w; ++k) {
    Vec phi(psi[k].size());
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = pe[k] * psi[k][i];
    const Vec a = matvec(p.rnn_input, phi);
    const Vec b = matvec(p.rnn_recurrent, h);
    Vec next(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) next[i] = a[i] + b[i];
    h = rectify(next);
  }
  return normalize_exp(matvec(p.decoder, h));
}

}  // namespace exrec::oracle
