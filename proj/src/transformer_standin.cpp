#include <algorithm>
#include <cmath>

#include "codd/denoiser.h"
#include "codd/error.h"

namespace codd {

namespace {

std::vector<float> random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<float> m(rows * cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (float& x : m) x = static_cast<float>(rng.normal() * scale);
  return m;
}

// out[n x k] = in[n x m] * w[m x k]
void matmul(const std::vector<float>& in, const std::vector<float>& w, std::size_t n, std::size_t m, std::size_t k,
            std::vector<float>& out) {
  out.assign(n * k, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    float* o = out.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const float a = in[i * m + j];
      const float* wr = w.data() + j * k;
      for (std::size_t c = 0; c < k; ++c) o[c] += a * wr[c];
    }
  }
}

void rms_norm(const std::vector<float>& x, std::size_t n, std::size_t d, std::vector<float>& out) {
  out.resize(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    float ss = 0.0f;
    for (std::size_t c = 0; c < d; ++c) ss += x[i * d + c] * x[i * d + c];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(d) + 1e-6f);
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = x[i * d + c] * inv;
  }
}

}  // namespace

TransformerStandIn::TransformerStandIn(std::size_t length, std::size_t vocab, TransformerShape shape)
    : length_(length), vocab_(vocab), shape_(shape) {
  if (length == 0 || vocab < 2 || shape.d_model == 0 || shape.ffn == 0)
    throw InputError("transformer stand-in needs positive dimensions");
  Rng rng(shape.seed);
  const std::size_t d = shape.d_model;
  token_embed_ = random_matrix(vocab + 1, d, rng);
  position_embed_ = random_matrix(length, d, rng);
  for (std::size_t l = 0; l < shape.layers; ++l) {
    Layer layer;
    layer.wq = random_matrix(d, d, rng);
    layer.wk = random_matrix(d, d, rng);
    layer.wv = random_matrix(d, d, rng);
    layer.wo = random_matrix(d, d, rng);
    layer.w1 = random_matrix(d, shape.ffn, rng);
    layer.w2 = random_matrix(shape.ffn, d, rng);
    layers_.push_back(std::move(layer));
  }
  unembed_ = random_matrix(d, vocab, rng);
}

PotentialGrid TransformerStandIn::potentials(const MaskedSequence& state) const {
  if (state.length() != length_) throw InputError("transformer stand-in: state length mismatch");
  state.check_tokens(vocab_);
  const std::size_t n = length_, d = shape_.d_model;
  std::vector<float> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t tok = state.masked(i) ? vocab_ : static_cast<std::size_t>(state.token(i));
    for (std::size_t c = 0; c < d; ++c) x[i * d + c] = token_embed_[tok * d + c] + position_embed_[i * d + c];
  }
  std::vector<float> h, q, k, v, att(n * d), proj, f1, f2, scores(n);
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  for (const Layer& layer : layers_) {
    rms_norm(x, n, d, h);
    matmul(h, layer.wq, n, d, d, q);
    matmul(h, layer.wk, n, d, d, k);
    matmul(h, layer.wv, n, d, d, v);
    std::fill(att.begin(), att.end(), 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      float mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        float s = 0.0f;
        for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      float total = 0.0f;
      for (std::size_t j = 0; j < n; ++j) total += (scores[j] = std::exp(scores[j] - mx));
      for (std::size_t j = 0; j < n; ++j) {
        const float w = scores[j] / total;
        for (std::size_t c = 0; c < d; ++c) att[i * d + c] += w * v[j * d + c];
      }
    }
    matmul(att, layer.wo, n, d, d, proj);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] += proj[t];
    rms_norm(x, n, d, h);
    matmul(h, layer.w1, n, d, shape_.ffn, f1);
    for (float& a : f1) a = std::max(a, 0.0f);
    matmul(f1, layer.w2, n, shape_.ffn, d, f2);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] += f2[t];
  }
  rms_norm(x, n, d, h);
  std::vector<float> logits;
  matmul(h, unembed_, n, d, vocab_, logits);
  std::vector<double> lt(logits.begin(), logits.end());
  return PotentialGrid::from_log_potentials(n, vocab_, std::move(lt));
}

}  // namespace codd
