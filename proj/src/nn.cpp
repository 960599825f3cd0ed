#include "hmer/nn.hpp"

#include <cstring>

namespace hmer {

uint64_t ParamStore::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const double d : values_) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void adam_step(ParamStore& ps, const GradBuffer& grads, AdamState& state, double lr) {
  if (grads.size() != ps.size() || state.m.size() != ps.size())
    throw NnError("adam_step: size mismatch");
  state.k += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.k);
  const double bc2 = 1.0 - std::pow(state.beta2, state.k);
  auto& vals = ps.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    vals[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

namespace {

// Fan-in-scaled uniform init.
void fill_uniform(double* p, std::size_t n, double bound, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
}

}  // namespace

// ---- Dense -----------------------------------------------------------------

void Dense::init(ParamStore& ps, const std::string& name, std::size_t in_dim, std::size_t out_dim) {
  in = in_dim;
  out = out_dim;
  w = ps.add(name + ".w", {out, in});
  b = ps.add(name + ".b", {out});
}

void Dense::init_params(ParamStore& ps, Rng& rng) const {
  fill_uniform(ps.ptr(w), in * out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  std::fill_n(ps.ptr(b), out, 0.0);
}

void Dense::forward(const ParamStore& ps, const double* x, double* y) const {
  const double* W = ps.ptr(w);
  const double* B = ps.ptr(b);
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * in;
    double acc = B[o];
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

void Dense::backward(const ParamStore& ps, const double* x, const double* gy, double* gx,
                     GradBuffer& gbuf) const {
  const double* W = ps.ptr(w);
  double* gW = gbuf.data() + ps.slice(w).offset;
  double* gB = gbuf.data() + ps.slice(b).offset;
  if (gx) std::fill_n(gx, in, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    const double g = gy[o];
    if (g == 0.0) continue;
    gB[o] += g;
    const double* row = W + o * in;
    double* grow = gW + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      grow[i] += g * x[i];
      if (gx) gx[i] += g * row[i];
    }
  }
}

// ---- Conv1D (circular) -------------------------------------------------------

void Conv1D::init(ParamStore& ps, const std::string& name, std::size_t in_ch_, std::size_t out_ch_,
                  std::size_t k_, std::size_t stride_, std::size_t in_len_) {
  in_ch = in_ch_;
  out_ch = out_ch_;
  k = k_;
  stride = stride_;
  in_len = in_len_;
  out_len = (in_len + stride - 1) / stride;  // == floor((L + k - 1 - k)/s) + 1
  w = ps.add(name + ".w", {out_ch, in_ch, k});
  b = ps.add(name + ".b", {out_ch});
}

void Conv1D::init_params(ParamStore& ps, Rng& rng) const {
  fill_uniform(ps.ptr(w), out_ch * in_ch * k, 1.0 / std::sqrt(static_cast<double>(in_ch * k)), rng);
  std::fill_n(ps.ptr(b), out_ch, 0.0);
}

void Conv1D::forward(const ParamStore& ps, const double* x, double* y) const {
  const double* W = ps.ptr(w);
  const double* B = ps.ptr(b);
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = B[oc];
      const std::size_t base = t * stride;
      for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const double* xin = x + ic * in_len;
        const double* wk = W + (oc * in_ch + ic) * k;
        for (std::size_t j = 0; j < k; ++j) acc += wk[j] * xin[(base + j) % in_len];
      }
      y[oc * out_len + t] = acc;
    }
  }
}

void Conv1D::backward(const ParamStore& ps, const double* x, const double* gy, double* gx,
                      GradBuffer& gbuf) const {
  const double* W = ps.ptr(w);
  double* gW = gbuf.data() + ps.slice(w).offset;
  double* gB = gbuf.data() + ps.slice(b).offset;
  if (gx) std::fill_n(gx, in_ch * in_len, 0.0);
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const double g = gy[oc * out_len + t];
      if (g == 0.0) continue;
      gB[oc] += g;
      const std::size_t base = t * stride;
      for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const double* xin = x + ic * in_len;
        const double* wk = W + (oc * in_ch + ic) * k;
        double* gwk = gW + (oc * in_ch + ic) * k;
        double* gxin = gx ? gx + ic * in_len : nullptr;
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t idx = (base + j) % in_len;
          gwk[j] += g * xin[idx];
          if (gxin) gxin[idx] += g * wk[j];
        }
      }
    }
  }
}

// ---- Conv2D (valid) ----------------------------------------------------------

void Conv2D::init(ParamStore& ps, const std::string& name, std::size_t in_ch_, std::size_t out_ch_,
                  std::size_t k_, std::size_t stride_, std::size_t in_h_, std::size_t in_w_) {
  in_ch = in_ch_;
  out_ch = out_ch_;
  k = k_;
  stride = stride_;
  in_h = in_h_;
  in_w = in_w_;
  if (in_h < k || in_w < k) throw NnError("conv2d: input smaller than kernel");
  out_h = (in_h - k) / stride + 1;
  out_w = (in_w - k) / stride + 1;
  w = ps.add(name + ".w", {out_ch, in_ch, k, k});
  b = ps.add(name + ".b", {out_ch});
}

void Conv2D::init_params(ParamStore& ps, Rng& rng) const {
  fill_uniform(ps.ptr(w), out_ch * in_ch * k * k,
               1.0 / std::sqrt(static_cast<double>(in_ch * k * k)), rng);
  std::fill_n(ps.ptr(b), out_ch, 0.0);
}

void Conv2D::forward(const ParamStore& ps, const double* x, double* y) const {
  const double* W = ps.ptr(w);
  const double* B = ps.ptr(b);
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t r = 0; r < out_h; ++r) {
      for (std::size_t c = 0; c < out_w; ++c) {
        double acc = B[oc];
        const std::size_t r0 = r * stride, c0 = c * stride;
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          const double* xin = x + ic * in_h * in_w;
          const double* wk = W + (oc * in_ch + ic) * k * k;
          for (std::size_t i = 0; i < k; ++i) {
            const double* xrow = xin + (r0 + i) * in_w + c0;
            const double* wrow = wk + i * k;
            for (std::size_t j = 0; j < k; ++j) acc += wrow[j] * xrow[j];
          }
        }
        y[(oc * out_h + r) * out_w + c] = acc;
      }
    }
  }
}

void Conv2D::backward(const ParamStore& ps, const double* x, const double* gy, double* gx,
                      GradBuffer& gbuf) const {
  const double* W = ps.ptr(w);
  double* gW = gbuf.data() + ps.slice(w).offset;
  double* gB = gbuf.data() + ps.slice(b).offset;
  if (gx) std::fill_n(gx, in_ch * in_h * in_w, 0.0);
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t r = 0; r < out_h; ++r) {
      for (std::size_t c = 0; c < out_w; ++c) {
        const double g = gy[(oc * out_h + r) * out_w + c];
        if (g == 0.0) continue;
        gB[oc] += g;
        const std::size_t r0 = r * stride, c0 = c * stride;
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          const double* xin = x + ic * in_h * in_w;
          const double* wk = W + (oc * in_ch + ic) * k * k;
          double* gwk = gW + (oc * in_ch + ic) * k * k;
          double* gxin = gx ? gx + ic * in_h * in_w : nullptr;
          for (std::size_t i = 0; i < k; ++i) {
            const std::size_t row = (r0 + i) * in_w + c0;
            for (std::size_t j = 0; j < k; ++j) {
              gwk[i * k + j] += g * xin[row + j];
              if (gxin) gxin[row + j] += g * wk[i * k + j];
            }
          }
        }
      }
    }
  }
}

void tanh_forward(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(const double* y, const double* gy, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) gx[i] = gy[i] * (1.0 - y[i] * y[i]);
}

// ---- distributions ---------------------------------------------------------

double gaussian_logprob(const double* mean, const double* log_std, const double* a,
                        std::size_t n) {
  static const double kLog2Pi = std::log(2.0 * kPi);
  double lp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (a[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - 0.5 * kLog2Pi;
  }
  return lp;
}

void gaussian_logprob_backward(const double* mean, const double* log_std, const double* a,
                               std::size_t n, double scale, double* gmean, double* glog_std) {
  for (std::size_t i = 0; i < n; ++i) {
    const double inv_var = std::exp(-2.0 * log_std[i]);
    const double diff = a[i] - mean[i];
    gmean[i] += scale * diff * inv_var;
    glog_std[i] += scale * (diff * diff * inv_var - 1.0);
  }
}

double gaussian_entropy(const double* log_std, std::size_t n) {
  static const double kHalfLog2PiE = 0.5 * std::log(2.0 * kPi * std::exp(1.0));
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) h += log_std[i] + kHalfLog2PiE;
  return h;
}

void gaussian_entropy_backward(std::size_t n, double scale, double* glog_std) {
  for (std::size_t i = 0; i < n; ++i) glog_std[i] += scale;
}

double bernoulli_logprob(double logit, bool outcome) {
  // log sigma(logit) = -log(1 + exp(-logit)), numerically stable both ways
  const double z = outcome ? logit : -logit;
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double bernoulli_logprob_dlogit(double logit, bool outcome) {
  return (outcome ? 1.0 : 0.0) - sigmoid(logit);
}

double bernoulli_entropy(double logit) {
  const double p = sigmoid(logit);
  return -(bernoulli_logprob(logit, true) * p + bernoulli_logprob(logit, false) * (1.0 - p));
}

double bernoulli_entropy_dlogit(double logit) {
  const double p = sigmoid(logit);
  return -logit * p * (1.0 - p);
}

// ---- grad check ------------------------------------------------------------

double grad_check(ParamStore& ps, const GradBuffer& analytic,
                  const std::function<double()>& loss, double h) {
  if (analytic.size() != ps.size()) throw NnError("grad_check: size mismatch");
  double worst = 0.0;
  auto& vals = ps.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double lp = loss();
    vals[i] = orig - h;
    const double lm = loss();
    vals[i] = orig;
    const double numeric = (lp - lm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace hmer
