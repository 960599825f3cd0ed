#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hmer/rng.hpp"
#include "hmer/tensor.hpp"

namespace hmer {

struct NnError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat parameter storage. Layers hold named slices; gradients accumulate into
// an external buffer of the same layout so minibatch workers can each own one.
class ParamStore {
 public:
  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t count = 0;
    std::vector<std::size_t> shape;
  };

  std::size_t add(const std::string& name, std::vector<std::size_t> shape) {
    Slice s;
    s.name = name;
    s.offset = values_.size();
    s.count = Tensor::numel_of(shape);
    s.shape = std::move(shape);
    values_.resize(s.offset + s.count, 0.0);
    slices_.push_back(std::move(s));
    return slices_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<Slice>& slices() const { return slices_; }
  const Slice& slice(std::size_t idx) const { return slices_[idx]; }

  double* ptr(std::size_t idx) { return values_.data() + slices_[idx].offset; }
  const double* ptr(std::size_t idx) const { return values_.data() + slices_[idx].offset; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  // FNV-1a over the raw parameter bytes (gradient-isolation checks).
  uint64_t hash() const;

 private:
  std::vector<double> values_;
  std::vector<Slice> slices_;
};

// Gradient buffer matching a ParamStore layout.
using GradBuffer = std::vector<double>;

struct AdamState {
  std::vector<double> m, v;
  long k = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    k = 0;
  }
};

// Bias-corrected Adam update of `ps` from `grads`.
void adam_step(ParamStore& ps, const GradBuffer& grads, AdamState& state, double lr);

// ---- layers ----------------------------------------------------------------

struct Dense {
  std::size_t in = 0, out = 0;
  std::size_t w = 0, b = 0;  // slice ids

  void init(ParamStore& ps, const std::string& name, std::size_t in_dim, std::size_t out_dim);
  void init_params(ParamStore& ps, Rng& rng) const;
  void forward(const ParamStore& ps, const double* x, double* y) const;
  // gx may be null when the input gradient is not needed.
  void backward(const ParamStore& ps, const double* x, const double* gy, double* gx,
                GradBuffer& gbuf) const;
};

// 1D cross-correlation over a periodic signal (circular padding); the LiDAR
// scan wraps around, so output length is ceil(len/stride).
struct Conv1D {
  std::size_t in_ch = 0, out_ch = 0, k = 0, stride = 0, in_len = 0, out_len = 0;
  std::size_t w = 0, b = 0;

  void init(ParamStore& ps, const std::string& name, std::size_t in_ch_, std::size_t out_ch_,
            std::size_t k_, std::size_t stride_, std::size_t in_len_);
  void init_params(ParamStore& ps, Rng& rng) const;
  void forward(const ParamStore& ps, const double* x, double* y) const;
  void backward(const ParamStore& ps, const double* x, const double* gy, double* gx,
                GradBuffer& gbuf) const;
};

// 2D cross-correlation, valid padding.
struct Conv2D {
  std::size_t in_ch = 0, out_ch = 0, k = 0, stride = 0;
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::size_t w = 0, b = 0;

  void init(ParamStore& ps, const std::string& name, std::size_t in_ch_, std::size_t out_ch_,
            std::size_t k_, std::size_t stride_, std::size_t in_h_, std::size_t in_w_);
  void init_params(ParamStore& ps, Rng& rng) const;
  void forward(const ParamStore& ps, const double* x, double* y) const;
  void backward(const ParamStore& ps, const double* x, const double* gy, double* gx,
                GradBuffer& gbuf) const;
};

void tanh_forward(const double* x, double* y, std::size_t n);
// Gradient through tanh given the forward *output* y.
void tanh_backward(const double* y, const double* gy, double* gx, std::size_t n);

// ---- distributions ---------------------------------------------------------

// Diagonal-Gaussian log density of `a` under (mean, exp(log_std)).
double gaussian_logprob(const double* mean, const double* log_std, const double* a, std::size_t n);
// d(logp)/dmean and d(logp)/dlog_std, accumulated (scaled by `scale`).
void gaussian_logprob_backward(const double* mean, const double* log_std, const double* a,
                               std::size_t n, double scale, double* gmean, double* glog_std);
double gaussian_entropy(const double* log_std, std::size_t n);
void gaussian_entropy_backward(std::size_t n, double scale, double* glog_std);

double bernoulli_logprob(double logit, bool outcome);
double bernoulli_logprob_dlogit(double logit, bool outcome);
double bernoulli_entropy(double logit);
double bernoulli_entropy_dlogit(double logit);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---- verification ----------------------------------------------------------

// Max over parameters of |analytic - numeric| / max(1, |numeric|), with the
// numeric gradient from central differences (h = 1e-5). `loss` must evaluate
// the scalar objective from the current parameters of `ps`.
double grad_check(ParamStore& ps, const GradBuffer& analytic,
                  const std::function<double()>& loss, double h = 1e-5);

}  // namespace hmer
