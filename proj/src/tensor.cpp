#include "bafdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace bafdet {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill) {
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data.assign(shape_numel(node_->shape), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
int Tensor::dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
std::vector<double>& Tensor::grad() { return node_->ensure_grad(); }
const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("Tensor::grad: no gradient present");
  return node_->grad;
}
bool Tensor::requires_grad() const { return node_->requires_grad; }
Tensor& Tensor::set_requires_grad(bool b) {
  node_->requires_grad = b;
  return *this;
}
void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}
double Tensor::item() const {
  if (size() != 1) throw std::runtime_error("Tensor::item: not a scalar");
  return node_->data[0];
}

// ---- kernels --------------------------------------------------------------

namespace {

// C(MxN) += A(MxK) * B(KxN)
void mm(const double* A, const double* B, double* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * K;
    double* c = C + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C(MxN) += A(PxM)^T * B(PxN)
void mm_atb(const double* A, const double* B, double* C, int P, int M, int N) {
  for (int p = 0; p < P; ++p) {
    const double* a = A + static_cast<std::size_t>(p) * M;
    const double* b = B + static_cast<std::size_t>(p) * N;
    for (int m = 0; m < M; ++m) {
      const double av = a[m];
      if (av == 0.0) continue;
      double* c = C + static_cast<std::size_t>(m) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C(MxN) += A(MxP) * B(NxP)^T
void mm_abt(const double* A, const double* B, double* C, int M, int P, int N) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * P;
    double* c = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * P;
      double acc = 0.0;
      for (int p = 0; p < P; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

void check_matrix(const Tensor& t, const char* who) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(who) + ": expected a 2-d tensor, got " +
                                shape_str(t.shape()));
}

void check_chw(const Tensor& t, const char* who) {
  if (t.shape().size() != 3)
    throw std::invalid_argument(std::string(who) + ": expected a CxWxH tensor, got " +
                                shape_str(t.shape()));
}

struct ConvDims {
  int cin, w, h, cout, k, wo, ho, K, M;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride, int pad) {
  check_chw(input, "conv2d");
  if (weight.shape().size() != 4)
    throw std::invalid_argument("conv2d: weight must be CoutxCinxkxk, got " +
                                shape_str(weight.shape()));
  ConvDims d;
  d.cin = input.dim(0);
  d.w = input.dim(1);
  d.h = input.dim(2);
  d.cout = weight.dim(0);
  d.k = weight.dim(2);
  if (weight.dim(1) != d.cin)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                " input channels, input has " + std::to_string(d.cin));
  if (weight.dim(3) != d.k) throw std::invalid_argument("conv2d: non-square kernel");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  if (d.k > d.w + 2 * pad || d.k > d.h + 2 * pad)
    throw std::invalid_argument("conv2d: kernel exceeds padded input");
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.K = d.cin * d.k * d.k;
  d.M = d.wo * d.ho;
  return d;
}

// col is K x M with K = cin*k*k, M = wo*ho
void im2col(const double* in, const ConvDims& d, int stride, int pad, double* col) {
  std::size_t r = 0;
  for (int c = 0; c < d.cin; ++c) {
    const double* plane = in + static_cast<std::size_t>(c) * d.w * d.h;
    for (int ki = 0; ki < d.k; ++ki) {
      for (int kj = 0; kj < d.k; ++kj, ++r) {
        double* dst = col + r * d.M;
        for (int wo = 0; wo < d.wo; ++wo) {
          const int wi = wo * stride - pad + ki;
          for (int ho = 0; ho < d.ho; ++ho) {
            const int hi = ho * stride - pad + kj;
            dst[wo * d.ho + ho] = (wi >= 0 && wi < d.w && hi >= 0 && hi < d.h)
                                      ? plane[wi * d.h + hi]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, int stride, int pad, double* out) {
  std::size_t r = 0;
  for (int c = 0; c < d.cin; ++c) {
    double* plane = out + static_cast<std::size_t>(c) * d.w * d.h;
    for (int ki = 0; ki < d.k; ++ki) {
      for (int kj = 0; kj < d.k; ++kj, ++r) {
        const double* src = col + r * d.M;
        for (int wo = 0; wo < d.wo; ++wo) {
          const int wi = wo * stride - pad + ki;
          if (wi < 0 || wi >= d.w) continue;
          for (int ho = 0; ho < d.ho; ++ho) {
            const int hi = ho * stride - pad + kj;
            if (hi >= 0 && hi < d.h) plane[wi * d.h + hi] += src[wo * d.ho + ho];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> bw) {
  Tensor out(std::move(shape), std::move(data));
  auto n = out.node();
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.node());
  n->backward_fn = std::move(bw);
  return out;
}

// ---- ops ------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
  const ConvDims d = conv_dims(input, weight, stride, pad);
  if (bias.size() != static_cast<std::size_t>(d.cout))
    throw std::invalid_argument("conv2d: bias length must equal output channels");

  std::vector<double> col(static_cast<std::size_t>(d.K) * d.M);
  im2col(input.data().data(), d, stride, pad, col.data());

  std::vector<double> out(static_cast<std::size_t>(d.cout) * d.M);
  for (int c = 0; c < d.cout; ++c)
    std::fill_n(out.begin() + static_cast<std::size_t>(c) * d.M, d.M, bias.data()[c]);
  mm(weight.data().data(), col.data(), out.data(), d.cout, d.K, d.M);

  auto col_sp = std::make_shared<std::vector<double>>(std::move(col));
  return make_op(
      {d.cout, d.wo, d.ho}, std::move(out), {input, weight, bias},
      [d, stride, pad, col_sp](TensorNode& n) {
        auto& in = *n.parents[0];
        auto& w = *n.parents[1];
        auto& b = *n.parents[2];
        const double* go = n.grad.data();
        // bias
        auto& gb = b.ensure_grad();
        for (int c = 0; c < d.cout; ++c) {
          double acc = 0.0;
          const double* g = go + static_cast<std::size_t>(c) * d.M;
          for (int m = 0; m < d.M; ++m) acc += g[m];
          gb[c] += acc;
        }
        // weight: dW = gout * col^T
        mm_abt(go, col_sp->data(), w.ensure_grad().data(), d.cout, d.M, d.K);
        // input: dcol = W^T * gout, then col2im
        std::vector<double> dcol(static_cast<std::size_t>(d.K) * d.M, 0.0);
        mm_atb(w.data.data(), go, dcol.data(), d.cout, d.K, d.M);
        col2im_add(dcol.data(), d, stride, pad, in.ensure_grad().data());
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K)
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(M) * N, 0.0);
  mm(a.data().data(), b.data().data(), out.data(), M, K, N);
  return make_op({M, N}, std::move(out), {a, b}, [M, K, N](TensorNode& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    // dA += G * B^T ; dB += A^T * G
    mm_abt(n.grad.data(), b.data.data(), a.ensure_grad().data(), M, N, K);
    mm_atb(a.data.data(), n.grad.data(), b.ensure_grad().data(), M, K, N);
  });
}

Tensor transpose(const Tensor& m) {
  check_matrix(m, "transpose");
  const int R = m.dim(0), C = m.dim(1);
  std::vector<double> out(m.size());
  const auto& src = m.data();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) out[static_cast<std::size_t>(j) * R + i] = src[static_cast<std::size_t>(i) * C + j];
  return make_op({C, R}, std::move(out), {m}, [R, C](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j)
        g[static_cast<std::size_t>(i) * C + j] += n.grad[static_cast<std::size_t>(j) * R + i];
  });
}

Tensor softmax_rows(const Tensor& m) {
  check_matrix(m, "softmax_rows");
  const int R = m.dim(0), C = m.dim(1);
  if (C == 0) throw std::invalid_argument("softmax_rows: empty rows");
  std::vector<double> out(m.size());
  const auto& src = m.data();
  for (int i = 0; i < R; ++i) {
    const double* x = src.data() + static_cast<std::size_t>(i) * C;
    double* y = out.data() + static_cast<std::size_t>(i) * C;
    double mx = x[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < C; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (int j = 0; j < C; ++j) y[j] /= s;
  }
  auto out_sp = std::make_shared<std::vector<double>>(out);
  return make_op({R, C}, std::move(out), {m}, [R, C, out_sp](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int i = 0; i < R; ++i) {
      const double* s = out_sp->data() + static_cast<std::size_t>(i) * C;
      const double* go = n.grad.data() + static_cast<std::size_t>(i) * C;
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += go[j] * s[j];
      double* gi = g.data() + static_cast<std::size_t>(i) * C;
      for (int j = 0; j < C; ++j) gi[j] += s[j] * (go[j] - dot);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    for (int p = 0; p < 2; ++p) {
      auto& g = n.parents[static_cast<std::size_t>(p)]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor scale(const Tensor& t, double c) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * t.data()[i];
  return make_op(t.shape(), std::move(out), {t}, [c](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
  });
}

Tensor relu(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, t.data()[i]);
  return make_op(t.shape(), std::move(out), {t}, [](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    const auto& x = n.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += n.grad[i];
  });
}

Tensor maxpool2(const Tensor& t) {
  check_chw(t, "maxpool2");
  const int C = t.dim(0), W = t.dim(1), H = t.dim(2);
  const int Wo = (W + 1) / 2, Ho = (H + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(C) * Wo * Ho);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& src = t.data();
  for (int c = 0; c < C; ++c) {
    for (int wo = 0; wo < Wo; ++wo) {
      for (int ho = 0; ho < Ho; ++ho) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t besti = 0;
        for (int dw = 0; dw < 2; ++dw) {
          const int wi = 2 * wo + dw;
          if (wi >= W) continue;
          for (int dh = 0; dh < 2; ++dh) {
            const int hi = 2 * ho + dh;
            if (hi >= H) continue;
            const std::size_t idx =
                (static_cast<std::size_t>(c) * W + wi) * H + hi;
            if (src[idx] > best) {
              best = src[idx];
              besti = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * Wo + wo) * Ho + ho;
        out[o] = best;
        (*arg)[o] = besti;
      }
    }
  }
  return make_op({C, Wo, Ho}, std::move(out), {t}, [arg](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*arg)[o]] += n.grad[o];
  });
}

Tensor upsample2_nearest(const Tensor& t) {
  check_chw(t, "upsample2_nearest");
  const int C = t.dim(0), W = t.dim(1), H = t.dim(2);
  const int Wo = 2 * W, Ho = 2 * H;
  std::vector<double> out(static_cast<std::size_t>(C) * Wo * Ho);
  const auto& src = t.data();
  for (int c = 0; c < C; ++c)
    for (int wo = 0; wo < Wo; ++wo)
      for (int ho = 0; ho < Ho; ++ho)
        out[(static_cast<std::size_t>(c) * Wo + wo) * Ho + ho] =
            src[(static_cast<std::size_t>(c) * W + wo / 2) * H + ho / 2];
  return make_op({C, Wo, Ho}, std::move(out), {t}, [C, W, H, Wo, Ho](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int wo = 0; wo < Wo; ++wo)
        for (int ho = 0; ho < Ho; ++ho)
          g[(static_cast<std::size_t>(c) * W + wo / 2) * H + ho / 2] +=
              n.grad[(static_cast<std::size_t>(c) * Wo + wo) * Ho + ho];
  });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(t.shape()) +
                                " -> " + shape_str(shape));
  return make_op(std::move(shape), t.data(), {t}, [](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor normalize_columns(const Tensor& m, double eps) {
  check_matrix(m, "normalize_columns");
  const int R = m.dim(0), C = m.dim(1);
  std::vector<double> out(m.size());
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  const auto& src = m.data();
  for (int j = 0; j < C; ++j) {
    double s = 0.0;
    for (int i = 0; i < R; ++i) {
      const double v = src[static_cast<std::size_t>(i) * C + j];
      s += v * v;
    }
    (*norms)[static_cast<std::size_t>(j)] = std::sqrt(s);
    const double r = std::max(std::sqrt(s), eps);
    for (int i = 0; i < R; ++i)
      out[static_cast<std::size_t>(i) * C + j] = src[static_cast<std::size_t>(i) * C + j] / r;
  }
  return make_op({R, C}, std::move(out), {m}, [R, C, eps, norms](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    const auto& x = n.parents[0]->data;
    for (int j = 0; j < C; ++j) {
      const double nrm = (*norms)[static_cast<std::size_t>(j)];
      const double r = std::max(nrm, eps);
      double dot = 0.0;
      if (nrm > eps)
        for (int i = 0; i < R; ++i)
          dot += n.grad[static_cast<std::size_t>(i) * C + j] * x[static_cast<std::size_t>(i) * C + j];
      const double proj = (nrm > eps) ? dot / (r * r * r) : 0.0;
      for (int i = 0; i < R; ++i)
        g[static_cast<std::size_t>(i) * C + j] +=
            n.grad[static_cast<std::size_t>(i) * C + j] / r - proj * x[static_cast<std::size_t>(i) * C + j];
    }
  });
}

Tensor sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return make_op({}, {s}, {t}, [](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

Tensor sigmoid(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-t.data()[i]));
  auto out_sp = std::make_shared<std::vector<double>>(out);
  return make_op(t.shape(), std::move(out), {t}, [out_sp](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = (*out_sp)[i];
      g[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.shape().size() != 1) throw std::invalid_argument("linear: x must be 1-d");
  check_matrix(weight, "linear");
  const int O = weight.dim(0), I = weight.dim(1);
  if (x.dim(0) != I || bias.size() != static_cast<std::size_t>(O))
    throw std::invalid_argument("linear: shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(O));
  for (int o = 0; o < O; ++o) {
    const double* w = weight.data().data() + static_cast<std::size_t>(o) * I;
    double acc = bias.data()[static_cast<std::size_t>(o)];
    for (int i = 0; i < I; ++i) acc += w[i] * x.data()[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
  return make_op({O}, std::move(out), {x, weight, bias}, [O, I](TensorNode& n) {
    auto& gx = n.parents[0]->ensure_grad();
    auto& gw = n.parents[1]->ensure_grad();
    auto& gb = n.parents[2]->ensure_grad();
    const auto& x = n.parents[0]->data;
    const auto& w = n.parents[1]->data;
    for (int o = 0; o < O; ++o) {
      const double go = n.grad[static_cast<std::size_t>(o)];
      gb[static_cast<std::size_t>(o)] += go;
      for (int i = 0; i < I; ++i) {
        gx[static_cast<std::size_t>(i)] += go * w[static_cast<std::size_t>(o) * I + i];
        gw[static_cast<std::size_t>(o) * I + i] += go * x[static_cast<std::size_t>(i)];
      }
    }
  });
}

// ---- backward -------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::runtime_error("backward: loss must be a defined scalar tensor");
  // iterative post-order topological sort
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---- grad_check -----------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(std::vector<Tensor>&)>& fn,
                           std::vector<Tensor>& inputs, double eps) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = fn(inputs);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());

  GradCheckReport rep;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& x = inputs[ti].data();
    for (std::size_t c = 0; c < x.size(); ++c) {
      const double keep = x[c];
      x[c] = keep + eps;
      const double fp = fn(inputs).item();
      x[c] = keep - eps;
      const double fm = fn(inputs).item();
      x[c] = keep;
      GradCheckEntry e;
      e.input_index = static_cast<int>(ti);
      e.coord = c;
      e.analytic = analytic[ti][c];
      e.numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max(std::abs(e.analytic), std::abs(e.numeric));
      e.error = denom < 1e-8 ? std::abs(e.analytic - e.numeric)
                             : std::abs(e.analytic - e.numeric) / denom;
      rep.entries.push_back(e);
    }
  }
  std::sort(rep.entries.begin(), rep.entries.end(),
            [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.error > b.error; });
  if (!rep.entries.empty()) {
    rep.worst = rep.entries.front();
    rep.max_error = rep.worst.error;
  }
  return rep;
}

// ---- rng / init -----------------------------------------------------------

static std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : state_(seed) {}
std::uint64_t Rng::next_u64() { return splitmix64(state_); }
double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
int Rng::uniform_int(int lo, int hi) {
  return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}
double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform(), u2 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  have_spare_ = true;
  return r * std::cos(2.0 * M_PI * u2);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a * 0x9e3779b97f4a7c15ULL + b;
  splitmix64(s);
  return splitmix64(s);
}

void init_xavier(Tensor& t, int fan_in, int fan_out, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace bafdet
