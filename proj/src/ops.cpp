#include "contracon/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "contracon/error.h"

namespace contracon {

using detail::make_result;

namespace {

thread_local std::uint64_t stochastic_draw_count = 0;

// c[m×n] += a[m×k]·b[k×n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m×n] += a[m×k]·b[n×k]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// c[m×n] += a[k×m]ᵀ·b[k×n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool is_suffix(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
    if (!is_suffix(a.shape(), b.shape())) {
        fail(ErrorCode::shape, std::string(name) + ": cannot broadcast " + shape_to_string(b.shape()) + " onto " +
                                   shape_to_string(a.shape()));
    }
    const std::size_t n = a.numel();
    const std::size_t inner = b.numel();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        T x = av[i], y = bv[i % inner];
        out[i] = kind == BinaryKind::add ? x + y : kind == BinaryKind::sub ? x - y : x * y;
    }
    return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [kind, n, inner](const Node<T>& o) {
        const auto& pa = o.inputs[0];
        const auto& pb = o.inputs[1];
        if (pa->requires_grad) {
            auto& ga = pa->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] += kind == BinaryKind::mul ? o.grad[i] * pb->data[i % inner] : o.grad[i];
            }
        }
        if (pb->requires_grad) {
            auto& gb = pb->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                T g = o.grad[i];
                if (kind == BinaryKind::sub) g = -g;
                if (kind == BinaryKind::mul) g *= pa->data[i];
                gb[i % inner] += g;
            }
        }
    });
}

template <typename T>
T gelu_value(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
    T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    return cdf + x * pdf;
}

template <typename T>
T sigmoid_value(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

Activation parse_activation(std::string_view name) {
    if (name == "gelu") return Activation::gelu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "relu") return Activation::relu;
    fail(ErrorCode::config, "unknown activation '" + std::string(name) + "'");
}

std::uint64_t stochastic_draws() { return stochastic_draw_count; }

std::size_t window_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0 || input + 2 * padding < kernel) return 0;
    return (input + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values());
    for (T& v : out) v *= factor;
    return make_result<T>(a.shape(), std::move(out), {a.node()}, [factor](const Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
    });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
    if (s.numel() != 1) fail(ErrorCode::shape, "mul_scalar: expected one value, got " + shape_to_string(s.shape()));
    const T sv = s.item();
    std::vector<T> out(a.values());
    for (T& v : out) v *= sv;
    return make_result<T>(a.shape(), std::move(out), {a.node(), s.node()}, [](const Node<T>& o) {
        const auto& pa = o.inputs[0];
        const auto& ps = o.inputs[1];
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += ps->data[0] * o.grad[i];
        }
        if (ps->requires_grad) {
            T acc = 0;
            for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * pa->data[i];
            ps->accumulate_grad(0, acc);
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    return make_result<T>({1}, {acc}, {a.node()}, [](const Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (T& v : g) v += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool ok_rank = (a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && (b.rank() == 2 || b.rank() == 3));
    if (!ok_rank) {
        fail(ErrorCode::shape, "matmul: unsupported ranks " + shape_to_string(a.shape()) + " and " +
                                   shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(a.rank() - 2);
    const std::size_t k = a.dim(a.rank() - 1);
    const std::size_t kb = b.dim(b.rank() - 2);
    const std::size_t n = b.dim(b.rank() - 1);
    const bool batched_b = b.rank() == 3;
    const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
    if (k != kb || (batched_b && b.dim(0) != batch)) {
        fail(ErrorCode::shape, "matmul: " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                                   " do not agree");
    }
    Shape out_shape = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
    std::vector<T> out(batch * m * n, T(0));
    const T* ap = a.values().data();
    const T* bp = b.values().data();
    if (batched_b) {
        for (std::size_t s = 0; s < batch; ++s) gemm_nn(ap + s * m * k, bp + s * k * n, out.data() + s * m * n, m, k, n);
    } else {
        gemm_nn(ap, bp, out.data(), batch * m, k, n);
    }
    return make_result<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                          [batch, m, k, n, batched_b](const Node<T>& o) {
                              const auto& pa = o.inputs[0];
                              const auto& pb = o.inputs[1];
                              const T* go = o.grad.data();
                              if (pa->requires_grad) {
                                  T* ga = pa->grad_buffer().data();
                                  if (batched_b) {
                                      for (std::size_t s = 0; s < batch; ++s) {
                                          gemm_nt(go + s * m * n, pb->data.data() + s * k * n, ga + s * m * k, m, n, k);
                                      }
                                  } else {
                                      gemm_nt(go, pb->data.data(), ga, batch * m, n, k);
                                  }
                              }
                              if (pb->requires_grad) {
                                  T* gb = pb->grad_buffer().data();
                                  if (batched_b) {
                                      for (std::size_t s = 0; s < batch; ++s) {
                                          gemm_tn(pa->data.data() + s * m * k, go + s * m * n, gb + s * k * n, k, m, n);
                                      }
                                  } else {
                                      gemm_tn(pa->data.data(), go, gb, k, batch * m, n);
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2 && a.rank() != 3) fail(ErrorCode::shape, "transpose: rank 2 or 3 expected");
    const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
    const std::size_t r = a.dim(a.rank() - 2);
    const std::size_t c = a.dim(a.rank() - 1);
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    std::vector<T> out(a.numel());
    const auto& v = a.values();
    for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[s * r * c + j * r + i] = v[s * r * c + i * c + j];
    return make_result<T>(std::move(shape), std::move(out), {a.node()}, [batch, r, c](const Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[s * r * c + i * c + j] += o.grad[s * r * c + j * r + i];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        fail(ErrorCode::shape, "reshape: " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
    }
    return make_result<T>(std::move(shape), a.values(), {a.node()}, [](const Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> parts) {
    if (parts.empty()) fail(ErrorCode::shape, "concat_last: no inputs");
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) {
        Shape pl(p.shape().begin(), p.shape().end() - 1);
        if (pl != lead) fail(ErrorCode::shape, "concat_last: leading shapes differ");
        widths.push_back(p.shape().back());
        total += p.shape().back();
        inputs.push_back(p.node());
    }
    const std::size_t rows = shape_numel(lead);
    std::vector<T> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t q = 0; q < parts.size(); ++q) {
        const auto& v = parts[q].values();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.begin() + r * widths[q], widths[q], out.begin() + r * total + offset);
        offset += widths[q];
    }
    Shape shape = lead;
    shape.push_back(total);
    return make_result<T>(std::move(shape), std::move(out), std::move(inputs), [widths, rows, total](const Node<T>& o) {
        std::size_t off = 0;
        for (std::size_t q = 0; q < widths.size(); ++q) {
            const auto& in = o.inputs[q];
            if (in->requires_grad) {
                auto& g = in->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[q]; ++j) g[r * widths[q] + j] += o.grad[r * total + off + j];
            }
            off += widths[q];
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) fail(ErrorCode::shape, "softmax: invalid axis for " + shape_to_string(x.shape()));
    const auto& shape = x.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
    const std::size_t len = shape[axis];
    const auto& v = x.values();
    std::vector<T> out(v.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, v[base + j * inner]);
            T total = 0;
            for (std::size_t j = 0; j < len; ++j) {
                T e = std::exp(v[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    return make_result<T>(shape, std::move(out), {x.node()}, [outer, inner, len](const Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        const auto& y = o.data;
        for (std::size_t ou = 0; ou < outer; ++ou) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = ou * len * inner + in;
                T dot = 0;
                for (std::size_t j = 0; j < len; ++j) dot += o.grad[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t idx = base + j * inner;
                    g[idx] += y[idx] * (o.grad[idx] - dot);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
        fail(ErrorCode::shape, "layer_norm: input " + shape_to_string(x.shape()) + " with gamma " +
                                   shape_to_string(gamma.shape()) + " and beta " + shape_to_string(beta.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const auto& v = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<T> normalized(v.size());
    std::vector<T> inv_std(rows);
    std::vector<T> out(v.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = v.data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T xh = (row[j] - mu) * is;
            normalized[r * d + j] = xh;
            out[r * d + j] = gv[j] * xh + bv[j];
        }
    }
    return make_result<T>(
        x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
        [rows, d, normalized = std::move(normalized), inv_std = std::move(inv_std)](const Node<T>& o) {
            const auto& px = o.inputs[0];
            const auto& pg = o.inputs[1];
            const auto& pb = o.inputs[2];
            if (pg->requires_grad) {
                auto& g = pg->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j] * normalized[r * d + j];
            }
            if (pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
            }
            if (px->requires_grad) {
                auto& g = px->grad_buffer();
                std::vector<T> dxh(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dxh = 0, mean_dxh_xh = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dxh[j] = o.grad[r * d + j] * pg->data[j];
                        mean_dxh += dxh[j];
                        mean_dxh_xh += dxh[j] * normalized[r * d + j];
                    }
                    mean_dxh /= static_cast<T>(d);
                    mean_dxh_xh /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        g[r * d + j] += inv_std[r] * (dxh[j] - mean_dxh - normalized[r * d + j] * mean_dxh_xh);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
    std::vector<T> out(x.values());
    switch (kind) {
        case Activation::gelu:
            for (T& v : out) v = gelu_value(v);
            break;
        case Activation::sigmoid:
            for (T& v : out) v = sigmoid_value(v);
            break;
        case Activation::relu:
            for (T& v : out) v = v > T(0) ? v : T(0);
            break;
        default:
            fail(ErrorCode::config, "unknown activation kind");
    }
    return make_result<T>(x.shape(), std::move(out), {x.node()}, [kind](const Node<T>& o) {
        const auto& px = o.inputs[0];
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            T d;
            switch (kind) {
                case Activation::gelu: d = gelu_derivative(px->data[i]); break;
                case Activation::sigmoid: d = o.data[i] * (T(1) - o.data[i]); break;
                default: d = px->data[i] > T(0) ? T(1) : T(0); break;
            }
            g[i] += d * o.grad[i];
        }
    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) fail(ErrorCode::shape, "cross_entropy: logits must be [B×C]");
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != batch) {
        fail(ErrorCode::shape, "cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                                   std::to_string(batch));
    }
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
            fail(ErrorCode::data, "cross_entropy: label " + std::to_string(labels[b]) + " at index " +
                                      std::to_string(b) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
    const auto& v = logits.values();
    std::vector<T> probs(v.size());
    T loss = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = v.data() + b * classes;
        T mx = *std::max_element(row, row + classes);
        T total = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - mx);
            total += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= total;
        loss += std::log(total) + mx - row[labels[b]];
    }
    loss /= static_cast<T>(batch);
    std::vector<int> targets(labels.begin(), labels.end());
    return make_result<T>({1}, {loss}, {logits.node()},
                          [batch, classes, probs = std::move(probs), targets = std::move(targets)](const Node<T>& o) {
                              auto& g = o.inputs[0]->grad_buffer();
                              const T s = o.grad[0] / static_cast<T>(batch);
                              for (std::size_t b = 0; b < batch; ++b) {
                                  for (std::size_t c = 0; c < classes; ++c) {
                                      T p = probs[b * classes + c];
                                      if (static_cast<int>(c) == targets[b]) p -= T(1);
                                      g[b * classes + c] += s * p;
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& input, const Tensor<T>& kernel) {
    if (input.rank() != 2 || kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1)) {
        fail(ErrorCode::shape, "conv2d_same: input " + shape_to_string(input.shape()) + " kernel " +
                                   shape_to_string(kernel.shape()));
    }
    const std::size_t rows = input.dim(0), cols = input.dim(1), k = kernel.dim(0);
    if (k % 2 == 0) fail(ErrorCode::config, "conv2d_same: kernel size " + std::to_string(k) + " is even");
    if (k > 2 * std::min(rows, cols) + 1) {
        fail(ErrorCode::config, "conv2d_same: kernel size " + std::to_string(k) + " exceeds 2*min(" +
                                    std::to_string(rows) + "," + std::to_string(cols) + ")+1");
    }
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::ptrdiff_t R = static_cast<std::ptrdiff_t>(rows), C = static_cast<std::ptrdiff_t>(cols);
    const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(k);
    const auto& x = input.values();
    const auto& w = kernel.values();
    std::vector<T> out(rows * cols, T(0));
    for (std::ptrdiff_t u = 0; u < K; ++u) {
        for (std::ptrdiff_t v = 0; v < K; ++v) {
            const T kv = w[u * K + v];
            const std::ptrdiff_t di = u - pad, dj = v - pad;
            const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -di), i1 = std::min(R, R - di);
            const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dj), j1 = std::min(C, C - dj);
            for (std::ptrdiff_t i = i0; i < i1; ++i) {
                const T* src = x.data() + (i + di) * C + dj;
                T* dst = out.data() + i * C;
                for (std::ptrdiff_t j = j0; j < j1; ++j) dst[j] += kv * src[j];
            }
        }
    }
    return make_result<T>(input.shape(), std::move(out), {input.node(), kernel.node()}, [R, C, K, pad](const Node<T>& o) {
        const auto& px = o.inputs[0];
        const auto& pk = o.inputs[1];
        T* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
        T* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
        for (std::ptrdiff_t u = 0; u < K; ++u) {
            for (std::ptrdiff_t v = 0; v < K; ++v) {
                const std::ptrdiff_t di = u - pad, dj = v - pad;
                const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -di), i1 = std::min(R, R - di);
                const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dj), j1 = std::min(C, C - dj);
                const T kv = pk->data[u * K + v];
                T acc = 0;
                for (std::ptrdiff_t i = i0; i < i1; ++i) {
                    const T* go = o.grad.data() + i * C;
                    const std::ptrdiff_t src = (i + di) * C + dj;
                    for (std::ptrdiff_t j = j0; j < j1; ++j) {
                        if (gx) gx[src + j] += kv * go[j];
                        acc += px->data[src + j] * go[j];
                    }
                }
                if (gk) gk[u * K + v] += acc;
            }
        }
    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1 || weight.dim(1) != input.dim(1) ||
        weight.dim(2) != weight.dim(3) || bias.dim(0) != weight.dim(0)) {
        fail(ErrorCode::shape, "conv2d: input " + shape_to_string(input.shape()) + " weight " +
                                   shape_to_string(weight.shape()) + " bias " + shape_to_string(bias.shape()));
    }
    const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Cout = weight.dim(0), k = weight.dim(2);
    const std::size_t Ho = window_output_extent(H, k, stride, padding);
    const std::size_t Wo = window_output_extent(W, k, stride, padding);
    if (Ho == 0 || Wo == 0) {
        fail(ErrorCode::config, "conv2d: spatial extent collapses for input " + shape_to_string(input.shape()));
    }
    const std::size_t patch = Cin * k * k;
    const std::size_t positions = Ho * Wo;

    // cols[patch × positions] for one sample
    auto im2col = [=](const T* x, std::vector<T>& cols) {
        std::fill(cols.begin(), cols.end(), T(0));
        for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    T* row = cols.data() + ((c * k + u) * k + v) * positions;
                    for (std::size_t i = 0; i < Ho; ++i) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(padding);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t j = 0; j < Wo; ++j) {
                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(padding);
                            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                            row[i * Wo + j] = x[(c * H + y) * W + xx];
                        }
                    }
                }
    };

    const auto& xv = input.values();
    const auto& wv = weight.values();
    const auto& bv = bias.values();
    std::vector<T> out(B * Cout * positions, T(0));
    std::vector<T> cols(patch * positions);
    for (std::size_t s = 0; s < B; ++s) {
        im2col(xv.data() + s * Cin * H * W, cols);
        T* o = out.data() + s * Cout * positions;
        for (std::size_t oc = 0; oc < Cout; ++oc) std::fill(o + oc * positions, o + (oc + 1) * positions, bv[oc]);
        gemm_nn(wv.data(), cols.data(), o, Cout, patch, positions);
    }
    return make_result<T>(
        {B, Cout, Ho, Wo}, std::move(out), {input.node(), weight.node(), bias.node()},
        [=](const Node<T>& o) {
            const auto& px = o.inputs[0];
            const auto& pw = o.inputs[1];
            const auto& pb = o.inputs[2];
            std::vector<T> c(patch * positions);
            std::vector<T> dcols(patch * positions);
            for (std::size_t s = 0; s < B; ++s) {
                const T* go = o.grad.data() + s * Cout * positions;
                if (pb->requires_grad) {
                    auto& gb = pb->grad_buffer();
                    for (std::size_t oc = 0; oc < Cout; ++oc)
                        for (std::size_t p = 0; p < positions; ++p) gb[oc] += go[oc * positions + p];
                }
                if (pw->requires_grad) {
                    im2col(px->data.data() + s * Cin * H * W, c);
                    gemm_nt(go, c.data(), pw->grad_buffer().data(), Cout, positions, patch);
                }
                if (px->requires_grad) {
                    std::fill(dcols.begin(), dcols.end(), T(0));
                    gemm_tn(pw->data.data(), go, dcols.data(), patch, Cout, positions);
                    T* gx = px->grad_buffer().data() + s * Cin * H * W;
                    for (std::size_t ch = 0; ch < Cin; ++ch)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const T* row = dcols.data() + ((ch * k + u) * k + v) * positions;
                                for (std::size_t i = 0; i < Ho; ++i) {
                                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(padding);
                                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
                                    for (std::size_t j = 0; j < Wo; ++j) {
                                        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(padding);
                                        if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                                        gx[(ch * H + y) * W + xx] += row[i * Wo + j];
                                    }
                                }
                            }
                }
            }
        });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (input.rank() != 4) fail(ErrorCode::shape, "max_pool2d: expected [B×C×H×W], got " + shape_to_string(input.shape()));
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Ho = window_output_extent(H, kernel, stride, padding);
    const std::size_t Wo = window_output_extent(W, kernel, stride, padding);
    if (Ho == 0 || Wo == 0) {
        fail(ErrorCode::config, "max_pool2d: spatial extent collapses for input " + shape_to_string(input.shape()));
    }
    const auto& v = input.values();
    std::vector<T> out(B * C * Ho * Wo);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t plane = 0; plane < B * C; ++plane) {
        for (std::size_t i = 0; i < Ho; ++i) {
            for (std::size_t j = 0; j < Wo; ++j) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = plane * H * W;
                for (std::size_t u = 0; u < kernel; ++u) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(padding);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t w = 0; w < kernel; ++w) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * stride + w) - static_cast<std::ptrdiff_t>(padding);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
                        const std::size_t idx = plane * H * W + static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
                        if (v[idx] > best) {
                            best = v[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (plane * Ho + i) * Wo + j;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    return make_result<T>({B, C, Ho, Wo}, std::move(out), {input.node()}, [argmax = std::move(argmax)](const Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) fail(ErrorCode::config, "dropout probability must be in [0,1)");
    if (p == 0.0) return x;
    ++stochastic_draw_count;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(x.numel());
    for (T& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
    return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) fail(ErrorCode::config, "drop path probability must be in [0,1)");
    if (p == 0.0) return x;
    ++stochastic_draw_count;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    const std::size_t batch = x.dim(0);
    const std::size_t per_sample = x.numel() / batch;
    std::vector<T> mask(x.numel());
    for (std::size_t s = 0; s < batch; ++s) {
        const T m = rng.bernoulli(p) ? T(0) : keep_scale;
        std::fill_n(mask.begin() + s * per_sample, per_sample, m);
    }
    return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

#define CONTRACON_INSTANTIATE_OPS(T)                                                                         \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> scale(const Tensor<T>&, T);                                                           \
    template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> sum(const Tensor<T>&);                                                                \
    template Tensor<T> mean(const Tensor<T>&);                                                               \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> transpose(const Tensor<T>&);                                                          \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
    template Tensor<T> concat_last(std::span<const Tensor<T>>);                                              \
    template Tensor<T> softmax(const Tensor<T>&, int);                                                       \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);           \
    template Tensor<T> activation(const Tensor<T>&, Activation);                                             \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                                \
    template Tensor<T> conv2d_same(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
    template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                  \
    template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                              \
    template Tensor<T> drop_path(const Tensor<T>&, double, Rng&);

CONTRACON_INSTANTIATE_OPS(float)
CONTRACON_INSTANTIATE_OPS(double)

#undef CONTRACON_INSTANTIATE_OPS

}  // namespace contracon
