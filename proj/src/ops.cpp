#include "edf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "edf/kernels.hpp"
#include "edf/tape.hpp"

namespace edf {

namespace {

Tensor finish(std::string_view op, Shape shape, std::vector<double> values,
              const std::vector<const Tensor*>& inputs, BackwardFn backward) {
  const bool f32 = precision() == Precision::F32;
  for (double& v : values) {
    if (f32) v = static_cast<double>(static_cast<float>(v));
    if (!std::isfinite(v)) {
      throw NonFiniteError("non-finite value produced by " + std::string(op));
    }
  }
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (tape == nullptr || !recording_enabled()) return out;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  bool any = false;
  for (const Tensor* in : inputs) {
    const int id = tape->owns(*in) ? in->node() : -1;
    any = any || id >= 0;
    ids.push_back(id);
  }
  if (!any) return out;
  const int node = tape->append(op, std::move(ids), std::move(backward));
  return tape->attach(std::move(out), node);
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

// Flat index into `in` for every flat index of `out`, under broadcasting.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n, 0);
  if (shape_numel(in) == 1) return map;
  const std::size_t r = out.size();
  require(in.size() <= r, "cannot broadcast " + shape_str(in) + " to " + shape_str(out));
  Shape padded(r - in.size(), 1);
  padded.insert(padded.end(), in.begin(), in.end());
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = r; k-- > 0;) {
    require(padded[k] == out[k] || padded[k] == 1,
            "cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    stride[k] = padded[k] == 1 ? 0 : s;
    s *= padded[k];
  }
  std::vector<std::size_t> counter(r, 0);
  std::size_t idx = 0;
  for (std::size_t j = 0; j < n; ++j) {
    map[j] = idx;
    for (std::size_t k = r; k-- > 0;) {
      ++counter[k];
      idx += stride[k];
      if (counter[k] < out[k]) break;
      idx -= stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return map;
}

template <typename F>
std::vector<double> binary_values(const Tensor& a, const Tensor& b, const Shape& out, F f) {
  std::vector<double> v(shape_numel(out));
  const auto& av = a.vec();
  const auto& bv = b.vec();
  if (a.shape() == out && b.shape() == out) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i], bv[i]);
  } else if (a.shape() == out && b.numel() == 1) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i], bv[0]);
  } else {
    const auto ma = broadcast_index(a.shape(), out);
    const auto mb = broadcast_index(b.shape(), out);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[ma[i]], bv[mb[i]]);
  }
  return v;
}

template <typename F>
std::vector<double> unary_values(const Tensor& x, F f) {
  std::vector<double> v(x.numel());
  const auto& xv = x.vec();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xv[i]);
  return v;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined input");
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t da = k + a.size() >= r ? a[k + a.size() - r] : 1;
    const std::size_t db = k + b.size() >= r ? b[k + b.size() - r] : 1;
    require(da == db || da == 1 || db == 1,
            "shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    out[k] = std::max(da, db);
    if (da == 0 || db == 0) out[k] = 0;
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  require_defined(x, "broadcast_to");
  if (x.shape() == shape) return x;
  const auto map = broadcast_index(x.shape(), shape);
  std::vector<double> v(map.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[map[i]];
  Shape in = x.shape();
  return finish("broadcast_to", shape, std::move(v), {&x},
                [in](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{sum_to(g, in)};
                });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  require_defined(x, "sum_to");
  if (x.shape() == shape) return x;
  const auto map = broadcast_index(shape, x.shape());
  std::vector<double> v(shape_numel(shape), 0.0);
  for (std::size_t i = 0; i < map.size(); ++i) v[map[i]] += x[i];
  Shape in = x.shape();
  return finish("sum_to", shape, std::move(v), {&x},
                [in](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{broadcast_to(g, in)};
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto v = binary_values(a, b, out, [](double x, double y) { return x + y; });
  return finish("add", out, std::move(v), {&a, &b},
                [as = a.shape(), bs = b.shape()](const Tensor& g, const std::vector<bool>& n) {
                  return std::vector<Tensor>{n[0] ? sum_to(g, as) : Tensor(),
                                             n[1] ? sum_to(g, bs) : Tensor()};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto v = binary_values(a, b, out, [](double x, double y) { return x - y; });
  return finish("sub", out, std::move(v), {&a, &b},
                [as = a.shape(), bs = b.shape()](const Tensor& g, const std::vector<bool>& n) {
                  return std::vector<Tensor>{n[0] ? sum_to(g, as) : Tensor(),
                                             n[1] ? sum_to(neg(g), bs) : Tensor()};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto v = binary_values(a, b, out, [](double x, double y) { return x * y; });
  return finish("mul", out, std::move(v), {&a, &b},
                [a, b](const Tensor& g, const std::vector<bool>& n) {
                  return std::vector<Tensor>{n[0] ? sum_to(mul(g, b), a.shape()) : Tensor(),
                                             n[1] ? sum_to(mul(g, a), b.shape()) : Tensor()};
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_defined(a, "div");
  require_defined(b, "div");
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto v = binary_values(a, b, out, [](double x, double y) { return x / y; });
  return finish("div", out, std::move(v), {&a, &b},
                [a, b](const Tensor& g, const std::vector<bool>& n) {
                  Tensor ga, gb;
                  if (n[0]) ga = sum_to(div(g, b), a.shape());
                  if (n[1]) gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor neg(const Tensor& x) {
  require_defined(x, "neg");
  return finish("neg", x.shape(), unary_values(x, [](double v) { return -v; }), {&x},
                [](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{neg(g)};
                });
}

Tensor scale(const Tensor& x, double c) {
  require_defined(x, "scale");
  return finish("scale", x.shape(), unary_values(x, [c](double v) { return v * c; }), {&x},
                [c](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scale(g, c)};
                });
}

Tensor add_scalar(const Tensor& x, double c) {
  require_defined(x, "add_scalar");
  return finish("add_scalar", x.shape(), unary_values(x, [c](double v) { return v + c; }), {&x},
                [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; });
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  return finish("exp", x.shape(), unary_values(x, [](double v) { return std::exp(v); }), {&x},
                [x](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, exp(x))};
                });
}

Tensor log(const Tensor& x) {
  require_defined(x, "log");
  return finish("log", x.shape(), unary_values(x, [](double v) { return std::log(v); }), {&x},
                [x](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{div(g, x)};
                });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  // the derivative mask is piecewise constant, so it enters the backward as a constant
  Tensor mask(x.shape(), unary_values(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  return finish("relu", x.shape(), unary_values(x, [](double v) { return v > 0.0 ? v : 0.0; }),
                {&x}, [mask](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, mask)};
                });
}

Tensor square(const Tensor& x) {
  require_defined(x, "square");
  return finish("square", x.shape(), unary_values(x, [](double v) { return v * v; }), {&x},
                [x](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, scale(x, 2.0))};
                });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require_defined(x, "reshape");
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  return finish("reshape", shape, x.vec(), {&x},
                [in = x.shape()](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{reshape(g, in)};
                });
}

Tensor flatten(const Tensor& x) {
  require(x.rank() >= 1, "flatten: rank-0 input");
  return reshape(x, {x.dim(0), x.dim(0) == 0 ? 0 : x.numel() / x.dim(0)});
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  return finish("sum", {}, {s}, {&x}, [in = x.shape()](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_to(g, in)};
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_rows(const Tensor& x) {
  require(x.rank() == 2, "sum_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> v(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v[r] += x[r * cols + c];
  return finish("sum_rows", {rows, 1}, std::move(v), {&x},
                [in = x.shape()](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{broadcast_to(g, in)};
                });
}

Tensor sum_of_squares(const Tensor& x) { return sum(square(x)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(m * n);
  kernels::matmul(a.values(), b.values(), v, m, k, n);
  return finish("matmul", {m, n}, std::move(v), {&a, &b},
                [a, b](const Tensor& g, const std::vector<bool>& need) {
                  return std::vector<Tensor>{need[0] ? matmul(g, transpose(b)) : Tensor(),
                                             need[1] ? matmul(transpose(a), g) : Tensor()};
                });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> v(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = x[i * c + j];
  return finish("transpose", {c, r}, std::move(v), {&x},
                [](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{transpose(g)};
                });
}

namespace {

kernels::ConvDims conv_dims(const Shape& x, const Shape& w, std::size_t pad) {
  require(x.size() == 4 && w.size() == 4 && x[1] == w[1],
          "conv2d: input " + shape_str(x) + " incompatible with weight " + shape_str(w));
  kernels::ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], pad};
  require(x[2] + 2 * pad >= w[2] && x[3] + 2 * pad >= w[3], "conv2d: kernel larger than input");
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t pad) {
  const auto d = conv_dims(x.shape(), w.shape(), pad);
  std::vector<double> v(d.batch * d.out_channels * d.out_h() * d.out_w());
  kernels::conv2d(x.values(), w.values(), v, d);
  return finish("conv2d", {d.batch, d.out_channels, d.out_h(), d.out_w()}, std::move(v), {&x, &w},
                [x, w, pad](const Tensor& g, const std::vector<bool>& n) {
                  return std::vector<Tensor>{
                      n[0] ? conv2d_input_grad(g, w, x.shape(), pad) : Tensor(),
                      n[1] ? conv2d_weight_grad(x, g, w.shape(), pad) : Tensor()};
                });
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, const Shape& input_shape,
                         std::size_t pad) {
  const auto d = conv_dims(input_shape, w.shape(), pad);
  require(gy.shape() == Shape({d.batch, d.out_channels, d.out_h(), d.out_w()}),
          "conv2d_input_grad: bad upstream shape " + shape_str(gy.shape()));
  std::vector<double> v(shape_numel(input_shape));
  kernels::conv2d_input_grad(gy.values(), w.values(), v, d);
  return finish("conv2d_input_grad", input_shape, std::move(v), {&gy, &w},
                [gy, w, pad](const Tensor& g, const std::vector<bool>& n) {
                  return std::vector<Tensor>{
                      n[0] ? conv2d(g, w, pad) : Tensor(),
                      n[1] ? conv2d_weight_grad(g, gy, w.shape(), pad) : Tensor()};
                });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, const Shape& weight_shape,
                          std::size_t pad) {
  const auto d = conv_dims(x.shape(), weight_shape, pad);
  require(gy.shape() == Shape({d.batch, d.out_channels, d.out_h(), d.out_w()}),
          "conv2d_weight_grad: bad upstream shape " + shape_str(gy.shape()));
  std::vector<double> v(shape_numel(weight_shape));
  kernels::conv2d_weight_grad(x.values(), gy.values(), v, d);
  return finish("conv2d_weight_grad", weight_shape, std::move(v), {&x, &gy},
                [x, gy, pad](const Tensor& g, const std::vector<bool>& n) {
                  return std::vector<Tensor>{
                      n[0] ? conv2d_input_grad(gy, g, x.shape(), pad) : Tensor(),
                      n[1] ? conv2d(x, g, pad) : Tensor()};
                });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  require(x.rank() == 4 && k >= 1, "avg_pool2d: expected [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  require(oh >= 1 && ow >= 1, "avg_pool2d: window larger than input");
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> v(planes * oh * ow, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) s += x[(p * h + i * k + a) * w + j * k + b];
        v[(p * oh + i) * ow + j] = s * inv;
      }
  return finish("avg_pool2d", {x.dim(0), x.dim(1), oh, ow}, std::move(v), {&x},
                [k, in = x.shape()](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{avg_pool2d_backward(g, k, in)};
                });
}

Tensor avg_pool2d_backward(const Tensor& g, std::size_t k, const Shape& input_shape) {
  require(input_shape.size() == 4, "avg_pool2d_backward: bad input shape");
  const std::size_t planes = input_shape[0] * input_shape[1];
  const std::size_t h = input_shape[2], w = input_shape[3], oh = h / k, ow = w / k;
  require(g.shape() == Shape({input_shape[0], input_shape[1], oh, ow}),
          "avg_pool2d_backward: bad upstream shape " + shape_str(g.shape()));
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> v(shape_numel(input_shape), 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const double gv = g[(p * oh + i) * ow + j] * inv;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) v[(p * h + i * k + a) * w + j * k + b] = gv;
      }
  return finish("avg_pool2d_backward", input_shape, std::move(v), {&g},
                [k](const Tensor& gg, const std::vector<bool>&) {
                  return std::vector<Tensor>{avg_pool2d(gg, k)};
                });
}

Tensor max_pool2d(const Tensor& x, std::size_t k) {
  require(x.rank() == 4 && k >= 1, "max_pool2d: expected [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  require(oh >= 1 && ow >= 1, "max_pool2d: window larger than input");
  std::vector<std::size_t> index(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (p * h + i * k) * w + j * k;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t at = (p * h + i * k + a) * w + j * k + b;
            if (x[at] > x[best]) best = at;
          }
        index[(p * oh + i) * ow + j] = best;
      }
  return gather(x, index, {x.dim(0), x.dim(1), oh, ow});
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& index, const Shape& out_shape) {
  require(index.size() == shape_numel(out_shape), "gather: index count does not match shape");
  std::vector<double> v(index.size());
  for (std::size_t j = 0; j < index.size(); ++j) {
    require(index[j] < x.numel(), "gather: index out of range");
    v[j] = x[index[j]];
  }
  return finish("gather", out_shape, std::move(v), {&x},
                [index, in = x.shape()](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scatter_add(g, index, in)};
                });
}

Tensor scatter_add(const Tensor& x, const std::vector<std::size_t>& index, const Shape& out_shape) {
  require(index.size() == x.numel(), "scatter_add: index count does not match input");
  std::vector<double> v(shape_numel(out_shape), 0.0);
  for (std::size_t j = 0; j < index.size(); ++j) {
    require(index[j] < v.size(), "scatter_add: index out of range");
    v[index[j]] += x[j];
  }
  return finish("scatter_add", out_shape, std::move(v), {&x},
                [index, in = x.shape()](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{gather(g, index, in)};
                });
}

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require(x.rank() >= 1, "take_rows: rank-0 input");
  const std::size_t n = x.dim(0);
  const std::size_t stride = n == 0 ? 0 : x.numel() / n;
  Shape out = x.shape();
  out[0] = rows.size();
  std::vector<double> v(rows.size() * stride);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < n, "take_rows: row out of range");
    std::copy_n(x.vec().begin() + static_cast<std::ptrdiff_t>(rows[r] * stride), stride,
                v.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return finish("take_rows", out, std::move(v), {&x},
                [rows, n](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{put_rows(g, rows, n)};
                });
}

Tensor put_rows(const Tensor& x, const std::vector<std::size_t>& rows, std::size_t n) {
  require(x.rank() >= 1 && x.dim(0) == rows.size(), "put_rows: row count mismatch");
  const std::size_t stride = rows.empty() ? 0 : x.numel() / rows.size();
  Shape out = x.shape();
  out[0] = n;
  std::vector<double> v(n * stride, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < n, "put_rows: row out of range");
    for (std::size_t e = 0; e < stride; ++e) v[rows[r] * stride + e] += x[r * stride + e];
  }
  return finish("put_rows", out, std::move(v), {&x},
                [rows](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{take_rows(g, rows)};
                });
}

Tensor log_softmax(const Tensor& z) {
  require(z.rank() == 2 && z.dim(1) >= 1, "log_softmax: expected [B,K], got " + shape_str(z.shape()));
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  std::vector<double> v(z.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.vec().data() + r * cols;
    const double m = *std::max_element(zr, zr + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(zr[c] - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = zr[c] - lse;
  }
  return finish("log_softmax", z.shape(), std::move(v), {&z},
                [z](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{sub(g, mul(softmax(z), sum_rows(g)))};
                });
}

Tensor softmax(const Tensor& z) { return exp(log_softmax(z)); }

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
  require(logits.shape() == targets.shape() && logits.rank() == 2,
          "softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs targets " +
              shape_str(targets.shape()));
  return scale(sum(mul(targets, log_softmax(logits))),
               -1.0 / static_cast<double>(logits.dim(0)));
}

}  // namespace edf
