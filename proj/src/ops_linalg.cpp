#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {

using autograd::GradList;
using autograd::NeedsGrad;
using autograd::SavedTensor;
using detail::View;

namespace {

void check_float_pair(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.dtype() != b.dtype()) fail(ErrorCode::DTypeMismatch, std::string(op) + ": dtype mismatch");
  if (!is_floating(a.dtype())) {
    fail(ErrorCode::UnsupportedDType, std::string(op) + " requires a floating dtype");
  }
}

SavedTensor save_if(bool needed, const Tensor& t) { return needed ? SavedTensor(t) : SavedTensor(); }

struct ConvGeometry {
  std::int64_t batch, cin, h, w, cout, kh, kw, oh, ow, stride, pad;
};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    fail(ErrorCode::ShapeMismatch, "matmul needs rank-2 inputs, got " + shape_str(a.shape()) +
                                       " and " + shape_str(b.shape()));
  }
  if (a.shape()[1] != b.shape()[0]) {
    fail(ErrorCode::ShapeMismatch,
         "matmul inner dimensions differ: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  }
  check_float_pair(a, b, "matmul");
  const std::int64_t m = a.shape()[0];
  const std::int64_t k = a.shape()[1];
  const std::int64_t n = b.shape()[1];
  Tensor out = empty({m, n}, a.dtype());
  const View av = detail::view_of(a);
  const View bv = detail::view_of(b);
  const View ov = detail::view_of(out);
  const DType dtype = a.dtype();
  detail::launch("matmul", {a, b, out}, [av, bv, ov, m, k, n, dtype] {
    visit_floating(dtype, "matmul", [&]<typename T>() {
      const T* pa = av.ptr<T>();
      const T* pb = bv.ptr<T>();
      T* pc = ov.ptr<T>();
      const auto [a0, a1] = std::pair{av.strides[0], av.strides[1]};
      const auto [b0, b1] = std::pair{bv.strides[0], bv.strides[1]};
      for (std::int64_t i = 0; i < m; ++i) {
        T* row = pc + i * n;
        for (std::int64_t j = 0; j < n; ++j) row[j] = T{0};
        for (std::int64_t p = 0; p < k; ++p) {
          const T aip = pa[i * a0 + p * a1];
          const T* brow = pb + p * b0;
          for (std::int64_t j = 0; j < n; ++j) row[j] += aip * brow[j * b1];
        }
      }
    });
  });
  autograd::record("matmul", {a, b}, {out},
                   {save_if(b.requires_grad(), a), save_if(a.requires_grad(), b)},
                   [](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad& needs) {
                     return GradList{needs[0] ? matmul(g[0], transpose(s[1], 0, 1)) : Tensor(),
                                     needs[1] ? matmul(transpose(s[0], 0, 1), g[0]) : Tensor()};
                   });
  return out;
}

namespace {

// Index helpers over arbitrary 4-d strides.
inline std::int64_t at4(const Shape& s, std::int64_t a, std::int64_t b, std::int64_t c,
                        std::int64_t d) {
  return a * s[0] + b * s[1] + c * s[2] + d * s[3];
}

Tensor conv2d_input_grad(const Tensor& g, const Tensor& weight, const ConvGeometry& geo) {
  Tensor gi = zeros({geo.batch, geo.cin, geo.h, geo.w}, g.dtype());
  const View gv = detail::view_of(g);
  const View wv = detail::view_of(weight);
  const View iv = detail::view_of(gi);
  const DType dtype = g.dtype();
  detail::launch("conv2d_input_grad", {g, weight, gi}, [gv, wv, iv, geo, dtype] {
    visit_floating(dtype, "conv2d", [&]<typename T>() {
      const T* pg = gv.ptr<T>();
      const T* pw = wv.ptr<T>();
      T* pi = iv.ptr<T>();
      for (std::int64_t b = 0; b < geo.batch; ++b)
        for (std::int64_t co = 0; co < geo.cout; ++co)
          for (std::int64_t oh = 0; oh < geo.oh; ++oh)
            for (std::int64_t ow = 0; ow < geo.ow; ++ow) {
              const T gval = pg[at4(gv.strides, b, co, oh, ow)];
              for (std::int64_t ci = 0; ci < geo.cin; ++ci)
                for (std::int64_t kh = 0; kh < geo.kh; ++kh) {
                  const std::int64_t ih = oh * geo.stride - geo.pad + kh;
                  if (ih < 0 || ih >= geo.h) continue;
                  for (std::int64_t kw = 0; kw < geo.kw; ++kw) {
                    const std::int64_t iw = ow * geo.stride - geo.pad + kw;
                    if (iw < 0 || iw >= geo.w) continue;
                    pi[at4(iv.strides, b, ci, ih, iw)] += gval * pw[at4(wv.strides, co, ci, kh, kw)];
                  }
                }
            }
    });
  });
  return gi;
}

Tensor conv2d_weight_grad(const Tensor& g, const Tensor& input, const ConvGeometry& geo) {
  Tensor gw = zeros({geo.cout, geo.cin, geo.kh, geo.kw}, g.dtype());
  const View gv = detail::view_of(g);
  const View xv = detail::view_of(input);
  const View wv = detail::view_of(gw);
  const DType dtype = g.dtype();
  detail::launch("conv2d_weight_grad", {g, input, gw}, [gv, xv, wv, geo, dtype] {
    visit_floating(dtype, "conv2d", [&]<typename T>() {
      const T* pg = gv.ptr<T>();
      const T* px = xv.ptr<T>();
      T* pw = wv.ptr<T>();
      for (std::int64_t co = 0; co < geo.cout; ++co)
        for (std::int64_t ci = 0; ci < geo.cin; ++ci)
          for (std::int64_t kh = 0; kh < geo.kh; ++kh)
            for (std::int64_t kw = 0; kw < geo.kw; ++kw) {
              T acc{0};
              for (std::int64_t b = 0; b < geo.batch; ++b)
                for (std::int64_t oh = 0; oh < geo.oh; ++oh) {
                  const std::int64_t ih = oh * geo.stride - geo.pad + kh;
                  if (ih < 0 || ih >= geo.h) continue;
                  for (std::int64_t ow = 0; ow < geo.ow; ++ow) {
                    const std::int64_t iw = ow * geo.stride - geo.pad + kw;
                    if (iw < 0 || iw >= geo.w) continue;
                    acc += pg[at4(gv.strides, b, co, oh, ow)] * px[at4(xv.strides, b, ci, ih, iw)];
                  }
                }
              pw[at4(wv.strides, co, ci, kh, kw)] = acc;
            }
    });
  });
  return gw;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions options) {
  if (input.rank() != 4 || weight.rank() != 4) {
    fail(ErrorCode::ShapeMismatch, "conv2d needs input [B,Cin,H,W] and weight [Cout,Cin,Kh,Kw], got " +
                                       shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  }
  check_float_pair(input, weight, "conv2d");
  MT_CHECK(options.stride >= 1 && options.padding >= 0, ErrorCode::InvalidArgument,
           "conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry geo{};
  geo.batch = input.shape()[0];
  geo.cin = input.shape()[1];
  geo.h = input.shape()[2];
  geo.w = input.shape()[3];
  geo.cout = weight.shape()[0];
  geo.kh = weight.shape()[2];
  geo.kw = weight.shape()[3];
  geo.stride = options.stride;
  geo.pad = options.padding;
  if (weight.shape()[1] != geo.cin) {
    fail(ErrorCode::ShapeMismatch, "conv2d: input has " + std::to_string(geo.cin) +
                                       " channels, weight expects " + std::to_string(weight.shape()[1]));
  }
  if (geo.h + 2 * geo.pad < geo.kh || geo.w + 2 * geo.pad < geo.kw) {
    fail(ErrorCode::ShapeMismatch, "conv2d: kernel larger than padded input");
  }
  if (bias.defined()) {
    check_float_pair(input, bias, "conv2d");
    MT_CHECK(bias.shape() == Shape{geo.cout}, ErrorCode::ShapeMismatch,
             "conv2d: bias must have shape [" + std::to_string(geo.cout) + "]");
  }
  geo.oh = (geo.h + 2 * geo.pad - geo.kh) / geo.stride + 1;
  geo.ow = (geo.w + 2 * geo.pad - geo.kw) / geo.stride + 1;

  Tensor out = empty({geo.batch, geo.cout, geo.oh, geo.ow}, input.dtype());
  const View xv = detail::view_of(input);
  const View wv = detail::view_of(weight);
  const View bv = bias.defined() ? detail::view_of(bias) : View{};
  const View ov = detail::view_of(out);
  const bool has_bias = bias.defined();
  const DType dtype = input.dtype();
  detail::launch("conv2d", {input, weight, bias, out}, [xv, wv, bv, ov, geo, has_bias, dtype] {
    visit_floating(dtype, "conv2d", [&]<typename T>() {
      const T* px = xv.ptr<T>();
      const T* pw = wv.ptr<T>();
      const T* pb = has_bias ? bv.ptr<T>() : nullptr;
      T* po = ov.ptr<T>();
      for (std::int64_t b = 0; b < geo.batch; ++b)
        for (std::int64_t co = 0; co < geo.cout; ++co) {
          const T b0 = pb ? pb[co * bv.strides[0]] : T{0};
          for (std::int64_t oh = 0; oh < geo.oh; ++oh)
            for (std::int64_t ow = 0; ow < geo.ow; ++ow) {
              T acc = b0;
              for (std::int64_t ci = 0; ci < geo.cin; ++ci)
                for (std::int64_t kh = 0; kh < geo.kh; ++kh) {
                  const std::int64_t ih = oh * geo.stride - geo.pad + kh;
                  if (ih < 0 || ih >= geo.h) continue;
                  for (std::int64_t kw = 0; kw < geo.kw; ++kw) {
                    const std::int64_t iw = ow * geo.stride - geo.pad + kw;
                    if (iw < 0 || iw >= geo.w) continue;
                    acc += px[at4(xv.strides, b, ci, ih, iw)] * pw[at4(wv.strides, co, ci, kh, kw)];
                  }
                }
              po[at4(ov.strides, b, co, oh, ow)] = acc;
            }
        }
    });
  });

  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  autograd::record(
      "conv2d", inputs, {out},
      {save_if(weight.requires_grad(), input), save_if(input.requires_grad(), weight)},
      [geo, has_bias](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad& needs) {
        GradList grads(has_bias ? 3 : 2);
        if (needs[0]) grads[0] = conv2d_input_grad(g[0], s[1], geo);
        if (needs[1]) grads[1] = conv2d_weight_grad(g[0], s[0], geo);
        if (has_bias && needs[2]) grads[2] = sum(sum(sum(g[0], 3), 2), 0);
        return grads;
      });
  return out;
}

}  // namespace microtorch
