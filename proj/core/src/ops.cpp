#include "flute/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "flute/error.hpp"

namespace flute::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Tape& tape_of(const Var& a, const char* op) {
  if (!a.valid()) throw TapeError(std::string(op) + ": unbound input");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b, const char* op) {
  Tape& t = tape_of(a, op);
  t.check_owned(b, op);
  return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

// Accumulates `g` into the adjoint of input k of node `self` if it needs one.
template <typename F>
void accumulate(Tape& t, std::size_t self, std::size_t k, F&& fn) {
  const auto in = t.input(self, k);
  if (!t.needs_grad(in)) return;
  fn(t.adjoint(in));
}

void im2col(const double* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w,
            double* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x + c * height * width;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = col + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ih) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w,
                double* dx) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* dxc = dx + c * height * width;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = col + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = dxc + static_cast<std::size_t>(ih) * width;
          const double* src = row + oh * out_w;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    for (std::size_t k = 0; k < 2; ++k) {
      accumulate(tp, self, k, [&](std::vector<double>& d) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      });
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
    accumulate(tp, self, 1, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return t.record(std::move(out), {a.id(), b.id()}, [](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    const auto& x0 = tp.value(tp.input(self, 0)).values();
    const auto& x1 = tp.value(tp.input(self, 1)).values();
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x1[i];
    });
    accumulate(tp, self, 1, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x0[i];
    });
  });
}

Var scale(const Var& a, double c) {
  Tape& t = tape_of(a, "scale");
  Tensor out(a.shape());
  const auto& x = a.value().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * x[i];
  return t.record(std::move(out), {a.id()}, [c](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
    });
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  Tape& t = tape_of(a, s, "mul_scalar");
  if (s.numel() != 1) throw ShapeError("mul_scalar: multiplier must be a scalar, got " + shape_string(s.shape()));
  const double k = s.value()[0];
  Tensor out(a.shape());
  const auto& x = a.value().values();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = k * x[i];
  return t.record(std::move(out), {a.id(), s.id()}, [](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    const auto& x0 = tp.value(tp.input(self, 0)).values();
    const double kk = tp.value(tp.input(self, 1))[0];
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += kk * g[i];
    });
    accumulate(tp, self, 1, [&](std::vector<double>& d) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x0[i];
      d[0] += acc;
    });
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a, "relu");
  Tensor out(a.shape());
  const auto& x = a.value().values();
  std::uint64_t word = 0;
  std::uint64_t hash = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const bool on = x[i] > 0.0;
    out[i] = on ? x[i] : 0.0;
    word = (word << 1) | (on ? 1U : 0U);
    if ((i & 63) == 63) {
      hash = (hash ^ word) * 0x100000001b3ULL;
      word = 0;
    }
  }
  t.mix_branch((hash ^ word) * 0x9e3779b97f4a7c15ULL);
  return t.record(std::move(out), {a.id()}, [](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    const auto& x0 = tp.value(tp.input(self, 0)).values();
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x0[i] > 0.0) d[i] += g[i];
      }
    });
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a, "sum");
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return t.record(Tensor::scalar(acc), {a.id()}, [](Tape& tp, std::size_t self) {
    const double g = tp.adjoint(self)[0];
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (auto& v : d) v += g;
    });
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Var reshape(const Var& a, Shape shape) {
  Tape& t = tape_of(a, "reshape");
  Tensor out = a.value().reshaped(std::move(shape));
  return t.record(std::move(out), {a.id()}, [](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a, "slice_rows");
  const auto& shape = a.shape();
  if (shape.empty() || begin >= end || end > shape[0]) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for shape " + shape_string(shape));
  }
  const std::size_t row = a.numel() / shape[0];
  Shape out_shape = shape;
  out_shape[0] = end - begin;
  const auto& x = a.value().values();
  std::vector<double> data(x.begin() + static_cast<std::ptrdiff_t>(begin * row),
                           x.begin() + static_cast<std::ptrdiff_t>(end * row));
  return t.record(Tensor(std::move(out_shape), std::move(data)), {a.id()},
                  [offset = begin * row](Tape& tp, std::size_t self) {
                    const auto& g = tp.adjoint(self);
                    accumulate(tp, self, 0, [&](std::vector<double>& d) {
                      for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
                    });
                  });
}

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  Tape& t = tape_of(input, kernel, "conv2d");
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  const std::size_t batch = xs[0], channels = xs[1], height = xs[2], width = xs[3];
  const std::size_t out_ch = ks[0], kh = ks[2], kw = ks[3];
  if (ks[1] != channels) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(channels));
  }
  if (height + 2 * padding < kh || width + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel " + shape_string(ks) + " larger than padded input " + shape_string(xs));
  }
  const std::size_t out_h = (height + 2 * padding - kh) / stride + 1;
  const std::size_t out_w = (width + 2 * padding - kw) / stride + 1;
  const std::size_t patch = channels * kh * kw;
  const std::size_t plane = out_h * out_w;

  Tensor out({batch, out_ch, out_h, out_w});
  std::vector<double> col(patch * plane);
  MapConstMat w(kernel.value().data().data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(patch));
  const double* x = input.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x + b * channels * height * width, channels, height, width, kh, kw, stride, padding, out_h, out_w,
           col.data());
    MapConstMat c(col.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
    MapMat y(out.data().data() + b * out_ch * plane, static_cast<Eigen::Index>(out_ch),
             static_cast<Eigen::Index>(plane));
    y.noalias() = w * c;
  }

  return t.record(std::move(out), {input.id(), kernel.id()},
                  [=](Tape& tp, std::size_t self) {
                    const auto& g = tp.adjoint(self);
                    const auto xin = tp.input(self, 0);
                    const auto kin = tp.input(self, 1);
                    const bool need_x = tp.needs_grad(xin);
                    const bool need_k = tp.needs_grad(kin);
                    const double* xv = tp.value(xin).data().data();
                    MapConstMat wk(tp.value(kin).data().data(), static_cast<Eigen::Index>(out_ch),
                                   static_cast<Eigen::Index>(patch));
                    std::vector<double> colb(patch * plane);
                    std::vector<double> dcol(need_x ? patch * plane : 0);
                    double* dx = need_x ? tp.adjoint(xin).data() : nullptr;
                    RowMat dw;
                    if (need_k) dw = RowMat::Zero(static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(patch));
                    for (std::size_t b = 0; b < batch; ++b) {
                      MapConstMat gy(g.data() + b * out_ch * plane, static_cast<Eigen::Index>(out_ch),
                                     static_cast<Eigen::Index>(plane));
                      if (need_k) {
                        im2col(xv + b * channels * height * width, channels, height, width, kh, kw, stride,
                               padding, out_h, out_w, colb.data());
                        MapConstMat c(colb.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
                        dw.noalias() += gy * c.transpose();
                      }
                      if (need_x) {
                        MapMat dc(dcol.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
                        dc.noalias() = wk.transpose() * gy;
                        col2im_add(dcol.data(), channels, height, width, kh, kw, stride, padding, out_h, out_w,
                                   dx + b * channels * height * width);
                      }
                    }
                    if (need_k) {
                      auto& dk = tp.adjoint(kin);
                      for (std::size_t i = 0; i < dk.size(); ++i) dk[i] += dw.data()[i];
                    }
                  });
}

Var max_pool2x2(const Var& input) {
  Tape& t = tape_of(input, "max_pool2x2");
  require_rank(input, 4, "max_pool2x2");
  const auto& xs = input.shape();
  const std::size_t batch = xs[0], channels = xs[1], height = xs[2], width = xs[3];
  if (height < 2 || width < 2) throw ShapeError("max_pool2x2: spatial size too small " + shape_string(xs));
  const std::size_t out_h = height / 2, out_w = width / 2;
  Tensor out({batch, channels, out_h, out_w});
  std::vector<std::size_t> argmax(out.numel());
  const auto& x = input.value().values();
  std::uint64_t hash = 0;
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const std::size_t base = bc * height * width;
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j, ++o) {
        std::size_t best = base + (2 * i) * width + 2 * j;
        unsigned slot = 0;
        const std::size_t cand[3] = {best + 1, best + width, best + width + 1};
        for (unsigned k = 0; k < 3; ++k) {
          if (x[cand[k]] > x[best]) {
            best = cand[k];
            slot = k + 1;
          }
        }
        out[o] = x[best];
        argmax[o] = best;
        hash = (hash ^ slot) * 0x100000001b3ULL;
      }
    }
  }
  t.mix_branch(hash);
  return t.record(std::move(out), {input.id()}, [argmax = std::move(argmax)](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[argmax[i]] += g[i];
    });
  });
}

Var global_avg_pool(const Var& input) {
  Tape& t = tape_of(input, "global_avg_pool");
  require_rank(input, 4, "global_avg_pool");
  const auto& xs = input.shape();
  const std::size_t rows = xs[0] * xs[1];
  const std::size_t plane = xs[2] * xs[3];
  Tensor out({xs[0], xs[1]});
  const auto& x = input.value().values();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < plane; ++k) acc += x[r * plane + k];
    out[r] = acc / static_cast<double>(plane);
  }
  return t.record(std::move(out), {input.id()}, [plane](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    const double inv = 1.0 / static_cast<double>(plane);
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t r = 0; r < g.size(); ++r) {
        for (std::size_t k = 0; k < plane; ++k) d[r * plane + k] += g[r] * inv;
      }
    });
  });
}

Var mean_over_rows(const Var& input) {
  Tape& t = tape_of(input, "mean_over_rows");
  require_rank(input, 2, "mean_over_rows");
  const std::size_t rows = input.shape()[0], cols = input.shape()[1];
  const auto& x = input.value().values();
  Tensor out({cols});
  std::vector<double> column(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = x[r * cols + c];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out[c] = acc / static_cast<double>(rows);
  }
  return t.record(std::move(out), {input.id()}, [rows, cols](Tape& tp, std::size_t self) {
    const auto& g = tp.adjoint(self);
    const double inv = 1.0 / static_cast<double>(rows);
    accumulate(tp, self, 0, [&](std::vector<double>& d) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[c] * inv;
      }
    });
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "matmul_nt");
  require_rank(a, 2, "matmul_nt lhs");
  require_rank(b, 2, "matmul_nt rhs");
  const auto n = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(b.shape()[0]);
  const auto d = static_cast<Eigen::Index>(a.shape()[1]);
  if (a.shape()[1] != b.shape()[1]) {
    throw ShapeError("matmul_nt: inner dimension mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out({a.shape()[0], b.shape()[0]});
  MapMat(out.data().data(), n, k).noalias() =
      MapConstMat(a.value().data().data(), n, d) * MapConstMat(b.value().data().data(), k, d).transpose();
  return t.record(std::move(out), {a.id(), b.id()}, [n, k, d](Tape& tp, std::size_t self) {
    MapConstMat g(tp.adjoint(self).data(), n, k);
    MapConstMat av(tp.value(tp.input(self, 0)).data().data(), n, d);
    MapConstMat bv(tp.value(tp.input(self, 1)).data().data(), k, d);
    accumulate(tp, self, 0, [&](std::vector<double>& da) { MapMat(da.data(), n, d).noalias() += g * bv; });
    accumulate(tp, self, 1,
               [&](std::vector<double>& db) { MapMat(db.data(), k, d).noalias() += g.transpose() * av; });
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& t = tape_of(x, weight, "linear");
  t.check_owned(bias, "linear");
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  if (x.shape()[1] != weight.shape()[1] || bias.shape()[0] != weight.shape()[0]) {
    throw ShapeError("linear: incompatible shapes " + shape_string(x.shape()) + ", " + shape_string(weight.shape()) +
                     ", " + shape_string(bias.shape()));
  }
  const auto n = static_cast<Eigen::Index>(x.shape()[0]);
  const auto m = static_cast<Eigen::Index>(weight.shape()[0]);
  const auto e = static_cast<Eigen::Index>(x.shape()[1]);
  Tensor out({x.shape()[0], weight.shape()[0]});
  MapMat y(out.data().data(), n, m);
  y.noalias() = MapConstMat(x.value().data().data(), n, e) * MapConstMat(weight.value().data().data(), m, e).transpose();
  const auto& bv = bias.value().values();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) y(i, j) += bv[static_cast<std::size_t>(j)];
  }
  return t.record(std::move(out), {x.id(), weight.id(), bias.id()}, [n, m, e](Tape& tp, std::size_t self) {
    MapConstMat g(tp.adjoint(self).data(), n, m);
    MapConstMat xv(tp.value(tp.input(self, 0)).data().data(), n, e);
    MapConstMat wv(tp.value(tp.input(self, 1)).data().data(), m, e);
    accumulate(tp, self, 0, [&](std::vector<double>& dx) { MapMat(dx.data(), n, e).noalias() += g * wv; });
    accumulate(tp, self, 1,
               [&](std::vector<double>& dw) { MapMat(dw.data(), m, e).noalias() += g.transpose() * xv; });
    accumulate(tp, self, 2, [&](std::vector<double>& db) {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) db[static_cast<std::size_t>(j)] += g(i, j);
      }
    });
  });
}

Var l2_normalize(const Var& v, std::size_t axis, double eps) {
  Tape& t = tape_of(v, "l2_normalize");
  const auto& s = v.shape();
  if (s.size() > 2 || axis >= s.size()) {
    throw ShapeError("l2_normalize: axis " + std::to_string(axis) + " invalid for shape " + shape_string(s));
  }
  if (!(eps > 0.0)) throw ShapeError("l2_normalize: eps must be positive");
  // View as [outer, len, inner] with the normalized axis in the middle.
  const std::size_t len = s[axis];
  const std::size_t outer = axis == 0 ? 1 : s[0];
  const std::size_t inner = (s.size() == 2 && axis == 0) ? s[1] : 1;
  const auto& x = v.value().values();
  Tensor out(s);
  std::vector<double> norms(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double ss = eps * eps;
      for (std::size_t l = 0; l < len; ++l) {
        const double xv = x[(o * len + l) * inner + i];
        ss += xv * xv;
      }
      const double r = std::sqrt(ss);
      norms[o * inner + i] = r;
      for (std::size_t l = 0; l < len; ++l) out[(o * len + l) * inner + i] = x[(o * len + l) * inner + i] / r;
    }
  }
  return t.record(std::move(out), {v.id()},
                  [outer, len, inner, norms = std::move(norms)](Tape& tp, std::size_t self) {
                    const auto& g = tp.adjoint(self);
                    const auto& y = tp.value(self).values();
                    accumulate(tp, self, 0, [&](std::vector<double>& d) {
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < inner; ++i) {
                          double dot = 0.0;
                          for (std::size_t l = 0; l < len; ++l) {
                            const auto idx = (o * len + l) * inner + i;
                            dot += g[idx] * y[idx];
                          }
                          const double r = norms[o * inner + i];
                          for (std::size_t l = 0; l < len; ++l) {
                            const auto idx = (o * len + l) * inner + i;
                            d[idx] += (g[idx] - y[idx] * dot) / r;
                          }
                        }
                      }
                    });
                  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& one_hot) {
  Tape& t = tape_of(logits, "softmax_cross_entropy");
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (classes < 2) throw ShapeError("softmax_cross_entropy: need at least 2 classes");
  if (one_hot.shape() != logits.shape()) {
    throw ShapeError("softmax_cross_entropy: one-hot shape " + shape_string(one_hot.shape()) + " vs logits " +
                     shape_string(logits.shape()));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double y = one_hot[b * classes + c];
      if (y == 1.0) {
        ++ones;
      } else if (y != 0.0) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw ShapeError("softmax_cross_entropy: row " + std::to_string(b) + " is not one-hot");
  }
  const auto& z = logits.value().values();
  std::vector<double> probs(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * classes;
    const double m = *std::max_element(row, row + classes);
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) se += std::exp(row[c] - m);
    const double lse = m + std::log(se);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - lse);
      total -= one_hot[b * classes + c] * (row[c] - lse);
    }
  }
  const double loss = total / static_cast<double>(batch);
  return t.record(Tensor::scalar(loss), {logits.id()},
                  [probs = std::move(probs), target = one_hot.values(), batch](Tape& tp, std::size_t self) {
                    const double g = tp.adjoint(self)[0] / static_cast<double>(batch);
                    accumulate(tp, self, 0, [&](std::vector<double>& d) {
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (probs[i] - target[i]);
                    });
                  });
}

Var class_means(const Var& features, std::span<const std::size_t> labels, std::size_t classes) {
  Tape& t = tape_of(features, "class_means");
  require_rank(features, 2, "class_means");
  const std::size_t rows = features.shape()[0], dim = features.shape()[1];
  if (labels.size() != rows) throw ShapeError("class_means: label count does not match feature rows");
  std::vector<std::size_t> counts(classes, 0);
  for (auto l : labels) {
    if (l >= classes) throw ShapeError("class_means: label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw DataError("class_means: class " + std::to_string(c) + " has no examples");
  }
  const auto& f = features.value().values();
  Tensor out({classes, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t d = 0; d < dim; ++d) out[labels[r] * dim + d] += f[r * dim + d];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t d = 0; d < dim; ++d) out[c * dim + d] /= static_cast<double>(counts[c]);
  }
  return t.record(std::move(out), {features.id()},
                  [lab = std::vector<std::size_t>(labels.begin(), labels.end()), counts, dim](Tape& tp,
                                                                                              std::size_t self) {
                    const auto& g = tp.adjoint(self);
                    accumulate(tp, self, 0, [&](std::vector<double>& d) {
                      for (std::size_t r = 0; r < lab.size(); ++r) {
                        const double inv = 1.0 / static_cast<double>(counts[lab[r]]);
                        for (std::size_t k = 0; k < dim; ++k) d[r * dim + k] += g[lab[r] * dim + k] * inv;
                      }
                    });
                  });
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ShapeError("one_hot: label out of range");
    out[i * classes + labels[i]] = 1.0;
  }
  return out;
}

}  // namespace flute::ops
