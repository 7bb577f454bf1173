#include "dots/ops.hpp"

#include <cmath>

namespace dots {

namespace {

using detail::make_node;
using detail::require_finite;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& t, int rank, const char* op, const char* what) {
  check(static_cast<int>(t.shape().size()) == rank,
        std::string(op) + ": " + what + " must be rank-" + std::to_string(rank) +
            ", got " + shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  require_finite(a, "add");
  require_finite(b, "add");
  return make_node(
      "add", a.shape(), {a.node(), b.node()},
      [](TensorNode& n) { n.value = n.parents[0]->value + n.parents[1]->value; },
      [](TensorNode& n) {
        if (n.parents[0]->needs_grad) n.parents[0]->grad += n.grad;
        if (n.parents[1]->needs_grad) n.parents[1]->grad += n.grad;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  require_finite(a, "mul");
  require_finite(b, "mul");
  return make_node(
      "mul", a.shape(), {a.node(), b.node()},
      [](TensorNode& n) { n.value = n.parents[0]->value * n.parents[1]->value; },
      [](TensorNode& n) {
        if (n.parents[0]->needs_grad) n.parents[0]->grad += n.grad * n.parents[1]->value;
        if (n.parents[1]->needs_grad) n.parents[1]->grad += n.grad * n.parents[0]->value;
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  check(a.shape()[1] == b.shape()[0],
        "matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
  require_finite(a, "matmul");
  require_finite(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  return make_node(
      "matmul", {m, p}, {a.node(), b.node()},
      [m, k, p](TensorNode& n) {
        n.value.resize(static_cast<Eigen::Index>(m) * p);
        CMapRM A(n.parents[0]->value.data(), m, k);
        CMapRM B(n.parents[1]->value.data(), k, p);
        MapRM O(n.value.data(), m, p);
        O.noalias() = A * B;
      },
      [m, k, p](TensorNode& n) {
        CMapRM G(n.grad.data(), m, p);
        if (n.parents[0]->needs_grad) {
          CMapRM B(n.parents[1]->value.data(), k, p);
          MapRM dA(n.parents[0]->grad.data(), m, k);
          dA.noalias() += G * B.transpose();
        }
        if (n.parents[1]->needs_grad) {
          CMapRM A(n.parents[0]->value.data(), m, k);
          MapRM dB(n.parents[1]->grad.data(), k, p);
          dB.noalias() += A.transpose() * G;
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  check(x.shape()[1] == w.shape()[0] && w.shape()[1] == bias.shape()[0],
        "linear: incompatible shapes " + shape_str(x.shape()) + ", " +
            shape_str(w.shape()) + ", " + shape_str(bias.shape()));
  require_finite(x, "linear");
  require_finite(w, "linear");
  require_finite(bias, "linear");
  const int n_rows = x.shape()[0], f = x.shape()[1], c = w.shape()[1];
  return make_node(
      "linear", {n_rows, c}, {x.node(), w.node(), bias.node()},
      [n_rows, f, c](TensorNode& n) {
        n.value.resize(static_cast<Eigen::Index>(n_rows) * c);
        CMapRM X(n.parents[0]->value.data(), n_rows, f);
        CMapRM W(n.parents[1]->value.data(), f, c);
        MapRM O(n.value.data(), n_rows, c);
        O.noalias() = X * W;
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(n.parents[2]->value.data(), c);
      },
      [n_rows, f, c](TensorNode& n) {
        CMapRM G(n.grad.data(), n_rows, c);
        if (n.parents[0]->needs_grad) {
          CMapRM W(n.parents[1]->value.data(), f, c);
          MapRM dX(n.parents[0]->grad.data(), n_rows, f);
          dX.noalias() += G * W.transpose();
        }
        if (n.parents[1]->needs_grad) {
          CMapRM X(n.parents[0]->value.data(), n_rows, f);
          MapRM dW(n.parents[1]->grad.data(), f, c);
          dW.noalias() += X.transpose() * G;
        }
        if (n.parents[2]->needs_grad) {
          Eigen::Map<Eigen::RowVectorXd> db(n.parents[2]->grad.data(), c);
          db += G.colwise().sum();
        }
      });
}

Tensor relu(const Tensor& x) {
  require_finite(x, "relu");
  return make_node(
      "relu", x.shape(), {x.node()},
      [](TensorNode& n) { n.value = n.parents[0]->value.max(0.0); },
      [](TensorNode& n) {
        if (!n.parents[0]->needs_grad) return;
        n.parents[0]->grad += n.grad * (n.parents[0]->value > 0.0).cast<double>();
      });
}

Tensor sigmoid(const Tensor& x) {
  require_finite(x, "sigmoid");
  return make_node(
      "sigmoid", x.shape(), {x.node()},
      [](TensorNode& n) {
        n.value = 1.0 / (1.0 + (-n.parents[0]->value).exp());
      },
      [](TensorNode& n) {
        if (!n.parents[0]->needs_grad) return;
        n.parents[0]->grad += n.grad * n.value * (1.0 - n.value);
      });
}

namespace {

// Fills `col` (Ci*kh*kw rows, H*W cols) with the padded receptive fields of
// sample `sample` so conv reduces to one matrix product per sample.
void im2col(const Eigen::ArrayXd& x, int sample, int ci, int h, int w, int kh, int kw,
            int dilation, Eigen::MatrixXd& col) {
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  const std::int64_t base = static_cast<std::int64_t>(sample) * ci * h * w;
  for (int c = 0; c < ci; ++c) {
    const std::int64_t cbase = base + static_cast<std::int64_t>(c) * h * w;
    for (int r = 0; r < kh; ++r) {
      for (int s = 0; s < kw; ++s) {
        const int row = (c * kh + r) * kw + s;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dilation * r - pad_h;
          double* dst = col.data() + static_cast<std::int64_t>(row) +
                        static_cast<std::int64_t>(y) * w * col.rows();
          if (sy < 0 || sy >= h) {
            for (int xx = 0; xx < w; ++xx) dst[static_cast<std::int64_t>(xx) * col.rows()] = 0.0;
            continue;
          }
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + dilation * s - pad_w;
            dst[static_cast<std::int64_t>(xx) * col.rows()] =
                (sx < 0 || sx >= w) ? 0.0 : x[cbase + static_cast<std::int64_t>(sy) * w + sx];
          }
        }
      }
    }
  }
}

void col2im_accumulate(const Eigen::MatrixXd& dcol, int sample, int ci, int h, int w,
                       int kh, int kw, int dilation, Eigen::ArrayXd& dx) {
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  const std::int64_t base = static_cast<std::int64_t>(sample) * ci * h * w;
  for (int c = 0; c < ci; ++c) {
    const std::int64_t cbase = base + static_cast<std::int64_t>(c) * h * w;
    for (int r = 0; r < kh; ++r) {
      for (int s = 0; s < kw; ++s) {
        const int row = (c * kh + r) * kw + s;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dilation * r - pad_h;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + dilation * s - pad_w;
            if (sx < 0 || sx >= w) continue;
            dx[cbase + static_cast<std::int64_t>(sy) * w + sx] +=
                dcol(row, static_cast<std::int64_t>(y) * w + xx);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int dilation) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "kernel");
  check(dilation >= 1, "conv2d: dilation must be >= 1");
  const int batch = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  check(w.shape()[1] == ci, "conv2d: kernel expects " + std::to_string(w.shape()[1]) +
                                " input channels, input has " + std::to_string(ci));
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel sides must be odd, got " +
                                        shape_str(w.shape()));
  require_finite(x, "conv2d");
  require_finite(w, "conv2d");
  const int ckk = ci * kh * kw, hw = h * wd;
  return make_node(
      "conv2d", {batch, co, h, wd}, {x.node(), w.node()},
      [=](TensorNode& n) {
        n.value.resize(static_cast<Eigen::Index>(batch) * co * hw);
        CMapRM W(n.parents[1]->value.data(), co, ckk);
        Eigen::MatrixXd col(ckk, hw);
        for (int s = 0; s < batch; ++s) {
          im2col(n.parents[0]->value, s, ci, h, wd, kh, kw, dilation, col);
          MapRM O(n.value.data() + static_cast<std::int64_t>(s) * co * hw, co, hw);
          O.noalias() = CMapRM(n.parents[1]->value.data(), co, ckk) * col;
          (void)W;
        }
      },
      [=](TensorNode& n) {
        const bool need_dx = n.parents[0]->needs_grad;
        const bool need_dw = n.parents[1]->needs_grad;
        if (!need_dx && !need_dw) return;
        Eigen::MatrixXd col(ckk, hw);
        Eigen::MatrixXd dcol(ckk, hw);
        CMapRM W(n.parents[1]->value.data(), co, ckk);
        for (int s = 0; s < batch; ++s) {
          CMapRM G(n.grad.data() + static_cast<std::int64_t>(s) * co * hw, co, hw);
          if (need_dw) {
            im2col(n.parents[0]->value, s, ci, h, wd, kh, kw, dilation, col);
            MapRM dW(n.parents[1]->grad.data(), co, ckk);
            dW.noalias() += G * col.transpose();
          }
          if (need_dx) {
            dcol.noalias() = W.transpose() * G;
            col2im_accumulate(dcol, s, ci, h, wd, kh, kw, dilation, n.parents[0]->grad);
          }
        }
      });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int dilation) {
  require_rank(x, 4, "depthwise_conv2d", "input");
  require_rank(w, 3, "depthwise_conv2d", "kernel");
  check(dilation >= 1, "depthwise_conv2d: dilation must be >= 1");
  const int batch = x.shape()[0], ch = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int kh = w.shape()[1], kw = w.shape()[2];
  check(w.shape()[0] == ch, "depthwise_conv2d: kernel has " + std::to_string(w.shape()[0]) +
                                " channels, input has " + std::to_string(ch));
  check(kh % 2 == 1 && kw % 2 == 1, "depthwise_conv2d: kernel sides must be odd");
  require_finite(x, "depthwise_conv2d");
  require_finite(w, "depthwise_conv2d");
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  return make_node(
      "depthwise_conv2d", x.shape(), {x.node(), w.node()},
      [=](TensorNode& n) {
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        const Eigen::ArrayXd& wv = n.parents[1]->value;
        n.value.resize(xv.size());
        for (int s = 0; s < batch; ++s) {
          for (int c = 0; c < ch; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * h * wd;
            const std::int64_t kbase = static_cast<std::int64_t>(c) * kh * kw;
            for (int y = 0; y < h; ++y) {
              for (int xx = 0; xx < wd; ++xx) {
                double acc = 0.0;
                for (int r = 0; r < kh; ++r) {
                  const int sy = y + dilation * r - pad_h;
                  if (sy < 0 || sy >= h) continue;
                  for (int t = 0; t < kw; ++t) {
                    const int sx = xx + dilation * t - pad_w;
                    if (sx < 0 || sx >= wd) continue;
                    acc += wv[kbase + r * kw + t] * xv[plane + static_cast<std::int64_t>(sy) * wd + sx];
                  }
                }
                n.value[plane + static_cast<std::int64_t>(y) * wd + xx] = acc;
              }
            }
          }
        }
      },
      [=](TensorNode& n) {
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        const Eigen::ArrayXd& wv = n.parents[1]->value;
        const bool need_dx = n.parents[0]->needs_grad;
        const bool need_dw = n.parents[1]->needs_grad;
        for (int s = 0; s < batch; ++s) {
          for (int c = 0; c < ch; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * h * wd;
            const std::int64_t kbase = static_cast<std::int64_t>(c) * kh * kw;
            for (int y = 0; y < h; ++y) {
              for (int xx = 0; xx < wd; ++xx) {
                const double g = n.grad[plane + static_cast<std::int64_t>(y) * wd + xx];
                if (g == 0.0) continue;
                for (int r = 0; r < kh; ++r) {
                  const int sy = y + dilation * r - pad_h;
                  if (sy < 0 || sy >= h) continue;
                  for (int t = 0; t < kw; ++t) {
                    const int sx = xx + dilation * t - pad_w;
                    if (sx < 0 || sx >= wd) continue;
                    const std::int64_t xi = plane + static_cast<std::int64_t>(sy) * wd + sx;
                    if (need_dw) n.parents[1]->grad[kbase + r * kw + t] += g * xv[xi];
                    if (need_dx) n.parents[0]->grad[xi] += g * wv[kbase + r * kw + t];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor pointwise_conv2d(const Tensor& x, const Tensor& w) {
  require_rank(x, 4, "pointwise_conv2d", "input");
  require_rank(w, 2, "pointwise_conv2d", "kernel");
  const int batch = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int co = w.shape()[0];
  check(w.shape()[1] == ci, "pointwise_conv2d: kernel expects " +
                                std::to_string(w.shape()[1]) + " input channels, input has " +
                                std::to_string(ci));
  require_finite(x, "pointwise_conv2d");
  require_finite(w, "pointwise_conv2d");
  const int hw = h * wd;
  return make_node(
      "pointwise_conv2d", {batch, co, h, wd}, {x.node(), w.node()},
      [=](TensorNode& n) {
        n.value.resize(static_cast<Eigen::Index>(batch) * co * hw);
        CMapRM W(n.parents[1]->value.data(), co, ci);
        for (int s = 0; s < batch; ++s) {
          CMapRM X(n.parents[0]->value.data() + static_cast<std::int64_t>(s) * ci * hw, ci, hw);
          MapRM O(n.value.data() + static_cast<std::int64_t>(s) * co * hw, co, hw);
          O.noalias() = W * X;
        }
      },
      [=](TensorNode& n) {
        CMapRM W(n.parents[1]->value.data(), co, ci);
        for (int s = 0; s < batch; ++s) {
          CMapRM G(n.grad.data() + static_cast<std::int64_t>(s) * co * hw, co, hw);
          if (n.parents[1]->needs_grad) {
            CMapRM X(n.parents[0]->value.data() + static_cast<std::int64_t>(s) * ci * hw, ci, hw);
            MapRM dW(n.parents[1]->grad.data(), co, ci);
            dW.noalias() += G * X.transpose();
          }
          if (n.parents[0]->needs_grad) {
            MapRM dX(n.parents[0]->grad.data() + static_cast<std::int64_t>(s) * ci * hw, ci, hw);
            dX.noalias() += W.transpose() * G;
          }
        }
      });
}

Tensor dilated_conv2d(const Tensor& x, const Tensor& w, int dilation) {
  check(dilation >= 2, "dilated_conv2d: dilation must be >= 2");
  return conv2d(x, w, dilation);
}

namespace {

Tensor pool3x3(const Tensor& x, bool take_max) {
  require_rank(x, 4, take_max ? "max_pool3x3" : "avg_pool3x3", "input");
  require_finite(x, take_max ? "max_pool3x3" : "avg_pool3x3");
  const int batch = x.shape()[0], ch = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  return make_node(
      take_max ? "max_pool3x3" : "avg_pool3x3", x.shape(), {x.node()},
      [=](TensorNode& n) {
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        n.value.resize(xv.size());
        if (take_max) argmax->assign(static_cast<std::size_t>(xv.size()), -1);
        for (int s = 0; s < batch; ++s) {
          for (int c = 0; c < ch; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * h * wd;
            for (int y = 0; y < h; ++y) {
              for (int xx = 0; xx < wd; ++xx) {
                const std::int64_t oi = plane + static_cast<std::int64_t>(y) * wd + xx;
                if (take_max) {
                  double best = -std::numeric_limits<double>::infinity();
                  std::int64_t best_i = -1;
                  for (int r = -1; r <= 1; ++r) {
                    const int sy = y + r;
                    if (sy < 0 || sy >= h) continue;
                    for (int t = -1; t <= 1; ++t) {
                      const int sx = xx + t;
                      if (sx < 0 || sx >= wd) continue;
                      const std::int64_t xi = plane + static_cast<std::int64_t>(sy) * wd + sx;
                      if (xv[xi] > best) {
                        best = xv[xi];
                        best_i = xi;
                      }
                    }
                  }
                  n.value[oi] = best;
                  (*argmax)[static_cast<std::size_t>(oi)] = best_i;
                } else {
                  double acc = 0.0;
                  int count = 0;
                  for (int r = -1; r <= 1; ++r) {
                    const int sy = y + r;
                    if (sy < 0 || sy >= h) continue;
                    for (int t = -1; t <= 1; ++t) {
                      const int sx = xx + t;
                      if (sx < 0 || sx >= wd) continue;
                      acc += xv[plane + static_cast<std::int64_t>(sy) * wd + sx];
                      ++count;
                    }
                  }
                  n.value[oi] = acc / count;
                }
              }
            }
          }
        }
      },
      [=](TensorNode& n) {
        if (!n.parents[0]->needs_grad) return;
        Eigen::ArrayXd& dx = n.parents[0]->grad;
        if (take_max) {
          for (std::int64_t i = 0; i < n.value.size(); ++i) {
            dx[(*argmax)[static_cast<std::size_t>(i)]] += n.grad[i];
          }
          return;
        }
        for (int s = 0; s < batch; ++s) {
          for (int c = 0; c < ch; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * h * wd;
            for (int y = 0; y < h; ++y) {
              for (int xx = 0; xx < wd; ++xx) {
                const std::int64_t oi = plane + static_cast<std::int64_t>(y) * wd + xx;
                const int ry0 = y > 0 ? -1 : 0, ry1 = y < h - 1 ? 1 : 0;
                const int rx0 = xx > 0 ? -1 : 0, rx1 = xx < wd - 1 ? 1 : 0;
                const double share = n.grad[oi] / ((ry1 - ry0 + 1) * (rx1 - rx0 + 1));
                for (int r = ry0; r <= ry1; ++r) {
                  for (int t = rx0; t <= rx1; ++t) {
                    dx[plane + static_cast<std::int64_t>(y + r) * wd + (xx + t)] += share;
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace

Tensor avg_pool3x3(const Tensor& x) { return pool3x3(x, false); }
Tensor max_pool3x3(const Tensor& x) { return pool3x3(x, true); }

Tensor batch_stat_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
  require_rank(x, 4, "batch_stat_norm", "input");
  require_rank(scale, 1, "batch_stat_norm", "scale");
  require_rank(shift, 1, "batch_stat_norm", "shift");
  const int batch = x.shape()[0], ch = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  check(scale.shape()[0] == ch && shift.shape()[0] == ch,
        "batch_stat_norm: scale/shift must have one entry per channel");
  check(eps > 0, "batch_stat_norm: eps must be positive");
  require_finite(x, "batch_stat_norm");
  require_finite(scale, "batch_stat_norm");
  require_finite(shift, "batch_stat_norm");
  const std::int64_t hw = static_cast<std::int64_t>(h) * wd;
  const std::int64_t set_size = static_cast<std::int64_t>(batch) * hw;

  struct Aux {
    Eigen::ArrayXd mean, inv_std;
  };
  auto aux = std::make_shared<Aux>();
  return make_node(
      "batch_stat_norm", x.shape(), {x.node(), scale.node(), shift.node()},
      [=](TensorNode& n) {
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        const Eigen::ArrayXd& sv = n.parents[1]->value;
        const Eigen::ArrayXd& bv = n.parents[2]->value;
        n.value.resize(xv.size());
        aux->mean.resize(ch);
        aux->inv_std.resize(ch);
        for (int c = 0; c < ch; ++c) {
          double sum = 0.0;
          for (int s = 0; s < batch; ++s) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) sum += xv[plane + i];
          }
          const double mean = sum / static_cast<double>(set_size);
          double var = 0.0;
          for (int s = 0; s < batch; ++s) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const double d = xv[plane + i] - mean;
              var += d * d;
            }
          }
          var /= static_cast<double>(set_size);
          const double inv_std = 1.0 / std::sqrt(var + eps);
          aux->mean[c] = mean;
          aux->inv_std[c] = inv_std;
          for (int s = 0; s < batch; ++s) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              n.value[plane + i] = sv[c] * ((xv[plane + i] - mean) * inv_std) + bv[c];
            }
          }
        }
      },
      [=](TensorNode& n) {
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        const Eigen::ArrayXd& sv = n.parents[1]->value;
        const bool need_dx = n.parents[0]->needs_grad;
        const bool need_ds = n.parents[1]->needs_grad;
        const bool need_db = n.parents[2]->needs_grad;
        for (int c = 0; c < ch; ++c) {
          const double mean = aux->mean[c], inv_std = aux->inv_std[c];
          double g_sum = 0.0, gx_sum = 0.0;
          for (int s = 0; s < batch; ++s) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const double g = n.grad[plane + i];
              g_sum += g;
              gx_sum += g * ((xv[plane + i] - mean) * inv_std);
            }
          }
          if (need_ds) n.parents[1]->grad[c] += gx_sum;
          if (need_db) n.parents[2]->grad[c] += g_sum;
          if (need_dx) {
            const double gm = g_sum / static_cast<double>(set_size);
            const double gxm = gx_sum / static_cast<double>(set_size);
            const double k = sv[c] * inv_std;
            for (int s = 0; s < batch; ++s) {
              const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                const double xhat = (xv[plane + i] - mean) * inv_std;
                n.parents[0]->grad[plane + i] += k * (n.grad[plane + i] - gm - xhat * gxm);
              }
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  require_finite(x, "global_avg_pool");
  const int batch = x.shape()[0], ch = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const std::int64_t hw = static_cast<std::int64_t>(h) * wd;
  return make_node(
      "global_avg_pool", {batch, ch}, {x.node()},
      [=](TensorNode& n) {
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        n.value.resize(static_cast<Eigen::Index>(batch) * ch);
        for (int s = 0; s < batch; ++s) {
          for (int c = 0; c < ch; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) acc += xv[plane + i];
            n.value[static_cast<std::int64_t>(s) * ch + c] = acc / static_cast<double>(hw);
          }
        }
      },
      [=](TensorNode& n) {
        if (!n.parents[0]->needs_grad) return;
        for (int s = 0; s < batch; ++s) {
          for (int c = 0; c < ch; ++c) {
            const double share =
                n.grad[static_cast<std::int64_t>(s) * ch + c] / static_cast<double>(hw);
            const std::int64_t plane = (static_cast<std::int64_t>(s) * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) n.parents[0]->grad[plane + i] += share;
          }
        }
      });
}

Eigen::ArrayXd softmax_t_values(const Eigen::ArrayXd& logits, double temperature) {
  check(temperature > 0.0, "softmax_t: temperature must be positive");
  check(logits.isFinite().all(), "softmax_t: non-finite input detected");
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = ((logits - m) / temperature).exp();
  return e / e.sum();
}

Tensor softmax_t(const Tensor& logits, double temperature) {
  require_rank(logits, 1, "softmax_t", "logits");
  check(temperature > 0.0, "softmax_t: temperature must be positive");
  require_finite(logits, "softmax_t");
  return make_node(
      "softmax_t", logits.shape(), {logits.node()},
      [temperature](TensorNode& n) {
        n.value = softmax_t_values(n.parents[0]->value, temperature);
      },
      [temperature](TensorNode& n) {
        if (!n.parents[0]->needs_grad) return;
        const double dot = (n.grad * n.value).sum();
        n.parents[0]->grad += n.value * (n.grad - dot) / temperature;
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const int batch = logits.shape()[0], classes = logits.shape()[1];
  check(static_cast<int>(labels.size()) == batch,
        "cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " +
            std::to_string(batch));
  for (int lab : labels) {
    check(lab >= 0 && lab < classes,
          "cross_entropy: label " + std::to_string(lab) + " out of range [0, " +
              std::to_string(classes) + ")");
  }
  require_finite(logits, "cross_entropy");
  return make_node(
      "cross_entropy", {1}, {logits.node()},
      [batch, classes, labels](TensorNode& n) {
        const Eigen::ArrayXd& z = n.parents[0]->value;
        double total = 0.0;
        for (int s = 0; s < batch; ++s) {
          const std::int64_t row = static_cast<std::int64_t>(s) * classes;
          double m = z[row];
          for (int c = 1; c < classes; ++c) m = std::max(m, z[row + c]);
          double rest = 0.0;
          bool max_used = false;  // log1p form: exclude one max term exactly once
          for (int c = 0; c < classes; ++c) {
            const double v = z[row + c];
            if (!max_used && v == m) {
              max_used = true;
              continue;
            }
            rest += std::exp(v - m);
          }
          // (m - z_label) + log1p(rest) rather than (m + log1p(rest)) - z_label:
          // keeps the tiny remainder from being absorbed at large margins.
          total += (m - z[row + labels[static_cast<std::size_t>(s)]]) + std::log1p(rest);
        }
        n.value.resize(1);
        n.value[0] = total / batch;
      },
      [batch, classes, labels](TensorNode& n) {
        if (!n.parents[0]->needs_grad) return;
        const Eigen::ArrayXd& z = n.parents[0]->value;
        const double g = n.grad[0] / batch;
        for (int s = 0; s < batch; ++s) {
          const std::int64_t row = static_cast<std::int64_t>(s) * classes;
          double m = z[row];
          for (int c = 1; c < classes; ++c) m = std::max(m, z[row + c]);
          double denom = 0.0;
          for (int c = 0; c < classes; ++c) denom += std::exp(z[row + c] - m);
          for (int c = 0; c < classes; ++c) {
            double p = std::exp(z[row + c] - m) / denom;
            if (c == labels[static_cast<std::size_t>(s)]) p -= 1.0;
            n.parents[0]->grad[row + c] += g * p;
          }
        }
      });
}

Tensor weighted_sum(const std::vector<Tensor>& features, const Tensor& weights) {
  check(!features.empty(), "weighted_sum: empty candidate list");
  check(weights.size() == static_cast<std::int64_t>(features.size()),
        "weighted_sum: " + std::to_string(weights.size()) + " weights for " +
            std::to_string(features.size()) + " features");
  for (std::size_t i = 1; i < features.size(); ++i) {
    require_same_shape(features[0], features[i], "weighted_sum");
  }
  require_finite(weights, "weighted_sum");
  for (const Tensor& f : features) require_finite(f, "weighted_sum");
  std::vector<NodePtr> parents;
  parents.reserve(features.size() + 1);
  for (const Tensor& f : features) parents.push_back(f.node());
  parents.push_back(weights.node());
  const std::size_t k = features.size();
  return make_node(
      "weighted_sum", features[0].shape(), std::move(parents),
      [k](TensorNode& n) {
        const Eigen::ArrayXd& w = n.parents[k]->value;
        n.value = w[0] * n.parents[0]->value;
        for (std::size_t i = 1; i < k; ++i) n.value += w[static_cast<Eigen::Index>(i)] * n.parents[i]->value;
      },
      [k](TensorNode& n) {
        const Eigen::ArrayXd& w = n.parents[k]->value;
        for (std::size_t i = 0; i < k; ++i) {
          if (n.parents[i]->needs_grad) {
            n.parents[i]->grad += w[static_cast<Eigen::Index>(i)] * n.grad;
          }
        }
        if (n.parents[k]->needs_grad) {
          for (std::size_t i = 0; i < k; ++i) {
            n.parents[k]->grad[static_cast<Eigen::Index>(i)] += (n.grad * n.parents[i]->value).sum();
          }
        }
      });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "concat_channels: empty input list");
  int total_c = 0;
  const Shape& s0 = xs[0].shape();
  for (const Tensor& x : xs) {
    require_rank(x, 4, "concat_channels", "input");
    check(x.shape()[0] == s0[0] && x.shape()[2] == s0[2] && x.shape()[3] == s0[3],
          "concat_channels: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(s0));
    require_finite(x, "concat_channels");
    total_c += x.shape()[1];
  }
  const int batch = s0[0], h = s0[2], wd = s0[3];
  const std::int64_t hw = static_cast<std::int64_t>(h) * wd;
  std::vector<NodePtr> parents;
  std::vector<int> chans;
  for (const Tensor& x : xs) {
    parents.push_back(x.node());
    chans.push_back(x.shape()[1]);
  }
  return make_node(
      "concat_channels", {batch, total_c, h, wd}, std::move(parents),
      [=](TensorNode& n) {
        n.value.resize(static_cast<Eigen::Index>(batch) * total_c * hw);
        for (int s = 0; s < batch; ++s) {
          std::int64_t off = static_cast<std::int64_t>(s) * total_c * hw;
          for (std::size_t i = 0; i < chans.size(); ++i) {
            const std::int64_t block = static_cast<std::int64_t>(chans[i]) * hw;
            n.value.segment(off, block) =
                n.parents[i]->value.segment(static_cast<std::int64_t>(s) * block, block);
            off += block;
          }
        }
      },
      [=](TensorNode& n) {
        for (int s = 0; s < batch; ++s) {
          std::int64_t off = static_cast<std::int64_t>(s) * total_c * hw;
          for (std::size_t i = 0; i < chans.size(); ++i) {
            const std::int64_t block = static_cast<std::int64_t>(chans[i]) * hw;
            if (n.parents[i]->needs_grad) {
              n.parents[i]->grad.segment(static_cast<std::int64_t>(s) * block, block) +=
                  n.grad.segment(off, block);
            }
            off += block;
          }
        }
      });
}

Tensor reduce_mean(const Tensor& x) {
  require_finite(x, "reduce_mean");
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_node(
      "reduce_mean", {1}, {x.node()},
      [](TensorNode& n) {
        n.value.resize(1);
        double acc = 0.0;
        const Eigen::ArrayXd& xv = n.parents[0]->value;
        for (Eigen::Index i = 0; i < xv.size(); ++i) acc += xv[i];
        n.value[0] = acc / static_cast<double>(xv.size());
      },
      [inv](TensorNode& n) {
        if (n.parents[0]->needs_grad) n.parents[0]->grad += n.grad[0] * inv;
      });
}

}  // namespace dots
