#include <algorithm>
#include <cmath>

#include "mem/tensor.hpp"

namespace mem {
namespace {

using Vec = std::vector<double>;

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// out[m x n] = a[m x k] * b[k x n]
Vec mm(const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) {
  Vec out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// out[m x n] = a[m x k] * b[n x k]^T
Vec mm_nt(const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) {
  Vec out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out[i * n + j] = s;
    }
  }
  return out;
}

// out[k x n] = a[m x k]^T * b[m x n]
Vec mm_tn(const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) {
  Vec out(k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* o = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out({m, n}, mm(a.data().data(), b.data().data(), m, k, n));
  return Tensor::record(std::move(out), "matmul", {a, b}, [a, b, m, k, n](const Vec& g) {
    // da = g b^T, db = a^T g
    return std::vector<Vec>{mm_nt(g.data(), b.data().data(), m, n, k),
                            mm_tn(a.data().data(), g.data(), m, k, n)};
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Vec out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return Tensor::record(Tensor({c, r}, std::move(out)), "transpose", {a}, [r, c](const Vec& g) {
    Vec d(r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] = g[j * r + i];
    return std::vector<Vec>{d};
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Vec out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::record(Tensor(a.shape(), std::move(out)), "add", {a, b},
                        [](const Vec& g) { return std::vector<Vec>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Vec out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::record(Tensor(a.shape(), std::move(out)), "sub", {a, b}, [](const Vec& g) {
    Vec neg(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    return std::vector<Vec>{g, neg};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Vec out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::record(Tensor(a.shape(), std::move(out)), "mul", {a, b}, [a, b](const Vec& g) {
    Vec da(g.size()), db(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] * b[i];
      db[i] = g[i] * a[i];
    }
    return std::vector<Vec>{da, db};
  });
}

Tensor scale(const Tensor& a, double s) {
  Vec out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor::record(Tensor(a.shape(), std::move(out)), "scale", {a}, [s](const Vec& g) {
    Vec d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * s;
    return std::vector<Vec>{d};
  });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  const std::size_t c = x.cols(), r = x.rows();
  if (b.numel() != c) {
    throw ShapeError("add_row bias of " + shape_str(b.shape()) + " vs rows of width " +
                     std::to_string(c));
  }
  Vec out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  return Tensor::record(Tensor(x.shape(), std::move(out)), "add_row", {x, b},
                        [r, c](const Vec& g) {
                          Vec db(c, 0.0);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
                          return std::vector<Vec>{g, db};
                        });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_matrix(w, "linear");
  const std::size_t k = x.cols(), m = x.rows(), n = w.dim(0);
  if (w.dim(1) != k) {
    throw ShapeError("linear: input width " + std::to_string(k) + " vs weight " +
                     shape_str(w.shape()));
  }
  Tensor out({m, n}, mm_nt(x.data().data(), w.data().data(), m, k, n));
  return Tensor::record(std::move(out), "linear", {x, w}, [x, w, m, k, n](const Vec& g) {
    // dx = g w, dw = g^T x
    return std::vector<Vec>{mm(g.data(), w.data().data(), m, n, k),
                            mm_tn(g.data(), x.data().data(), m, n, k)};
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (b.numel() != w.dim(0)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  return add_row(linear(x, w), b);
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t c = x.cols(), r = x.rows();
  Vec out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      s += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  Tensor y(x.shape(), out);
  return Tensor::record(std::move(y), "softmax_rows", {x}, [out, r, c](const Vec& g) {
    Vec d(out.size());
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * out[i * c + j];
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] = out[i * c + j] * (g[i * c + j] - dot);
    }
    return std::vector<Vec>{d};
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& s) {
  const std::size_t c = x.cols(), r = x.rows();
  if (s.numel() != c) {
    throw ShapeError("rms_norm scale " + shape_str(s.shape()) + " vs width " + std::to_string(c));
  }
  Vec out(x.numel());
  Vec inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += x[i * c + j] * x[i * c + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(c) + kRmsNormEps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * inv[i] * s[j];
  }
  return Tensor::record(Tensor(x.shape(), std::move(out)), "rms_norm", {x, s},
                        [x, s, inv, r, c](const Vec& g) {
                          Vec dx(x.numel()), ds(c, 0.0);
                          const double cd = static_cast<double>(c);
                          for (std::size_t i = 0; i < r; ++i) {
                            double dot = 0.0;  // sum_j g_j s_j x_j
                            for (std::size_t j = 0; j < c; ++j) {
                              dot += g[i * c + j] * s[j] * x[i * c + j];
                              ds[j] += g[i * c + j] * x[i * c + j] * inv[i];
                            }
                            const double inv3 = inv[i] * inv[i] * inv[i];
                            for (std::size_t j = 0; j < c; ++j) {
                              dx[i * c + j] = g[i * c + j] * s[j] * inv[i] -
                                              x[i * c + j] * inv3 * dot / cd;
                            }
                          }
                          return std::vector<Vec>{dx, ds};
                        });
}

Tensor gelu(const Tensor& x) {
  Vec out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x[i]);
  return Tensor::record(Tensor(x.shape(), std::move(out)), "gelu", {x}, [x](const Vec& g) {
    Vec d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * gelu_grad(x[i]);
    return std::vector<Vec>{d};
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return Tensor::record(Tensor::scalar(s), "sum", {x},
                        [n](const Vec& g) { return std::vector<Vec>{Vec(n, g[0])}; });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return Tensor::record(Tensor(std::move(shape), x.vec()), "reshape", {x},
                        [](const Vec& g) { return std::vector<Vec>{g}; });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t c = x.cols(), r = x.rows();
  if (count == 0 || begin + count > r) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of " + std::to_string(r) + " rows");
  }
  Vec out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
          x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return Tensor::record(Tensor({count, c}, std::move(out)), "slice_rows", {x},
                        [begin, count, r, c](const Vec& g) {
                          Vec d(r * c, 0.0);
                          std::copy(g.begin(), g.end(),
                                    d.begin() + static_cast<std::ptrdiff_t>(begin * c));
                          (void)count;
                          return std::vector<Vec>{d};
                        });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t c = x.cols(), r = x.rows();
  if (rows.empty()) throw ShapeError("gather_rows needs at least one row");
  Vec out;
  out.reserve(rows.size() * c);
  for (auto i : rows) {
    if (i >= r) throw ShapeError("gather_rows index out of range");
    out.insert(out.end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * c),
               x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Tensor::record(Tensor({rows.size(), c}, std::move(out)), "gather_rows", {x},
                        [idx, r, c](const Vec& g) {
                          Vec d(r * c, 0.0);
                          for (std::size_t k = 0; k < idx.size(); ++k)
                            for (std::size_t j = 0; j < c; ++j) d[idx[k] * c + j] += g[k * c + j];
                          return std::vector<Vec>{d};
                        });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows width mismatch");
    total += p.rows();
  }
  Vec out;
  out.reserve(total * c);
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return Tensor::record(Tensor({total, c}, std::move(out)), "concat_rows", parts,
                        [sizes](const Vec& g) {
                          std::vector<Vec> ds;
                          std::size_t off = 0;
                          for (auto s : sizes) {
                            ds.emplace_back(g.begin() + static_cast<std::ptrdiff_t>(off),
                                            g.begin() + static_cast<std::ptrdiff_t>(off + s));
                            off += s;
                          }
                          return ds;
                        });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Vec out(r * total);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      for (std::size_t j = 0; j < widths[k]; ++j)
        out[i * total + off + j] = parts[k][i * widths[k] + j];
      off += widths[k];
    }
  }
  return Tensor::record(Tensor({r, total}, std::move(out)), "concat_cols", parts,
                        [widths, r, total](const Vec& g) {
                          std::vector<Vec> ds;
                          std::size_t off = 0;
                          for (auto w : widths) {
                            Vec d(r * w);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < w; ++j)
                                d[i * w + j] = g[i * total + off + j];
                            ds.push_back(std::move(d));
                            off += w;
                          }
                          return ds;
                        });
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t c = x.cols(), r = x.rows();
  Vec out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  const double inv = 1.0 / static_cast<double>(r);
  for (auto& v : out) v *= inv;
  return Tensor::record(Tensor({1, c}, std::move(out)), "mean_rows", {x},
                        [r, c, inv](const Vec& g) {
                          Vec d(r * c);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) d[i * c + j] = g[j] * inv;
                          return std::vector<Vec>{d};
                        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t c = logits.cols(), r = logits.rows();
  if (targets.size() != r) throw ShapeError("cross_entropy: one target per row required");
  Vec probs(logits.numel(), 0.0);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= c) throw ShapeError("cross_entropy target range");
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - row[targets[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    ++used;
  }
  if (used == 0) throw ShapeError("cross_entropy: every row masked");
  const double inv = 1.0 / static_cast<double>(used);
  std::vector<int> tg(targets.begin(), targets.end());
  return Tensor::record(Tensor::scalar(total * inv), "cross_entropy", {logits},
                        [probs, tg, r, c, inv](const Vec& g) {
                          Vec d(r * c, 0.0);
                          for (std::size_t i = 0; i < r; ++i) {
                            if (tg[i] < 0) continue;
                            for (std::size_t j = 0; j < c; ++j)
                              d[i * c + j] = g[0] * inv * probs[i * c + j];
                            d[i * c + static_cast<std::size_t>(tg[i])] -= g[0] * inv;
                          }
                          return std::vector<Vec>{d};
                        });
}

}  // namespace mem
