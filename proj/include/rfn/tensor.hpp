#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rfn/errors.hpp"

namespace rfn {

class Tape;

/// Dense row-major matrix of 64-bit floats, rank <= 2. A tensor is immutable
/// once it has been produced by a tape operation; leaf tensors (inputs and
/// parameters) may be edited freely between forward passes.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t;
    t.rows_ = rows.size();
    t.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    t.data_.reserve(t.rows_ * t.cols_);
    for (const auto& r : rows) {
      if (r.size() != t.cols_) {
        throw DimensionError("from_rows: ragged row lengths");
      }
      t.data_.insert(t.data_.end(), r.begin(), r.end());
    }
    return t;
  }

  static Tensor row(std::initializer_list<double> values) {
    Tensor t;
    t.rows_ = 1;
    t.cols_ = values.size();
    t.data_.assign(values.begin(), values.end());
    return t;
  }

  static Tensor column(std::initializer_list<double> values) {
    Tensor t;
    t.rows_ = values.size();
    t.cols_ = 1;
    t.data_.assign(values.begin(), values.end());
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) {
    requires_grad_ = v;
    if (v) ensure_grad();
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  const Tape* producer() const { return producer_; }

 private:
  friend class Tape;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
  const Tape* producer_ = nullptr;
};

using TensorPtr = std::shared_ptr<Tensor>;

/// A named trainable tensor, as exposed by model parameter lists.
struct NamedParam {
  std::string name;
  TensorPtr value;
};

inline TensorPtr constant(Tensor t) { return std::make_shared<Tensor>(std::move(t)); }

inline TensorPtr parameter(Tensor t) {
  auto p = std::make_shared<Tensor>(std::move(t));
  p->set_requires_grad(true);
  return p;
}

inline std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

enum class Activation { identity, relu, elu, leaky_relu, softmax_rows };

enum class ElementwiseKind { add, sub, mul };

enum class ReduceKind { sum, mean, max, weighted_sum };

namespace detail {

/// Sums a set of contributions in ascending value order. The result depends
/// only on the multiset of terms, not on their original order, which keeps
/// neighborhood aggregates bit-identical under graph relabeling.
inline double ordered_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace detail

/// Records operations for reverse-mode differentiation. Each op computes its
/// value eagerly and, when any input requires gradients, pushes a backward
/// rule. Nodes are stored in execution order, so inputs always precede the
/// ops consuming them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Core recording primitive. `backward` receives the finished output tensor
  /// (value and accumulated gradient) and must add into the input gradients.
  TensorPtr record(Tensor value, std::span<const TensorPtr> inputs,
                   std::function<void(const Tensor&)> backward) {
    auto out = std::make_shared<Tensor>(std::move(value));
    out->producer_ = this;
    bool needs = false;
    for (const auto& in : inputs) {
      if (in->requires_grad()) {
        needs = true;
        in->ensure_grad();
      }
    }
    if (needs) {
      out->requires_grad_ = true;
      out->ensure_grad();
      nodes_.push_back(Node{out, std::move(backward)});
    }
    return out;
  }

  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->cols() != b->rows()) {
      throw DimensionError("matmul: inner dimensions disagree, " + shape_str(*a) +
                           " vs " + shape_str(*b));
    }
    const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a->at(i, p);
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
          out.at(i, j) += av * b->at(p, j);
        }
      }
    }
    const TensorPtr in[] = {a, b};
    return record(std::move(out), in, [a, b](const Tensor& o) {
      const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += o.grad()[i * n + j] * b->at(p, j);
            ga[i * k + p] += acc;
          }
        }
      }
      if (b->requires_grad()) {
        auto gb = b->grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a->at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * o.grad()[i * n + j];
          }
        }
      }
    });
  }

  /// Elementwise addition. As the single supported broadcast, `b` may be a
  /// 1 x d row bias added to every row of an n x d matrix `a`.
  TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    const bool bias = b->rows() == 1 && a->cols() == b->cols() && a->rows() != 1;
    if (!bias && (a->rows() != b->rows() || a->cols() != b->cols())) {
      throw DimensionError("add: incompatible shapes " + shape_str(*a) + " and " +
                           shape_str(*b));
    }
    Tensor out(a->rows(), a->cols());
    for (std::size_t i = 0; i < a->rows(); ++i) {
      for (std::size_t j = 0; j < a->cols(); ++j) {
        out.at(i, j) = a->at(i, j) + (bias ? b->at(0, j) : b->at(i, j));
      }
    }
    const TensorPtr in[] = {a, b};
    return record(std::move(out), in, [a, b, bias](const Tensor& o) {
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < o.size(); ++i) ga[i] += o.grad()[i];
      }
      if (b->requires_grad()) {
        auto gb = b->grad();
        if (bias) {
          for (std::size_t i = 0; i < o.rows(); ++i) {
            for (std::size_t j = 0; j < o.cols(); ++j) gb[j] += o.grad()[i * o.cols() + j];
          }
        } else {
          for (std::size_t i = 0; i < o.size(); ++i) gb[i] += o.grad()[i];
        }
      }
    });
  }

  TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("sub", *a, *b);
    Tensor out(a->rows(), a->cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a->data()[i] - b->data()[i];
    const TensorPtr in[] = {a, b};
    return record(std::move(out), in, [a, b](const Tensor& o) {
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < o.size(); ++i) ga[i] += o.grad()[i];
      }
      if (b->requires_grad()) {
        auto gb = b->grad();
        for (std::size_t i = 0; i < o.size(); ++i) gb[i] -= o.grad()[i];
      }
    });
  }

  TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("mul", *a, *b);
    Tensor out(a->rows(), a->cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a->data()[i] * b->data()[i];
    const TensorPtr in[] = {a, b};
    return record(std::move(out), in, [a, b](const Tensor& o) {
      if (a->requires_grad()) {
        auto ga = a->grad();
        for (std::size_t i = 0; i < o.size(); ++i) ga[i] += o.grad()[i] * b->data()[i];
      }
      if (b->requires_grad()) {
        auto gb = b->grad();
        for (std::size_t i = 0; i < o.size(); ++i) gb[i] += o.grad()[i] * a->data()[i];
      }
    });
  }

  TensorPtr elementwise(const TensorPtr& a, const TensorPtr& b, ElementwiseKind kind) {
    switch (kind) {
      case ElementwiseKind::add: return add(a, b);
      case ElementwiseKind::sub: return sub(a, b);
      case ElementwiseKind::mul: return mul(a, b);
    }
    throw ContractError("elementwise: unknown kind");
  }

  TensorPtr concat_cols(std::span<const TensorPtr> parts) {
    if (parts.empty()) throw ContractError("concat_cols: needs at least one part");
    const std::size_t rows = parts.front()->rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
      if (p->rows() != rows) {
        throw DimensionError("concat_cols: row mismatch, " + shape_str(*parts.front()) +
                             " vs " + shape_str(*p));
      }
      cols += p->cols();
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < p->cols(); ++j) out.at(i, offset + j) = p->at(i, j);
      }
      offset += p->cols();
    }
    std::vector<TensorPtr> owned(parts.begin(), parts.end());
    return record(std::move(out), owned, [owned](const Tensor& o) {
      std::size_t offset = 0;
      for (const auto& p : owned) {
        if (p->requires_grad()) {
          auto gp = p->grad();
          for (std::size_t i = 0; i < p->rows(); ++i) {
            for (std::size_t j = 0; j < p->cols(); ++j) {
              gp[i * p->cols() + j] += o.grad()[i * o.cols() + offset + j];
            }
          }
        }
        offset += p->cols();
      }
    });
  }

  TensorPtr concat_cols(std::initializer_list<TensorPtr> parts) {
    std::vector<TensorPtr> v(parts.begin(), parts.end());
    return concat_cols(std::span<const TensorPtr>(v));
  }

  /// Output row r is input row indices[r]; rows may repeat.
  TensorPtr gather_rows(const TensorPtr& x, std::span<const std::uint32_t> indices) {
    for (auto i : indices) {
      if (i >= x->rows()) {
        throw BoundsError("gather_rows: row " + std::to_string(i) + " out of range for " +
                          shape_str(*x));
      }
    }
    Tensor out(indices.size(), x->cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      for (std::size_t j = 0; j < x->cols(); ++j) out.at(r, j) = x->at(indices[r], j);
    }
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    const TensorPtr in[] = {x};
    return record(std::move(out), in, [x, idx = std::move(idx)](const Tensor& o) {
      if (!x->requires_grad()) return;
      auto gx = x->grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < o.cols(); ++j) {
          gx[idx[r] * o.cols() + j] += o.grad()[r * o.cols() + j];
        }
      }
    });
  }

  TensorPtr transpose(const TensorPtr& x) {
    Tensor out(x->cols(), x->rows());
    for (std::size_t i = 0; i < x->rows(); ++i) {
      for (std::size_t j = 0; j < x->cols(); ++j) out.at(j, i) = x->at(i, j);
    }
    const TensorPtr in[] = {x};
    return record(std::move(out), in, [x](const Tensor& o) {
      if (!x->requires_grad()) return;
      auto gx = x->grad();
      for (std::size_t i = 0; i < o.rows(); ++i) {
        for (std::size_t j = 0; j < o.cols(); ++j) gx[j * o.rows() + i] += o.grad()[i * o.cols() + j];
      }
    });
  }

  TensorPtr activation(const TensorPtr& x, Activation kind, double leaky_alpha = 0.2) {
    if (kind == Activation::identity) return x;
    if (kind == Activation::softmax_rows) return softmax_rows(x);
    Tensor out(x->rows(), x->cols());
    for (std::size_t i = 0; i < x->size(); ++i) {
      const double v = x->data()[i];
      switch (kind) {
        case Activation::relu: out.data()[i] = v > 0.0 ? v : 0.0; break;
        case Activation::elu: out.data()[i] = v > 0.0 ? v : std::expm1(v); break;
        case Activation::leaky_relu: out.data()[i] = v > 0.0 ? v : leaky_alpha * v; break;
        default: break;
      }
    }
    const TensorPtr in[] = {x};
    return record(std::move(out), in, [x, kind, leaky_alpha](const Tensor& o) {
      if (!x->requires_grad()) return;
      auto gx = x->grad();
      for (std::size_t i = 0; i < o.size(); ++i) {
        const double v = x->data()[i];
        double d = 0.0;
        switch (kind) {
          case Activation::relu: d = v > 0.0 ? 1.0 : 0.0; break;
          case Activation::elu: d = v > 0.0 ? 1.0 : std::exp(v); break;
          case Activation::leaky_relu: d = v > 0.0 ? 1.0 : leaky_alpha; break;
          default: break;
        }
        gx[i] += o.grad()[i] * d;
      }
    });
  }

  /// Each row is divided by its Euclidean norm; all-zero rows pass through.
  TensorPtr l2_normalize_rows(const TensorPtr& x) {
    Tensor out(x->rows(), x->cols());
    std::vector<double> norms(x->rows(), 0.0);
    for (std::size_t i = 0; i < x->rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < x->cols(); ++j) sq += x->at(i, j) * x->at(i, j);
      const double n = std::sqrt(sq);
      norms[i] = n;
      for (std::size_t j = 0; j < x->cols(); ++j) {
        out.at(i, j) = n == 0.0 ? x->at(i, j) : x->at(i, j) / n;
      }
    }
    const TensorPtr in[] = {x};
    return record(std::move(out), in, [x, norms = std::move(norms)](const Tensor& o) {
      if (!x->requires_grad()) return;
      auto gx = x->grad();
      for (std::size_t i = 0; i < o.rows(); ++i) {
        const double n = norms[i];
        if (n == 0.0) {
          for (std::size_t j = 0; j < o.cols(); ++j) gx[i * o.cols() + j] += o.grad()[i * o.cols() + j];
          continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < o.cols(); ++j) dot += o.grad()[i * o.cols() + j] * o.at(i, j);
        for (std::size_t j = 0; j < o.cols(); ++j) {
          gx[i * o.cols() + j] += (o.grad()[i * o.cols() + j] - o.at(i, j) * dot) / n;
        }
      }
    });
  }

  /// Row i of the output reduces the rows of `values` selected by segment i.
  /// Empty segments produce zero rows. Accumulation order is canonical, so
  /// the result is invariant to permutations within a segment.
  TensorPtr segment_reduce(const TensorPtr& values,
                           std::span<const std::vector<std::uint32_t>> segments,
                           ReduceKind kind,
                           std::span<const std::vector<double>> weights = {}) {
    const std::size_t n = values->rows(), d = values->cols();
    for (const auto& seg : segments) {
      for (auto i : seg) {
        if (i >= n) {
          throw BoundsError("segment_reduce: index " + std::to_string(i) +
                            " out of range for " + shape_str(*values));
        }
      }
    }
    if (kind == ReduceKind::weighted_sum) {
      if (weights.size() != segments.size()) {
        throw ContractError("segment_reduce: weighted_sum needs one weight list per segment");
      }
      for (std::size_t s = 0; s < segments.size(); ++s) {
        if (weights[s].size() != segments[s].size()) {
          throw ContractError("segment_reduce: segment " + std::to_string(s) +
                              " has " + std::to_string(segments[s].size()) + " indices but " +
                              std::to_string(weights[s].size()) + " weights");
        }
      }
    }

    Tensor out(segments.size(), d);
    std::vector<std::uint32_t> argmax;  // only for max
    if (kind == ReduceKind::max) argmax.assign(segments.size() * d, 0);
    std::vector<double> terms;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& seg = segments[s];
      if (seg.empty()) continue;
      if (kind == ReduceKind::max) {
        for (std::size_t j = 0; j < d; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          std::uint32_t best_i = seg[0];
          for (auto i : seg) {
            const double v = values->at(i, j);
            if (v > best) {
              best = v;
              best_i = i;
            }
          }
          out.at(s, j) = best;
          argmax[s * d + j] = best_i;
        }
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) {
        terms.clear();
        for (std::size_t t = 0; t < seg.size(); ++t) {
          const double v = values->at(seg[t], j);
          if (kind == ReduceKind::weighted_sum) {
            terms.push_back(weights[s][t] * v);
          } else {
            terms.push_back(v);
          }
        }
        double acc = detail::ordered_sum(terms);
        if (kind == ReduceKind::mean) acc /= static_cast<double>(seg.size());
        out.at(s, j) = acc;
      }
    }

    std::vector<std::vector<std::uint32_t>> segs(segments.begin(), segments.end());
    std::vector<std::vector<double>> w(weights.begin(), weights.end());
    const TensorPtr in[] = {values};
    return record(std::move(out), in,
                  [values, kind, segs = std::move(segs), w = std::move(w),
                   argmax = std::move(argmax)](const Tensor& o) {
      if (!values->requires_grad()) return;
      auto gv = values->grad();
      const std::size_t d = o.cols();
      for (std::size_t s = 0; s < segs.size(); ++s) {
        const auto& seg = segs[s];
        if (seg.empty()) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = o.grad()[s * d + j];
          if (g == 0.0) continue;
          switch (kind) {
            case ReduceKind::sum:
              for (auto i : seg) gv[i * d + j] += g;
              break;
            case ReduceKind::mean:
              for (auto i : seg) gv[i * d + j] += g / static_cast<double>(seg.size());
              break;
            case ReduceKind::weighted_sum:
              for (std::size_t t = 0; t < seg.size(); ++t) gv[seg[t] * d + j] += w[s][t] * g;
              break;
            case ReduceKind::max:
              gv[argmax[s * d + j] * d + j] += g;
              break;
          }
        }
      }
    });
  }

  /// Softmax-weighted segment sum: within each segment, weights are the
  /// softmax of `coefficients` and the output row is the weighted sum of the
  /// corresponding `values` rows. Differentiable in both inputs. Empty
  /// segments produce zero rows.
  TensorPtr attention_aggregate(const TensorPtr& values, const TensorPtr& coefficients,
                                std::span<const std::vector<std::uint32_t>> segments) {
    if (coefficients->cols() != 1 || coefficients->rows() != values->rows()) {
      throw DimensionError("attention_aggregate: coefficients must be " +
                           std::to_string(values->rows()) + "x1, got " +
                           shape_str(*coefficients));
    }
    const std::size_t d = values->cols();
    for (const auto& seg : segments) {
      for (auto i : seg) {
        if (i >= values->rows()) {
          throw BoundsError("attention_aggregate: index " + std::to_string(i) +
                            " out of range for " + shape_str(*values));
        }
      }
    }
    Tensor out(segments.size(), d);
    std::vector<std::vector<double>> softmax(segments.size());
    std::vector<double> terms;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& seg = segments[s];
      if (seg.empty()) continue;
      double cmax = -std::numeric_limits<double>::infinity();
      for (auto i : seg) cmax = std::max(cmax, coefficients->at(i, 0));
      auto& w = softmax[s];
      w.resize(seg.size());
      terms.clear();
      for (std::size_t t = 0; t < seg.size(); ++t) {
        w[t] = std::exp(coefficients->at(seg[t], 0) - cmax);
        terms.push_back(w[t]);
      }
      const double z = detail::ordered_sum(terms);
      for (auto& v : w) v /= z;
      for (std::size_t j = 0; j < d; ++j) {
        terms.clear();
        for (std::size_t t = 0; t < seg.size(); ++t) terms.push_back(w[t] * values->at(seg[t], j));
        out.at(s, j) = detail::ordered_sum(terms);
      }
    }

    std::vector<std::vector<std::uint32_t>> segs(segments.begin(), segments.end());
    const TensorPtr in[] = {values, coefficients};
    return record(std::move(out), in,
                  [values, coefficients, segs = std::move(segs),
                   softmax = std::move(softmax)](const Tensor& o) {
      const std::size_t d = o.cols();
      for (std::size_t s = 0; s < segs.size(); ++s) {
        const auto& seg = segs[s];
        const auto& w = softmax[s];
        if (seg.empty()) continue;
        if (values->requires_grad()) {
          auto gv = values->grad();
          for (std::size_t t = 0; t < seg.size(); ++t) {
            for (std::size_t j = 0; j < d; ++j) {
              gv[seg[t] * d + j] += w[t] * o.grad()[s * d + j];
            }
          }
        }
        if (coefficients->requires_grad()) {
          auto gc = coefficients->grad();
          // d out / d c via the softmax Jacobian
          std::vector<double> gw(seg.size(), 0.0);
          double mixed = 0.0;
          for (std::size_t t = 0; t < seg.size(); ++t) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += o.grad()[s * d + j] * values->at(seg[t], j);
            gw[t] = dot;
            mixed += w[t] * dot;
          }
          for (std::size_t t = 0; t < seg.size(); ++t) {
            gc[seg[t]] += w[t] * (gw[t] - mixed);
          }
        }
      }
    });
  }

  /// Sum of all entries as a 1x1 tensor.
  TensorPtr sum_all(const TensorPtr& x) {
    Tensor out(1, 1);
    double acc = 0.0;
    for (double v : x->data()) acc += v;
    out.at(0, 0) = acc;
    const TensorPtr in[] = {x};
    return record(std::move(out), in, [x](const Tensor& o) {
      if (!x->requires_grad()) return;
      auto gx = x->grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad()[0];
    });
  }

  /// Propagates d loss / d tensor into every requires_grad tensor reachable
  /// from `loss`. Gradients of leaf tensors accumulate additively across
  /// calls; tape-internal gradients are reset at the start of each call.
  void backward(const TensorPtr& loss) {
    if (!loss || loss->rows() != 1 || loss->cols() != 1) {
      throw ContractError("backward: loss must be a 1x1 scalar, got " +
                          (loss ? shape_str(*loss) : std::string("null")));
    }
    if (loss->producer() != this) {
      throw ContractError("backward: loss tensor is not on this tape");
    }
    for (auto& node : nodes_) node.out->zero_grad();
    if (!loss->requires_grad()) return;  // nothing differentiable upstream
    loss->grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->backward(*it->out);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorPtr out;
    std::function<void(const Tensor&)> backward;
  };

  static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                           " and " + shape_str(b));
    }
  }

  TensorPtr softmax_rows(const TensorPtr& x) {
    Tensor out(x->rows(), x->cols());
    for (std::size_t i = 0; i < x->rows(); ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < x->cols(); ++j) m = std::max(m, x->at(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < x->cols(); ++j) {
        out.at(i, j) = std::exp(x->at(i, j) - m);
        z += out.at(i, j);
      }
      for (std::size_t j = 0; j < x->cols(); ++j) out.at(i, j) /= z;
    }
    const TensorPtr in[] = {x};
    return record(std::move(out), in, [x](const Tensor& o) {
      if (!x->requires_grad()) return;
      auto gx = x->grad();
      for (std::size_t i = 0; i < o.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < o.cols(); ++j) dot += o.grad()[i * o.cols() + j] * o.at(i, j);
        for (std::size_t j = 0; j < o.cols(); ++j) {
          gx[i * o.cols() + j] += o.at(i, j) * (o.grad()[i * o.cols() + j] - dot);
        }
      }
    });
  }

  std::vector<Node> nodes_;
};

/// Compares analytic gradients against central finite differences.
/// Returns the maximum over all parameter entries of
/// |analytic - numeric| / max(1, |analytic|).
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
};

inline GradCheckReport finite_diff_check(std::span<const NamedParam> params,
                                         const std::function<TensorPtr(Tape&)>& build_loss,
                                         double step = 1e-5) {
  if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");

  for (const auto& p : params) p.value->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TensorPtr loss = build_loss(tape);
    tape.backward(loss);
  }
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.emplace_back(p.value->grad().begin(), p.value->grad().end());
  }

  const auto loss_value = [&build_loss]() {
    Tape tape;
    return build_loss(tape)->at(0, 0);
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].value->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = loss_value();
      data[i] = saved - step;
      const double down = loss_value();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = params[pi].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

inline GradCheckReport finite_diff_check(std::span<const TensorPtr> params,
                                         const std::function<TensorPtr(Tape&)>& build_loss,
                                         double step = 1e-5) {
  std::vector<NamedParam> named;
  named.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    named.push_back({"param" + std::to_string(i), params[i]});
  }
  return finite_diff_check(std::span<const NamedParam>(named), build_loss, step);
}

}  // namespace rfn
