#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rltp/errors.hpp"
#include "rltp/rng.hpp"
#include "rltp/serialize.hpp"

namespace rltp {

// ---------------------------------------------------------------------------
// Matrix (row-major, double)
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  double operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  double* row(int i) { return data_.data() + static_cast<std::size_t>(i) * cols_; }
  const double* row(int i) const {
    return data_.data() + static_cast<std::size_t>(i) * cols_;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// C = A * B^T; rows of both operands are contiguous, so the inner loop is a
// straight dot product. A: m x k, B: n x k, C: m x n.
inline void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dims disagree");
  c = Matrix(a.rows(), b.rows());
  const int k = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += ai[t] * bj[t];
      ci[j] = s;
    }
  }
}

// C = A * B (ikj order). A: m x k, B: k x n, C: m x n.
inline void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul_nn: inner dims disagree");
  c = Matrix(a.rows(), b.cols());
  const int n = b.cols();
  for (int i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C += A^T * B, accumulating rank-1 updates per shared row. A: r x m, B: r x n.
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn_acc: row counts disagree");
  if (c.rows() != a.cols() || c.cols() != b.cols())
    throw DimensionError("matmul_tn_acc: output shape mismatch");
  const int n = b.cols();
  for (int r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r);
    const double* br = b.row(r);
    for (int m = 0; m < a.cols(); ++m) {
      const double w = ar[m];
      if (w == 0.0) continue;
      double* cm = c.row(m);
      for (int j = 0; j < n; ++j) cm[j] += w * br[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Linear layer + MLP
// ---------------------------------------------------------------------------

struct Linear {
  Matrix w;   // out x in
  Matrix b;   // 1 x out
  Matrix dw;  // accumulated gradients
  Matrix db;

  Linear() = default;
  Linear(int in, int out, Rng& rng)
      : w(out, in), b(1, out), dw(out, in), db(1, out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
  }

  void forward(const Matrix& x, Matrix& y) const {
    matmul_nt(x, w, y);
    for (int i = 0; i < y.rows(); ++i) {
      double* yi = y.row(i);
      for (int j = 0; j < y.cols(); ++j) yi[j] += b(0, j);
    }
  }

  // Accumulates dw/db and returns dx.
  void backward(const Matrix& x, const Matrix& dy, Matrix& dx) {
    matmul_tn_acc(dy, x, dw);
    for (int i = 0; i < dy.rows(); ++i)
      for (int j = 0; j < dy.cols(); ++j) db(0, j) += dy(i, j);
    matmul_nn(dy, w, dx);
  }

  void zero_grad() {
    dw.fill(0.0);
    db.fill(0.0);
  }
};

// Feed-forward net: ReLU on hidden layers, identity on the output layer.
class Mlp {
 public:
  Mlp() = default;

  // layer_sizes are output widths, e.g. {200, 100, 1} on top of input_dim.
  Mlp(int input_dim, const std::vector<int>& layer_sizes, Rng& rng) {
    int in = input_dim;
    for (int out : layer_sizes) {
      layers_.emplace_back(in, out, rng);
      in = out;
    }
  }

  int input_dim() const { return layers_.empty() ? 0 : layers_.front().w.cols(); }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().w.rows(); }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

  struct Cache {
    std::vector<Matrix> acts;  // acts[0] = input, acts[i] = output of layer i-1
  };

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    Matrix cur = x;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(cur);
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix y;
      layers_[l].forward(cur, y);
      if (l + 1 < layers_.size())
        for (std::size_t i = 0; i < y.size(); ++i)
          y.data()[i] = y.data()[i] > 0.0 ? y.data()[i] : 0.0;
      cur = std::move(y);
      if (cache) cache->acts.push_back(cur);
    }
    return cur;
  }

  // dy is the loss gradient at the output; returns the gradient at the input.
  Matrix backward(const Cache& cache, const Matrix& dy) {
    if (cache.acts.size() != layers_.size() + 1)
      throw DimensionError("Mlp::backward: cache does not match forward pass");
    Matrix grad = dy;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
      if (l + 1 < static_cast<int>(layers_.size())) {
        const Matrix& act = cache.acts[l + 1];  // post-ReLU output of layer l
        for (std::size_t i = 0; i < grad.size(); ++i)
          if (act.data()[i] <= 0.0) grad.data()[i] = 0.0;
      }
      Matrix dx;
      layers_[l].backward(cache.acts[l], grad, dx);
      grad = std::move(dx);
    }
    return grad;
  }

  void zero_grad() {
    for (Linear& l : layers_) l.zero_grad();
  }

  void collect(std::vector<Matrix*>& params, std::vector<Matrix*>& grads) {
    for (Linear& l : layers_) {
      params.push_back(&l.w);
      grads.push_back(&l.dw);
      params.push_back(&l.b);
      grads.push_back(&l.db);
    }
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i)
      if (a.layers_[i].w != b.layers_[i].w || a.layers_[i].b != b.layers_[i].b)
        return false;
    return true;
  }

 private:
  std::vector<Linear> layers_;
};

// ---------------------------------------------------------------------------
// Embedding tables
// ---------------------------------------------------------------------------

// Named lookup tables; gradients scatter-add into rows touched by the batch.
class EmbeddingTables {
 public:
  struct Table {
    Matrix weights;  // vocab x dim
    Matrix grad;
  };

  void add(const std::string& name, int vocab, int dim, Rng& rng) {
    Table t{Matrix(vocab, dim), Matrix(vocab, dim)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < t.weights.size(); ++i) t.weights.data()[i] = u(rng);
    tables_.emplace(name, std::move(t));
  }

  Table& at(const std::string& name) {
    auto it = tables_.find(name);
    if (it == tables_.end())
      throw DimensionError("unknown embedding table: " + name);
    return it->second;
  }
  const Table& at(const std::string& name) const {
    auto it = tables_.find(name);
    if (it == tables_.end())
      throw DimensionError("unknown embedding table: " + name);
    return it->second;
  }

  const double* lookup(const std::string& name, int index) const {
    const Table& t = at(name);
    if (index < 0 || index >= t.weights.rows())
      throw DimensionError("embedding index out of range for " + name);
    return t.weights.row(index);
  }

  void accumulate(const std::string& name, int index, const double* g, int dim) {
    Table& t = at(name);
    double* row = t.grad.row(index);
    for (int d = 0; d < dim; ++d) row[d] += g[d];
  }

  void zero_grad() {
    for (auto& [_, t] : tables_) t.grad.fill(0.0);
  }

  void collect(std::vector<Matrix*>& params, std::vector<Matrix*>& grads) {
    for (auto& [_, t] : tables_) {  // std::map: stable iteration order
      params.push_back(&t.weights);
      grads.push_back(&t.grad);
    }
  }

  std::map<std::string, Table>& tables() { return tables_; }
  const std::map<std::string, Table>& tables() const { return tables_; }

  friend bool operator==(const EmbeddingTables& a, const EmbeddingTables& b) {
    if (a.tables_.size() != b.tables_.size()) return false;
    for (auto it = a.tables_.begin(), jt = b.tables_.begin();
         it != a.tables_.end(); ++it, ++jt)
      if (it->first != jt->first || it->second.weights != jt->second.weights)
        return false;
    return true;
  }

 private:
  std::map<std::string, Table> tables_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t steps() const { return t_; }

  // Params and grads must be passed in the same order every call; moment
  // buffers are allocated lazily on the first step.
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix*>& grads) {
    if (params.size() != grads.size())
      throw DimensionError("Adam::step: params/grads length mismatch");
    if (m_.empty()) {
      for (Matrix* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    }
    if (m_.size() != params.size())
      throw DimensionError("Adam::step: parameter list changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* p = params[i]->data();
      const double* g = grads[i]->data();
      double* m = m_[i].data();
      double* v = v_[i].data();
      const std::size_t n = params[i]->size();
      for (std::size_t k = 0; k < n; ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void save(BinWriter& w) const {
    w.put_f64(lr_);
    w.put_f64(beta1_);
    w.put_f64(beta2_);
    w.put_f64(eps_);
    w.put_i64(t_);
    w.put_u32(static_cast<std::uint32_t>(m_.size()));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      w.put_u32(static_cast<std::uint32_t>(m_[i].rows()));
      w.put_u32(static_cast<std::uint32_t>(m_[i].cols()));
      w.raw(m_[i].data(), m_[i].size() * sizeof(double));
      w.raw(v_[i].data(), v_[i].size() * sizeof(double));
    }
  }

  void load(BinReader& r) {
    lr_ = r.get_f64();
    beta1_ = r.get_f64();
    beta2_ = r.get_f64();
    eps_ = r.get_f64();
    t_ = r.get_i64();
    std::uint32_t n = r.get_u32();
    m_.assign(n, Matrix());
    v_.assign(n, Matrix());
    for (std::uint32_t i = 0; i < n; ++i) {
      int rows = static_cast<int>(r.get_u32());
      int cols = static_cast<int>(r.get_u32());
      m_[i] = Matrix(rows, cols);
      v_[i] = Matrix(rows, cols);
      r.raw(m_[i].data(), m_[i].size() * sizeof(double));
      r.raw(v_[i].data(), v_[i].size() * sizeof(double));
    }
  }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

// Scales all gradients in place so their global L2 norm is at most max_norm.
inline double clip_global_norm(const std::vector<Matrix*>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix* g : grads)
    for (std::size_t i = 0; i < g->size(); ++i) sq += g->data()[i] * g->data()[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Matrix* g : grads)
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Serialization helpers
// ---------------------------------------------------------------------------

inline void save_matrix(BinWriter& w, const Matrix& m) {
  w.put_u32(static_cast<std::uint32_t>(m.rows()));
  w.put_u32(static_cast<std::uint32_t>(m.cols()));
  w.raw(m.data(), m.size() * sizeof(double));
}

inline Matrix load_matrix(BinReader& r) {
  int rows = static_cast<int>(r.get_u32());
  int cols = static_cast<int>(r.get_u32());
  Matrix m(rows, cols);
  r.raw(m.data(), m.size() * sizeof(double));
  return m;
}

inline void save_mlp(BinWriter& w, const Mlp& net) {
  w.put_u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const Linear& l : net.layers()) {
    save_matrix(w, l.w);
    save_matrix(w, l.b);
  }
}

inline Mlp load_mlp(BinReader& r) {
  Mlp net;
  std::uint32_t n = r.get_u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Linear l;
    l.w = load_matrix(r);
    l.b = load_matrix(r);
    l.dw = Matrix(l.w.rows(), l.w.cols());
    l.db = Matrix(l.b.rows(), l.b.cols());
    net.layers().push_back(std::move(l));
  }
  return net;
}

inline void save_embeddings(BinWriter& w, const EmbeddingTables& tabs) {
  w.put_u32(static_cast<std::uint32_t>(tabs.tables().size()));
  for (const auto& [name, t] : tabs.tables()) {
    w.put_string(name);
    save_matrix(w, t.weights);
  }
}

inline EmbeddingTables load_embeddings(BinReader& r) {
  EmbeddingTables tabs;
  std::uint32_t n = r.get_u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    Matrix w = load_matrix(r);
    EmbeddingTables::Table t{w, Matrix(w.rows(), w.cols())};
    tabs.tables().emplace(name, std::move(t));
  }
  return tabs;
}

}  // namespace rltp
