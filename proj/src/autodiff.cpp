#include "pobrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace pobrl::ad {

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

int ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw std::logic_error("param store: duplicate name " + name);
  Entry e;
  e.name = name;
  e.value = Tensor(shape);
  e.grad = Tensor(shape);
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

Tensor& ParamStore::add_uniform(const std::string& name, std::vector<int> shape, Rng rng, double half_range) {
  Tensor& t = add(name, std::move(shape));
  for (double& x : t.v) x = rng.uniform(-half_range, half_range);
  return t;
}

bool ParamStore::has(const std::string& name) const { return index_of(name) >= 0; }

Tensor& ParamStore::value(const std::string& name) {
  int i = index_of(name);
  if (i < 0) throw std::out_of_range("param store: unknown name " + name);
  return entries_[static_cast<std::size_t>(i)].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  int i = index_of(name);
  if (i < 0) throw std::out_of_range("param store: unknown name " + name);
  return entries_[static_cast<std::size_t>(i)].value;
}

Tensor& ParamStore::grad(const std::string& name) {
  int i = index_of(name);
  if (i < 0) throw std::out_of_range("param store: unknown name " + name);
  return entries_[static_cast<std::size_t>(i)].grad;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) std::fill(e.grad.v.begin(), e.grad.v.end(), 0.0);
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& e : entries_)
    for (double g : e.grad.v) sq += g * g;
  return std::sqrt(sq);
}

void ParamStore::scale_grads(double factor) {
  for (auto& e : entries_)
    for (double& g : e.grad.v) g *= factor;
}

long long ParamStore::total_parameters() const {
  long long n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& metadata) {
  nlohmann::ordered_json manifest;
  manifest["version"] = "pobrl-ckpt-v1";
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  manifest["meta"] = meta;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& e : store.entries()) {
    params.push_back({{"name", e.name}, {"shape", e.value.shape}, {"dtype", "f32"}});
  }
  manifest["params"] = params;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << manifest.dump() << "\n";
  for (const auto& e : store.entries()) {
    for (double x : e.value.v) {
      float f = static_cast<float>(x);
      static_assert(sizeof(float) == 4);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.write(buf, 4);
    }
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

std::vector<std::pair<std::string, std::string>> load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string manifest_line;
  if (!std::getline(in, manifest_line)) throw std::runtime_error("checkpoint missing manifest: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint manifest parse error in " + path + ": " + e.what());
  }
  if (manifest.value("version", "") != std::string("pobrl-ckpt-v1"))
    throw std::runtime_error("checkpoint version mismatch in " + path);

  std::vector<std::pair<std::string, std::string>> metadata;
  for (const auto& [k, v] : manifest.at("meta").items()) metadata.emplace_back(k, v.get<std::string>());

  for (const auto& p : manifest.at("params")) {
    std::string name = p.at("name").get<std::string>();
    std::vector<int> shape = p.at("shape").get<std::vector<int>>();
    Tensor* dst = nullptr;
    if (store.has(name)) {
      dst = &store.value(name);
      if (dst->shape != shape)
        throw std::runtime_error("checkpoint shape mismatch for " + name + ": file " + shape_str(shape) +
                                 " vs store " + shape_str(dst->shape));
    } else {
      dst = &store.add(name, shape);
    }
    for (double& x : dst->v) {
      char buf[4];
      in.read(buf, 4);
      if (!in) throw std::runtime_error("checkpoint truncated: " + path);
      float f;
      std::memcpy(&f, buf, 4);
      x = static_cast<double>(f);
    }
  }
  return metadata;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::make(std::vector<int> shape) {
  Node n;
  n.shape = std::move(shape);
  n.val.assign(static_cast<std::size_t>(Tensor::size_of(n.shape)), 0.0);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_vector(Var v, const char* op) const {
  if (shape(v).size() != 1) throw std::invalid_argument(std::string(op) + ": expected vector, got " + shape_str(shape(v)));
}

Var Tape::input(Tensor value) {
  Var v = make(value.shape);
  node(v).val = std::move(value.v);
  return v;
}

Var Tape::scalar(double value) {
  Var v = make({1});
  node(v).val[0] = value;
  return v;
}

Var Tape::param(ParamStore& store, const std::string& name) {
  Tensor& t = store.value(name);
  Var v = make(t.shape);
  node(v).val = t.v;
  Tensor* grad_dst = &store.grad(name);
  node(v).back = [grad_dst](Tape&, Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) grad_dst->v[i] += n.grad[i];
  };
  return v;
}

Var Tape::add(Var a, Var b) {
  if (shape(a) != shape(b))
    throw std::invalid_argument("add: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  const auto& bv = val(b);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = av[i] + bv[i];
  o.back = [a, b](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] += n.grad[i];
    }
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  if (shape(a) != shape(b))
    throw std::invalid_argument("sub: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  const auto& bv = val(b);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = av[i] - bv[i];
  o.back = [a, b](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] -= n.grad[i];
    }
  };
  return out;
}

Var Tape::mul(Var a, Var b) {
  if (shape(a) != shape(b))
    throw std::invalid_argument("mul: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  const auto& bv = val(b);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = av[i] * bv[i];
  o.back = [a, b](Tape& t, Node& n) {
    auto& na = t.node(a);
    auto& nb = t.node(b);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      na.grad[i] += n.grad[i] * nb.val[i];
      nb.grad[i] += n.grad[i] * na.val[i];
    }
  };
  return out;
}

Var Tape::scale(Var a, double factor) {
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = av[i] * factor;
  o.back = [a, factor](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * factor;
  };
  return out;
}

Var Tape::add_rowwise(Var m, Var r) {
  const auto& ms = shape(m);
  const auto& rs = shape(r);
  if (ms.size() != 2 || rs.size() != 1 || ms[1] != rs[0])
    throw std::invalid_argument("add_rowwise: shape mismatch " + shape_str(ms) + " vs " + shape_str(rs));
  int n = ms[0], d = ms[1];
  Var out = make({n, d});
  auto& o = node(out);
  const auto& mv = val(m);
  const auto& rv = val(r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      o.val[static_cast<std::size_t>(i * d + j)] = mv[static_cast<std::size_t>(i * d + j)] + rv[static_cast<std::size_t>(j)];
  o.back = [m, r, n, d](Tape& t, Node& nd) {
    auto& gm = t.node(m).grad;
    auto& gr = t.node(r).grad;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        double g = nd.grad[static_cast<std::size_t>(i * d + j)];
        gm[static_cast<std::size_t>(i * d + j)] += g;
        gr[static_cast<std::size_t>(j)] += g;
      }
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  const auto& as = shape(a);
  const auto& bs = shape(b);
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
  int m = as[0], k = as[1], n = bs[1];
  Var out = make({m, n});
  auto& o = node(out);
  const auto& av = val(a);
  const auto& bv = val(b);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double aip = av[static_cast<std::size_t>(i * k + p)];
      if (aip == 0.0) continue;
      const double* brow = &bv[static_cast<std::size_t>(p * n)];
      double* orow = &o.val[static_cast<std::size_t>(i * n)];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  o.back = [a, b, m, k, n](Tape& t, Node& nd) {
    auto& na = t.node(a);
    auto& nb = t.node(b);
    // dA = G B^T ; dB = A^T G
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = &nd.grad[static_cast<std::size_t>(i * n)];
        const double* brow = &nb.val[static_cast<std::size_t>(p * n)];
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        na.grad[static_cast<std::size_t>(i * k + p)] += acc;
      }
    }
    for (int p = 0; p < k; ++p) {
      for (int i = 0; i < m; ++i) {
        double aip = na.val[static_cast<std::size_t>(i * k + p)];
        if (aip == 0.0) continue;
        const double* grow = &nd.grad[static_cast<std::size_t>(i * n)];
        double* brow = &nb.grad[static_cast<std::size_t>(p * n)];
        for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
      }
    }
  };
  return out;
}

Var Tape::matvec(Var m, Var x) {
  const auto& ms = shape(m);
  const auto& xs = shape(x);
  if (ms.size() != 2 || xs.size() != 1 || ms[1] != xs[0])
    throw std::invalid_argument("matvec: shape mismatch " + shape_str(ms) + " vs " + shape_str(xs));
  int rows = ms[0], cols = ms[1];
  Var out = make({rows});
  auto& o = node(out);
  const auto& mv = val(m);
  const auto& xv = val(x);
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* mrow = &mv[static_cast<std::size_t>(i * cols)];
    for (int j = 0; j < cols; ++j) acc += mrow[j] * xv[static_cast<std::size_t>(j)];
    o.val[static_cast<std::size_t>(i)] = acc;
  }
  o.back = [m, x, rows, cols](Tape& t, Node& nd) {
    auto& nm = t.node(m);
    auto& nx = t.node(x);
    for (int i = 0; i < rows; ++i) {
      double g = nd.grad[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      double* mgrow = &nm.grad[static_cast<std::size_t>(i * cols)];
      const double* mrow = &nm.val[static_cast<std::size_t>(i * cols)];
      for (int j = 0; j < cols; ++j) {
        mgrow[j] += g * nx.val[static_cast<std::size_t>(j)];
        nx.grad[static_cast<std::size_t>(j)] += g * mrow[j];
      }
    }
  };
  return out;
}

Var Tape::matvec_t(Var m, Var x) {
  const auto& ms = shape(m);
  const auto& xs = shape(x);
  if (ms.size() != 2 || xs.size() != 1 || ms[0] != xs[0])
    throw std::invalid_argument("matvec_t: shape mismatch " + shape_str(ms) + " vs " + shape_str(xs));
  int n = ms[0], d = ms[1];
  Var out = make({d});
  auto& o = node(out);
  const auto& mv = val(m);
  const auto& xv = val(x);
  for (int i = 0; i < n; ++i) {
    double xi = xv[static_cast<std::size_t>(i)];
    if (xi == 0.0) continue;
    const double* mrow = &mv[static_cast<std::size_t>(i * d)];
    for (int j = 0; j < d; ++j) o.val[static_cast<std::size_t>(j)] += xi * mrow[j];
  }
  o.back = [m, x, n, d](Tape& t, Node& nd) {
    auto& nm = t.node(m);
    auto& nx = t.node(x);
    for (int i = 0; i < n; ++i) {
      double xi = nx.val[static_cast<std::size_t>(i)];
      double acc = 0.0;
      const double* mrow = &nm.val[static_cast<std::size_t>(i * d)];
      double* mgrow = &nm.grad[static_cast<std::size_t>(i * d)];
      for (int j = 0; j < d; ++j) {
        double g = nd.grad[static_cast<std::size_t>(j)];
        mgrow[j] += xi * g;
        acc += mrow[j] * g;
      }
      nx.grad[static_cast<std::size_t>(i)] += acc;
    }
  };
  return out;
}

Var Tape::dot(Var a, Var b) {
  check_vector(a, "dot");
  if (shape(a) != shape(b))
    throw std::invalid_argument("dot: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
  Var out = make({1});
  auto& o = node(out);
  const auto& av = val(a);
  const auto& bv = val(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  o.val[0] = acc;
  o.back = [a, b](Tape& t, Node& n) {
    auto& na = t.node(a);
    auto& nb = t.node(b);
    double g = n.grad[0];
    for (std::size_t i = 0; i < na.val.size(); ++i) {
      na.grad[i] += g * nb.val[i];
      nb.grad[i] += g * na.val[i];
    }
  };
  return out;
}

Var Tape::sum(Var a) {
  Var out = make({1});
  auto& o = node(out);
  double acc = 0.0;
  for (double x : val(a)) acc += x;
  o.val[0] = acc;
  o.back = [a](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    for (double& g : ga) g += n.grad[0];
  };
  return out;
}

Var Tape::tanh(Var a) {
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = std::tanh(av[i]);
  o.back = [a](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
  };
  return out;
}

Var Tape::sigmoid(Var a) {
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  for (std::size_t i = 0; i < o.val.size(); ++i) {
    double x = av[i];
    o.val[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  o.back = [a](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.val[i] * (1.0 - n.val[i]);
  };
  return out;
}

Var Tape::exp(Var a) {
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = std::exp(av[i]);
  o.back = [a](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.val[i];
  };
  return out;
}

Var Tape::emax(Var a, Var b) {
  if (shape(a) != shape(b))
    throw std::invalid_argument("emax: shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  const auto& bv = val(b);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = std::max(av[i], bv[i]);
  o.back = [a, b](Tape& t, Node& n) {
    auto& na = t.node(a);
    auto& nb = t.node(b);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (na.val[i] >= nb.val[i])
        na.grad[i] += n.grad[i];
      else
        nb.grad[i] += n.grad[i];
    }
  };
  return out;
}

Var Tape::concat(std::span<const Var> parts) {
  int total = 0;
  for (Var p : parts) {
    check_vector(p, "concat");
    total += shape(p)[0];
  }
  Var out = make({total});
  auto& o = node(out);
  int offset = 0;
  std::vector<std::pair<Var, int>> layout;
  for (Var p : parts) {
    const auto& pv = val(p);
    std::copy(pv.begin(), pv.end(), o.val.begin() + offset);
    layout.emplace_back(p, offset);
    offset += static_cast<int>(pv.size());
  }
  o.back = [layout](Tape& t, Node& n) {
    for (const auto& [p, off] : layout) {
      auto& gp = t.node(p).grad;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += n.grad[static_cast<std::size_t>(off) + i];
    }
  };
  return out;
}

Var Tape::slice(Var a, int begin, int len) {
  check_vector(a, "slice");
  if (begin < 0 || len < 0 || begin + len > shape(a)[0])
    throw std::invalid_argument("slice: range out of bounds for " + shape_str(shape(a)));
  Var out = make({len});
  auto& o = node(out);
  const auto& av = val(a);
  std::copy(av.begin() + begin, av.begin() + begin + len, o.val.begin());
  o.back = [a, begin](Tape& t, Node& n) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[static_cast<std::size_t>(begin) + i] += n.grad[i];
  };
  return out;
}

Var Tape::pick(Var a, int index) {
  check_vector(a, "pick");
  if (index < 0 || index >= shape(a)[0])
    throw std::invalid_argument("pick: index " + std::to_string(index) + " out of bounds for " + shape_str(shape(a)));
  Var out = make({1});
  node(out).val[0] = val(a)[static_cast<std::size_t>(index)];
  node(out).back = [a, index](Tape& t, Node& n) { t.node(a).grad[static_cast<std::size_t>(index)] += n.grad[0]; };
  return out;
}

Var Tape::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  int d = shape(rows[0])[0];
  for (Var r : rows) {
    check_vector(r, "stack_rows");
    if (shape(r)[0] != d) throw std::invalid_argument("stack_rows: inconsistent row widths");
  }
  int k = static_cast<int>(rows.size());
  Var out = make({k, d});
  auto& o = node(out);
  std::vector<Var> srcs(rows.begin(), rows.end());
  for (int i = 0; i < k; ++i) {
    const auto& rv = val(srcs[static_cast<std::size_t>(i)]);
    std::copy(rv.begin(), rv.end(), o.val.begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  o.back = [srcs, d](Tape& t, Node& n) {
    for (std::size_t i = 0; i < srcs.size(); ++i) {
      auto& g = t.node(srcs[i]).grad;
      for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(j)] += n.grad[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
    }
  };
  return out;
}

Var Tape::row(Var m, int r) {
  const auto& ms = shape(m);
  if (ms.size() != 2 || r < 0 || r >= ms[0])
    throw std::invalid_argument("row: index " + std::to_string(r) + " out of bounds for " + shape_str(ms));
  int d = ms[1];
  Var out = make({d});
  auto& o = node(out);
  const auto& mv = val(m);
  std::copy(mv.begin() + static_cast<std::ptrdiff_t>(r) * d, mv.begin() + static_cast<std::ptrdiff_t>(r + 1) * d, o.val.begin());
  o.back = [m, r, d](Tape& t, Node& n) {
    auto& gm = t.node(m).grad;
    for (int j = 0; j < d; ++j) gm[static_cast<std::size_t>(r * d + j)] += n.grad[static_cast<std::size_t>(j)];
  };
  return out;
}

Var Tape::rows(Var m, const std::vector<int>& ids) {
  const auto& ms = shape(m);
  if (ms.size() != 2) throw std::invalid_argument("rows: expected matrix, got " + shape_str(ms));
  int d = ms[1];
  for (int id : ids)
    if (id < 0 || id >= ms[0]) throw std::invalid_argument("rows: index " + std::to_string(id) + " out of bounds for " + shape_str(ms));
  Var out = make({static_cast<int>(ids.size()), d});
  auto& o = node(out);
  const auto& mv = val(m);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(mv.begin() + static_cast<std::ptrdiff_t>(ids[i]) * d, mv.begin() + static_cast<std::ptrdiff_t>(ids[i] + 1) * d,
              o.val.begin() + static_cast<std::ptrdiff_t>(i) * d);
  o.back = [m, ids, d](Tape& t, Node& n) {
    auto& gm = t.node(m).grad;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        gm[static_cast<std::size_t>(ids[i] * d + j)] += n.grad[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
  };
  return out;
}

Var Tape::conv1d(Var x, Var w, Var b, int window) {
  const auto& xs = shape(x);
  const auto& ws = shape(w);
  const auto& bs = shape(b);
  if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1)
    throw std::invalid_argument("conv1d: bad ranks " + shape_str(xs) + " " + shape_str(ws) + " " + shape_str(bs));
  int t_in = xs[0], d = xs[1], f = ws[0];
  if (ws[1] != window * d || bs[0] != f)
    throw std::invalid_argument("conv1d: shape mismatch " + shape_str(xs) + " w" + shape_str(ws) + " b" + shape_str(bs) +
                                " window " + std::to_string(window));
  int t_eff = std::max(t_in, window);  // zero-pad short inputs to the window
  int t_out = t_eff - window + 1;
  Var out = make({t_out, f});
  auto& o = node(out);
  const auto& xv = val(x);
  const auto& wv = val(w);
  const auto& bv = val(b);
  auto x_at = [&](int t, int j) -> double { return t < t_in ? xv[static_cast<std::size_t>(t * d + j)] : 0.0; };
  for (int t = 0; t < t_out; ++t) {
    for (int k = 0; k < f; ++k) {
      double acc = bv[static_cast<std::size_t>(k)];
      const double* wrow = &wv[static_cast<std::size_t>(k * window * d)];
      for (int r = 0; r < window; ++r)
        for (int j = 0; j < d; ++j) acc += wrow[r * d + j] * x_at(t + r, j);
      o.val[static_cast<std::size_t>(t * f + k)] = acc;
    }
  }
  o.back = [x, w, b, window, t_in, d, f, t_out](Tape& tp, Node& n) {
    auto& nx = tp.node(x);
    auto& nw = tp.node(w);
    auto& nb = tp.node(b);
    for (int t = 0; t < t_out; ++t) {
      for (int k = 0; k < f; ++k) {
        double g = n.grad[static_cast<std::size_t>(t * f + k)];
        if (g == 0.0) continue;
        nb.grad[static_cast<std::size_t>(k)] += g;
        const double* wrow = &nw.val[static_cast<std::size_t>(k * window * d)];
        double* wgrow = &nw.grad[static_cast<std::size_t>(k * window * d)];
        for (int r = 0; r < window; ++r) {
          int ti = t + r;
          for (int j = 0; j < d; ++j) {
            double xv_ij = ti < t_in ? nx.val[static_cast<std::size_t>(ti * d + j)] : 0.0;
            wgrow[r * d + j] += g * xv_ij;
            if (ti < t_in) nx.grad[static_cast<std::size_t>(ti * d + j)] += g * wrow[r * d + j];
          }
        }
      }
    }
  };
  return out;
}

Var Tape::max_over_time(Var x) {
  const auto& xs = shape(x);
  if (xs.size() != 2) throw std::invalid_argument("max_over_time: expected matrix, got " + shape_str(xs));
  int t_in = xs[0], f = xs[1];
  Var out = make({f});
  auto& o = node(out);
  const auto& xv = val(x);
  std::vector<int> arg(static_cast<std::size_t>(f), 0);
  for (int k = 0; k < f; ++k) {
    double best = xv[static_cast<std::size_t>(k)];
    for (int t = 1; t < t_in; ++t) {
      double v = xv[static_cast<std::size_t>(t * f + k)];
      if (v > best) {
        best = v;
        arg[static_cast<std::size_t>(k)] = t;
      }
    }
    o.val[static_cast<std::size_t>(k)] = best;
  }
  o.back = [x, arg, f](Tape& t, Node& n) {
    auto& gx = t.node(x).grad;
    for (int k = 0; k < f; ++k) gx[static_cast<std::size_t>(arg[static_cast<std::size_t>(k)] * f + k)] += n.grad[static_cast<std::size_t>(k)];
  };
  return out;
}

Var Tape::softmax(Var logits) {
  check_vector(logits, "softmax");
  Var out = make(shape(logits));
  auto& o = node(out);
  const auto& lv = val(logits);
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : lv) mx = std::max(mx, x);
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    o.val[i] = std::exp(lv[i] - mx);
    z += o.val[i];
  }
  for (double& p : o.val) p /= z;
  o.back = [logits](Tape& t, Node& n) {
    auto& gl = t.node(logits).grad;
    double gp = 0.0;
    for (std::size_t i = 0; i < n.val.size(); ++i) gp += n.grad[i] * n.val[i];
    for (std::size_t i = 0; i < n.val.size(); ++i) gl[i] += n.val[i] * (n.grad[i] - gp);
  };
  return out;
}

Var Tape::log_softmax(Var logits) {
  std::vector<bool> allow(static_cast<std::size_t>(shape(logits)[0]), true);
  return masked_log_softmax(logits, allow);
}

Var Tape::masked_log_softmax(Var logits, const std::vector<bool>& allow) {
  check_vector(logits, "masked_log_softmax");
  if (allow.size() != static_cast<std::size_t>(shape(logits)[0]))
    throw std::invalid_argument("masked_log_softmax: mask length " + std::to_string(allow.size()) + " vs " +
                                shape_str(shape(logits)));
  bool any = false;
  for (bool b : allow) any = any || b;
  if (!any) throw std::invalid_argument("masked_log_softmax: all slots masked");
  Var out = make(shape(logits));
  auto& o = node(out);
  const auto& lv = val(logits);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (allow[i]) mx = std::max(mx, lv[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (allow[i]) z += std::exp(lv[i] - mx);
  double log_z = mx + std::log(z);
  for (std::size_t i = 0; i < lv.size(); ++i) o.val[i] = allow[i] ? lv[i] - log_z : 0.0;
  o.back = [logits, allow](Tape& t, Node& n) {
    auto& gl = t.node(logits).grad;
    double gsum = 0.0;
    for (std::size_t i = 0; i < n.val.size(); ++i)
      if (allow[i]) gsum += n.grad[i];
    for (std::size_t i = 0; i < n.val.size(); ++i)
      if (allow[i]) gl[i] += n.grad[i] - std::exp(n.val[i]) * gsum;
  };
  return out;
}

Var Tape::entropy_from_log_probs(Var log_probs, const std::vector<bool>& allow) {
  check_vector(log_probs, "entropy_from_log_probs");
  if (allow.size() != static_cast<std::size_t>(shape(log_probs)[0]))
    throw std::invalid_argument("entropy_from_log_probs: mask length mismatch");
  Var out = make({1});
  auto& o = node(out);
  const auto& lv = val(log_probs);
  double h = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (allow[i]) h -= std::exp(lv[i]) * lv[i];
  o.val[0] = h;
  o.back = [log_probs, allow](Tape& t, Node& n) {
    auto& gl = t.node(log_probs).grad;
    auto& lv = t.node(log_probs).val;
    for (std::size_t i = 0; i < lv.size(); ++i)
      if (allow[i]) gl[i] += n.grad[0] * (-std::exp(lv[i]) * (lv[i] + 1.0));
  };
  return out;
}

Var Tape::custom_unary(Var a, std::function<double(double)> fn, std::function<double(double)> dfn) {
  Var out = make(shape(a));
  auto& o = node(out);
  const auto& av = val(a);
  for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = fn(av[i]);
  o.back = [a, dfn](Tape& t, Node& n) {
    auto& na = t.node(a);
    for (std::size_t i = 0; i < n.grad.size(); ++i) na.grad[i] += n.grad[i] * dfn(na.val[i]);
  };
  return out;
}

Tape::LstmState Tape::lstm_cell(Var x, LstmState state, Var wx, Var wh, Var b) {
  int h4 = shape(b)[0];
  int h = h4 / 4;
  Var z = add(add(matvec(wx, x), matvec(wh, state.h)), b);
  Var i_gate = sigmoid(slice(z, 0, h));
  Var f_gate = sigmoid(slice(z, h, h));
  Var g_gate = tanh(slice(z, 2 * h, h));
  Var o_gate = sigmoid(slice(z, 3 * h, h));
  Var c_next = add(mul(f_gate, state.c), mul(i_gate, g_gate));
  Var h_next = mul(o_gate, tanh(c_next));
  return LstmState{h_next, c_next};
}

std::vector<Var> Tape::bilstm_sequence(std::span<const Var> inputs, const BiLstmWeights& w, int hidden) {
  std::size_t n = inputs.size();
  std::vector<Var> fwd(n), bwd(n);
  LstmState s{input(Tensor::zeros({hidden})), input(Tensor::zeros({hidden}))};
  for (std::size_t i = 0; i < n; ++i) {
    s = lstm_cell(inputs[i], s, w.fwd_wx, w.fwd_wh, w.fwd_b);
    fwd[i] = s.h;
  }
  s = LstmState{input(Tensor::zeros({hidden})), input(Tensor::zeros({hidden}))};
  for (std::size_t i = n; i-- > 0;) {
    s = lstm_cell(inputs[i], s, w.bwd_wx, w.bwd_wh, w.bwd_b);
    bwd[i] = s.h;
  }
  std::vector<Var> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var parts[2] = {fwd[i], bwd[i]};
    out[i] = concat(parts);
  }
  return out;
}

double Tape::scalar_val(Var v) const {
  if (shape(v) != std::vector<int>{1}) throw std::invalid_argument("scalar_val: not a scalar: " + shape_str(shape(v)));
  return val(v)[0];
}

void Tape::backward(Var loss, double seed) {
  if (shape(loss) != std::vector<int>{1}) throw std::invalid_argument("backward: loss must be scalar");
  for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  nodes_[static_cast<std::size_t>(loss.id)].grad[0] = seed;
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this, n);
  }
}

double grad_check(ParamStore& store, const ScalarFn& f, double epsilon, Rng rng, int per_tensor) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");

  auto eval = [&]() {
    Tape tape;
    Var out = f(tape, store);
    double v = tape.scalar_val(out);
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: function value is not finite");
    return v;
  };

  store.zero_grads();
  {
    Tape tape;
    Var out = f(tape, store);
    if (!std::isfinite(tape.scalar_val(out))) throw std::runtime_error("grad_check: function value is not finite");
    tape.backward(out);
  }

  double max_rel = 0.0;
  for (auto& e : store.entries()) {
    int n = e.value.size();
    std::vector<int> coords;
    if (n <= per_tensor) {
      coords.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      Rng sub = rng.fork(e.name);
      for (int i = 0; i < per_tensor; ++i) coords.push_back(sub.uniform_int(n));
    }
    for (int c : coords) {
      double saved = e.value.v[static_cast<std::size_t>(c)];
      e.value.v[static_cast<std::size_t>(c)] = saved + epsilon;
      double up = eval();
      e.value.v[static_cast<std::size_t>(c)] = saved - epsilon;
      double down = eval();
      e.value.v[static_cast<std::size_t>(c)] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double analytic = e.grad.v[static_cast<std::size_t>(c)];
      double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

AdamOptimizer::AdamOptimizer(ParamStore& store, double beta1, double beta2, double eps)
    : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& e : store.entries()) {
    m_.push_back(Tensor(e.value.shape));
    v_.push_back(Tensor(e.value.shape));
  }
}

void AdamOptimizer::step(double lr, double clip_norm) {
  if (m_.size() != store_->entries().size()) throw std::logic_error("adam: store layout changed after construction");
  if (clip_norm > 0.0) {
    double norm = store_->grad_norm();
    if (norm > clip_norm) store_->scale_grads(clip_norm / norm);
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  auto& entries = store_->entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& val = entries[p].value.v;
    auto& grad = entries[p].grad.v;
    auto& m = m_[p].v;
    auto& v = v_[p].v;
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      val[i] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

}  // namespace pobrl::ad
