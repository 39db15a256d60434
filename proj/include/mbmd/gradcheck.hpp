#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mbmd/diffcore.hpp"

namespace mbmd::diff {

/// One finite-difference comparison: reverse-mode gradients of a scalarized
/// op output against central differences on every input element.
struct FdCase {
  std::string op;
  std::string shape_desc;
  double max_rel_err = 0;
  bool pass = false;
};

using Ref = Tape<double>::Ref;

struct FdProblem {
  std::vector<Ref> leaves;
  Ref out = -1;
};

namespace fd_detail {

inline Tensor<double> random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.v) v = dist(rng);
  return t;
}

/// Projects a node onto a fixed random direction to get a scalar output.
inline Ref scalarize(Tape<double>& tape, Ref node, std::mt19937_64& rng) {
  Tensor<double> proj = random_tensor(tape.value(node).shape, rng);
  return tape.sum_all(tape.mul(node, tape.input(std::move(proj))));
}

inline double fd_error(Tape<double>& tape, const FdProblem& p, double eps) {
  tape.backward(p.out);
  std::vector<Tensor<double>> grads;
  for (Ref leaf : p.leaves) grads.push_back(tape.grad(leaf));
  double max_err = 0;
  for (size_t li = 0; li < p.leaves.size(); ++li) {
    auto& val = tape.mutable_value(p.leaves[li]);
    for (size_t i = 0; i < val.v.size(); ++i) {
      const double orig = val.v[i];
      val.v[i] = orig + eps;
      tape.recompute();
      const double f_plus = tape.value(p.out).v[0];
      val.v[i] = orig - eps;
      tape.recompute();
      const double f_minus = tape.value(p.out).v[0];
      val.v[i] = orig;
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double g = grads[li].v[i];
      const double denom = std::max({1.0, std::abs(g), std::abs(fd)});
      max_err = std::max(max_err, std::abs(g - fd) / denom);
    }
  }
  tape.recompute();
  return max_err;
}

}  // namespace fd_detail

/// Builder registry: op name -> problem constructor on a fresh tape.
/// Shapes may be overridden; an empty list selects the default shapes.
inline const std::map<std::string, std::function<FdProblem(Tape<double>&, std::vector<std::vector<int64_t>>,
                                                           std::mt19937_64&)>>&
fd_builders() {
  using Shapes = std::vector<std::vector<int64_t>>;
  static const std::map<std::string, std::function<FdProblem(Tape<double>&, Shapes, std::mt19937_64&)>>
      builders = {
          {"matmul",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 5}, {5, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.matmul(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"add",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{3, 4}, {3, 4}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.add(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"add_bias",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{3, 4}, {4}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.add(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"sub",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{5}, {1}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.sub(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"mul",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{3, 4}, {3, 4}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.mul(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"mul_col",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{3, 4}, {3, 1}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.mul(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"divide",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6}, {1}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng, 0.5, 2.0))};
             p.out = fd_detail::scalarize(t, t.divide(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"scale",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.scale(p.leaves[0], 0.37), rng);
             return p;
           }},
          {"scale_by",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}, {1}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor(s[1], rng))};
             p.out = fd_detail::scalarize(t, t.scale_by(p.leaves[0], p.leaves[1]), rng);
             return p;
           }},
          {"transpose",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{3, 5}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.transpose(p.leaves[0]), rng);
             return p;
           }},
          {"concat_rows",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{2, 4}, {3, 4}};
             FdProblem p;
             for (auto& sh : s) p.leaves.push_back(t.leaf_grad(fd_detail::random_tensor(sh, rng)));
             p.out = fd_detail::scalarize(t, t.concat_rows(p.leaves), rng);
             return p;
           }},
          {"split_rows",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{5, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             auto parts = t.split_rows(p.leaves[0], {2, 3});
             Ref acc = fd_detail::scalarize(t, parts[0], rng);
             acc = t.add(acc, fd_detail::scalarize(t, parts[1], rng));
             p.out = acc;
             return p;
           }},
          {"repeat_rows",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{2, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.repeat_rows(p.leaves[0], 3), rng);
             return p;
           }},
          {"repeat_interleave_rows",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{2, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.repeat_interleave_rows(p.leaves[0], 3), rng);
             return p;
           }},
          {"reshape",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.reshape(p.leaves[0], {s[0][0] * s[0][1], 1}), rng);
             return p;
           }},
          {"mean_all",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.mean_all(p.leaves[0]), rng);
             return p;
           }},
          {"mean_axis0",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.mean_axis0(p.leaves[0]), rng);
             return p;
           }},
          {"segment_mean",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6, 4}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.segment_mean(p.leaves[0], 3), rng);
             return p;
           }},
          {"sum_all",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{7}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.sum_all(p.leaves[0]), rng);
             return p;
           }},
          {"sum_axis0",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.sum_axis0(p.leaves[0]), rng);
             return p;
           }},
          {"sum_axis1",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.sum_axis1(p.leaves[0]), rng);
             return p;
           }},
          {"softmax",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{8}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.softmax(p.leaves[0]), rng);
             return p;
           }},
          {"log_softmax",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{3, 5}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.log_softmax(p.leaves[0]), rng);
             return p;
           }},
          {"log",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng, 0.1, 2.0))};
             p.out = fd_detail::scalarize(t, t.log(p.leaves[0]), rng);
             return p;
           }},
          {"exp",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.exp(p.leaves[0]), rng);
             return p;
           }},
          {"layer_norm",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 16}};
             FdProblem p;
             const int64_t c = s[0][1];
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor({c}, rng, 0.5, 1.5)),
                         t.leaf_grad(fd_detail::random_tensor({c}, rng))};
             p.out = fd_detail::scalarize(t, t.layer_norm(p.leaves[0], p.leaves[1], p.leaves[2]), rng);
             return p;
           }},
          {"gelu",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{5, 3}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng, -2.0, 2.0))};
             p.out = fd_detail::scalarize(t, t.gelu(p.leaves[0]), rng);
             return p;
           }},
          {"attention",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6, 8}};
             const int64_t d = s[0][1];
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng)),
                         t.leaf_grad(fd_detail::random_tensor({d, 3 * d}, rng, -0.5, 0.5)),
                         t.leaf_grad(fd_detail::random_tensor({3 * d}, rng, -0.2, 0.2)),
                         t.leaf_grad(fd_detail::random_tensor({d, d}, rng, -0.5, 0.5)),
                         t.leaf_grad(fd_detail::random_tensor({d}, rng, -0.2, 0.2))};
             p.out = fd_detail::scalarize(
                 t, t.attention(p.leaves[0], p.leaves[1], p.leaves[2], p.leaves[3], p.leaves[4], 2, 3, 0.0),
                 rng);
             return p;
           }},
          {"gather_index",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{4, 5}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             std::vector<int64_t> idx;
             std::uniform_int_distribution<int64_t> pick(0, s[0][1] - 1);
             for (int64_t i = 0; i < s[0][0]; ++i) idx.push_back(pick(rng));
             p.out = fd_detail::scalarize(t, t.gather_index(p.leaves[0], idx), rng);
             return p;
           }},
          {"l1_norm",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6}};
             FdProblem p;
             // keep inputs away from the kink at zero
             Tensor<double> v = fd_detail::random_tensor(s[0], rng, 0.2, 1.0);
             std::bernoulli_distribution flip(0.5);
             for (auto& x : v.v)
               if (flip(rng)) x = -x;
             p.leaves = {t.leaf_grad(std::move(v))};
             p.out = fd_detail::scalarize(t, t.l1_norm(p.leaves[0]), rng);
             return p;
           }},
          {"dropout",
           [](Tape<double>& t, Shapes s, std::mt19937_64& rng) {
             if (s.empty()) s = {{6, 4}};
             FdProblem p;
             p.leaves = {t.leaf_grad(fd_detail::random_tensor(s[0], rng))};
             p.out = fd_detail::scalarize(t, t.dropout(p.leaves[0], 0.3), rng);
             return p;
           }},
      };
  return builders;
}

inline std::vector<std::string> finite_diff_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : fd_builders()) names.push_back(name);
  return names;
}

/// Max relative error between reverse-mode and central-difference gradients
/// for one op on seeded random inputs.
inline double finite_diff_check(const std::string& op_name,
                                const std::vector<std::vector<int64_t>>& shapes, double eps,
                                uint64_t seed) {
  require(eps > 0, ErrorKind::Config, "finite-difference eps must be positive");
  const auto& builders = fd_builders();
  auto it = builders.find(op_name);
  require(it != builders.end(), ErrorKind::Config, "unknown op name: " + op_name);
  auto rng = make_rng(derive_seed(seed, std::hash<std::string>{}(op_name)));
  // dropout needs a train-mode tape so the mask path is exercised
  Tape<double> tape(seed, /*train_mode=*/true);
  FdProblem p = it->second(tape, shapes, rng);
  return fd_detail::fd_error(tape, p, eps);
}

inline std::vector<FdCase> finite_diff_suite(double eps = 1e-5, uint64_t seed = 7,
                                             double threshold = 1e-4) {
  std::vector<FdCase> out;
  for (const auto& name : finite_diff_ops()) {
    FdCase c;
    c.op = name;
    c.shape_desc = "default";
    c.max_rel_err = finite_diff_check(name, {}, eps, seed);
    c.pass = c.max_rel_err < threshold;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace mbmd::diff
