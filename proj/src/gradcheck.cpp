#include "lwfs/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lwfs/graph.hpp"
#include "lwfs/model.hpp"
#include "lwfs/rng.hpp"
#include "lwfs/ssl.hpp"

namespace lwfs {

double gradient_rel_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  if (analytic.shape() != numeric.shape()) throw DimensionError("gradient_rel_error: shape mismatch");
  const double diff = distance(analytic, numeric);
  const double scale =
      std::max({std::sqrt(sum_of_squares(analytic)), std::sqrt(sum_of_squares(numeric)), kGradNormFloor});
  return diff / scale;
}

FdResult finite_diff_check(const std::function<double()>& f, std::span<Tensor<double>* const> params,
                           std::span<const Tensor<double>> analytic, double h) {
  if (params.size() != analytic.size()) throw ContractError("finite_diff_check: one analytic gradient per parameter");
  FdResult out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p];
    Tensor<double> num = Tensor<double>::zeros_like(t);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = f();
      t[i] = orig - h;
      const double fm = f();
      t[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_diff_check: non-finite probe at parameter " + std::to_string(p) + " entry " +
                           std::to_string(i));
      }
      num[i] = (fp - fm) / (2 * h);
    }
    const double err = gradient_rel_error(analytic[p], num);
    if (p == 0 || err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst_param = p;
    }
    out.numeric.push_back(std::move(num));
  }
  return out;
}

bool GradCheckReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [&](const auto& c) { return c.max_rel_error <= tolerance; });
}

const GradCheckCase& GradCheckReport::worst() const {
  if (cases.empty()) throw ContractError("gradcheck: empty report");
  return *std::max_element(cases.begin(), cases.end(),
                           [](const auto& a, const auto& b) { return a.max_rel_error < b.max_rel_error; });
}

std::vector<GradCheckCase> GradCheckReport::worst_per_name() const {
  std::vector<GradCheckCase> out;
  for (const auto& c : cases) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& o) { return o.name == c.name; });
    if (it == out.end()) {
      out.push_back(c);
    } else if (c.max_rel_error > it->max_rel_error) {
      *it = c;
    }
  }
  return out;
}

std::vector<std::string> GradCheckReport::failing_names() const {
  std::vector<std::string> out;
  for (const auto& c : worst_per_name()) {
    if (c.max_rel_error > tolerance) out.push_back(c.name);
  }
  return out;
}

namespace {

using Tn = Tensor<double>;
using G = Graph<double>;

Tn randn(Shape shape, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tn t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Entries bounded away from zero so kinks (relu) are never straddled.
Tn rand_away_from_zero(Shape shape, Rng& rng) {
  Tn t = randn(std::move(shape), rng);
  for (auto& v : t.data()) v = (v < 0 ? -1.0 : 1.0) * (0.1 + std::abs(v));
  return t;
}

std::size_t rand_dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct OpCase {
  std::vector<Tn> inputs;  // differentiated
  std::vector<Tn> extras;  // constants (running statistics)
  std::vector<std::size_t> targets;
  double factor = 1.0;
};

OpCase make_case(OpKind op, Rng& rng) {
  OpCase c;
  const std::size_t m = rand_dim(rng, 2, 4), n = rand_dim(rng, 2, 4), k = rand_dim(rng, 2, 4);
  switch (op) {
    case OpKind::kMatmul:
      c.inputs = {randn({m, k}, rng), randn({k, n}, rng)};
      break;
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
      c.inputs = {randn({m, n}, rng), randn({m, n}, rng)};
      break;
    case OpKind::kAddRow:
      c.inputs = {randn({m, n}, rng), randn({n}, rng)};
      break;
    case OpKind::kRelu:
      c.inputs = {rand_away_from_zero({m, n}, rng)};
      break;
    case OpKind::kScale:
    case OpKind::kAddScalar:
      c.inputs = {randn({m, n}, rng)};
      c.factor = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
      break;
    case OpKind::kBatchNormTrain:
      c.inputs = {randn({m, n}, rng), randn({n}, rng), randn({n}, rng)};
      break;
    case OpKind::kBatchNormEval: {
      c.inputs = {randn({m, n}, rng), randn({n}, rng), randn({n}, rng)};
      Tn var = randn({n}, rng);
      for (auto& v : var.data()) v = 0.5 + v * v;
      c.extras = {randn({n}, rng), var};
      break;
    }
    case OpKind::kCrossEntropy:
      c.inputs = {randn({m, n}, rng)};
      for (std::size_t i = 0; i < m; ++i) c.targets.push_back(rand_dim(rng, 0, n - 1));
      break;
    default:
      c.inputs = {randn({m, n}, rng)};
      break;
  }
  return c;
}

NodeId build_op(G& g, OpKind op, const std::vector<NodeId>& x, const OpCase& c) {
  const double eps = 1e-5;
  switch (op) {
    case OpKind::kMatmul: return g.matmul(x[0], x[1]);
    case OpKind::kTranspose: return g.transpose(x[0]);
    case OpKind::kAdd: return g.add(x[0], x[1]);
    case OpKind::kSub: return g.sub(x[0], x[1]);
    case OpKind::kMul: return g.mul(x[0], x[1]);
    case OpKind::kScale: return g.scale(x[0], c.factor);
    case OpKind::kAddScalar: return g.add_scalar(x[0], c.factor);
    case OpKind::kAddRow: return g.add_row(x[0], x[1]);
    case OpKind::kRelu: return g.relu(x[0]);
    case OpKind::kGelu: return g.gelu(x[0]);
    case OpKind::kL2Normalize: return g.l2_normalize(x[0], 1e-12);
    case OpKind::kBatchNormTrain: return g.batch_norm_train(x[0], x[1], x[2], eps);
    case OpKind::kBatchNormEval: return g.batch_norm_eval(x[0], x[1], x[2], c.extras[0], c.extras[1], eps);
    case OpKind::kSum: return g.sum(x[0]);
    case OpKind::kMean: return g.mean(x[0]);
    case OpKind::kCrossEntropy: return g.cross_entropy(x[0], c.targets);
    default: throw ContractError("gradcheck: no builder for op " + std::string(op_name(op)));
  }
}

double dot(const Tn& a, const Tn& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

GradCheckCase check_op(OpKind op, std::size_t index, Rng& rng, double h) {
  OpCase c = make_case(op, rng);
  auto evaluate = [&](G& g, std::vector<NodeId>& nodes) {
    nodes.clear();
    for (const auto& t : c.inputs) nodes.push_back(g.parameter(t));
    return build_op(g, op, nodes, c);
  };
  G g;
  std::vector<NodeId> nodes;
  const NodeId out = evaluate(g, nodes);
  const Tn w = randn(g.value(out).shape(), rng);
  const auto grads = g.backward(out, w);
  std::vector<Tn> analytic;
  for (auto id : nodes) analytic.push_back(grads.at(id));

  std::vector<Tn*> params;
  for (auto& t : c.inputs) params.push_back(&t);
  auto f = [&] {
    G gf;
    std::vector<NodeId> nf;
    return dot(gf.value(evaluate(gf, nf)), w);
  };
  const FdResult r = finite_diff_check(f, params, analytic, h);
  std::size_t count = 0;
  for (const auto& t : c.inputs) count += t.size();
  return {std::string(op_name(op)), index, r.max_rel_error, count};
}

GradCheckCase check_composite(std::size_t index, std::uint64_t seed, double h) {
  ModelSpec spec;
  spec.input_dim = 6;
  spec.num_layers = 2;
  spec.block_hidden_dim = 5;
  spec.block_out_dim = 4;
  spec.proj_hidden = 6;
  spec.proj_out = 4;
  spec.pred_hidden = 6;
  Rng rng(seed);
  ModelState<double> model = build_model<double>(spec, seed, 2);
  // Non-trivial affine and running statistics so every term is exercised.
  for (auto* group : model.groups()) {
    for (auto& t : group->tensors) {
      if (t.name.ends_with("running_var")) {
        for (auto& v : t.value.data()) v = 0.5 + std::abs(randn({1}, rng)[0]);
      } else if (!t.name.ends_with("weight")) {
        for (auto& v : t.value.data()) v += 0.3 * randn({1}, rng)[0];
      }
    }
  }
  model.frozen_prefix = index % 2;
  MomentumBranch<double> target = MomentumBranch<double>::from(model);
  for (auto& layer : target.branch.encoder) {
    for (auto& t : layer.tensors) {
      if (t.trainable) {
        for (auto& v : t.value.data()) v += 0.1 * randn({1}, rng)[0];
      }
    }
  }
  ModelState<double> global = model;
  for (auto& layer : global.encoder) {
    for (auto& t : layer.tensors) {
      if (t.trainable) {
        for (auto& v : t.value.data()) v += 0.1 * randn({1}, rng)[0];
      }
    }
  }
  const Tn x1 = randn({4, spec.input_dim}, rng);
  const Tn x2 = randn({4, spec.input_dim}, rng);
  SslConfig cfg;
  cfg.align_weight = 0.5;

  auto loss_value = [&](ParamBinder<double>& binder) {
    const SslLossNodes nodes = build_ssl_loss(binder, model, target, &global, x1, x2, cfg);
    return nodes.total;
  };
  G g;
  ParamBinder<double> binder(g);
  const NodeId loss = loss_value(binder);
  const auto grads = g.backward(loss);
  std::vector<Tn*> params;
  std::vector<Tn> analytic;
  std::size_t count = 0;
  for (const auto& b : binder.trainable()) {
    params.push_back(&b.tensor->value);
    analytic.push_back(grads.at(b.node));
    count += b.tensor->value.size();
  }
  auto f = [&] {
    G gf;
    ParamBinder<double> bf(gf);
    return gf.value(loss_value(bf)).item();
  };
  const FdResult r = finite_diff_check(f, params, analytic, h);
  return {"composite", index, r.max_rel_error, count};
}

}  // namespace

GradCheckReport run_gradcheck_suite(const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (OpKind op : differentiable_ops()) {
    for (std::size_t i = 0; i < options.cases_per_op; ++i) {
      Rng rng(mix_seed(options.seed, {static_cast<std::uint64_t>(op), i}));
      report.cases.push_back(check_op(op, i, rng, options.step));
    }
  }
  for (std::size_t i = 0; i < options.composite_cases; ++i) {
    report.cases.push_back(check_composite(i, mix_seed(options.seed, {1000, i}), options.step));
  }
  return report;
}

}  // namespace lwfs
