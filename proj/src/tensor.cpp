// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "kdda/simd/kernels.hpp"

namespace kdda {
namespace detail {

struct OpRecord {
  std::string name;
  std::vector<DiffTensor> inputs;
  BackwardFn backward;
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool consumed = false;  // produced by an op whose graph was released
  std::unique_ptr<OpRecord> record;
  std::uint64_t id = 0;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;
thread_local bool t_checked = false;

const simd::KernelTable& K() { return simd::active_kernels(); }

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data,
                                       bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_finite(std::string_view op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << op << ": non-finite value " << values[i] << " at flat index " << i;
      throw NumericError(msg.str());
    }
  }
}

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  std::ostringstream msg;
  msg << op << ": shape mismatch " << shape_string(a) << " vs " << shape_string(b);
  throw ShapeError(msg.str());
}

void require_same_shape(std::string_view op, const DiffTensor& a, const DiffTensor& b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

void require_matrix(std::string_view op, const DiffTensor& a) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     shape_string(a.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---- DiffTensor -----------------------------------------------------------

DiffTensor::DiffTensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) throw ShapeError("DiffTensor: shape must have at least one dim");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("DiffTensor: zero-sized dim in " + shape_string(shape));
  }
  if (shape_size(shape) != data.size()) {
    std::ostringstream msg;
    msg << "DiffTensor: shape " << shape_string(shape) << " needs " << shape_size(shape)
        << " values, got " << data.size();
    throw ShapeError(msg.str());
  }
  if (t_checked) check_finite("DiffTensor", data);
  node_ = new_node(std::move(shape), std::move(data), requires_grad);
}

DiffTensor DiffTensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

DiffTensor DiffTensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return DiffTensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

DiffTensor DiffTensor::scalar(double value, bool requires_grad) {
  return DiffTensor({1}, {value}, requires_grad);
}

DiffTensor DiffTensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return DiffTensor({n}, std::move(values), requires_grad);
}

DiffTensor DiffTensor::matrix(std::size_t rows, std::size_t cols,
                              std::vector<double> values, bool requires_grad) {
  return DiffTensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& DiffTensor::shape() const {
  if (!node_) throw GraphError("DiffTensor: use of an undefined tensor");
  return node_->shape;
}

std::size_t DiffTensor::size() const { return shape_size(shape()); }

std::size_t DiffTensor::rows() const {
  require_matrix("rows", *this);
  return node_->shape[0];
}

std::size_t DiffTensor::cols() const {
  require_matrix("cols", *this);
  return node_->shape[1];
}

std::span<const double> DiffTensor::data() const {
  shape();
  return node_->data;
}

std::span<double> DiffTensor::mutable_data() {
  if (!is_leaf()) {
    throw GraphError("mutable_data: only leaves can be written in place (tensor from " +
                     std::string(op_name()) + ")");
  }
  return node_->data;
}

double DiffTensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) +
                                    " is not a scalar");
  return node_->data[0];
}

bool DiffTensor::requires_grad() const { return node_ && node_->requires_grad; }

bool DiffTensor::is_leaf() const {
  shape();
  return !node_->record && !node_->consumed;
}

bool DiffTensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> DiffTensor::grad() const {
  if (!has_grad()) throw GraphError("grad: no gradient has been accumulated");
  return node_->grad;
}

void DiffTensor::zero_grad() {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

DiffTensor DiffTensor::detach() const {
  return DiffTensor(new_node(shape(), node_->data, false));
}

DiffTensor DiffTensor::clone() const {
  return DiffTensor(new_node(shape(), node_->data, node_->requires_grad));
}

std::string_view DiffTensor::op_name() const {
  shape();
  if (node_->record) return node_->record->name;
  return node_->consumed ? "released" : "leaf";
}

std::uint64_t DiffTensor::id() const {
  shape();
  return node_->id;
}

// ---- recording ------------------------------------------------------------

DiffTensor make_op(std::string_view name, Shape shape, std::vector<double> value,
                   std::vector<DiffTensor> inputs, BackwardFn backward_fn) {
  if (t_checked) check_finite(name, value);
  bool track = false;
  if (t_grad_enabled) {
    for (const DiffTensor& in : inputs) track = track || in.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(value), track);
  if (track) {
    node->record = std::make_unique<detail::OpRecord>(
        detail::OpRecord{std::string(name), std::move(inputs), std::move(backward_fn)});
  }
  return DiffTensor(std::move(node));
}

namespace {

}  // namespace

namespace detail {
struct NodeAccess {
  static Node* get(const DiffTensor& t) { return t.node_.get(); }
};
}  // namespace detail

namespace {

// Nodes with a live record, inputs before outputs.
std::vector<detail::Node*> topological_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (!root->record) return order;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& inputs = node->record->inputs;
    if (next < inputs.size()) {
      detail::Node* child = detail::NodeAccess::get(inputs[next++]);
      if (child->record && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

Tape Tape::trace(const DiffTensor& output) {
  output.shape();
  Tape tape;
  for (detail::Node* node : topological_order(output.node_.get())) {
    Entry entry{node->record->name, node->id, {}};
    for (const DiffTensor& in : node->record->inputs) entry.inputs.push_back(in.node_->id);
    tape.entries_.push_back(std::move(entry));
  }
  return tape;
}

void backward(const DiffTensor& output) {
  detail::Node* root = output.node_.get();
  if (root == nullptr) throw GraphError("backward: undefined output");
  if (output.size() != 1) {
    throw GraphError("backward: output must be a scalar, got shape " +
                     shape_string(output.shape()));
  }
  if (root->consumed) {
    throw GraphError("backward: graph already released by an earlier backward; "
                     "rebuild the forward pass");
  }
  if (!root->requires_grad) {
    throw GraphError("backward: output is detached (no operand requires grad)");
  }
  if (!root->record) throw GraphError("backward: tape is empty (output is a leaf)");

  std::vector<detail::Node*> order = topological_order(root);
  root->grad.assign(1, 1.0);

  std::vector<std::span<double>> in_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    detail::OpRecord& rec = *node->record;
    if (!node->grad.empty()) {
      in_grads.clear();
      for (DiffTensor& in : rec.inputs) {
        detail::Node* child = in.node_.get();
        if (child->requires_grad) {
          if (child->grad.empty()) child->grad.assign(child->data.size(), 0.0);
          in_grads.emplace_back(child->grad);
        } else {
          in_grads.emplace_back();
        }
      }
      rec.backward(node->grad, in_grads);
    }
  }

  for (detail::Node* node : order) {
    node->record.reset();
    node->consumed = true;
    if (node != root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

CheckedModeGuard::CheckedModeGuard(bool enabled) : previous_(t_checked) {
  t_checked = enabled;
}
CheckedModeGuard::~CheckedModeGuard() { t_checked = previous_; }
bool checked_mode() { return t_checked; }

// ---- primitives -----------------------------------------------------------

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  K().axpy(out.size(), 1.0, b.data().data(), out.data());
  return make_op("add", a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::span<const std::span<double>> gi) {
                   for (const auto& dst : gi) {
                     if (!dst.empty()) K().axpy(g.size(), 1.0, g.data(), dst.data());
                   }
                 });
}

DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  K().axpy(out.size(), -1.0, b.data().data(), out.data());
  return make_op("sub", a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::span<const std::span<double>> gi) {
                   if (!gi[0].empty()) K().axpy(g.size(), 1.0, g.data(), gi[0].data());
                   if (!gi[1].empty()) K().axpy(g.size(), -1.0, g.data(), gi[1].data());
                 });
}

DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  K().hadamard(out.size(), a.data().data(), b.data().data(), out.data());
  return make_op("mul", a.shape(), std::move(out), {a, b},
                 [a, b](std::span<const double> g, std::span<const std::span<double>> gi) {
                   const auto av = a.data();
                   const auto bv = b.data();
                   if (!gi[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * bv[i];
                   }
                   if (!gi[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * av[i];
                   }
                 });
}

DiffTensor scale(const DiffTensor& a, double factor) {
  std::vector<double> out(a.size());
  K().scale(out.size(), factor, a.data().data(), out.data());
  return make_op("scale", a.shape(), std::move(out), {a},
                 [factor](std::span<const double> g, std::span<const std::span<double>> gi) {
                   if (!gi[0].empty()) K().axpy(g.size(), factor, g.data(), gi[0].data());
                 });
}

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  K().gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gi) {
        // dA = dC * B^T, dB = A^T * dC
        if (!gi[0].empty()) K().gemm_nt(g.data(), b.data().data(), gi[0].data(), m, n, k, true);
        if (!gi[1].empty()) K().gemm_tn(a.data().data(), g.data(), gi[1].data(), k, m, n, true);
      });
}

DiffTensor relu(const DiffTensor& a) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_op("relu", a.shape(), std::move(out), {a},
                 [a](std::span<const double> g, std::span<const std::span<double>> gi) {
                   const auto x = a.data();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (x[i] > 0.0) gi[0][i] += g[i];
                   }
                 });
}

DiffTensor exp(const DiffTensor& a) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_op("exp", a.shape(), std::move(out), {a},
                 [saved](std::span<const double> g, std::span<const std::span<double>> gi) {
                   const auto& y = *saved;
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * y[i];
                 });
}

DiffTensor log(const DiffTensor& a) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] <= 0.0) {
      throw NumericError("log: non-positive argument " + std::to_string(av[i]) +
                         " at flat index " + std::to_string(i));
    }
    out[i] = std::log(av[i]);
  }
  return make_op("log", a.shape(), std::move(out), {a},
                 [a](std::span<const double> g, std::span<const std::span<double>> gi) {
                   const auto x = a.data();
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] / x[i];
                 });
}

DiffTensor reduce_sum(const DiffTensor& a) {
  const double total = K().sum(a.size(), a.data().data());
  return make_op("reduce_sum", {1}, {total}, {a},
                 [](std::span<const double> g, std::span<const std::span<double>> gi) {
                   for (double& v : gi[0]) v += g[0];
                 });
}

DiffTensor reduce_mean(const DiffTensor& a) {
  const double n = static_cast<double>(a.size());
  const double mean = K().sum(a.size(), a.data().data()) / n;
  return make_op("reduce_mean", {1}, {mean}, {a},
                 [n](std::span<const double> g, std::span<const std::span<double>> gi) {
                   const double share = g[0] / n;
                   for (double& v : gi[0]) v += share;
                 });
}

DiffTensor concat(std::span<const DiffTensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Shape shape = parts[0].shape();
  const Shape trailing(shape.begin() + 1, shape.end());
  std::size_t lead = 0;
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const DiffTensor& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != shape.size() || !std::equal(trailing.begin(), trailing.end(), ps.begin() + 1)) {
      shape_mismatch("concat", shape, ps);
    }
    lead += ps[0];
    sizes.push_back(p.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  shape[0] = lead;
  return make_op("concat", std::move(shape), std::move(out),
                 std::vector<DiffTensor>(parts.begin(), parts.end()),
                 [sizes](std::span<const double> g, std::span<const std::span<double>> gi) {
                   std::size_t offset = 0;
                   for (std::size_t p = 0; p < sizes.size(); ++p) {
                     if (!gi[p].empty()) {
                       K().axpy(sizes[p], 1.0, g.data() + offset, gi[p].data());
                     }
                     offset += sizes[p];
                   }
                 });
}

DiffTensor concat(std::initializer_list<DiffTensor> parts) {
  return concat(std::span<const DiffTensor>(parts.begin(), parts.size()));
}

DiffTensor reshape(const DiffTensor& a, Shape shape) {
  if (shape_size(shape) != a.size() || shape.empty()) shape_mismatch("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {a},
                 [](std::span<const double> g, std::span<const std::span<double>> gi) {
                   K().axpy(g.size(), 1.0, g.data(), gi[0].data());
                 });
}

DiffTensor squared_l2_norm(const DiffTensor& a) {
  const double total = K().dot(a.size(), a.data().data(), a.data().data());
  return make_op("squared_l2_norm", {1}, {total}, {a},
                 [a](std::span<const double> g, std::span<const std::span<double>> gi) {
                   K().axpy(gi[0].size(), 2.0 * g[0], a.data().data(), gi[0].data());
                 });
}

DiffTensor grad_reverse(const DiffTensor& a, double lambda) {
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("grad_reverse: lambda must be >= 0, got " +
                                std::to_string(lambda));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("grad_reverse", a.shape(), std::move(out), {a},
                 [lambda](std::span<const double> g, std::span<const std::span<double>> gi) {
                   K().axpy(g.size(), -lambda, g.data(), gi[0].data());
                 });
}

DiffTensor expand_rows(const DiffTensor& a, std::size_t rows) {
  const Shape& s = a.shape();
  const bool row_like = s.size() == 1 || (s.size() == 2 && s[0] == 1);
  if (!row_like || rows == 0) {
    throw ShapeError("expand_rows: expected [n] or [1xn] and rows > 0, got " +
                     shape_string(s) + " to " + std::to_string(rows) + " rows");
  }
  const std::size_t n = a.size();
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(a.data().begin(), a.data().end(), out.begin() + r * n);
  }
  return make_op("expand_rows", {rows, n}, std::move(out), {a},
                 [rows, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     K().axpy(n, 1.0, g.data() + r * n, gi[0].data());
                   }
                 });
}

namespace {

struct RowLayout {
  std::size_t rows;
  std::size_t cols;
};

RowLayout row_layout(std::string_view op, const DiffTensor& t) {
  if (t.rank() == 1) return {1, t.size()};
  if (t.rank() == 2) return {t.rows(), t.cols()};
  throw ShapeError(std::string(op) + ": expected 1-D or 2-D logits, got " +
                   shape_string(t.shape()));
}

double temperature_factor(std::string_view op, double tau, SoftmaxConvention convention) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument(std::string(op) + ": tau must be > 0, got " +
                                std::to_string(tau));
  }
  return convention == SoftmaxConvention::kMultiply ? tau : 1.0 / tau;
}

}  // namespace

DiffTensor log_softmax(const DiffTensor& logits, double tau, SoftmaxConvention convention) {
  const RowLayout lay = row_layout("log_softmax", logits);
  const double c = temperature_factor("log_softmax", tau, convention);
  const auto z = logits.data();
  std::vector<double> out(z.size());
  auto probs = std::make_shared<std::vector<double>>(z.size());
  for (std::size_t r = 0; r < lay.rows; ++r) {
    const double* zr = z.data() + r * lay.cols;
    double* outr = out.data() + r * lay.cols;
    double peak = zr[0] * c;
    for (std::size_t j = 1; j < lay.cols; ++j) peak = std::max(peak, zr[j] * c);
    double denom = 0.0;
    for (std::size_t j = 0; j < lay.cols; ++j) denom += std::exp(zr[j] * c - peak);
    const double lse = peak + std::log(denom);
    for (std::size_t j = 0; j < lay.cols; ++j) {
      outr[j] = zr[j] * c - lse;
      (*probs)[r * lay.cols + j] = std::exp(outr[j]);
    }
  }
  return make_op("log_softmax", logits.shape(), std::move(out), {logits},
                 [probs, lay, c](std::span<const double> g,
                                 std::span<const std::span<double>> gi) {
                   const auto& p = *probs;
                   for (std::size_t r = 0; r < lay.rows; ++r) {
                     const std::size_t base = r * lay.cols;
                     double gsum = 0.0;
                     for (std::size_t j = 0; j < lay.cols; ++j) gsum += g[base + j];
                     for (std::size_t j = 0; j < lay.cols; ++j) {
                       gi[0][base + j] += c * (g[base + j] - p[base + j] * gsum);
                     }
                   }
                 });
}

DiffTensor softmax_temperature(const DiffTensor& logits, double tau,
                               SoftmaxConvention convention) {
  const RowLayout lay = row_layout("softmax_temperature", logits);
  const double c = temperature_factor("softmax_temperature", tau, convention);
  const auto z = logits.data();
  std::vector<double> out(z.size());
  for (std::size_t r = 0; r < lay.rows; ++r) {
    const double* zr = z.data() + r * lay.cols;
    double* outr = out.data() + r * lay.cols;
    double peak = zr[0] * c;
    for (std::size_t j = 1; j < lay.cols; ++j) peak = std::max(peak, zr[j] * c);
    double denom = 0.0;
    for (std::size_t j = 0; j < lay.cols; ++j) {
      outr[j] = std::exp(zr[j] * c - peak);
      denom += outr[j];
    }
    for (std::size_t j = 0; j < lay.cols; ++j) outr[j] /= denom;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_op("softmax_temperature", logits.shape(), std::move(out), {logits},
                 [probs, lay, c](std::span<const double> g,
                                 std::span<const std::span<double>> gi) {
                   const auto& p = *probs;
                   for (std::size_t r = 0; r < lay.rows; ++r) {
                     const std::size_t base = r * lay.cols;
                     double pg = 0.0;
                     for (std::size_t j = 0; j < lay.cols; ++j) pg += p[base + j] * g[base + j];
                     for (std::size_t j = 0; j < lay.cols; ++j) {
                       gi[0][base + j] += c * p[base + j] * (g[base + j] - pg);
                     }
                   }
                 });
}

DiffTensor pairwise_sq_dist(const DiffTensor& a, const DiffTensor& b) {
  require_matrix("pairwise_sq_dist", a);
  require_matrix("pairwise_sq_dist", b);
  if (a.cols() != b.cols()) shape_mismatch("pairwise_sq_dist", a.shape(), b.shape());
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  std::vector<double> out(m * n);
  K().pairwise_sq_dist(a.data().data(), b.data().data(), out.data(), m, n, d);
  return make_op(
      "pairwise_sq_dist", {m, n}, std::move(out), {a, b},
      [a, b, m, n, d](std::span<const double> g, std::span<const std::span<double>> gi) {
        // d/da_i = sum_j 2 g_ij (a_i - b_j); d/db_j = -sum_i 2 g_ij (a_i - b_j)
        const auto av = a.data();
        const auto bv = b.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double w = 2.0 * g[i * n + j];
            if (w == 0.0) continue;
            for (std::size_t p = 0; p < d; ++p) {
              const double diff = av[i * d + p] - bv[j * d + p];
              if (!gi[0].empty()) gi[0][i * d + p] += w * diff;
              if (!gi[1].empty()) gi[1][j * d + p] -= w * diff;
            }
          }
        }
      });
}

}  // namespace kdda
