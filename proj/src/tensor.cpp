#include "swcalib/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "swcalib/errors.hpp"

namespace swcalib {

namespace {

std::atomic<std::size_t> g_current_bytes{0};
std::atomic<std::size_t> g_peak_bytes{0};

thread_local bool t_grad_enabled = true;

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

namespace detail {

void track_alloc(std::size_t bytes) {
    const std::size_t now = g_current_bytes.fetch_add(bytes) + bytes;
    std::size_t peak = g_peak_bytes.load();
    while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
    }
}

void track_free(std::size_t bytes) { g_current_bytes.fetch_sub(bytes); }

}  // namespace detail

MemoryStats memory_stats() { return {g_current_bytes.load(), g_peak_bytes.load()}; }

void reset_peak_memory() { g_peak_bytes.store(g_current_bytes.load()); }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::span<double> Node::grad_buffer() {
    if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                             " values");
    }
    if (!all_finite(values)) throw NonFiniteError("leaf", "forward");
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data.assign(values.begin(), values.end());
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("matrix rows have unequal lengths");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(flat), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw UsageError("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    shape();
    return node_->data;
}

std::vector<double> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw DimensionError("at(row, col) needs a 2-D tensor");
    return node_->data[row * shape()[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return node_->grad;
}

std::vector<double> Tensor::grad_vector() const {
    if (!has_grad()) return std::vector<double>(numel(), 0.0);
    return {node_->grad.begin(), node_->grad.end()};
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::op() const {
    shape();
    return node_->op;
}

bool Tensor::is_leaf() const { return node_ && node_->is_leaf(); }

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
    auto n = std::make_shared<Node>();
    n->shape = shape();
    n->data = node_->data;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

std::span<double> Tensor::leaf_data() {
    if (!is_leaf()) throw UsageError("leaf_data() on non-leaf tensor produced by '" + op() + "'");
    return node_->data;
}

// ---------------------------------------------------------------------------
// Grad mode

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(std::string op, Shape shape, Buffer data, std::vector<Tensor> inputs, BackwardFn backward_fn) {
    if (!all_finite(data)) throw NonFiniteError(op, "forward");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = std::move(op);
    const bool needs_grad =
        t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (needs_grad) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& t : inputs) n->inputs.push_back(t.node_ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Tape

Tape Tape::record(const Tensor& root) {
    Tape tape;
    tape.root_ = root.node_ptr();
    if (!root.requires_grad()) return tape;

    // Iterative post-order DFS over nodes that carry gradients.
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            tape.nodes_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

std::vector<std::string> Tape::op_names() const {
    std::vector<std::string> names;
    names.reserve(nodes_.size());
    for (auto* n : nodes_) names.push_back(n->op);
    return names;
}

void Tape::run_backward() {
    if (nodes_.empty()) return;
    for (auto* n : nodes_) {
        if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    Node* root = nodes_.back();
    root->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf() || n->grad.empty()) continue;
        n->backward_fn(*n);
        for (auto& in : n->inputs) {
            if (in->requires_grad && !all_finite(in->grad)) throw NonFiniteError(n->op, "backward");
        }
    }
}

void backward(const Tensor& root) {
    if (root.numel() != 1) throw UsageError("backward() needs a scalar root, got " + shape_str(root.shape()));
    if (!root.requires_grad()) throw UsageError("backward() root does not depend on any tensor requiring grad");
    Tape::record(root).run_backward();
}

}  // namespace swcalib
