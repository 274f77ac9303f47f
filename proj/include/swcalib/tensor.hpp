#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace swcalib {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Engine-side allocation tracker. Counts bytes held by tensor value and
// gradient buffers; peak is what reports quote as "peak memory".
struct MemoryStats {
    std::size_t current_bytes = 0;
    std::size_t peak_bytes = 0;
};
MemoryStats memory_stats();
void reset_peak_memory();

namespace detail {
void track_alloc(std::size_t bytes);
void track_free(std::size_t bytes);

template <typename T>
struct TrackedAllocator {
    using value_type = T;
    TrackedAllocator() noexcept = default;
    template <typename U>
    TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        track_alloc(n * sizeof(T));
        return std::allocator<T>{}.allocate(n);
    }
    void deallocate(T* p, std::size_t n) noexcept {
        track_free(n * sizeof(T));
        std::allocator<T>{}.deallocate(p, n);
    }
    template <typename U>
    bool operator==(const TrackedAllocator<U>&) const noexcept {
        return true;
    }
};
}  // namespace detail

using Buffer = std::vector<double, detail::TrackedAllocator<double>>;

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

// One value in the define-by-run graph. Values are immutable once produced;
// only `grad` changes after construction (leaf parameters are the exception,
// updated in place by the optimizer between passes).
struct Node {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<NodePtr> inputs;
    BackwardFn backward_fn;

    bool is_leaf() const { return !backward_fn; }
    // Allocates the gradient buffer on first use.
    std::span<double> grad_buffer();
};

class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // 1-D tensor.
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    // 2-D tensor from nested rows; rows must have equal length.
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::vector<double> to_vector() const;
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::vector<double> grad_vector() const;
    void zero_grad();

    const std::string& op() const;
    bool is_leaf() const;

    // Same values, no history, requires_grad = false.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    // Mutable view of a leaf's values, for optimizer updates.
    std::span<double> leaf_data();

    Node* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

   private:
    NodePtr node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

// Builds an op result. Runs the forward finiteness check, and records the
// inputs and backward rule only when grad mode is on and an input needs it.
Tensor make_result(std::string op, Shape shape, Buffer data, std::vector<Tensor> inputs, BackwardFn backward_fn);

// Reverse-topological replay of the recorded graph beneath a root.
class Tape {
   public:
    static Tape record(const Tensor& root);

    // Inputs precede the ops that consume them.
    const std::vector<Node*>& nodes() const { return nodes_; }
    std::vector<std::string> op_names() const;

    // Zeroes intermediate grads, seeds root with 1, then runs each backward
    // rule exactly once in reverse order. Leaf grads accumulate.
    void run_backward();

   private:
    std::vector<Node*> nodes_;
    NodePtr root_;
};

// Root must hold exactly one element.
void backward(const Tensor& root);

}  // namespace swcalib
