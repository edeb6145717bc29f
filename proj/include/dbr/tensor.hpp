#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dbr/common.hpp"

namespace dbr {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);

// Floor applied inside log_floored; keeps divergences and cross-entropy finite.
inline constexpr double kLogFloor = 1e-12;

// A named trainable array. Lives outside any tape; tapes bind to it via
// Tape::leaf and gradients are written to a flat buffer owned by the caller.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;

    Param(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)), value(numel(shape), 0.0) {}
    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void init_uniform(Rng& rng, double bound) {
        for (double& v : value) v = rng.symmetric(bound);
    }
};

// Owns a model's parameters and assigns each a fixed offset into one flat
// gradient vector, so per-example gradients can be summed deterministically
// and the optimizer can treat the model as a single array.
class ParamStore {
  public:
    Param& add(const std::string& name, Shape shape);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;

    int64_t total_size() const { return total_; }
    int64_t offset_of(const Param* p) const;
    const std::vector<std::unique_ptr<Param>>& params() const { return params_; }

    std::vector<double> flat_values() const;
    void set_flat_values(std::span<const double> v);
    // Name of the parameter owning flat index i.
    const std::string& name_at(int64_t flat_index) const;

  private:
    std::vector<std::unique_ptr<Param>> params_;
    std::vector<int64_t> offsets_;
    int64_t total_ = 0;
};

class Tape;

// Handle to a node on a tape. Valid as long as the tape is alive.
class Tensor {
  public:
    Tensor() = default;
    bool valid() const { return tape_ != nullptr; }
    const Shape& shape() const;
    const std::vector<double>& value() const;
    // Adjoint accumulated by the last backward() call (inputs and
    // intermediates; parameter leaves report through the flat buffer).
    const std::vector<double>& grad() const;
    double scalar() const;
    int64_t size() const;

  private:
    friend class Tape;
    Tensor(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Record of primitive operations in issue order (which is topological by
// construction: an op can only reference already-created tensors). backward()
// replays the record once, in reverse.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves.
    Tensor input(Shape shape, std::vector<double> data, bool needs_grad = true);
    Tensor constant(Shape shape, std::vector<double> data);
    Tensor leaf(const Param& p);

    // Primitives.
    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);
    Tensor scale(Tensor a, double c);
    Tensor matmul(Tensor a, Tensor b);     // (m,k)x(k,n)
    Tensor matmul_nt(Tensor a, Tensor b);  // (m,k)x(n,k)^T
    Tensor relu(Tensor a);
    Tensor softmax_rows(Tensor a);
    Tensor log_floored(Tensor a);
    Tensor sum(Tensor a);  // -> shape {1}
    // Mean over rows with row_mask[r] != 0; rows with 0 contribute nothing.
    Tensor mean_rows(Tensor a, std::vector<uint8_t> row_mask);
    Tensor row_bias(Tensor a, Tensor bias);  // (m,n) + (n,) per row
    Tensor embedding(const Param& table, std::vector<int> ids);
    Tensor pick(Tensor a, int flat_index);  // -> shape {1}
    Tensor reshape(Tensor a, Shape shape);

    // Reverse sweep from a scalar loss. Parameter-leaf gradients are
    // accumulated into param_grads at ParamStore offsets; pass the overload
    // without a store when only input gradients are wanted.
    void backward(Tensor loss);
    void backward(Tensor loss, const ParamStore& store, std::span<double> param_grads);

    size_t size() const { return nodes_.size(); }
    size_t backward_visits() const { return backward_visits_; }
    // Smallest |pre-activation| seen by any relu during forward; used by the
    // finite-difference checker to flag kink-adjacent evaluations.
    double min_abs_relu_input() const { return min_abs_relu_input_; }
    void set_check_finite(bool on) { check_finite_ = on; }

  private:
    friend class Tensor;

    enum class Op {
        Input, Const, Leaf, Add, Sub, Mul, Scale, MatMulNN, MatMulNT,
        Relu, SoftmaxRows, LogFloored, Sum, MeanRows, RowBias, Embedding,
        Pick, Reshape,
    };
    static const char* op_name(Op op);

    struct Node {
        Op op;
        Shape shape;
        std::vector<double> val;
        std::vector<double> adj;
        int in0 = -1;
        int in1 = -1;
        bool needs_grad = false;
        double aux = 0.0;            // scale factor / pick index / mask count
        const Param* param = nullptr;
        std::vector<int> ids;        // embedding lookups
        std::vector<uint8_t> mask;   // mean_rows row mask
    };

    int push(Node n);
    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }
    Tensor wrap(int id) { return Tensor(this, id); }
    void check_same_tape(Tensor t) const;
    void ensure_adj(int id);
    void backward_impl(Tensor loss, const ParamStore* store, std::span<double> param_grads);

    std::vector<Node> nodes_;
    size_t backward_visits_ = 0;
    double min_abs_relu_input_ = std::numeric_limits<double>::infinity();
    bool check_finite_ = false;
};

// Max relative error between analytic gradients and central finite
// differences over every parameter entry in `store`. build_loss must
// construct the scalar loss from fresh tape state on each call. Entries whose
// evaluation passes within kink_tol of a relu kink are excluded.
struct FiniteDiffReport {
    double max_rel_error = 0.0;
    int64_t checked = 0;
    int64_t skipped_kinks = 0;
};
FiniteDiffReport finite_diff_check(const std::function<Tensor(Tape&)>& build_loss,
                                   ParamStore& store, double epsilon,
                                   double kink_tol = 1e-5);

}  // namespace dbr
