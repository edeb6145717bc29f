#include "dbr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "dbr/kernels.hpp"

namespace dbr {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string format_shape(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// ParamStore

Param& ParamStore::add(const std::string& name, Shape shape) {
    if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    params_.push_back(std::make_unique<Param>(name, std::move(shape)));
    offsets_.push_back(total_);
    total_ += params_.back()->size();
    return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

int64_t ParamStore::offset_of(const Param* p) const {
    for (size_t i = 0; i < params_.size(); ++i)
        if (params_[i].get() == p) return offsets_[i];
    throw std::invalid_argument("ParamStore: parameter '" + p->name + "' not in store");
}

std::vector<double> ParamStore::flat_values() const {
    std::vector<double> out;
    out.reserve(total_);
    for (auto& p : params_) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

void ParamStore::set_flat_values(std::span<const double> v) {
    if (static_cast<int64_t>(v.size()) != total_)
        throw std::invalid_argument("ParamStore: flat size mismatch");
    int64_t off = 0;
    for (auto& p : params_) {
        std::copy(v.begin() + off, v.begin() + off + p->size(), p->value.begin());
        off += p->size();
    }
}

const std::string& ParamStore::name_at(int64_t flat_index) const {
    for (size_t i = 0; i < params_.size(); ++i) {
        if (flat_index < offsets_[i] + params_[i]->size()) return params_[i]->name;
    }
    throw std::invalid_argument("ParamStore: flat index out of range");
}

// ---------------------------------------------------------------------------
// Tensor

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& Tensor::value() const { return tape_->node(id_).val; }
const std::vector<double>& Tensor::grad() const { return tape_->node(id_).adj; }
int64_t Tensor::size() const { return static_cast<int64_t>(value().size()); }

double Tensor::scalar() const {
    if (value().size() != 1) throw std::invalid_argument("Tensor::scalar: tensor is not scalar");
    return value()[0];
}

// ---------------------------------------------------------------------------
// Tape

const char* Tape::op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Const: return "const";
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MatMulNN: return "matmul";
        case Op::MatMulNT: return "matmul_nt";
        case Op::Relu: return "relu";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::LogFloored: return "log_floored";
        case Op::Sum: return "sum";
        case Op::MeanRows: return "mean_rows";
        case Op::RowBias: return "row_bias";
        case Op::Embedding: return "embedding";
        case Op::Pick: return "pick";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

int Tape::push(Node n) {
    if (check_finite_) {
        for (size_t i = 0; i < n.val.size(); ++i) {
            if (!std::isfinite(n.val[i])) {
                std::ostringstream os;
                os << "non-finite value in op '" << op_name(n.op) << "' (node " << nodes_.size()
                   << ", element " << i << ")";
                throw std::runtime_error(os.str());
            }
        }
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_same_tape(Tensor t) const {
    if (t.tape_ != this) throw std::invalid_argument("Tape: tensor belongs to a different tape");
}

Tensor Tape::input(Shape shape, std::vector<double> data, bool needs_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("input: shape " + format_shape(shape) + " does not match data length " +
                                    std::to_string(data.size()));
    Node n;
    n.op = Op::Input;
    n.shape = std::move(shape);
    n.val = std::move(data);
    n.needs_grad = needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
    Tensor t = input(std::move(shape), std::move(data), false);
    node(t.id_).op = Op::Const;
    return t;
}

Tensor Tape::leaf(const Param& p) {
    Node n;
    n.op = Op::Leaf;
    n.shape = p.shape;
    n.val = p.value;
    n.needs_grad = true;
    n.param = &p;
    return wrap(push(std::move(n)));
}

Tensor Tape::add(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + format_shape(a.shape()) + " vs " +
                                    format_shape(b.shape()));
    Node n;
    n.op = Op::Add;
    n.shape = a.shape();
    n.val.resize(a.size());
    kernels::add(a.value().data(), b.value().data(), n.val.data(), a.size());
    n.in0 = a.id_;
    n.in1 = b.id_;
    n.needs_grad = node(a.id_).needs_grad || node(b.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::sub(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: shape mismatch " + format_shape(a.shape()) + " vs " +
                                    format_shape(b.shape()));
    Node n;
    n.op = Op::Sub;
    n.shape = a.shape();
    n.val.resize(a.size());
    kernels::sub(a.value().data(), b.value().data(), n.val.data(), a.size());
    n.in0 = a.id_;
    n.in1 = b.id_;
    n.needs_grad = node(a.id_).needs_grad || node(b.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::mul(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + format_shape(a.shape()) + " vs " +
                                    format_shape(b.shape()));
    Node n;
    n.op = Op::Mul;
    n.shape = a.shape();
    n.val.resize(a.size());
    kernels::mul(a.value().data(), b.value().data(), n.val.data(), a.size());
    n.in0 = a.id_;
    n.in1 = b.id_;
    n.needs_grad = node(a.id_).needs_grad || node(b.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::scale(Tensor a, double c) {
    check_same_tape(a);
    Node n;
    n.op = Op::Scale;
    n.shape = a.shape();
    n.val.resize(a.size());
    for (int64_t i = 0; i < a.size(); ++i) n.val[i] = c * a.value()[i];
    n.in0 = a.id_;
    n.aux = c;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

static void require_2d(const Tensor& t, const char* who) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(who) + ": expected 2-d tensor, got " + format_shape(t.shape()));
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.shape()[0], k = a.shape()[1];
    if (b.shape()[0] != k)
        throw std::invalid_argument("matmul: shape mismatch " + format_shape(a.shape()) + " x " +
                                    format_shape(b.shape()));
    const int nn = b.shape()[1];
    Node n;
    n.op = Op::MatMulNN;
    n.shape = {m, nn};
    n.val.resize(static_cast<int64_t>(m) * nn);
    kernels::matmul_nn(a.value().data(), b.value().data(), n.val.data(), m, k, nn);
    n.in0 = a.id_;
    n.in1 = b.id_;
    n.needs_grad = node(a.id_).needs_grad || node(b.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::matmul_nt(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const int m = a.shape()[0], k = a.shape()[1];
    if (b.shape()[1] != k)
        throw std::invalid_argument("matmul_nt: shape mismatch " + format_shape(a.shape()) + " x " +
                                    format_shape(b.shape()) + "^T");
    const int nn = b.shape()[0];
    Node n;
    n.op = Op::MatMulNT;
    n.shape = {m, nn};
    n.val.resize(static_cast<int64_t>(m) * nn);
    kernels::matmul_nt(a.value().data(), b.value().data(), n.val.data(), m, k, nn);
    n.in0 = a.id_;
    n.in1 = b.id_;
    n.needs_grad = node(a.id_).needs_grad || node(b.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::relu(Tensor a) {
    check_same_tape(a);
    for (double v : a.value()) {
        const double av = std::fabs(v);
        if (av < min_abs_relu_input_) min_abs_relu_input_ = av;
    }
    Node n;
    n.op = Op::Relu;
    n.shape = a.shape();
    n.val.resize(a.size());
    kernels::relu(a.value().data(), n.val.data(), a.size());
    n.in0 = a.id_;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::softmax_rows(Tensor a) {
    check_same_tape(a);
    require_2d(a, "softmax_rows");
    Node n;
    n.op = Op::SoftmaxRows;
    n.shape = a.shape();
    n.val.resize(a.size());
    kernels::softmax_rows(a.value().data(), n.val.data(), a.shape()[0], a.shape()[1]);
    n.in0 = a.id_;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::log_floored(Tensor a) {
    check_same_tape(a);
    Node n;
    n.op = Op::LogFloored;
    n.shape = a.shape();
    n.val.resize(a.size());
    for (int64_t i = 0; i < a.size(); ++i) n.val[i] = std::log(std::max(a.value()[i], kLogFloor));
    n.in0 = a.id_;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::sum(Tensor a) {
    check_same_tape(a);
    double s = 0.0;
    for (double v : a.value()) s += v;
    Node n;
    n.op = Op::Sum;
    n.shape = {1};
    n.val = {s};
    n.in0 = a.id_;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::mean_rows(Tensor a, std::vector<uint8_t> row_mask) {
    check_same_tape(a);
    require_2d(a, "mean_rows");
    const int rows = a.shape()[0], cols = a.shape()[1];
    if (static_cast<int>(row_mask.size()) != rows)
        throw std::invalid_argument("mean_rows: mask length " + std::to_string(row_mask.size()) +
                                    " does not match rows " + std::to_string(rows));
    int count = 0;
    for (uint8_t m : row_mask) count += m ? 1 : 0;
    if (count == 0) throw std::invalid_argument("mean_rows: no rows selected by mask");
    Node n;
    n.op = Op::MeanRows;
    n.shape = {1, cols};
    n.val.assign(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        if (!row_mask[r]) continue;
        const double* src = a.value().data() + static_cast<int64_t>(r) * cols;
        for (int j = 0; j < cols; ++j) n.val[j] += src[j];
    }
    for (int j = 0; j < cols; ++j) n.val[j] /= count;
    n.in0 = a.id_;
    n.aux = count;
    n.mask = std::move(row_mask);
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::row_bias(Tensor a, Tensor bias) {
    check_same_tape(a);
    check_same_tape(bias);
    require_2d(a, "row_bias");
    if (bias.shape().size() != 1 || bias.shape()[0] != a.shape()[1])
        throw std::invalid_argument("row_bias: bias shape " + format_shape(bias.shape()) +
                                    " does not match columns of " + format_shape(a.shape()));
    const int rows = a.shape()[0], cols = a.shape()[1];
    Node n;
    n.op = Op::RowBias;
    n.shape = a.shape();
    n.val.resize(a.size());
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j)
            n.val[static_cast<int64_t>(r) * cols + j] = a.value()[static_cast<int64_t>(r) * cols + j] + bias.value()[j];
    n.in0 = a.id_;
    n.in1 = bias.id_;
    n.needs_grad = node(a.id_).needs_grad || node(bias.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::embedding(const Param& table, std::vector<int> ids) {
    if (table.shape.size() != 2) throw std::invalid_argument("embedding: table must be 2-d");
    const int vocab = table.shape[0], dim = table.shape[1];
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw std::invalid_argument("embedding: token id " + std::to_string(id) + " out of range [0," +
                                        std::to_string(vocab) + ")");
    Node n;
    n.op = Op::Embedding;
    n.shape = {static_cast<int>(ids.size()), dim};
    n.val.resize(static_cast<int64_t>(ids.size()) * dim);
    for (size_t t = 0; t < ids.size(); ++t)
        std::memcpy(n.val.data() + t * dim, table.value.data() + static_cast<int64_t>(ids[t]) * dim,
                    sizeof(double) * dim);
    n.param = &table;
    n.ids = std::move(ids);
    n.needs_grad = true;
    return wrap(push(std::move(n)));
}

Tensor Tape::pick(Tensor a, int flat_index) {
    check_same_tape(a);
    if (flat_index < 0 || flat_index >= a.size())
        throw std::invalid_argument("pick: index " + std::to_string(flat_index) + " out of range for " +
                                    format_shape(a.shape()));
    Node n;
    n.op = Op::Pick;
    n.shape = {1};
    n.val = {a.value()[flat_index]};
    n.in0 = a.id_;
    n.aux = flat_index;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

Tensor Tape::reshape(Tensor a, Shape shape) {
    check_same_tape(a);
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + format_shape(a.shape()) + " as " +
                                    format_shape(shape));
    Node n;
    n.op = Op::Reshape;
    n.shape = std::move(shape);
    n.val = a.value();
    n.in0 = a.id_;
    n.needs_grad = node(a.id_).needs_grad;
    return wrap(push(std::move(n)));
}

void Tape::ensure_adj(int id) {
    Node& n = node(id);
    if (n.adj.empty()) n.adj.assign(n.val.size(), 0.0);
}

void Tape::backward(Tensor loss) { backward_impl(loss, nullptr, {}); }

void Tape::backward(Tensor loss, const ParamStore& store, std::span<double> param_grads) {
    if (static_cast<int64_t>(param_grads.size()) != store.total_size())
        throw std::invalid_argument("backward: gradient buffer size mismatch");
    backward_impl(loss, &store, param_grads);
}

void Tape::backward_impl(Tensor loss, const ParamStore* store, std::span<double> param_grads) {
    check_same_tape(loss);
    if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + format_shape(loss.shape()));

    for (Node& n : nodes_) n.adj.clear();
    backward_visits_ = 0;

    ensure_adj(loss.id_);
    node(loss.id_).adj[0] = 1.0;

    for (int id = loss.id_; id >= 0; --id) {
        Node& n = node(id);
        ++backward_visits_;
        if (!n.needs_grad || n.adj.empty()) continue;
        const std::vector<double>& d = n.adj;
        switch (n.op) {
            case Op::Input:
            case Op::Const:
                break;
            case Op::Leaf:
                if (store != nullptr) {
                    const int64_t off = store->offset_of(n.param);
                    kernels::axpy(1.0, d.data(), param_grads.data() + off, n.val.size());
                }
                break;
            case Op::Embedding:
                if (store != nullptr) {
                    const int64_t off = store->offset_of(n.param);
                    const int dim = n.shape[1];
                    for (size_t t = 0; t < n.ids.size(); ++t)
                        kernels::serial::axpy(1.0, d.data() + t * dim,
                                              param_grads.data() + off + static_cast<int64_t>(n.ids[t]) * dim, dim);
                }
                break;
            case Op::Add: {
                if (node(n.in0).needs_grad) {
                    ensure_adj(n.in0);
                    kernels::axpy(1.0, d.data(), node(n.in0).adj.data(), d.size());
                }
                if (node(n.in1).needs_grad) {
                    ensure_adj(n.in1);
                    kernels::axpy(1.0, d.data(), node(n.in1).adj.data(), d.size());
                }
                break;
            }
            case Op::Sub: {
                if (node(n.in0).needs_grad) {
                    ensure_adj(n.in0);
                    kernels::axpy(1.0, d.data(), node(n.in0).adj.data(), d.size());
                }
                if (node(n.in1).needs_grad) {
                    ensure_adj(n.in1);
                    kernels::axpy(-1.0, d.data(), node(n.in1).adj.data(), d.size());
                }
                break;
            }
            case Op::Mul: {
                const Node& a = node(n.in0);
                const Node& b = node(n.in1);
                if (a.needs_grad) {
                    ensure_adj(n.in0);
                    for (size_t i = 0; i < d.size(); ++i) node(n.in0).adj[i] += d[i] * b.val[i];
                }
                if (b.needs_grad) {
                    ensure_adj(n.in1);
                    for (size_t i = 0; i < d.size(); ++i) node(n.in1).adj[i] += d[i] * a.val[i];
                }
                break;
            }
            case Op::Scale:
                ensure_adj(n.in0);
                kernels::axpy(n.aux, d.data(), node(n.in0).adj.data(), d.size());
                break;
            case Op::MatMulNN: {
                const Node& a = node(n.in0);
                const Node& b = node(n.in1);
                const int m = a.shape[0], k = a.shape[1], nn = b.shape[1];
                if (node(n.in0).needs_grad) {
                    ensure_adj(n.in0);
                    kernels::matmul_nt(d.data(), b.val.data(), node(n.in0).adj.data(), m, nn, k, true);
                }
                if (node(n.in1).needs_grad) {
                    ensure_adj(n.in1);
                    kernels::matmul_tn(a.val.data(), d.data(), node(n.in1).adj.data(), k, m, nn, true);
                }
                break;
            }
            case Op::MatMulNT: {
                // c = a * b^T, a:(m,k) b:(nn,k) c/d:(m,nn)
                const Node& a = node(n.in0);
                const Node& b = node(n.in1);
                const int m = a.shape[0], k = a.shape[1], nn = b.shape[0];
                if (node(n.in0).needs_grad) {
                    ensure_adj(n.in0);
                    kernels::matmul_nn(d.data(), b.val.data(), node(n.in0).adj.data(), m, nn, k, true);
                }
                if (node(n.in1).needs_grad) {
                    ensure_adj(n.in1);
                    kernels::matmul_tn(d.data(), a.val.data(), node(n.in1).adj.data(), nn, m, k, true);
                }
                break;
            }
            case Op::Relu:
                ensure_adj(n.in0);
                kernels::relu_backward(node(n.in0).val.data(), d.data(), node(n.in0).adj.data(), d.size());
                break;
            case Op::SoftmaxRows:
                ensure_adj(n.in0);
                kernels::softmax_rows_backward(n.val.data(), d.data(), node(n.in0).adj.data(), n.shape[0], n.shape[1]);
                break;
            case Op::LogFloored: {
                ensure_adj(n.in0);
                const Node& a = node(n.in0);
                for (size_t i = 0; i < d.size(); ++i)
                    if (a.val[i] > kLogFloor) node(n.in0).adj[i] += d[i] / a.val[i];
                break;
            }
            case Op::Sum: {
                ensure_adj(n.in0);
                std::vector<double>& da = node(n.in0).adj;
                for (double& v : da) v += d[0];
                break;
            }
            case Op::MeanRows: {
                ensure_adj(n.in0);
                const int rows = node(n.in0).shape[0], cols = node(n.in0).shape[1];
                const double inv = 1.0 / n.aux;
                for (int r = 0; r < rows; ++r) {
                    if (!n.mask[r]) continue;
                    double* dst = node(n.in0).adj.data() + static_cast<int64_t>(r) * cols;
                    for (int j = 0; j < cols; ++j) dst[j] += d[j] * inv;
                }
                break;
            }
            case Op::RowBias: {
                const int rows = n.shape[0], cols = n.shape[1];
                if (node(n.in0).needs_grad) {
                    ensure_adj(n.in0);
                    kernels::axpy(1.0, d.data(), node(n.in0).adj.data(), d.size());
                }
                if (node(n.in1).needs_grad) {
                    ensure_adj(n.in1);
                    std::vector<double>& db = node(n.in1).adj;
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j) db[j] += d[static_cast<int64_t>(r) * cols + j];
                }
                break;
            }
            case Op::Pick:
                ensure_adj(n.in0);
                node(n.in0).adj[static_cast<int64_t>(n.aux)] += d[0];
                break;
            case Op::Reshape:
                ensure_adj(n.in0);
                kernels::axpy(1.0, d.data(), node(n.in0).adj.data(), d.size());
                break;
        }
    }
}

// ---------------------------------------------------------------------------
// Finite differences

FiniteDiffReport finite_diff_check(const std::function<Tensor(Tape&)>& build_loss, ParamStore& store,
                                   double epsilon, double kink_tol) {
    if (epsilon <= 0.0) throw std::invalid_argument("finite_diff_check: epsilon must be positive");

    std::vector<double> analytic(store.total_size(), 0.0);
    double base_min_kink;
    {
        Tape tape;
        tape.set_check_finite(true);
        Tensor loss = build_loss(tape);
        tape.backward(loss, store, analytic);
        base_min_kink = tape.min_abs_relu_input();
    }

    FiniteDiffReport report;
    std::vector<double> flat = store.flat_values();
    for (int64_t i = 0; i < store.total_size(); ++i) {
        const double saved = flat[i];
        double evals[2];
        double min_kink = base_min_kink;
        for (int s = 0; s < 2; ++s) {
            flat[i] = saved + (s == 0 ? epsilon : -epsilon);
            store.set_flat_values(flat);
            Tape tape;
            tape.set_check_finite(true);
            evals[s] = build_loss(tape).scalar();
            min_kink = std::min(min_kink, tape.min_abs_relu_input());
        }
        flat[i] = saved;
        store.set_flat_values(flat);
        if (min_kink < kink_tol) {
            ++report.skipped_kinks;
            continue;
        }
        const double fd = (evals[0] - evals[1]) / (2.0 * epsilon);
        const double rel = std::fabs(analytic[i] - fd) / std::max(std::fabs(fd), 1e-8);
        if (rel > report.max_rel_error) report.max_rel_error = rel;
        ++report.checked;
    }
    return report;
}

}  // namespace dbr
