#include "kgner/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace kgner {

namespace {

std::atomic<int64_t> g_next_node_id{1};

size_t shape_size(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("empty shape");
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

struct Tensor::Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // lazily sized
    bool requires_grad = false;
    int64_t node_id = 0;
    std::vector<Tensor> parents;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    size_t n = shape_size(shape);
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data.assign(n, 0.0);
    impl->requires_grad = requires_grad;
    impl->node_id = g_next_node_id.fetch_add(1);
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    size_t n = shape_size(shape);
    if (n != data.size()) {
        throw DimensionError("data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    impl->node_id = g_next_node_id.fetch_add(1);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
size_t Tensor::size() const { return impl_->data.size(); }
bool Tensor::requires_grad() const { return impl_->requires_grad; }
int64_t Tensor::node_id() const { return impl_->node_id; }
const std::vector<double>& Tensor::data() const { return impl_->data; }
std::vector<double>& Tensor::raw_data() { return impl_->data; }

const std::vector<double>& Tensor::grad() const {
    impl_->ensure_grad();
    return impl_->grad;
}

double Tensor::value() const {
    if (size() != 1) throw DimensionError("value() on non-scalar tensor " + shape_string());
    return impl_->data[0];
}

double Tensor::at(std::vector<int> idx) const {
    if (idx.size() != impl_->shape.size()) {
        throw DimensionError("index rank mismatch for tensor " + shape_string());
    }
    size_t flat = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= impl_->shape[i]) throw DimensionError("index out of range");
        flat = flat * static_cast<size_t>(impl_->shape[i]) + static_cast<size_t>(idx[i]);
    }
    return impl_->data[flat];
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

std::string Tensor::shape_string() const { return shape_to_string(impl_->shape); }

void Tensor::backward() const {
    if (size() != 1) {
        throw DimensionError("backward() requires a scalar root, got " + shape_string());
    }
    // Topological order over the sub-DAG that requires gradients. Raw
    // pointers are valid for the duration: the root transitively owns
    // every ancestor through the parents vectors.
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, size_t>> stack;
    stack.push_back({impl_.get(), 0});
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Impl* parent = node->parents[next].impl();
            ++next;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Impl* node : order) node->ensure_grad();
    impl_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

namespace {

using Impl = Tensor::Impl;

// Creates the op result; parents are retained only when a gradient will
// flow, so inference graphs stay flat.
Tensor make_node(std::vector<int> shape, std::vector<double> data,
                 std::initializer_list<Tensor> parents) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        out.impl()->requires_grad = true;
        out.impl()->parents.assign(parents.begin(), parents.end());
    }
    return out;
}

Tensor make_node(std::vector<int> shape, std::vector<double> data,
                 const std::vector<Tensor>& parents) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        out.impl()->requires_grad = true;
        out.impl()->parents = parents;
    }
    return out;
}

void set_backward(Tensor& out, std::function<void()> fn) {
    if (out.requires_grad()) out.impl()->backward_fn = std::move(fn);
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + t.shape_string());
    }
}

}  // namespace

void ConvSpec::validate() const {
    if (kernel_h < 1 || kernel_w < 1 || kernel_h > 5 || kernel_w > 5) {
        throw ConfigError("conv kernel must be within the 5x5 window bound, got " +
                          std::to_string(kernel_h) + "x" + std::to_string(kernel_w));
    }
    if (stride_h < 1 || stride_w < 1) throw ConfigError("conv strides must be positive");
    if (out_channels < 1) throw ConfigError("conv out_channels must be positive");
}

int ConvSpec::out_h(int h) const { return (h - 1) / stride_h + 1; }
int ConvSpec::out_w(int w) const { return (w - 1) / stride_w + 1; }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (k != b.shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + a.shape_string() + " and " +
                             b.shape_string());
    }
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        for (int i = 0; i < m; ++i) {
            const double* arow = A + static_cast<size_t>(i) * k;
            double* crow = out.data() + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = B + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    Tensor result = make_node({m, n}, std::move(out), {a, b});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    Impl* pb = b.impl();
    set_backward(result, [po, pa, pb, m, k, n]() {
        const double* g = po->grad.data();
        if (pa->requires_grad) {
            pa->ensure_grad();
            const double* B = pb->data.data();
            double* da = pa->grad.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<size_t>(i) * n;
                double* darow = da + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const double* brow = B + static_cast<size_t>(kk) * n;
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    darow[kk] += acc;
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            const double* A = pa->data.data();
            double* db = pb->grad.data();
            for (int i = 0; i < m; ++i) {
                const double* arow = A + static_cast<size_t>(i) * k;
                const double* grow = g + static_cast<size_t>(i) * n;
                for (int kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    double* dbrow = db + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        }
    });
    return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tensor result = make_node(a.shape(), std::move(out), {a, b});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    Impl* pb = b.impl();
    set_backward(result, [po, pa, pb]() {
        const auto& g = po->grad;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) pa->grad[i] += g[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) pb->grad[i] += g[i];
        }
    });
    return result;
}

Tensor add_bias(const Tensor& m, const Tensor& bias) {
    require_rank(m, 2, "add_bias");
    require_rank(bias, 1, "add_bias");
    const int rows = m.shape()[0], cols = m.shape()[1];
    if (bias.shape()[0] != cols) {
        throw DimensionError("add_bias: bias " + bias.shape_string() + " does not match " +
                             m.shape_string());
    }
    std::vector<double> out(m.size());
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            out[static_cast<size_t>(i) * cols + j] =
                m.data()[static_cast<size_t>(i) * cols + j] + bias.data()[static_cast<size_t>(j)];
        }
    }
    Tensor result = make_node(m.shape(), std::move(out), {m, bias});
    Impl* po = result.impl();
    Impl* pm = m.impl();
    Impl* pbias = bias.impl();
    set_backward(result, [po, pm, pbias, rows, cols]() {
        const auto& g = po->grad;
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) pm->grad[i] += g[i];
        }
        if (pbias->requires_grad) {
            pbias->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    pbias->grad[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * cols + j];
                }
            }
        }
    });
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tensor result = make_node(a.shape(), std::move(out), {a, b});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    Impl* pb = b.impl();
    set_backward(result, [po, pa, pb]() {
        const auto& g = po->grad;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) pa->grad[i] += g[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) pb->grad[i] += g[i] * pa->data[i];
        }
    });
    return result;
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    Tensor result = make_node(a.shape(), std::move(out), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa, factor]() {
        pa->ensure_grad();
        for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i] * factor;
    });
    return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const int rank = parts[0].rank();
    if (rank > 2 || axis < 0 || axis >= rank) {
        throw DimensionError("concat: only rank 1-2 tensors along an existing axis");
    }
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw DimensionError("concat: mixed ranks");
        for (int d = 0; d < rank; ++d) {
            if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
                throw DimensionError("concat: shape mismatch " + p.shape_string() + " vs " +
                                     parts[0].shape_string());
            }
        }
    }
    std::vector<int> shape = parts[0].shape();
    shape[axis] = 0;
    for (const Tensor& p : parts) shape[axis] += p.shape()[axis];

    std::vector<double> out(shape_size(shape));
    if (rank == 1 || axis == 0) {
        size_t offset = 0;
        for (const Tensor& p : parts) {
            std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<long>(offset));
            offset += p.size();
        }
    } else {
        const int rows = shape[0], cols = shape[1];
        int col0 = 0;
        for (const Tensor& p : parts) {
            const int pc = p.shape()[1];
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < pc; ++j) {
                    out[static_cast<size_t>(i) * cols + col0 + j] =
                        p.data()[static_cast<size_t>(i) * pc + j];
                }
            }
            col0 += pc;
        }
    }

    Tensor result = make_node(shape, std::move(out), parts);
    Impl* po = result.impl();
    std::vector<Impl*> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    const std::vector<int> out_shape = result.shape();
    set_backward(result, [po, impls, axis, rank, out_shape]() {
        const auto& g = po->grad;
        if (rank == 1 || axis == 0) {
            size_t offset = 0;
            for (Impl* p : impls) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += g[offset + i];
                }
                offset += p->data.size();
            }
        } else {
            const int rows = out_shape[0], cols = out_shape[1];
            int col0 = 0;
            for (Impl* p : impls) {
                const int pc = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < rows; ++i) {
                        for (int j = 0; j < pc; ++j) {
                            p->grad[static_cast<size_t>(i) * pc + j] +=
                                g[static_cast<size_t>(i) * cols + col0 + j];
                        }
                    }
                }
                col0 += pc;
            }
        }
    });
    return result;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: size mismatch " + a.shape_string() + " -> " +
                             shape_to_string(shape));
    }
    Tensor result = make_node(std::move(shape), a.data(), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa]() {
        pa->ensure_grad();
        for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
    });
    return result;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const int rows = a.shape()[0], cols = a.shape()[1];
    std::vector<double> out(a.size());
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            out[static_cast<size_t>(j) * rows + i] = a.data()[static_cast<size_t>(i) * cols + j];
        }
    }
    Tensor result = make_node({cols, rows}, std::move(out), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa, rows, cols]() {
        pa->ensure_grad();
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                pa->grad[static_cast<size_t>(i) * cols + j] +=
                    po->grad[static_cast<size_t>(j) * rows + i];
            }
        }
    });
    return result;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    require_rank(a, 2, "slice_cols");
    const int rows = a.shape()[0], cols = a.shape()[1];
    if (start < 0 || len < 1 || start + len > cols) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of " + a.shape_string());
    }
    std::vector<double> out(static_cast<size_t>(rows) * len);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < len; ++j) {
            out[static_cast<size_t>(i) * len + j] =
                a.data()[static_cast<size_t>(i) * cols + start + j];
        }
    }
    Tensor result = make_node({rows, len}, std::move(out), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa, rows, cols, start, len]() {
        pa->ensure_grad();
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < len; ++j) {
                pa->grad[static_cast<size_t>(i) * cols + start + j] +=
                    po->grad[static_cast<size_t>(i) * len + j];
            }
        }
    });
    return result;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    require_rank(table, 2, "gather_rows");
    const int rows = table.shape()[0], cols = table.shape()[1];
    if (ids.empty()) throw DimensionError("gather_rows: empty id list");
    for (int id : ids) {
        if (id < 0 || id >= rows) {
            throw DimensionError("gather_rows: id " + std::to_string(id) + " out of " +
                                 table.shape_string());
        }
    }
    std::vector<double> out(ids.size() * static_cast<size_t>(cols));
    for (size_t t = 0; t < ids.size(); ++t) {
        const double* src = table.data().data() + static_cast<size_t>(ids[t]) * cols;
        std::copy(src, src + cols, out.begin() + static_cast<long>(t * cols));
    }
    Tensor result = make_node({static_cast<int>(ids.size()), cols}, std::move(out), {table});
    Impl* po = result.impl();
    Impl* pt = table.impl();
    std::vector<int> ids_copy = ids;
    set_backward(result, [po, pt, ids_copy, cols]() {
        pt->ensure_grad();
        for (size_t t = 0; t < ids_copy.size(); ++t) {
            double* dst = pt->grad.data() + static_cast<size_t>(ids_copy[t]) * cols;
            const double* src = po->grad.data() + t * cols;
            for (int j = 0; j < cols; ++j) dst[j] += src[j];
        }
    });
    return result;
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    Tensor result = make_node({1}, {total}, {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa]() {
        pa->ensure_grad();
        const double g = po->grad[0];
        for (double& v : pa->grad) v += g;
    });
    return result;
}

Tensor softmax(const Tensor& a) {
    const int cols = a.shape().back();
    const size_t rows = a.size() / static_cast<size_t>(cols);
    std::vector<double> out(a.size());
    for (size_t i = 0; i < rows; ++i) {
        const double* x = a.data().data() + i * cols;
        double* y = out.data() + i * cols;
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < cols; ++j) y[j] /= sum;
    }
    Tensor result = make_node(a.shape(), std::move(out), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa, rows, cols]() {
        pa->ensure_grad();
        for (size_t i = 0; i < rows; ++i) {
            const double* y = po->data.data() + i * cols;
            const double* g = po->grad.data() + i * cols;
            double* dx = pa->grad.data() + i * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
            for (int j = 0; j < cols; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank(gain, 1, "layer_norm");
    require_rank(bias, 1, "layer_norm");
    if (eps <= 0.0) throw DimensionError("layer_norm: eps must be positive");
    const int cols = x.shape().back();
    if (gain.shape()[0] != cols || bias.shape()[0] != cols) {
        throw DimensionError("layer_norm: gain/bias " + gain.shape_string() + "/" +
                             bias.shape_string() + " do not match " + x.shape_string());
    }
    const size_t rows = x.size() / static_cast<size_t>(cols);
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (size_t i = 0; i < rows; ++i) {
        const double* xi = x.data().data() + i * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += xi[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= cols;
        const double s = 1.0 / std::sqrt(var + eps);
        inv_std[i] = s;
        for (int j = 0; j < cols; ++j) {
            const double h = (xi[j] - mean) * s;
            xhat[i * cols + j] = h;
            out[i * cols + j] = gain.data()[static_cast<size_t>(j)] * h +
                                bias.data()[static_cast<size_t>(j)];
        }
    }
    Tensor result = make_node(x.shape(), std::move(out), {x, gain, bias});
    Impl* po = result.impl();
    Impl* px = x.impl();
    Impl* pg = gain.impl();
    Impl* pb = bias.impl();
    auto xhat_keep = std::make_shared<std::vector<double>>(std::move(xhat));
    auto inv_keep = std::make_shared<std::vector<double>>(std::move(inv_std));
    set_backward(result, [po, px, pg, pb, xhat_keep, inv_keep, rows, cols]() {
        const auto& g = po->grad;
        const auto& xh = *xhat_keep;
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (size_t i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    pg->grad[static_cast<size_t>(j)] += g[i * cols + j] * xh[i * cols + j];
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    pb->grad[static_cast<size_t>(j)] += g[i * cols + j];
                }
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < rows; ++i) {
                double mean_wg = 0.0, mean_wgx = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double wg = pg->data[static_cast<size_t>(j)] * g[i * cols + j];
                    mean_wg += wg;
                    mean_wgx += wg * xh[i * cols + j];
                }
                mean_wg /= cols;
                mean_wgx /= cols;
                const double s = (*inv_keep)[i];
                for (int j = 0; j < cols; ++j) {
                    const double wg = pg->data[static_cast<size_t>(j)] * g[i * cols + j];
                    px->grad[i * cols + j] +=
                        s * (wg - mean_wg - xh[i * cols + j] * mean_wgx);
                }
            }
        }
    });
    return result;
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    Tensor result = make_node(a.shape(), std::move(out), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa]() {
        pa->ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (size_t i = 0; i < po->grad.size(); ++i) {
            const double x = pa->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += po->grad[i] * (cdf + x * pdf);
        }
    });
    return result;
}

Tensor conv2d_circular(const Tensor& x, const Tensor& kernels, const ConvSpec& spec) {
    spec.validate();
    require_rank(x, 3, "conv2d_circular");
    require_rank(kernels, 3, "conv2d_circular");
    if (x.shape()[0] != 1) {
        throw DimensionError("conv2d_circular: expected a single input channel, got " +
                             x.shape_string());
    }
    const int h = x.shape()[1], w = x.shape()[2];
    const int channels = kernels.shape()[0];
    if (channels != spec.out_channels || kernels.shape()[1] != spec.kernel_h ||
        kernels.shape()[2] != spec.kernel_w) {
        throw DimensionError("conv2d_circular: kernels " + kernels.shape_string() +
                             " do not match spec " + std::to_string(spec.out_channels) + "x" +
                             std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w));
    }
    if (h < 1 || w < spec.kernel_w) {
        throw DimensionError("conv2d_circular: input " + x.shape_string() +
                             " smaller than kernel width " + std::to_string(spec.kernel_w));
    }
    const int kh = spec.kernel_h, kw = spec.kernel_w;
    const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
    const int oh = spec.out_h(h), ow = spec.out_w(w);

    std::vector<double> out(static_cast<size_t>(channels) * oh * ow, 0.0);
    const double* X = x.data().data();
    const double* K = kernels.data().data();
    for (int c = 0; c < channels; ++c) {
        const double* kc = K + static_cast<size_t>(c) * kh * kw;
        double* oc = out.data() + static_cast<size_t>(c) * oh * ow;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int u = 0; u < kh; ++u) {
                    int si = (i * spec.stride_h + u - pad_h) % h;
                    if (si < 0) si += h;
                    for (int v = 0; v < kw; ++v) {
                        int sj = (j * spec.stride_w + v - pad_w) % w;
                        if (sj < 0) sj += w;
                        acc += X[static_cast<size_t>(si) * w + sj] * kc[u * kw + v];
                    }
                }
                oc[static_cast<size_t>(i) * ow + j] = acc;
            }
        }
    }
    Tensor result = make_node({channels, oh, ow}, std::move(out), {x, kernels});
    Impl* po = result.impl();
    Impl* px = x.impl();
    Impl* pk = kernels.impl();
    const ConvSpec sp = spec;
    set_backward(result, [po, px, pk, sp, h, w, oh, ow, channels]() {
        const int kh = sp.kernel_h, kw = sp.kernel_w;
        const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
        const double* g = po->grad.data();
        if (px->requires_grad) px->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        for (int c = 0; c < channels; ++c) {
            const double* kc = pk->data.data() + static_cast<size_t>(c) * kh * kw;
            double* dkc = pk->requires_grad
                              ? pk->grad.data() + static_cast<size_t>(c) * kh * kw
                              : nullptr;
            const double* gc = g + static_cast<size_t>(c) * oh * ow;
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    const double gv = gc[static_cast<size_t>(i) * ow + j];
                    if (gv == 0.0) continue;
                    for (int u = 0; u < kh; ++u) {
                        int si = (i * sp.stride_h + u - pad_h) % h;
                        if (si < 0) si += h;
                        for (int v = 0; v < kw; ++v) {
                            int sj = (j * sp.stride_w + v - pad_w) % w;
                            if (sj < 0) sj += w;
                            if (px->requires_grad) {
                                px->grad[static_cast<size_t>(si) * w + sj] += gv * kc[u * kw + v];
                            }
                            if (dkc) {
                                dkc[u * kw + v] += gv * px->data[static_cast<size_t>(si) * w + sj];
                            }
                        }
                    }
                }
            }
        }
    });
    return result;
}

Tensor channels_to_rows(const Tensor& a) {
    require_rank(a, 3, "channels_to_rows");
    const int channels = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
    std::vector<double> out(a.size());
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                out[static_cast<size_t>(i) * (channels * w) + static_cast<size_t>(c) * w + j] =
                    a.data()[static_cast<size_t>(c) * h * w + static_cast<size_t>(i) * w + j];
            }
        }
    }
    Tensor result = make_node({h, channels * w}, std::move(out), {a});
    Impl* po = result.impl();
    Impl* pa = a.impl();
    set_backward(result, [po, pa, channels, h, w]() {
        pa->ensure_grad();
        for (int c = 0; c < channels; ++c) {
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    pa->grad[static_cast<size_t>(c) * h * w + static_cast<size_t>(i) * w + j] +=
                        po->grad[static_cast<size_t>(i) * (channels * w) +
                                 static_cast<size_t>(c) * w + j];
                }
            }
        }
    });
    return result;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<double>* class_weights) {
    require_rank(logits, 2, "cross_entropy");
    const int t = logits.shape()[0], m = logits.shape()[1];
    if (static_cast<int>(labels.size()) != t) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             logits.shape_string());
    }
    if (class_weights && static_cast<int>(class_weights->size()) != m) {
        throw DimensionError("cross_entropy: class weight count mismatch");
    }
    for (int label : labels) {
        if (label < 0 || label >= m) {
            throw DimensionError("cross_entropy: label " + std::to_string(label) +
                                 " out of range [0," + std::to_string(m) + ")");
        }
    }
    // Cached softmax rows for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(logits.data().size());
    double weight_sum = 0.0;
    double loss = 0.0;
    for (int i = 0; i < t; ++i) {
        const double* x = logits.data().data() + static_cast<size_t>(i) * m;
        double* p = probs->data() + static_cast<size_t>(i) * m;
        double mx = x[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            p[j] = std::exp(x[j] - mx);
            sum += p[j];
        }
        const double log_sum = std::log(sum);
        for (int j = 0; j < m; ++j) p[j] /= sum;
        const double wi = class_weights ? (*class_weights)[static_cast<size_t>(labels[i])] : 1.0;
        loss += wi * (log_sum - (x[labels[static_cast<size_t>(i)]] - mx));
        weight_sum += wi;
    }
    if (weight_sum <= 0.0) throw NumericError("cross_entropy: zero total weight");
    loss /= weight_sum;

    Tensor result = make_node({1}, {loss}, {logits});
    Impl* po = result.impl();
    Impl* pl = logits.impl();
    std::vector<int> labels_copy = labels;
    std::vector<double> weights_copy =
        class_weights ? *class_weights : std::vector<double>();
    set_backward(result, [po, pl, probs, labels_copy, weights_copy, t, m, weight_sum]() {
        pl->ensure_grad();
        const double gscale = po->grad[0] / weight_sum;
        for (int i = 0; i < t; ++i) {
            const double wi =
                weights_copy.empty() ? 1.0 : weights_copy[static_cast<size_t>(labels_copy[i])];
            const double* p = probs->data() + static_cast<size_t>(i) * m;
            double* d = pl->grad.data() + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) {
                double delta = p[j] - (j == labels_copy[static_cast<size_t>(i)] ? 1.0 : 0.0);
                d[j] += gscale * wi * delta;
            }
        }
    });
    return result;
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double eps) {
    for (const Tensor& p : params) {
        if (!p.requires_grad()) throw DimensionError("grad_check: parameter without grad flag");
    }
    std::vector<Tensor> mutable_params = params;
    for (Tensor& p : mutable_params) p.zero_grad();
    Tensor loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double max_rel = 0.0;
    for (size_t pi = 0; pi < mutable_params.size(); ++pi) {
        std::vector<double>& data = mutable_params[pi].raw_data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double up = f().value();
            data[i] = saved - eps;
            const double down = f().value();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

void save_checkpoint(std::ostream& out,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    out << "kgner-ckpt-v1\n" << params.size() << "\n";
    char buf[48];
    for (const auto& [name, tensor] : params) {
        out << name << "\t";
        const auto& shape = tensor.shape();
        out << shape.size();
        for (int d : shape) out << " " << d;
        out << "\t";
        const auto& data = tensor.data();
        for (size_t i = 0; i < data.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%a", data[i]);
            if (i) out << " ";
            out << buf;
        }
        out << "\n";
    }
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "kgner-ckpt-v1") {
        throw ParseError("not a checkpoint file (bad magic)");
    }
    if (!std::getline(in, line)) throw ParseError("checkpoint: missing parameter count");
    size_t count = std::stoul(line);
    std::vector<std::pair<std::string, Tensor>> params;
    params.reserve(count);
    for (size_t p = 0; p < count; ++p) {
        if (!std::getline(in, line)) {
            throw ParseError("checkpoint: expected " + std::to_string(count) +
                             " parameters, got " + std::to_string(p));
        }
        size_t tab1 = line.find('\t');
        size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            throw ParseError("checkpoint parameter " + std::to_string(p) + ": malformed line");
        }
        std::string name = line.substr(0, tab1);
        std::istringstream shape_in(line.substr(tab1 + 1, tab2 - tab1 - 1));
        size_t rank = 0;
        shape_in >> rank;
        std::vector<int> shape(rank);
        for (size_t d = 0; d < rank; ++d) shape_in >> shape[d];
        if (!shape_in) throw ParseError("checkpoint parameter " + name + ": bad shape");

        std::vector<double> data;
        data.reserve(shape_size(shape));
        const char* cursor = line.c_str() + tab2 + 1;
        char* end = nullptr;
        while (*cursor) {
            double v = std::strtod(cursor, &end);
            if (end == cursor) break;
            data.push_back(v);
            cursor = end;
        }
        if (data.size() != shape_size(shape)) {
            throw ParseError("checkpoint parameter " + name + ": expected " +
                             std::to_string(shape_size(shape)) + " values, got " +
                             std::to_string(data.size()));
        }
        params.emplace_back(std::move(name),
                            Tensor::from_data(std::move(shape), std::move(data), true));
    }
    return params;
}

}  // namespace kgner
