#ifndef KGNER_TENSOR_HPP
#define KGNER_TENSOR_HPP

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "kgner/common.hpp"

namespace kgner {

// Dense 64-bit real tensor participating in a reverse-mode graph. The
// graph is built per forward pass: each op node keeps its parents alive
// through shared ownership and is freed once the last handle drops.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int rank() const;
    size_t size() const;
    bool requires_grad() const;
    int64_t node_id() const;

    const std::vector<double>& data() const;
    std::vector<double>& raw_data();  // parameter updates only, outside any graph
    const std::vector<double>& grad() const;

    double value() const;               // scalar tensors
    double at(std::vector<int> idx) const;

    void zero_grad();
    // Reverse-mode accumulation from a scalar root. Forward buffers are
    // never written during the sweep.
    void backward() const;

    std::string shape_string() const;

    struct Impl;
    Impl* impl() const { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
};

// Convolution geometry for the re-contextualization head. Circular
// padding totals kernel-1 per axis so a stride-1 axis keeps its length
// and a strided axis yields ceil(len / stride).
struct ConvSpec {
    int kernel_h = 5;
    int kernel_w = 5;
    int stride_h = 1;
    int stride_w = 2;
    int out_channels = 4;

    void validate() const;
    int out_h(int h) const;
    int out_w(int w) const;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// [rows x cols] + [cols], broadcasting over rows.
Tensor add_bias(const Tensor& m, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose(const Tensor& a);  // 2-D
Tensor slice_cols(const Tensor& a, int start, int len);  // 2-D
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor sum(const Tensor& a);      // all elements -> scalar
Tensor softmax(const Tensor& a);  // last axis, max-subtracted
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& a);
// x: [1 x H x W], kernels: [out_channels x kh x kw] -> [out_channels x H' x W'].
Tensor conv2d_circular(const Tensor& x, const Tensor& kernels, const ConvSpec& spec);
// [C x H x W] -> [H x (C*W)]; row h is the concatenation over channels
// of that token's row.
Tensor channels_to_rows(const Tensor& a);
// logits: [T x M], labels in [0, M). Mean (optionally class-weighted)
// of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<double>* class_weights = nullptr);

// Compares reverse-mode gradients of f() against central finite
// differences over every element of every parameter. Returns the max
// relative error with denominator max(|a|, |b|, 1e-8).
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double eps = 1e-4);

// Checkpoint container: ordered (name, shape, data) entries in a
// structured-text format with hexfloat payloads (bit-exact round trip).
void save_checkpoint(std::ostream& out,
                     const std::vector<std::pair<std::string, Tensor>>& params);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(std::istream& in);

}  // namespace kgner

#endif  // KGNER_TENSOR_HPP
