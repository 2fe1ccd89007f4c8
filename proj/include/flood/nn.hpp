#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flood/error.hpp"
#include "flood/rng.hpp"

/// Minimal dense tensors, convolutional layers with hand-written backward passes, and the
/// networks used by the surrogate. Layers are templates on the scalar type: training uses
/// float, gradient checks use double.
namespace flood::nn {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_text(const Shape& s);

template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty unless gradients are tracked

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<T> v);

    std::size_t size() const { return values.size(); }
    int dim(std::size_t k) const { return shape.at(k); }
    T* data() { return values.data(); }
    const T* data() const { return values.data(); }

    void track_grad() { grad.assign(values.size(), T(0)); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

enum class LayerKind { conv, conv_transpose, prelu, batch_norm, residual_block, sigmoid };

const char* layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 1;
    int stride = 1;
    int padding = 0;

    bool operator==(const LayerSpec&) const = default;
};

/// Output (C, H, W) of one layer; throws invalid_argument on inconsistent geometry.
Shape layer_output_shape(const LayerSpec& spec, const Shape& chw);

/// Closed-form parameter count of one layer.
std::size_t layer_parameter_count(const LayerSpec& spec);

struct NetworkConfig {
    std::vector<LayerSpec> layers;
    int input_channels = 5;
    int output_channels = 3;
    bool state_skip = false;   // add the first output_channels input channels to the output
    std::uint64_t param_seed = 7;

    /// Reduced encoder-decoder for grids divisible by 4.
    static NetworkConfig desk();
    /// The 17-layer table for a 100 x 100 grid, each layer followed by batch norm and PReLU.
    static NetworkConfig full();
    /// PatchGAN discriminator over (candidate, condition) channel pairs; produces logits.
    static NetworkConfig patch_discriminator(int channels = 8);

    /// Flat text: `option state_skip 0|1` and one `kind in out kernel stride padding` per line.
    std::string to_text() const;
    static NetworkConfig parse(const std::string& text);

    std::size_t parameter_count() const;
    /// Verifies channel chaining and returns the output (C, H, W) for an input of size (h, w).
    Shape output_shape(int h, int w) const;
};

template <class T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual LayerSpec spec() const = 0;
    /// x has shape (N, C, H, W).
    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
    /// Gradient with respect to the last forward input; parameter gradients accumulate.
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual std::vector<Tensor<T>*> parameters() { return {}; }
    /// Non-trainable state saved with the parameters (batch-norm running statistics).
    virtual std::vector<Tensor<T>*> buffers() { return {}; }
    virtual void initialize(Rng&) {}
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec);

template <class T>
class Network {
public:
    Network() = default;
    explicit Network(const NetworkConfig& config);

    const NetworkConfig& config() const { return config_; }
    Tensor<T> forward(const Tensor<T>& x, bool training);
    Tensor<T> backward(const Tensor<T>& grad_out);

    std::vector<Tensor<T>*> parameters();
    std::vector<Tensor<T>*> buffers();
    void zero_grad();
    std::size_t parameter_count();

    /// Fan-in uniform (He-style) weights from the configured seed; biases zero.
    void initialize();
    /// Zeroes the weights and bias of the final convolution.
    void zero_last_layer();

    std::vector<std::unique_ptr<Layer<T>>>& layers() { return layers_; }

private:
    NetworkConfig config_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    int input_channels_seen_ = 0;
};

// ---------------------------------------------------------------------------
// Functional forms used by tests and examples.
// ---------------------------------------------------------------------------

/// Cross-correlation of x (N, Cin, H, W) with w (Cout, Cin, K, K) plus bias (Cout).
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding);

template <class T>
struct ConvGrads {
    Tensor<T> input, weights, bias;
};

template <class T>
ConvGrads<T> conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out, int stride, int padding);

template <class T>
Tensor<T> prelu(const Tensor<T>& x, const std::vector<T>& slope);

/// Per-channel normalization; in training mode uses batch statistics and updates the
/// running estimates with `momentum`.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const std::vector<T>& scale, const std::vector<T>& shift,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Optimizers and schedules
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam, rmsprop };
enum class Schedule { fixed, inverse_sqrt, periodic };

OptimizerKind parse_optimizer(const std::string& s);
Schedule parse_schedule(const std::string& s);

/// Learning rate for a 1-based epoch.
double scheduled_lr(Schedule s, double base, int epoch, int period);

class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::vector<Tensor<float>*> params, double lr);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step();

private:
    OptimizerKind kind_;
    std::vector<Tensor<float>*> params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_;
    long t_ = 0;
};

}  // namespace flood::nn
