#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fiberseg/array.hpp"

namespace fiberseg::nn {

// Tensors are row-major float32, [N, C, H, W] for 2D nets and
// [N, C, D, H, W] for 3D nets. Layers treat rank-4 input as depth-1 rank-5.
using Tensor = FloatArray;

void check_finite(const Tensor& t, const char* where);

class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    // in: borrowed activations, valid until backward() completes
    virtual Tensor forward(const std::vector<const Tensor*>& in, bool training) = 0;
    // grads with respect to each forward input, same order
    virtual std::vector<Tensor> backward(const Tensor& grad_out) = 0;
    virtual std::vector<Tensor*> params() { return {}; }
    virtual std::vector<Tensor*> grads() { return {}; }
    virtual std::vector<Tensor*> buffers() { return {}; }  // e.g. batch-norm running stats
    void zero_grads();
};

// Same-padding stride-1 convolution, odd kernel. dims = 2 or 3.
class Conv : public Layer {
public:
    Conv(int dims, int64_t in_ch, int64_t out_ch, int64_t kernel, std::mt19937& init_rng);
    std::string kind() const override { return dims_ == 2 ? "conv2d" : "conv3d"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<Tensor*> grads() override { return {&grad_weight_, &grad_bias_}; }

    Tensor weight_;  // [outC, inC, (kd,) kh, kw]
    Tensor bias_;    // [outC]

private:
    int dims_;
    int64_t in_ch_, out_ch_, kernel_;
    Tensor grad_weight_, grad_bias_;
    Tensor cached_in_;
};

// Transposed convolution, kernel 2, stride 2 (doubles every spatial extent).
class UpConv : public Layer {
public:
    UpConv(int dims, int64_t in_ch, int64_t out_ch, std::mt19937& init_rng);
    std::string kind() const override { return dims_ == 2 ? "upconv2d" : "upconv3d"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<Tensor*> grads() override { return {&grad_weight_, &grad_bias_}; }

    Tensor weight_;  // [inC, outC, (2,) 2, 2]
    Tensor bias_;

private:
    int dims_;
    int64_t in_ch_, out_ch_;
    Tensor grad_weight_, grad_bias_;
    Tensor cached_in_;
};

// 2x max pooling (2x2x2 in 3D); spatial extents must be even.
class MaxPool : public Layer {
public:
    explicit MaxPool(int dims) : dims_(dims) {}
    std::string kind() const override { return "maxpool"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;

private:
    int dims_;
    std::vector<int64_t> argmax_;
    std::vector<int64_t> in_shape_;
};

class BatchNorm : public Layer {
public:
    BatchNorm(int64_t channels, float momentum = 0.99f, float eps = 1e-5f);
    std::string kind() const override { return "batch_norm"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;
    std::vector<Tensor*> params() override { return {&gamma_, &beta_}; }
    std::vector<Tensor*> grads() override { return {&grad_gamma_, &grad_beta_}; }
    std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }

    Tensor gamma_, beta_;
    Tensor running_mean_, running_var_;

private:
    int64_t channels_;
    float momentum_, eps_;
    Tensor grad_gamma_, grad_beta_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    bool trained_forward_ = false;
};

// Inverted dropout: scales by 1/(1-rate) at train time, identity at inference.
class Dropout : public Layer {
public:
    Dropout(float rate, uint64_t seed);
    std::string kind() const override { return "dropout"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;
    float rate() const { return rate_; }

private:
    float rate_;
    std::mt19937_64 rng_;
    std::vector<uint8_t> mask_;
    bool applied_ = false;
    std::vector<int64_t> in_shape_;
};

class Relu : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;

private:
    Tensor cached_out_;
};

class Sigmoid : public Layer {
public:
    std::string kind() const override { return "sigmoid"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;

private:
    Tensor cached_out_;
};

// Channel-axis concatenation of any number of inputs.
class Concat : public Layer {
public:
    std::string kind() const override { return "concat"; }
    Tensor forward(const std::vector<const Tensor*>& in, bool training) override;
    std::vector<Tensor> backward(const Tensor& grad_out) override;

private:
    std::vector<std::vector<int64_t>> in_shapes_;
};

// Static layer graph; node input -1 is the network input, output is the last
// node. Activations live between forward(training=true) and backward().
class Network {
public:
    static constexpr int kInput = -1;

    int add(std::unique_ptr<Layer> layer, std::vector<int> inputs);
    Tensor forward(const Tensor& input, bool training);
    // seeds grad_out at the last node; returns grad with respect to the input
    Tensor backward(const Tensor& grad_out);

    std::vector<Tensor*> parameters();
    std::vector<Tensor*> gradients();
    std::vector<Tensor*> buffers();
    int64_t parameter_count();
    void zero_grads();

    size_t node_count() const { return nodes_.size(); }
    Layer& layer(size_t i) { return *nodes_[i].layer; }
    const Layer& layer(size_t i) const { return *nodes_[i].layer; }

private:
    struct Node {
        std::unique_ptr<Layer> layer;
        std::vector<int> inputs;
    };
    std::vector<Node> nodes_;
    std::vector<Tensor> activations_;
};

// Mean binary cross entropy; predictions clamped to [eps, 1-eps], eps = 1e-7.
struct BceResult {
    double loss;
    Tensor grad;  // dL/dpred
};
BceResult bce_loss(const Tensor& pred, const Tensor& target);

double pixel_accuracy(const Tensor& pred, const Tensor& target, float thr = 0.5f);

struct AdamState {
    std::vector<Tensor> m, v;
    int64_t t = 0;
};
void step_adam(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
               AdamState& state, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
               float eps = 1e-8f);

struct RmsPropState {
    std::vector<Tensor> v;
};
void step_rmsprop(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
                  RmsPropState& state, float lr, float rho = 0.9f, float eps = 1e-8f);

enum class Optimizer { Adam, RmsProp };

struct TrainConfig {
    float learning_rate = 1e-4f;
    int epochs = 5;
    int batch_size = 4;
    Optimizer optimizer = Optimizer::Adam;
    uint64_t seed = 0;

    void validate() const;
};

struct StepRecord {
    int64_t step;
    int epoch;
    double loss;
    double accuracy;
};
struct EpochRecord {
    int epoch;
    double loss;
    double accuracy;
    double val_loss;
    double val_accuracy;
};
struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    void write_csv(const std::string& path) const;
};

// Samples are single items without a batch axis; train() stacks them into
// batches. augment, when set, maps (input, target, item_seed) to a fresh pair.
struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<Tensor> targets;
};

using AugmentFn =
    std::function<std::pair<Tensor, Tensor>(const Tensor&, const Tensor&, uint64_t)>;

TrainHistory train(Network& net, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& cfg, const AugmentFn& augment = {});

Tensor stack_batch(const std::vector<const Tensor*>& items);

}  // namespace fiberseg::nn
