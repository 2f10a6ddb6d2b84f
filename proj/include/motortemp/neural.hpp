#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "motortemp/linalg.hpp"
#include "motortemp/rng.hpp"

namespace motortemp {

enum class Activation { relu, tanh, sigmoid, identity };
enum class Pooling { average, max };
enum class Mode { train, eval };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);
std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view name);

Matrix activate(Activation a, const Matrix& pre);
// d output / d pre-activation, elementwise, given both sides of the activation.
Matrix activation_derivative(Activation a, const Matrix& pre, const Matrix& out);

struct LayerGrad {
    Matrix weights;
    RowVector bias;
};

// ---- dense ---------------------------------------------------------------

struct DenseLayer {
    Matrix weights;  // fan_in x fan_out
    RowVector bias;  // fan_out
    Activation activation = Activation::relu;

    Eigen::Index fan_in() const { return weights.rows(); }
    Eigen::Index fan_out() const { return weights.cols(); }
};

struct DenseCache {
    Matrix input;
    Matrix pre;
    Matrix output;
};

// Rows of x are independent samples.
Matrix dense_forward(const DenseLayer& layer, const Matrix& x, DenseCache* cache = nullptr);
// Fills `grad` and returns d loss / d input.
Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& d_out, LayerGrad& grad);

// ---- dilated causal conv1d ----------------------------------------------

// Tap k of every filter reads the input k * dilation steps back. Weights stack one
// (in_channels x filters) block per tap, tap 0 first.
struct Conv1dLayer {
    int filter_size = 2;
    int dilation = 1;
    Matrix weights;  // (filter_size * in_channels) x filters
    RowVector bias;  // filters
    Activation activation = Activation::relu;

    Eigen::Index in_channels() const { return weights.rows() / filter_size; }
    Eigen::Index filters() const { return weights.cols(); }
    // Number of input steps one output depends on.
    Eigen::Index extent() const { return static_cast<Eigen::Index>(filter_size - 1) * dilation + 1; }
    auto tap(int k) const { return weights.middleRows(k * in_channels(), in_channels()); }
};

using Conv1dCache = DenseCache;

// Valid causal convolution: output row j corresponds to input step j + extent - 1.
// seq is time x channels; result is (time - extent + 1) x filters.
Matrix conv1d_forward(const Conv1dLayer& layer, const Matrix& seq, Conv1dCache* cache = nullptr);
Matrix conv1d_backward(const Conv1dLayer& layer, const Conv1dCache& cache, const Matrix& d_out, LayerGrad& grad);

// ---- pooling and dropout -------------------------------------------------

RowVector global_avg_pool(const Matrix& seq);
Matrix global_avg_pool_backward(const RowVector& d_out, Eigen::Index time);

RowVector global_max_pool(const Matrix& seq, std::vector<Eigen::Index>* argmax = nullptr);
Matrix global_max_pool_backward(const RowVector& d_out, const std::vector<Eigen::Index>& argmax, Eigen::Index time);

// Inverted dropout. In train mode each unit is zeroed with probability `ratio` and survivors
// are scaled by 1 / (1 - ratio); `mask`, when given, receives the applied multipliers.
// Eval mode and ratio 0 return x unchanged.
Matrix apply_dropout(const Matrix& x, double ratio, Rng* rng, Mode mode, Matrix* mask = nullptr);

// ---- network specs -------------------------------------------------------

struct MlpSpec {
    std::vector<int> hidden{90, 20};
    std::vector<double> dropout{0.1, 0.1};  // one ratio per hidden layer
    Activation activation = Activation::relu;
    int outputs = 3;

    void validate() const;
    bool operator==(const MlpSpec&) const = default;
};

struct ConvSpec {
    int filters = 1;
    int size = 2;
    int dilation = 1;
    bool operator==(const ConvSpec&) const = default;
};

struct CnnSpec {
    std::vector<ConvSpec> layers{{125, 2, 3}, {5, 2, 1}, {125, 2, 1}};
    double dropout = 0.0;  // applied to the pooled vector
    int seq_len = 100;
    Pooling pooling = Pooling::average;
    Activation activation = Activation::relu;
    int outputs = 3;

    // Input steps that reach one output of the last conv layer.
    int receptive_field() const;
    void validate() const;
    bool operator==(const CnnSpec&) const = default;
};

void to_json(nlohmann::json& j, const MlpSpec& s);
void from_json(const nlohmann::json& j, MlpSpec& s);
void to_json(nlohmann::json& j, const CnnSpec& s);
void from_json(const nlohmann::json& j, CnnSpec& s);

struct NetworkGrads {
    std::vector<LayerGrad> layers;  // same order as the network's parameter blocks
};

// ---- networks ------------------------------------------------------------

// Cache identity check shared by both networks: a cache is only valid for the exact
// network instance and parameter version that produced it.
struct CacheStamp {
    const void* owner = nullptr;
    std::uint64_t version = 0;
};

class Mlp {
public:
    struct Cache {
        CacheStamp stamp;
        std::vector<DenseCache> layers;
        std::vector<Matrix> masks;
    };

    Mlp() = default;
    Mlp(MlpSpec spec, std::vector<DenseLayer> layers);
    // Glorot-uniform weights, zero biases.
    static Mlp init(const MlpSpec& spec, Eigen::Index inputs, std::uint64_t seed);

    // x is batch x inputs; returns batch x outputs.
    Matrix forward(const Matrix& x, Mode mode = Mode::eval, Rng* rng = nullptr, Cache* cache = nullptr) const;
    NetworkGrads backward(const Cache& cache, const Matrix& d_out) const;

    void apply_step(const NetworkGrads& g, double gamma);

    const MlpSpec& spec() const { return spec_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { ++version_; return layers_; }
    Eigen::Index inputs() const { return layers_.front().fan_in(); }
    std::size_t param_count() const;

    bool operator==(const Mlp& o) const;

private:
    CacheStamp stamp() const { return {this, version_}; }

    MlpSpec spec_;
    std::vector<DenseLayer> layers_;  // hidden layers, then the identity output head
    std::uint64_t version_ = 0;
};

class Cnn {
public:
    // Per-window path: one window in, one prediction out.
    struct Cache {
        CacheStamp stamp;
        std::vector<Conv1dCache> conv;
        std::vector<Eigen::Index> argmax;
        Matrix mask;
        DenseCache head;
        Eigen::Index pooled_time = 0;
    };
    // Sequence path: every window of a long sequence shares the conv activations.
    struct SequenceCache {
        CacheStamp stamp;
        std::vector<Conv1dCache> conv;
        std::vector<std::vector<Eigen::Index>> argmax;  // per window, max pooling only
        Matrix mask;
        DenseCache head;
        Eigen::Index windows = 0;
    };

    Cnn() = default;
    Cnn(CnnSpec spec, std::vector<Conv1dLayer> conv, DenseLayer head);
    static Cnn init(const CnnSpec& spec, Eigen::Index features, std::uint64_t seed);

    // window is seq_len x features; returns 1 x outputs.
    Matrix forward(const Matrix& window, Mode mode = Mode::eval, Rng* rng = nullptr, Cache* cache = nullptr) const;
    NetworkGrads backward(const Cache& cache, const Matrix& d_out) const;

    // seq has N >= seq_len rows; row k of the result is the prediction for the window
    // seq[k .. k + seq_len - 1]. Equivalent to forward() on each window.
    Matrix forward_sequence(const Matrix& seq, Mode mode = Mode::eval, Rng* rng = nullptr,
                            SequenceCache* cache = nullptr) const;
    NetworkGrads backward_sequence(const SequenceCache& cache, const Matrix& d_out) const;

    void apply_step(const NetworkGrads& g, double gamma);

    const CnnSpec& spec() const { return spec_; }
    const std::vector<Conv1dLayer>& conv_layers() const { return conv_; }
    std::vector<Conv1dLayer>& conv_layers() { ++version_; return conv_; }
    const DenseLayer& head() const { return head_; }
    DenseLayer& head() { ++version_; return head_; }
    Eigen::Index features() const { return conv_.front().in_channels(); }
    std::size_t param_count() const;

    bool operator==(const Cnn& o) const;

private:
    CacheStamp stamp() const { return {this, version_}; }

    CnnSpec spec_;
    std::vector<Conv1dLayer> conv_;
    DenseLayer head_;
    std::uint64_t version_ = 0;
};

void to_json(nlohmann::json& j, const Mlp& m);
void from_json(const nlohmann::json& j, Mlp& m);
void to_json(nlohmann::json& j, const Cnn& c);
void from_json(const nlohmann::json& j, Cnn& c);

// Parameter blocks in a fixed order (per layer: weights, then bias as a 1-row block), for
// finite-difference checks and generic updates.
std::vector<Eigen::Map<Matrix>> parameter_blocks(Mlp& m);
std::vector<Eigen::Map<Matrix>> parameter_blocks(Cnn& c);
std::vector<Eigen::Map<Matrix>> parameter_blocks(NetworkGrads& g);

}  // namespace motortemp
