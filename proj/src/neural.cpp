#include "motortemp/neural.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "motortemp/errors.hpp"
#include "motortemp/optim.hpp"

namespace motortemp {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> row_major(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    }
    return out;
}

Matrix from_row_major(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols, std::string_view what) {
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
        throw DataError(std::string(what) + ": weight array size does not match the declared shape");
    }
    return Eigen::Map<const RowMajor>(v.data(), rows, cols);
}

RowVector row_from(const std::vector<double>& v) {
    return Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    return w;
}

void check_stamp(const CacheStamp& cache, const CacheStamp& current) {
    if (cache.owner == nullptr) throw ConfigError("backward called without a forward cache");
    if (cache.owner != current.owner || cache.version != current.version) {
        throw ConfigError("backward called with a stale cache (network changed since the forward pass)");
    }
}

void step_layer(Matrix& weights, RowVector& bias, const LayerGrad& g, double gamma) {
    gradient_step(weights, g.weights, gamma);
    gradient_step(bias, g.bias, gamma);
}

Eigen::Map<Matrix> block(Matrix& m) { return {m.data(), m.rows(), m.cols()}; }
Eigen::Map<Matrix> block(RowVector& v) { return {v.data(), 1, v.size()}; }

nlohmann::json dense_json(const DenseLayer& l) {
    return {{"type", "dense"},
            {"activation", to_string(l.activation)},
            {"fan_in", l.fan_in()},
            {"fan_out", l.fan_out()},
            {"weights", row_major(l.weights)},
            {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}};
}

DenseLayer dense_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "dense") throw DataError("expected a dense layer");
    DenseLayer l;
    l.activation = parse_activation(j.at("activation").get<std::string>());
    const auto fan_in = j.at("fan_in").get<Eigen::Index>();
    const auto fan_out = j.at("fan_out").get<Eigen::Index>();
    l.weights = from_row_major(j.at("weights").get<std::vector<double>>(), fan_in, fan_out, "dense layer");
    l.bias = row_from(j.at("bias").get<std::vector<double>>());
    if (l.bias.size() != fan_out) throw DataError("dense layer: bias size does not match fan_out");
    return l;
}

}  // namespace

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::identity: return "identity";
    }
    return "unknown";
}

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Pooling p) { return p == Pooling::average ? "average" : "max"; }

Pooling parse_pooling(std::string_view name) {
    if (name == "average") return Pooling::average;
    if (name == "max") return Pooling::max;
    throw ConfigError("unknown pooling '" + std::string(name) + "'");
}

Matrix activate(Activation a, const Matrix& pre) {
    switch (a) {
        case Activation::relu: return pre.cwiseMax(0.0);
        case Activation::tanh: return pre.array().tanh().matrix();
        case Activation::sigmoid: return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
        case Activation::identity: return pre;
    }
    throw ConfigError("unknown activation");
}

Matrix activation_derivative(Activation a, const Matrix& pre, const Matrix& out) {
    switch (a) {
        case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
        case Activation::tanh: return (1.0 - out.array().square()).matrix();
        case Activation::sigmoid: return (out.array() * (1.0 - out.array())).matrix();
        case Activation::identity: return Matrix::Ones(pre.rows(), pre.cols());
    }
    throw ConfigError("unknown activation");
}

// ---- dense ---------------------------------------------------------------

Matrix dense_forward(const DenseLayer& layer, const Matrix& x, DenseCache* cache) {
    if (x.cols() != layer.fan_in()) {
        throw DataError("dense layer expects width " + std::to_string(layer.fan_in()) + ", got " +
                        std::to_string(x.cols()));
    }
    Matrix pre = (x * layer.weights).rowwise() + layer.bias;
    Matrix out = activate(layer.activation, pre);
    if (cache) {
        cache->input = x;
        cache->pre = std::move(pre);
        cache->output = out;
    }
    return out;
}

Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& d_out, LayerGrad& grad) {
    if (d_out.rows() != cache.pre.rows() || d_out.cols() != layer.fan_out()) {
        throw ConfigError("dense backward: upstream gradient shape does not match the cached forward pass");
    }
    const Matrix d_pre = layer.activation == Activation::identity
                             ? d_out
                             : Matrix(d_out.cwiseProduct(activation_derivative(layer.activation, cache.pre, cache.output)));
    grad.weights = cache.input.transpose() * d_pre;
    grad.bias = d_pre.colwise().sum();
    return d_pre * layer.weights.transpose();
}

// ---- conv1d --------------------------------------------------------------

Matrix conv1d_forward(const Conv1dLayer& layer, const Matrix& seq, Conv1dCache* cache) {
    if (layer.filter_size < 1 || layer.dilation < 1) throw ConfigError("conv1d: filter size and dilation must be >= 1");
    if (seq.cols() != layer.in_channels()) {
        throw DataError("conv1d expects " + std::to_string(layer.in_channels()) + " channels, got " +
                        std::to_string(seq.cols()));
    }
    const Eigen::Index extent = layer.extent();
    if (seq.rows() < extent) {
        throw DataError("conv1d: sequence of length " + std::to_string(seq.rows()) +
                        " is shorter than the receptive extent " + std::to_string(extent));
    }
    const Eigen::Index t_out = seq.rows() - extent + 1;
    Matrix pre = layer.bias.replicate(t_out, 1);
    for (int k = 0; k < layer.filter_size; ++k) {
        pre.noalias() += seq.middleRows(extent - 1 - static_cast<Eigen::Index>(k) * layer.dilation, t_out) * layer.tap(k);
    }
    Matrix out = activate(layer.activation, pre);
    if (cache) {
        cache->input = seq;
        cache->pre = std::move(pre);
        cache->output = out;
    }
    return out;
}

Matrix conv1d_backward(const Conv1dLayer& layer, const Conv1dCache& cache, const Matrix& d_out, LayerGrad& grad) {
    if (d_out.rows() != cache.pre.rows() || d_out.cols() != layer.filters()) {
        throw ConfigError("conv1d backward: upstream gradient shape does not match the cached forward pass");
    }
    const Matrix d_pre = d_out.cwiseProduct(activation_derivative(layer.activation, cache.pre, cache.output));
    const Eigen::Index extent = layer.extent();
    const Eigen::Index t_out = d_pre.rows();
    const Eigen::Index c_in = layer.in_channels();
    grad.weights.resize(layer.weights.rows(), layer.weights.cols());
    grad.bias = d_pre.colwise().sum();
    Matrix d_seq = Matrix::Zero(cache.input.rows(), c_in);
    for (int k = 0; k < layer.filter_size; ++k) {
        const Eigen::Index start = extent - 1 - static_cast<Eigen::Index>(k) * layer.dilation;
        grad.weights.middleRows(k * c_in, c_in).noalias() = cache.input.middleRows(start, t_out).transpose() * d_pre;
        d_seq.middleRows(start, t_out).noalias() += d_pre * layer.tap(k).transpose();
    }
    return d_seq;
}

// ---- pooling and dropout -------------------------------------------------

RowVector global_avg_pool(const Matrix& seq) {
    if (seq.rows() < 1) throw DataError("global pooling of an empty sequence");
    return seq.colwise().mean();
}

Matrix global_avg_pool_backward(const RowVector& d_out, Eigen::Index time) {
    return (d_out / static_cast<double>(time)).replicate(time, 1);
}

RowVector global_max_pool(const Matrix& seq, std::vector<Eigen::Index>* argmax) {
    if (seq.rows() < 1) throw DataError("global pooling of an empty sequence");
    RowVector out(seq.cols());
    if (argmax) argmax->assign(static_cast<std::size_t>(seq.cols()), 0);
    for (Eigen::Index c = 0; c < seq.cols(); ++c) {
        Eigen::Index best = 0;
        out[c] = seq.col(c).maxCoeff(&best);
        if (argmax) (*argmax)[c] = best;
    }
    return out;
}

Matrix global_max_pool_backward(const RowVector& d_out, const std::vector<Eigen::Index>& argmax, Eigen::Index time) {
    Matrix d = Matrix::Zero(time, d_out.size());
    for (Eigen::Index c = 0; c < d_out.size(); ++c) d(argmax[c], c) = d_out[c];
    return d;
}

Matrix apply_dropout(const Matrix& x, double ratio, Rng* rng, Mode mode, Matrix* mask) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("dropout ratio must be in [0, 1)");
    if (mode == Mode::eval || ratio == 0.0) {
        if (mask) mask->resize(0, 0);
        return x;
    }
    if (!rng) throw ConfigError("train-mode dropout needs a random source");
    const double keep_scale = 1.0 / (1.0 - ratio);
    Matrix m(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (Eigen::Index r = 0; r < x.rows(); ++r) m(r, c) = rng->bernoulli(ratio) ? 0.0 : keep_scale;
    }
    Matrix out = x.cwiseProduct(m);
    if (mask) *mask = std::move(m);
    return out;
}

// ---- specs ---------------------------------------------------------------

void MlpSpec::validate() const {
    if (hidden.empty()) throw ConfigError("MLP needs at least one hidden layer");
    if (dropout.size() != hidden.size()) throw ConfigError("MLP needs one dropout ratio per hidden layer");
    for (int n : hidden) {
        if (n < 1) throw ConfigError("MLP layer width must be >= 1");
    }
    for (double d : dropout) {
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("dropout ratio must be in [0, 1)");
    }
    if (outputs < 1) throw ConfigError("MLP output width must be >= 1");
}

int CnnSpec::receptive_field() const {
    int rf = 1;
    for (const auto& l : layers) rf += (l.size - 1) * l.dilation;
    return rf;
}

void CnnSpec::validate() const {
    if (layers.empty()) throw ConfigError("CNN needs at least one conv layer");
    for (const auto& l : layers) {
        if (l.filters < 1 || l.size < 1 || l.dilation < 1) {
            throw ConfigError("conv layer filters, size and dilation must be >= 1");
        }
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout ratio must be in [0, 1)");
    if (seq_len < 1) throw ConfigError("sequence length must be >= 1");
    if (receptive_field() > seq_len) {
        throw ConfigError("CNN receptive field " + std::to_string(receptive_field()) + " exceeds sequence length " +
                          std::to_string(seq_len));
    }
    if (outputs < 1) throw ConfigError("CNN output width must be >= 1");
}

void to_json(nlohmann::json& j, const MlpSpec& s) {
    j = {{"hidden", s.hidden}, {"dropout", s.dropout}, {"activation", to_string(s.activation)}, {"outputs", s.outputs}};
}

void from_json(const nlohmann::json& j, MlpSpec& s) {
    MlpSpec d;
    s.hidden = j.value("hidden", d.hidden);
    if (j.contains("dropout") && j["dropout"].is_number()) {
        s.dropout.assign(s.hidden.size(), j["dropout"].get<double>());
    } else {
        s.dropout = j.value("dropout", std::vector<double>(s.hidden.size(), 0.1));
    }
    s.activation = parse_activation(j.value("activation", std::string("relu")));
    s.outputs = j.value("outputs", d.outputs);
}

void to_json(nlohmann::json& j, const CnnSpec& s) {
    std::vector<int> filters, sizes, dilations;
    for (const auto& l : s.layers) {
        filters.push_back(l.filters);
        sizes.push_back(l.size);
        dilations.push_back(l.dilation);
    }
    j = {{"filters", filters},        {"sizes", sizes},
         {"dilations", dilations},    {"dropout", s.dropout},
         {"seq_len", s.seq_len},      {"pooling", to_string(s.pooling)},
         {"activation", to_string(s.activation)}, {"outputs", s.outputs}};
}

void from_json(const nlohmann::json& j, CnnSpec& s) {
    CnnSpec d;
    s = d;
    if (j.contains("filters")) {
        auto filters = j.at("filters").get<std::vector<int>>();
        auto sizes = j.at("sizes").get<std::vector<int>>();
        auto dilations = j.at("dilations").get<std::vector<int>>();
        if (sizes.size() != filters.size() || dilations.size() != filters.size()) {
            throw ConfigError("CNN filters, sizes and dilations must have equal lengths");
        }
        s.layers.clear();
        for (std::size_t i = 0; i < filters.size(); ++i) s.layers.push_back({filters[i], sizes[i], dilations[i]});
    }
    s.dropout = j.value("dropout", d.dropout);
    s.seq_len = j.value("seq_len", d.seq_len);
    s.pooling = parse_pooling(j.value("pooling", std::string("average")));
    s.activation = parse_activation(j.value("activation", std::string("relu")));
    s.outputs = j.value("outputs", d.outputs);
}

// ---- MLP -----------------------------------------------------------------

Mlp::Mlp(MlpSpec spec, std::vector<DenseLayer> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
    spec_.validate();
    if (layers_.size() != spec_.hidden.size() + 1) throw DataError("MLP layer count does not match its spec");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const int width = i < spec_.hidden.size() ? spec_.hidden[i] : spec_.outputs;
        if (layers_[i].fan_out() != width || layers_[i].bias.size() != width ||
            (i > 0 && layers_[i].fan_in() != layers_[i - 1].fan_out())) {
            throw DataError("MLP layer " + std::to_string(i) + " has inconsistent shape");
        }
    }
}

Mlp Mlp::init(const MlpSpec& spec, Eigen::Index inputs, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    Eigen::Index fan_in = inputs;
    for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
        const bool head = i == spec.hidden.size();
        const Eigen::Index fan_out = head ? spec.outputs : spec.hidden[i];
        layers.push_back({glorot(rng, fan_in, fan_out, static_cast<double>(fan_in), static_cast<double>(fan_out)),
                          RowVector::Zero(fan_out), head ? Activation::identity : spec.activation});
        fan_in = fan_out;
    }
    return Mlp(spec, std::move(layers));
}

Matrix Mlp::forward(const Matrix& x, Mode mode, Rng* rng, Cache* cache) const {
    if (cache) {
        cache->stamp = stamp();
        cache->layers.assign(layers_.size(), {});
        cache->masks.assign(spec_.hidden.size(), {});
    }
    Matrix h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            h = dense_forward(layers_[i], h, cache ? &cache->layers[i] : nullptr);
        } catch (const DataError& e) {
            throw DataError("MLP layer " + std::to_string(i) + ": " + e.what());
        }
        if (i < spec_.hidden.size()) h = apply_dropout(h, spec_.dropout[i], rng, mode, cache ? &cache->masks[i] : nullptr);
    }
    return h;
}

NetworkGrads Mlp::backward(const Cache& cache, const Matrix& d_out) const {
    check_stamp(cache.stamp, stamp());
    NetworkGrads g;
    g.layers.resize(layers_.size());
    Matrix d = d_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        if (i < spec_.hidden.size() && cache.masks[i].size() > 0) d = d.cwiseProduct(cache.masks[i]);
        d = dense_backward(layers_[i], cache.layers[i], d, g.layers[i]);
    }
    return g;
}

void Mlp::apply_step(const NetworkGrads& g, double gamma) {
    if (g.layers.size() != layers_.size()) throw ConfigError("gradient layer count mismatch");
    for (std::size_t i = 0; i < layers_.size(); ++i) step_layer(layers_[i].weights, layers_[i].bias, g.layers[i], gamma);
    ++version_;
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

bool Mlp::operator==(const Mlp& o) const {
    if (!(spec_ == o.spec_) || layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].weights != o.layers_[i].weights || layers_[i].bias != o.layers_[i].bias ||
            layers_[i].activation != o.layers_[i].activation) {
            return false;
        }
    }
    return true;
}

// ---- CNN -----------------------------------------------------------------

Cnn::Cnn(CnnSpec spec, std::vector<Conv1dLayer> conv, DenseLayer head)
    : spec_(std::move(spec)), conv_(std::move(conv)), head_(std::move(head)) {
    spec_.validate();
    if (conv_.size() != spec_.layers.size()) throw DataError("CNN layer count does not match its spec");
    for (std::size_t i = 0; i < conv_.size(); ++i) {
        const auto& l = conv_[i];
        const auto& s = spec_.layers[i];
        if (l.filter_size != s.size || l.dilation != s.dilation || l.filters() != s.filters ||
            l.bias.size() != s.filters || l.weights.rows() % l.filter_size != 0 ||
            (i > 0 && l.in_channels() != conv_[i - 1].filters())) {
            throw DataError("CNN conv layer " + std::to_string(i) + " has inconsistent shape");
        }
    }
    if (head_.fan_in() != conv_.back().filters() || head_.fan_out() != spec_.outputs) {
        throw DataError("CNN head has inconsistent shape");
    }
}

Cnn Cnn::init(const CnnSpec& spec, Eigen::Index features, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::vector<Conv1dLayer> conv;
    Eigen::Index channels = features;
    for (const auto& s : spec.layers) {
        const double fan_in = static_cast<double>(s.size * channels);
        const double fan_out = static_cast<double>(s.size * s.filters);
        Conv1dLayer l;
        l.filter_size = s.size;
        l.dilation = s.dilation;
        l.weights = glorot(rng, s.size * channels, s.filters, fan_in, fan_out);
        l.bias = RowVector::Zero(s.filters);
        l.activation = spec.activation;
        conv.push_back(std::move(l));
        channels = s.filters;
    }
    DenseLayer head{glorot(rng, channels, spec.outputs, static_cast<double>(channels), static_cast<double>(spec.outputs)),
                    RowVector::Zero(spec.outputs), Activation::identity};
    return Cnn(spec, std::move(conv), std::move(head));
}

Matrix Cnn::forward(const Matrix& window, Mode mode, Rng* rng, Cache* cache) const {
    if (window.rows() != spec_.seq_len || window.cols() != features()) {
        throw DataError("CNN input: expected a " + std::to_string(spec_.seq_len) + " x " + std::to_string(features()) +
                        " window, got " + std::to_string(window.rows()) + " x " + std::to_string(window.cols()));
    }
    if (cache) {
        cache->stamp = stamp();
        cache->conv.assign(conv_.size(), {});
    }
    Matrix h = window;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
        try {
            h = conv1d_forward(conv_[i], h, cache ? &cache->conv[i] : nullptr);
        } catch (const DataError& e) {
            throw DataError("CNN conv layer " + std::to_string(i) + ": " + e.what());
        }
    }
    if (cache) cache->pooled_time = h.rows();
    Matrix pooled = spec_.pooling == Pooling::average ? Matrix(global_avg_pool(h))
                                                      : Matrix(global_max_pool(h, cache ? &cache->argmax : nullptr));
    pooled = apply_dropout(pooled, spec_.dropout, rng, mode, cache ? &cache->mask : nullptr);
    return dense_forward(head_, pooled, cache ? &cache->head : nullptr);
}

NetworkGrads Cnn::backward(const Cache& cache, const Matrix& d_out) const {
    check_stamp(cache.stamp, stamp());
    NetworkGrads g;
    g.layers.resize(conv_.size() + 1);
    Matrix d_pooled = dense_backward(head_, cache.head, d_out, g.layers.back());
    if (cache.mask.size() > 0) d_pooled = d_pooled.cwiseProduct(cache.mask);
    Matrix d = spec_.pooling == Pooling::average
                   ? global_avg_pool_backward(d_pooled.row(0), cache.pooled_time)
                   : global_max_pool_backward(d_pooled.row(0), cache.argmax, cache.pooled_time);
    for (std::size_t i = conv_.size(); i-- > 0;) d = conv1d_backward(conv_[i], cache.conv[i], d, g.layers[i]);
    return g;
}

Matrix Cnn::forward_sequence(const Matrix& seq, Mode mode, Rng* rng, SequenceCache* cache) const {
    if (seq.rows() < spec_.seq_len || seq.cols() != features()) {
        throw DataError("CNN sequence input: expected at least " + std::to_string(spec_.seq_len) + " rows of " +
                        std::to_string(features()) + " features");
    }
    if (cache) {
        cache->stamp = stamp();
        cache->conv.assign(conv_.size(), {});
        cache->argmax.clear();
    }
    Matrix h = seq;
    for (std::size_t i = 0; i < conv_.size(); ++i) h = conv1d_forward(conv_[i], h, cache ? &cache->conv[i] : nullptr);

    // Conv row j sits at input step j + rf - 1; window k ends at step k + seq_len - 1 and
    // pools conv rows k .. k + width - 1.
    const Eigen::Index width = spec_.seq_len - spec_.receptive_field() + 1;
    const Eigen::Index windows = seq.rows() - spec_.seq_len + 1;
    Matrix pooled(windows, h.cols());
    if (spec_.pooling == Pooling::average) {
        Matrix prefix(h.rows() + 1, h.cols());
        prefix.row(0).setZero();
        for (Eigen::Index j = 0; j < h.rows(); ++j) prefix.row(j + 1) = prefix.row(j) + h.row(j);
        pooled = (prefix.middleRows(width, windows) - prefix.topRows(windows)) / static_cast<double>(width);
    } else {
        if (cache) cache->argmax.resize(static_cast<std::size_t>(windows));
        for (Eigen::Index k = 0; k < windows; ++k) {
            std::vector<Eigen::Index> arg;
            pooled.row(k) = global_max_pool(h.middleRows(k, width), &arg);
            if (cache) {
                for (auto& a : arg) a += k;
                cache->argmax[static_cast<std::size_t>(k)] = std::move(arg);
            }
        }
    }
    if (cache) cache->windows = windows;
    pooled = apply_dropout(pooled, spec_.dropout, rng, mode, cache ? &cache->mask : nullptr);
    return dense_forward(head_, pooled, cache ? &cache->head : nullptr);
}

NetworkGrads Cnn::backward_sequence(const SequenceCache& cache, const Matrix& d_out) const {
    check_stamp(cache.stamp, stamp());
    NetworkGrads g;
    g.layers.resize(conv_.size() + 1);
    Matrix d_pooled = dense_backward(head_, cache.head, d_out, g.layers.back());
    if (cache.mask.size() > 0) d_pooled = d_pooled.cwiseProduct(cache.mask);

    const Eigen::Index conv_rows = cache.conv.back().output.rows();
    const Eigen::Index width = spec_.seq_len - spec_.receptive_field() + 1;
    Matrix d = Matrix::Zero(conv_rows, d_pooled.cols());
    if (spec_.pooling == Pooling::average) {
        // Each window spreads its gradient evenly over its pooled rows: difference array.
        Matrix diff = Matrix::Zero(conv_rows + 1, d_pooled.cols());
        const Matrix share = d_pooled / static_cast<double>(width);
        diff.topRows(cache.windows) += share;
        diff.middleRows(width, cache.windows) -= share;
        RowVector running = RowVector::Zero(d_pooled.cols());
        for (Eigen::Index j = 0; j < conv_rows; ++j) {
            running += diff.row(j);
            d.row(j) = running;
        }
    } else {
        for (Eigen::Index k = 0; k < cache.windows; ++k) {
            const auto& arg = cache.argmax[static_cast<std::size_t>(k)];
            for (Eigen::Index c = 0; c < d_pooled.cols(); ++c) d(arg[c], c) += d_pooled(k, c);
        }
    }
    for (std::size_t i = conv_.size(); i-- > 0;) d = conv1d_backward(conv_[i], cache.conv[i], d, g.layers[i]);
    return g;
}

void Cnn::apply_step(const NetworkGrads& g, double gamma) {
    if (g.layers.size() != conv_.size() + 1) throw ConfigError("gradient layer count mismatch");
    for (std::size_t i = 0; i < conv_.size(); ++i) step_layer(conv_[i].weights, conv_[i].bias, g.layers[i], gamma);
    step_layer(head_.weights, head_.bias, g.layers.back(), gamma);
    ++version_;
}

std::size_t Cnn::param_count() const {
    std::size_t n = static_cast<std::size_t>(head_.weights.size() + head_.bias.size());
    for (const auto& l : conv_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

bool Cnn::operator==(const Cnn& o) const {
    if (!(spec_ == o.spec_) || conv_.size() != o.conv_.size()) return false;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
        if (conv_[i].weights != o.conv_[i].weights || conv_[i].bias != o.conv_[i].bias) return false;
    }
    return head_.weights == o.head_.weights && head_.bias == o.head_.bias;
}

// ---- serialization -------------------------------------------------------

void to_json(nlohmann::json& j, const Mlp& m) {
    j = {{"spec", m.spec()}, {"layers", nlohmann::json::array()}};
    for (const auto& l : m.layers()) j["layers"].push_back(dense_json(l));
}

void from_json(const nlohmann::json& j, Mlp& m) {
    auto spec = j.at("spec").get<MlpSpec>();
    std::vector<DenseLayer> layers;
    for (const auto& l : j.at("layers")) layers.push_back(dense_from_json(l));
    m = Mlp(std::move(spec), std::move(layers));
}

void to_json(nlohmann::json& j, const Cnn& c) {
    j = {{"spec", c.spec()}, {"layers", nlohmann::json::array()}};
    for (const auto& l : c.conv_layers()) {
        j["layers"].push_back({{"type", "conv1d"},
                               {"activation", to_string(l.activation)},
                               {"filter_size", l.filter_size},
                               {"dilation", l.dilation},
                               {"in_channels", l.in_channels()},
                               {"filters", l.filters()},
                               {"weights", row_major(l.weights)},
                               {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    j["layers"].push_back(dense_json(c.head()));
}

void from_json(const nlohmann::json& j, Cnn& c) {
    auto spec = j.at("spec").get<CnnSpec>();
    const auto& layers = j.at("layers");
    if (layers.size() < 2) throw DataError("CNN checkpoint needs conv layers and a dense head");
    std::vector<Conv1dLayer> conv;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.at("type").get<std::string>() != "conv1d") throw DataError("expected a conv1d layer");
        Conv1dLayer layer;
        layer.activation = parse_activation(l.at("activation").get<std::string>());
        layer.filter_size = l.at("filter_size").get<int>();
        layer.dilation = l.at("dilation").get<int>();
        const auto in_ch = l.at("in_channels").get<Eigen::Index>();
        const auto filters = l.at("filters").get<Eigen::Index>();
        layer.weights = from_row_major(l.at("weights").get<std::vector<double>>(), layer.filter_size * in_ch, filters,
                                       "conv1d layer");
        layer.bias = row_from(l.at("bias").get<std::vector<double>>());
        conv.push_back(std::move(layer));
    }
    c = Cnn(std::move(spec), std::move(conv), dense_from_json(layers.back()));
}

std::vector<Eigen::Map<Matrix>> parameter_blocks(Mlp& m) {
    std::vector<Eigen::Map<Matrix>> out;
    for (auto& l : m.layers()) {
        out.push_back(block(l.weights));
        out.push_back(block(l.bias));
    }
    return out;
}

std::vector<Eigen::Map<Matrix>> parameter_blocks(Cnn& c) {
    std::vector<Eigen::Map<Matrix>> out;
    for (auto& l : c.conv_layers()) {
        out.push_back(block(l.weights));
        out.push_back(block(l.bias));
    }
    out.push_back(block(c.head().weights));
    out.push_back(block(c.head().bias));
    return out;
}

std::vector<Eigen::Map<Matrix>> parameter_blocks(NetworkGrads& g) {
    std::vector<Eigen::Map<Matrix>> out;
    for (auto& l : g.layers) {
        out.push_back(block(l.weights));
        out.push_back(block(l.bias));
    }
    return out;
}

}  // namespace motortemp
