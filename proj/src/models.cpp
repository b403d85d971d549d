#include "lrmem/models.hpp"

#include <algorithm>
#include <cmath>

namespace lrmem {
namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace

MlpNetwork::MlpNetwork(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    if (spec_.input_dim <= 0) throw std::invalid_argument("input_dim must be positive");
    if (spec_.output_dim <= 0) throw std::invalid_argument("output_dim must be positive");
    for (int h : spec_.hidden)
        if (h <= 0) throw std::invalid_argument("hidden sizes must be positive");
    if (spec_.dropout < 0.0 || spec_.dropout >= 1.0)
        throw std::invalid_argument("dropout must lie in [0, 1)");

    dims_.push_back(spec_.input_dim);
    for (int h : spec_.hidden) dims_.push_back(h);
    dims_.push_back(spec_.output_dim);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int l = 0; l < layer_count(); ++l) {
        const int in = dims_[static_cast<std::size_t>(l)];
        const int out = dims_[static_cast<std::size_t>(l) + 1];
        std::vector<double> g(static_cast<std::size_t>(out) * in + out, 0.0);
        const double scale = std::sqrt(2.0 / in);
        for (std::size_t i = 0; i < static_cast<std::size_t>(out) * in; ++i)
            g[i] = unit(rng) * scale;
        groups_.push_back(std::move(g)); // biases stay zero
    }
}

ParamGroupList MlpNetwork::params() const {
    ParamGroupList out;
    for (int l = 0; l < layer_count(); ++l)
        out.push_back({group_name(l), groups_[static_cast<std::size_t>(l)]});
    return out;
}

void MlpNetwork::set_params(const ParamGroupList& params) {
    if (params.size() != groups_.size())
        throw std::invalid_argument("wrong number of parameter groups");
    for (int l = 0; l < layer_count(); ++l) {
        const auto& g = params[static_cast<std::size_t>(l)];
        if (g.name != group_name(l))
            throw std::invalid_argument("unexpected group name: " + g.name);
        if (g.values.size() != groups_[static_cast<std::size_t>(l)].size())
            throw std::invalid_argument("group size mismatch: " + g.name);
        groups_[static_cast<std::size_t>(l)] = g.values;
    }
}

Matrix MlpNetwork::forward_layer(const Matrix& a, int layer) const {
    const int in = dims_[static_cast<std::size_t>(layer)];
    const int out = dims_[static_cast<std::size_t>(layer) + 1];
    const std::vector<double>& g = groups_[static_cast<std::size_t>(layer)];
    const double* w = g.data();
    const double* b = g.data() + static_cast<std::size_t>(out) * in;
    Matrix z(a.rows, out);
    for (int n = 0; n < a.rows; ++n) {
        const double* row = a.data.data() + static_cast<std::size_t>(n) * in;
        for (int o = 0; o < out; ++o) {
            const double* wrow = w + static_cast<std::size_t>(o) * in;
            double acc = b[o];
            for (int i = 0; i < in; ++i) acc += row[i] * wrow[i];
            z(n, o) = acc;
        }
    }
    return z;
}

Matrix MlpNetwork::predict(const Matrix& inputs) const {
    if (inputs.cols != spec_.input_dim)
        throw std::invalid_argument("input dimension mismatch");
    Matrix a = inputs;
    for (int l = 0; l < layer_count(); ++l) {
        a = forward_layer(a, l);
        if (l + 1 < layer_count())
            for (double& v : a.data) v = v > 0.0 ? v : 0.0;
    }
    return a;
}

LossResult MlpNetwork::loss_and_grad(const Batch& batch, LossKind loss, RunMode mode,
                                     std::mt19937_64& dropout_rng) const {
    const int n = batch.inputs.rows;
    if (n == 0) throw std::invalid_argument("empty batch");
    if (batch.inputs.cols != spec_.input_dim)
        throw std::invalid_argument("input dimension mismatch");
    if (loss == LossKind::SoftmaxCrossEntropy &&
        batch.labels.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("label count mismatch");
    if (loss == LossKind::MeanSquaredError) {
        if (batch.targets.size() != static_cast<std::size_t>(n))
            throw std::invalid_argument("target count mismatch");
        if (spec_.output_dim != 1)
            throw std::invalid_argument("scalar targets need output_dim 1");
    }
    for (const auto& g : groups_)
        if (!all_finite(g)) throw DivergenceError("non-finite parameters");

    const int layers = layer_count();
    // Forward, keeping pre- and post-activation values per layer.
    std::vector<Matrix> acts; // acts[l] feeds layer l
    acts.reserve(static_cast<std::size_t>(layers) + 1);
    acts.push_back(batch.inputs);
    std::vector<Matrix> zs;
    zs.reserve(static_cast<std::size_t>(layers));
    std::vector<double> drop_mask;
    const bool use_dropout = mode == RunMode::Train && spec_.dropout > 0.0 && layers > 1;
    for (int l = 0; l < layers; ++l) {
        Matrix z = forward_layer(acts.back(), l);
        zs.push_back(z);
        if (l + 1 < layers) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;
            if (use_dropout && l == layers - 2) {
                const double keep = 1.0 - spec_.dropout;
                std::bernoulli_distribution keep_draw(keep);
                drop_mask.resize(z.size());
                for (std::size_t i = 0; i < z.size(); ++i) {
                    drop_mask[i] = keep_draw(dropout_rng) ? 1.0 / keep : 0.0;
                    z.data[i] *= drop_mask[i];
                }
            }
        }
        acts.push_back(std::move(z));
    }

    // Loss and its gradient at the linear output.
    Matrix& y = acts.back();
    Matrix dy(n, spec_.output_dim);
    double total = 0.0;
    if (loss == LossKind::SoftmaxCrossEntropy) {
        for (int r = 0; r < n; ++r) {
            double row_max = y(r, 0);
            for (int c = 1; c < y.cols; ++c) row_max = std::max(row_max, y(r, c));
            double sum = 0.0;
            for (int c = 0; c < y.cols; ++c) sum += std::exp(y(r, c) - row_max);
            const int label = batch.labels[static_cast<std::size_t>(r)];
            if (label < 0 || label >= y.cols)
                throw std::invalid_argument("label out of range");
            total += -(y(r, label) - row_max - std::log(sum));
            for (int c = 0; c < y.cols; ++c) {
                const double p = std::exp(y(r, c) - row_max) / sum;
                dy(r, c) = (p - (c == label ? 1.0 : 0.0)) / n;
            }
        }
        total /= n;
    } else {
        for (int r = 0; r < n; ++r) {
            const double diff = y(r, 0) - batch.targets[static_cast<std::size_t>(r)];
            total += diff * diff;
            dy(r, 0) = 2.0 * diff / n;
        }
        total /= n;
    }

    // Backward.
    LossResult result;
    result.loss = total;
    result.grads.resize(static_cast<std::size_t>(layers));
    Matrix da = std::move(dy);
    for (int l = layers - 1; l >= 0; --l) {
        const int in = dims_[static_cast<std::size_t>(l)];
        const int out = dims_[static_cast<std::size_t>(l) + 1];
        const Matrix& a_in = acts[static_cast<std::size_t>(l)];
        std::vector<double> grad(static_cast<std::size_t>(out) * in + out, 0.0);
        double* gw = grad.data();
        double* gb = grad.data() + static_cast<std::size_t>(out) * in;
        for (int r = 0; r < n; ++r) {
            const double* arow = a_in.data.data() + static_cast<std::size_t>(r) * in;
            const double* drow = da.data.data() + static_cast<std::size_t>(r) * out;
            for (int o = 0; o < out; ++o) {
                const double d = drow[o];
                if (d == 0.0) continue;
                double* gwrow = gw + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) gwrow[i] += d * arow[i];
                gb[o] += d;
            }
        }
        result.grads[static_cast<std::size_t>(l)] = {group_name(l), std::move(grad)};

        if (l > 0) {
            const std::vector<double>& g = groups_[static_cast<std::size_t>(l)];
            const double* w = g.data();
            Matrix prev(n, in);
            for (int r = 0; r < n; ++r) {
                const double* drow = da.data.data() + static_cast<std::size_t>(r) * out;
                double* prow = prev.data.data() + static_cast<std::size_t>(r) * in;
                for (int o = 0; o < out; ++o) {
                    const double d = drow[o];
                    if (d == 0.0) continue;
                    const double* wrow = w + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) prow[i] += d * wrow[i];
                }
            }
            // Through dropout, then the ReLU gate.
            if (use_dropout && l == layers - 1)
                for (std::size_t i = 0; i < prev.data.size(); ++i)
                    prev.data[i] *= drop_mask[i];
            const Matrix& z = zs[static_cast<std::size_t>(l) - 1];
            for (std::size_t i = 0; i < prev.data.size(); ++i)
                if (z.data[i] <= 0.0) prev.data[i] = 0.0;
            da = std::move(prev);
        }
    }

    if (!std::isfinite(result.loss)) throw DivergenceError("non-finite loss");
    for (const auto& g : result.grads)
        if (!all_finite(g.values)) throw DivergenceError("non-finite gradient");
    return result;
}

ParamGroupList RosenbrockObjective::make_point(double x, double y) {
    return {{"x", {x}}, {"y", {y}}};
}

double RosenbrockObjective::value(const ParamGroupList& point) const {
    const double x = point.at(0).values.at(0);
    const double y = point.at(1).values.at(0);
    const double p = y - x * x;
    return (a - x) * (a - x) + b * p * p;
}

ParamGroupList RosenbrockObjective::gradient(const ParamGroupList& point) const {
    const double x = point.at(0).values.at(0);
    const double y = point.at(1).values.at(0);
    const double p = y - x * x;
    return {{"x", {-2.0 * (a - x) - 4.0 * b * x * p}}, {"y", {2.0 * b * p}}};
}

} // namespace lrmem
