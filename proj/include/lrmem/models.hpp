#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrmem/data.hpp"
#include "lrmem/matrix.hpp"
#include "lrmem/param_group.hpp"

namespace lrmem {

enum class LossKind { SoftmaxCrossEntropy, MeanSquaredError };
enum class RunMode { Train, Eval };

// Raised when a loss, gradient, or parameter stops being finite. Callers
// record the event and end the run instead of aborting the experiment.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden;
    int output_dim = 0;
    double dropout = 0.0; // drop probability on the last hidden activation
};

struct LossResult {
    double loss = 0.0;
    ParamGroupList grads;
};

// Fully connected ReLU network with a linear output layer, trained by
// explicit backpropagation. Parameters live in one group per layer
// ("layer0", "layer1", ...), each holding the row-major weight matrix
// followed by the bias vector.
class MlpNetwork {
public:
    MlpNetwork(MlpSpec spec, std::uint64_t seed);

    const MlpSpec& spec() const { return spec_; }
    int layer_count() const { return static_cast<int>(dims_.size()) - 1; }
    static std::string group_name(int layer) { return "layer" + std::to_string(layer); }

    ParamGroupList params() const;
    void set_params(const ParamGroupList& params);

    // Forward pass without dropout.
    Matrix predict(const Matrix& inputs) const;

    // Mean loss over the batch plus gradients in parameter-group layout.
    // Dropout (train mode only) draws its masks from dropout_rng.
    LossResult loss_and_grad(const Batch& batch, LossKind loss, RunMode mode,
                             std::mt19937_64& dropout_rng) const;

private:
    Matrix forward_layer(const Matrix& a, int layer) const;

    MlpSpec spec_;
    std::vector<int> dims_; // input, hidden..., output
    std::vector<std::vector<double>> groups_;
};

// The classic banana-valley benchmark, minimum at (a, a^2). Coordinates are
// exposed as two single-element parameter groups so each gets its own
// learning-rate memory.
struct RosenbrockObjective {
    double a = 1.0;
    double b = 100.0;

    static ParamGroupList make_point(double x, double y);
    double value(const ParamGroupList& point) const;
    ParamGroupList gradient(const ParamGroupList& point) const;
};

} // namespace lrmem
