#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lrmem {

// One receptive field of a learning-rate memory: a squared-exponential
// kernel centered at `center` with bandwidth `width`, carrying a constant
// learning-rate value `rate`.
struct LocalModel {
    double center = 0.0;
    double width = 1.0;
    double rate = 0.0;
};

// exp(-0.5 * ((z - center) / width)^2), in (0, 1].
double kernel_weight(const LocalModel& model, double z);

// How agreement between consecutive gradients is turned into a training
// signal. ClippedProduct is the default; SignProduct is kept for ablation.
enum class SignalRule {
    ClippedProduct, // clamp(z_curr * z_prev, -1, +1)
    SignProduct,    // sign(z_curr * z_prev)
};

// Per-local-model training signal, pooled over the coordinates of one
// parameter group. Each entry lies in [-1, 1].
using MemorySignal = std::vector<double>;

// Additive floor on the kernel-weight sum in the normalized prediction.
inline constexpr double kDenominatorFloor = 1e-12;

struct MemorySnapshot;

// A memory of learning rates for a single parameter group: `model_count`
// local constant models with centers linearly spaced over
// [-clip_bound, +clip_bound], each predicting its own rate, blended by
// normalized kernel weights. A fresh memory predicts `eta_init` everywhere.
class LearningRateMemory {
public:
    // Widths are overlap * spacing; rates are clamped to [0, rate_max].
    LearningRateMemory(int model_count, double clip_bound, double eta_init,
                       double overlap = 1.0, double rate_max = 1.0);

    int model_count() const { return static_cast<int>(rates_.size()); }
    double clip_bound() const { return clip_bound_; }
    double eta_init() const { return eta_init_; }
    double overlap() const { return overlap_; }
    double rate_max() const { return rate_max_; }
    double spacing() const { return spacing_; }
    double width() const { return width_; }
    double center(int m) const { return -clip_bound_ + spacing_ * m; }
    LocalModel model(int m) const { return {center(m), width_, rates_[m]}; }
    const std::vector<double>& rates() const { return rates_; }

    // Kernel-weighted average of the local rates at gradient value z.
    // Callers clip z to [-clip_bound, clip_bound] first.
    double predict_rate(double z) const;

    // Element-wise predict_rate over one gradient vector.
    std::vector<double> predict_rates(std::span<const double> grad) const;
    void predict_rates(std::span<const double> grad, std::span<double> out) const;

    // Pooled per-local-model signal from two consecutive gradients of the
    // same group. The kernel is evaluated at the older gradient (z_prev),
    // the one whose predicted rate produced the observed outcome:
    //   a_m = (1/D) * sum_d rule(z_curr[d] * z_prev[d]) * psi_m(z_prev[d])
    // An empty group yields an all-zero signal.
    MemorySignal pooled_signal(std::span<const double> z_prev,
                               std::span<const double> z_curr,
                               SignalRule rule = SignalRule::ClippedProduct) const;

    // rates[m] <- clamp(rates[m] + delta[m], 0, rate_max).
    void apply_update(std::span<const double> delta);

private:
    // Restore writes rates directly so in-range values carry over bit-exactly.
    friend LearningRateMemory restore(const MemorySnapshot& snap, double rate_max);

    // Index range of models whose kernel weight at z is above the cutoff.
    // May be empty (first > second) when z sits far outside every field.
    std::pair<int, int> active_window(double z) const;

    double clip_bound_ = 0.0;
    double eta_init_ = 0.0;
    double overlap_ = 0.0;
    double rate_max_ = 0.0;
    double spacing_ = 0.0;
    double width_ = 0.0;
    std::vector<double> rates_;
};

// Serializable image of a memory. The JSON schema (version, M, clip_bound,
// eta_init, overlap, theta) round-trips rates bit-exactly.
struct MemorySnapshot {
    int version = 1;
    int model_count = 0;
    double clip_bound = 0.0;
    double eta_init = 0.0;
    double overlap = 0.0;
    std::vector<double> theta;
};

MemorySnapshot snapshot(const LearningRateMemory& memory);
LearningRateMemory restore(const MemorySnapshot& snap, double rate_max = 1.0);

std::string snapshot_to_json(const MemorySnapshot& snap);
MemorySnapshot snapshot_from_json(const std::string& text);

void save_snapshot(const LearningRateMemory& memory, const std::string& path);
LearningRateMemory load_snapshot(const std::string& path, double rate_max = 1.0);

} // namespace lrmem
