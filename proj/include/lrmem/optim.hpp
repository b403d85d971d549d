#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lrmem/memory.hpp"
#include "lrmem/param_group.hpp"

namespace lrmem {

// Element-wise clamp to [-bound, bound]. bound must be positive.
std::vector<double> clip_gradients(std::span<const double> grad, double bound);
void clip_gradients_inplace(std::span<double> grad, double bound);

// Plain gradient descent step with optional clipping (bound <= 0 disables).
void gd_step(std::span<double> params, std::span<const double> grad,
             double eta, double clip_bound = 0.0);

struct AdamConfig {
    double rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First and second moment accumulators for one parameter vector. transform()
// maps a raw gradient to the full update step (rate included, bias
// corrected); callers subtract the result from their parameters.
class AdamState {
public:
    AdamState() = default;
    AdamState(int dim, AdamConfig config);

    std::vector<double> transform(std::span<const double> grad);
    void transform(std::span<const double> grad, std::span<double> out);

    long step_count() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_{};
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

// Rule that turns a pooled memory signal into a rate update.
// PlainGdUpdater: delta = step_size * signal.
// AdamMemoryUpdater: treats -signal as the gradient of a memory loss and
// runs Adam on it, so persistently agreeing gradients grow the rate at a
// normalized pace.
struct PlainGdUpdater {
    double step_size = 0.005;
};

struct AdamMemoryUpdater {
    AdamState state;
};

using MemoryUpdater = std::variant<PlainGdUpdater, AdamMemoryUpdater>;

std::vector<double> memory_updater_delta(MemoryUpdater& updater,
                                         std::span<const double> signal);

enum class BaseTransform { Identity, Adam };
enum class MemoryUpdaterKind { PlainGd, AdamOnMemory };

struct MetaOptimizerConfig {
    BaseTransform base = BaseTransform::Identity;
    MemoryUpdaterKind updater = MemoryUpdaterKind::PlainGd;
    double eta_init = 0.001;   // rate a fresh memory predicts everywhere
    double meta_rate = 0.005;  // step size of the memory update
    int model_count = 100;
    double clip_bound = 10.0;
    double overlap = 1.0;
    double rate_max = 1.0;
    bool memory_update_enabled = true;
    SignalRule signal_rule = SignalRule::ClippedProduct;
    // Base Adam feeds the memory its transformed gradient; its own rate
    // stays at 1 so the memory owns the overall scale.
    AdamConfig base_adam{1.0, 0.9, 0.999, 1e-8};
    double updater_beta1 = 0.9;
    double updater_beta2 = 0.999;
    double updater_epsilon = 1e-8;
};

// Gradient-descent optimizer whose per-coordinate learning rates come from
// one LearningRateMemory per parameter group. Each step: clip the gradient,
// optionally pass it through a base Adam transform (clipping again), train
// the memory from the agreement between this and the previous transformed
// gradient, then move the parameters by the predicted rates.
class MetaOptimizer {
public:
    explicit MetaOptimizer(MetaOptimizerConfig config);

    // Groups may be registered up front (required before load_memory) or
    // implicitly by the first step() call.
    void register_group(const std::string& name, int dim);

    void step(ParamGroupList& params, const ParamGroupList& grads);

    // Replace one group's memory with a restored snapshot. The rate cap
    // comes from this optimizer's config.
    void load_memory(const std::string& name, const MemorySnapshot& snap);

    std::map<std::string, MemorySnapshot> memory_snapshots() const;
    const LearningRateMemory& memory(const std::string& name) const;

    // Per-group mean predicted rate of the most recent step, in group
    // registration order.
    const std::vector<std::string>& group_names() const { return names_; }
    const std::vector<double>& last_mean_rates() const { return last_mean_rates_; }

    const MetaOptimizerConfig& config() const { return config_; }

private:
    struct GroupSlot {
        int dim = 0;
        LearningRateMemory memory;
        std::vector<double> prev;  // previous transformed gradient, zeros at start
        std::optional<AdamState> base_adam;
        MemoryUpdater updater;
    };

    GroupSlot make_slot(int dim) const;
    GroupSlot& slot(const std::string& name);

    MetaOptimizerConfig config_;
    std::vector<std::string> names_;
    std::map<std::string, GroupSlot> slots_;
    std::vector<double> last_mean_rates_;
    std::vector<double> scratch_z_;
    std::vector<double> scratch_rates_;
};

} // namespace lrmem
