#include "lrmem/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lrmem {

std::vector<double> clip_gradients(std::span<const double> grad, double bound) {
    std::vector<double> out(grad.begin(), grad.end());
    clip_gradients_inplace(out, bound);
    return out;
}

void clip_gradients_inplace(std::span<double> grad, double bound) {
    if (!(bound > 0.0)) throw std::invalid_argument("clip bound must be positive");
    for (double& g : grad) g = std::clamp(g, -bound, bound);
}

void gd_step(std::span<double> params, std::span<const double> grad,
             double eta, double clip_bound) {
    if (params.size() != grad.size())
        throw std::invalid_argument("gradient size mismatch");
    if (clip_bound > 0.0) {
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] -= eta * std::clamp(grad[i], -clip_bound, clip_bound);
    } else {
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] -= eta * grad[i];
    }
}

AdamState::AdamState(int dim, AdamConfig config) : config_(config) {
    if (dim < 0) throw std::invalid_argument("dimension must be non-negative");
    m_.assign(static_cast<std::size_t>(dim), 0.0);
    v_.assign(static_cast<std::size_t>(dim), 0.0);
}

std::vector<double> AdamState::transform(std::span<const double> grad) {
    std::vector<double> out(grad.size());
    transform(grad, out);
    return out;
}

void AdamState::transform(std::span<const double> grad, std::span<double> out) {
    if (grad.size() != m_.size() || out.size() != m_.size())
        throw std::invalid_argument("gradient size mismatch");
    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double m_correction = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double v_correction = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
        v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
        const double m_hat = m_[i] / m_correction;
        const double v_hat = v_[i] / v_correction;
        out[i] = config_.rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
}

std::vector<double> memory_updater_delta(MemoryUpdater& updater,
                                         std::span<const double> signal) {
    if (auto* plain = std::get_if<PlainGdUpdater>(&updater)) {
        std::vector<double> delta(signal.size());
        for (std::size_t m = 0; m < signal.size(); ++m)
            delta[m] = plain->step_size * signal[m];
        return delta;
    }
    // A positive signal should raise the rate, so its negation acts as the
    // loss gradient Adam descends on.
    auto& adam = std::get<AdamMemoryUpdater>(updater);
    std::vector<double> neg(signal.size());
    for (std::size_t m = 0; m < signal.size(); ++m) neg[m] = -signal[m];
    std::vector<double> delta = adam.state.transform(neg);
    for (double& d : delta) d = -d;
    return delta;
}

MetaOptimizer::MetaOptimizer(MetaOptimizerConfig config) : config_(config) {
    if (!(config_.meta_rate > 0.0))
        throw std::invalid_argument("meta_rate must be positive");
}

MetaOptimizer::GroupSlot MetaOptimizer::make_slot(int dim) const {
    GroupSlot s{
        .dim = dim,
        .memory = LearningRateMemory(config_.model_count, config_.clip_bound,
                                     config_.eta_init, config_.overlap,
                                     config_.rate_max),
        .prev = std::vector<double>(static_cast<std::size_t>(dim), 0.0),
        .base_adam = std::nullopt,
        .updater = PlainGdUpdater{config_.meta_rate},
    };
    if (config_.base == BaseTransform::Adam)
        s.base_adam.emplace(dim, config_.base_adam);
    if (config_.updater == MemoryUpdaterKind::AdamOnMemory) {
        AdamConfig mc{config_.meta_rate, config_.updater_beta1,
                      config_.updater_beta2, config_.updater_epsilon};
        s.updater = AdamMemoryUpdater{AdamState(config_.model_count, mc)};
    }
    return s;
}

void MetaOptimizer::register_group(const std::string& name, int dim) {
    if (dim <= 0) throw std::invalid_argument("group dimension must be positive");
    if (slots_.count(name)) throw std::invalid_argument("group already registered: " + name);
    slots_.emplace(name, make_slot(dim));
    names_.push_back(name);
    last_mean_rates_.push_back(config_.eta_init);
}

MetaOptimizer::GroupSlot& MetaOptimizer::slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::invalid_argument("unknown group: " + name);
    return it->second;
}

void MetaOptimizer::step(ParamGroupList& params, const ParamGroupList& grads) {
    if (params.size() != grads.size())
        throw std::invalid_argument("parameter/gradient group count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const auto& g = grads[k];
        if (p.name != g.name)
            throw std::invalid_argument("group name mismatch: " + p.name + " vs " + g.name);
        if (p.values.size() != g.values.size())
            throw std::invalid_argument("group size mismatch: " + p.name);
        if (!slots_.count(p.name))
            register_group(p.name, static_cast<int>(p.values.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        GroupSlot& s = slot(p.name);
        if (s.dim != static_cast<int>(p.values.size()))
            throw std::invalid_argument("group size changed: " + p.name);

        scratch_z_.assign(grads[k].values.begin(), grads[k].values.end());
        clip_gradients_inplace(scratch_z_, config_.clip_bound);
        if (s.base_adam) {
            s.base_adam->transform(scratch_z_, scratch_z_);
            clip_gradients_inplace(scratch_z_, config_.clip_bound);
        }

        if (config_.memory_update_enabled) {
            MemorySignal signal =
                s.memory.pooled_signal(s.prev, scratch_z_, config_.signal_rule);
            s.memory.apply_update(memory_updater_delta(s.updater, signal));
        }

        scratch_rates_.resize(scratch_z_.size());
        s.memory.predict_rates(scratch_z_, scratch_rates_);
        for (std::size_t d = 0; d < p.values.size(); ++d)
            p.values[d] -= scratch_rates_[d] * scratch_z_[d];

        const auto pos = std::find(names_.begin(), names_.end(), p.name) - names_.begin();
        last_mean_rates_[static_cast<std::size_t>(pos)] =
            scratch_rates_.empty()
                ? 0.0
                : std::accumulate(scratch_rates_.begin(), scratch_rates_.end(), 0.0) /
                      static_cast<double>(scratch_rates_.size());

        s.prev.assign(scratch_z_.begin(), scratch_z_.end());
    }
}

void MetaOptimizer::load_memory(const std::string& name, const MemorySnapshot& snap) {
    GroupSlot& s = slot(name);
    s.memory = restore(snap, config_.rate_max);
}

std::map<std::string, MemorySnapshot> MetaOptimizer::memory_snapshots() const {
    std::map<std::string, MemorySnapshot> out;
    for (const auto& [name, s] : slots_) out.emplace(name, snapshot(s.memory));
    return out;
}

const LearningRateMemory& MetaOptimizer::memory(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::invalid_argument("unknown group: " + name);
    return it->second.memory;
}

} // namespace lrmem
