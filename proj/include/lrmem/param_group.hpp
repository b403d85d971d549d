#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lrmem {

// A named slice of model parameters (one network layer, one coordinate of a
// test function, ...). Groups are the unit at which learning-rate memories
// are allocated.
struct ParamGroup {
    std::string name;
    std::vector<double> values;
};

using ParamGroupList = std::vector<ParamGroup>;

inline std::size_t total_size(const ParamGroupList& groups) {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.values.size();
    return n;
}

inline std::vector<std::string> group_names(const ParamGroupList& groups) {
    std::vector<std::string> names;
    names.reserve(groups.size());
    for (const auto& g : groups) names.push_back(g.name);
    return names;
}

} // namespace lrmem
