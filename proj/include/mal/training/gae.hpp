#pragma once

#include <vector>

#include "mal/core/errors.hpp"

namespace mal {

struct Advantages {
    std::vector<double> advantage;
    std::vector<double> target;  // A_t + V_t
};

// delta_t = r_t + gamma·V_{t+1} - V_t with V past the last step taken as 0;
// A_t = delta_t + gamma·lambda·A_{t+1}.
inline Advantages compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                              double lambda) {
    MAL_REQUIRE(rewards.size() == values.size(), "compute_gae: one value estimate per step");
    MAL_REQUIRE(gamma >= 0 && gamma <= 1 && lambda >= 0 && lambda <= 1, "compute_gae: gamma and lambda lie in [0, 1]");
    const std::size_t n = rewards.size();
    Advantages out;
    out.advantage.assign(n, 0.0);
    out.target.assign(n, 0.0);
    double next_value = 0, running = 0;
    for (std::size_t t = n; t-- > 0;) {
        const double delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        out.advantage[t] = running;
        out.target[t] = running + values[t];
        next_value = values[t];
    }
    return out;
}

}  // namespace mal
