#pragma once

#include <ostream>

#include <json.hpp>

#include "fdi/sim.hpp"

namespace fdi {

/// Line-delimited JSON episode trace: one object per step with the true and
/// observed times, the effective perturbation, alarm flags and the traveling
/// weight. Meant for debugging and plot generation.
inline void write_episode_trace(const EpisodeResult& result, std::ostream& out) {
  for (size_t t = 0; t < result.per_step.size(); ++t) {
    const StepMetrics& m = result.per_step[t];
    nlohmann::json j;
    j["step"] = t;
    j["traveling_weight"] = m.traveling_weight;
    j["true_times"] = m.true_times;
    j["observed_times"] = m.observed_times;
    std::vector<double> a(m.true_times.size());
    for (size_t e = 0; e < a.size(); ++e) a[e] = m.observed_times[e] - m.true_times[e];
    j["perturbation"] = a;
    j["attack_active"] = m.attack_active;
    j["alarm"] = m.alarm;
    j["false_alarm"] = m.false_alarm;
    out << j.dump() << "\n";
  }
}

}  // namespace fdi
