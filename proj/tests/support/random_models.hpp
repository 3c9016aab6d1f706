#pragma once

#include <cstdint>
#include <random>

#include "sbpm/model/types.hpp"
#include "sbpm/validate/validate.hpp"

namespace sbpm::testing {

struct RandomModelOptions {
    int max_subjects = 4;
    int max_states = 6;
    bool with_business_objects = false;
    bool with_timeouts = true;
};

// Structurally valid (parseable, direction-consistent, no duplicate labels)
// model with 2..max_subjects subjects and 2..max_states states each.
model::ProcessModel random_model(std::mt19937_64& rng, const RandomModelOptions& opts = {});

// Independent brute-force enumerator of the product space, used as an oracle
// for the soundness checker. Shares no code with the validate module.
struct OracleResult {
    bool deadlock = false;
    std::size_t states = 0;
};
OracleResult brute_force_deadlock(const model::ProcessModel& m, int pool_bound);

}  // namespace sbpm::testing
