#pragma once

// JSON forms of configs, reports and aggregates, and the flat key=value
// config text the CLI accepts back.

#include <string>

#include "json.hpp"
#include "milup/metrics.hpp"
#include "milup/trainer.hpp"

namespace milup {

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const TrainReport& report);
nlohmann::json to_json(const RunAggregate& agg);

// key=value lines using the CLI's long option names.
std::string to_config_text(const TrainConfig& cfg);

}  // namespace milup
