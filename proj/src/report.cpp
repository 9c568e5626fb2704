#include "milup/report.hpp"

#include <sstream>

namespace milup {
namespace {

std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string s;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(sizes[i]);
  }
  return s;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& cfg) {
  return {
      {"model", std::string(to_string(cfg.kind))},
      {"hidden", cfg.hidden_sizes},
      {"lr", cfg.learning_rate},
      {"alpha", cfg.alpha},
      {"batch_size", cfg.batch_size},
      {"bag_size", cfg.bag_size},
      {"max_steps", cfg.max_steps},
      {"warmup_steps", cfg.resolved_warmup()},
      {"eval_every", cfg.eval_every},
      {"patience", cfg.patience},
      {"seed", cfg.seed},
      {"mode", std::string(to_string(cfg.mode))},
      {"standardize", cfg.standardize},
      {"base_weight", cfg.base_weight},
      {"points", cfg.n_points},
  };
}

nlohmann::json to_json(const TrainReport& report) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : report.history) {
    history.push_back({{"step", h.step},
                       {"l_base", h.l_base},
                       {"l_mil", h.l_mil},
                       {"valid_auuc", h.valid_auuc}});
  }
  return {
      {"config", to_json(report.config)},
      {"history", std::move(history)},
      {"best_step", report.best_step},
      {"best_valid_auuc", report.best_valid_auuc},
      {"test_auuc", report.test_auuc},
      {"steps_run", report.steps_run},
      {"early_stopped", report.early_stopped},
      {"single_arm_batches", report.single_arm_batches},
      {"batches_without_usable_bags", report.batches_without_usable_bags},
      {"wall_clock_s", report.wall_clock_s},
  };
}

nlohmann::json to_json(const RunAggregate& agg) {
  return {
      {"auucs", agg.values},
      {"mean", agg.mean},
      {"std", agg.stddev},
      {"runs", agg.values.size()},
      {"single_run", agg.single_run},
      {"formatted_x1e3", agg.formatted()},
  };
}

std::string to_config_text(const TrainConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "model=" << to_string(cfg.kind) << '\n'
      << "hidden=" << join_sizes(cfg.hidden_sizes) << '\n'
      << "lr=" << cfg.learning_rate << '\n'
      << "alpha=" << cfg.alpha << '\n'
      << "batch-size=" << cfg.batch_size << '\n'
      << "bag-size=" << cfg.bag_size << '\n'
      << "max-steps=" << cfg.max_steps << '\n'
      << "warmup-steps=" << cfg.resolved_warmup() << '\n'
      << "eval-every=" << cfg.eval_every << '\n'
      << "patience=" << cfg.patience << '\n'
      << "seed=" << cfg.seed << '\n'
      << "mode=" << to_string(cfg.mode) << '\n'
      << "standardize=" << (cfg.standardize ? "true" : "false") << '\n'
      << "base-weight=" << cfg.base_weight << '\n'
      << "points=" << cfg.n_points << '\n';
  return out.str();
}

}  // namespace milup
