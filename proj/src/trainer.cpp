#include "milup/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "milup/error.hpp"

namespace milup {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(base_weight >= 0.0)) throw ConfigError("base weight must be non-negative");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (bag_size < 2) throw ConfigError("bag size must be at least 2");
  if (bag_size > batch_size) throw ConfigError("bag size must not exceed batch size");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (resolved_warmup() > max_steps) throw ConfigError("warmup_steps must not exceed max_steps");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (n_points < 2) throw ConfigError("n_points must be at least 2");
}

EvalResult evaluate(const UpliftModel& model, const Dataset& ds, std::size_t n_points) {
  const Prediction pred = predict(model, ds.features);
  EvalResult r;
  r.curve = uplift_curve(pred.uplift, ds.outcome, ds.treatment, CurveOptions{n_points});
  r.auuc = r.curve.auuc;
  return r;
}

namespace {

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + step + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

[[noreturn]] void abort_nonfinite(const TrainConfig& cfg, const Dataset& train,
                                  const MiniBatch& mb, std::size_t step, double l_base,
                                  double l_mil) {
  std::ostringstream msg;
  msg << "non-finite loss at step " << step << " (L_base=" << l_base << ", L_mil=" << l_mil
      << ", u_t=" << mb.u_t << "); batch rows:";
  for (std::size_t i = 0; i < mb.rows.size() && i < 16; ++i) msg << ' ' << mb.rows[i];
  if (mb.rows.size() > 16) msg << " ...";
  if (!cfg.diagnostics_dir.empty()) {
    std::filesystem::create_directories(cfg.diagnostics_dir);
    const auto path = cfg.diagnostics_dir / ("nonfinite_step" + std::to_string(step) + ".csv");
    write_table(subset(train, mb.rows), path);
    msg << "; batch written to " << path.string();
  }
  throw TrainingError(msg.str());
}

}  // namespace

TrainResult train(const DataSplits& splits, const TrainConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const Dataset& train_set = splits.train;
  if (train_set.treated_count() == 0 || train_set.treated_count() == train_set.size()) {
    throw ConfigError("train: the training split needs both treated and control rows");
  }

  UpliftModel model = build_model(cfg.kind, train_set.dims(), cfg.hidden_sizes, cfg.seed);
  if (cfg.standardize) model.input_transform = Standardizer::fit(train_set.features);
  ModelOptimizer optimizer = make_optimizer(model, cfg.learning_rate);

  TrainResult result;
  TrainReport& report = result.report;
  report.config = cfg;
  UpliftModel best = model;
  double best_auuc = -std::numeric_limits<double>::infinity();
  const std::size_t warmup = cfg.resolved_warmup();

  std::size_t step = 0, epoch = 0, stale_evals = 0, interval_steps = 0;
  double sum_base = 0.0, sum_mil = 0.0;
  bool stop = false;
  while (!stop && step < cfg.max_steps) {
    const auto batches = minibatches(train_set, cfg.batch_size, cfg.seed, epoch++);
    if (batches.empty()) throw ConfigError("train: batch size exceeds the training split");
    for (const MiniBatch& mb : batches) {
      if (step >= cfg.max_steps) break;
      ++step;
      const Batch batch = make_batch(train_set, mb);
      const double alpha = step <= warmup ? 0.0 : cfg.alpha;
      double l_base = 0.0, l_mil = 0.0;
      ModelGrads grads;
      bool single_arm = false;
      if (alpha == 0.0 && cfg.base_weight == 1.0) {
        BaseLossResult base = base_loss_and_grads(model, batch.x, batch.treatment, batch.outcome);
        l_base = base.loss;
        single_arm = base.treated_empty || base.control_empty;
        grads = std::move(base.grads);
      } else {
        MilSettings settings{alpha, cfg.bag_size, cfg.mode, cfg.base_weight,
                             step_seed(cfg.seed, step)};
        CombinedResult combined = combined_loss_and_grads(model, batch, settings);
        l_base = combined.loss.l_base;
        l_mil = alpha == 0.0 ? 0.0 : combined.loss.l_mil;
        single_arm = combined.loss.treated_empty || combined.loss.control_empty;
        if (alpha != 0.0 && combined.loss.usable_bags == 0) ++report.batches_without_usable_bags;
        grads = std::move(combined.grads);
      }
      if (!std::isfinite(l_base) || !std::isfinite(l_mil)) {
        abort_nonfinite(cfg, train_set, mb, step, l_base, l_mil);
      }
      if (single_arm) ++report.single_arm_batches;
      adam_step(model, grads, optimizer);
      sum_base += l_base;
      sum_mil += l_mil;
      ++interval_steps;

      if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
        const double valid_auuc = evaluate(model, splits.valid, cfg.n_points).auuc;
        const double n = static_cast<double>(interval_steps);
        report.history.push_back({step, sum_base / n, sum_mil / n, valid_auuc});
        sum_base = sum_mil = 0.0;
        interval_steps = 0;
        if (valid_auuc > best_auuc) {
          best_auuc = valid_auuc;
          best = model;
          report.best_step = step;
          stale_evals = 0;
        } else if (step > warmup && ++stale_evals >= cfg.patience) {
          report.early_stopped = true;
          stop = true;
          break;
        }
      }
    }
  }
  report.steps_run = step;
  report.best_valid_auuc = best_auuc;
  const EvalResult test = evaluate(best, splits.test, cfg.n_points);
  report.test_auuc = test.auuc;
  result.test_curve = test.curve;
  result.model = std::move(best);
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

RepeatResult repeat_runs(const DataSplits& splits, const TrainConfig& config, std::size_t n_runs,
                         std::size_t jobs) {
  if (n_runs == 0) throw ConfigError("repeat_runs: need at least one run");
  config.validate();
  RepeatResult out;
  out.runs.resize(n_runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_runs; i = next++) {
      RunOutcome& run = out.runs[i];
      run.seed = config.seed + i;
      TrainConfig cfg = config;
      cfg.seed = run.seed;
      try {
        run.result = train(splits, cfg);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n_runs));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  std::vector<double> auucs;
  for (const auto& run : out.runs) {
    if (run.result) {
      auucs.push_back(run.result->report.test_auuc);
    } else {
      ++out.failures;
    }
  }
  if (!auucs.empty()) out.aggregate = aggregate_runs(auucs);
  return out;
}

}  // namespace milup
