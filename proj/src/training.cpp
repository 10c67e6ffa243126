#include "hgrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include "hgrec/error.hpp"
#include "hgrec/eval.hpp"
#include "hgrec/random.hpp"

namespace hgrec {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (weight_decay < 0.0) throw InvalidArgument("weight decay must be >= 0");
  if (negatives < 1) throw InvalidArgument("negatives per positive must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"warmup_steps", c.warmup_steps},
                     {"weight_decay", c.weight_decay},   {"negatives", c.negatives},
                     {"batch_size", c.batch_size},       {"epochs", c.epochs},
                     {"seed", c.seed},                   {"beta1", c.beta1},
                     {"beta2", c.beta2},                 {"epsilon", c.epsilon},
                     {"validation_interval", c.validation_interval}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.negatives = j.value("negatives", d.negatives);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.validation_interval = j.value("validation_interval", d.validation_interval);
}

PreparedData prepare_data(const Dataset& raw, const DataConfig& config) {
  config.split.validate();
  if (config.window_seconds < 0) throw InvalidArgument("window must be >= 0 seconds");
  PreparedData out;
  auto filtered = filter_min_interactions(raw, config.min_count);
  out.filtered = std::move(filtered.dataset);
  out.split = chronological_split(out.filtered, config.split);
  out.split.report.filter_passes = filtered.passes;
  SplitSpec validation_spec = config.split;
  validation_spec.seed = derive_seed(config.split.seed, "validation");
  out.split.validation =
      build_candidate_sets(std::move(out.split.validation), out.filtered, validation_spec);
  out.split.test = build_candidate_sets(std::move(out.split.test), out.filtered, config.split);
  out.graph = build_hypergraph(out.split.train, config.window_seconds);
  return out;
}

namespace {

double clamp_probability(double p, std::size_t& clamps) {
  if (p < kProbabilityClamp) {
    ++clamps;
    return kProbabilityClamp;
  }
  if (p > 1.0 - kProbabilityClamp) {
    ++clamps;
    return 1.0 - kProbabilityClamp;
  }
  return p;
}

double bce(double p, double r) { return -(r * std::log(p) + (1.0 - r) * std::log(1.0 - p)); }

}  // namespace

LossValue compute_loss(std::span<const Prediction> predictions, double theta_squared_norm,
                       double lambda) {
  if (predictions.empty()) throw InvalidArgument("compute_loss needs at least one prediction");
  LossValue loss;
  double sum = 0.0;
  for (const auto& pr : predictions) {
    if (!(pr.label == 0.0 || pr.label == 1.0)) throw InvalidArgument("labels must be 0 or 1");
    if (!std::isfinite(pr.probability)) throw NumericalError("non-finite probability");
    sum += bce(clamp_probability(pr.probability, loss.clamp_count), pr.label);
  }
  loss.entries = predictions.size();
  loss.data = sum / static_cast<double>(loss.entries);
  loss.penalty = lambda * theta_squared_norm;
  loss.total = loss.data + loss.penalty;
  return loss;
}

LossValue compute_loss(std::span<const Prediction> predictions, const ModelParams& theta,
                       double lambda) {
  return compute_loss(predictions, theta.squared_norm(), lambda);
}

ad::Var bce_sum(ad::Var probabilities, std::span<const double> labels, std::size_t* clamp_count) {
  const Matrix& p = probabilities.value();
  if (p.rows() != 1 || p.cols() != labels.size()) {
    throw ShapeError("bce_sum: probabilities " + shape_string(p) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  std::size_t clamps = 0;
  std::vector<double> clamped(p.cols());
  double total = 0.0;
  for (std::size_t j = 0; j < p.cols(); ++j) {
    clamped[j] = clamp_probability(p(0, j), clamps);
    total += bce(clamped[j], labels[j]);
  }
  if (clamp_count != nullptr) *clamp_count += clamps;
  std::vector<double> r(labels.begin(), labels.end());
  const std::size_t in = probabilities.id();
  return probabilities.tape()->record(
      Matrix(1, 1, total), probabilities.requires_grad(),
      [in, clamped = std::move(clamped), r = std::move(r)](ad::Tape& tp, std::size_t self) {
        const double g = tp.grad(self)(0, 0);
        Matrix& gp = tp.grad(in);
        for (std::size_t j = 0; j < clamped.size(); ++j) {
          gp(0, j) += g * (-(r[j] / clamped[j]) + (1.0 - r[j]) / (1.0 - clamped[j]));
        }
      });
}

std::size_t UserSample::entries() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.items.size();
  return n;
}

std::vector<UserSample> sample_training_examples(const Dataset& train, std::size_t negatives,
                                                 std::uint64_t seed) {
  const std::size_t n_users = train.n_users();
  const std::size_t n_items = train.n_items();
  std::vector<std::array<std::set<std::uint32_t>, kBehaviourCount>> positives(n_users);
  std::vector<std::vector<bool>> touched(n_users, std::vector<bool>(n_items, false));
  const auto& records = train.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto u = train.record_user(i);
    const auto it = train.record_item(i);
    positives[u][behaviour_index(records[i].behaviour)].insert(it);
    touched[u][it] = true;
  }
  std::vector<UserSample> out;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    std::vector<std::uint32_t> eligible;
    for (std::uint32_t it = 0; it < n_items; ++it) {
      if (!touched[u][it]) eligible.push_back(it);
    }
    Rng rng(derive_seed(seed, u));
    UserSample sample;
    sample.user = u;
    for (Behaviour b : kAllBehaviours) {
      const auto& pos = positives[u][behaviour_index(b)];
      if (pos.empty()) continue;
      BehaviourGroup group;
      group.behaviour = b;
      for (std::uint32_t it : pos) {
        group.items.push_back(it);
        group.labels.push_back(1.0);
        if (eligible.empty()) continue;
        for (std::size_t k = 0; k < negatives; ++k) {
          group.items.push_back(eligible[rng.index(eligible.size())]);
          group.labels.push_back(0.0);
        }
      }
      sample.groups.push_back(std::move(group));
    }
    if (!sample.groups.empty()) out.push_back(std::move(sample));
  }
  return out;
}

namespace {

// Forward of one user's sample; returns the summed BCE node.
ad::Var user_loss(ParamBinder& bind, const Model& model, const Hypergraph& graph,
                  const UserSample& sample, std::size_t* clamps, CostLog* log) {
  const auto forward = forward_user(bind, model, graph, sample.user, log);
  ad::Var total;
  for (const auto& group : sample.groups) {
    ad::Var probs = score_behaviour(bind, model, forward, group.behaviour, group.items);
    ad::Var part = bce_sum(probs, group.labels, clamps);
    total = total.valid() ? ad::add(total, part) : part;
  }
  return total;
}

std::size_t total_entries(std::span<const UserSample> samples) {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.entries();
  return n;
}

}  // namespace

BatchResult accumulate_gradients(const Model& model, const Hypergraph& graph,
                                 std::span<const UserSample> batch, ModelParams& grads,
                                 CostLog* log) {
  BatchResult result;
  result.entries = total_entries(batch);
  if (result.entries == 0) return result;
  const auto sinks = gradient_sinks(model.params, grads);
  const double seed = 1.0 / static_cast<double>(result.entries);
  for (const auto& sample : batch) {
    if (sample.groups.empty()) continue;
    ad::Tape tape;
    ParamBinder bind(tape, sinks);
    ad::Var loss = user_loss(bind, model, graph, sample, &result.clamp_count, log);
    result.data_loss_sum += loss.value()(0, 0);
    tape.backward(loss, seed);
  }
  return result;
}

LossValue evaluate_objective(const Model& model, const Hypergraph& graph,
                             std::span<const UserSample> samples, double lambda) {
  LossValue loss;
  loss.entries = total_entries(samples);
  if (loss.entries == 0) throw InvalidArgument("objective over an empty sample");
  double sum = 0.0;
  for (const auto& sample : samples) {
    if (sample.groups.empty()) continue;
    ad::Tape tape;
    ParamBinder bind(tape);
    sum += user_loss(bind, model, graph, sample, &loss.clamp_count, nullptr).value()(0, 0);
  }
  loss.data = sum / static_cast<double>(loss.entries);
  loss.penalty = lambda * model.params.squared_norm();
  loss.total = loss.data + loss.penalty;
  return loss;
}

void check_gradients_finite(const ModelParams& grads) {
  for (const auto& [name, block] : grads.blocks()) {
    if (!block->all_finite()) throw NumericalError("non-finite gradient in parameter block " + name);
  }
}

AdamState AdamState::for_params(const ModelParams& params) {
  return {params.zeros_like(), params.zeros_like()};
}

double effective_learning_rate(const TrainConfig& config, std::size_t step) {
  if (config.warmup_steps == 0) return config.learning_rate;
  const double ramp = static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  return config.learning_rate * std::min(1.0, ramp);
}

void adamw_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                const TrainConfig& config, std::size_t step) {
  if (step < 1) throw InvalidArgument("AdamW step must be >= 1");
  auto p = params.blocks();
  const auto g = grads.blocks();
  auto m = state.m.blocks();
  auto v = state.v.blocks();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw InvalidArgument("optimiser state does not match the parameter layout");
  }
  const double lr = effective_learning_rate(config, step);
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t b = 0; b < p.size(); ++b) {
    auto theta = p[b].second->values();
    const auto grad = g[b].second->values();
    auto m1 = m[b].second->values();
    auto m2 = v[b].second->values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= lr * config.weight_decay * theta[i];
      m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * grad[i];
      m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double m_hat = m1[i] / correction1;
      const double v_hat = m2[i] / correction2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},         {"mean_loss", r.mean_loss},
                     {"clamp_count", r.clamp_count}, {"val_hr5", r.val_hr5},
                     {"val_ndcg5", r.val_ndcg5}, {"wall_ms", r.wall_ms}};
}

TrainResult train(Model model, const Hypergraph& graph, const Dataset& train_set,
                  std::span<const EvalInstance> validation, const TrainConfig& config,
                  std::ostream* log_out, CostLog* cost) {
  config.validate();
  if (train_set.records().empty()) throw InvalidArgument("train split is empty");
  TrainResult result;
  const std::uint64_t negative_seed = derive_seed(config.seed, "negatives");
  const std::uint64_t shuffle_seed = derive_seed(config.seed, "shuffle");
  AdamState state = AdamState::for_params(model.params);

  for (std::size_t epoch = 1; epoch <= config.epochs && !result.diverged; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto samples = sample_training_examples(train_set, config.negatives,
                                                  derive_seed(negative_seed, epoch));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle.engine());

    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t entry_sum = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      // Fixed reduction order within a batch: ascending user index.
      std::vector<std::size_t> members(order.begin() + begin, order.begin() + end);
      std::sort(members.begin(), members.end());
      std::vector<UserSample> batch;
      for (std::size_t i : members) batch.push_back(samples[i]);

      ModelParams grads = model.params.zeros_like();
      const ModelParams previous = model.params;
      try {
        const auto br = accumulate_gradients(model, graph, batch, grads, cost);
        if (!std::isfinite(br.data_loss_sum)) throw NumericalError("non-finite training loss");
        check_gradients_finite(grads);
        adamw_step(model.params, grads, state, config, result.steps + 1);
        for (const auto& [name, block] : model.params.blocks()) {
          if (!block->all_finite()) throw NumericalError("non-finite parameter in block " + name);
        }
        loss_sum += br.data_loss_sum;
        entry_sum += br.entries;
        record.clamp_count += br.clamp_count;
        ++result.steps;
      } catch (const NumericalError& e) {
        model.params = previous;
        result.diverged = true;
        result.divergence = e.what();
        break;
      }
    }
    if (result.diverged) break;
    record.mean_loss = (entry_sum == 0 ? 0.0 : loss_sum / static_cast<double>(entry_sum)) +
                       config.weight_decay * model.params.squared_norm();
    const bool validate_now = config.validation_interval > 0 && !validation.empty() &&
                              (epoch % config.validation_interval == 0 || epoch == config.epochs);
    if (validate_now) {
      const auto report = evaluate(model, graph, validation);
      record.val_hr5 = report.hr5;
      record.val_ndcg5 = report.ndcg5;
    }
    record.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (log_out != nullptr) *log_out << nlohmann::json(record).dump() << '\n';
    result.log.push_back(record);
  }
  result.model = std::move(model);
  return result;
}

void to_json(nlohmann::json& j, const GradCheckReport& r) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"name", b.name},
                      {"sampled", b.sampled},
                      {"kinked", b.kinked},
                      {"passed", b.passed},
                      {"pass_rate", b.pass_rate()},
                      {"raw_pass_rate", b.raw_pass_rate()},
                      {"max_rel_error", b.max_rel_error},
                      {"mean_rel_error", b.mean_rel_error}});
  }
  j = nlohmann::json{{"max_rel_error", r.max_rel_error},
                     {"mean_rel_error", r.mean_rel_error},
                     {"pass_rate", r.pass_rate},
                     {"raw_pass_rate", r.raw_pass_rate},
                     {"kinked", r.kinked},
                     {"min_block_pass_rate", r.min_block_pass_rate},
                     {"blocks", blocks}};
}

GradCheckReport grad_check(const Model& model, const Hypergraph& graph,
                           std::span<const UserSample> samples, const GradCheckOptions& options) {
  if (!model.pool.all_mock()) {
    throw InvalidArgument("grad_check needs mock agents; remote branches are not differentiable");
  }
  if (!(options.epsilon > 0.0)) throw InvalidArgument("grad_check epsilon must be > 0");
  Model probe = model;
  ModelParams analytic = probe.params.zeros_like();
  accumulate_gradients(probe, graph, samples, analytic);
  if (options.lambda > 0.0) {
    auto g = analytic.blocks();
    const auto p = probe.params.blocks();
    for (std::size_t b = 0; b < g.size(); ++b) *g[b].second += *p[b].second * (2.0 * options.lambda);
  }

  auto sign_pattern = [&] {
    ad::KinkProbe kinks;
    const double value = evaluate_objective(probe, graph, samples, options.lambda).total;
    return std::pair(value, kinks.signs());
  };
  const std::vector<bool> base_signs = sign_pattern().second;

  GradCheckReport report;
  std::size_t total = 0, smooth = 0, passed = 0, raw_passed = 0;
  double rel_sum = 0.0;
  auto params = probe.params.blocks();
  const auto grads = analytic.blocks();
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto values = params[b].second->values();
    const auto grad = grads[b].second->values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.n_coords) {
      Rng rng(derive_seed(options.seed, params[b].first));
      for (std::size_t i = 0; i < options.n_coords; ++i) {
        std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      }
      coords.resize(options.n_coords);
    }
    BlockCheck check;
    check.name = params[b].first;
    double block_sum = 0.0;
    for (std::size_t c : coords) {
      const double original = values[c];
      values[c] = original + options.epsilon;
      const auto [up, up_signs] = sign_pattern();
      values[c] = original - options.epsilon;
      const auto [down, down_signs] = sign_pattern();
      values[c] = original;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double denom = std::max({std::abs(grad[c]), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(grad[c] - numeric) / denom;
      const bool ok = rel < options.tolerance;
      ++check.sampled;
      if (ok) ++check.raw_passed;
      if (up_signs != base_signs || down_signs != base_signs) {
        ++check.kinked;
        continue;
      }
      if (ok) ++check.passed;
      check.max_rel_error = std::max(check.max_rel_error, rel);
      block_sum += rel;
    }
    check.mean_rel_error = check.smooth() == 0 ? 0.0 : block_sum / static_cast<double>(check.smooth());
    total += check.sampled;
    smooth += check.smooth();
    passed += check.passed;
    raw_passed += check.raw_passed;
    rel_sum += block_sum;
    report.kinked += check.kinked;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.min_block_pass_rate = std::min(report.min_block_pass_rate, check.pass_rate());
    report.blocks.push_back(std::move(check));
  }
  report.mean_rel_error = smooth == 0 ? 0.0 : rel_sum / static_cast<double>(smooth);
  report.pass_rate = smooth == 0 ? 1.0 : static_cast<double>(passed) / static_cast<double>(smooth);
  report.raw_pass_rate = total == 0 ? 1.0 : static_cast<double>(raw_passed) / static_cast<double>(total);
  return report;
}

}  // namespace hgrec
