#include "hnas/controller.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "hnas/errors.hpp"

namespace hnas {

// ---- policy ----------------------------------------------------------------

Policy Policy::init(std::vector<std::size_t> arities, const PolicyConfig& config, std::uint64_t seed) {
  if (arities.empty()) throw ContractError("policy needs at least one token position");
  for (auto a : arities) {
    if (a == 0) throw ContractError("every token position needs at least one choice");
  }
  Rng rng(seed);
  Policy p;
  p.arities_ = std::move(arities);
  p.hidden_ = config.hidden;
  std::size_t rows = 1;
  for (auto a : p.arities_) {
    p.offsets_.push_back(rows);
    rows += a;
  }
  std::vector<double> table(rows * config.embedding);
  for (auto& v : table) v = rng.uniform(-0.1, 0.1);
  p.embedding_ = Tensor::parameter({rows, config.embedding}, std::move(table));
  p.input_gates_ = Linear::init(rng, config.embedding, 4 * config.hidden);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden));
  std::vector<double> rec(config.hidden * 4 * config.hidden);
  for (auto& v : rec) v = rng.uniform(-bound, bound);
  p.recurrent_gates_ = Tensor::parameter({config.hidden, 4 * config.hidden}, std::move(rec));
  for (auto a : p.arities_) {
    Linear head = Linear::init(rng, config.hidden, a);
    head.zero();
    p.heads_.push_back(head);
  }
  return p;
}

Policy Policy::for_search_space(const SearchDomains& domains, std::size_t stages, const PolicyConfig& config,
                                std::uint64_t seed) {
  std::vector<std::size_t> arities;
  const auto per_stage = domains.arities();
  for (std::size_t s = 0; s < stages; ++s) arities.insert(arities.end(), per_stage.begin(), per_stage.end());
  return init(std::move(arities), config, seed);
}

Tensor Policy::inputs_for(const std::vector<std::size_t>& previous, std::size_t position) const {
  std::vector<std::size_t> ids(previous.size(), 0);
  if (position > 0) {
    for (std::size_t i = 0; i < previous.size(); ++i) ids[i] = offsets_[position - 1] + previous[i];
  }
  return embedding(embedding_, ids);
}

Policy::Step Policy::cell(const Tensor& input, const Step& state) const {
  const std::size_t h = hidden_;
  Tensor gates = add(input_gates_(input), matmul(state.h, recurrent_gates_));
  Tensor i = sigmoid(slice(gates, 1, 0, h));
  Tensor f = sigmoid(slice(gates, 1, h, h));
  Tensor g = tanh(slice(gates, 1, 2 * h, h));
  Tensor o = sigmoid(slice(gates, 1, 3 * h, h));
  Tensor c = add(mul(f, state.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

std::vector<Policy::Sample> Policy::sample(std::size_t count, Rng& rng) const {
  NoGradGuard no_grad;
  std::vector<Sample> out(count);
  Step state{Tensor::zeros({count, hidden_}), Tensor::zeros({count, hidden_})};
  std::vector<std::size_t> previous(count, 0);
  for (std::size_t p = 0; p < arities_.size(); ++p) {
    state = cell(inputs_for(previous, p), state);
    const Tensor lsm = log_softmax_last(heads_[p](state.h));
    const std::size_t k = arities_[p];
    for (std::size_t r = 0; r < count; ++r) {
      const auto row = lsm.data().subspan(r * k, k);
      const double u = rng.uniform();
      std::size_t choice = k - 1;
      double cumulative = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        cumulative += std::exp(row[j]);
        if (u < cumulative) {
          choice = j;
          break;
        }
      }
      out[r].tokens.push_back(choice);
      out[r].log_probs.push_back(row[choice]);
      previous[r] = choice;
    }
  }
  return out;
}

Policy::Evaluation Policy::evaluate(const std::vector<std::vector<std::size_t>>& sequences) const {
  const std::size_t n = sequences.size();
  if (n == 0) throw ContractError("policy evaluation needs at least one sequence");
  for (const auto& s : sequences) {
    if (s.size() != arities_.size()) {
      throw ShapeError("sequence of " + std::to_string(s.size()) + " tokens for a " +
                       std::to_string(arities_.size()) + "-position policy");
    }
  }
  Step state{Tensor::zeros({n, hidden_}), Tensor::zeros({n, hidden_})};
  std::vector<std::size_t> previous(n, 0), current(n);
  std::vector<Tensor> log_probs, entropies;
  for (std::size_t p = 0; p < arities_.size(); ++p) {
    state = cell(inputs_for(previous, p), state);
    const Tensor lsm = log_softmax_last(heads_[p](state.h));
    for (std::size_t r = 0; r < n; ++r) current[r] = sequences[r][p];
    log_probs.push_back(reshape(pick(lsm, current), {n, 1}));
    entropies.push_back(reshape(scale(sum_last(mul(exp(lsm), lsm)), -1.0), {n, 1}));
    previous = current;
  }
  return {concat_last(log_probs), concat_last(entropies)};
}

std::vector<double> Policy::probabilities(const std::vector<std::size_t>& prefix) const {
  if (prefix.size() >= arities_.size()) throw ContractError("prefix already covers every position");
  NoGradGuard no_grad;
  Step state{Tensor::zeros({1, hidden_}), Tensor::zeros({1, hidden_})};
  std::vector<std::size_t> previous{0};
  for (std::size_t p = 0;; ++p) {
    state = cell(inputs_for(previous, p), state);
    if (p == prefix.size()) {
      const Tensor probs = softmax(heads_[p](state.h), 1);
      return {probs.data().begin(), probs.data().end()};
    }
    previous[0] = prefix[p];
  }
}

std::vector<Tensor> Policy::parameters() const {
  std::vector<Tensor> out{embedding_};
  input_gates_.collect(out);
  out.push_back(recurrent_gates_);
  for (const auto& h : heads_) h.collect(out);
  return out;
}

// ---- reward and PPO ------------------------------------------------------------

double reward(double accuracy, double macs, double target, double alpha, RewardForm form) {
  if (!(macs > 0.0) || !(target > 0.0) || !std::isfinite(macs) || !std::isfinite(target)) {
    throw DomainError("reward needs positive finite MACs and target, got f=" + std::to_string(macs) +
                      " t=" + std::to_string(target));
  }
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw DomainError("accuracy must lie in [0, 1], got " + std::to_string(accuracy));
  }
  const double ratio = form == RewardForm::penalize_excess ? macs / target : target / macs;
  return accuracy * std::pow(ratio, alpha);
}

PpoTrainer::PpoTrainer(Policy& policy, const PpoConfig& config)
    : policy_(policy), config_(config), optimizer_(AdamConfig{config.lr}) {}

PpoDiagnostics PpoTrainer::update(const std::vector<Candidate>& batch) {
  if (batch.empty()) throw ContractError("PPO update needs at least one candidate");
  double total = 0.0;
  for (const auto& c : batch) {
    if (!std::isfinite(c.reward)) throw NumericError("non-finite reward for candidate " + std::to_string(c.index));
    total += c.reward;
  }
  const double batch_mean = total / static_cast<double>(batch.size());
  const double baseline = baseline_.value_or(batch_mean);
  std::vector<double> advantages;
  for (const auto& c : batch) advantages.push_back(c.reward - baseline);
  auto diag = update(batch, advantages);
  baseline_ = config_.baseline_momentum * baseline + (1.0 - config_.baseline_momentum) * batch_mean;
  diag.baseline = baseline;
  return diag;
}

PpoDiagnostics PpoTrainer::update(const std::vector<Candidate>& batch, const std::vector<double>& advantages) {
  if (batch.empty() || advantages.size() != batch.size()) {
    throw ContractError("PPO update needs one advantage per candidate");
  }
  const std::size_t n = batch.size(), positions = policy_.arities().size();
  std::vector<std::vector<std::size_t>> sequences;
  std::vector<double> old_log_probs, adv;
  PpoDiagnostics diag;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = batch[i];
    if (!std::isfinite(c.reward) || !std::isfinite(advantages[i])) {
      throw NumericError("non-finite reward for candidate " + std::to_string(c.index));
    }
    if (c.log_probs.size() != positions) throw ContractError("candidate lacks sample-time log-probabilities");
    sequences.push_back(c.tokens);
    old_log_probs.insert(old_log_probs.end(), c.log_probs.begin(), c.log_probs.end());
    adv.insert(adv.end(), positions, advantages[i]);
    diag.mean_reward += c.reward / static_cast<double>(n);
  }
  const Tensor old = Tensor::from({n, positions}, old_log_probs);
  const Tensor advantage = Tensor::from({n, positions}, adv);
  const auto params = policy_.parameters();
  std::size_t clipped = 0;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    const auto ev = policy_.evaluate(sequences);
    const Tensor ratio = exp(sub(ev.log_probs, old));
    const Tensor surrogate = minimum(mul(ratio, advantage),
                                     mul(clamp(ratio, 1.0 - config_.clip, 1.0 + config_.clip), advantage));
    const Tensor entropy = mean(ev.entropy);
    if (epoch == 0) diag.entropy = entropy.item();
    for (double r : ratio.data()) clipped += std::abs(r - 1.0) > config_.clip ? 1 : 0;
    const Tensor loss = add(scale(mean(surrogate), -1.0), scale(entropy, -config_.entropy_coef));
    optimizer_.step(params, backward(loss));
  }
  diag.clip_fraction = config_.epochs == 0 ? 0.0
                                           : static_cast<double>(clipped) /
                                                 static_cast<double>(config_.epochs * n * positions);
  return diag;
}

// ---- search loop -------------------------------------------------------------

std::vector<Candidate> top_k(const std::vector<Candidate>& candidates, std::size_t k) {
  std::vector<Candidate> sorted = candidates;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) { return a.reward > b.reward; });
  if (sorted.size() > k) sorted.resize(k);
  return sorted;
}

std::string history_record(const Candidate& c) {
  nlohmann::ordered_json j;
  j["index"] = c.index;
  j["seed"] = c.seed;
  j["tokens"] = c.tokens;
  j["accuracy"] = c.accuracy;
  j["macs"] = c.macs;
  j["reward"] = c.reward;
  j["failed"] = c.failed;
  j["wall_time"] = c.wall_seconds ? nlohmann::ordered_json(*c.wall_seconds) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

Candidate parse_history_record(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("history record is not JSON: ") + e.what(), e.byte);
  }
  try {
    Candidate c;
    c.index = j.at("index").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.tokens = j.at("tokens").get<std::vector<std::size_t>>();
    c.accuracy = j.at("accuracy").get<double>();
    c.macs = j.at("macs").get<std::uint64_t>();
    c.reward = j.at("reward").get<double>();
    c.failed = j.at("failed").get<bool>();
    if (!j.at("wall_time").is_null()) c.wall_seconds = j.at("wall_time").get<double>();
    c.genome = decode_genome(c.tokens, {}, c.tokens.size() / kTokensPerStage);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("history record field: ") + e.what(), 0);
  }
}

std::vector<Candidate> read_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open history '" + path + "'");
  std::vector<Candidate> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        out.push_back(parse_history_record(line));
      } catch (const FormatError& e) {
        throw FormatError(std::string("in '") + path + "': " + e.what(), offset + e.offset());
      }
    }
    offset += line.size() + 1;
  }
  return out;
}

namespace {

void evaluate_all(std::vector<Candidate>& batch, const CandidateEvaluator& evaluate, const SearchConfig& cfg) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < batch.size(); i = next++) {
      auto& c = batch[i];
      const auto start = std::chrono::steady_clock::now();
      try {
        const Evaluation e = evaluate(c.genome, c.seed);
        c.accuracy = e.accuracy;
        c.macs = e.macs;
        c.failed = e.failed || !std::isfinite(e.accuracy);
      } catch (const std::exception&) {
        c.failed = true;
      }
      if (c.failed) {
        c.accuracy = 0.0;
        c.reward = 0.0;
      } else {
        try {
          c.reward = reward(c.accuracy, static_cast<double>(c.macs), cfg.target_macs, cfg.alpha, cfg.reward_form);
        } catch (const DomainError&) {
          c.failed = true;
          c.reward = 0.0;
        }
      }
      if (cfg.record_wall_time) {
        c.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, batch.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

}  // namespace

SearchResult run_search(const CandidateEvaluator& evaluate, const SearchConfig& cfg) {
  if (cfg.batch == 0) throw ContractError("search batch size must be positive");
  if (!(cfg.target_macs > 0.0)) throw ContractError("target MACs must be positive");
  Policy policy = Policy::for_search_space(cfg.domains, cfg.stages, cfg.policy, split_seed(cfg.seed, 0));
  PpoTrainer trainer(policy, cfg.ppo);
  Rng sampler(split_seed(cfg.seed, 1));
  const std::uint64_t candidate_seeds = split_seed(cfg.seed, 2);

  std::ofstream history;
  if (!cfg.history_path.empty()) {
    history.open(cfg.history_path, std::ios::binary | std::ios::trunc);
    if (!history) throw DataError("cannot write history '" + cfg.history_path + "'");
  }

  SearchResult result;
  for (std::size_t start = 0; start < cfg.num_samples; start += cfg.batch) {
    const std::size_t n = std::min(cfg.batch, cfg.num_samples - start);
    std::vector<Candidate> batch;
    for (auto& s : policy.sample(n, sampler)) {
      Candidate c;
      c.index = start + batch.size();
      c.genome = decode_genome(s.tokens, cfg.domains, cfg.stages);
      c.tokens = std::move(s.tokens);
      c.log_probs = std::move(s.log_probs);
      c.seed = split_seed(candidate_seeds, c.index);
      batch.push_back(std::move(c));
    }
    evaluate_all(batch, evaluate, cfg);
    for (const auto& c : batch) {
      if (history.is_open()) history << history_record(c) << '\n';
      result.history.push_back(c);
    }
    if (history.is_open()) history.flush();
    result.updates.push_back(trainer.update(batch));
  }
  result.top = top_k(result.history, cfg.topk);
  return result;
}

}  // namespace hnas
