#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hnas/arch.hpp"
#include "hnas/nn.hpp"
#include "hnas/optim.hpp"

namespace hnas {

struct PolicyConfig {
  std::size_t hidden = 64;
  std::size_t embedding = 32;
};

// Autoregressive token policy: an LSTM cell reads the previous token (a
// learned start token first) and a separate categorical head per position
// emits the next one. Heads start at zero, so the initial policy is uniform.
class Policy {
 public:
  static Policy init(std::vector<std::size_t> arities, const PolicyConfig& config, std::uint64_t seed);
  static Policy for_search_space(const SearchDomains& domains, std::size_t stages, const PolicyConfig& config,
                                 std::uint64_t seed);

  struct Sample {
    std::vector<std::size_t> tokens;
    std::vector<double> log_probs;
  };
  // Draws `count` sequences; the rng is consumed position by position, row by row.
  std::vector<Sample> sample(std::size_t count, Rng& rng) const;

  struct Evaluation {
    Tensor log_probs;  // [n x positions]
    Tensor entropy;    // [n x positions]
  };
  // Differentiable log-probabilities and entropies of given sequences.
  Evaluation evaluate(const std::vector<std::vector<std::size_t>>& sequences) const;

  // Probabilities of every choice at `position` after the given prefix.
  std::vector<double> probabilities(const std::vector<std::size_t>& prefix) const;

  const std::vector<std::size_t>& arities() const { return arities_; }
  std::vector<Tensor> parameters() const;

 private:
  struct Step {
    Tensor h, c;
  };
  Step cell(const Tensor& input, const Step& state) const;
  Tensor inputs_for(const std::vector<std::size_t>& previous, std::size_t position) const;

  std::vector<std::size_t> arities_;
  std::vector<std::size_t> offsets_;  // first embedding row of each position's tokens
  std::size_t hidden_ = 0;
  Tensor embedding_;                  // row 0 is the start token
  Linear input_gates_;                // [embedding x 4 hidden]
  Tensor recurrent_gates_;            // [hidden x 4 hidden]
  std::vector<Linear> heads_;
};

enum class RewardForm {
  penalize_excess,  // a * (f / t)^alpha: alpha < 0 penalizes f above t
  literal,          // a * (t / f)^alpha, the formula exactly as printed
};

double reward(double accuracy, double macs, double target, double alpha, RewardForm form = RewardForm::penalize_excess);

struct Candidate {
  std::size_t index = 0;
  Genome genome;
  std::vector<std::size_t> tokens;
  std::vector<double> log_probs;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::uint64_t macs = 0;
  double reward = 0.0;
  bool failed = false;
  std::optional<double> wall_seconds;
};

struct PpoConfig {
  double clip = 0.2;
  double entropy_coef = 0.01;
  double lr = 1e-3;
  std::size_t epochs = 4;
  double baseline_momentum = 0.9;
};

struct PpoDiagnostics {
  double mean_reward = 0.0;
  double baseline = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
};

class PpoTrainer {
 public:
  PpoTrainer(Policy& policy, const PpoConfig& config);

  // Advantage = reward - moving-average baseline (the first batch seeds the
  // baseline with its own mean). Throws NumericError on non-finite rewards.
  PpoDiagnostics update(const std::vector<Candidate>& batch);
  // Same step with caller-supplied advantages; the baseline is left alone.
  PpoDiagnostics update(const std::vector<Candidate>& batch, const std::vector<double>& advantages);

  std::optional<double> baseline() const { return baseline_; }

 private:
  Policy& policy_;
  PpoConfig config_;
  AdamW optimizer_;
  std::optional<double> baseline_;
};

struct Evaluation {
  double accuracy = 0.0;
  std::uint64_t macs = 0;
  bool failed = false;
};
// Must be safe to call concurrently from several threads.
using CandidateEvaluator = std::function<Evaluation(const Genome& genome, std::uint64_t seed)>;

struct SearchConfig {
  std::size_t num_samples = 64;
  double target_macs = 550e6;
  double alpha = -0.07;
  RewardForm reward_form = RewardForm::penalize_excess;
  std::uint64_t seed = 0;
  std::size_t topk = 5;
  std::size_t batch = 16;
  std::size_t workers = 1;
  PpoConfig ppo;
  PolicyConfig policy;
  SearchDomains domains;
  std::size_t stages = kNumStages;
  std::string history_path;   // JSON lines, appended per batch; empty disables
  bool record_wall_time = false;
};

struct SearchResult {
  std::vector<Candidate> history;
  std::vector<Candidate> top;
  std::vector<PpoDiagnostics> updates;
};

SearchResult run_search(const CandidateEvaluator& evaluate, const SearchConfig& config);

// Highest reward first; ties keep sampling order.
std::vector<Candidate> top_k(const std::vector<Candidate>& candidates, std::size_t k);

std::string history_record(const Candidate& c);
Candidate parse_history_record(std::string_view line);
std::vector<Candidate> read_history(const std::string& path);

}  // namespace hnas
